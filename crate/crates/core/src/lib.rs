//! Biphoton polarization states from a biexciton–exciton cascade: the
//! time-gated density-matrix model, entanglement measures, two-qubit
//! tomography, a coincidence-count simulator and a parameter fit.

pub mod cascade;
pub mod fit;
pub mod linalg;
pub mod measures;
pub mod optim;
pub mod simulator;
pub mod state;
pub mod tomography;

pub use cascade::{CascadeParams, GateScheme, GateWindow, ModelOptions};
pub use measures::StatePoint;
pub use state::{DensityMatrix, PolarizationBasis};
pub use tomography::CoincidenceTable;
