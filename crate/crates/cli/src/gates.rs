use std::fmt;
use std::str::FromStr;

use biphoton::cascade::{gate_sequence, GateScheme, GateWindow};

/// Gate list written as `widening:<step_ps>:<count>`,
/// `shifting:<width_ps>:<count>` or `whole:<window_ps>`. Times are integer
/// picoseconds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateSpec {
    pub scheme: GateScheme,
    pub step_ps: u64,
    pub count: usize,
}

impl GateSpec {
    pub fn gates(&self) -> Vec<GateWindow> {
        gate_sequence(self.scheme, self.step_ps as f64, self.count).expect("validated when parsed")
    }
}

impl fmt::Display for GateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scheme {
            GateScheme::WholePeak => write!(f, "whole:{}", self.step_ps),
            s => write!(f, "{s}:{}:{}", self.step_ps, self.count),
        }
    }
}

impl FromStr for GateSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let int = |x: &str, what: &str| -> Result<u64, String> {
            x.parse::<u64>()
                .map_err(|_| format!("{what} must be a non-negative integer, got {x:?}"))
        };
        let spec = match parts.as_slice() {
            ["whole", w] => GateSpec {
                scheme: GateScheme::WholePeak,
                step_ps: int(w, "window")?,
                count: 1,
            },
            [scheme @ ("widening" | "shifting"), w, n] => GateSpec {
                scheme: if *scheme == "widening" {
                    GateScheme::Widening
                } else {
                    GateScheme::Shifting
                },
                step_ps: int(w, "gate width")?,
                count: int(n, "gate count")? as usize,
            },
            _ => return Err(format!(
                "bad gate spec {s:?}; expected widening:<ps>:<n>, shifting:<ps>:<n> or whole:<ps>"
            )),
        };
        if spec.step_ps == 0 || spec.count == 0 {
            return Err(format!("gate spec {s:?} needs a positive width and count"));
        }
        Ok(spec)
    }
}
