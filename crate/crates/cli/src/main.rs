mod gates;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use biphoton::cascade::{
    gated_density_matrix_with, CascadeParams, GateWindow, MixingWeight, ModelOptions,
    OffDiagCoefficient,
};
use biphoton::fit::{fit_with, FitError, FitOptions, FitProblem};
use biphoton::measures::{
    read_state_points, state_point, werner_curve, write_state_points, StatePoint,
};
use biphoton::simulator::{gate_counts, simulate_histogram, SimConfig, SimError, TdcHistogram};
use biphoton::state::DensityMatrix;
use biphoton::tomography::{
    reconstruct_with, ReconstructOptions, ReconstructionReport, TableError, TomographyError,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::gates::GateSpec;
use crate::output::{sibling, write_csv, write_json, Manifest};

#[derive(Parser, Debug)]
#[command(
    name = "biphoton",
    version,
    about = "Time-gated biphoton states: simulation, tomography, model and fit"
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress the summary on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate delay histograms for all 36 analyzer settings.
    Simulate {
        /// Simulation config (JSON). `--seed` overrides its seed.
        config: PathBuf,
    },
    /// Gate a histogram and reconstruct one density matrix per gate.
    Reconstruct {
        /// Histogram CSV written by `simulate`.
        histogram: PathBuf,
        /// Gate list: widening:<ps>:<n>, shifting:<ps>:<n> or whole:<ps>.
        /// Repeat to concatenate lists.
        #[arg(long, required = true)]
        gates: Vec<GateSpec>,
        /// Density matrices and fit reports (JSON). Defaults to the output
        /// path with extension `rho.json`.
        #[arg(long)]
        rho_out: Option<PathBuf>,
    },
    /// Evaluate the analytic model at every gate.
    Model {
        /// Emitter parameters (JSON).
        params: PathBuf,
        /// Gate list as for `reconstruct`; repeatable.
        #[arg(long, required = true)]
        gates: Vec<GateSpec>,
        #[command(flatten)]
        model: ModelArgs,
        /// Werner curve for plotting. Defaults to the output path with
        /// extension `werner.csv`.
        #[arg(long)]
        werner_out: Option<PathBuf>,
    },
    /// Fit S, tau_HV and d to gated state points.
    Fit {
        /// State-point CSV written by `reconstruct` or `model`.
        states: PathBuf,
        /// Radiative lifetime in ps.
        #[arg(long)]
        tau_r: u64,
        /// Spin-scattering time in ps, or `inf`.
        #[arg(long, value_parser = parse_time)]
        tau_ss: f64,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Tabulate the Werner-state tangle against linear entropy.
    WernerCurve {
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
}

#[derive(clap::Args, Debug)]
struct ModelArgs {
    /// Coefficient of the coherence term.
    #[arg(long, value_enum, default_value_t = Offdiag::P)]
    offdiag: Offdiag,
    /// Population weight of the correlated component.
    #[arg(long, value_enum, default_value_t = Weight::Asymptotic)]
    weight: Weight,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Offdiag {
    P,
    #[value(name = "p2-over-pprime")]
    P2OverPprime,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Weight {
    Asymptotic,
    GateResolved,
}

impl ModelArgs {
    fn options(&self) -> ModelOptions {
        ModelOptions {
            offdiag: match self.offdiag {
                Offdiag::P => OffDiagCoefficient::P,
                Offdiag::P2OverPprime => OffDiagCoefficient::PSquaredOverPPrime,
            },
            weight: match self.weight {
                Weight::Asymptotic => MixingWeight::Asymptotic,
                Weight::GateResolved => MixingWeight::GateResolved,
            },
        }
    }

    fn describe(&self) -> String {
        format!("{:?}/{:?}", self.offdiag, self.weight)
    }
}

fn parse_time(s: &str) -> Result<f64, String> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse::<u64>()
        .map(|x| x as f64)
        .map_err(|_| format!("expected integer picoseconds or `inf`, got {s:?}"))
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const EXIT_INPUT: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure {
        code: EXIT_INPUT,
        error: e.into(),
    }
}

fn mismatch<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure {
        code: EXIT_MISMATCH,
        error: e.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config } => simulate(&cli, config),
        Command::Reconstruct {
            histogram,
            gates,
            rho_out,
        } => reconstruct(&cli, histogram, gates, rho_out.as_deref()),
        Command::Model {
            params,
            gates,
            model: args,
            werner_out,
        } => model(&cli, params, gates, args, werner_out.as_deref()),
        Command::Fit {
            states,
            tau_r,
            tau_ss,
            model: args,
        } => fit(&cli, states, *tau_r, *tau_ss, args),
        Command::WernerCurve { points } => werner(&cli, *points),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// All gates of the given lists, and the lists joined by commas.
fn expand(specs: &[GateSpec]) -> (Vec<GateWindow>, String) {
    let gates = specs.iter().flat_map(GateSpec::gates).collect();
    let label = specs
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    (gates, label)
}

fn say(cli: &Cli, msg: impl AsRef<str>) {
    if !cli.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(input)
}

fn simulate(cli: &Cli, config: &Path) -> CmdResult {
    let raw = read(config)?;
    let mut cfg: SimConfig = serde_json::from_slice(&raw)
        .with_context(|| format!("parsing {}", config.display()))
        .map_err(input)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(input)?;
    let hist = simulate_histogram(&cfg).map_err(input)?;

    let out = out_path(cli, "histogram.csv");
    let effective = serde_json::to_vec(&cfg).map_err(input)?;
    let manifest = Manifest::new("simulate", &[config], &[&out], &effective, Some(cfg.seed));
    write_csv(&out, &manifest, |buf| Ok(hist.write_csv(buf)?)).map_err(input)?;
    say(
        cli,
        format!(
            "wrote {} ({} bins x 36 configs, {} coincidences)",
            out.display(),
            hist.n_bins(),
            hist.total()
        ),
    );
    Ok(())
}

#[derive(Serialize)]
struct GateState {
    gate: GateWindow,
    rho: DensityMatrix,
    converged: bool,
    report: ReconstructionReport,
}

#[derive(Serialize)]
struct ReconstructOutput {
    gates: String,
    states: Vec<GateState>,
}

fn reconstruct(
    cli: &Cli,
    histogram: &Path,
    specs: &[GateSpec],
    rho_out: Option<&Path>,
) -> CmdResult {
    let raw = read(histogram)?;
    let hist = TdcHistogram::read_csv(raw.as_slice())
        .with_context(|| format!("parsing {}", histogram.display()))
        .map_err(input)?;

    // Every gate is checked against the histogram before anything runs.
    let (gates, spec) = expand(specs);
    let tables = gates
        .iter()
        .map(|g| {
            gate_counts(&hist, g).map_err(|e| match e {
                SimError::Misaligned { .. }
                | SimError::OutsideWindow { .. }
                | SimError::Table(TableError::Empty) => {
                    mismatch(anyhow!(e).context(format!("gate {spec}")))
                }
                other => input(other),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let opts = ReconstructOptions {
        seed: cli.seed.unwrap_or(ReconstructOptions::default().seed),
        ..Default::default()
    };
    let mut states = Vec::new();
    let mut points = Vec::new();
    for (gate, table) in gates.iter().zip(&tables) {
        let (rec, converged) = match reconstruct_with(table, &opts) {
            Ok(r) => (r, true),
            Err(TomographyError::NonConvergence(best)) => (*best, false),
            Err(e) => return Err(input(e)),
        };
        points.push(state_point(&rec.rho, Some(*gate)).map_err(input)?);
        states.push(GateState {
            gate: *gate,
            rho: rec.rho,
            converged,
            report: rec.report,
        });
    }

    let out = out_path(cli, "states.csv");
    let rho_path = rho_out.map_or_else(|| sibling(&out, "rho.json"), Path::to_path_buf);
    let mut config = raw;
    config.extend_from_slice(format!("\n{spec}").as_bytes());
    let manifest = Manifest::new(
        "reconstruct",
        &[histogram],
        &[&out, &rho_path],
        &config,
        Some(opts.seed),
    );
    let flagged: Vec<&GateState> = states.iter().filter(|s| !s.converged).collect();
    write_csv(&out, &manifest, |buf| {
        for s in &flagged {
            buf.extend_from_slice(
                format!("# nonconverged: {} {}\n", s.gate.t_g, s.gate.dt_g).as_bytes(),
            );
        }
        Ok(write_state_points(buf, &points)?)
    })
    .map_err(input)?;
    let flagged = flagged.len();
    write_json(
        &rho_path,
        &manifest,
        &ReconstructOutput {
            gates: spec,
            states,
        },
    )
    .map_err(input)?;
    say(
        cli,
        format!(
            "wrote {} and {} ({} gates)",
            out.display(),
            rho_path.display(),
            points.len()
        ),
    );
    if flagged > 0 {
        return Err(Failure {
            code: EXIT_NONCONVERGENCE,
            error: anyhow!(
                "{flagged} of {} reconstructions did not converge; rows flagged",
                points.len()
            ),
        });
    }
    Ok(())
}

fn model(
    cli: &Cli,
    params_path: &Path,
    specs: &[GateSpec],
    args: &ModelArgs,
    werner_out: Option<&Path>,
) -> CmdResult {
    let raw = read(params_path)?;
    let params: CascadeParams = serde_json::from_slice(&raw)
        .with_context(|| format!("parsing {}", params_path.display()))
        .map_err(input)?;
    let opts = args.options();
    let (gates, spec) = expand(specs);
    let points = gates
        .iter()
        .map(|g| {
            let rho = gated_density_matrix_with(g, &params, opts).map_err(input)?;
            state_point(&rho, Some(*g)).map_err(input)
        })
        .collect::<Result<Vec<StatePoint>, Failure>>()?;

    let out = out_path(cli, "model.csv");
    let werner_path = werner_out.map_or_else(|| sibling(&out, "werner.csv"), Path::to_path_buf);
    let mut config = raw;
    config.extend_from_slice(format!("\n{spec}\n{}", args.describe()).as_bytes());
    let manifest = Manifest::new(
        "model",
        &[params_path],
        &[&out, &werner_path],
        &config,
        None,
    );
    write_csv(&out, &manifest, |buf| Ok(write_state_points(buf, &points)?)).map_err(input)?;
    write_csv(&werner_path, &manifest, |buf| write_werner(buf, 200)).map_err(input)?;
    say(
        cli,
        format!(
            "wrote {} ({} gates) and {}",
            out.display(),
            points.len(),
            werner_path.display()
        ),
    );
    Ok(())
}

fn write_werner(buf: &mut Vec<u8>, points: usize) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(["s_lin", "tangle"])?;
    for i in 0..points {
        let s = if points == 1 {
            0.0
        } else {
            i as f64 / (points - 1) as f64
        };
        w.write_record([format!("{s}"), format!("{}", werner_curve(s)?)])?;
    }
    w.flush()?;
    Ok(())
}

fn fit(cli: &Cli, states: &Path, tau_r: u64, tau_ss: f64, args: &ModelArgs) -> CmdResult {
    let raw = read(states)?;
    let points = read_state_points(raw.as_slice())
        .with_context(|| format!("parsing {}", states.display()))
        .map_err(input)?;
    let mut problem = FitProblem::from_points(&points, tau_r as f64, tau_ss).map_err(input)?;
    problem.model = args.options();
    let opts = FitOptions {
        seed: cli.seed.unwrap_or(FitOptions::default().seed),
        ..Default::default()
    };

    let (result, converged) = match fit_with(&problem, &opts) {
        Ok(r) => (r, true),
        Err(FitError::NonConvergence(best)) => (*best, false),
        Err(e) => return Err(input(e)),
    };
    let out = out_path(cli, "fit.json");
    let mut config = raw;
    config.extend_from_slice(format!("\n{tau_r} {tau_ss} {}", args.describe()).as_bytes());
    let manifest = Manifest::new("fit", &[states], &[&out], &config, Some(opts.seed));
    write_json(&out, &manifest, &result).map_err(input)?;
    say(
        cli,
        format!(
            "S = {:.4} +/- {:.4} ueV, tau_HV = {:.0} +/- {:.0} ps, d = {:.5} +/- {:.5} (objective {:.3e})",
            result.s_hat,
            result.uncertainty.s_uev,
            result.tau_hv_hat,
            result.uncertainty.tau_hv_ps,
            result.d_hat,
            result.uncertainty.d,
            result.objective
        ),
    );
    if !converged {
        return Err(Failure {
            code: EXIT_NONCONVERGENCE,
            error: anyhow!("fit did not converge; best result written"),
        });
    }
    Ok(())
}

fn werner(cli: &Cli, points: usize) -> CmdResult {
    if points < 2 {
        return Err(input(anyhow!("need at least 2 points")));
    }
    let out = out_path(cli, "werner.csv");
    let manifest = Manifest::new(
        "werner-curve",
        &[],
        &[&out],
        points.to_string().as_bytes(),
        None,
    );
    write_csv(&out, &manifest, |buf| write_werner(buf, points)).map_err(input)?;
    say(cli, format!("wrote {} ({points} points)", out.display()));
    Ok(())
}
