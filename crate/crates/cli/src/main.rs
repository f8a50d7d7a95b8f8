//! `nilsynth` command line: geodesics, synthesis reports and volumes as JSON
//! or CSV tables.

mod commands;
mod output;

use clap::{Args, Parser, Subcommand};
use nilsynth::quaternion::DEFAULT_CLASSIFY_TOL;
use nilsynth::Error;
use output::{Format, Output};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "nilsynth", version, about = "Optimal synthesis and Hausdorff volume for 2-step nilpotent sub-Riemannian metrics")]
struct Cli {
    /// Metric file `{"m": .., "L": [[..], ..]}`.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true, env = "NILSYNTH_THREADS")]
    threads: Option<usize>,
    /// Tolerance override `name=value`; names: classify, volume_rel, cut_flag.
    #[arg(long = "tol", global = true, value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct CovectorArgs {
    /// Horizontal part, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub u0: Vec<f64>,
    /// Vertical part, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub r: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct QuadArgs {
    #[arg(long, value_enum, default_value_t = Mode::Tensor)]
    pub mode: Mode,
    #[arg(long)]
    pub theta_nodes: Option<usize>,
    #[arg(long)]
    pub r_nodes: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Hilbert-Schmidt normalize the metric first.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Tensor,
    MonteCarlo,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a geodesic from the origin.
    Geodesic {
        #[command(flatten)]
        cov: CovectorArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        times: Vec<f64>,
        /// Uniform grid on [0, t_max] with --steps intervals.
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long, default_value_t = 16)]
        steps: usize,
        /// Add the cut time to the grid.
        #[arg(long)]
        at_cut: bool,
    },
    CutTime {
        #[command(flatten)]
        cov: CovectorArgs,
    },
    /// Maxwell partner meeting the geodesic at its cut time.
    Maxwell {
        #[command(flatten)]
        cov: CovectorArgs,
    },
    /// First conjugate time up to `horizon * t_cut`.
    Conjugate {
        #[command(flatten)]
        cov: CovectorArgs,
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
    },
    /// Quaternionic classification of a (4, 6) metric.
    Classify,
    /// Cut, conjugate and Maxwell data on sampled covectors plus the
    /// structural and sampled cut = conjugate verdicts.
    Report {
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        jacobian_samples: usize,
    },
    /// Distance to a point inside the cut domain.
    Distance {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        y: Vec<f64>,
        /// Also run the control-space upper bound.
        #[arg(long)]
        oracle: bool,
    },
    Volume {
        #[command(flatten)]
        quad: QuadArgs,
    },
    Density {
        #[command(flatten)]
        quad: QuadArgs,
    },
    /// Volume along the segment from --spec to --end-spec, renormalized.
    Sweep {
        #[arg(long)]
        end_spec: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        to: f64,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[command(flatten)]
        quad: QuadArgs,
    },
}

#[derive(Debug)]
pub struct Tolerances {
    pub classify: f64,
    pub volume_rel: f64,
    pub cut_flag: f64,
}

impl Tolerances {
    fn from_overrides(o: &[(String, f64)]) -> Result<Self, CliError> {
        let mut t = Tolerances { classify: DEFAULT_CLASSIFY_TOL, volume_rel: 1e-8, cut_flag: 1e-12 };
        for (name, v) in o {
            let slot = match name.as_str() {
                "classify" => &mut t.classify,
                "volume_rel" => &mut t.volume_rel,
                "cut_flag" => &mut t.cut_flag,
                _ => return Err(CliError::Input(format!("unknown tolerance {name:?}"))),
            };
            *slot = *v;
        }
        Ok(t)
    }
}

fn parse_tol(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got {s:?}"))?;
    let v: f64 = v.parse().map_err(|e| format!("{v:?}: {e}"))?;
    if !(v > 0.0) || !v.is_finite() {
        return Err(format!("tolerance {k} must be positive and finite"));
    }
    Ok((k.to_string(), v))
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Lib(Error),
    Io(std::io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Lib(Error::Inconsistency(_) | Error::NegativeJacobian { .. }) => 3,
            CliError::Lib(Error::NonConvergence { .. } | Error::ShootingFailed { .. }) => 4,
            CliError::Lib(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(s) => f.write_str(s),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Input(e.to_string()))?;
    }
    let tol = Tolerances::from_overrides(&cli.tol)?;
    let spec = || commands::read_spec(cli.spec.as_deref());
    let out: Output = match cli.command {
        Command::Geodesic { cov, times, t_max, steps, at_cut } => {
            commands::geodesic(&spec()?, &cov, &times, t_max, steps, at_cut, &tol)?
        }
        Command::CutTime { cov } => commands::cut(&spec()?, &cov)?,
        Command::Maxwell { cov } => commands::maxwell(&spec()?, &cov)?,
        Command::Conjugate { cov, horizon } => commands::conjugate(&spec()?, &cov, horizon)?,
        Command::Classify => commands::classify(&spec()?, &tol)?,
        Command::Report { samples, jacobian_samples } => commands::report(&spec()?, samples, jacobian_samples, cli.seed)?,
        Command::Distance { x, y, oracle } => commands::distance(&spec()?, &x, &y, oracle, cli.seed)?,
        Command::Volume { quad } => commands::volume(&spec()?, &quad, cli.seed, &tol)?,
        Command::Density { quad } => commands::density(&spec()?, &quad, cli.seed, &tol)?,
        Command::Sweep { end_spec, from, to, points, quad } => {
            let end = commands::read_spec(Some(&end_spec))?;
            commands::sweep(&spec()?, &end, from, to, points, &quad, cli.seed, &tol)?
        }
    };
    match &cli.output {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| CliError::Input(format!("cannot create {}: {e}", p.display())))?;
            let mut w = std::io::BufWriter::new(f);
            out.write(&mut w, cli.format).map_err(CliError::Io)?;
            w.flush().map_err(CliError::Io)
        }
        None => out.write(std::io::stdout().lock(), cli.format).map_err(CliError::Io),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
