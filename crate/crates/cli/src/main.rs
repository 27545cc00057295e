use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use loco_core::bench::{run_grid, write_csv, BenchConfig, BenchMethod};
use loco_core::chain::{logspace, norm_error_sweep, DEVIATION_MAX_DIM};
use loco_core::recovery::{linear_grid, rotation_recovery_demo, temperature_sweep, RecoveryConfig};
use loco_core::{
    build_skew, checkpoint, deviation_report, ChainMode, LocoError, LowRankSkewFactors, Rng,
    RotationChain,
};

/// Largest tolerated `|Δloss| / Δt` between adjacent temperatures, as a
/// multiple of the largest loss in the sweep. The default demo measures
/// about 1.8.
const SWEEP_JUMP_FACTOR: f64 = 4.0;

/// Orthogonality tolerance for the exact-mode temperature sweep.
const EXACT_NORM_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "loco", version, about = "Low-rank compositional orthogonal transforms: experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Norm preservation of the first-order chain as the factor size grows.
    ErrorAnalysis(ErrorAnalysis),
    /// Measured orthogonality defect of first-order chains vs n(n−1)γ².
    Deviation(Deviation),
    /// Loss and norm drift of a trained demo adapter across temperatures.
    TemperatureSweep(TemperatureSweep),
    /// Train an adapter to recover a hidden rotation; writes the loss trace.
    FinetuneDemo(FinetuneDemo),
    /// Time the LoCO paths against the baselines.
    Bench(Bench),
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `start:stop:points`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Grid {
    start: f64,
    stop: f64,
    points: usize,
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("expected start:stop:points, got {s:?}"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
        let points = c.trim().parse::<usize>().map_err(|e| format!("{c:?}: {e}"))?;
        if points == 0 {
            return Err("grid needs at least one point".into());
        }
        Ok(Grid {
            start: num(a)?,
            stop: num(b)?,
            points,
        })
    }
}

#[derive(Args)]
struct ErrorAnalysis {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    r: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Log-spaced ε grid.
    #[arg(long, default_value = "1e-6:0.31622776601683794:20")]
    grid: Grid,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

#[derive(Args)]
struct Deviation {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    r: usize,
    /// Chain lengths.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    n: Vec<usize>,
    /// Target perturbation sizes ‖Δᵢ‖_F.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,0.5")]
    gamma: Vec<f64>,
    /// Random chains per (n, γ) cell.
    #[arg(long, default_value_t = 10)]
    trials: usize,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    r: usize,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = RecoveryConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = RecoveryConfig::default().batch)]
    batch: usize,
    /// Entry scale of the hidden target factors.
    #[arg(long, default_value_t = RecoveryConfig::default().target_std)]
    target_std: f64,
    /// Entry scale of U at initialization.
    #[arg(long, default_value_t = RecoveryConfig::default().init_std)]
    init_std: f64,
}

impl DemoArgs {
    fn config(&self, seed: u64) -> RecoveryConfig {
        RecoveryConfig {
            seed,
            k: self.k,
            d: self.d,
            r: self.r,
            n: self.n,
            steps: self.steps,
            lr: self.lr,
            batch: self.batch,
            target_std: self.target_std,
            init_std: self.init_std,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    FirstOrder,
}

impl From<Mode> for ChainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => ChainMode::Exact,
            Mode::FirstOrder => ChainMode::FirstOrder,
        }
    }
}

#[derive(Args)]
struct TemperatureSweep {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    demo: DemoArgs,
    /// Linearly spaced temperature grid.
    #[arg(long, default_value = "0:2:9")]
    grid: Grid,
    #[arg(long, value_enum, default_value = "first-order")]
    mode: Mode,
}

#[derive(Args)]
struct FinetuneDemo {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    demo: DemoArgs,
    /// Also write the trained adapter checkpoint here.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct Bench {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "loco_woodbury,loco_naive,oft_block,householder_seq")]
    methods: Vec<BenchMethod>,
    #[arg(long, value_delimiter = ',', default_value = "256,1024,2048,4096")]
    d: Vec<usize>,
    /// Rank for LoCO, block size for OFT, reflector count for Householder.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    r: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    /// Use all threads and the first-order chain for the Woodbury path.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Loco(#[from] LocoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invariant(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    /// A closed stdout (`loco … | head`) is not a failure.
    fn is_broken_pipe(&self) -> bool {
        let io = match self {
            CliError::Io(e) | CliError::Loco(LocoError::Io(e)) => Some(e.kind()),
            CliError::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(e) => Some(e.kind()),
                _ => None,
            },
            _ => None,
        };
        io == Some(io::ErrorKind::BrokenPipe)
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Loco(e) => match e {
                LocoError::DimensionMismatch(_) => "dimension_mismatch",
                LocoError::Singular { .. } => "singular",
                LocoError::NotSkew { .. } => "not_skew",
                LocoError::InvalidRank { .. } => "invalid_rank",
                LocoError::DimensionTooLarge { .. } => "dimension_too_large",
                LocoError::InvalidGrid(_) => "invalid_grid",
                LocoError::BlockMismatch { .. } => "block_mismatch",
                LocoError::ZeroReflector { .. } => "zero_reflector",
                LocoError::ConfigUnsupported(_) => "config_unsupported",
                LocoError::NonFinite(_) => "non_finite",
                LocoError::InvalidArgument(_) => "invalid_argument",
                LocoError::Checkpoint(_) => "checkpoint",
                LocoError::Io(_) => "io",
            },
            CliError::Csv(_) | CliError::Io(_) => "io",
            CliError::Invariant(_) => "invariant_violated",
            CliError::Config(_) => "config",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn csv_writer(out: &Option<PathBuf>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink))
}

/// Shortest round-trip scientific notation.
fn num(x: f64) -> String {
    format!("{x:e}")
}

fn error_analysis(a: &ErrorAnalysis) -> Result<()> {
    let grid = logspace(a.grid.start, a.grid.stop, a.grid.points)?;
    let pts = norm_error_sweep(a.common.seed, a.d, a.r, a.n, &grid, a.trials)?;
    let mut w = csv_writer(&a.common.out)?;
    w.write_record(["eps", "mean_rel_err", "std_rel_err"])?;
    for p in &pts {
        w.write_record([num(p.eps), num(p.mean_rel_error), num(p.std_rel_error)])?;
    }
    w.flush()?;
    Ok(())
}

/// Chain whose components each have `‖Δᵢ‖_F ≈ gamma`: with `Δ ≈ 2A` for
/// small `A` and `A` quadratic in the factors, component `i` is rescaled by
/// `sqrt(gamma / (2‖Aᵢ‖_F))`.
fn chain_with_gamma(rng: &mut Rng, d: usize, r: usize, n: usize, gamma: f64) -> Result<RotationChain> {
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let f = LowRankSkewFactors::random(rng, d, r, 1.0)?;
        let a = build_skew(&f)?.frobenius_norm();
        let c = if a > 0.0 { (gamma / (2.0 * a)).sqrt() } else { 0.0 };
        comps.push(f.scaled(c));
    }
    Ok(RotationChain::new(comps, ChainMode::FirstOrder)?)
}

fn deviation(a: &Deviation) -> Result<()> {
    if a.n.is_empty() || a.gamma.is_empty() || a.trials == 0 {
        return Err(CliError::Config("need at least one n, one gamma and one trial".into()));
    }
    if let Some(g) = a.gamma.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(CliError::Config(format!("gamma {g} must be finite and nonnegative")));
    }
    if a.d > DEVIATION_MAX_DIM {
        return Err(LocoError::DimensionTooLarge {
            d: a.d,
            limit: DEVIATION_MAX_DIM,
        }
        .into());
    }
    let mut w = csv_writer(&a.common.out)?;
    w.write_record(["n", "d", "r", "gamma", "deviation", "bound", "satisfied"])?;
    let mut violations = 0;
    let mut stream = 0u64;
    for &n in &a.n {
        for &gamma in &a.gamma {
            for _ in 0..a.trials {
                let mut rng = Rng::derive(a.common.seed, stream);
                stream += 1;
                let c = chain_with_gamma(&mut rng, a.d, a.r, n, gamma)?;
                let rep = deviation_report(&c)?;
                if !rep.satisfied {
                    violations += 1;
                }
                w.write_record([
                    n.to_string(),
                    a.d.to_string(),
                    a.r.to_string(),
                    num(rep.gamma),
                    num(rep.deviation),
                    num(rep.bound),
                    rep.satisfied.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    if violations > 0 {
        return Err(CliError::Invariant(format!("{violations} chains exceed the deviation bound")));
    }
    Ok(())
}

fn temperature(a: &TemperatureSweep) -> Result<()> {
    let run = rotation_recovery_demo(&a.demo.config(a.common.seed))?;
    let ts = linear_grid(a.grid.start, a.grid.stop, a.grid.points)?;
    let mode = ChainMode::from(a.mode);
    let pts = temperature_sweep(&run.adapter, &run.xs, &run.ys, &ts, mode)?;
    let mut w = csv_writer(&a.common.out)?;
    w.write_record(["t", "loss", "norm_dev"])?;
    for p in &pts {
        w.write_record([num(p.t), num(p.loss), num(p.norm_dev)])?;
    }
    w.flush()?;

    for p in pts.iter().filter(|p| p.t == 0.0) {
        if p.loss != run.pretrained_loss {
            return Err(CliError::Invariant(format!(
                "loss(0) = {:e} differs from the pretrained loss {:e}",
                p.loss, run.pretrained_loss
            )));
        }
    }
    if mode == ChainMode::Exact {
        if let Some(p) = pts.iter().find(|p| p.norm_dev > EXACT_NORM_TOL) {
            return Err(CliError::Invariant(format!("norm deviation {:e} at t = {}", p.norm_dev, p.t)));
        }
    }
    let peak = pts.iter().map(|p| p.loss).fold(0.0, f64::max);
    for pair in pts.windows(2) {
        let dt = (pair[1].t - pair[0].t).abs();
        let jump = (pair[1].loss - pair[0].loss).abs();
        if jump > SWEEP_JUMP_FACTOR * peak * dt {
            return Err(CliError::Invariant(format!(
                "loss jumps by {jump:e} between t = {} and t = {}",
                pair[0].t, pair[1].t
            )));
        }
    }
    Ok(())
}

fn finetune(a: &FinetuneDemo) -> Result<()> {
    let run = rotation_recovery_demo(&a.demo.config(a.common.seed))?;
    let mut w = csv_writer(&a.common.out)?;
    w.write_record(["step", "loss"])?;
    for (step, loss) in run.losses.iter().enumerate() {
        w.write_record([step.to_string(), num(*loss)])?;
    }
    w.flush()?;
    if let Some(path) = &a.save {
        checkpoint::save_file(&run.adapter, path)?;
    }
    Ok(())
}

fn bench(a: &Bench) -> Result<()> {
    let cfg = BenchConfig {
        seed: a.common.seed,
        batch: a.batch,
        repeats: a.repeats,
        warmup: a.warmup,
        parallel: a.parallel,
    };
    let records = run_grid(&a.methods, &a.d, &a.r, &a.n, &cfg)?;
    let sink: Box<dyn Write> = match &a.common.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    write_csv(&records, sink)?;
    Ok(())
}

/// Sizes the global pool from `LOCO_THREADS` (unset or 0: one per core).
fn configure_threads() -> Result<()> {
    let threads = match std::env::var("LOCO_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("LOCO_THREADS={v:?} is not a count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.cmd {
        Command::ErrorAnalysis(a) => error_analysis(a),
        Command::Deviation(a) => deviation(a),
        Command::TemperatureSweep(a) => temperature(a),
        Command::FinetuneDemo(a) => finetune(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_broken_pipe() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
