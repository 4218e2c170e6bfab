use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ktram::scenarios::{self, ClassifyKnobs, ClusterKnobs};
use ktram::sweep::{self, SweepSpec, Waveform};
use ktram::{fit, MssParams, SimMode};
use ktram_sense::config::{self as netlist, effective_port, PORT_ENV};

#[derive(Parser, Debug)]
#[command(name = "ktram", version, about = "kT-RAM emulator tools")]
struct Cli {
    /// Device parameter file (key=value lines).
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// RNG seed; bench defaults to 0, serve to the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Stochastic,
    Expectation,
}

impl From<Mode> for SimMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Stochastic => SimMode::Stochastic,
            Mode::Expectation => SimMode::Expectation,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drive one device with a periodic voltage and emit t,v,i,n_on as CSV.
    Hysteresis(HysteresisArgs),
    /// Fit device parameters to a measured t,v,i CSV.
    Fit(FitArgs),
    /// Run a synthetic learning benchmark and print key=value metrics.
    Bench(BenchArgs),
    /// Run the spike-stream daemon.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct HysteresisArgs {
    #[arg(long, value_enum, default_value = "sine")]
    waveform: Wave,
    /// Peak voltage (V).
    #[arg(long, default_value_t = 0.5)]
    amplitude: f64,
    /// Hz.
    #[arg(long, default_value_t = 100.0)]
    frequency: f64,
    #[arg(long, default_value_t = 3)]
    cycles: usize,
    #[arg(long, default_value_t = 200)]
    samples_per_cycle: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Wave {
    Sine,
    Triangle,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV with t, v and i columns.
    data: PathBuf,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    task: Task,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    /// Active channels per pattern.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Training patterns (classify).
    #[arg(long, default_value_t = 200)]
    train: usize,
    /// Held-out patterns (classify).
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Cluster steps (cluster).
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Feature partitions (cluster).
    #[arg(long, default_value_t = 2)]
    features: usize,
    /// Also report wall-clock time, which makes the report non-reproducible.
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Task {
    Classify,
    Cluster,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Netlist configuration (YAML).
    config: PathBuf,
}

/// Exit status 1: the user's input was rejected. Exit status 2: something
/// failed while running.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .invalid()
}

fn load_params(path: Option<&Path>) -> Result<Option<MssParams>, Failure> {
    let Some(path) = path else { return Ok(None) };
    let text = read_input(path)?;
    MssParams::parse(&text)
        .with_context(|| format!("bad parameter file {}", path.display()))
        .invalid()
        .map(Some)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .runtime(),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn hysteresis(cli: &Cli, args: &HysteresisArgs) -> Result<(), Failure> {
    let params = load_params(cli.params.as_deref())?.unwrap_or_default();
    if matches!(cli.mode, Some(Mode::Stochastic)) {
        return Err(Failure::Invalid(anyhow!("hysteresis runs in expectation mode only")));
    }
    let spec = SweepSpec {
        waveform: match args.waveform {
            Wave::Sine => Waveform::Sine,
            Wave::Triangle => Waveform::Triangle,
        },
        amplitude: args.amplitude,
        frequency: args.frequency,
        cycles: args.cycles,
        samples_per_cycle: args.samples_per_cycle,
    };
    spec.validate().invalid()?;
    let rows = sweep::hysteresis(&params, &spec).invalid()?;
    emit(cli.out.as_deref(), &sweep::sweep_csv(&rows))
}

fn fit_cmd(cli: &Cli, args: &FitArgs) -> Result<(), Failure> {
    let initial = load_params(cli.params.as_deref())?.unwrap_or_default();
    let text = read_input(&args.data)?;
    let samples = sweep::parse_iv_csv(&text)
        .with_context(|| format!("bad data file {}", args.data.display()))
        .invalid()?;
    let report = fit::fit(&samples, &initial, args.max_iter).invalid()?;
    let mut summary = String::new();
    let _ = writeln!(summary, "residual={}", sweep::fmt_sig(report.residual));
    let _ = writeln!(summary, "signal_rms={}", sweep::fmt_sig(report.signal_rms));
    let _ = writeln!(summary, "iterations={}", report.iterations);
    let _ = writeln!(summary, "evaluations={}", report.evaluations);
    match cli.out.as_deref() {
        // Fitted parameters go to the file, in the format --params reads.
        Some(path) => {
            emit(Some(path), &report.params.to_text())?;
            print!("{summary}");
        }
        None => print!("{}{summary}", report.params.to_text()),
    }
    Ok(())
}

fn bench_report(cli: &Cli, args: &BenchArgs) -> Result<String, Failure> {
    if cli.params.is_some() {
        return Err(Failure::Invalid(anyhow!(
            "bench runs with the default device parameters; --params is not accepted"
        )));
    }
    let mode: SimMode = cli.mode.map_or(SimMode::Expectation, Into::into);
    let seed = cli.seed.unwrap_or(0);
    let mode_name = match mode {
        SimMode::Stochastic => "stochastic",
        SimMode::Expectation => "expectation",
    };
    let started = Instant::now();
    let mut r = String::new();
    match args.task {
        Task::Classify => {
            let knobs = ClassifyKnobs {
                channels: args.channels,
                k: args.k,
                train: args.train,
                test: args.test,
                epochs: args.epochs,
            };
            let out = scenarios::run_classification(seed, mode, &knobs).invalid()?;
            let _ = writeln!(r, "task=classify");
            let _ = writeln!(r, "seed={seed}");
            let _ = writeln!(r, "mode={mode_name}");
            let _ = writeln!(r, "channels={}", knobs.channels);
            let _ = writeln!(r, "k={}", knobs.k);
            let _ = writeln!(r, "train={}", knobs.train);
            let _ = writeln!(r, "test={}", knobs.test);
            let _ = writeln!(r, "epochs={}", out.epochs);
            let _ = writeln!(r, "steps={}", out.train_steps);
            let _ = writeln!(r, "accuracy={:.4}", out.accuracy);
        }
        Task::Cluster => {
            let knobs = ClusterKnobs {
                channels: args.channels,
                k: args.k,
                steps: args.steps,
                features: args.features,
            };
            let out = scenarios::run_clustering(seed, mode, &knobs).invalid()?;
            let _ = writeln!(r, "task=cluster");
            let _ = writeln!(r, "seed={seed}");
            let _ = writeln!(r, "mode={mode_name}");
            let _ = writeln!(r, "channels={}", knobs.channels);
            let _ = writeln!(r, "k={}", knobs.k);
            let _ = writeln!(r, "features={}", knobs.features);
            let _ = writeln!(r, "steps={}", out.steps);
            let _ = writeln!(r, "purity={:.4}", out.purity);
        }
    }
    if args.timing {
        let _ = writeln!(r, "wall_ms={}", started.elapsed().as_millis());
    }
    Ok(r)
}

fn serve(cli: &Cli, args: &ServeArgs) -> Result<(), Failure> {
    let text = read_input(&args.config)?;
    let mut cfg = netlist::load_config(&text)
        .with_context(|| format!("bad config {}", args.config.display()))
        .invalid()?;
    if let Some(params) = load_params(cli.params.as_deref())? {
        cfg.server.params = params;
    }
    if let Some(mode) = cli.mode {
        cfg.server.mode = mode.into();
    }
    if let Some(seed) = cli.seed {
        cfg.server.seed = seed;
    }
    let env = std::env::var(PORT_ENV).ok();
    cfg.server.port = effective_port(cfg.server.port, env.as_deref())
        .map_err(|e| anyhow!(e))
        .invalid()?;
    let server = ktram_sense::start(cfg).runtime()?;
    eprintln!("listening on {}", server.local_addr());
    server.wait().runtime()
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Hysteresis(a) => hysteresis(cli, a),
        Command::Fit(a) => fit_cmd(cli, a),
        Command::Bench(a) => {
            let report = bench_report(cli, a)?;
            emit(cli.out.as_deref(), &report)
        }
        Command::Serve(a) => serve(cli, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
