use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aimcsim::harness::{reproduce_figure4, run_once, run_sweep, HarnessError, SweepSpec, Workload};
use aimcsim::mapping::parse_layer_table;
use aimcsim::metrics::to_csv;
use aimcsim::{parse_config, validate, ArchConfig, ConfigError, MappingPlan, Strategy};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aimcsim", version, about = "Cycle-approximate simulator of many-cluster AIMC systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one configuration and print its metrics as CSV.
    Run(RunArgs),
    /// Run a parameter sweep and emit one CSV row per point.
    Sweep(SweepArgs),
    /// Run the built-in wired/wireless benchmark sweep and summarize it.
    #[command(name = "reproduce-fig4")]
    ReproduceFig4(Fig4Args),
    /// Check a configuration file and list every violation.
    #[command(name = "validate-config")]
    ValidateConfig {
        /// TOML configuration file.
        file: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML architecture config (default: built-in 16-cluster wired setup).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accepted for scripting; every run is deterministic anyway.
    #[arg(long)]
    seedless: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Layer table (`name c_in c_out k w_in h_in stride` per line).
    #[arg(long, conflicts_with = "plan")]
    layers: Option<PathBuf>,
    /// Mapping plan as JSON, used instead of the built-in mappers.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value = "pipelining")]
    strategy: Strategy,
    /// Override the cluster count of the config.
    #[arg(long)]
    clusters: Option<u32>,
    /// Frames to push through (default 64 for the pipelining benchmark, else 1).
    #[arg(long)]
    iterations: Option<u32>,
    /// Write the timeline as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the report; `.json` gives JSON, anything else CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// TOML sweep spec (default: the 40-point wired/wireless sweep).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u32>,
    /// CSV destination (default: the spec's `output`, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fig4Args {
    #[command(flatten)]
    common: Common,
    /// Directory for the CSV tables and summary.
    #[arg(long, default_value = "fig4_out")]
    out: PathBuf,
}

enum Failure {
    Invalid(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<ArchConfig, Failure> {
    match path {
        None => Ok(ArchConfig::reference()),
        Some(p) => parse_config(&read(p)?).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display()))),
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    let workload = match (&args.layers, &args.plan) {
        (Some(p), _) => {
            Workload::Layers(parse_layer_table(&read(p)?).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?)
        }
        (None, Some(p)) => {
            let plan = MappingPlan::from_json(&read(p)?).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?;
            cfg.n_clusters = plan.n_clusters as u32;
            Workload::Plan(plan)
        }
        (None, None) => Workload::Benchmark,
    };
    if let Some(n) = args.clusters {
        cfg.n_clusters = n;
    }
    let arch = validate(&cfg).map_err(|v| Failure::Invalid(HarnessError::Config(v).to_string()))?;
    let result = run_once(&arch, &workload, args.strategy, args.iterations)?;
    if let Some(t) = &args.trace {
        let f = fs::File::create(t).map_err(|e| Failure::Io(format!("{}: {e}", t.display())))?;
        let mut w = BufWriter::new(f);
        result
            .timeline
            .write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Failure::Io(format!("{}: {e}", t.display())))?;
    }
    let csv = to_csv(std::slice::from_ref(&result.report));
    if let Some(out) = &args.out {
        if out.extension().is_some_and(|e| e == "json") {
            write(out, (result.report.to_json() + "\n").as_bytes())?;
        } else {
            write(out, csv.as_bytes())?;
        }
    }
    print!("{csv}");
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = load_config(args.common.config.as_deref())?;
    let mut spec = match &args.spec {
        Some(p) => SweepSpec::from_toml(&read(p)?).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))?,
        None => SweepSpec::fig4(),
    };
    if args.iterations.is_some() {
        spec.iterations = args.iterations;
    }
    let csv = to_csv(&run_sweep(&base, &spec)?);
    match args.out.as_ref().or(spec.output.as_ref()) {
        Some(out) => write(out, csv.as_bytes()),
        None => io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| Failure::Io(e.to_string())),
    }
}

fn fig4(args: Fig4Args) -> Result<(), Failure> {
    let base = load_config(args.common.config.as_deref())?;
    let fig = reproduce_figure4(&base)?;
    fig.write_to(&args.out)?;
    print!("{}", fig.summary_text());
    Ok(())
}

fn validate_config(file: &Path) -> Result<(), Failure> {
    match parse_config(&read(file)?) {
        Ok(cfg) => {
            let arch = validate(&cfg).map_err(|v| Failure::Invalid(HarnessError::Config(v).to_string()))?;
            println!(
                "ok: {} clusters, {} at {} bit/cycle, eval {} cycles",
                arch.n_clusters,
                arch.interconnect.kind,
                arch.interconnect.bandwidth_bits_per_cycle,
                arch.eval_cycles()
            );
            Ok(())
        }
        Err(ConfigError::Invalid(v)) => Err(Failure::Invalid(HarnessError::Config(v).to_string())),
        Err(e) => Err(Failure::Invalid(format!("{}: {e}", file.display()))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::ReproduceFig4(a) => fig4(a),
        Cmd::ValidateConfig { file } => validate_config(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Invalid(m) | Failure::Io(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
