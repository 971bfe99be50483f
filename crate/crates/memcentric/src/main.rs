use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use memcentric::config::ExperimentConfig;
use memcentric::metrics::OutputFormat;
use memcentric::runner::{self, Subcommand};

/// Trace-driven DRAM simulator: read-disturbance attacks and mitigations,
/// self-managing maintenance, in-DRAM bulk-bitwise compute, near-memory
/// offload modeling.
#[derive(Parser)]
#[command(name = "memcentric", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(ClapSubcommand)]
enum Cmd {
    /// Replay a command trace or synthetic workload.
    Simulate(RunArgs),
    /// Run the configured hammer/press attack pattern and report flips.
    Attack(RunArgs),
    /// Compile a gate netlist and execute it in-DRAM over operand lanes.
    Pud(RunArgs),
    /// Harvest random bits by simultaneous multi-row activation.
    Trng(RunArgs),
    /// Place kernels across near-memory units and report scaling curves.
    Pnm(RunArgs),
    /// Run the configured parameter sweep, one CSV row per point.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long)]
    format: Option<OutputFormat>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with success
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let (sub, args) = match &cli.command {
        Cmd::Simulate(a) => (Subcommand::Simulate, a),
        Cmd::Attack(a) => (Subcommand::Attack, a),
        Cmd::Pud(a) => (Subcommand::Pud, a),
        Cmd::Trng(a) => (Subcommand::Trng, a),
        Cmd::Pnm(a) => (Subcommand::Pnm, a),
        Cmd::Sweep(a) => (Subcommand::Sweep, a),
    };
    match execute(sub, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memcentric: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}

struct CliError {
    code: i32,
    message: String,
}

impl From<runner::RunnerError> for CliError {
    fn from(e: runner::RunnerError) -> Self {
        CliError {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn execute(sub: Subcommand, args: &RunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError {
        code: 2,
        message: format!("cannot read {}: {e}", args.config.display()),
    })?;
    let mut config =
        ExperimentConfig::parse(&text, &args.config.display().to_string()).map_err(|e| {
            CliError {
                code: 2,
                message: e.to_string(),
            }
        })?;
    // resolve relative paths against the config's directory, as load() would
    let base = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    config = resolve(config, &base);
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let format = args.format.unwrap_or(config.output.format);
    let out_path = args.out.clone().or_else(|| config.output.path.clone());

    let rendered = match sub {
        Subcommand::Sweep => {
            let points = runner::run_sweep(&text, &config)?;
            match format {
                OutputFormat::Csv => runner::sweep_to_csv(&points),
                OutputFormat::Json => sweep_json(&points),
            }
        }
        _ => {
            let report = runner::run(&config, sub)?;
            match format {
                OutputFormat::Csv => report.to_csv_string(),
                OutputFormat::Json => report.to_json_string(),
            }
        }
    };
    match out_path {
        Some(path) => std::fs::write(&path, rendered).map_err(|e| CliError {
            code: 3,
            message: format!("cannot write {}: {e}", path.display()),
        })?,
        None => print!("{rendered}"),
    }
    Ok(())
}

fn resolve(mut config: ExperimentConfig, base: &std::path::Path) -> ExperimentConfig {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let Some(w) = &mut config.workload {
        if let Some(t) = &mut w.trace {
            fix(t);
        }
    }
    if let Some(p) = &mut config.pud {
        fix(&mut p.netlist);
        fix(&mut p.operands);
    }
    config
}

fn sweep_json(points: &[(Vec<(String, String)>, memcentric::MetricsReport)]) -> String {
    let mut s = String::from("[");
    for (i, (axes, report)) in points.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("\n  {");
        let mut first = true;
        for (k, v) in axes {
            if !first {
                s.push_str(", ");
            }
            first = false;
            s.push_str(&format!(
                "{}: {}",
                serde_json::to_string(k).unwrap(),
                serde_json::to_string(v).unwrap()
            ));
        }
        for (name, value) in report.rows() {
            s.push_str(", ");
            s.push_str(&format!(
                "{}: {}",
                serde_json::to_string(name).unwrap(),
                serde_json::to_string(&value.render()).unwrap()
            ));
        }
        s.push('}');
    }
    s.push_str("\n]\n");
    s
}
