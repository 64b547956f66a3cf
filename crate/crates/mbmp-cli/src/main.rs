//! Command-line front end: single runs, density sweeps, overhead
//! analysis, and scenario validation. Summary output is JSON; series
//! and sweep output are CSV with a fixed column set.

mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mbmp_core::analysis::{self, DensityField, McInput};
use mbmp_core::{Arena, Scenario, Variant};

#[derive(Parser)]
#[command(name = "mbmp-sim", version, about = "Admission-control simulator for ad hoc networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one protocol variant.
    Run(RunArgs),
    /// Run a multi-point comparison sweep from a sweep spec.
    Sweep(SweepArgs),
    /// Closed-form and Monte-Carlo control-overhead analysis.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
    /// Check a scenario or sweep spec without running it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Protocol variant: mbmp-multihop, mbmp-power, mbmp-cs, dsr, local-only.
    #[arg(long)]
    variant: String,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix; writes PREFIX.summary.json and PREFIX.series.csv
    /// (and PREFIX.trace.jsonl with --trace). Without it, output goes
    /// to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record the decision/send/settle trace.
    #[arg(long)]
    trace: bool,
    /// Stdout format without --out: json (summary) or csv (series).
    #[arg(long, default_value = "json", value_parser = ["json", "csv"])]
    format: String,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Expected overhead ratio of 2-hop query flooding to one
    /// enlarged-radius broadcast.
    Theta(ThetaArgs),
}

#[derive(Args)]
struct ThetaArgs {
    /// Either `uniform:<nodes per square meter>` or a scenario file
    /// whose topology supplies an empirical density.
    #[arg(long)]
    density: String,
    /// Transmission radius in meters.
    #[arg(long, default_value_t = 250.0)]
    r: f64,
    /// Arena as WIDTHxHEIGHT in meters (uniform density only).
    #[arg(long, default_value = "1000x1000")]
    arena: String,
    /// Monte-Carlo trials.
    #[arg(long, default_value_t = 10_000)]
    trials: u32,
    /// Monte-Carlo seed (also materializes a random topology file).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Scenario or sweep spec file (JSON).
    #[arg(long)]
    scenario: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Analyze { what: AnalyzeCommand::Theta(args) } => cmd_theta(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    if !path.exists() {
        return Err(format!("scenario file not found: {}", path.display()));
    }
    Scenario::from_file(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_variant(name: &str) -> Result<Variant, String> {
    Variant::from_str(name).map_err(|e| e.to_string())
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let scenario = load_scenario(&args.scenario)?;
    let variant = parse_variant(&args.variant)?;
    let seed = args.seed.or(scenario.seed).unwrap_or(0);
    let report = mbmp_core::run(&scenario, variant, seed).map_err(|e| e.to_string())?;

    match &args.out {
        Some(prefix) => {
            let base = prefix.display();
            let write = |suffix: &str, content: String| -> Result<(), String> {
                let path = format!("{base}.{suffix}");
                std::fs::write(&path, content).map_err(|e| format!("{path}: {e}"))
            };
            write("summary.json", report.summary_json())?;
            write("series.csv", report.series_csv())?;
            if args.trace {
                write("trace.jsonl", report.trace_jsonl())?;
            }
        }
        None if args.trace => print!("{}", report.trace_jsonl()),
        None if args.format == "csv" => print!("{}", report.series_csv()),
        None => print!("{}", report.summary_json()),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), String> {
    let spec = sweep::SweepSpec::from_file(&args.scenario)?;
    let csv = sweep::run_sweep(&spec)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, csv).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn parse_arena(text: &str) -> Result<Arena, String> {
    let (w, h) = text
        .split_once('x')
        .ok_or_else(|| format!("arena {text:?} is not WIDTHxHEIGHT"))?;
    let width: f64 = w.parse().map_err(|_| format!("arena width {w:?} is not a number"))?;
    let height: f64 = h.parse().map_err(|_| format!("arena height {h:?} is not a number"))?;
    if width <= 0.0 || height <= 0.0 {
        return Err(format!("arena {text:?} must have positive sides"));
    }
    Ok(Arena { width, height })
}

fn cmd_theta(args: ThetaArgs) -> Result<(), String> {
    if args.r <= 0.0 {
        return Err(format!("radius {} must be positive", args.r));
    }
    let seed = args.seed.unwrap_or(1);
    let mut mc_rng = ChaCha8Rng::seed_from_u64(seed);
    mc_rng.set_stream(3);

    let (analytic, lower_bound, estimate) = if let Some(spec) = args.density.strip_prefix("uniform:")
    {
        let rho: f64 = spec
            .parse()
            .map_err(|_| format!("density {spec:?} is not a number (nodes per square meter)"))?;
        if rho <= 0.0 {
            return Err(format!("density {rho} must be positive"));
        }
        let arena = parse_arena(&args.arena)?;
        let analytic = analysis::theta_analytic(&DensityField::uniform(rho), args.r, 1.0)
            .map_err(|e| e.to_string())?;
        let bound = analysis::theta_lower_bound(rho * arena.area(), arena.area(), args.r);
        let est =
            analysis::theta_monte_carlo(McInput::Uniform { rho, arena }, args.r, args.trials, &mut mc_rng)
                .map_err(|e| e.to_string())?;
        (analytic, bound, est)
    } else {
        let scenario = load_scenario(Path::new(&args.density))?;
        let mut topo_rng = ChaCha8Rng::seed_from_u64(args.seed.or(scenario.seed).unwrap_or(0));
        topo_rng.set_stream(0);
        let topo = scenario.materialize_topology(&mut topo_rng);
        let field = DensityField::from_topology(&topo, args.r);
        let analytic = analysis::theta_analytic(&field, args.r, 1.0).map_err(|e| e.to_string())?;
        let bound = analysis::theta_lower_bound(
            topo.positions.len() as f64,
            topo.arena.area(),
            args.r,
        );
        let est = analysis::theta_monte_carlo(McInput::Fixed(&topo), args.r, args.trials, &mut mc_rng)
            .map_err(|e| e.to_string())?;
        (analytic, bound, est)
    };

    let out = serde_json::json!({
        "analytic": analytic,
        "lower_bound": lower_bound,
        "monte_carlo": estimate.ratio,
        "stderr": estimate.stderr,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("theta output serializes"));
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), String> {
    let path = &args.scenario;
    if !path.exists() {
        return Err(format!("scenario file not found: {}", path.display()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    // A sweep spec is recognized by its point list; anything else must
    // parse as a plain scenario.
    if value.get("node_counts").is_some() {
        let spec =
            sweep::SweepSpec::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        match &spec.name {
            Some(name) => println!("ok: {} (sweep spec {name:?})", path.display()),
            None => println!("ok: {} (sweep spec)", path.display()),
        }
    } else {
        Scenario::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        println!("ok: {} (scenario)", path.display());
    }
    Ok(())
}
