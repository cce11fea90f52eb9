use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use crow_buffer::config::ScenarioConfig;
use crow_buffer::runner::{
    analyze_histogram, read_histogram, run_buffer_scan, run_calibration, run_entanglement_scan, with_workers,
};
use crow_buffer::{Error, Result};

/// CROW single-photon buffer simulator.
#[derive(Parser)]
#[command(name = "sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scenario config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: `buffer` or `entangle`.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "SIM_OUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Delay, width and g² versus chip temperature.
    BufferScan(RunArgs),
    /// Two-photon interference fringes of stored time-bin entanglement.
    EntangleScan(RunArgs),
    /// Fit the CROW band to delay observations.
    Calibrate(RunArgs),
    /// Fit the main peak (and g² if --period-ns is given) of a histogram CSV.
    FitHistogram {
        csv: PathBuf,
        /// Peak-fit half window, ps.
        #[arg(long, default_value_t = 250.0)]
        fit_half_window_ps: f64,
        /// Repetition period for g², ns.
        #[arg(long)]
        period_ns: Option<f64>,
        /// g² integration half window, ps.
        #[arg(long, default_value_t = 158.0)]
        g2_half_window_ps: f64,
    },
    /// Print a built-in scenario config as JSON.
    ShowPreset { name: String },
    /// Print the JSON schema of scenario configs.
    Schema,
}

fn load(args: &RunArgs, default_preset: &str) -> Result<ScenarioConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Some(name)) => ScenarioConfig::preset(name)?,
        (None, None) => ScenarioConfig::preset(default_preset)?,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BufferScan(args) => {
            let cfg = load(&args, "buffer")?;
            let report = with_workers(cfg.workers, || run_buffer_scan(&cfg))??;
            println!("temp_C,delay_ps,delay_err_ps,g2_crow,g2_err,g2_ref");
            for p in &report.points {
                println!(
                    "{:.2},{:.2},{:.2},{:.3},{:.3},{:.3}",
                    p.temperature_c,
                    p.delay * 1e12,
                    p.delay_err * 1e12,
                    p.crow.g2.value,
                    p.crow.g2.stderr,
                    p.reference.g2.value
                );
            }
            eprintln!("wrote {}", report.output_dir.display());
        }
        Command::EntangleScan(args) => {
            let cfg = load(&args, "entangle")?;
            let report = with_workers(cfg.workers, || run_entanglement_scan(&cfg))??;
            println!(
                "v_extra={:.6} model_visibility={:.4}",
                report.v_extra, report.model_visibility
            );
            for s in &report.scans {
                println!(
                    "idler_T={:.2} V={:.3}±{:.3} bell_violated={} margin={:.3}",
                    s.data.idler_temp_c, s.fit.visibility, s.fit.visibility_err, s.bell.violated, s.bell.margin
                );
            }
            eprintln!("wrote {}", report.output_dir.display());
        }
        Command::Calibrate(args) => {
            let cfg = load(&args, "buffer")?;
            let (cal, dir) = run_calibration(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&cal.best)?);
            eprintln!("wrote {}", dir.display());
        }
        Command::FitHistogram {
            csv,
            fit_half_window_ps,
            period_ns,
            g2_half_window_ps,
        } => {
            let hist = read_histogram(&csv)?;
            let doc = analyze_histogram(
                &hist,
                fit_half_window_ps * 1e-12,
                period_ns.map(|p| p * 1e-9),
                g2_half_window_ps * 1e-12,
            )?;
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Schema => {
            println!(
                "{}",
                serde_json::to_string_pretty(&schemars::schema_for!(ScenarioConfig))?
            );
        }
        Command::ShowPreset { name } => {
            println!("{}", serde_json::to_string_pretty(&ScenarioConfig::preset(&name)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code().clamp(1, 255) as u8
}
