use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use tapergp::experiments::{run_scenario, write_outputs, Config, Scenario};

#[derive(Parser)]
#[command(name = "tapergp", version, about = "Tapered covariance estimation, prediction and simulation studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate fields and write every value.
    Simulate(Common),
    /// Maximum likelihood fits with taper-range continuation.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Model preset, A or B.
        #[arg(long)]
        model: Option<String>,
        /// Taper family, i to iv.
        #[arg(long)]
        family: Option<String>,
        /// Comma-separated taper ranges, `inf` allowed.
        #[arg(long)]
        gammas: Option<String>,
        #[arg(long)]
        n_rep: Option<usize>,
        /// Comma-separated grid half-counts.
        #[arg(long)]
        m: Option<String>,
    },
    /// Kriging at the configured site with empirical and exact errors.
    Predict(Common),
    /// Tapered to untapered MSPE ratios.
    MspeCurve(Common),
    /// Any scenario; the mode comes from the config.
    Experiment(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(common: &Common, mode: Option<&str>, extra: &[(&str, Option<String>)]) -> tapergp::Result<Scenario> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => Config::parse("")?,
    };
    if cfg.get("name").is_none() {
        let stem = common
            .config
            .as_deref()
            .and_then(|p| p.file_stem())
            .and_then(|s| s.to_str())
            .unwrap_or("scenario");
        cfg.set("name", stem);
    }
    if let Some(mode) = mode {
        cfg.set("mode", mode);
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", seed.to_string());
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, v.clone());
        }
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| tapergp::Error::Config(format!("override '{kv}' is not key=value")))?;
        cfg.set(k.trim(), v.trim());
    }
    Scenario::from_config(&cfg)
}

fn run(scenario: &Scenario, out: &Path) -> tapergp::Result<()> {
    info!("running scenario '{}' ({})", scenario.name, scenario.mode);
    let table = run_scenario(scenario)?;
    let failed = table
        .rows
        .iter()
        .filter(|r| r.last().is_some_and(|s| s.starts_with("error")))
        .count();
    let paths = write_outputs(scenario, &table, out)?;
    println!("{} rows -> {}", table.len(), paths.table.display());
    if failed > 0 {
        println!("{failed} rows recorded an error status");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => load(c, Some("simulate"), &[]).map(|s| (s, c)),
        Command::Fit {
            common,
            model,
            family,
            gammas,
            n_rep,
            m,
        } => load(
            common,
            Some("estimate"),
            &[
                ("model", model.clone()),
                ("taper.family", family.clone()),
                ("taper.gamma", gammas.clone()),
                ("n_rep", n_rep.map(|n| n.to_string())),
                ("m", m.clone()),
            ],
        )
        .map(|s| (s, common)),
        Command::Predict(c) => load(c, Some("predict"), &[]).map(|s| (s, c)),
        Command::MspeCurve(c) => load(c, Some("mspe_curve"), &[]).map(|s| (s, c)),
        Command::Experiment(c) => load(c, None, &[]).map(|s| (s, c)),
    }
    .and_then(|(s, c)| run(&s, &c.out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
