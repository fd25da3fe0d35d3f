use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use portrank::config::RunConfig;
use portrank::pipeline::{Pipeline, Stage};
use portrank::synthetic::{planted_world, registry_csv, toy_world, PlantedParams, PLANTED_RADIUS_M, TOY_CONFIG};
use portrank::visits::write_voyages;
use portrank::{Error, Result};

#[derive(Parser)]
#[command(name = "portrank", version, about = "Port centrality from vessel traffic, and what explains it")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace existing stage outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse AIS records and assign them to port geofences.
    Ingest,
    /// Collapse records into port visits and voyages.
    Visits,
    /// Build the ports network and its largest strongly connected component.
    Network,
    /// Compute the six centralities and the aggregated score.
    Centrality,
    /// Profile, clean, encode and impute the port feature table.
    Features,
    /// Label central ports, train the forest and evaluate it.
    Train,
    /// SHAP, SAGE and partial dependence for the trained model.
    Explain,
    /// GeoJSON map layer, top-ports table and summary.
    Report,
    /// Run every stage in order.
    All,
    /// Write a synthetic input set.
    Generate {
        #[arg(value_enum)]
        world: World,
        /// Target directory.
        dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum World {
    /// Small AIS dump plus registry.
    Toy,
    /// Voyage list plus registry with planted feature effects.
    Planted,
}

fn load_config(g: &Global) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    let out = g
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output in the config".into()))?;
    if cfg.input.ports.as_os_str().is_empty() {
        return Err(Error::Config("input.ports is not set".into()));
    }
    Ok((cfg, out))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn generate(world: World, dir: &Path, seed: Option<u64>, force: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = dir.join("config.toml");
    if config.exists() && !force {
        return Err(Error::WouldOverwrite(config));
    }
    match world {
        World::Toy => {
            let w = toy_world();
            write(&dir.join("ports.csv"), &w.registry_csv)?;
            write(&dir.join("ais.csv"), &w.ais_csv)?;
            write(&config, TOY_CONFIG)?;
        }
        World::Planted => {
            let params = PlantedParams {
                seed: seed.unwrap_or(0),
                ..Default::default()
            };
            let w = planted_world(&params);
            write(&dir.join("ports.csv"), &registry_csv(&w.ports))?;
            let mut buf = Vec::new();
            write_voyages(&mut buf, &w.voyages)?;
            fs::write(dir.join("voyages.csv"), buf).map_err(|e| Error::io(dir.join("voyages.csv"), e))?;
            let mut cfg = RunConfig::default();
            cfg.input.ports = "ports.csv".into();
            cfg.input.voyages = Some("voyages.csv".into());
            cfg.radius_policy = portrank::geo::RadiusPolicy::uniform(PLANTED_RADIUS_M);
            cfg.seed = params.seed;
            write(&config, &cfg.to_toml()?)?;
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let stage = match cli.command {
        Command::Generate { world, dir } => return generate(world, &dir, cli.global.seed, cli.global.force),
        Command::All => None,
        Command::Ingest => Some(Stage::Ingest),
        Command::Visits => Some(Stage::Visits),
        Command::Network => Some(Stage::Network),
        Command::Centrality => Some(Stage::Centrality),
        Command::Features => Some(Stage::Features),
        Command::Train => Some(Stage::Train),
        Command::Explain => Some(Stage::Explain),
        Command::Report => Some(Stage::Report),
    };
    let (cfg, out) = load_config(&cli.global)?;
    let pipeline = Pipeline::new(cfg, out, cli.global.force);
    let manifests = match stage {
        Some(s) => vec![pipeline.run(s)?],
        None => pipeline.run_all()?,
    };
    for m in manifests {
        let counts: Vec<String> = m.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let metrics: Vec<String> = m.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!("{:<10} {} {}", m.stage, counts.join(" "), metrics.join(" "));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
