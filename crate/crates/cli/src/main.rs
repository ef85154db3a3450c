//! `regflow` command-line experiment runner.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::LoadedConfig;

#[derive(Parser, Debug)]
#[command(name = "regflow", version, about = "Run flow experiments on rough vector fields")]
struct Cli {
    /// Worker threads for particle integration.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory holding the preset configs.
    #[arg(long, global = true, env = "REGFLOW_PRESETS")]
    presets: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment from a config file or preset name.
    Run {
        config: String,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override for random samplers.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the shipped presets.
    List,
}

fn preset_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/presets")))
}

fn presets(dir: &Path) -> Result<Vec<(PathBuf, LoadedConfig)>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("preset directory {} is unreadable", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no presets found in {}", dir.display());
    }
    paths.into_iter().map(|p| Ok((p.clone(), LoadedConfig::load(&p)?))).collect()
}

fn list(dir: &Path) -> Result<()> {
    let all = presets(dir)?;
    let width = all.iter().map(|(_, c)| c.config.name.len()).max().unwrap_or(4).max(4);
    println!("{:width$}  {:14}  {:7}  anchor", "name", "kind", "runtime");
    for (_, c) in &all {
        let cfg = &c.config;
        println!("{:width$}  {:14}  {:7}  {}", cfg.name, cfg.experiment.name(), cfg.runtime, cfg.anchor);
    }
    Ok(())
}

fn resolve(spec: &str, dir: &Path) -> Result<PathBuf> {
    let direct = PathBuf::from(spec);
    if direct.exists() {
        return Ok(direct);
    }
    let preset = dir.join(format!("{spec}.toml"));
    if preset.exists() {
        return Ok(preset);
    }
    bail!("no config file or preset named {spec}");
}

fn execute(config: &str, out: Option<PathBuf>, seed: Option<u64>, dir: &Path) -> Result<bool> {
    let path = resolve(config, dir)?;
    let loaded = LoadedConfig::load(&path)?.with_seed(seed);
    let artifacts = run::run(&loaded)?;
    let out = out
        .or_else(|| loaded.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&loaded.config.name));
    // everything is computed before the first write, so failures leave no partial output
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let report = serde_json::to_vec_pretty(&artifacts.report)?;
    std::fs::write(out.join("report.json"), report)?;
    for (name, bytes) in &artifacts.files {
        std::fs::write(out.join(name), bytes)?;
    }
    for c in &artifacts.report.checks {
        println!("{:28} {}", c.name, if c.pass { "pass" } else { "FAIL" });
    }
    println!("report: {}", out.join("report.json").display());
    Ok(artifacts.report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let dir = preset_dir(cli.presets.as_deref());
    let result = match cli.command {
        Command::List => list(&dir).map(|_| true),
        Command::Run { config, out, seed } => execute(&config, out, seed, &dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
