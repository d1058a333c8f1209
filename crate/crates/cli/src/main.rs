//! `catlight` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod experiments;
mod recipes;

use clap::Parser;
use config::{OutputFormat, RunConfig};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const THREADS_ENV: &str = "CATLIGHT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "catlight",
    version,
    about = "Post-selected HHG light states: simulation and tomography"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "recipe", required_unless_present_any = ["recipe", "list_recipes"])]
    config: Option<PathBuf>,
    /// Name of a built-in recipe (see --list-recipes).
    #[arg(long)]
    recipe: Option<String>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `format` in the config.
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Print the built-in recipe names and exit.
    #[arg(long)]
    list_recipes: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Core(catlight::Error),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        use catlight::Error as E;
        match self {
            Failure::Config(_) => 2,
            Failure::Core(E::Usage(_) | E::Truncation { .. }) => 2,
            Failure::Core(E::EmptySelection { .. } | E::DegenerateSelection) => 3,
            Failure::Core(E::DegenerateState { .. } | E::Consistency(_)) => 4,
            Failure::Core(_) | Failure::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Io(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<catlight::Error> for Failure {
    fn from(e: catlight::Error) -> Self {
        Failure::Core(e)
    }
}

fn load(cli: &Cli) -> Result<(RunConfig, String), Failure> {
    let (text, source) = if let Some(name) = &cli.recipe {
        let text = recipes::get(name).ok_or_else(|| {
            Failure::Config(format!(
                "unknown recipe '{name}'; available: {}",
                recipes::names().collect::<Vec<_>>().join(", ")
            ))
        })?;
        (text.to_string(), format!("recipe:{name}"))
    } else {
        let path = cli
            .config
            .as_ref()
            .expect("clap enforces --config or --recipe");
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        (text, path.display().to_string())
    };
    let mut cfg = RunConfig::parse(&text).map_err(|e| Failure::Config(format!("{source}: {e}")))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    if let Some(format) = cli.format {
        cfg.format = format;
    }
    cfg.validate()
        .map_err(|e| Failure::Config(format!("{source}: {e}")))?;
    Ok((cfg, source))
}

fn configure_threads() -> Result<usize, Failure> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Failure::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Io(format!("thread pool: {e}")))?;
    }
    Ok(rayon::current_num_threads())
}

/// Writes every file under a temporary name first, then renames them into place.
fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(format!("writing to {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut staged = Vec::new();
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.partial"));
        if let Err(e) = std::fs::write(&tmp, bytes) {
            for t in &staged {
                let _ = std::fs::remove_file(t);
            }
            let _ = std::fs::remove_file(&tmp);
            return Err(io(e));
        }
        staged.push(tmp);
    }
    for ((name, _), tmp) in files.iter().zip(&staged) {
        std::fs::rename(tmp, dir.join(name)).map_err(io)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if cli.list_recipes {
        for name in recipes::names() {
            println!("{name}");
        }
        return Ok(());
    }
    let (cfg, source) = load(cli)?;
    let threads = configure_threads()?;
    let start = Instant::now();
    log::info!(
        "running {:?} from {source} with {threads} threads",
        cfg.experiment
    );
    let output = experiments::run(&cfg)?;
    let runtime = start.elapsed().as_secs_f64();

    let mut files: Vec<(String, Vec<u8>)> = output
        .artifacts
        .into_iter()
        .map(|a| (a.name, a.bytes))
        .collect();
    let manifest = json!({
        "tool": "catlight",
        "version": env!("CARGO_PKG_VERSION"),
        "library_version": catlight::VERSION,
        "source": source,
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config": cfg,
        "derived": output.derived,
        "outputs": files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "threads": threads,
        "runtime_seconds": runtime,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Io(e.to_string()))?;
    bytes.push(b'\n');
    files.push(("manifest.json".into(), bytes));
    let dir = PathBuf::from(&cfg.out);
    write_all(&dir, &files)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&output.summary).unwrap_or_default()
    );
    eprintln!(
        "wrote {} files to {} in {runtime:.2} s",
        files.len(),
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
