use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use graphcover_core::checkpoint::{load_model, MANIFEST};
use graphcover_core::config::{Config, TitleBackendKind, TitleConfig};
use graphcover_core::data::synthetic::write_synthetic_corpus;
use graphcover_core::data::TrainingSet;
use graphcover_core::generate::{CheckedRequest, CoverPipeline, ImageFormat, MAX_VARIATIONS};
use graphcover_core::graph::parse_graph;
use graphcover_core::title::TitleBackend;
use graphcover_core::train::Trainer;
use graphcover_core::{Error, Result};

#[derive(Parser)]
#[command(name = "graphcover", version, about = "Book covers from layout graphs")]
struct Cli {
    /// TOML configuration; its `profile` key picks the base profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile: paper, smoke500 or overfit10. Ignored with --config.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Checkpoint directory to write (train) or read (generate, serve).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    title_backend: Option<Backend>,
    /// Training seed, or the request seed for generate.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Fallback,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training loop, writing checkpoints and `losses.csv`.
    Train {
        /// Continue from the checkpoint directory.
        #[arg(long)]
        resume: bool,
        /// Override the configured iteration count.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Render a graph document to PNG files.
    Generate {
        /// Layout-graph JSON document.
        #[arg(long)]
        graph: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        variations: usize,
        /// Replaces the title text of the graph.
        #[arg(long)]
        title: Option<String>,
        /// Per-object noise seed, `id=seed`. Repeatable.
        #[arg(long = "noise-seed", value_parser = parse_noise_seed)]
        noise_seeds: Vec<(String, u64)>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write the procedural corpus used by the desk profiles.
    SynthData {
        #[arg(long, default_value = "data/synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        scenes: usize,
        #[arg(long, default_value_t = 20)]
        covers: usize,
    },
}

fn parse_noise_seed(s: &str) -> std::result::Result<(String, u64), String> {
    let (id, seed) = s.split_once('=').ok_or("expected id=seed")?;
    Ok((id.to_string(), seed.parse().map_err(|e| format!("{e}"))?))
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match (&cli.config, &cli.profile) {
        (Some(path), _) => Config::load(path)?,
        (None, Some(p)) => Config::profile(p)?,
        (None, None) => Config::paper(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.checkpoint {
        cfg.checkpoint.dir = dir.clone();
    }
    Ok(cfg)
}

fn title_backend(cli: &Cli, cfg: &TitleConfig) -> Result<TitleBackend> {
    let mut cfg = cfg.clone();
    match cli.title_backend {
        Some(Backend::Fallback) => cfg.backend = TitleBackendKind::Fallback,
        Some(Backend::External) => cfg.backend = TitleBackendKind::External,
        None => {}
    }
    TitleBackend::from_config(&cfg)
}

fn checkpoint_dir(cli: &Cli) -> Result<&Path> {
    cli.checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))
}

fn train(cli: &Cli, resume: bool, iterations: Option<u64>) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(n) = iterations {
        cfg.optim.iterations = n;
    }
    let data = TrainingSet::load(&cfg)?;
    log::info!("{} training samples, {} covers", data.len(), data.covers.len());
    let dir = cfg.checkpoint.dir.clone();
    let mut trainer = if resume {
        Trainer::resume(cfg, data, &dir)?
    } else {
        Trainer::new(cfg, data)?
    };
    std::fs::create_dir_all(&dir)?;
    let log_path = dir.join("losses.csv");
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)?;
    let mut log = BufWriter::new(file);
    let total = trainer.config.optim.iterations;
    trainer.run(Some(&mut log), |step, b| {
        if step % 10 == 0 || step + 1 == total {
            log::info!("step {step}/{total} total {:.4} pixel {:.4}", b.total, b.terms[0]);
        }
    })?;
    log.flush()?;
    println!("checkpoint written to {}", dir.display());
    Ok(())
}

fn generate(
    cli: &Cli,
    graph: &Path,
    out: &Path,
    variations: usize,
    title: Option<String>,
    noise_seeds: &[(String, u64)],
) -> Result<()> {
    let dir = checkpoint_dir(cli)?;
    let text = std::fs::read_to_string(graph)?;
    let graph = parse_graph(&text)?;
    if !(1..=MAX_VARIATIONS).contains(&variations) {
        return Err(Error::InvalidRequest(format!("--variations must be in 1..={MAX_VARIATIONS}")));
    }
    if title.is_some() && graph.title().is_none() {
        return Err(Error::InvalidRequest("--title given but the graph has no title object".into()));
    }
    let (model, manifest) = load_model(dir)?;
    let backend = title_backend(cli, &manifest.config.title)?;
    let pipeline = CoverPipeline::new(model, backend);
    pipeline.validate(&graph)?;
    let ids = graph.object_index();
    let mut seeds = BTreeMap::new();
    for (id, s) in noise_seeds {
        if !ids.contains_key(id.as_str()) {
            return Err(Error::InvalidRequest(format!("--noise-seed: no object with id \"{id}\"")));
        }
        seeds.insert(id.clone(), *s);
    }
    let req = CheckedRequest {
        graph,
        seed: cli.seed.unwrap_or(0),
        noise_seeds: seeds,
        title,
        variations,
        format: ImageFormat::Png,
    };
    std::fs::create_dir_all(out)?;
    for v in 0..variations as u64 {
        let (bytes, _) = pipeline.render_variation(&req, v)?;
        let path = out.join(format!("cover_{v:02}.png"));
        std::fs::write(&path, bytes)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn serve(cli: &Cli, addr: SocketAddr) -> Result<()> {
    let dir = checkpoint_dir(cli)?.to_path_buf();
    if !dir.join(MANIFEST).exists() {
        return Err(Error::Checkpoint(format!("{}: no {MANIFEST}", dir.display())));
    }
    let title_cfg = match &cli.config {
        Some(path) => Config::load(path)?.title,
        None => graphcover_core::checkpoint::read_manifest(&dir)?.config.title,
    };
    let backend = title_backend(cli, &title_cfg)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(graphcover_core::service::serve(addr, dir, backend))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { resume, iterations } => train(cli, *resume, *iterations),
        Command::Generate {
            graph,
            out,
            variations,
            title,
            noise_seeds,
        } => generate(cli, graph, out, *variations, title.clone(), noise_seeds),
        Command::Serve { addr } => serve(cli, *addr),
        Command::SynthData { out, scenes, covers } => {
            write_synthetic_corpus(out, *scenes, *covers, cli.seed.unwrap_or(0))?;
            println!("wrote {scenes} scenes and {covers} covers to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
