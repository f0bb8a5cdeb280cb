use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use restorekit::bench::{self, HybridTestsetSpec, SuccessRateParams};
use restorekit::config::{Config, Profile};
use restorekit::datagen::{load_pool, write_feedback, write_prompts, write_slowagent};
use restorekit::gateway::{self, Gateway};
use restorekit::profile::Backends;
use restorekit_core::datagen::CorpusSpec;

#[derive(Parser)]
#[command(name = "restorekit", version, about = "Agent-driven image restoration: corpora, benchmarks and the HTTP service")]
struct Cli {
    /// TOML configuration; environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an instruction corpus.
    Datagen {
        #[arg(value_enum)]
        corpus: Corpus,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Directory of clean PNGs; a synthetic pool when omitted.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Stand in for missing HEVC/VVC encoders with in-process transforms.
        #[arg(long)]
        codec_proxy: bool,
    },
    /// Run an experiment and write `{out}/{name}.json` and `.md`.
    Bench {
        #[arg(value_enum)]
        experiment: Experiment,
        #[arg(long, value_parser = parse_profile)]
        backends: Option<Profile>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        codec_proxy: bool,
        /// Worker threads; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Serve the `/v1` API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        codec_proxy: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Corpus {
    Slow,
    Feedback,
    Prompts,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Testset,
    FastVsSlow,
    SuccessRate,
    SingleVsBoth,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
        .map_err(|_| format!("unknown profile `{s}` (oracle, stub, remote)"))
}

fn datagen(cfg: &Config, corpus: Corpus, scale: f64, seed: u64, out: &Path, pool: Option<&Path>, proxy: bool) -> anyhow::Result<()> {
    if let Corpus::Prompts = corpus {
        let n = write_prompts(seed, out)?;
        println!("wrote {n} prompts to {}", out.join("prompts.jsonl").display());
        return Ok(());
    }
    let spec = CorpusSpec::new(scale, seed)?;
    let (pool, info) = load_pool(pool, seed)?;
    let backends = Backends::from_config(cfg, proxy)?;
    let summary = match corpus {
        Corpus::Slow => write_slowagent(&spec, &pool, &info, &backends.degrader, out)?,
        Corpus::Feedback => write_feedback(&spec, &pool, &info, &backends.degrader, &backends.tools, out)?,
        Corpus::Prompts => unreachable!(),
    };
    println!("wrote {} {} records to {}", summary.records, summary.corpus, out.display());
    for note in &summary.reuse {
        println!("  reuse: {note}");
    }
    Ok(())
}

fn bench(mut cfg: Config, experiment: Experiment, seed: u64, out: &Path, pool: Option<&Path>, proxy: bool) -> anyhow::Result<()> {
    cfg.stub.seed = seed;
    let (pool, _) = load_pool(pool, seed)?;
    let testset = || {
        let degrader = Backends::from_config(&cfg, proxy)?.degrader;
        anyhow::Ok(bench::build_hybrid_testset(&HybridTestsetSpec::default(), &pool.default, seed, &degrader)?)
    };
    let (report, timing) = match experiment {
        Experiment::Testset => {
            let cases = testset()?;
            let path = bench::write_testset(&cases, out)?;
            println!("wrote {} cases to {}", cases.len(), path.display());
            for (row, n) in bench::row_counts(&cases) {
                println!("  {row:<24} {n}");
            }
            return Ok(());
        }
        Experiment::FastVsSlow => bench::run_fast_vs_slow(&cfg, proxy, &pool.default, seed)?,
        Experiment::SuccessRate => bench::run_success_rate(&cfg, proxy, &pool.default, seed, SuccessRateParams::default())?,
        Experiment::SingleVsBoth => bench::run_single_vs_both(&cfg, proxy, &testset()?, seed)?,
    };
    let path = bench::write_report(out, &report, Some(&timing))?;
    print!("{}", bench::markdown(&report, Some(&timing)));
    println!("report: {}", path.display());
    if !report.passed() {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        bail!("checks failed: {}", failed.join(", "));
    }
    Ok(())
}

fn serve(mut cfg: Config, bind: Option<String>, proxy: bool) -> anyhow::Result<()> {
    if let Some(b) = bind {
        cfg.server.bind = b;
    }
    let backends = Backends::from_config(&cfg, proxy)?;
    let gw = Arc::new(Gateway::open(&cfg, &backends)?);
    let handle = gateway::spawn(gw.clone(), &cfg.server.bind).with_context(|| format!("binding {}", cfg.server.bind))?;
    log::info!("serving {} ({}) on {}", gw.fingerprint(), cfg.data_dir.display(), handle.url());
    println!("listening on {}", handle.url());
    // a small runtime just to wait for ctrl-c
    tokio::runtime::Builder::new_current_thread().enable_all().build()?.block_on(tokio::signal::ctrl_c())?;
    handle.stop();
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = Config::resolve(cli.config.as_deref())?;
    match cli.command {
        Command::Datagen { corpus, scale, seed, out, pool, codec_proxy } => {
            datagen(&cfg, corpus, scale, seed, &out, pool.as_deref(), codec_proxy)
        }
        Command::Bench { experiment, backends, seed, out, pool, codec_proxy, jobs } => {
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            }
            let mut cfg = cfg;
            if let Some(p) = backends {
                cfg.backends.profile = p;
            }
            bench(cfg, experiment, seed, &out, pool.as_deref(), codec_proxy)
        }
        Command::Serve { bind, codec_proxy } => serve(cfg, bind, codec_proxy),
    }
}
