use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sgfn::harness::{
    evaluate, gradcheck, load_checkpoint, prepare, retrieve, save_checkpoint, EpochLog, GradcheckConfig, Modality,
    TrainConfig, TrainState,
};
use sgfn::scene_graph::{load_dataset, save_dataset, synth_dataset, PairRecord};
use sgfn::{Error, Result};

#[derive(Parser)]
#[command(name = "sgfn", version, about = "Scene-graph fusion network for image-text retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config and dataset, writing a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also append epoch lines to this file.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from the checkpoint at --out if it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Recall@1/5/10 and rSum over every pair of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Override the local-score weight.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Rank a gallery against one query graph.
    Retrieve {
        #[arg(long)]
        ckpt: PathBuf,
        /// A pair id from the gallery, or a dataset file whose first record is the query.
        #[arg(long)]
        query: String,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        /// Number of region-word pairs to list for the top hit.
        #[arg(long, num_args = 0..=1, default_missing_value = "10", default_value_t = 0)]
        explain: usize,
        /// Side of the query record to search with.
        #[arg(long, value_enum, default_value_t = Modality::Image)]
        modality: Modality,
    },
    /// Compare backward gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one analytic gradient entry; the check must fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Write a synthetic dataset of matched pairs.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    pairs: usize,
    /// Regions per image graph.
    #[arg(long)]
    n: usize,
    /// Words per text graph.
    #[arg(long)]
    m: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    rel: usize,
    #[arg(long, default_value_t = 2)]
    attr: usize,
    #[arg(long)]
    out: PathBuf,
}

fn run_train(config: &Path, data: &Path, out: &Path, log: Option<&Path>, resume: bool) -> Result<()> {
    let config = TrainConfig::load(config)?;
    let records = load_dataset(data)?;
    let mut state = if resume && out.exists() {
        let state = load_checkpoint(out)?;
        if state.config != config {
            return Err(Error::Config(format!("{} was written with a different config", out.display())));
        }
        info!("resuming at epoch {}", state.epoch);
        state
    } else {
        TrainState::new(config.clone())?
    };
    let split = prepare(&config, &records)?;
    info!("{} training pairs, {} held out", split.train.len(), split.val.len());

    let mut log_file = match log {
        Some(p) => Some(File::options().create(true).append(true).open(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    println!("{}", EpochLog::HEADER);
    state.run(&split, |state, entry| {
        println!("{entry}");
        if let (Some(f), Some(p)) = (log_file.as_mut(), log) {
            writeln!(f, "{entry}").map_err(|e| Error::io(p, e))?;
        }
        save_checkpoint(out, state)
    })?;
    save_checkpoint(out, &state)
}

fn run_eval(ckpt: &Path, data: &Path, delta: Option<f64>) -> Result<()> {
    let mut params = load_checkpoint(ckpt)?.params;
    if let Some(delta) = delta {
        params.align.delta = delta;
    }
    let records = load_dataset(data)?;
    let report = evaluate(&params, &records)?;
    println!("delta {}\t{report}", params.align.delta);
    Ok(())
}

fn resolve_query(query: &str, gallery: &[PairRecord]) -> Result<PairRecord> {
    if let Some(r) = gallery.iter().find(|r| r.pair_id == query) {
        return Ok(r.clone());
    }
    let path = Path::new(query);
    if path.exists() {
        return load_dataset(path)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Contract(format!("{query} holds no records")));
    }
    Err(Error::Contract(format!("{query} is neither a gallery pair id nor a file")))
}

fn run_retrieve(ckpt: &Path, query: &str, gallery: &Path, topk: usize, explain: usize, modality: Modality) -> Result<()> {
    let params = load_checkpoint(ckpt)?.params;
    let gallery = load_dataset(gallery)?;
    let record = resolve_query(query, &gallery)?;
    let graph = match modality {
        Modality::Image => &record.image,
        Modality::Text => &record.text,
    };
    let result = retrieve(&params, graph, modality, &gallery, topk, explain)?;
    println!("rank\tpair_id\tscore");
    for hit in &result.hits {
        println!("{}\t{}\t{}", hit.rank, hit.pair_id, hit.score);
    }
    if !result.explanation.is_empty() {
        println!("region\tword\taffinity");
        for rw in &result.explanation {
            println!("{}\t{}\t{}", rw.region, rw.word, rw.affinity);
        }
    }
    Ok(())
}

fn run_gradcheck(seed: u64, inject_fault: bool) -> Result<bool> {
    let cfg = GradcheckConfig {
        inject_fault,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&cfg, seed)?;
    println!("{report}");
    Ok(report.passed())
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let records = synth_dataset(a.seed, a.pairs, a.n, a.m, a.d, a.rel, a.attr)?;
    save_dataset(&a.out, &records)?;
    println!("wrote {} pairs to {}", records.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train {
            config,
            data,
            out,
            log,
            resume,
        } => run_train(&config, &data, &out, log.as_deref(), resume).map(|_| true),
        Command::Eval { ckpt, data, delta } => run_eval(&ckpt, &data, delta).map(|_| true),
        Command::Retrieve {
            ckpt,
            query,
            gallery,
            topk,
            explain,
            modality,
        } => run_retrieve(&ckpt, &query, &gallery, topk, explain, modality).map(|_| true),
        Command::Gradcheck { seed, inject_fault } => run_gradcheck(seed, inject_fault),
        Command::Synth(args) => run_synth(&args).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
