use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use redress_core::graph::{load_dataset, pca_reduce, save_dataset};
use redress_core::models::Checkpoint;
use redress_core::train::{
    audit, evaluate, run_and_save, run_sweep, AuditSpace, Model, Prepared, SweepSpec, TrainConfig,
};
use redress_core::{Error, Result};

#[derive(Parser)]
#[command(name = "redress", version, about = "Fair link prediction with GCN and GraphSAGE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Learned,
    Apriori,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce a raw dataset directory with PCA and write a prepared copy.
    Prep {
        raw: PathBuf,
        out: PathBuf,
        /// Target feature width; wider inputs are projected, 0 copies as is.
        #[arg(long, default_value_t = 200)]
        pca: usize,
        /// Dataset name recorded in the output metadata.
        #[arg(long)]
        name: Option<String>,
    },
    /// Warm-up and fairness training for one config; writes report, checkpoints and a CSV row.
    Train { config: PathBuf },
    /// Validation/test AUC and fairness NDCG@10 of a checkpoint, as JSON.
    Eval { checkpoint: PathBuf, config: PathBuf },
    /// Run every config of a sweep file sequentially.
    Sweep { spec: PathBuf },
    /// Dump top-k similarity lists, one "u: v:s, ..." line per node.
    Audit {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Which::Learned)]
        which: Which,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn prep(raw: &Path, out: &Path, pca: usize, name: Option<String>) -> Result<()> {
    let mut ds = load_dataset(raw)?;
    if pca > 0 && ds.features.cols() > pca {
        ds.features = pca_reduce(&ds.features, pca)?;
    }
    ds.meta.features = ds.features.cols();
    if let Some(n) = name {
        ds.meta.name = n;
    }
    save_dataset(out, &ds)?;
    log::info!(
        "wrote {}: {} nodes, {} edges, {} features",
        out.display(),
        ds.meta.nodes,
        ds.meta.edges,
        ds.meta.features
    );
    Ok(())
}

fn train(config: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let a = run_and_save(&cfg)?;
    let r = &a.report;
    print_json(&serde_json::json!({
        "run_id": r.run_id,
        "run_dir": a.dir,
        "auc": r.auc,
        "fairness_ndcg10": r.fairness_ndcg10,
        "vanilla_auc": r.vanilla_auc,
        "vanilla_fairness_ndcg10": r.vanilla_fairness_ndcg10,
        "auc_delta_pct": r.auc_delta_pct,
        "fairness_delta_pct": r.fairness_delta_pct,
    }));
    Ok(())
}

fn eval(checkpoint: &Path, config: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let ck = Checkpoint::load(checkpoint)?;
    if ck.kind != cfg.model {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model but the config asks for {}",
            ck.kind, cfg.model
        )));
    }
    let prep = Prepared::load(&cfg)?;
    let e = evaluate(&Model::from_checkpoint(&ck)?, &prep)?;
    print_json(&serde_json::to_value(e).expect("evaluation serializes"));
    Ok(())
}

fn sweep(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec = SweepSpec::from_json(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let out = run_sweep(&spec, base)?;
    print_json(&serde_json::json!({
        "runs": out.reports.len(),
        "failed": out.failures.len(),
        "results_csv": out.results_csv,
        "summary_csv": out.summary_csv,
    }));
    match out.failures.into_iter().next() {
        Some((id, e)) => {
            log::error!("first failing run: {id}");
            Err(e)
        }
        None => Ok(()),
    }
}

fn audit_cmd(checkpoint: &Path, which: Which, k: usize, out: Option<&Path>) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("--k must be at least 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let space = match which {
        Which::Learned => AuditSpace::Learned,
        Which::Apriori => AuditSpace::Apriori,
    };
    let lists = audit(&ck, space, k)?;
    match out {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| Error::Data(format!("creating {}: {e}", p.display())))?;
            let mut w = std::io::BufWriter::new(f);
            lists.write_dump(&mut w)?;
            w.flush()
                .map_err(|e| Error::Data(format!("writing {}: {e}", p.display())))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lists.write_dump(&mut lock)?;
            lock.flush().map_err(|e| Error::Data(format!("writing stdout: {e}")))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prep { raw, out, pca, name } => prep(&raw, &out, pca, name),
        Command::Train { config } => train(&config),
        Command::Eval { checkpoint, config } => eval(&checkpoint, &config),
        Command::Sweep { spec } => sweep(&spec),
        Command::Audit {
            checkpoint,
            which,
            k,
            out,
        } => audit_cmd(&checkpoint, which, k, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
