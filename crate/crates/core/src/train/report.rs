use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{learned_ranking, EVAL_K};
use super::trainer::{train, EpochRecord, Model, Prepared, TrainOutcome, Wallclock};
use crate::error::{Error, Result};
use crate::fairness::{cosine_topk_all, RankedSimilarity};
use crate::models::{Checkpoint, ModelKind};

pub const REPORT_FILE: &str = "report.json";
pub const WARMUP_CKPT: &str = "warmup.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const RESULTS_CSV: &str = "results.csv";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub prepare_s: f64,
    #[serde(flatten)]
    pub phases: Wallclock,
    pub total_s: f64,
}

/// Everything a finished run reports, plus the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub dataset: String,
    pub model: ModelKind,
    pub redress: bool,
    pub seed: u64,
    /// Test AUC (%) of the final model.
    pub auc: f64,
    pub val_auc: f64,
    /// Fairness NDCG@10 (%) of the final model.
    pub fairness_ndcg10: f64,
    pub fairness_nodes: usize,
    pub fairness_skipped: usize,
    pub fairness_ill_scaled: usize,
    /// The same metrics for the best warm-up checkpoint.
    pub vanilla_auc: f64,
    pub vanilla_fairness_ndcg10: f64,
    /// Relative change from the warm-up checkpoint, in percent.
    pub auc_delta_pct: Option<f64>,
    pub fairness_delta_pct: Option<f64>,
    pub best_warmup_epoch: Option<usize>,
    pub curves: Vec<EpochRecord>,
    pub wallclock: Timing,
    pub config: TrainConfig,
}

pub fn relative_change_pct(before: f64, after: f64) -> Option<f64> {
    let d = 100.0 * (after - before) / before;
    d.is_finite().then_some(d)
}

impl MetricsReport {
    pub fn new(cfg: &TrainConfig, dataset: &str, out: &TrainOutcome, prepare_s: f64, total_s: f64) -> Self {
        Self {
            run_id: cfg.run_id(),
            dataset: dataset.to_string(),
            model: cfg.model,
            redress: cfg.redress(),
            seed: cfg.seed,
            auc: out.last.test_auc,
            val_auc: out.last.val_auc,
            fairness_ndcg10: out.last.fairness_ndcg,
            fairness_nodes: out.last.fairness_nodes,
            fairness_skipped: out.last.fairness_skipped,
            fairness_ill_scaled: out.last.fairness_ill_scaled,
            vanilla_auc: out.vanilla.test_auc,
            vanilla_fairness_ndcg10: out.vanilla.fairness_ndcg,
            auc_delta_pct: relative_change_pct(out.vanilla.test_auc, out.last.test_auc),
            fairness_delta_pct: relative_change_pct(out.vanilla.fairness_ndcg, out.last.fairness_ndcg),
            best_warmup_epoch: out.best_warmup_epoch,
            curves: out.curves.clone(),
            wallclock: Timing {
                prepare_s,
                phases: out.wallclock,
                total_s,
            },
            config: cfg.clone(),
        }
    }

    pub fn csv_row(&self) -> CsvRow {
        CsvRow {
            auc: Some(self.auc),
            fairness_ndcg10: Some(self.fairness_ndcg10),
            auc_delta_pct: self.auc_delta_pct,
            fairness_delta_pct: self.fairness_delta_pct,
            wallclock_s: self.wallclock.total_s,
            ..CsvRow::failed(&self.config, &self.dataset, self.wallclock.total_s)
        }
        .with_status("ok")
    }
}

/// One line of a results table. Metric cells are empty for failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub dataset: String,
    pub model: ModelKind,
    pub redress: bool,
    pub seed: u64,
    pub fanout1: Option<usize>,
    pub fanout2: Option<usize>,
    pub auc: Option<f64>,
    pub fairness_ndcg10: Option<f64>,
    pub auc_delta_pct: Option<f64>,
    pub fairness_delta_pct: Option<f64>,
    pub warmup_epochs: usize,
    pub fairness_epochs: usize,
    pub wallclock_s: f64,
    pub status: String,
}

impl CsvRow {
    pub fn failed(cfg: &TrainConfig, dataset: &str, wallclock_s: f64) -> Self {
        Self {
            run_id: cfg.run_id(),
            dataset: dataset.to_string(),
            model: cfg.model,
            redress: cfg.redress(),
            seed: cfg.seed,
            fanout1: cfg.fanout.map(|f| f.layer1),
            fanout2: cfg.fanout.map(|f| f.layer2),
            auc: None,
            fairness_ndcg10: None,
            auc_delta_pct: None,
            fairness_delta_pct: None,
            warmup_epochs: cfg.warmup_epochs,
            fairness_epochs: cfg.fairness_epochs,
            wallclock_s,
            status: "failed".into(),
        }
    }

    fn with_status(mut self, s: &str) -> Self {
        self.status = s.into();
        self
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Files written by [`run_and_save`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MetricsReport,
    pub dir: PathBuf,
}

/// Trains one config on an already prepared dataset and writes
/// `report.json`, `warmup.ckpt` and `final.ckpt` under
/// `<output_dir>/<run_id>/`, then appends a row to `results_csv`.
/// A run that fails after validation still leaves a `failed` row.
pub fn run_prepared(cfg: &TrainConfig, prep: &Prepared, prepare_s: f64, results_csv: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let start = Instant::now();
    let attempt = || -> Result<RunArtifacts> {
        let out = train(cfg, prep)?;
        let total = prepare_s + start.elapsed().as_secs_f64();
        let report = MetricsReport::new(cfg, &prep.name, &out, prepare_s, total);
        let dir = cfg.output_dir.join(&report.run_id);
        create_dir(&dir)?;
        write_json(&dir.join(REPORT_FILE), &report)?;
        out.warmup_model.checkpoint(cfg).save(&dir.join(WARMUP_CKPT))?;
        out.final_model.checkpoint(cfg).save(&dir.join(FINAL_CKPT))?;
        append_csv(results_csv, &[report.csv_row()])?;
        Ok(RunArtifacts { report, dir })
    };
    attempt().inspect_err(|e| {
        log::error!("run {} failed: {e}", cfg.run_id());
        let row = CsvRow::failed(cfg, &prep.name, prepare_s + start.elapsed().as_secs_f64());
        if let Err(e2) = append_csv(results_csv, &[row]) {
            log::error!("could not record the failure: {e2}");
        }
    })
}

/// Loads and prepares the dataset, then behaves like [`run_prepared`],
/// appending to `<output_dir>/results.csv`.
pub fn run_and_save(cfg: &TrainConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let csv_path = cfg.output_dir.join(RESULTS_CSV);
    let t = Instant::now();
    let prep = Prepared::load(cfg).inspect_err(|_| {
        let name = cfg
            .dataset
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let _ = append_csv(&csv_path, &[CsvRow::failed(cfg, &name, t.elapsed().as_secs_f64())]);
    })?;
    run_prepared(cfg, &prep, t.elapsed().as_secs_f64(), &csv_path)
}

/// A grid of runs: every override merged over `base`, for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub overrides: Vec<serde_json::Map<String, serde_json::Value>>,
    /// Empty means the base seed only.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Defaults to `results.csv` in the base output directory.
    #[serde(default)]
    pub output_csv: Option<PathBuf>,
}

/// A validated point of the grid; `group` is the override index.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub group: usize,
    pub config: TrainConfig,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Expands the grid and validates every config before anything runs.
    /// Relative paths are resolved against `base_dir`.
    pub fn expand(&self, base_dir: &Path) -> Result<Vec<SweepRun>> {
        let empty = [serde_json::Map::new()];
        let overrides: &[_] = if self.overrides.is_empty() {
            &empty
        } else {
            &self.overrides
        };
        let mut runs = Vec::new();
        for (group, ov) in overrides.iter().enumerate() {
            let mut merged = self.base.clone();
            merged.extend(ov.clone());
            let cfg: TrainConfig = serde_json::from_value(merged.into())
                .map_err(|e| Error::Config(format!("sweep entry {group}: {e}")))?;
            let seeds = if self.seeds.is_empty() {
                vec![cfg.seed]
            } else {
                self.seeds.clone()
            };
            for seed in seeds {
                let mut c = cfg.clone();
                c.seed = seed;
                c.rebase(base_dir);
                c.validate()
                    .map_err(|e| Error::Config(format!("sweep entry {group}: {e}")))?;
                runs.push(SweepRun { group, config: c });
            }
        }
        Ok(runs)
    }

    pub fn results_csv(&self, base_dir: &Path, runs: &[SweepRun]) -> PathBuf {
        match &self.output_csv {
            Some(p) => base_dir.join(p),
            None => runs
                .first()
                .map(|r| r.config.output_dir.clone())
                .unwrap_or_else(|| base_dir.to_path_buf())
                .join(RESULTS_CSV),
        }
    }
}

/// Mean and sample standard deviation of one sweep group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: usize,
    pub dataset: String,
    pub model: ModelKind,
    pub redress: bool,
    pub fanout1: Option<usize>,
    pub fanout2: Option<usize>,
    pub runs: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub fairness_ndcg10_mean: f64,
    pub fairness_ndcg10_std: f64,
    pub auc_delta_pct_mean: Option<f64>,
    pub fairness_delta_pct_mean: Option<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(runs: &[(usize, MetricsReport)]) -> Vec<SummaryRow> {
    let mut groups: Vec<usize> = runs.iter().map(|r| r.0).collect();
    groups.dedup();
    groups
        .into_iter()
        .map(|g| {
            let members: Vec<&MetricsReport> = runs.iter().filter(|r| r.0 == g).map(|r| &r.1).collect();
            let col = |f: fn(&MetricsReport) -> f64| mean_std(&members.iter().map(|r| f(r)).collect::<Vec<_>>());
            let opt_mean = |f: fn(&MetricsReport) -> Option<f64>| {
                members
                    .iter()
                    .map(|r| f(r))
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| mean_std(&v).0)
            };
            let first = members[0];
            let (auc_mean, auc_std) = col(|r| r.auc);
            let (fairness_ndcg10_mean, fairness_ndcg10_std) = col(|r| r.fairness_ndcg10);
            SummaryRow {
                group: g,
                dataset: first.dataset.clone(),
                model: first.model,
                redress: first.redress,
                fanout1: first.config.fanout.map(|f| f.layer1),
                fanout2: first.config.fanout.map(|f| f.layer2),
                runs: members.len(),
                auc_mean,
                auc_std,
                fairness_ndcg10_mean,
                fairness_ndcg10_std,
                auc_delta_pct_mean: opt_mean(|r| r.auc_delta_pct),
                fairness_delta_pct_mean: opt_mean(|r| r.fairness_delta_pct),
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<(String, Error)>,
    pub results_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Runs the grid sequentially. A failing run is recorded and skipped; the
/// caller decides what the failures mean. Datasets are prepared once per
/// distinct preprocessing setting.
pub fn run_sweep(spec: &SweepSpec, base_dir: &Path) -> Result<SweepOutcome> {
    let runs = spec.expand(base_dir)?;
    let results_csv = spec.results_csv(base_dir, &runs);
    let summary_csv = results_csv.with_file_name(format!(
        "{}_summary.csv",
        results_csv
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    ));
    let mut cache: Option<(PrepKey, Prepared, f64)> = None;
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for run in &runs {
        let cfg = &run.config;
        let key = PrepKey::of(cfg);
        if cache.as_ref().map(|c| &c.0) != Some(&key) {
            let t = Instant::now();
            match Prepared::load(cfg) {
                Ok(p) => cache = Some((key, p, t.elapsed().as_secs_f64())),
                Err(e) => {
                    log::error!("preparing {} failed: {e}", cfg.dataset.display());
                    let name = cfg
                        .dataset
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    append_csv(&results_csv, &[CsvRow::failed(cfg, &name, 0.0)])?;
                    failures.push((cfg.run_id(), e));
                    cache = None;
                    continue;
                }
            }
        }
        let (_, prep, prepare_s) = cache.as_ref().expect("prepared above");
        match run_prepared(cfg, prep, *prepare_s, &results_csv) {
            Ok(a) => done.push((run.group, a.report)),
            Err(e) => failures.push((cfg.run_id(), e)),
        }
    }
    let summary = summarize(&done);
    if !summary.is_empty() {
        let _ = fs::remove_file(&summary_csv);
        append_csv(&summary_csv, &summary)?;
    }
    Ok(SweepOutcome {
        reports: done.into_iter().map(|d| d.1).collect(),
        failures,
        results_csv,
        summary_csv,
    })
}

/// Settings that determine a [`Prepared`] dataset.
#[derive(Debug, Clone, PartialEq)]
struct PrepKey {
    dataset: PathBuf,
    seed: u64,
    pca: usize,
    columns: Option<Vec<usize>>,
    depth: usize,
}

impl PrepKey {
    fn of(cfg: &TrainConfig) -> Self {
        Self {
            dataset: cfg.dataset.clone(),
            seed: cfg.seed,
            pca: cfg.pca_components,
            columns: cfg.similarity_columns.clone(),
            depth: cfg.k.max(EVAL_K),
        }
    }
}

/// Which similarity space an audit dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditSpace {
    Learned,
    Apriori,
}

/// Top-k lists of every node under the checkpoint's embeddings or under
/// the apriori features. The dataset is located through the config stored
/// in the checkpoint.
pub fn audit(ck: &Checkpoint, space: AuditSpace, k: usize) -> Result<RankedSimilarity> {
    let cfg = TrainConfig::from_json(&ck.config_json)?;
    let prep = Prepared::load(&cfg)?;
    match space {
        AuditSpace::Apriori => cosine_topk_all(&prep.apriori, k),
        AuditSpace::Learned => learned_ranking(&Model::from_checkpoint(ck)?.embed_full(&prep)?, k),
    }
}
