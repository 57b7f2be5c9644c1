use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fairness::FairnessConfig;
use crate::models::{ModelKind, HIDDEN};
use crate::sampler::Fanout;

fn default_lr() -> f64 {
    1e-3
}
fn default_warmup() -> usize {
    30
}
fn default_fairness_epochs() -> usize {
    60
}
fn one() -> f64 {
    1.0
}
fn default_k() -> usize {
    10
}
fn default_batch() -> usize {
    32
}
fn default_neg_ratio() -> usize {
    1
}
fn default_pca() -> usize {
    200
}
fn default_hidden() -> usize {
    HIDDEN
}
fn yes() -> bool {
    true
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

/// One training run. Deserialized from a flat JSON object; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Directory holding `edges.tsv`, `features.csv` and `meta.json`.
    pub dataset: PathBuf,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_fairness_epochs")]
    pub fairness_epochs: usize,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Required for GraphSAGE, rejected for GCN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fanout: Option<Fanout>,
    #[serde(default = "default_neg_ratio")]
    pub neg_ratio: usize,
    /// Features wider than this are reduced by PCA; 0 disables reduction.
    #[serde(default = "default_pca")]
    pub pca_components: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "yes")]
    pub bias: bool,
    /// Restricts apriori similarity to these feature columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_columns: Option<Vec<usize>>,
    /// Record full-graph fairness NDCG after every epoch.
    #[serde(default = "yes")]
    pub track_fairness: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl TrainConfig {
    /// Defaults for everything except the model and dataset.
    pub fn new(model: ModelKind, dataset: impl Into<PathBuf>) -> Self {
        let mut v = serde_json::json!({ "model": model, "dataset": dataset.into() });
        if model == ModelKind::Sage {
            v["fanout"] = serde_json::json!([25, 15]);
        }
        serde_json::from_value(v).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. Relative `dataset` and
    /// `output_dir` paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        if self.dataset.is_relative() {
            self.dataset = base.join(&self.dataset);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 || self.neg_ratio == 0 || self.hidden == 0 {
            return bad("batch_size, neg_ratio and hidden must be at least 1".into());
        }
        match (self.model, self.fanout) {
            (ModelKind::Sage, None) => return bad("graphsage requires a fanout".into()),
            (ModelKind::Gcn, Some(_)) => return bad("fanout only applies to graphsage".into()),
            _ => {}
        }
        self.fairness().validate()
    }

    pub fn fairness(&self) -> FairnessConfig {
        FairnessConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            k: self.k,
        }
    }

    /// Whether the fairness phase actually changes the objective.
    pub fn redress(&self) -> bool {
        self.fairness_epochs > 0 && self.gamma > 0.0
    }

    /// First 16 hex digits of the SHA-256 of the serialized config. The
    /// output directory does not take part.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let canonical = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = TrainConfig::from_json(r#"{"model": "graphsage", "dataset": "d", "fanout": [5, 5]}"#).unwrap();
        assert_eq!((c.lr, c.warmup_epochs, c.fairness_epochs), (1e-3, 30, 60));
        assert_eq!((c.gamma, c.alpha, c.k, c.batch_size), (1.0, 1.0, 10, 32));
        assert_eq!((c.pca_components, c.hidden, c.dropout), (200, 256, 0.0));
        assert_eq!(c.fanout, Some(Fanout::new(5, 5).unwrap()));
        assert_eq!(
            TrainConfig::new(ModelKind::Sage, "d").fanout,
            Some(Fanout::new(25, 15).unwrap())
        );
    }

    #[test]
    fn unknown_and_inconsistent_keys_are_rejected() {
        for bad in [
            r#"{"model": "gcn", "dataset": "d", "learning_rate": 0.1}"#,
            r#"{"model": "graphsage", "dataset": "d"}"#,
            r#"{"model": "gcn", "dataset": "d", "fanout": [5, 5]}"#,
            r#"{"model": "gcn", "dataset": "d", "lr": 0}"#,
            r#"{"model": "graphsage", "dataset": "d", "fanout": [0, 5]}"#,
            r#"{"model": "gcn", "dataset": "d", "alpha": -1}"#,
            r#"{"model": "gcn", "dataset": "d", "dropout": 1.0}"#,
            r#"{"model": "mlp", "dataset": "d"}"#,
            r#"{"model": "gcn""#,
        ] {
            assert!(matches!(TrainConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn run_id_tracks_content() {
        let a = TrainConfig::new(ModelKind::Gcn, "d");
        let mut b = a.clone();
        assert_eq!(a.run_id(), b.run_id());
        assert_eq!(a.run_id().len(), 16);
        b.output_dir = "elsewhere".into();
        assert_eq!(a.run_id(), b.run_id());
        b.seed = 1;
        assert_ne!(a.run_id(), b.run_id());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"model": "gcn", "dataset": "data/blog"}"#).unwrap();
        let c = TrainConfig::load(&p).unwrap();
        assert_eq!(c.dataset, dir.path().join("data/blog"));
        assert_eq!(c.output_dir, dir.path().join("runs"));
    }

    #[test]
    fn echo_round_trips() {
        let c = TrainConfig::new(ModelKind::Sage, "x");
        let back = TrainConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
