use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::eval::{evaluate_auc, evaluate_fairness, SplitPart, EVAL_K};
use super::optim::AdamW;
use crate::error::{Error, Result};
use crate::fairness::{cosine_topk_all, fairness_loss_and_grad, CosineSpace, FairnessMetric, RankedSimilarity};
use crate::graph::{
    gcn_norm, load_dataset, pca_reduce, split_edges, Dataset, Edge, EdgeSplit, GcnNormCoeffs, Graph, SplitRatios,
};
use crate::models::{
    link_logits, link_logits_backward, utility_loss_logits, Checkpoint, Embeddings, GcnEncoder, ModelKind, SageEncoder,
    TwoLayerParams,
};
use crate::numeric::DenseMatrix;
use crate::rng::{stream, Purpose};
use crate::sampler::{attach_negatives, edge_minibatches, LayeredSubgraph, MiniBatch};

/// Everything derived from the dataset and the split seed that stays fixed
/// during training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub graph: Graph,
    pub features: DenseMatrix,
    pub split: EdgeSplit,
    /// Message-passing graph: training edges only.
    pub train_graph: Graph,
    pub norm: GcnNormCoeffs,
    pub full_blocks: LayeredSubgraph,
    pub apriori: CosineSpace,
    /// Apriori top-k lists for every node, deep enough for both the loss
    /// and the reported metric.
    pub s_g: RankedSimilarity,
}

impl Prepared {
    pub fn new(ds: Dataset, cfg: &TrainConfig) -> Result<Self> {
        let Dataset { graph, features, meta } = ds;
        let features = if cfg.pca_components > 0 && features.cols() > cfg.pca_components {
            log::info!(
                "reducing {} features to {} principal components",
                features.cols(),
                cfg.pca_components
            );
            pca_reduce(&features, cfg.pca_components)?
        } else {
            features
        };
        let split = split_edges(&graph, SplitRatios::default(), cfg.seed)?;
        let train_graph = split.train_graph(graph.node_count())?;
        let norm = gcn_norm(&train_graph);
        let full_blocks = LayeredSubgraph::full_graph(&train_graph);
        let apriori = match &cfg.similarity_columns {
            Some(cols) => CosineSpace::from_columns(&features, cols)?,
            None => CosineSpace::from_matrix(&features),
        };
        let s_g = cosine_topk_all(&apriori, cfg.k.max(EVAL_K))?;
        Ok(Self {
            name: meta.name,
            graph,
            features,
            split,
            train_graph,
            norm,
            full_blocks,
            apriori,
            s_g,
        })
    }

    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        Self::new(load_dataset(&cfg.dataset)?, cfg)
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    Gcn(GcnEncoder),
    Sage(SageEncoder),
}

impl Model {
    pub fn new(kind: ModelKind, params: TwoLayerParams) -> Result<Self> {
        Ok(match kind {
            ModelKind::Gcn => Model::Gcn(GcnEncoder::new(params)?),
            ModelKind::Sage => Model::Sage(SageEncoder::new(params)?),
        })
    }

    /// Seeded initialization from the config.
    pub fn init(cfg: &TrainConfig, input_dim: usize) -> Result<Self> {
        Self::new(
            cfg.model,
            TwoLayerParams::glorot(input_dim, cfg.hidden, cfg.bias, cfg.seed),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::new(ck.kind, ck.params.clone())
    }

    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            kind: self.kind(),
            seed: cfg.seed,
            params: self.params().clone(),
            config_json: serde_json::to_string(cfg).expect("config serializes"),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Gcn(_) => ModelKind::Gcn,
            Model::Sage(_) => ModelKind::Sage,
        }
    }

    pub fn params(&self) -> &TwoLayerParams {
        match self {
            Model::Gcn(e) => &e.params,
            Model::Sage(e) => &e.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut TwoLayerParams {
        match self {
            Model::Gcn(e) => &mut e.params,
            Model::Sage(e) => &mut e.params,
        }
    }

    /// Embeddings of every node from full neighborhoods of the training
    /// graph.
    pub fn embed_full(&self, prep: &Prepared) -> Result<Embeddings> {
        match self {
            Model::Gcn(e) => e.forward(&prep.train_graph, &prep.features, &prep.norm),
            Model::Sage(e) => e.forward(&prep.full_blocks, &prep.features),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    /// Mean over the epoch's steps.
    pub utility: f64,
    /// Summed over the epoch's steps; 0 when fairness is off.
    pub fairness: f64,
}

pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    prep: &'a Prepared,
    pub model: Model,
    opt: AdamW,
}

fn labeled_pairs(pos: &[Edge], neg: &[Edge]) -> (Vec<Edge>, Vec<bool>) {
    let pairs = pos.iter().chain(neg).copied().collect();
    let labels = std::iter::repeat_n(true, pos.len())
        .chain(std::iter::repeat_n(false, neg.len()))
        .collect();
    (pairs, labels)
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, prep: &'a Prepared) -> Result<Self> {
        let model = Model::init(cfg, prep.features.cols())?;
        Ok(Self::with_model(cfg, prep, model))
    }

    pub fn with_model(cfg: &'a TrainConfig, prep: &'a Prepared, model: Model) -> Self {
        Self {
            cfg,
            prep,
            model,
            opt: AdamW::new(cfg.lr, cfg.weight_decay),
        }
    }

    pub fn reset_optimizer(&mut self) {
        self.opt = AdamW::new(self.cfg.lr, self.cfg.weight_decay);
    }

    fn step(&mut self) -> Result<()> {
        let params = self.model.params_mut();
        let names = params.names();
        let mut tensors = params.tensors_mut();
        self.opt.step(&mut tensors, &names)?;
        params.zero_grad();
        Ok(())
    }

    /// One pass over the training edges. `gamma = 0` never touches the
    /// fairness machinery.
    pub fn epoch(&mut self, epoch: usize, gamma: f64) -> Result<EpochLosses> {
        match self.model {
            Model::Gcn(_) => self.gcn_epoch(epoch as u64, gamma),
            Model::Sage(_) => self.sage_epoch(epoch as u64, gamma),
        }
    }

    fn gcn_epoch(&mut self, epoch: u64, gamma: f64) -> Result<EpochLosses> {
        let (cfg, prep) = (self.cfg, self.prep);
        let mut neg_rng = stream(cfg.seed, epoch, 0, Purpose::Negatives);
        let neg = attach_negatives(&prep.split.train_pos, &prep.train_graph, cfg.neg_ratio, &mut neg_rng)?;
        let (pairs, labels) = labeled_pairs(&prep.split.train_pos, &neg);
        let Model::Gcn(enc) = &mut self.model else {
            unreachable!()
        };
        let mut drop_rng = stream(cfg.seed, epoch, 0, Purpose::Dropout);
        let emb = enc.forward_train(
            &prep.train_graph,
            &prep.features,
            &prep.norm,
            cfg.dropout,
            &mut drop_rng,
        )?;
        let (utility, dlog) = utility_loss_logits(&link_logits(&emb, &pairs)?, &labels)?;
        let mut upstream = link_logits_backward(&emb, &pairs, &dlog)?;
        let mut fairness = 0.0;
        if gamma > 0.0 {
            let anchors: Vec<usize> = (0..prep.train_graph.node_count()).collect();
            let term = fairness_loss_and_grad(&anchors, &prep.apriori, &prep.s_g, &emb, &cfg.fairness())?;
            upstream.add_scaled(&term.grad, gamma)?;
            fairness = term.loss;
        }
        enc.backward(&prep.train_graph, &prep.norm, &upstream)?;
        self.step()?;
        Ok(EpochLosses { utility, fairness })
    }

    fn sage_epoch(&mut self, epoch: u64, gamma: f64) -> Result<EpochLosses> {
        let (cfg, prep) = (self.cfg, self.prep);
        let fanout = cfg
            .fanout
            .ok_or_else(|| Error::Config("graphsage requires a fanout".into()))?;
        let shuffle_seed = stream(cfg.seed, epoch, 0, Purpose::Shuffle).next_u64();
        let batches = edge_minibatches(&prep.split.train_pos, cfg.batch_size, shuffle_seed)?;
        let n_batches = batches.len().max(1) as f64;
        let fair = cfg.fairness();
        let (mut utility, mut fairness) = (0.0, 0.0);
        for (b, positives) in batches.into_iter().enumerate() {
            let candidates = |endpoints: &[usize]| -> Vec<usize> {
                if gamma <= 0.0 {
                    return Vec::new();
                }
                endpoints
                    .iter()
                    .flat_map(|&u| prep.s_g.get(u).unwrap_or(&[]).iter().take(fair.k).map(|p| p.0))
                    .collect()
            };
            let mb = MiniBatch::prepare(
                b,
                positives,
                &prep.train_graph,
                cfg.neg_ratio,
                fanout,
                cfg.seed,
                epoch,
                candidates,
            )?;
            let (pairs, labels) = labeled_pairs(&mb.positives, &mb.negatives);
            let Model::Sage(enc) = &mut self.model else {
                unreachable!()
            };
            let mut drop_rng = stream(cfg.seed, epoch, b as u64, Purpose::Dropout);
            let emb = enc.forward_train(&mb.blocks, &prep.features, cfg.dropout, &mut drop_rng)?;
            let (lu, dlog) = utility_loss_logits(&link_logits(&emb, &pairs)?, &labels)?;
            let mut upstream = link_logits_backward(&emb, &pairs, &dlog)?;
            if gamma > 0.0 {
                let term = fairness_loss_and_grad(&mb.endpoints, &prep.apriori, &prep.s_g, &emb, &fair)?;
                upstream.add_scaled(&term.grad, gamma)?;
                fairness += term.loss;
            }
            enc.backward(&upstream)?;
            self.step()?;
            utility += lu;
        }
        Ok(EpochLosses {
            utility: utility / n_batches,
            fairness,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Redress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub utility_loss: f64,
    pub fairness_loss: f64,
    pub val_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fairness_ndcg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub val_auc: f64,
    pub test_auc: f64,
    pub fairness_ndcg: f64,
    pub fairness_nodes: usize,
    pub fairness_skipped: usize,
    pub fairness_ill_scaled: usize,
}

/// Validation and test AUC plus the fairness metric, all from full-graph
/// embeddings.
pub fn evaluate(model: &Model, prep: &Prepared) -> Result<Evaluation> {
    let emb = model.embed_full(prep)?;
    let FairnessMetric {
        ndcg_pct,
        evaluated,
        skipped,
        ill_scaled,
    } = evaluate_fairness(&emb, &prep.apriori, &prep.s_g)?;
    Ok(Evaluation {
        val_auc: evaluate_auc(&emb, &prep.split, SplitPart::Val)?,
        test_auc: evaluate_auc(&emb, &prep.split, SplitPart::Test)?,
        fairness_ndcg: ndcg_pct,
        fairness_nodes: evaluated,
        fairness_skipped: skipped,
        fairness_ill_scaled: ill_scaled,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Wallclock {
    pub warmup_s: f64,
    pub redress_s: f64,
    pub eval_s: f64,
}

/// Result of the warm-up then fairness schedule.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best warm-up checkpoint by validation AUC; the fairness phase
    /// starts here.
    pub warmup_model: Model,
    pub best_warmup_epoch: Option<usize>,
    pub final_model: Model,
    pub curves: Vec<EpochRecord>,
    pub vanilla: Evaluation,
    pub last: Evaluation,
    pub wallclock: Wallclock,
}

fn record(
    model: &Model,
    prep: &Prepared,
    cfg: &TrainConfig,
    epoch: usize,
    phase: Phase,
    l: EpochLosses,
) -> Result<EpochRecord> {
    let emb = model.embed_full(prep)?;
    let val_auc = evaluate_auc(&emb, &prep.split, SplitPart::Val)?;
    let fairness_ndcg = if cfg.track_fairness {
        Some(evaluate_fairness(&emb, &prep.apriori, &prep.s_g)?.ndcg_pct)
    } else {
        None
    };
    for v in [l.utility, l.fairness, val_auc] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training statistic at epoch {epoch}"
            )));
        }
    }
    Ok(EpochRecord {
        epoch,
        phase,
        utility_loss: l.utility,
        fairness_loss: l.fairness,
        val_auc,
        fairness_ndcg,
    })
}

/// Utility-only warm-up, selection of the best warm-up epoch by
/// validation AUC, then `fairness_epochs` of the joint objective from that
/// checkpoint with fresh optimizer state.
pub fn train(cfg: &TrainConfig, prep: &Prepared) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut curves = Vec::with_capacity(cfg.warmup_epochs + cfg.fairness_epochs);
    let mut trainer = Trainer::new(cfg, prep)?;

    let t = Instant::now();
    let mut best_model = trainer.model.clone();
    let mut best_epoch = None;
    let mut best_auc = f64::NEG_INFINITY;
    for e in 0..cfg.warmup_epochs {
        let l = trainer.epoch(e, 0.0)?;
        let r = record(&trainer.model, prep, cfg, e, Phase::Warmup, l)?;
        log::info!("epoch {e} warmup: loss {:.5} val auc {:.2}", r.utility_loss, r.val_auc);
        if r.val_auc > best_auc {
            best_auc = r.val_auc;
            best_epoch = Some(e);
            best_model = trainer.model.clone();
        }
        curves.push(r);
    }
    let warmup_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let vanilla = evaluate(&best_model, prep)?;
    let mut eval_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    trainer.model = best_model.clone();
    trainer.reset_optimizer();
    for i in 0..cfg.fairness_epochs {
        let e = cfg.warmup_epochs + i;
        let l = trainer.epoch(e, cfg.gamma)?;
        let r = record(&trainer.model, prep, cfg, e, Phase::Redress, l)?;
        log::info!(
            "epoch {e} redress: loss {:.5} fairness loss {:.5} val auc {:.2}",
            r.utility_loss,
            r.fairness_loss,
            r.val_auc
        );
        curves.push(r);
    }
    let redress_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let last = evaluate(&trainer.model, prep)?;
    eval_s += t.elapsed().as_secs_f64();

    Ok(TrainOutcome {
        warmup_model: best_model,
        best_warmup_epoch: best_epoch,
        final_model: trainer.model,
        curves,
        vanilla,
        last,
        wallclock: Wallclock {
            warmup_s,
            redress_s,
            eval_s,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic::PlantedPartition;
    use crate::sampler::Fanout;

    fn toy_config(model: ModelKind) -> TrainConfig {
        let mut c = TrainConfig::new(model, "unused");
        c.hidden = 16;
        c.pca_components = 0;
        c.warmup_epochs = 4;
        c.fairness_epochs = 3;
        c.lr = 0.01;
        c.batch_size = 64;
        if model == ModelKind::Sage {
            c.fanout = Some(Fanout::new(5, 5).unwrap());
        }
        c
    }

    fn toy_prep(cfg: &TrainConfig) -> Prepared {
        Prepared::new(PlantedPartition::default().generate().unwrap(), cfg).unwrap()
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        for model in [ModelKind::Gcn, ModelKind::Sage] {
            let cfg = toy_config(model);
            let prep = toy_prep(&cfg);
            let a = train(&cfg, &prep).unwrap();
            let b = train(&cfg, &prep).unwrap();
            assert_eq!(a.final_model.params(), b.final_model.params(), "{model}");
            assert_eq!(a.curves, b.curves);
            assert_eq!(a.last, b.last);
            assert_eq!(a.curves.len(), cfg.warmup_epochs + cfg.fairness_epochs);
        }
    }

    #[test]
    fn zero_epochs_keep_the_initialization() {
        let mut cfg = toy_config(ModelKind::Gcn);
        cfg.warmup_epochs = 0;
        cfg.fairness_epochs = 0;
        let prep = toy_prep(&cfg);
        let out = train(&cfg, &prep).unwrap();
        let init = TwoLayerParams::glorot(prep.features.cols(), cfg.hidden, cfg.bias, cfg.seed);
        assert_eq!(out.final_model.params(), &init);
        assert!(out.curves.is_empty());
        assert_eq!(out.best_warmup_epoch, None);
        assert_eq!(out.vanilla, out.last);
    }

    #[test]
    fn warmup_learns_the_links() {
        for model in [ModelKind::Gcn, ModelKind::Sage] {
            let mut cfg = toy_config(model);
            cfg.warmup_epochs = 40;
            cfg.fairness_epochs = 0;
            cfg.track_fairness = false;
            let prep = toy_prep(&cfg);
            let out = train(&cfg, &prep).unwrap();
            let first = out.curves[0].utility_loss;
            let last = out.curves.last().unwrap().utility_loss;
            assert!(last < first, "{model}: {first} -> {last}");
            assert!(out.last.val_auc > 70.0, "{model}: {}", out.last.val_auc);
        }
    }

    #[test]
    fn zero_gamma_ignores_fairness_settings() {
        let mut cfg = toy_config(ModelKind::Sage);
        cfg.gamma = 0.0;
        let prep = toy_prep(&cfg);
        let a = train(&cfg, &prep).unwrap();
        cfg.alpha = 7.0;
        cfg.k = 3;
        let b = train(&cfg, &prep).unwrap();
        assert_eq!(a.final_model.params(), b.final_model.params());
        assert!(a.curves.iter().all(|r| r.fairness_loss == 0.0));
    }

    #[test]
    fn fairness_phase_raises_ndcg() {
        for model in [ModelKind::Gcn, ModelKind::Sage] {
            let mut cfg = toy_config(model);
            cfg.warmup_epochs = 20;
            cfg.fairness_epochs = 20;
            cfg.track_fairness = false;
            let prep = toy_prep(&cfg);
            let out = train(&cfg, &prep).unwrap();
            assert!(
                out.last.fairness_ndcg > out.vanilla.fairness_ndcg,
                "{model}: {} -> {}",
                out.vanilla.fairness_ndcg,
                out.last.fairness_ndcg
            );
        }
    }

    #[test]
    fn fairness_phase_starts_from_the_best_warmup_epoch() {
        let cfg = toy_config(ModelKind::Gcn);
        let prep = toy_prep(&cfg);
        let out = train(&cfg, &prep).unwrap();
        let best = out.best_warmup_epoch.unwrap();
        let best_auc = out.curves[..cfg.warmup_epochs]
            .iter()
            .map(|r| r.val_auc)
            .fold(f64::MIN, f64::max);
        assert_eq!(out.curves[best].val_auc, best_auc);
        assert_eq!(out.vanilla.val_auc, best_auc);
        assert!(out.curves[cfg.warmup_epochs..]
            .iter()
            .all(|r| r.phase == Phase::Redress));
    }

    #[test]
    fn sage_full_embedding_covers_every_node() {
        let cfg = toy_config(ModelKind::Sage);
        let prep = toy_prep(&cfg);
        let m = Model::init(&cfg, prep.features.cols()).unwrap();
        let emb = m.embed_full(&prep).unwrap();
        assert_eq!(emb.len(), prep.graph.node_count());
        assert!((0..emb.len()).all(|u| emb.get(u).is_some()));
    }
}
