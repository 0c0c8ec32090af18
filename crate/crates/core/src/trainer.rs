//! Joint episodic optimization: one task per step, combined
//! classification + label-reconstruction objective, Adam updates under
//! global-norm clipping, early stopping on meta-validation accuracy, and
//! bitwise-resumable checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusRegistry, SplitId};
use crate::encoder::{self, EncoderError, EncoderVars};
use crate::episodes::{Episode, EpisodeError, EpisodeSampler};
use crate::htc::{self, HtcError, TaskTrace, TreeConfig, TreeVars};
use crate::lomlm::{self, LomlmError};
use crate::modulate::{self, ModulateError, ModulatorVars};
use crate::numerics::{Array, NumericsError, ParameterStore, Tape, Var};
use crate::protonet::{self, DistanceMode, ProtoError, Reduction};
use crate::rng::Rng;

pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_INIT: u64 = 0x1217;
const TAG_TRAIN: u64 = 0x7e41;
const TAG_VAL: u64 = 0x0a71;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Lomlm(#[from] LomlmError),
    #[error(transparent)]
    Htc(#[from] HtcError),
    #[error(transparent)]
    Modulate(#[from] ModulateError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),
}

/// Everything a run needs: model shape, objective weights, optimization
/// and early-stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub q: usize,
    /// Weight of the label-reconstruction loss; 0 disables it.
    pub lambda: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub max_episodes: u64,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    pub val_every: u64,
    pub val_tasks: usize,
    /// Cluster counts per tree level (bottom to top, ending in 1).
    /// `None` disables the tree and the feature modulation entirely.
    pub branching: Option<Vec<usize>>,
    pub sigma_sq: f64,
    pub distance_mode: DistanceMode,
    pub loss_reduction: Reduction,
    pub d_emb: usize,
    pub d_h: usize,
    pub tie_mlm_head: bool,
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 1,
            n: 5,
            k: 1,
            q: 5,
            lambda: 0.1,
            learning_rate: 1e-3,
            clip_norm: 40.0,
            max_episodes: 2000,
            patience: 10,
            val_every: 200,
            val_tasks: 50,
            branching: Some(vec![5, 3, 1]),
            sigma_sq: 2.0,
            distance_mode: DistanceMode::Plain,
            loss_reduction: Reduction::Sum,
            d_emb: 32,
            d_h: 32,
            tie_mlm_head: false,
            max_len: 450,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n < 2 {
            return Err(TrainError::Config("n must be at least 2".into()));
        }
        if self.k == 0 || self.q == 0 {
            return Err(TrainError::Config("k and q must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::Config("lambda must be nonnegative".into()));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(TrainError::Config("clip_norm must be positive".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.val_every == 0 || self.val_tasks == 0 {
            return Err(TrainError::Config(
                "val_every and val_tasks must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.d_emb == 0 || self.d_h == 0 || self.max_len == 0 {
            return Err(TrainError::Config("dimensions must be positive".into()));
        }
        if let Some(branching) = &self.branching {
            TreeConfig::new(branching.clone(), self.sigma_sq)
                .map_err(|e| TrainError::Config(e.to_string()))?;
        }
        if self.tie_mlm_head && self.d_emb != self.d_h {
            return Err(TrainError::Config(
                "tie_mlm_head requires d_emb == d_h".into(),
            ));
        }
        Ok(())
    }

    pub fn tree_config(&self) -> Option<TreeConfig> {
        self.branching.as_ref().map(|b| TreeConfig {
            branching: b.clone(),
            sigma_sq: self.sigma_sq,
        })
    }
}

/// Loss components and query accuracy for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub lomlm: f64,
    pub lambda: f64,
    pub query_acc: f64,
}

/// Tape-level outcome of one episode forward pass.
pub struct EpisodeEval {
    pub loss: Var,
    pub report: LossReport,
    pub trace: Option<TaskTrace>,
}

/// Fresh parameters for a registry vocabulary, every array drawn from
/// U(−0.01, 0.01) in a fixed key order.
pub fn init_params(cfg: &TrainConfig, vocab_size: usize) -> Result<ParameterStore, TrainError> {
    cfg.validate()?;
    let mut specs = encoder::param_specs(vocab_size, cfg.d_emb, cfg.d_h, cfg.tie_mlm_head)?;
    if let Some(tree_cfg) = cfg.tree_config() {
        specs.extend(htc::param_specs(&tree_cfg, cfg.d_h)?);
        specs.extend(modulate::param_specs(cfg.d_h, cfg.d_h));
    }
    let mut rng = Rng::derive(cfg.seed, &[TAG_INIT]);
    let mut store = ParameterStore::new();
    for (key, shape) in specs {
        store.insert(&key, Array::from_fn(shape, || rng.uniform(-0.01, 0.01)))?;
    }
    Ok(store)
}

fn combine_losses(
    tape: &mut Tape,
    cls: Var,
    lomlm: Option<Var>,
    lambda: f64,
) -> Result<Var, TrainError> {
    match lomlm {
        Some(l) => {
            let weighted = tape.scale(l, lambda);
            Ok(tape.add(cls, weighted)?)
        }
        None => Ok(cls),
    }
}

/// Runs the full pipeline for one episode: encode, label-masked loss and
/// task embedding, clustering tree, γ/β modulation, prototypes, query
/// classification.
pub fn forward_episode(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &TrainConfig,
    episode: &Episode,
    want_trace: bool,
) -> Result<EpisodeEval, TrainError> {
    let enc = EncoderVars::bind(tape, store, cfg.tie_mlm_head)?;
    let use_tree = cfg.branching.is_some();
    let use_lomlm = cfg.lambda > 0.0;

    // The auxiliary objective and the task embedding read support
    // documents only; queries never enter this block.
    let aug = if use_tree || use_lomlm {
        let samples = lomlm::augment_support(&episode.support, cfg.max_len)?;
        debug_assert_eq!(
            samples.len(),
            episode.support.iter().map(Vec::len).sum::<usize>()
        );
        Some(samples)
    } else {
        None
    };

    let lomlm_loss = match (&aug, use_lomlm) {
        (Some(samples), true) => Some(lomlm::lomlm_loss(tape, &enc, samples)?),
        _ => None,
    };

    // Support embeddings: augmented text when the tree is on, raw otherwise.
    let mut support_embs: Vec<Vec<Var>> = Vec::with_capacity(episode.support.len());
    match &aug {
        Some(samples) if use_tree => {
            let embs = lomlm::encode_augmented(tape, &enc, samples)?;
            let mut it = embs.into_iter();
            for class_docs in &episode.support {
                support_embs.push((0..class_docs.len()).map(|_| it.next().unwrap()).collect());
            }
        }
        _ => {
            for class_docs in &episode.support {
                let mut embs = Vec::with_capacity(class_docs.len());
                for doc in class_docs {
                    embs.push(encoder::encode(tape, &enc, &doc.tokens)?);
                }
                support_embs.push(embs);
            }
        }
    }

    let mut trace = None;
    let modulation = if use_tree {
        let flat: Vec<Var> = support_embs.iter().flatten().copied().collect();
        let g_in = lomlm::pool_task_embedding(tape, &flat)?;
        let tree_cfg = cfg.tree_config().expect("use_tree implies branching");
        let tree_vars = TreeVars::bind(tape, store, &tree_cfg)?;
        let run = htc::run_tree(tape, g_in, &tree_vars, &tree_cfg)?;
        let mod_vars = ModulatorVars::bind(tape, store)?;
        let (gamma, beta) = modulate::gamma_beta(tape, &mod_vars, run.g_t)?;
        if want_trace {
            trace = Some(TaskTrace::from_run(tape, &run, &episode.source_id, gamma, beta));
        }
        for class_embs in support_embs.iter_mut() {
            for emb in class_embs.iter_mut() {
                *emb = modulate::transform(tape, *emb, gamma, beta)?;
            }
        }
        Some((gamma, beta))
    } else {
        None
    };

    let protos = protonet::prototypes(tape, &episode.class_ids, &support_embs)?;

    let mut queries: Vec<(Var, String)> = Vec::new();
    for (class_id, class_docs) in episode.class_ids.iter().zip(&episode.query) {
        for doc in class_docs {
            let mut emb = encoder::encode(tape, &enc, &doc.tokens)?;
            if let Some((gamma, beta)) = modulation {
                emb = modulate::transform(tape, emb, gamma, beta)?;
            }
            queries.push((emb, class_id.clone()));
        }
    }

    let cls = protonet::cls_loss(
        tape,
        &protos,
        &queries,
        cfg.distance_mode,
        cfg.loss_reduction,
    )?;

    let correct = cls
        .dists
        .iter()
        .zip(&cls.targets)
        .filter(|(dist, &target)| protonet::argmax(tape.value(**dist).values()) == target)
        .count();
    let query_acc = correct as f64 / queries.len() as f64;

    let total = combine_losses(tape, cls.loss, lomlm_loss, cfg.lambda)?;
    let report = LossReport {
        total: tape.value(total).item(),
        cls: tape.value(cls.loss).item(),
        lomlm: lomlm_loss.map(|l| tape.value(l).item()).unwrap_or(0.0),
        lambda: cfg.lambda,
        query_acc,
    };

    Ok(EpisodeEval {
        loss: total,
        report,
        trace,
    })
}

/// Forward-only convenience: the combined loss report for one episode.
pub fn joint_loss(
    episode: &Episode,
    store: &ParameterStore,
    cfg: &TrainConfig,
) -> Result<LossReport, TrainError> {
    let mut tape = Tape::new();
    Ok(forward_episode(&mut tape, store, cfg, episode, false)?.report)
}

/// Scales all gradients so their global l2 norm does not exceed
/// `clip_norm`; returns the pre-clip norm. Direction is preserved and
/// already-small gradients are untouched.
pub fn clip_gradients(store: &mut ParameterStore, clip_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > clip_norm {
        store.scale_grads(clip_norm / norm);
    }
    norm
}

/// Adam moment estimates, keyed like the parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: BTreeMap<String, Array>,
    v: BTreeMap<String, Array>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let m = store
            .iter()
            .map(|(k, p)| (k.clone(), Array::zeros(p.shape().to_vec())))
            .collect();
        let v = store
            .iter()
            .map(|(k, p)| (k.clone(), Array::zeros(p.shape().to_vec())))
            .collect();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update from the store's current gradients.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64) -> Result<(), TrainError> {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let keys: Vec<String> = store.keys().cloned().collect();
        for key in keys {
            let grad = store.grad(&key)?.clone();
            let m = self
                .m
                .get_mut(&key)
                .ok_or_else(|| TrainError::Incompatible(format!("no moment for `{key}`")))?;
            let v = self
                .v
                .get_mut(&key)
                .ok_or_else(|| TrainError::Incompatible(format!("no moment for `{key}`")))?;
            let param = store.get_mut(&key)?;
            for ((p, g), (mi, vi)) in param
                .values_mut()
                .iter_mut()
                .zip(grad.values())
                .zip(m.values_mut().iter_mut().zip(v.values_mut()))
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Full optimizer/sampler state; reloading and continuing reproduces the
/// uninterrupted run bitwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub step: u64,
    pub params: BTreeMap<String, Array>,
    pub adam: AdamState,
    pub train_rng_state: u64,
    pub evals_done: u64,
    pub best_val_acc: Option<f64>,
    pub evals_since_improve: usize,
    pub vocab_size: usize,
    pub vocab_fingerprint: u64,
}

impl Checkpoint {
    pub fn to_store(&self) -> ParameterStore {
        ParameterStore::from_params(self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ckpt)
    }

    /// Rejects evaluation against a registry the checkpoint was not
    /// trained on.
    pub fn check_registry(&self, reg: &CorpusRegistry) -> Result<(), TrainError> {
        if reg.vocab.len() != self.vocab_size
            || reg.vocab.fingerprint() != self.vocab_fingerprint
        {
            return Err(TrainError::Incompatible(format!(
                "registry vocabulary ({} tokens) does not match the checkpoint ({} tokens)",
                reg.vocab.len(),
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// One training-log row; `val_acc` is present only on evaluation steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub cls: f64,
    pub lomlm: f64,
    pub query_acc: f64,
    pub val_acc: Option<f64>,
    pub wall_ms: f64,
}

/// Renders the training log in its CSV interchange format.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,L,L_cls,L_lomlm,query_acc,val_acc,wall_ms\n");
    for r in rows {
        let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.loss, r.cls, r.lomlm, r.query_acc, val, r.wall_ms
        )
        .expect("string write");
    }
    out
}

pub struct TrainOutcome {
    /// Checkpoint at the best validation accuracy seen in this run, if
    /// any evaluation improved.
    pub best: Option<Checkpoint>,
    pub last: Checkpoint,
    pub log: Vec<LogRow>,
}

fn stream_seed(seed: u64, tag: u64) -> u64 {
    Rng::derive(seed, &[tag]).state()
}

#[allow(clippy::too_many_arguments)]
fn make_checkpoint(
    cfg: &TrainConfig,
    reg: &CorpusRegistry,
    store: &ParameterStore,
    adam: &AdamState,
    step: u64,
    train_rng_state: u64,
    evals_done: u64,
    best_val_acc: Option<f64>,
    evals_since_improve: usize,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        step,
        params: store.params_map().clone(),
        adam: adam.clone(),
        train_rng_state,
        evals_done,
        best_val_acc,
        evals_since_improve,
        vocab_size: reg.vocab.len(),
        vocab_fingerprint: reg.vocab.fingerprint(),
    }
}

/// Mean query accuracy over fresh validation episodes drawn from an
/// evaluation-indexed seed stream.
fn validation_accuracy(
    reg: &CorpusRegistry,
    cfg: &TrainConfig,
    store: &ParameterStore,
    eval_index: u64,
) -> Result<f64, TrainError> {
    let seed = Rng::derive(cfg.seed, &[TAG_VAL, eval_index]).state();
    let mut sampler = EpisodeSampler::new(reg, SplitId::Val, cfg.n, cfg.k, cfg.q, seed)?;
    let mut total = 0.0;
    for _ in 0..cfg.val_tasks {
        let ep = sampler.next_episode();
        let mut tape = Tape::new();
        let eval = forward_episode(&mut tape, store, cfg, &ep, false)?;
        total += eval.report.query_acc;
    }
    Ok(total / cfg.val_tasks as f64)
}

/// Trains from scratch on the registry's train split.
pub fn train(reg: &CorpusRegistry, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let store = init_params(cfg, reg.vocab.len())?;
    let adam = AdamState::new(&store);
    let ckpt = make_checkpoint(
        cfg,
        reg,
        &store,
        &adam,
        0,
        stream_seed(cfg.seed, TAG_TRAIN),
        0,
        None,
        0,
    );
    resume(reg, ckpt)
}

/// Continues training from a checkpoint until `max_episodes`.
pub fn resume(reg: &CorpusRegistry, ckpt: Checkpoint) -> Result<TrainOutcome, TrainError> {
    let cfg = ckpt.config.clone();
    cfg.validate()?;
    ckpt.check_registry(reg)?;

    let mut store = ckpt.to_store();
    let mut adam = ckpt.adam.clone();
    let mut sampler = EpisodeSampler::new(reg, SplitId::Train, cfg.n, cfg.k, cfg.q, 0)?;
    sampler.set_rng_state(ckpt.train_rng_state);
    // fail fast if the validation split cannot serve episodes
    EpisodeSampler::new(reg, SplitId::Val, cfg.n, cfg.k, cfg.q, 0)?;

    let mut step = ckpt.step;
    let mut evals_done = ckpt.evals_done;
    let mut best_val_acc = ckpt.best_val_acc;
    let mut evals_since_improve = ckpt.evals_since_improve;
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();

    while step < cfg.max_episodes {
        let started = Instant::now();
        step += 1;
        let episode = sampler.next_episode();
        let mut tape = Tape::new();
        let eval = forward_episode(&mut tape, &store, &cfg, &episode, false)?;
        tape.backward(eval.loss, &mut store)?;
        clip_gradients(&mut store, cfg.clip_norm);
        adam.step(&mut store, cfg.learning_rate)?;

        let mut row = LogRow {
            step,
            loss: eval.report.total,
            cls: eval.report.cls,
            lomlm: eval.report.lomlm,
            query_acc: eval.report.query_acc,
            val_acc: None,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };

        let mut stop = false;
        if step.is_multiple_of(cfg.val_every) {
            evals_done += 1;
            let acc = validation_accuracy(reg, &cfg, &store, evals_done)?;
            row.val_acc = Some(acc);
            row.wall_ms = started.elapsed().as_secs_f64() * 1e3;
            if best_val_acc.is_none_or(|b| acc > b) {
                best_val_acc = Some(acc);
                evals_since_improve = 0;
                best = Some(make_checkpoint(
                    &cfg,
                    reg,
                    &store,
                    &adam,
                    step,
                    sampler.rng_state(),
                    evals_done,
                    best_val_acc,
                    evals_since_improve,
                ));
            } else {
                evals_since_improve += 1;
                if evals_since_improve >= cfg.patience {
                    stop = true;
                }
            }
        }
        log.push(row);
        if stop {
            break;
        }
    }

    let last = make_checkpoint(
        &cfg,
        reg,
        &store,
        &adam,
        step,
        sampler.rng_state(),
        evals_done,
        best_val_acc,
        evals_since_improve,
    );
    Ok(TrainOutcome { best, last, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate, SynthSpec};

    fn tiny_registry() -> CorpusRegistry {
        synth_generate(
            &SynthSpec {
                sources: 2,
                classes_per_source: 10,
                docs_per_class: 12,
                doc_len: 10,
                vocab_size: 80,
                divergence: 0.8,
                split: (0.6, 0.2, 0.2),
            },
            77,
        )
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            seed: 5,
            n: 2,
            k: 1,
            q: 3,
            max_episodes: 12,
            val_every: 4,
            val_tasks: 4,
            patience: 10,
            branching: Some(vec![2, 1]),
            d_emb: 8,
            d_h: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let good = tiny_config();
        assert!(good.validate().is_ok());
        for bad in [
            TrainConfig { n: 1, ..good.clone() },
            TrainConfig { k: 0, ..good.clone() },
            TrainConfig { lambda: -0.1, ..good.clone() },
            TrainConfig { clip_norm: 0.0, ..good.clone() },
            TrainConfig { patience: 0, ..good.clone() },
            TrainConfig { branching: Some(vec![5, 3]), ..good.clone() },
            TrainConfig { tie_mlm_head: true, d_emb: 4, d_h: 8, ..good.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn lambda_zero_total_is_exactly_cls() {
        let reg = tiny_registry();
        let cfg = TrainConfig {
            lambda: 0.0,
            ..tiny_config()
        };
        let store = init_params(&cfg, reg.vocab.len()).unwrap();
        let ep = crate::episodes::episode_stream(&reg, SplitId::Train, 2, 1, 3, 1, 3)
            .unwrap()
            .remove(0);
        let report = joint_loss(&ep, &store, &cfg).unwrap();
        assert_eq!(report.total, report.cls);
        assert_eq!(report.lomlm, 0.0);
    }

    #[test]
    fn lomlm_without_tree_still_combines() {
        let reg = tiny_registry();
        let cfg = TrainConfig {
            branching: None,
            lambda: 0.1,
            ..tiny_config()
        };
        let store = init_params(&cfg, reg.vocab.len()).unwrap();
        let ep = crate::episodes::episode_stream(&reg, SplitId::Train, 2, 1, 3, 1, 5)
            .unwrap()
            .remove(0);
        let report = joint_loss(&ep, &store, &cfg).unwrap();
        assert!(report.lomlm > 0.0);
        assert_eq!(report.total, report.cls + 0.1 * report.lomlm);
    }

    #[test]
    fn combine_losses_arithmetic() {
        let mut tape = Tape::new();
        let cls = tape.input(Array::scalar(1.0));
        let lomlm = tape.input(Array::scalar(2.0));
        let total = combine_losses(&mut tape, cls, Some(lomlm), 0.1).unwrap();
        assert_eq!(tape.value(total).item(), 1.2);
    }

    #[test]
    fn fresh_loss_is_finite_and_total_combines_components() {
        let reg = tiny_registry();
        let cfg = tiny_config();
        let store = init_params(&cfg, reg.vocab.len()).unwrap();
        let ep = crate::episodes::episode_stream(&reg, SplitId::Train, 2, 1, 3, 1, 9)
            .unwrap()
            .remove(0);
        let report = joint_loss(&ep, &store, &cfg).unwrap();
        assert!(report.total.is_finite());
        assert!(report.total >= 0.0);
        assert!(report.cls >= 0.0);
        assert!(report.lomlm >= 0.0);
        assert_eq!(report.total, report.cls + 0.1 * report.lomlm);
    }

    #[test]
    fn all_parameters_get_finite_gradients() {
        let reg = tiny_registry();
        let cfg = tiny_config();
        let mut store = init_params(&cfg, reg.vocab.len()).unwrap();
        let ep = crate::episodes::episode_stream(&reg, SplitId::Train, 2, 1, 3, 1, 11)
            .unwrap()
            .remove(0);
        let mut tape = Tape::new();
        let eval = forward_episode(&mut tape, &store, &cfg, &ep, false).unwrap();
        tape.backward(eval.loss, &mut store).unwrap();
        for (key, grad) in store.grads() {
            assert!(
                grad.values().iter().all(|g| g.is_finite()),
                "non-finite gradient in {key}"
            );
        }
    }

    #[test]
    fn clip_halves_when_norm_is_double() {
        let mut store = ParameterStore::new();
        store.insert("a", Array::zeros(vec![2])).unwrap();
        store.set_grad("a", Array::new(vec![2], vec![48.0, 64.0]).unwrap());
        let norm = clip_gradients(&mut store, 40.0);
        assert_eq!(norm, 80.0);
        assert_eq!(store.grad("a").unwrap().values(), &[24.0, 32.0]);
    }

    #[test]
    fn clip_leaves_small_gradients_bitwise_untouched() {
        let mut store = ParameterStore::new();
        store.insert("a", Array::zeros(vec![2])).unwrap();
        store.set_grad("a", Array::new(vec![2], vec![6.0, 8.0]).unwrap());
        let norm = clip_gradients(&mut store, 40.0);
        assert_eq!(norm, 10.0);
        assert_eq!(store.grad("a").unwrap().values(), &[6.0, 8.0]);

        store.set_grad("a", Array::zeros(vec![2]));
        clip_gradients(&mut store, 40.0);
        assert_eq!(store.grad("a").unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn clip_never_increases_norm_and_preserves_direction() {
        let mut rng = Rng::new(8);
        for _ in 0..100 {
            let mut store = ParameterStore::new();
            store.insert("a", Array::zeros(vec![4])).unwrap();
            let g: Vec<f64> = (0..4).map(|_| rng.uniform(-30.0, 30.0)).collect();
            store.set_grad("a", Array::new(vec![4], g.clone()).unwrap());
            let clip = rng.uniform(1.0, 50.0);
            let before = store.grad_norm();
            clip_gradients(&mut store, clip);
            let after = store.grad_norm();
            assert!(after <= before + 1e-12);
            assert!(after <= clip + 1e-9);
            // direction preserved: clipped is a nonnegative multiple
            let gv = store.grad("a").unwrap().values().to_vec();
            if before > 0.0 {
                let scale = after / before;
                for (x, y) in g.iter().zip(&gv) {
                    assert!((x * scale - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn training_log_row_count_matches_steps() {
        let reg = tiny_registry();
        let cfg = tiny_config();
        let out = train(&reg, &cfg).unwrap();
        assert_eq!(out.log.len(), 12);
        assert_eq!(out.last.step, 12);
        // evaluation rows carry val_acc
        assert!(out.log[3].val_acc.is_some());
        assert!(out.log[0].val_acc.is_none());
    }

    #[test]
    fn same_seed_same_loss_trace() {
        let reg = tiny_registry();
        let cfg = tiny_config();
        let a = train(&reg, &cfg).unwrap();
        let b = train(&reg, &cfg).unwrap();
        let la: Vec<f64> = a.log.iter().map(|r| r.loss).collect();
        let lb: Vec<f64> = b.log.iter().map(|r| r.loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn early_stopper_patience_one_stops_at_second_decline() {
        // patience 1, strictly decreasing validation accuracy: first
        // evaluation improves on "no best yet", the second is worse and
        // stops the run.
        let mut best: Option<f64> = None;
        let mut since = 0usize;
        let mut stopped_at = None;
        for (i, acc) in [0.9, 0.8, 0.7].iter().enumerate() {
            if best.is_none_or(|b| *acc > b) {
                best = Some(*acc);
                since = 0;
            } else {
                since += 1;
                if since >= 1 {
                    stopped_at = Some(i + 1);
                    break;
                }
            }
        }
        assert_eq!(stopped_at, Some(2));
    }

    #[test]
    fn checkpoint_round_trip_resumes_bitwise() {
        let reg = tiny_registry();
        let cfg = TrainConfig {
            max_episodes: 10,
            ..tiny_config()
        };

        // uninterrupted
        let full = train(&reg, &cfg).unwrap();

        // stop at 5, save, reload, continue
        let half_cfg = TrainConfig {
            max_episodes: 5,
            ..cfg.clone()
        };
        let half = train(&reg, &half_cfg).unwrap();
        let path = std::env::temp_dir().join("fstc-trainer-ckpt-test.json");
        half.last.save(&path).unwrap();
        let mut reloaded = Checkpoint::load(&path).unwrap();
        assert_eq!(reloaded, half.last);
        reloaded.config.max_episodes = 10;
        let second = resume(&reg, reloaded).unwrap();

        let full_tail: Vec<f64> = full.log[5..].iter().map(|r| r.loss).collect();
        let resumed: Vec<f64> = second.log.iter().map(|r| r.loss).collect();
        assert_eq!(full_tail, resumed);
    }

    #[test]
    fn checkpoint_rejects_other_registry() {
        let reg = tiny_registry();
        let cfg = tiny_config();
        let out = train(&reg, &cfg).unwrap();
        let other = synth_generate(
            &SynthSpec {
                sources: 2,
                classes_per_source: 10,
                docs_per_class: 12,
                doc_len: 10,
                vocab_size: 60,
                divergence: 0.8,
                split: (0.6, 0.2, 0.2),
            },
            78,
        )
        .unwrap();
        assert!(matches!(
            out.last.check_registry(&other),
            Err(TrainError::Incompatible(_))
        ));
    }

    #[test]
    fn loss_decreases_over_short_training() {
        let reg = tiny_registry();
        let cfg = TrainConfig {
            max_episodes: 120,
            val_every: 60,
            ..tiny_config()
        };
        let out = train(&reg, &cfg).unwrap();
        let first: f64 = out.log[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        let last: f64 = out.log[out.log.len() - 10..]
            .iter()
            .map(|r| r.loss)
            .sum::<f64>()
            / 10.0;
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    #[test]
    fn csv_has_blank_val_between_evaluations()
    {
        let rows = vec![
            LogRow {
                step: 1,
                loss: 1.5,
                cls: 1.0,
                lomlm: 5.0,
                query_acc: 0.5,
                val_acc: None,
                wall_ms: 2.0,
            },
            LogRow {
                step: 2,
                loss: 1.25,
                cls: 1.0,
                lomlm: 2.5,
                query_acc: 0.75,
                val_acc: Some(0.625),
                wall_ms: 2.5,
            },
        ];
        let csv = log_to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,L,L_cls,L_lomlm,query_acc,val_acc,wall_ms");
        assert!(lines[1].contains(",,"));
        assert!(lines[2].contains("0.625"));
    }
}
