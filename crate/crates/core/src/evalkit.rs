//! Meta-testing and the experiment harness: per-source accuracy reports,
//! component ablations, tree-structure and N-way sweeps, soft-assignment
//! heatmaps, and the CSV/JSONL renderings of each.
//!
//! Evaluation fans out across tasks (and across independent training
//! runs) with scoped threads; results are collected in input order and
//! reduced sequentially, so reports are reproducible bitwise.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusRegistry, SplitId};
use crate::encoder::EncoderVars;
use crate::episodes::{Episode, EpisodeError, EpisodeSampler};
use crate::htc::{self, TaskTrace, TreeVars};
use crate::lomlm;
use crate::numerics::{ParameterStore, Tape};
use crate::rng::Rng;
use crate::trainer::{self, Checkpoint, TrainConfig, TrainError};

const TAG_EVAL: u64 = 0xe7a1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("invalid evaluation request: {0}")]
    Config(String),
    #[error("no source has {n} test classes to evaluate")]
    InsufficientClasses { n: usize },
}

/// Runs `f` over `items` on up to `threads` scoped threads, returning
/// results in input order.
fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut results: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (chunk_items, out) in items.chunks(chunk).zip(results.chunks_mut(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (item, slot) in chunk_items.iter().zip(out.iter_mut()) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("slot filled")).collect()
}

/// Per-source and overall accuracy for one evaluation request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub seed: u64,
    pub tasks_per_source: usize,
    /// (source id, mean accuracy), sorted by source id.
    pub per_source: Vec<(String, f64)>,
    /// Unweighted mean of the per-source accuracies.
    pub overall: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unweighted mean over sources.
pub fn overall_mean(per_source: &[(String, f64)]) -> f64 {
    mean(&per_source.iter().map(|(_, a)| *a).collect::<Vec<_>>())
}

fn eval_config(ckpt: &Checkpoint, n: usize, k: usize, q: usize) -> Result<TrainConfig, EvalError> {
    if n < 2 {
        return Err(EvalError::Config(format!("n must be at least 2, got {n}")));
    }
    Ok(TrainConfig {
        n,
        k,
        q,
        ..ckpt.config.clone()
    })
}

/// Mean test accuracy per source over `tasks_per_source` sampled tasks,
/// restricted to `sources`.
#[allow(clippy::too_many_arguments)]
pub fn meta_test_sources(
    ckpt: &Checkpoint,
    reg: &CorpusRegistry,
    sources: &[String],
    n: usize,
    k: usize,
    q: usize,
    tasks_per_source: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    ckpt.check_registry(reg)?;
    if tasks_per_source == 0 {
        return Err(EvalError::Config("tasks_per_source must be positive".into()));
    }
    let cfg = eval_config(ckpt, n, k, q)?;
    let store = ckpt.to_store();

    let mut per_source = Vec::with_capacity(sources.len());
    for (idx, source_id) in sources.iter().enumerate() {
        let stream = Rng::derive(seed, &[TAG_EVAL, idx as u64]).state();
        let mut sampler =
            EpisodeSampler::for_source(reg, source_id, SplitId::Test, n, k, q, stream)?;
        let episodes: Vec<Episode> = (0..tasks_per_source)
            .map(|_| sampler.next_episode())
            .collect();
        let accs: Vec<Result<f64, TrainError>> = parallel_map(&episodes, |ep| {
            let mut tape = Tape::new();
            Ok(trainer::forward_episode(&mut tape, &store, &cfg, ep, false)?
                .report
                .query_acc)
        });
        let accs: Vec<f64> = accs.into_iter().collect::<Result<_, _>>()?;
        per_source.push((source_id.clone(), mean(&accs)));
    }
    let overall = overall_mean(&per_source);
    Ok(EvalReport {
        n,
        k,
        q,
        seed,
        tasks_per_source,
        per_source,
        overall,
    })
}

/// Mean test accuracy per source over every source in the registry.
pub fn meta_test(
    ckpt: &Checkpoint,
    reg: &CorpusRegistry,
    n: usize,
    k: usize,
    q: usize,
    tasks_per_source: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let sources: Vec<String> = reg.source_ids().cloned().collect();
    meta_test_sources(ckpt, reg, &sources, n, k, q, tasks_per_source, seed)
}

pub fn eval_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("source,accuracy,tasks,n,k,q,seed\n");
    for (source, acc) in &report.per_source {
        writeln!(
            out,
            "{source},{acc},{},{},{},{},{}",
            report.tasks_per_source, report.n, report.k, report.q, report.seed
        )
        .expect("string write");
    }
    writeln!(
        out,
        "overall,{},{},{},{},{},{}",
        report.overall,
        report.tasks_per_source * report.per_source.len(),
        report.n,
        report.k,
        report.q,
        report.seed
    )
    .expect("string write");
    out
}

/// Mean level-1 soft assignment per source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentHeatmap {
    pub sources: Vec<String>,
    pub clusters: Vec<String>,
    /// rows[i][j] = mean probability that source i's tasks route to
    /// level-1 cluster j; each row sums to 1.
    pub rows: Vec<Vec<f64>>,
}

impl AssignmentHeatmap {
    /// The most-activated cluster per source row.
    pub fn argmax_columns(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|row| crate::protonet::argmax(row))
            .collect()
    }
}

/// The root task embedding's assignment over the first clustering level,
/// computed without running queries or losses.
fn level1_assignment(
    store: &ParameterStore,
    cfg: &TrainConfig,
    episode: &Episode,
) -> Result<Vec<f64>, TrainError> {
    let tree_cfg = cfg
        .tree_config()
        .ok_or_else(|| TrainError::Config("heatmap requires a clustering tree".into()))?;
    let mut tape = Tape::new();
    let enc = EncoderVars::bind(&mut tape, store, cfg.tie_mlm_head)?;
    let samples = lomlm::augment_support(&episode.support, cfg.max_len)?;
    let g_in = lomlm::task_embedding(&mut tape, &enc, &samples)?;
    let tree_vars = TreeVars::bind(&mut tape, store, &tree_cfg)?;
    let p = htc::assign(&mut tape, g_in, &tree_vars.levels[0].centers, tree_cfg.sigma_sq)?;
    Ok(tape.value(p).values().to_vec())
}

/// Averages the level-1 soft assignment over sampled test tasks of every
/// source. `k_override` substitutes the checkpoint's shot count (the
/// reference analysis uses 1-shot tasks). When `collect_traces` is set,
/// the full per-task pipeline traces are returned alongside.
pub fn heatmap(
    ckpt: &Checkpoint,
    reg: &CorpusRegistry,
    tasks_per_source: usize,
    seed: u64,
    k_override: Option<usize>,
    collect_traces: bool,
) -> Result<(AssignmentHeatmap, Vec<TaskTrace>), EvalError> {
    ckpt.check_registry(reg)?;
    if tasks_per_source == 0 {
        return Err(EvalError::Config("tasks_per_source must be positive".into()));
    }
    let k = k_override.unwrap_or(ckpt.config.k);
    let cfg = eval_config(ckpt, ckpt.config.n, k, ckpt.config.q)?;
    let clusters = cfg
        .branching
        .as_ref()
        .ok_or_else(|| EvalError::Config("heatmap requires a clustering tree".into()))?[0];
    let store = ckpt.to_store();

    let mut sources = Vec::new();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (idx, source_id) in reg.source_ids().cloned().collect::<Vec<_>>().iter().enumerate() {
        let stream = Rng::derive(seed, &[TAG_EVAL, 0x4ea7, idx as u64]).state();
        let mut sampler =
            EpisodeSampler::for_source(reg, source_id, SplitId::Test, cfg.n, k, cfg.q, stream)?;
        let episodes: Vec<Episode> = (0..tasks_per_source)
            .map(|_| sampler.next_episode())
            .collect();

        type RowResult = Result<(Vec<f64>, Option<TaskTrace>), TrainError>;
        let results: Vec<RowResult> = parallel_map(&episodes, |ep| {
                if collect_traces {
                    let mut tape = Tape::new();
                    let eval = trainer::forward_episode(&mut tape, &store, &cfg, ep, true)?;
                    let trace = eval.trace.ok_or_else(|| {
                        TrainError::Config("trace requires a clustering tree".into())
                    })?;
                    Ok((trace.assignments[0][0].clone(), Some(trace)))
                } else {
                    Ok((level1_assignment(&store, &cfg, ep)?, None))
                }
            });

        let mut acc = vec![0.0; clusters];
        for result in results {
            let (assignment, trace) = result?;
            for (a, p) in acc.iter_mut().zip(&assignment) {
                *a += p;
            }
            if let Some(t) = trace {
                traces.push(t);
            }
        }
        for a in acc.iter_mut() {
            *a /= tasks_per_source as f64;
        }
        sources.push(source_id.clone());
        rows.push(acc);
    }

    Ok((
        AssignmentHeatmap {
            sources,
            clusters: (1..=clusters).map(|i| format!("C{i}")).collect(),
            rows,
        },
        traces,
    ))
}

pub fn heatmap_csv(map: &AssignmentHeatmap) -> String {
    let mut out = format!("source,{}\n", map.clusters.join(","));
    for (source, row) in map.sources.iter().zip(&map.rows) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{source},{}", cells.join(",")).expect("string write");
    }
    out
}

pub fn traces_jsonl(traces: &[TaskTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        writeln!(out, "{}", serde_json::to_string(t).expect("trace serializes"))
            .expect("string write");
    }
    out
}

/// The three ablation variants: the bare metric baseline, the baseline
/// plus clustering/modulation with an unsupervised task embedding, and
/// the full model with the label-reconstruction objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Protonet,
    ProtonetHtc,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Protonet, Variant::ProtonetHtc, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Protonet => "protonet",
            Variant::ProtonetHtc => "protonet+htc",
            Variant::Full => "full",
        }
    }

    /// Applies the variant to a base configuration.
    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        match self {
            Variant::Protonet => TrainConfig {
                branching: None,
                lambda: 0.0,
                ..base.clone()
            },
            Variant::ProtonetHtc => TrainConfig {
                lambda: 0.0,
                ..base.clone()
            },
            Variant::Full => base.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub report: EvalReport,
}

/// Trains and meta-tests every variant on every seed (shared seeds and a
/// shared evaluation stream). Rows are emitted for every run regardless
/// of the accuracy achieved.
pub fn ablate(
    reg: &CorpusRegistry,
    base_cfg: &TrainConfig,
    seeds: &[u64],
    tasks_per_source: usize,
    eval_seed: u64,
) -> Result<Vec<AblationRow>, EvalError> {
    if base_cfg.branching.is_none() {
        return Err(EvalError::Config(
            "ablation base config must carry a tree branching".into(),
        ));
    }
    let jobs: Vec<(u64, Variant)> = seeds
        .iter()
        .flat_map(|&seed| Variant::ALL.iter().map(move |&v| (seed, v)))
        .collect();
    let results: Vec<Result<AblationRow, EvalError>> = parallel_map(&jobs, |&(seed, variant)| {
        let cfg = TrainConfig {
            seed,
            ..variant.config(base_cfg)
        };
        let outcome = trainer::train(reg, &cfg)?;
        let ckpt = outcome.best.unwrap_or(outcome.last);
        let report = meta_test(
            &ckpt,
            reg,
            cfg.n,
            cfg.k,
            cfg.q,
            tasks_per_source,
            eval_seed,
        )?;
        Ok(AblationRow {
            variant: variant.label().to_string(),
            seed,
            report,
        })
    });
    results.into_iter().collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,seed,source,accuracy,tasks,n,k,q\n");
    for row in rows {
        for (source, acc) in row
            .report
            .per_source
            .iter()
            .chain(std::iter::once(&("overall".to_string(), row.report.overall)))
        {
            writeln!(
                out,
                "{},{},{source},{acc},{},{},{},{}",
                row.variant,
                row.seed,
                row.report.tasks_per_source,
                row.report.n,
                row.report.k,
                row.report.q
            )
            .expect("string write");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub branching: Vec<usize>,
    pub seed: u64,
    pub report: EvalReport,
}

/// The tree structures compared in the reference sweep.
pub fn default_branchings() -> Vec<Vec<usize>> {
    vec![
        vec![5, 1],
        vec![15, 1],
        vec![2, 2, 1],
        vec![3, 2, 1],
        vec![5, 3, 1],
        vec![5, 4, 1],
        vec![5, 5, 1],
    ]
}

/// Trains and meta-tests the full model once per (branching, seed).
pub fn structure_sweep(
    reg: &CorpusRegistry,
    base_cfg: &TrainConfig,
    branchings: &[Vec<usize>],
    seeds: &[u64],
    tasks_per_source: usize,
    eval_seed: u64,
) -> Result<Vec<SweepRow>, EvalError> {
    let jobs: Vec<(Vec<usize>, u64)> = branchings
        .iter()
        .flat_map(|b| seeds.iter().map(move |&s| (b.clone(), s)))
        .collect();
    let results: Vec<Result<SweepRow, EvalError>> = parallel_map(&jobs, |(branching, seed)| {
        let cfg = TrainConfig {
            seed: *seed,
            branching: Some(branching.clone()),
            ..base_cfg.clone()
        };
        cfg.validate().map_err(EvalError::Train)?;
        let outcome = trainer::train(reg, &cfg)?;
        let ckpt = outcome.best.unwrap_or(outcome.last);
        let report = meta_test(
            &ckpt,
            reg,
            cfg.n,
            cfg.k,
            cfg.q,
            tasks_per_source,
            eval_seed,
        )?;
        Ok(SweepRow {
            branching: branching.clone(),
            seed: *seed,
            report,
        })
    });
    results.into_iter().collect()
}

fn branching_label(branching: &[usize]) -> String {
    branching
        .iter()
        .map(|o| o.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("branching,seed,source,accuracy,tasks,n,k,q\n");
    for row in rows {
        for (source, acc) in row
            .report
            .per_source
            .iter()
            .chain(std::iter::once(&("overall".to_string(), row.report.overall)))
        {
            writeln!(
                out,
                "{},{},{source},{acc},{},{},{},{}",
                branching_label(&row.branching),
                row.seed,
                row.report.tasks_per_source,
                row.report.n,
                row.report.k,
                row.report.q
            )
            .expect("string write");
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NwayRow {
    pub n: usize,
    pub report: EvalReport,
}

/// Way counts evaluated by default (desk-scale slice of the reference
/// 2..=7 range).
pub fn default_ways() -> Vec<usize> {
    vec![2, 3, 4, 5]
}

/// Evaluates one trained checkpoint across different way counts. Sources
/// whose test split cannot serve an N are left out of that N's report;
/// an N no source can serve is an error.
pub fn nway_sweep(
    ckpt: &Checkpoint,
    reg: &CorpusRegistry,
    ways: &[usize],
    tasks_per_source: usize,
    seed: u64,
) -> Result<Vec<NwayRow>, EvalError> {
    let mut rows = Vec::with_capacity(ways.len());
    let (k, q) = (ckpt.config.k, ckpt.config.q);
    for &n in ways {
        let eligible: Vec<String> = reg
            .sources
            .iter()
            .filter(|(_, ds)| {
                ds.classes_in(SplitId::Test)
                    .into_iter()
                    .filter(|c| ds.docs(c).map(|d| d.len() >= k + q).unwrap_or(false))
                    .count()
                    >= n
            })
            .map(|(id, _)| id.clone())
            .collect();
        if eligible.is_empty() {
            return Err(EvalError::InsufficientClasses { n });
        }
        let report =
            meta_test_sources(ckpt, reg, &eligible, n, k, q, tasks_per_source, seed)?;
        rows.push(NwayRow { n, report });
    }
    Ok(rows)
}

pub fn nway_csv(rows: &[NwayRow]) -> String {
    let mut out = String::from("n,source,accuracy,tasks,k,q,seed\n");
    for row in rows {
        for (source, acc) in row
            .report
            .per_source
            .iter()
            .chain(std::iter::once(&("overall".to_string(), row.report.overall)))
        {
            writeln!(
                out,
                "{},{source},{acc},{},{},{},{}",
                row.n, row.report.tasks_per_source, row.report.k, row.report.q, row.report.seed
            )
            .expect("string write");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_generate, SynthSpec};

    fn registry() -> CorpusRegistry {
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
            21,
        )
        .unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            seed: 3,
            n: 2,
            k: 1,
            q: 3,
            max_episodes: 6,
            val_every: 3,
            val_tasks: 3,
            branching: Some(vec![2, 1]),
            d_emb: 8,
            d_h: 8,
            ..TrainConfig::default()
        }
    }

    fn quick_checkpoint(reg: &CorpusRegistry) -> Checkpoint {
        let out = trainer::train(reg, &quick_cfg()).unwrap();
        out.best.unwrap_or(out.last)
    }

    #[test]
    fn aggregation_means() {
        assert_eq!(mean(&[0.5, 1.0]), 0.75);
        let per = vec![("a".to_string(), 0.6), ("b".to_string(), 0.8)];
        assert!((overall_mean(&per) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..37).collect();
        let out = parallel_map(&items, |&i| i * 2);
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn meta_test_is_reproducible_and_covers_sources() {
        let reg = registry();
        let ckpt = quick_checkpoint(&reg);
        let a = meta_test(&ckpt, &reg, 2, 1, 3, 20, 9).unwrap();
        let b = meta_test(&ckpt, &reg, 2, 1, 3, 20, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_source.len(), 2);
        assert!((a.overall - overall_mean(&a.per_source)).abs() < 1e-15);
        for (_, acc) in &a.per_source {
            assert!((0.0..=1.0).contains(acc));
        }
        let csv = eval_report_csv(&a);
        assert!(csv.lines().count() == 4);
        assert!(csv.lines().last().unwrap().starts_with("overall,"));
    }

    #[test]
    fn heatmap_rows_are_distributions() {
        let reg = registry();
        let ckpt = quick_checkpoint(&reg);
        let (map, traces) = heatmap(&ckpt, &reg, 10, 4, Some(1), false).unwrap();
        assert!(traces.is_empty());
        assert_eq!(map.sources.len(), 2);
        assert_eq!(map.clusters, vec!["C1", "C2"]);
        for row in &map.rows {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
        let csv = heatmap_csv(&map);
        assert!(csv.starts_with("source,C1,C2\n"));
    }

    #[test]
    fn heatmap_single_cluster_level_is_all_ones() {
        let reg = registry();
        let cfg = TrainConfig {
            branching: Some(vec![1, 1]),
            ..quick_cfg()
        };
        let out = trainer::train(&reg, &cfg).unwrap();
        let ckpt = out.best.unwrap_or(out.last);
        let (map, _) = heatmap(&ckpt, &reg, 5, 4, None, false).unwrap();
        for row in &map.rows {
            assert_eq!(row, &vec![1.0]);
        }
    }

    #[test]
    fn heatmap_traces_roundtrip_as_jsonl() {
        let reg = registry();
        let ckpt = quick_checkpoint(&reg);
        let (_, traces) = heatmap(&ckpt, &reg, 3, 4, Some(1), true).unwrap();
        assert_eq!(traces.len(), 6);
        let text = traces_jsonl(&traces);
        for (line, t) in text.lines().zip(&traces) {
            let back: TaskTrace = serde_json::from_str(line).unwrap();
            assert_eq!(&back, t);
        }
    }

    #[test]
    fn variant_configs_disable_the_right_pieces() {
        let base = quick_cfg();
        let p = Variant::Protonet.config(&base);
        assert_eq!(p.lambda, 0.0);
        assert!(p.branching.is_none());
        let h = Variant::ProtonetHtc.config(&base);
        assert_eq!(h.lambda, 0.0);
        assert_eq!(h.branching, base.branching);
        let f = Variant::Full.config(&base);
        assert_eq!(f.lambda, base.lambda);
    }

    #[test]
    fn ablation_emits_three_rows_per_seed() {
        let reg = registry();
        let rows = ablate(&reg, &quick_cfg(), &[11, 12], 5, 3).unwrap();
        assert_eq!(rows.len(), 6);
        for seed in [11u64, 12] {
            let per_seed: Vec<_> = rows.iter().filter(|r| r.seed == seed).collect();
            assert_eq!(per_seed.len(), 3);
        }
        let csv = ablation_csv(&rows);
        // per row: 2 sources + overall
        assert_eq!(csv.lines().count(), 1 + 6 * 3);
    }

    #[test]
    fn structure_sweep_emits_one_row_per_pair() {
        let reg = registry();
        let rows = structure_sweep(
            &reg,
            &quick_cfg(),
            &[vec![2, 1], vec![1, 1]],
            &[5, 6],
            5,
            3,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        let csv = sweep_csv(&rows);
        assert!(csv.contains("2-1,5,"));
    }

    #[test]
    fn default_branchings_match_reference_set() {
        let b = default_branchings();
        assert_eq!(b.len(), 7);
        assert_eq!(b[0], vec![5, 1]);
        assert_eq!(b[1], vec![15, 1]);
        assert_eq!(b[4], vec![5, 3, 1]);
    }

    #[test]
    fn fewer_ways_are_easier_for_the_same_checkpoint() {
        // 25 classes/source gives 5 test classes per source
        let reg = synth_generate(
            &SynthSpec {
                sources: 2,
                classes_per_source: 25,
                docs_per_class: 12,
                doc_len: 10,
                vocab_size: 100,
                divergence: 0.8,
                split: (0.6, 0.2, 0.2),
            },
            31,
        )
        .unwrap();
        let cfg = TrainConfig {
            seed: 4,
            n: 5,
            k: 1,
            q: 3,
            max_episodes: 400,
            val_every: 200,
            val_tasks: 10,
            branching: Some(vec![2, 1]),
            d_emb: 16,
            d_h: 16,
            ..TrainConfig::default()
        };
        let out = trainer::train(&reg, &cfg).unwrap();
        let ckpt = out.best.unwrap_or(out.last);
        let rows = nway_sweep(&ckpt, &reg, &[2, 5], 100, 8).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(
            rows[0].report.overall >= rows[1].report.overall,
            "2-way {} should not trail 5-way {}",
            rows[0].report.overall,
            rows[1].report.overall
        );
    }

    #[test]
    fn nway_sweep_handles_empty_and_too_large() {
        let reg = registry();
        let ckpt = quick_checkpoint(&reg);
        assert!(nway_sweep(&ckpt, &reg, &[], 5, 3).unwrap().is_empty());
        // only 2 test classes per source exist
        assert!(matches!(
            nway_sweep(&ckpt, &reg, &[2, 5], 5, 3),
            Err(EvalError::InsufficientClasses { n: 5 })
        ));
        let rows = nway_sweep(&ckpt, &reg, &[2], 5, 3).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 2);
        let csv = nway_csv(&rows);
        assert!(csv.starts_with("n,source,"));
    }
}
