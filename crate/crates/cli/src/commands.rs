//! The six subcommands, each writing its artifacts plus a run manifest
//! into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use fstc_core::corpus::{self, CorpusError, CorpusRegistry};
use fstc_core::evalkit::{self, EvalError};
use fstc_core::trainer::{self, Checkpoint, TrainConfig, TrainError};

use crate::config::{CorpusSection, RunConfig};
use crate::manifest::RunManifest;
use crate::CliError;

pub struct Ctx {
    pub command: String,
    pub config: RunConfig,
    pub resolved: Value,
    pub config_path: PathBuf,
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub resume: bool,
}

impl Ctx {
    fn manifest(&self) -> RunManifest {
        RunManifest::new(
            &self.command,
            &self.config_path,
            &self.overrides,
            self.resolved.clone(),
        )
    }

    fn effective_seed(&self) -> Option<u64> {
        self.seed.or(self.config.seed)
    }

    fn synth_seed(&self) -> Result<u64, CliError> {
        self.effective_seed().ok_or_else(|| {
            CliError::Config(
                "missing field `seed`: synthetic corpora require an explicit seed \
                 (set `seed` in the config or pass --seed)"
                    .into(),
            )
        })
    }

    fn registry(&self) -> Result<CorpusRegistry, CliError> {
        match &self.config.corpus {
            CorpusSection::Synth(spec) => {
                corpus::synth_generate(spec, self.synth_seed()?).map_err(corpus_err)
            }
            CorpusSection::Files { paths, manifest } => {
                corpus::load_registry(paths, manifest).map_err(corpus_err)
            }
        }
    }

    fn train_config(&self) -> TrainConfig {
        let mut cfg = self.config.train.clone().unwrap_or_default();
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg
    }

    fn checkpoint_path(&self, default_name: &str) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join(default_name))
    }

    fn load_checkpoint(&self) -> Result<Checkpoint, CliError> {
        let path = self.checkpoint.as_ref().ok_or_else(|| {
            CliError::Config("this command needs --checkpoint PATH".into())
        })?;
        Checkpoint::load(path).map_err(train_err)
    }

    /// Rejects an eval-side config whose explicitly written branching
    /// disagrees with the checkpoint's.
    fn check_branching(&self, ckpt: &Checkpoint) -> Result<(), CliError> {
        let explicit = self
            .resolved
            .get("train")
            .and_then(|t| t.get("branching"))
            .is_some();
        if explicit {
            let cfg_branching = self.config.train.as_ref().and_then(|t| t.branching.clone());
            if cfg_branching != ckpt.config.branching {
                return Err(CliError::Config(format!(
                    "checkpoint was trained with branching {:?} but the config specifies {:?}",
                    ckpt.config.branching, cfg_branching
                )));
            }
        }
        Ok(())
    }
}

fn corpus_err(e: CorpusError) -> CliError {
    CliError::Config(e.to_string())
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_)
        | TrainError::Version { .. }
        | TrainError::Incompatible(_)
        | TrainError::Episode(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Train(inner) => train_err(inner),
        EvalError::Episode(_) | EvalError::Config(_) | EvalError::InsufficientClasses { .. } => {
            CliError::Config(e.to_string())
        }
    }
}

fn write_artifact(
    manifest: &mut RunManifest,
    dir: &Path,
    name: &str,
    content: &str,
) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, content)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    manifest.record(&path)?;
    Ok(path)
}

/// Writes one JSONL file per source plus the split manifest.
pub fn cmd_synth(ctx: &Ctx) -> Result<(), CliError> {
    let spec = match &ctx.config.corpus {
        CorpusSection::Synth(spec) => spec,
        CorpusSection::Files { .. } => {
            return Err(CliError::Config(
                "the synth command requires a corpus.synth section".into(),
            ))
        }
    };
    let reg = corpus::synth_generate(spec, ctx.synth_seed()?).map_err(corpus_err)?;

    let mut manifest = ctx.manifest();
    for (source_id, ds) in &reg.sources {
        let path = ctx.out_dir.join(format!("{source_id}.jsonl"));
        corpus::write_jsonl(ds, &reg.vocab, &path)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        manifest.record(&path)?;
    }
    write_artifact(
        &mut manifest,
        &ctx.out_dir,
        "split_manifest.json",
        &corpus::split_manifest(&reg),
    )?;
    manifest.write(&ctx.out_dir)?;
    Ok(())
}

/// Trains (or resumes) and writes checkpoints plus the training log.
pub fn cmd_train(ctx: &Ctx) -> Result<(), CliError> {
    let reg = ctx.registry()?;
    let mut manifest = ctx.manifest();

    let outcome = if ctx.resume {
        let path = ctx.checkpoint_path("checkpoint_last.json");
        let mut ckpt = Checkpoint::load(&path).map_err(train_err)?;
        // the config file still owns the run length; everything else
        // resumes from the checkpoint verbatim
        if let Some(tc) = &ctx.config.train {
            ckpt.config.max_episodes = tc.max_episodes;
        }
        trainer::resume(&reg, ckpt).map_err(train_err)?
    } else {
        let cfg = ctx.train_config();
        cfg.validate().map_err(train_err)?;
        trainer::train(&reg, &cfg).map_err(train_err)?
    };

    let last_path = ctx.out_dir.join("checkpoint_last.json");
    outcome.last.save(&last_path).map_err(train_err)?;
    manifest.record(&last_path)?;

    let best_path = ctx.out_dir.join("checkpoint_best.json");
    match &outcome.best {
        Some(best) => {
            best.save(&best_path).map_err(train_err)?;
            manifest.record(&best_path)?;
        }
        None if !ctx.resume => {
            outcome.last.save(&best_path).map_err(train_err)?;
            manifest.record(&best_path)?;
        }
        // resumed run that never improved: leave any existing best alone
        None => {}
    }

    write_artifact(
        &mut manifest,
        &ctx.out_dir,
        "training_log.csv",
        &trainer::log_to_csv(&outcome.log),
    )?;
    manifest.write(&ctx.out_dir)?;
    Ok(())
}

/// Meta-tests a checkpoint and writes the per-source accuracy report.
pub fn cmd_eval(ctx: &Ctx) -> Result<(), CliError> {
    let ckpt = ctx.load_checkpoint()?;
    let reg = ctx.registry()?;
    ckpt.check_registry(&reg).map_err(train_err)?;
    ctx.check_branching(&ckpt)?;

    let section = ctx.config.eval.clone().unwrap_or_default();
    let n = section.n.unwrap_or(ckpt.config.n);
    let k = section.k.unwrap_or(ckpt.config.k);
    let q = section.q.unwrap_or(ckpt.config.q);
    let report = evalkit::meta_test(
        &ckpt,
        &reg,
        n,
        k,
        q,
        section.tasks_per_source,
        section.seed,
    )
    .map_err(eval_err)?;

    let mut manifest = ctx.manifest();
    write_artifact(
        &mut manifest,
        &ctx.out_dir,
        "eval_report.csv",
        &evalkit::eval_report_csv(&report),
    )?;
    manifest.write(&ctx.out_dir)?;
    println!("overall accuracy: {}", report.overall);
    Ok(())
}

/// Writes the per-source level-1 assignment heatmap (and, optionally,
/// the full per-task pipeline traces).
pub fn cmd_heatmap(ctx: &Ctx) -> Result<(), CliError> {
    let ckpt = ctx.load_checkpoint()?;
    let reg = ctx.registry()?;
    ckpt.check_registry(&reg).map_err(train_err)?;
    ctx.check_branching(&ckpt)?;

    let section = ctx.config.heatmap.clone().unwrap_or_default();
    let (map, traces) = evalkit::heatmap(
        &ckpt,
        &reg,
        section.tasks_per_source,
        section.seed,
        section.k,
        section.dump_traces,
    )
    .map_err(eval_err)?;

    let mut manifest = ctx.manifest();
    write_artifact(
        &mut manifest,
        &ctx.out_dir,
        "heatmap.csv",
        &evalkit::heatmap_csv(&map),
    )?;
    if section.dump_traces {
        write_artifact(
            &mut manifest,
            &ctx.out_dir,
            "task_traces.jsonl",
            &evalkit::traces_jsonl(&traces),
        )?;
    }
    manifest.write(&ctx.out_dir)?;
    Ok(())
}

/// Trains and meta-tests the three model variants on shared seeds.
pub fn cmd_ablate(ctx: &Ctx) -> Result<(), CliError> {
    let reg = ctx.registry()?;
    let cfg = ctx.train_config();
    cfg.validate().map_err(train_err)?;
    let section = ctx.config.ablate.clone().unwrap_or_default();
    let rows = evalkit::ablate(
        &reg,
        &cfg,
        &section.seeds,
        section.tasks_per_source,
        section.eval_seed,
    )
    .map_err(eval_err)?;

    let mut manifest = ctx.manifest();
    write_artifact(
        &mut manifest,
        &ctx.out_dir,
        "ablation.csv",
        &evalkit::ablation_csv(&rows),
    )?;
    manifest.write(&ctx.out_dir)?;
    Ok(())
}

/// Structure sweep (trains per branching) and/or N-way sweep (evaluates
/// an existing checkpoint).
pub fn cmd_sweep(ctx: &Ctx) -> Result<(), CliError> {
    let reg = ctx.registry()?;
    let section = ctx.config.sweep.clone().unwrap_or_default();
    let mut manifest = ctx.manifest();

    let run_structure = section.branchings.is_some() || section.ways.is_none();
    if run_structure {
        let cfg = ctx.train_config();
        cfg.validate().map_err(train_err)?;
        let branchings = section
            .branchings
            .clone()
            .unwrap_or_else(evalkit::default_branchings);
        let rows = evalkit::structure_sweep(
            &reg,
            &cfg,
            &branchings,
            &section.seeds,
            section.tasks_per_source,
            section.eval_seed,
        )
        .map_err(eval_err)?;
        write_artifact(
            &mut manifest,
            &ctx.out_dir,
            "structure_sweep.csv",
            &evalkit::sweep_csv(&rows),
        )?;
    }

    if let Some(ways) = &section.ways {
        let ckpt = ctx.load_checkpoint()?;
        ckpt.check_registry(&reg).map_err(train_err)?;
        let ways = if ways.is_empty() {
            evalkit::default_ways()
        } else {
            ways.clone()
        };
        let rows = evalkit::nway_sweep(
            &ckpt,
            &reg,
            &ways,
            section.tasks_per_source,
            section.eval_seed,
        )
        .map_err(eval_err)?;
        write_artifact(
            &mut manifest,
            &ctx.out_dir,
            "nway_sweep.csv",
            &evalkit::nway_csv(&rows),
        )?;
    }

    manifest.write(&ctx.out_dir)?;
    Ok(())
}
