//! Run configuration: one JSON document, strict about unknown keys, with
//! repeatable `--override key.path=value` edits applied before parsing.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use fstc_core::corpus::SynthSpec;
use fstc_core::trainer::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for corpus synthesis (and the default train seed via --seed).
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub heatmap: Option<HeatmapSection>,
    #[serde(default)]
    pub ablate: Option<AblateSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum CorpusSection {
    /// Generate a synthetic registry in memory (requires `seed`).
    Synth(SynthSpec),
    /// Load JSONL files plus a split manifest.
    Files {
        paths: Vec<PathBuf>,
        manifest: PathBuf,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub q: Option<usize>,
    pub tasks_per_source: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n: None,
            k: None,
            q: None,
            tasks_per_source: 1000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSection {
    pub tasks_per_source: usize,
    pub seed: u64,
    /// Shot count override for the sampled tasks (the reference analysis
    /// uses 1-shot); defaults to the checkpoint's configured k.
    pub k: Option<usize>,
    pub dump_traces: bool,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        HeatmapSection {
            tasks_per_source: 1000,
            seed: 1,
            k: None,
            dump_traces: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub tasks_per_source: usize,
    pub eval_seed: u64,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            seeds: vec![1, 2, 3, 4, 5],
            tasks_per_source: 1000,
            eval_seed: 1,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Tree structures to train and compare; `None` means the default set.
    pub branchings: Option<Vec<Vec<usize>>>,
    /// Way counts to evaluate a trained checkpoint at.
    pub ways: Option<Vec<usize>>,
    pub seeds: Vec<u64>,
    pub tasks_per_source: usize,
    pub eval_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            branchings: None,
            ways: None,
            seeds: vec![1, 2, 3],
            tasks_per_source: 1000,
            eval_seed: 1,
        }
    }
}

/// Parses one `key.path=value` override. Values parse as JSON scalars
/// first and fall back to strings.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value), CliError> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{text}` must look like key.path=value")))?;
    if path.is_empty() {
        return Err(CliError::Usage(format!("override `{text}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.split('.').map(str::to_string).collect(), value))
}

fn apply_override(root: &mut Value, path: &[String], value: Value) -> Result<(), CliError> {
    let mut node = root;
    for key in &path[..path.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::Config(format!("override path `{}` crosses a non-object", key))
        })?;
        node = obj.entry(key.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| {
        CliError::Config("override path ends inside a non-object".to_string())
    })?;
    obj.insert(path.last().expect("nonempty path").clone(), value);
    Ok(())
}

/// Loads the config file, applies overrides, then deserializes strictly.
/// Returns the parsed config plus the resolved JSON for the run manifest.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<(RunConfig, Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for entry in overrides {
        let (path, v) = parse_override(entry)?;
        apply_override(&mut value, &path, v)?;
    }
    let cfg: RunConfig = serde_json::from_value(value.clone())
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, value))
}
