//! Multi-source labeled text: loading, class-disjoint splits, and a
//! synthetic heterogeneous corpus generator for desk-scale experiments.
//!
//! External formats:
//! - corpus files: UTF-8 JSON lines, one `{"text","label","source"}`
//!   record per line;
//! - split manifest: JSON mapping source id to
//!   `{"train":[class ids],"val":[...],"test":[...]}`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const UNK: TokenId = 2;

/// Documents are truncated to this many tokens.
pub const MAX_LEN: usize = 450;

const RESERVED: [&str; 3] = ["<pad>", "<mask>", "<unk>"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{0}: file contains no records")]
    EmptyFile(PathBuf),
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),
    #[error("split fractions must sum to 1, got {0}")]
    BadFractions(f64),
    #[error("split `{split}` would receive {have} classes but {need} are required")]
    TooFewClasses {
        split: &'static str,
        have: usize,
        need: usize,
    },
    #[error("split manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
}

/// Token table with dense ids and fixed reserved entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn new() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn lookup(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Adds a corpus token, returning its id. Text tokens that collide with
    /// a reserved string map to UNK so reserved ids stay out of documents.
    pub fn add(&mut self, token: &str) -> TokenId {
        if RESERVED.contains(&token) {
            return UNK;
        }
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Looks a token up without growing the table; unknown maps to UNK.
    pub fn reuse(&self, token: &str) -> TokenId {
        if RESERVED.contains(&token) {
            return UNK;
        }
        self.lookup(token).unwrap_or(UNK)
    }

    /// Stable content hash (FNV-1a) for checkpoint compatibility checks.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= 0x1f;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;
    fn try_from(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()] != RESERVED.map(str::to_string)
        {
            return Err("vocab must start with the reserved tokens".to_string());
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(format!("duplicate vocab token `{t}`"));
            }
        }
        Ok(Vocab { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.tokens
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub tokens: Vec<TokenId>,
    pub label_name_tokens: Vec<TokenId>,
    pub source_id: String,
    pub class_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitId {
    Train,
    Val,
    Test,
}

impl SplitId {
    pub fn name(self) -> &'static str {
        match self {
            SplitId::Train => "train",
            SplitId::Val => "val",
            SplitId::Test => "test",
        }
    }
}

/// One source's documents grouped by class, with a per-class split
/// assignment once a split has been applied.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceDataset {
    pub source_id: String,
    classes: BTreeMap<String, Vec<Document>>,
    split: BTreeMap<String, SplitId>,
}

impl SourceDataset {
    pub fn class_ids(&self) -> impl Iterator<Item = &String> {
        self.classes.keys()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_documents(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn docs(&self, class_id: &str) -> Option<&[Document]> {
        self.classes.get(class_id).map(Vec::as_slice)
    }

    pub fn split_of(&self, class_id: &str) -> Option<SplitId> {
        self.split.get(class_id).copied()
    }

    /// Class ids assigned to `split`, in sorted order.
    pub fn classes_in(&self, split: SplitId) -> Vec<&String> {
        self.split
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn has_split(&self) -> bool {
        !self.split.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRegistry {
    pub sources: BTreeMap<String, SourceDataset>,
    pub vocab: Vocab,
}

impl CorpusRegistry {
    pub fn source_ids(&self) -> impl Iterator<Item = &String> {
        self.sources.keys()
    }

    pub fn source(&self, id: &str) -> Result<&SourceDataset, CorpusError> {
        self.sources
            .get(id)
            .ok_or_else(|| CorpusError::UnknownSource(id.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabPolicy {
    /// Unknown tokens are added to the vocabulary.
    Build,
    /// Unknown tokens map to UNK.
    Reuse,
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    label: String,
    source: String,
}

/// Loads one source's JSONL file. Every record must carry the same source
/// id; empty text or label fields are rejected with their line number.
pub fn load_jsonl(
    path: &Path,
    vocab: &mut Vocab,
    policy: VocabPolicy,
) -> Result<SourceDataset, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut classes: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    let mut source_id: Option<String> = None;
    let mut records = 0usize;

    for (idx, line) in content.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedLine {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        let rec: RawRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;

        match &source_id {
            None => source_id = Some(rec.source.clone()),
            Some(s) if *s != rec.source => {
                return Err(malformed(format!(
                    "source `{}` differs from this file's source `{s}`",
                    rec.source
                )))
            }
            _ => {}
        }

        let to_id = |tok: &str, vocab: &mut Vocab| match policy {
            VocabPolicy::Build => vocab.add(tok),
            VocabPolicy::Reuse => vocab.reuse(tok),
        };

        let mut tokens: Vec<TokenId> = tokenize(&rec.text)
            .iter()
            .map(|t| to_id(t, vocab))
            .collect();
        if tokens.is_empty() {
            return Err(malformed("empty text field".to_string()));
        }
        tokens.truncate(MAX_LEN);

        let label_name_tokens: Vec<TokenId> = tokenize(&rec.label)
            .iter()
            .map(|t| to_id(t, vocab))
            .collect();
        if label_name_tokens.is_empty() {
            return Err(malformed("empty label field".to_string()));
        }

        let doc = Document {
            tokens,
            label_name_tokens,
            source_id: rec.source,
            class_id: rec.label.clone(),
        };
        classes.entry(rec.label).or_default().push(doc);
        records += 1;
    }

    if records == 0 {
        return Err(CorpusError::EmptyFile(path.to_path_buf()));
    }
    Ok(SourceDataset {
        source_id: source_id.expect("records imply a source"),
        classes,
        split: BTreeMap::new(),
    })
}

/// Deterministically assigns whole classes to train/val/test.
///
/// Class ids are shuffled by `seed` and assigned contiguously; counts come
/// from rounding `fractions`. `min_classes` is the N-way requirement each
/// split must be able to serve.
pub fn split_by_class(
    ds: &SourceDataset,
    fractions: (f64, f64, f64),
    min_classes: usize,
    seed: u64,
) -> Result<SourceDataset, CorpusError> {
    let total = fractions.0 + fractions.1 + fractions.2;
    if (total - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(total));
    }
    let n = ds.classes.len();
    let mut ids: Vec<String> = ds.classes.keys().cloned().collect();
    let mut rng = Rng::derive(seed, &[0x5711]);
    rng.shuffle(&mut ids);

    let n_train = (n as f64 * fractions.0).round() as usize;
    let n_val = (n as f64 * fractions.1).round() as usize;
    if n_train + n_val > n {
        return Err(CorpusError::BadFractions(total));
    }
    let n_test = n - n_train - n_val;
    for (name, have) in [
        ("train", n_train),
        ("val", n_val),
        ("test", n_test),
    ] {
        if have < min_classes {
            return Err(CorpusError::TooFewClasses {
                split: name,
                have,
                need: min_classes,
            });
        }
    }

    let mut split = BTreeMap::new();
    for (i, id) in ids.into_iter().enumerate() {
        let s = if i < n_train {
            SplitId::Train
        } else if i < n_train + n_val {
            SplitId::Val
        } else {
            SplitId::Test
        };
        split.insert(id, s);
    }
    Ok(SourceDataset {
        source_id: ds.source_id.clone(),
        classes: ds.classes.clone(),
        split,
    })
}

/// Shape of a generated heterogeneous corpus.
///
/// Each source owns a disjoint block of topic tokens, subdivided into one
/// sub-block per class. A document token comes from the class sub-block
/// with probability `divergence` and from the whole source block
/// otherwise, so `divergence = 0` collapses every class of a source onto
/// one distribution while source identity stays recoverable at any value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub sources: usize,
    pub classes_per_source: usize,
    pub docs_per_class: usize,
    pub doc_len: usize,
    pub vocab_size: usize,
    pub divergence: f64,
    #[serde(default = "default_fractions")]
    pub split: (f64, f64, f64),
}

fn default_fractions() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<CorpusRegistry, CorpusError> {
    if spec.sources == 0 || spec.classes_per_source == 0 || spec.docs_per_class == 0 {
        return Err(CorpusError::InvalidSpec(
            "sources, classes_per_source, and docs_per_class must be positive".into(),
        ));
    }
    if spec.doc_len == 0 || spec.doc_len > MAX_LEN {
        return Err(CorpusError::InvalidSpec(format!(
            "doc_len must be in 1..={MAX_LEN}"
        )));
    }
    if !(0.0..=1.0).contains(&spec.divergence) {
        return Err(CorpusError::InvalidSpec(
            "divergence must lie in [0, 1]".into(),
        ));
    }
    let per_source = spec.vocab_size / spec.sources;
    let per_class = per_source / spec.classes_per_source;
    if per_class == 0 {
        return Err(CorpusError::InvalidSpec(format!(
            "vocab_size {} cannot give every class of every source a topic sub-block",
            spec.vocab_size
        )));
    }

    let mut vocab = Vocab::new();
    let topic_ids: Vec<TokenId> = (0..spec.vocab_size)
        .map(|i| vocab.add(&format!("tok{i}")))
        .collect();

    let mut sources = BTreeMap::new();
    let mut rng = Rng::derive(seed, &[0x10c5]);
    for m in 0..spec.sources {
        let source_id = format!("src{m}");
        let block = &topic_ids[m * per_source..(m + 1) * per_source];
        let mut classes: BTreeMap<String, Vec<Document>> = BTreeMap::new();
        for c in 0..spec.classes_per_source {
            let sub = &block[c * per_class..(c + 1) * per_class];
            // The class name is text about the class: its two leading
            // topic tokens (sub-blocks are disjoint, so the pair is
            // unique per class the way real label phrases are).
            let first = sub[0];
            let second = sub[1.min(sub.len() - 1)];
            let label = format!("{} {}", vocab.token(first), vocab.token(second));
            let label_name_tokens: Vec<TokenId> = vec![first, second];
            let mut docs = Vec::with_capacity(spec.docs_per_class);
            for _ in 0..spec.docs_per_class {
                let tokens: Vec<TokenId> = (0..spec.doc_len)
                    .map(|_| {
                        if rng.next_f64() < spec.divergence {
                            sub[rng.below(sub.len())]
                        } else {
                            block[rng.below(block.len())]
                        }
                    })
                    .collect();
                docs.push(Document {
                    tokens,
                    label_name_tokens: label_name_tokens.clone(),
                    source_id: source_id.clone(),
                    class_id: label.clone(),
                });
            }
            classes.insert(label, docs);
        }
        let unsplit = SourceDataset {
            source_id: source_id.clone(),
            classes,
            split: BTreeMap::new(),
        };
        let ds = split_by_class(&unsplit, spec.split, 1, seed ^ (m as u64).wrapping_mul(0x9e37))?;
        sources.insert(source_id, ds);
    }
    Ok(CorpusRegistry { sources, vocab })
}

/// Writes one source back out as JSON lines (text regenerated from ids).
pub fn write_jsonl(
    ds: &SourceDataset,
    vocab: &Vocab,
    path: &Path,
) -> Result<(), CorpusError> {
    let mut out = String::new();
    for docs in ds.classes.values() {
        for doc in docs {
            let text: Vec<&str> = doc.tokens.iter().map(|&t| vocab.token(t)).collect();
            let rec = serde_json::json!({
                "text": text.join(" "),
                "label": doc.class_id,
                "source": doc.source_id,
            });
            writeln!(out, "{rec}").expect("string write");
        }
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

type ManifestMap = BTreeMap<String, BTreeMap<String, Vec<String>>>;

/// Serializes every source's class split as the manifest JSON format.
pub fn split_manifest(reg: &CorpusRegistry) -> String {
    let mut manifest: ManifestMap = BTreeMap::new();
    for (source_id, ds) in &reg.sources {
        let mut entry = BTreeMap::new();
        for split in [SplitId::Train, SplitId::Val, SplitId::Test] {
            entry.insert(
                split.name().to_string(),
                ds.classes_in(split).into_iter().cloned().collect(),
            );
        }
        manifest.insert(source_id.clone(), entry);
    }
    serde_json::to_string_pretty(&manifest).expect("manifest serializes")
}

/// Applies a split manifest; every class of every source must be assigned
/// exactly once and no unknown classes or sources may appear.
pub fn apply_split_manifest(
    reg: &mut CorpusRegistry,
    manifest_text: &str,
) -> Result<(), CorpusError> {
    let manifest: ManifestMap = serde_json::from_str(manifest_text)
        .map_err(|e| CorpusError::ManifestMismatch(e.to_string()))?;
    for source_id in manifest.keys() {
        if !reg.sources.contains_key(source_id) {
            return Err(CorpusError::UnknownSource(source_id.clone()));
        }
    }
    for (source_id, ds) in reg.sources.iter_mut() {
        let entry = manifest.get(source_id).ok_or_else(|| {
            CorpusError::ManifestMismatch(format!("source `{source_id}` missing from manifest"))
        })?;
        let mut split = BTreeMap::new();
        for (name, split_id) in [
            ("train", SplitId::Train),
            ("val", SplitId::Val),
            ("test", SplitId::Test),
        ] {
            for class_id in entry.get(name).map(Vec::as_slice).unwrap_or(&[]) {
                if !ds.classes.contains_key(class_id) {
                    return Err(CorpusError::ManifestMismatch(format!(
                        "source `{source_id}` has no class `{class_id}`"
                    )));
                }
                if split.insert(class_id.clone(), split_id).is_some() {
                    return Err(CorpusError::ManifestMismatch(format!(
                        "class `{class_id}` assigned to more than one split"
                    )));
                }
            }
        }
        if split.len() != ds.classes.len() {
            return Err(CorpusError::ManifestMismatch(format!(
                "source `{source_id}`: {} of {} classes assigned",
                split.len(),
                ds.classes.len()
            )));
        }
        ds.split = split;
    }
    Ok(())
}

/// Loads a registry from per-source JSONL files plus a split manifest.
pub fn load_registry(
    paths: &[PathBuf],
    manifest_path: &Path,
) -> Result<CorpusRegistry, CorpusError> {
    let mut vocab = Vocab::new();
    let mut sources = BTreeMap::new();
    for path in paths {
        let ds = load_jsonl(path, &mut vocab, VocabPolicy::Build)?;
        sources.insert(ds.source_id.clone(), ds);
    }
    if sources.is_empty() {
        return Err(CorpusError::InvalidSpec("no corpus files given".into()));
    }
    let mut reg = CorpusRegistry { sources, vocab };
    let manifest_text =
        fs::read_to_string(manifest_path).map_err(|source| CorpusError::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
    apply_split_manifest(&mut reg, &manifest_text)?;
    Ok(reg)
}
