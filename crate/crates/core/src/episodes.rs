//! N-way K-shot episode sampling.
//!
//! Every episode draws all of its classes from a single source: a source
//! is chosen uniformly among those eligible for (N, K, Q), then N classes
//! without replacement, then K+Q documents per class without replacement
//! (the first K become support, the rest query).

use thiserror::Error;

use crate::corpus::{CorpusRegistry, Document, SplitId, TokenId};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(
        "no source in split `{split}` has {n} classes with at least {min_docs} documents each"
    )]
    NoEligibleSource {
        split: &'static str,
        n: usize,
        min_docs: usize,
    },
    #[error("source `{0}` not found")]
    UnknownSource(String),
}

/// One N-way K-shot task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub source_id: String,
    pub class_ids: Vec<String>,
    pub label_names: Vec<Vec<TokenId>>,
    /// N × K support documents, grouped by class position.
    pub support: Vec<Vec<Document>>,
    /// N × Q query documents, grouped by class position.
    pub query: Vec<Vec<Document>>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_ids.len()
    }
}

/// Reusable sampler with precomputed eligibility and an owned generator
/// whose state can be checkpointed.
pub struct EpisodeSampler<'a> {
    reg: &'a CorpusRegistry,
    n: usize,
    k: usize,
    q: usize,
    rng: Rng,
    /// (source id, class ids with ≥ K+Q docs), only sources with ≥ N such classes.
    eligible: Vec<(String, Vec<String>)>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(
        reg: &'a CorpusRegistry,
        split: SplitId,
        n: usize,
        k: usize,
        q: usize,
        seed: u64,
    ) -> Result<Self, EpisodeError> {
        Self::with_sources(reg, split, n, k, q, seed, None)
    }

    /// Restricts sampling to a single source.
    pub fn for_source(
        reg: &'a CorpusRegistry,
        source_id: &str,
        split: SplitId,
        n: usize,
        k: usize,
        q: usize,
        seed: u64,
    ) -> Result<Self, EpisodeError> {
        if !reg.sources.contains_key(source_id) {
            return Err(EpisodeError::UnknownSource(source_id.to_string()));
        }
        Self::with_sources(reg, split, n, k, q, seed, Some(source_id))
    }

    fn with_sources(
        reg: &'a CorpusRegistry,
        split: SplitId,
        n: usize,
        k: usize,
        q: usize,
        seed: u64,
        only: Option<&str>,
    ) -> Result<Self, EpisodeError> {
        let eligible = eligible_sources(reg, split, n, k, q, only);
        if eligible.is_empty() {
            return Err(EpisodeError::NoEligibleSource {
                split: split.name(),
                n,
                min_docs: k + q,
            });
        }
        Ok(EpisodeSampler {
            reg,
            n,
            k,
            q,
            rng: Rng::new(seed),
            eligible,
        })
    }

    pub fn rng_state(&self) -> u64 {
        self.rng.state()
    }

    pub fn set_rng_state(&mut self, state: u64) {
        self.rng.set_state(state);
    }

    pub fn next_episode(&mut self) -> Episode {
        draw(self.reg, &self.eligible, self.n, self.k, self.q, &mut self.rng)
    }
}

fn eligible_sources(
    reg: &CorpusRegistry,
    split: SplitId,
    n: usize,
    k: usize,
    q: usize,
    only: Option<&str>,
) -> Vec<(String, Vec<String>)> {
    let mut out = Vec::new();
    for (source_id, ds) in &reg.sources {
        if let Some(want) = only {
            if source_id != want {
                continue;
            }
        }
        let classes: Vec<String> = ds
            .classes_in(split)
            .into_iter()
            .filter(|c| ds.docs(c).map(|d| d.len() >= k + q).unwrap_or(false))
            .cloned()
            .collect();
        if classes.len() >= n {
            out.push((source_id.clone(), classes));
        }
    }
    out
}

fn draw(
    reg: &CorpusRegistry,
    eligible: &[(String, Vec<String>)],
    n: usize,
    k: usize,
    q: usize,
    rng: &mut Rng,
) -> Episode {
    let (source_id, classes) = &eligible[rng.below(eligible.len())];
    let ds = reg.sources.get(source_id).expect("eligible source exists");

    let class_picks = rng.choose_distinct(classes.len(), n);
    let mut class_ids = Vec::with_capacity(n);
    let mut label_names = Vec::with_capacity(n);
    let mut support = Vec::with_capacity(n);
    let mut query = Vec::with_capacity(n);

    for ci in class_picks {
        let class_id = classes[ci].clone();
        let docs = ds.docs(&class_id).expect("eligible class exists");
        let doc_picks = rng.choose_distinct(docs.len(), k + q);
        let sup: Vec<Document> = doc_picks[..k].iter().map(|&i| docs[i].clone()).collect();
        let qry: Vec<Document> = doc_picks[k..].iter().map(|&i| docs[i].clone()).collect();
        label_names.push(sup[0].label_name_tokens.clone());
        class_ids.push(class_id);
        support.push(sup);
        query.push(qry);
    }

    Episode {
        source_id: source_id.clone(),
        class_ids,
        label_names,
        support,
        query,
    }
}

/// Draws one episode with caller-owned generator state.
pub fn sample_episode(
    reg: &CorpusRegistry,
    split: SplitId,
    n: usize,
    k: usize,
    q: usize,
    rng: &mut Rng,
) -> Result<Episode, EpisodeError> {
    let eligible = eligible_sources(reg, split, n, k, q, None);
    if eligible.is_empty() {
        return Err(EpisodeError::NoEligibleSource {
            split: split.name(),
            n,
            min_docs: k + q,
        });
    }
    Ok(draw(reg, &eligible, n, k, q, rng))
}

/// `count` episodes from a seed-derived stream.
pub fn episode_stream(
    reg: &CorpusRegistry,
    split: SplitId,
    n: usize,
    k: usize,
    q: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>, EpisodeError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut sampler = EpisodeSampler::new(reg, split, n, k, q, seed)?;
    Ok((0..count).map(|_| sampler.next_episode()).collect())
}
