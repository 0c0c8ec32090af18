//! Prototypes and distance-softmax classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Tape, Var};

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("prototypes need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {0} has no support embeddings")]
    EmptyClass(usize),
    #[error("query labeled with unknown class `{0}`")]
    UnknownLabel(String),
}

/// Distance used inside the classification softmax. `Plain` is the
/// written form; `Squared` matches the original prototypical-network
/// lineage and is kept selectable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    #[default]
    Plain,
    Squared,
}

/// Classification loss reduction over a query set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Per-class mean support embeddings, aligned with their class ids.
pub struct PrototypeSet {
    pub prototypes: Vec<Var>,
    pub class_ids: Vec<String>,
}

impl PrototypeSet {
    pub fn n_way(&self) -> usize {
        self.prototypes.len()
    }

    pub fn position_of(&self, class_id: &str) -> Option<usize> {
        self.class_ids.iter().position(|c| c == class_id)
    }
}

/// Builds one prototype per class as the mean of its support embeddings.
pub fn prototypes(
    tape: &mut Tape,
    class_ids: &[String],
    support_embs: &[Vec<Var>],
) -> Result<PrototypeSet, ProtoError> {
    if class_ids.len() < 2 {
        return Err(ProtoError::TooFewClasses(class_ids.len()));
    }
    debug_assert_eq!(class_ids.len(), support_embs.len());
    let mut protos = Vec::with_capacity(class_ids.len());
    for (i, embs) in support_embs.iter().enumerate() {
        if embs.is_empty() {
            return Err(ProtoError::EmptyClass(i));
        }
        protos.push(tape.mean_pool(embs)?);
    }
    Ok(PrototypeSet {
        prototypes: protos,
        class_ids: class_ids.to_vec(),
    })
}

/// Probability distribution over the N classes: softmax of negative
/// (plain or squared) Euclidean distances to the prototypes.
pub fn classify(
    tape: &mut Tape,
    query_emb: Var,
    protos: &PrototypeSet,
    mode: DistanceMode,
) -> Result<Var, ProtoError> {
    let mut neg_dists = Vec::with_capacity(protos.n_way());
    for &p in &protos.prototypes {
        let d2 = tape.sq_euclidean(query_emb, p)?;
        let d = match mode {
            DistanceMode::Plain => tape.sqrt(d2),
            DistanceMode::Squared => d2,
        };
        neg_dists.push(tape.scale(d, -1.0));
    }
    let logits = tape.stack(&neg_dists)?;
    Ok(tape.softmax(logits)?)
}

/// Classification outcome for a whole query set.
pub struct ClsOutcome {
    pub loss: Var,
    /// One probability distribution per query, in input order.
    pub dists: Vec<Var>,
    /// The class position each query should predict.
    pub targets: Vec<usize>,
}

/// Cross-entropy of every query's distribution against its class,
/// reduced by sum (default) or mean.
pub fn cls_loss(
    tape: &mut Tape,
    protos: &PrototypeSet,
    queries: &[(Var, String)],
    mode: DistanceMode,
    reduction: Reduction,
) -> Result<ClsOutcome, ProtoError> {
    let mut dists = Vec::with_capacity(queries.len());
    let mut targets = Vec::with_capacity(queries.len());
    let mut terms = Vec::with_capacity(queries.len());
    for (emb, class_id) in queries {
        let target = protos
            .position_of(class_id)
            .ok_or_else(|| ProtoError::UnknownLabel(class_id.clone()))?;
        let dist = classify(tape, *emb, protos, mode)?;
        terms.push(tape.cross_entropy(dist, target)?);
        dists.push(dist);
        targets.push(target);
    }
    let total = tape.add_n(&terms)?;
    let loss = match reduction {
        Reduction::Sum => total,
        Reduction::Mean => tape.scale(total, 1.0 / terms.len() as f64),
    };
    Ok(ClsOutcome {
        loss,
        dists,
        targets,
    })
}

/// Index of the largest component (NaN-safe, ties to the first).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v.total_cmp(&values[best]) == std::cmp::Ordering::Greater {
            best = i;
        }
    }
    best
}
