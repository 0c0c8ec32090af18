//! Hierarchical task clustering: per-level learnable centers with a
//! Gaussian-kernel soft assignment, weighted tanh propagation from the
//! single root (the task embedding) to the single top node, and the
//! concatenated task representation used for feature modulation.
//!
//! The tree structure is fixed per run; the centers and per-cluster
//! transforms are ordinary learnable parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, ParameterStore, Tape, Var};

#[derive(Debug, Error)]
pub enum HtcError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid branching {0:?}: must be nonempty, all ≥ 1, ending in 1")]
    BadBranching(Vec<usize>),
    #[error("sigma_sq must be positive, got {0}")]
    BadSigma(f64),
}

/// Cluster counts per level from bottom to top (the last entry must be 1)
/// plus the Gaussian-kernel scale shared by every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub branching: Vec<usize>,
    pub sigma_sq: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            branching: vec![5, 3, 1],
            sigma_sq: 2.0,
        }
    }
}

impl TreeConfig {
    pub fn new(branching: Vec<usize>, sigma_sq: f64) -> Result<Self, HtcError> {
        let cfg = TreeConfig {
            branching,
            sigma_sq,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HtcError> {
        if self.branching.is_empty()
            || self.branching.contains(&0)
            || *self.branching.last().unwrap() != 1
        {
            return Err(HtcError::BadBranching(self.branching.clone()));
        }
        if !(self.sigma_sq.is_finite() && self.sigma_sq > 0.0) {
            return Err(HtcError::BadSigma(self.sigma_sq));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.branching.len()
    }
}

fn center_key(level: usize, cluster: usize) -> String {
    format!("tree.l{level}.c{cluster}.center")
}

fn weight_key(level: usize, cluster: usize) -> String {
    format!("tree.l{level}.c{cluster}.w")
}

fn bias_key(level: usize, cluster: usize) -> String {
    format!("tree.l{level}.c{cluster}.b")
}

/// Parameter shapes for a tree over `d_g`-wide task embeddings: one
/// center, one square transform, and one bias per cluster per level.
pub fn param_specs(cfg: &TreeConfig, d_g: usize) -> Result<Vec<(String, Vec<usize>)>, HtcError> {
    cfg.validate()?;
    let mut specs = Vec::new();
    for (li, &clusters) in cfg.branching.iter().enumerate() {
        let level = li + 1;
        for c in 0..clusters {
            specs.push((center_key(level, c), vec![d_g]));
            specs.push((weight_key(level, c), vec![d_g, d_g]));
            specs.push((bias_key(level, c), vec![d_g]));
        }
    }
    Ok(specs)
}

/// One level's tape-bound clusters.
pub struct TreeLevel {
    pub centers: Vec<Var>,
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

/// All levels bound for one forward pass.
pub struct TreeVars {
    pub levels: Vec<TreeLevel>,
}

impl TreeVars {
    pub fn bind(
        tape: &mut Tape,
        store: &ParameterStore,
        cfg: &TreeConfig,
    ) -> Result<Self, HtcError> {
        cfg.validate()?;
        let mut levels = Vec::with_capacity(cfg.levels());
        for (li, &clusters) in cfg.branching.iter().enumerate() {
            let level = li + 1;
            let mut centers = Vec::with_capacity(clusters);
            let mut weights = Vec::with_capacity(clusters);
            let mut biases = Vec::with_capacity(clusters);
            for c in 0..clusters {
                centers.push(tape.param(&center_key(level, c), store)?);
                weights.push(tape.param(&weight_key(level, c), store)?);
                biases.push(tape.param(&bias_key(level, c), store)?);
            }
            levels.push(TreeLevel {
                centers,
                weights,
                biases,
            });
        }
        Ok(TreeVars { levels })
    }
}

/// Soft assignment of `g` over a level's centers:
/// softmax of −‖g − c‖² / (2σ²).
pub fn assign(
    tape: &mut Tape,
    g: Var,
    centers: &[Var],
    sigma_sq: f64,
) -> Result<Var, HtcError> {
    if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
        return Err(HtcError::BadSigma(sigma_sq));
    }
    let mut logits = Vec::with_capacity(centers.len());
    for &c in centers {
        let d2 = tape.sq_euclidean(g, c)?;
        logits.push(tape.scale(d2, -1.0 / (2.0 * sigma_sq)));
    }
    let stacked = tape.stack(&logits)?;
    Ok(tape.softmax(stacked)?)
}

/// Next-level embeddings: each destination cluster's embedding is the
/// assignment-weighted sum of tanh(W·parent + b) over all parents.
pub fn propagate(
    tape: &mut Tape,
    parents: &[Var],
    assignments: &[Var],
    level: &TreeLevel,
) -> Result<Vec<Var>, HtcError> {
    debug_assert_eq!(parents.len(), assignments.len());
    let n_out = level.centers.len();
    let mut children = Vec::with_capacity(n_out);
    for dest in 0..n_out {
        let mut terms = Vec::with_capacity(parents.len());
        for (&parent, &assignment) in parents.iter().zip(assignments) {
            let pre = tape.affine(level.weights[dest], parent, level.biases[dest])?;
            let transformed = tape.tanh(pre);
            let weight = tape.pick(assignment, dest)?;
            terms.push(tape.scale_by(weight, transformed)?);
        }
        children.push(tape.add_n(&terms)?);
    }
    Ok(children)
}

/// A full pass through the tree, keeping each level's assignment vectors
/// and embeddings as tape nodes.
pub struct TreeRun {
    /// assignments[l][o] = parent o's distribution over level-(l+1) clusters.
    pub assignments: Vec<Vec<Var>>,
    /// embeddings[l] = the level-(l+1) cluster embeddings (level 0 is the root).
    pub embeddings: Vec<Vec<Var>>,
    pub g_in: Var,
    pub g_out: Var,
    /// g_in ⊕ g_out.
    pub g_t: Var,
}

/// Runs the tree from the single root `g_in` down to the single top node.
pub fn run_tree(
    tape: &mut Tape,
    g_in: Var,
    vars: &TreeVars,
    cfg: &TreeConfig,
) -> Result<TreeRun, HtcError> {
    cfg.validate()?;
    if vars.levels.len() != cfg.levels() {
        return Err(HtcError::BadBranching(cfg.branching.clone()));
    }
    let mut parents = vec![g_in];
    let mut assignments = Vec::with_capacity(cfg.levels());
    let mut embeddings = Vec::with_capacity(cfg.levels());
    for level in &vars.levels {
        let level_assign: Vec<Var> = parents
            .iter()
            .map(|&p| assign(tape, p, &level.centers, cfg.sigma_sq))
            .collect::<Result<_, _>>()?;
        let children = propagate(tape, &parents, &level_assign, level)?;
        assignments.push(level_assign);
        embeddings.push(children.clone());
        parents = children;
    }
    debug_assert_eq!(parents.len(), 1);
    let g_out = parents[0];
    let g_t = tape.concat(g_in, g_out)?;
    Ok(TreeRun {
        assignments,
        embeddings,
        g_in,
        g_out,
        g_t,
    })
}

/// Value-level record of one task's pass through the pipeline, exported
/// as JSON for cluster-usage analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub source_id: String,
    pub g_in: Vec<f64>,
    /// assignments[l][o] = row of soft assignments from parent o at level l.
    pub assignments: Vec<Vec<Vec<f64>>>,
    pub level_embeddings: Vec<Vec<Vec<f64>>>,
    pub g_out: Vec<f64>,
    pub g_t: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl TaskTrace {
    pub fn from_run(
        tape: &Tape,
        run: &TreeRun,
        source_id: &str,
        gamma: Var,
        beta: Var,
    ) -> Self {
        let grab = |v: &Var| tape.value(*v).values().to_vec();
        TaskTrace {
            source_id: source_id.to_string(),
            g_in: grab(&run.g_in),
            assignments: run
                .assignments
                .iter()
                .map(|level| level.iter().map(&grab).collect())
                .collect(),
            level_embeddings: run
                .embeddings
                .iter()
                .map(|level| level.iter().map(&grab).collect())
                .collect(),
            g_out: grab(&run.g_out),
            g_t: grab(&run.g_t),
            gamma: grab(&gamma),
            beta: grab(&beta),
        }
    }
}
