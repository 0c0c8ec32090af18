//! Cluster-conditioned feature transformation: γ and β are generated
//! from the concatenated task embedding and applied to every sample
//! embedding as v = relu((1+γ)⊙h + β) + h before prototypical inference.

use thiserror::Error;

use crate::numerics::{NumericsError, ParameterStore, Tape, Var};

pub const KEY_GAMMA_W: &str = "mod.gamma_w";
pub const KEY_GAMMA_B: &str = "mod.gamma_b";
pub const KEY_BETA_W: &str = "mod.beta_w";
pub const KEY_BETA_B: &str = "mod.beta_b";

#[derive(Debug, Error)]
pub enum ModulateError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Generator shapes: each of γ and β maps the 2·d_g task embedding to a
/// d_h-wide vector.
pub fn param_specs(d_h: usize, d_g: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (KEY_GAMMA_W.to_string(), vec![d_h, 2 * d_g]),
        (KEY_GAMMA_B.to_string(), vec![d_h]),
        (KEY_BETA_W.to_string(), vec![d_h, 2 * d_g]),
        (KEY_BETA_B.to_string(), vec![d_h]),
    ]
}

pub struct ModulatorVars {
    pub gamma_w: Var,
    pub gamma_b: Var,
    pub beta_w: Var,
    pub beta_b: Var,
}

impl ModulatorVars {
    pub fn bind(tape: &mut Tape, store: &ParameterStore) -> Result<Self, ModulateError> {
        Ok(ModulatorVars {
            gamma_w: tape.param(KEY_GAMMA_W, store)?,
            gamma_b: tape.param(KEY_GAMMA_B, store)?,
            beta_w: tape.param(KEY_BETA_W, store)?,
            beta_b: tape.param(KEY_BETA_B, store)?,
        })
    }
}

/// γ = relu(W_γ g_T + b_γ), β = relu(W_β g_T + b_β).
pub fn gamma_beta(
    tape: &mut Tape,
    vars: &ModulatorVars,
    g_t: Var,
) -> Result<(Var, Var), ModulateError> {
    let g_pre = tape.affine(vars.gamma_w, g_t, vars.gamma_b)?;
    let gamma = tape.relu(g_pre);
    let b_pre = tape.affine(vars.beta_w, g_t, vars.beta_b)?;
    let beta = tape.relu(b_pre);
    Ok((gamma, beta))
}

/// Residual affine transform v = relu((1+γ)⊙h + β) + h.
pub fn transform(tape: &mut Tape, h: Var, gamma: Var, beta: Var) -> Result<Var, ModulateError> {
    let scale = tape.add_const(gamma, 1.0);
    let scaled = tape.mul(scale, h)?;
    let shifted = tape.add(scaled, beta)?;
    let rectified = tape.relu(shifted);
    Ok(tape.add(rectified, h)?)
}
