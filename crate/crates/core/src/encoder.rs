//! Trainable text encoder: averaged token embeddings followed by one
//! tanh projection, plus a masked-LM output head over the vocabulary.
//!
//! The encoder is a bag of embeddings, so it is order-invariant and all
//! masked positions of a sequence share one context vector; the head's
//! job is to supply gradient signal for task embeddings, not positional
//! predictions.

use thiserror::Error;

use crate::corpus::{TokenId, MASK, PAD};
use crate::numerics::{NumericsError, ParameterStore, Tape, Var};

pub const KEY_EMBEDDING: &str = "encoder.embedding";
pub const KEY_PROJ_W: &str = "encoder.proj_w";
pub const KEY_PROJ_B: &str = "encoder.proj_b";
pub const KEY_MLM_W: &str = "encoder.mlm_w";
pub const KEY_MLM_B: &str = "encoder.mlm_b";

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("mlm_logits requires at least one MASK token")]
    NoMaskPresent,
    #[error("tied MLM head requires d_emb == d_h, got {d_emb} and {d_h}")]
    TieShape { d_emb: usize, d_h: usize },
}

/// Parameter shapes for a vocabulary of `vocab` tokens. When the head is
/// tied it reuses the embedding table and `d_emb` must equal `d_h`.
pub fn param_specs(
    vocab: usize,
    d_emb: usize,
    d_h: usize,
    tied: bool,
) -> Result<Vec<(String, Vec<usize>)>, EncoderError> {
    if tied && d_emb != d_h {
        return Err(EncoderError::TieShape { d_emb, d_h });
    }
    let mut specs = vec![
        (KEY_EMBEDDING.to_string(), vec![vocab, d_emb]),
        (KEY_PROJ_W.to_string(), vec![d_h, d_emb]),
        (KEY_PROJ_B.to_string(), vec![d_h]),
        (KEY_MLM_B.to_string(), vec![vocab]),
    ];
    if !tied {
        specs.push((KEY_MLM_W.to_string(), vec![d_h, vocab]));
    }
    Ok(specs)
}

/// Tape-bound encoder parameters for one forward pass.
pub struct EncoderVars {
    pub embedding: Var,
    pub proj_w: Var,
    pub proj_b: Var,
    pub mlm_w: Option<Var>,
    pub mlm_b: Var,
    vocab: usize,
}

impl EncoderVars {
    pub fn bind(tape: &mut Tape, store: &ParameterStore, tied: bool) -> Result<Self, EncoderError> {
        let embedding = tape.param(KEY_EMBEDDING, store)?;
        let vocab = tape.value(embedding).shape()[0];
        Ok(EncoderVars {
            embedding,
            proj_w: tape.param(KEY_PROJ_W, store)?,
            proj_b: tape.param(KEY_PROJ_B, store)?,
            mlm_w: if tied {
                None
            } else {
                Some(tape.param(KEY_MLM_W, store)?)
            },
            mlm_b: tape.param(KEY_MLM_B, store)?,
            vocab,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }
}

/// Sentence embedding: tanh(W · mean(non-PAD token embeddings) + b).
pub fn encode(tape: &mut Tape, enc: &EncoderVars, tokens: &[TokenId]) -> Result<Var, EncoderError> {
    if let Some(&bad) = tokens.iter().find(|&&t| t >= enc.vocab) {
        return Err(EncoderError::TokenOutOfRange {
            id: bad,
            vocab: enc.vocab,
        });
    }
    let ids: Vec<usize> = tokens.iter().copied().filter(|&t| t != PAD).collect();
    if ids.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let pooled = tape.embed_mean(enc.embedding, &ids)?;
    let pre = tape.affine(enc.proj_w, pooled, enc.proj_b)?;
    Ok(tape.tanh(pre))
}

/// Vocabulary logits shared by every masked position of `masked_tokens`
/// (the encoder pools the whole sequence into one context vector).
pub fn mlm_logits(
    tape: &mut Tape,
    enc: &EncoderVars,
    masked_tokens: &[TokenId],
) -> Result<Var, EncoderError> {
    if !masked_tokens.contains(&MASK) {
        return Err(EncoderError::NoMaskPresent);
    }
    let h = encode(tape, enc, masked_tokens)?;
    let logits = match enc.mlm_w {
        Some(w) => tape.affine_t(w, h, enc.mlm_b)?,
        None => tape.affine(enc.embedding, h, enc.mlm_b)?,
    };
    Ok(logits)
}
