//! Label-oriented masking: support texts are extended with their label
//! name tokens, every label token is masked, and the model scores the
//! reconstruction. The same augmented (unmasked) sequences are pooled
//! into the task embedding.
//!
//! All operations here accept support documents only; query documents
//! never reach this module, which is what keeps the auxiliary objective
//! leak-free.

use thiserror::Error;

use crate::corpus::{Document, TokenId, MASK};
use crate::encoder::{self, EncoderError, EncoderVars};
use crate::numerics::{NumericsError, Tape, Var};

#[derive(Debug, Error)]
pub enum LomlmError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("label name of {label_len} tokens cannot fit max_len {max_len}")]
    LabelTooLong { label_len: usize, max_len: usize },
    #[error("no support samples given")]
    NoSupport,
}

/// A support text with its label name appended, the positions of the
/// label tokens, and the ids those positions must reconstruct.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub tokens: Vec<TokenId>,
    pub mask_positions: Vec<usize>,
    pub target_ids: Vec<TokenId>,
}

impl AugmentedSample {
    /// The input sequence for reconstruction: label positions replaced by MASK.
    pub fn masked(&self) -> Vec<TokenId> {
        let mut out = self.tokens.clone();
        for &p in &self.mask_positions {
            out[p] = MASK;
        }
        out
    }
}

/// Appends the label name tokens to the document text. When the
/// concatenation would exceed `max_len` the text is truncated first so
/// every label token survives.
pub fn augment(doc: &Document, max_len: usize) -> Result<AugmentedSample, LomlmError> {
    let label_len = doc.label_name_tokens.len();
    if label_len > max_len {
        return Err(LomlmError::LabelTooLong {
            label_len,
            max_len,
        });
    }
    let keep = doc.tokens.len().min(max_len - label_len);
    let mut tokens = doc.tokens[..keep].to_vec();
    let start = tokens.len();
    tokens.extend_from_slice(&doc.label_name_tokens);
    Ok(AugmentedSample {
        tokens,
        mask_positions: (start..start + label_len).collect(),
        target_ids: doc.label_name_tokens.clone(),
    })
}

/// Builds augmented samples for a whole N×K support set in class order.
pub fn augment_support(
    support: &[Vec<Document>],
    max_len: usize,
) -> Result<Vec<AugmentedSample>, LomlmError> {
    let mut out = Vec::new();
    for class_docs in support {
        for doc in class_docs {
            out.push(augment(doc, max_len)?);
        }
    }
    if out.is_empty() {
        return Err(LomlmError::NoSupport);
    }
    Ok(out)
}

/// Negative log-likelihood of every masked label token under the MLM
/// head, summed over samples and positions.
pub fn lomlm_loss(
    tape: &mut Tape,
    enc: &EncoderVars,
    samples: &[AugmentedSample],
) -> Result<Var, LomlmError> {
    if samples.is_empty() {
        return Err(LomlmError::NoSupport);
    }
    let mut terms = Vec::new();
    for sample in samples {
        let logits = encoder::mlm_logits(tape, enc, &sample.masked())?;
        let dist = tape.softmax(logits)?;
        for &target in &sample.target_ids {
            terms.push(tape.cross_entropy(dist, target)?);
        }
    }
    Ok(tape.add_n(&terms)?)
}

/// Mean embedding of the augmented (unmasked) support samples.
pub fn task_embedding(
    tape: &mut Tape,
    enc: &EncoderVars,
    samples: &[AugmentedSample],
) -> Result<Var, LomlmError> {
    let embs = encode_augmented(tape, enc, samples)?;
    Ok(pool_task_embedding(tape, &embs)?)
}

/// Embeddings of the augmented (unmasked) sequences, in sample order.
pub fn encode_augmented(
    tape: &mut Tape,
    enc: &EncoderVars,
    samples: &[AugmentedSample],
) -> Result<Vec<Var>, LomlmError> {
    if samples.is_empty() {
        return Err(LomlmError::NoSupport);
    }
    samples
        .iter()
        .map(|s| encoder::encode(tape, enc, &s.tokens).map_err(LomlmError::from))
        .collect()
}

/// Mean pooling of precomputed augmented-support embeddings.
pub fn pool_task_embedding(tape: &mut Tape, embs: &[Var]) -> Result<Var, NumericsError> {
    tape.mean_pool(embs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MAX_LEN;
    use crate::encoder::{param_specs, KEY_MLM_B, KEY_MLM_W};
    use crate::numerics::{finite_diff_check, Array, ParameterStore};
    use crate::rng::Rng;

    fn doc(tokens: Vec<TokenId>, label: Vec<TokenId>) -> Document {
        Document {
            tokens,
            label_name_tokens: label,
            source_id: "s".into(),
            class_id: "c".into(),
        }
    }

    fn store(vocab: usize, d: usize, seed: u64) -> ParameterStore {
        let mut rng = Rng::new(seed);
        let mut s = ParameterStore::new();
        for (key, shape) in param_specs(vocab, d, d, false).unwrap() {
            s.insert(&key, Array::from_fn(shape, || rng.uniform(-0.01, 0.01)))
                .unwrap();
        }
        s
    }

    #[test]
    fn augment_appends_and_records_positions() {
        let d = doc(vec![5, 6, 7], vec![8, 9]);
        let aug = augment(&d, MAX_LEN).unwrap();
        assert_eq!(aug.tokens, vec![5, 6, 7, 8, 9]);
        assert_eq!(aug.mask_positions, vec![3, 4]);
        assert_eq!(aug.target_ids, vec![8, 9]);
        assert_eq!(aug.masked(), vec![5, 6, 7, MASK, MASK]);
    }

    #[test]
    fn single_token_label_has_one_position() {
        let d = doc(vec![5], vec![9]);
        let aug = augment(&d, MAX_LEN).unwrap();
        assert_eq!(aug.mask_positions, vec![1]);
    }

    #[test]
    fn long_text_is_truncated_to_fit_label() {
        let d = doc(vec![5; 450], vec![8, 9]);
        let aug = augment(&d, 450).unwrap();
        assert_eq!(aug.tokens.len(), 450);
        assert_eq!(aug.mask_positions, vec![448, 449]);
        assert_eq!(&aug.tokens[448..], &[8, 9]);
    }

    #[test]
    fn label_longer_than_cap_is_rejected() {
        let d = doc(vec![5], vec![9; 6]);
        assert!(matches!(
            augment(&d, 5),
            Err(LomlmError::LabelTooLong { .. })
        ));
    }

    #[test]
    fn uniform_logits_give_ln_v_per_position() {
        // zero parameters → logits identically zero → uniform over |V|
        let vocab = 50;
        let mut s = store(vocab, 4, 1);
        *s.get_mut(KEY_MLM_W).unwrap() = Array::zeros(vec![4, vocab]);
        *s.get_mut(KEY_MLM_B).unwrap() = Array::zeros(vec![vocab]);
        let support = vec![
            vec![doc(vec![5, 6], vec![10, 11])],
            vec![doc(vec![7], vec![12, 13])],
        ];
        let samples = augment_support(&support, MAX_LEN).unwrap();
        let mut tape = Tape::new();
        let enc = EncoderVars::bind(&mut tape, &s, false).unwrap();
        let loss = lomlm_loss(&mut tape, &enc, &samples).unwrap();
        let expect = 4.0 * (vocab as f64).ln(); // N=2, K=1, T=2
        assert!((tape.value(loss).item() - expect).abs() < 1e-9);
    }

    #[test]
    fn confident_head_drives_loss_to_zero() {
        let vocab = 30;
        let mut s = store(vocab, 4, 2);
        *s.get_mut(KEY_MLM_W).unwrap() = Array::zeros(vec![4, vocab]);
        let mut bias = vec![0.0; vocab];
        bias[10] = 60.0;
        *s.get_mut(KEY_MLM_B).unwrap() = Array::new(vec![vocab], bias).unwrap();
        let support = vec![vec![doc(vec![5, 6], vec![10])], vec![doc(vec![7], vec![10])]];
        let samples = augment_support(&support, MAX_LEN).unwrap();
        let mut tape = Tape::new();
        let enc = EncoderVars::bind(&mut tape, &s, false).unwrap();
        let loss = lomlm_loss(&mut tape, &enc, &samples).unwrap();
        assert!(tape.value(loss).item() >= 0.0);
        assert!(tape.value(loss).item() < 1e-12);
    }

    #[test]
    fn duplicating_support_doubles_the_loss() {
        let s = store(40, 6, 3);
        let base = vec![vec![doc(vec![5, 6, 7], vec![8, 9])]];
        let doubled = vec![vec![
            doc(vec![5, 6, 7], vec![8, 9]),
            doc(vec![5, 6, 7], vec![8, 9]),
        ]];
        let mut tape = Tape::new();
        let enc = EncoderVars::bind(&mut tape, &s, false).unwrap();
        let l1 = lomlm_loss(
            &mut tape,
            &enc,
            &augment_support(&base, MAX_LEN).unwrap(),
        )
        .unwrap();
        let l2 = lomlm_loss(
            &mut tape,
            &enc,
            &augment_support(&doubled, MAX_LEN).unwrap(),
        )
        .unwrap();
        let (v1, v2) = (tape.value(l1).item(), tape.value(l2).item());
        assert!((v2 - 2.0 * v1).abs() < 1e-12);
        assert!(v1 > 0.0);
    }

    #[test]
    fn task_embedding_pools_augmented_samples() {
        let s = store(40, 6, 4);
        let a = vec![vec![doc(vec![5, 6], vec![8])]];
        let samples = augment_support(&a, MAX_LEN).unwrap();
        let mut tape = Tape::new();
        let enc = EncoderVars::bind(&mut tape, &s, false).unwrap();
        let g = task_embedding(&mut tape, &enc, &samples).unwrap();
        let direct = encoder::encode(&mut tape, &enc, &[5, 6, 8]).unwrap();
        assert_eq!(tape.value(g).values(), tape.value(direct).values());
    }

    #[test]
    fn task_embedding_is_order_invariant() {
        let s = store(40, 6, 5);
        let fwd = vec![
            vec![doc(vec![5, 6], vec![8])],
            vec![doc(vec![7, 9], vec![10])],
        ];
        let rev = vec![
            vec![doc(vec![7, 9], vec![10])],
            vec![doc(vec![5, 6], vec![8])],
        ];
        let mut tape = Tape::new();
        let enc = EncoderVars::bind(&mut tape, &s, false).unwrap();
        let ga = task_embedding(
            &mut tape,
            &enc,
            &augment_support(&fwd, MAX_LEN).unwrap(),
        )
        .unwrap();
        let gb = task_embedding(
            &mut tape,
            &enc,
            &augment_support(&rev, MAX_LEN).unwrap(),
        )
        .unwrap();
        assert_eq!(tape.value(ga).values(), tape.value(gb).values());
    }

    #[test]
    fn gradient_matches_finite_differences_on_toy_episode() {
        // 2-way 1-shot
        let mut s = store(12, 3, 6);
        let support = vec![
            vec![doc(vec![5, 6], vec![8])],
            vec![doc(vec![7], vec![9, 10])],
        ];
        let samples = augment_support(&support, MAX_LEN).unwrap();
        let err = finite_diff_check::<LomlmError, _>(&mut s, 1e-5, |store, tape| {
            let enc = EncoderVars::bind(tape, store, false)?;
            lomlm_loss(tape, &enc, &samples)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
