//! Dense f64 arrays, a named parameter store, and reverse-mode
//! differentiation over a per-pass operation tape.
//!
//! Everything downstream (encoder, clustering tree, modulation, losses)
//! is built from the operations here, so gradient correctness is checked
//! against central finite differences in [`check::finite_diff_check`].

mod array;
pub mod check;
mod store;
mod tape;

pub use array::Array;
pub use check::finite_diff_check;
pub use store::ParameterStore;
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("unknown parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParameter(String),
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("invalid array: shape {shape:?} does not match {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
}

/// Elementwise max(0, x). The derivative at exactly 0 is taken to be 0.
pub fn relu(x: &Array) -> Array {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Elementwise hyperbolic tangent.
pub fn tanh(x: &Array) -> Array {
    x.map(f64::tanh)
}

/// Wx + b for a 2-D weight, 1-D input, and 1-D bias.
pub fn affine(w: &Array, x: &Array, b: &Array) -> Result<Array, NumericsError> {
    let (rows, cols) = w.dims2("affine")?;
    if x.shape() != [cols] || b.shape() != [rows] {
        return Err(NumericsError::ShapeMismatch {
            op: "affine",
            detail: format!(
                "w {:?}, x {:?}, b {:?}",
                w.shape(),
                x.shape(),
                b.shape()
            ),
        });
    }
    let mut out = vec![0.0; rows];
    let wv = w.values();
    let xv = x.values();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &wv[i * cols..(i + 1) * cols];
        let mut acc = b.values()[i];
        for (wij, xj) in row.iter().zip(xv) {
            acc += wij * xj;
        }
        *o = acc;
    }
    Array::new(vec![rows], out)
}

/// Wᵀx + b for a 2-D weight stored input-major (shape [n, m], input length n).
pub fn affine_t(w: &Array, x: &Array, b: &Array) -> Result<Array, NumericsError> {
    let (rows, cols) = w.dims2("affine_t")?;
    if x.shape() != [rows] || b.shape() != [cols] {
        return Err(NumericsError::ShapeMismatch {
            op: "affine_t",
            detail: format!(
                "w {:?}, x {:?}, b {:?}",
                w.shape(),
                x.shape(),
                b.shape()
            ),
        });
    }
    let mut out = b.values().to_vec();
    let wv = w.values();
    for (i, xi) in x.values().iter().enumerate() {
        let row = &wv[i * cols..(i + 1) * cols];
        for (o, wik) in out.iter_mut().zip(row) {
            *o += xi * wik;
        }
    }
    Array::new(vec![cols], out)
}

/// Elementwise mean of a nonempty sequence of same-shaped arrays.
pub fn mean_pool(xs: &[&Array]) -> Result<Array, NumericsError> {
    let first = xs.first().ok_or(NumericsError::EmptyInput { op: "mean_pool" })?;
    let mut acc = first.values().to_vec();
    for x in &xs[1..] {
        if x.shape() != first.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mean_pool",
                detail: format!("{:?} vs {:?}", first.shape(), x.shape()),
            });
        }
        for (a, v) in acc.iter_mut().zip(x.values()) {
            *a += v;
        }
    }
    let n = xs.len() as f64;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Array::new(first.shape().to_vec(), acc)
}

/// Σ (a_i − b_i)² over two equal-length 1-D arrays.
pub fn sq_euclidean(a: &Array, b: &Array) -> Result<f64, NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::ShapeMismatch {
            op: "sq_euclidean",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Max-stabilized softmax over a nonempty 1-D array.
pub fn softmax(logits: &Array) -> Result<Array, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptyInput { op: "softmax" });
    }
    let m = logits
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.values().iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    Array::new(logits.shape().to_vec(), out)
}

/// −log dist[target] for a probability vector.
pub fn cross_entropy(dist: &Array, target: usize) -> Result<f64, NumericsError> {
    if target >= dist.len() {
        return Err(NumericsError::IndexOutOfRange {
            op: "cross_entropy",
            index: target,
            len: dist.len(),
        });
    }
    Ok(-dist.values()[target].ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(vals: &[f64]) -> Array {
        Array::new(vec![vals.len()], vals.to_vec()).unwrap()
    }

    #[test]
    fn relu_sign_cases() {
        assert_eq!(relu(&vec1(&[1.0])).values(), &[1.0]);
        assert_eq!(relu(&vec1(&[-2.0, 0.0, 3.0])).values(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn tanh_odd_and_saturating() {
        assert_eq!(tanh(&vec1(&[0.0])).values(), &[0.0]);
        assert!((tanh(&vec1(&[1e9])).values()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_identity_zero_and_hand_case() {
        let eye = Array::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = vec1(&[3.0, 4.0]);
        let zero_b = vec1(&[0.0, 0.0]);
        assert_eq!(affine(&eye, &x, &zero_b).unwrap().values(), &[3.0, 4.0]);

        let zeros = Array::zeros(vec![2, 2]);
        let b = vec1(&[1.0, 2.0]);
        assert_eq!(affine(&zeros, &x, &b).unwrap().values(), &[1.0, 2.0]);

        // [[1,1],[1,-1]] (2,3) + (0,1) = (5,0)
        let w = Array::new(vec![2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let x = vec1(&[2.0, 3.0]);
        let b = vec1(&[0.0, 1.0]);
        assert_eq!(affine(&w, &x, &b).unwrap().values(), &[5.0, 0.0]);
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        let w = Array::zeros(vec![2, 3]);
        let x = vec1(&[1.0, 2.0]);
        let b = vec1(&[0.0, 0.0]);
        assert!(affine(&w, &x, &b).is_err());
    }

    #[test]
    fn affine_t_matches_transposed_affine() {
        let w = Array::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = vec1(&[1.0, -1.0]);
        let b = vec1(&[0.5, 0.0, -0.5]);
        // wᵀ rows: (1,4),(2,5),(3,6); wᵀx = (-3,-3,-3)
        assert_eq!(affine_t(&w, &x, &b).unwrap().values(), &[-2.5, -3.0, -3.5]);
    }

    #[test]
    fn mean_pool_cases() {
        let a = vec1(&[0.0, 0.0]);
        let b = vec1(&[2.0, 2.0]);
        assert_eq!(mean_pool(&[&a, &b]).unwrap().values(), &[1.0, 1.0]);

        let s = vec1(&[5.0]);
        assert_eq!(mean_pool(&[&s]).unwrap().values(), &[5.0]);

        let c = vec1(&[1.0, 2.0]);
        let d = vec1(&[3.0, 4.0]);
        let e = vec1(&[5.0, 6.0]);
        assert_eq!(mean_pool(&[&c, &d, &e]).unwrap().values(), &[3.0, 4.0]);

        assert!(mean_pool(&[]).is_err());
    }

    #[test]
    fn sq_euclidean_cases() {
        let a = vec1(&[1.0, 0.0]);
        assert_eq!(sq_euclidean(&a, &a).unwrap(), 0.0);
        let b = vec1(&[0.0, 1.0]);
        assert_eq!(sq_euclidean(&a, &b).unwrap(), 2.0);
        let c = vec1(&[3.0, 4.0]);
        let o = vec1(&[0.0, 0.0]);
        assert_eq!(sq_euclidean(&c, &o).unwrap(), 25.0);
    }

    #[test]
    fn softmax_symmetry_and_value() {
        let p = softmax(&vec1(&[0.0, 0.0])).unwrap();
        assert_eq!(p.values(), &[0.5, 0.5]);

        let p = softmax(&vec1(&[1.0, 0.0])).unwrap();
        assert!((p.values()[0] - 0.73106).abs() < 1e-5);
        assert!((p.values()[1] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn softmax_is_stabilized() {
        let p = softmax(&vec1(&[1000.0, 0.0])).unwrap();
        assert!((p.values()[0] - 1.0).abs() < 1e-12);
        assert!(p.values()[1].abs() < 1e-12);
        assert!(p.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = vec1(&[0.2; 5]);
        for t in 0..5 {
            assert!((cross_entropy(&uniform, t).unwrap() - 5.0_f64.ln()).abs() < 1e-12);
        }
        let certain = vec1(&[1.0, 0.0]);
        assert_eq!(cross_entropy(&certain, 0).unwrap(), 0.0);

        let p = softmax(&vec1(&[1.0, 0.0])).unwrap();
        assert!((cross_entropy(&p, 1).unwrap() - 1.31326).abs() < 1e-4);

        assert!(cross_entropy(&certain, 2).is_err());
    }

    #[test]
    fn forward_ops_are_deterministic() {
        let mut r = crate::rng::Rng::new(17);
        let x = Array::from_fn(vec![6], || r.uniform(-2.0, 2.0));
        let w = Array::from_fn(vec![4, 6], || r.uniform(-1.0, 1.0));
        let b = Array::from_fn(vec![4], || r.uniform(-1.0, 1.0));
        assert_eq!(relu(&x).values(), relu(&x).values());
        assert_eq!(tanh(&x).values(), tanh(&x).values());
        assert_eq!(
            affine(&w, &x, &b).unwrap().values(),
            affine(&w, &x, &b).unwrap().values()
        );
        let pooled_a = mean_pool(&[&x, &x]).unwrap();
        let pooled_b = mean_pool(&[&x, &x]).unwrap();
        assert_eq!(pooled_a.values(), pooled_b.values());
    }

    #[test]
    fn softmax_permutation_equivariance_randomized() {
        let mut r = crate::rng::Rng::new(23);
        for _ in 0..100 {
            let n = 2 + r.below(7);
            let x = Array::from_fn(vec![n], || r.uniform(-30.0, 30.0));
            let p = softmax(&x).unwrap();
            let total: f64 = p.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);

            let mut perm: Vec<usize> = (0..n).collect();
            r.shuffle(&mut perm);
            let xp = Array::new(
                vec![n],
                perm.iter().map(|&i| x.values()[i]).collect(),
            )
            .unwrap();
            let pp = softmax(&xp).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                assert!((pp.values()[j] - p.values()[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sq_euclidean_nonnegative_zero_iff_equal() {
        let mut r = crate::rng::Rng::new(31);
        for _ in 0..100 {
            let n = 1 + r.below(8);
            let a = Array::from_fn(vec![n], || r.uniform(-3.0, 3.0));
            let b = Array::from_fn(vec![n], || r.uniform(-3.0, 3.0));
            let d = sq_euclidean(&a, &b).unwrap();
            assert!(d >= 0.0);
            if a.values() != b.values() {
                assert!(d > 0.0);
            }
            assert_eq!(sq_euclidean(&a, &a).unwrap(), 0.0);
        }
    }
}
