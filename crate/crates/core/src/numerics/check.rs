//! Central finite-difference gradient verification.
//!
//! This is the independent oracle for every reverse-mode gradient in the
//! crate: it re-evaluates the loss with per-coordinate perturbations and
//! never looks at the tape's backward pass except to compare against it.

use std::collections::BTreeMap;

use super::{NumericsError, ParameterStore, Tape, Var};

/// Worst relative disagreement between reverse-mode gradients and central
/// finite differences over every coordinate of every parameter.
///
/// `loss_fn` must deterministically rebuild the same scalar loss from the
/// store. The comparison denominator is softened by 1e-3 so coordinates
/// whose true gradient sits below the finite-difference noise floor do not
/// dominate the result.
pub fn finite_diff_check<E, F>(
    store: &mut ParameterStore,
    eps: f64,
    loss_fn: F,
) -> Result<f64, E>
where
    E: From<NumericsError>,
    F: Fn(&ParameterStore, &mut Tape) -> Result<Var, E>,
{
    // Analytic gradients once.
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss, store).map_err(E::from)?;
    let analytic: BTreeMap<String, Vec<f64>> = store
        .grads()
        .map(|(k, g)| (k.clone(), g.values().to_vec()))
        .collect();

    let eval = |store: &ParameterStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        Ok(tape.value(loss).item())
    };

    let keys: Vec<String> = store.keys().cloned().collect();
    let mut worst: f64 = 0.0;
    for key in keys {
        let len = store.get(&key).map_err(E::from)?.len();
        for (i, &a) in analytic[&key].iter().enumerate().take(len) {
            let orig = store.get(&key).map_err(E::from)?.values()[i];
            store.get_mut(&key).map_err(E::from)?.values_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(&key).map_err(E::from)?.values_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(&key).map_err(E::from)?.values_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-3);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Array;
    use crate::rng::Rng;

    #[test]
    fn linear_loss_is_exact() {
        let mut store = ParameterStore::new();
        store
            .insert("x", Array::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap())
            .unwrap();
        let err = finite_diff_check::<NumericsError, _>(&mut store, 1e-5, |s, tape| {
            let x = tape.param("x", s)?;
            let doubled = tape.scale(x, 2.0);
            let shifted = tape.add_const(doubled, 1.0);
            let pooled = tape.mean_pool(&[shifted])?;
            let a = tape.pick(pooled, 0)?;
            let b = tape.pick(pooled, 1)?;
            let c = tape.pick(pooled, 2)?;
            let ab = tape.add(a, b)?;
            tape.add(ab, c)
        })
        .unwrap();
        assert!(err < 1e-10, "linear loss err {err}");
    }

    #[test]
    fn constant_loss_both_zero() {
        let mut store = ParameterStore::new();
        store
            .insert("x", Array::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let err = finite_diff_check::<NumericsError, _>(&mut store, 1e-5, |_s, tape| {
            let c = tape.input(Array::scalar(7.0));
            Ok(c)
        })
        .unwrap();
        assert_eq!(err, 0.0);
        assert_eq!(store.grad("x").unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_softmax_affine_matches() {
        let mut rng = Rng::new(101);
        let mut store = ParameterStore::new();
        store
            .insert("w", Array::from_fn(vec![4, 3], || rng.uniform(-1.0, 1.0)))
            .unwrap();
        store
            .insert("x", Array::from_fn(vec![3], || rng.uniform(-1.0, 1.0)))
            .unwrap();
        store
            .insert("b", Array::from_fn(vec![4], || rng.uniform(-1.0, 1.0)))
            .unwrap();
        let err = finite_diff_check::<NumericsError, _>(&mut store, 1e-5, |s, tape| {
            let w = tape.param("w", s)?;
            let x = tape.param("x", s)?;
            let b = tape.param("b", s)?;
            let logits = tape.affine(w, x, b)?;
            let dist = tape.softmax(logits)?;
            tape.cross_entropy(dist, 2)
        })
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }

    /// One expression exercising every tape operation, checked on random
    /// small shapes for 100 trials.
    #[test]
    fn randomized_composite_expression_matches() {
        let mut rng = Rng::new(2024);
        for trial in 0..100 {
            let d = 2 + rng.below(6); // ≤ 8 per the shape budget
            let rows = 2 + rng.below(4);
            let mut store = ParameterStore::new();
            let mut rv = |lo: f64, hi: f64| rng.uniform(lo, hi);
            store
                .insert("table", Array::from_fn(vec![rows + 2, d], || rv(-1.0, 1.0)))
                .unwrap();
            store
                .insert("w", Array::from_fn(vec![d, d], || rv(-1.0, 1.0)))
                .unwrap();
            store
                .insert("b", Array::from_fn(vec![d], || rv(-1.0, 1.0)))
                .unwrap();
            store
                .insert("wt", Array::from_fn(vec![d, rows], || rv(-1.0, 1.0)))
                .unwrap();
            store
                .insert("bt", Array::from_fn(vec![rows], || rv(-1.0, 1.0)))
                .unwrap();
            store
                .insert("center", Array::from_fn(vec![2 * d], || rv(-1.0, 1.0)))
                .unwrap();
            let idx: Vec<usize> = (0..3).map(|_| rng.below(rows + 2)).collect();

            let err = finite_diff_check::<NumericsError, _>(&mut store, 1e-5, |s, tape| {
                let table = tape.param("table", s)?;
                let w = tape.param("w", s)?;
                let b = tape.param("b", s)?;
                let wt = tape.param("wt", s)?;
                let bt = tape.param("bt", s)?;
                let center = tape.param("center", s)?;

                let e = tape.embed_mean(table, &idx)?;
                let pre = tape.affine(w, e, b)?;
                let h = tape.tanh(pre);
                let r = tape.relu(h);
                let m = tape.mean_pool(&[h, r])?;
                let prod = tape.mul(m, h)?;
                let summed = tape.add_n(&[prod, m, h])?;
                let both = tape.concat(summed, h)?;
                let d2 = tape.sq_euclidean(both, center)?;
                let dist = tape.sqrt(d2);
                let neg = tape.scale(dist, -1.0);
                let shifted = tape.add_const(neg, 0.25);

                let logits = tape.affine_t(wt, h, bt)?;
                let p = tape.softmax(logits)?;
                let ce = tape.cross_entropy(p, 1)?;
                let p0 = tape.pick(p, 0)?;
                let scaled = tape.scale_by(p0, shifted)?;
                let pair = tape.stack(&[scaled, ce])?;
                let q = tape.softmax(pair)?;
                tape.cross_entropy(q, 0)
            })
            .unwrap();
            assert!(err < 1e-4, "trial {trial}: err {err}");
        }
    }
}
