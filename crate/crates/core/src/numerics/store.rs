use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Array, NumericsError};

/// Named learnable arrays plus a same-keyed gradient slot per parameter.
///
/// Keys are unique; gradients always have the shape of their parameter.
/// Iteration order is the sorted key order, which the optimizer and the
/// clipper rely on for reproducibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    params: BTreeMap<String, Array>,
    grads: BTreeMap<String, Array>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore {
            params: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: &str, value: Array) -> Result<(), NumericsError> {
        if self.params.contains_key(key) {
            return Err(NumericsError::DuplicateParameter(key.to_string()));
        }
        self.grads
            .insert(key.to_string(), Array::zeros(value.shape().to_vec()));
        self.params.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&Array, NumericsError> {
        self.params
            .get(key)
            .ok_or_else(|| NumericsError::MissingParameter(key.to_string()))
    }

    pub fn get_mut(&mut self, key: &str) -> Result<&mut Array, NumericsError> {
        self.params
            .get_mut(key)
            .ok_or_else(|| NumericsError::MissingParameter(key.to_string()))
    }

    pub fn grad(&self, key: &str) -> Result<&Array, NumericsError> {
        self.grads
            .get(key)
            .ok_or_else(|| NumericsError::MissingParameter(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.params.iter()
    }

    pub fn grads(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.grads.iter()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.values_mut().fill(0.0);
        }
    }

    pub(crate) fn set_grad(&mut self, key: &str, grad: Array) {
        debug_assert_eq!(
            self.params.get(key).map(|p| p.shape().to_vec()),
            Some(grad.shape().to_vec())
        );
        self.grads.insert(key.to_string(), grad);
    }

    /// Scales every gradient in place.
    pub fn scale_grads(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            for v in g.values_mut() {
                *v *= factor;
            }
        }
    }

    /// Global l2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.values())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn params_map(&self) -> &BTreeMap<String, Array> {
        &self.params
    }

    /// Rebuilds a store (with zeroed gradients) from a saved parameter map.
    pub fn from_params(params: BTreeMap<String, Array>) -> Self {
        let grads = params
            .iter()
            .map(|(k, v)| (k.clone(), Array::zeros(v.shape().to_vec())))
            .collect();
        ParameterStore { params, grads }
    }
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_keys_rejected() {
        let mut s = ParameterStore::new();
        s.insert("a", Array::zeros(vec![2])).unwrap();
        assert!(s.insert("a", Array::zeros(vec![2])).is_err());
    }

    #[test]
    fn grads_match_param_shapes() {
        let mut s = ParameterStore::new();
        s.insert("w", Array::zeros(vec![3, 4])).unwrap();
        assert_eq!(s.grad("w").unwrap().shape(), &[3, 4]);
    }

    #[test]
    fn grad_norm_and_scaling() {
        let mut s = ParameterStore::new();
        s.insert("w", Array::zeros(vec![2])).unwrap();
        s.set_grad("w", Array::new(vec![2], vec![3.0, 4.0]).unwrap());
        assert_eq!(s.grad_norm(), 5.0);
        s.scale_grads(0.5);
        assert_eq!(s.grad("w").unwrap().values(), &[1.5, 2.0]);
    }
}
