use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Dense row-major array of f64 values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArrayRepr", into = "ArrayRepr")]
pub struct Array {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ArrayRepr {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<ArrayRepr> for Array {
    type Error = String;
    fn try_from(r: ArrayRepr) -> Result<Self, String> {
        Array::new(r.shape, r.values).map_err(|e| e.to_string())
    }
}

impl From<Array> for ArrayRepr {
    fn from(a: Array) -> Self {
        ArrayRepr {
            shape: a.shape,
            values: a.values,
        }
    }
}

impl Array {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NumericsError> {
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(NumericsError::BadShape {
                shape,
                len: values.len(),
            });
        }
        Ok(Array { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![],
            values: vec![v],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut() -> f64) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape,
            values: (0..n).map(|_| f()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1 && self.shape.is_empty()
    }

    /// The single value of a scalar (or 1-element) array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1, "item() on non-scalar");
        self.values[0]
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize), NumericsError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(NumericsError::ShapeMismatch {
                op,
                detail: format!("expected 2-D, got {other:?}"),
            }),
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Array::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Array::new(vec![3], vec![1.0, 2.0, 3.0]).is_ok());
        assert!(Array::new(vec![], vec![1.0]).is_ok());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let a = Array::new(vec![2, 2], vec![0.1, -3.7e-11, 2.0f64.sqrt(), 4.0]).unwrap();
        let text = serde_json::to_string(&a).unwrap();
        let back: Array = serde_json::from_str(&text).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn serde_rejects_inconsistent_shape() {
        let bad = r#"{"shape":[3],"values":[1.0,2.0]}"#;
        assert!(serde_json::from_str::<Array>(bad).is_err());
    }
}
