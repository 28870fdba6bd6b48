//! Convex merging of same-shape parameter sets.

mod format;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use format::{decode, encode, read_tensors, sniff_dtype, write_tensors, Storable, MAGIC};

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("parameter '{0}' has {1} values but shape {2:?}")]
    ShapeData(String, usize, Vec<usize>),
    #[error("parameter '{0}' is defined twice")]
    DuplicateName(String),
    #[error("parameter '{0}' has a non-finite value")]
    NonFinite(String),
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("{sets} parameter sets but {weights} weights")]
    CountMismatch { sets: usize, weights: usize },
    #[error("parameter '{name}' has shape {found:?} in set {set}, expected {expected:?}")]
    ShapeMismatch { name: String, set: usize, expected: Vec<usize>, found: Vec<usize> },
    #[error("parameter '{name}' is missing from set {set}")]
    MissingParameter { name: String, set: usize },
    #[error("tensor file: {0}")]
    Format(String),
    #[error("tensor file holds {found} values, expected {expected}")]
    Dtype { expected: &'static str, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named arrays with their shapes. Names are unique and iterate sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Result<(), MergeError> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(MergeError::ShapeData(name, data.len(), shape));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MergeError::NonFinite(name));
        }
        if self.tensors.contains_key(&name) {
            return Err(MergeError::DuplicateName(name));
        }
        self.tensors.insert(name, Tensor { shape, data });
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Result<Self, MergeError> {
        self.insert(name, shape, data)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn shape_table(&self) -> Vec<(&str, &[usize])> {
        self.iter().map(|(n, t)| (n, t.shape.as_slice())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    weights: Vec<f64>,
}

impl MergeSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self, MergeError> {
        if weights.is_empty() {
            return Err(MergeError::Weights("no weights given".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(MergeError::Weights(format!("weight {w} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(MergeError::Weights(format!("weights sum to {sum}, not 1")));
        }
        Ok(MergeSpec { weights })
    }

    /// Equal weights over `k` sets.
    pub fn uniform(k: usize) -> Result<Self, MergeError> {
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// One merged element. Terms are summed in `f64` in sorted order so the
/// result does not depend on set order, then clamped to the sources' range
/// so rounding cannot leave the convex hull.
fn combine(values: &[f64], weights: &[f64]) -> f64 {
    let mut terms: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
    terms.sort_by(f64::total_cmp);
    let sum: f64 = terms.iter().sum();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    sum.clamp(lo, hi)
}

/// Elementwise `Σ α_k θ_k` over sets with identical name/shape tables.
pub fn merge<T: Scalar>(sets: &[ParamSet<T>], spec: &MergeSpec) -> Result<ParamSet<T>, MergeError> {
    if sets.len() != spec.weights.len() {
        return Err(MergeError::CountMismatch {
            sets: sets.len(),
            weights: spec.weights.len(),
        });
    }
    let first = &sets[0];
    for (k, set) in sets.iter().enumerate().skip(1) {
        if let Some(name) = set.tensors.keys().find(|n| !first.tensors.contains_key(*n)) {
            return Err(MergeError::MissingParameter { name: name.clone(), set: 0 });
        }
        for (name, t) in &first.tensors {
            let other = set
                .get(name)
                .ok_or_else(|| MergeError::MissingParameter { name: name.clone(), set: k })?;
            if other.shape != t.shape {
                return Err(MergeError::ShapeMismatch {
                    name: name.clone(),
                    set: k,
                    expected: t.shape.clone(),
                    found: other.shape.clone(),
                });
            }
        }
    }
    let mut out = ParamSet::new();
    let mut column = vec![0.0; sets.len()];
    for (name, t) in &first.tensors {
        let data = (0..t.data.len())
            .map(|i| {
                for (c, set) in column.iter_mut().zip(sets) {
                    *c = set.tensors[name].data[i].as_f64();
                }
                T::lit(combine(&column, &spec.weights))
            })
            .collect();
        out.tensors.insert(name.clone(), Tensor { shape: t.shape.clone(), data });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(v: f64) -> ParamSet<f64> {
        ParamSet::new().with("w", vec![1], vec![v]).unwrap()
    }

    #[test]
    fn examples() {
        let a = w(2.0);
        assert_eq!(merge(std::slice::from_ref(&a), &MergeSpec::new(vec![1.0]).unwrap()).unwrap(), a);
        let m = merge(&[w(2.0), w(4.0)], &MergeSpec::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(m, w(3.0));
        assert!(matches!(MergeSpec::new(vec![0.6, 0.6]), Err(MergeError::Weights(_))));
    }

    #[test]
    fn rejections_name_the_parameter() {
        let a = ParamSet::<f32>::new().with("w", vec![2], vec![1.0, 2.0]).unwrap();
        let b = ParamSet::<f32>::new().with("w", vec![1, 2], vec![1.0, 2.0]).unwrap();
        let spec = MergeSpec::uniform(2).unwrap();
        match merge(&[a.clone(), b], &spec) {
            Err(MergeError::ShapeMismatch { name, .. }) => assert_eq!(name, "w"),
            other => panic!("{other:?}"),
        }
        let c = a.clone().with("bias", vec![1], vec![0.0]).unwrap();
        assert!(matches!(merge(&[a.clone(), c], &spec), Err(MergeError::MissingParameter { .. })));
        assert!(matches!(merge(&[a], &spec), Err(MergeError::CountMismatch { .. })));
        assert!(MergeSpec::new(vec![1.5, -0.5]).is_err());
        assert!(ParamSet::<f64>::new().with("x", vec![2], vec![1.0]).is_err());
        assert!(ParamSet::<f64>::new().with("x", vec![1], vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn convex_and_order_free(
            vals in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 4), 2..5),
            raw in prop::collection::vec(0.01f64..1.0, 5),
        ) {
            let k = vals.len();
            let total: f64 = raw[..k].iter().sum();
            let weights: Vec<f64> = raw[..k].iter().map(|r| r / total).collect();
            let Ok(spec) = MergeSpec::new(weights.clone()) else { return Ok(()) };
            let sets: Vec<ParamSet<f32>> = vals.iter().map(|v| ParamSet::new().with("p", vec![2, 2], v.clone()).unwrap()).collect();
            let m = merge(&sets, &spec).unwrap();
            for i in 0..4 {
                let x = m.get("p").unwrap().data[i];
                let lo = vals.iter().map(|v| v[i]).fold(f32::INFINITY, f32::min);
                let hi = vals.iter().map(|v| v[i]).fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(lo <= x && x <= hi);
            }
            let rev_sets: Vec<_> = sets.iter().rev().cloned().collect();
            let rev_w: Vec<f64> = weights.iter().rev().copied().collect();
            prop_assert_eq!(merge(&rev_sets, &MergeSpec::new(rev_w).unwrap()).unwrap(), m);
        }
    }
}
