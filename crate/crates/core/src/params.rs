//! Named parameter tensors and the flattened-coordinate convention shared by
//! gradients, Hessians, and covariance matrices: tensors in declaration
//! order, row-major within each tensor.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Vector { len: usize },
    Matrix { rows: usize, cols: usize },
}

impl TensorKind {
    pub fn size(&self) -> usize {
        match *self {
            TensorKind::Vector { len } => len,
            TensorKind::Matrix { rows, cols } => rows * cols,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    name: String,
    kind: TensorKind,
    values: Vec<f64>,
}

impl ParamTensor {
    pub fn vector(name: impl Into<String>, values: Vec<f64>) -> Self {
        let kind = TensorKind::Vector { len: values.len() };
        Self {
            name: name.into(),
            kind,
            values,
        }
    }

    pub fn matrix(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(rows * cols, values.len(), "matrix tensor size mismatch");
        Self {
            name: name.into(),
            kind: TensorKind::Matrix { rows, cols },
            values,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// View a matrix-kind tensor as a [`Matrix`].
    pub fn as_matrix(&self) -> Option<Matrix> {
        match self.kind {
            TensorKind::Matrix { rows, cols } => {
                Some(Matrix::new(rows, cols, self.values.clone()).expect("tensor entries finite"))
            }
            TensorKind::Vector { .. } => None,
        }
    }
}

/// An ordered collection of uniquely named tensors; the unit every optimizer
/// acts on. Flattening concatenates tensors in order (row-major within each),
/// and `unflatten_like` is its exact inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<ParamTensor>) -> Result<Self> {
        if tensors.iter().map(|t| t.kind.size()).sum::<usize>() == 0 {
            return Err(CoreError::InvalidParameter(
                "parameter set has zero flattened dimension".into(),
            ));
        }
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|u| u.name == t.name) {
                return Err(CoreError::InvalidParameter(format!(
                    "duplicate tensor name {:?}",
                    t.name
                )));
            }
        }
        Ok(Self { tensors })
    }

    /// Single unnamed-vector convenience for the d-dimensional toy problems.
    pub fn vector(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(vec![ParamTensor::vector(name, values)]).expect("non-empty vector")
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Total flattened dimension.
    pub fn dim(&self) -> usize {
        self.tensors.iter().map(|t| t.kind.size()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for t in &self.tensors {
            out.extend_from_slice(&t.values);
        }
        out
    }

    /// Rebuild a set with this set's shapes from a flat coordinate vector.
    pub fn unflatten_like(&self, flat: &[f64]) -> ParamSet {
        assert_eq!(flat.len(), self.dim(), "unflatten length mismatch");
        let mut tensors = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            let size = t.kind.size();
            tensors.push(ParamTensor {
                name: t.name.clone(),
                kind: t.kind,
                values: flat[offset..offset + size].to_vec(),
            });
            offset += size;
        }
        ParamSet { tensors }
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.unflatten_like(&vec![0.0; self.dim()])
    }

    /// `self + c * other`, tensor by tensor.
    pub fn add_scaled(&self, other: &ParamSet, c: f64) -> ParamSet {
        assert_eq!(self.dim(), other.dim(), "add_scaled dimension mismatch");
        let mut out = self.clone();
        for (t, o) in out.tensors.iter_mut().zip(&other.tensors) {
            debug_assert_eq!(t.kind, o.kind);
            for (v, w) in t.values.iter_mut().zip(&o.values) {
                *v += c * w;
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> ParamSet {
        let mut out = self.clone();
        for t in out.tensors.iter_mut() {
            for v in t.values.iter_mut() {
                *v *= c;
            }
        }
        out
    }

    /// Whole-model L2 norm of the flattened coordinates.
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &ParamSet) -> f64 {
        assert_eq!(self.dim(), other.dim(), "dot dimension mismatch");
        self.tensors
            .iter()
            .zip(&other.tensors)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values))
            .map(|(x, y)| x * y)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.values.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let err = ParamSet::new(vec![
            ParamTensor::vector("w", vec![1.0]),
            ParamTensor::vector("w", vec![2.0]),
        ])
        .unwrap_err();
        assert!(matches!(err, CoreError::InvalidParameter(_)));
    }

    #[test]
    fn empty_set_rejected() {
        assert!(ParamSet::new(vec![]).is_err());
        assert!(ParamSet::new(vec![ParamTensor::vector("w", vec![])]).is_err());
    }

    #[test]
    fn flatten_order_is_tensor_then_row_major() {
        let p = ParamSet::new(vec![
            ParamTensor::matrix("w", 2, 2, vec![1.0, 2.0, 3.0, 4.0]),
            ParamTensor::vector("b", vec![5.0, 6.0]),
        ])
        .unwrap();
        assert_eq!(p.flatten(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(p.dim(), 6);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_roundtrip(
            w in proptest::collection::vec(-1e6f64..1e6, 1..12),
            b in proptest::collection::vec(-1e6f64..1e6, 1..6),
        ) {
            let rows = w.len();
            let mut m = w.clone();
            m.extend(w.iter().map(|x| -x));
            let p = ParamSet::new(vec![
                ParamTensor::matrix("w", rows, 2, m),
                ParamTensor::vector("b", b),
            ]).unwrap();
            let rebuilt = p.unflatten_like(&p.flatten());
            prop_assert_eq!(rebuilt, p);
        }
    }
}
