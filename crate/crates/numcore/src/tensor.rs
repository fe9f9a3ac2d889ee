use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{NumError, Result};

/// Row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::DataLength {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite {
                context: "tensor construction".into(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Overwrites the values, keeping the shape. Rejects non-finite input.
    pub fn assign_f64(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(NumError::DataLength {
                shape: self.shape.clone(),
                len: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite {
                context: "tensor assignment".into(),
            });
        }
        for (d, &v) in self.data.iter_mut().zip(values) {
            *d = v as f32;
        }
        Ok(())
    }
}

/// Named parameter tensors of one network. Names are unique and shapes are
/// fixed once a name is inserted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new tensor or replaces an existing one of identical shape.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if let Some(old) = self.tensors.get(&name) {
            if old.shape() != t.shape() {
                return Err(NumError::ShapeMismatch {
                    expected: old.shape().to_vec(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Copies every tensor under `prefix.` into a new set with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        let p = format!("{prefix}.");
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.tensors
            .iter()
            .map(|(k, v)| (format!("{prefix}.{k}"), v.clone()))
            .collect()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradients with the same names and shapes as a [`ParamSet`], in `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    entries: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            entries: params
                .iter()
                .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Vec<f64>) {
        self.entries.insert(name.into(), g);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `self += scale * other`; names must match.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        for (name, g) in &other.entries {
            let dst = self
                .entries
                .get_mut(name)
                .ok_or_else(|| NumError::UnknownParam(name.clone()))?;
            if dst.len() != g.len() {
                return Err(NumError::ShapeMismatch {
                    expected: vec![dst.len()],
                    actual: vec![g.len()],
                });
            }
            for (d, &v) in dst.iter_mut().zip(g) {
                *d += scale * v;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.entries.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn rejects_nan() {
        assert!(matches!(
            Tensor::new(vec![1], vec![f32::NAN]),
            Err(NumError::NonFinite { .. })
        ));
    }

    #[test]
    fn param_shapes_are_fixed() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2, 3])).unwrap();
        assert!(p.insert("w", Tensor::zeros(vec![3, 2])).is_err());
        assert!(p.insert("w", Tensor::zeros(vec![2, 3])).is_ok());
    }

    #[test]
    fn hash_changes_with_values() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        let h0 = p.content_hash();
        p.get_mut("w").unwrap().assign_f64(&[0.0, 1e-6]).unwrap();
        assert_ne!(h0, p.content_hash());
    }
}
