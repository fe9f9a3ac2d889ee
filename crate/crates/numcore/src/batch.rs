use crate::error::{NumError, Result};
use crate::tensor::Tensor;

/// A batch of `n` samples sharing one per-sample shape, held in `f64` for
/// computation. Sample `i` occupies `data[i * sample_len .. (i + 1) * sample_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    n: usize,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let per: usize = shape.iter().product();
        if per * n != data.len() {
            let mut full = vec![n];
            full.extend_from_slice(&shape);
            return Err(NumError::DataLength {
                shape: full,
                len: data.len(),
            });
        }
        Ok(Batch { n, shape, data })
    }

    pub fn zeros(n: usize, shape: Vec<usize>) -> Self {
        let per: usize = shape.iter().product();
        Batch {
            n,
            shape,
            data: vec![0.0; per * n],
        }
    }

    /// Stacks equally shaped `f32` samples.
    pub fn from_samples<'a, I>(shape: Vec<usize>, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        let per: usize = shape.iter().product();
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            if s.len() != per {
                return Err(NumError::DataLength {
                    shape: shape.clone(),
                    len: s.len(),
                });
            }
            data.extend(s.iter().map(|&v| v as f64));
            n += 1;
        }
        Ok(Batch { n, shape, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(width * rows.len());
        for r in rows {
            if r.len() != width {
                return Err(NumError::ShapeMismatch {
                    expected: vec![width],
                    actual: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Batch {
            n: rows.len(),
            shape: vec![width],
            data,
        })
    }

    /// Interprets a tensor either as a single sample of `sample_shape` or as a
    /// batch with a leading batch dimension.
    pub fn from_tensor(t: &Tensor, sample_shape: &[usize]) -> Result<Self> {
        let shape = t.shape();
        if shape == sample_shape {
            return Batch::new(1, sample_shape.to_vec(), t.to_f64());
        }
        if shape.len() == sample_shape.len() + 1 && &shape[1..] == sample_shape {
            return Batch::new(shape[0], sample_shape.to_vec(), t.to_f64());
        }
        Err(NumError::ShapeMismatch {
            expected: sample_shape.to_vec(),
            actual: shape.to_vec(),
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let mut shape = vec![self.n];
        shape.extend_from_slice(&self.shape);
        Tensor::from_f64(shape, &self.data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let per = self.sample_len();
        &self.data[i * per..(i + 1) * per]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.sample_len().max(1)).take(self.n)
    }

    /// Gathers the given sample indices into a new batch.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let per = self.sample_len();
        let mut data = Vec::with_capacity(per * idx.len());
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        Batch {
            n: idx.len(),
            shape: self.shape.clone(),
            data,
        }
    }

    /// Concatenates two batches with equal sample shapes.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        if self.shape != other.shape {
            return Err(NumError::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Batch {
            n: self.n + other.n,
            shape: self.shape.clone(),
            data,
        })
    }

    /// Splits off the first `k` samples.
    pub fn split_at(&self, k: usize) -> (Batch, Batch) {
        let per = self.sample_len();
        let (a, b) = self.data.split_at(k * per);
        (
            Batch {
                n: k,
                shape: self.shape.clone(),
                data: a.to_vec(),
            },
            Batch {
                n: self.n - k,
                shape: self.shape.clone(),
                data: b.to_vec(),
            },
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
