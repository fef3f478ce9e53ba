//! Dense row-major embedding storage.

use crate::error::{Error, Result};

/// An `n × d` matrix of finite 32-bit feature vectors, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data. Requires `n >= 1`, `d >= 2` and
    /// finite entries.
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Data("embedding matrix needs at least one row".into()));
        }
        if d < 2 {
            return Err(Error::Data(format!("embedding dimension must be >= 2, got {d}")));
        }
        if data.len() != n * d {
            return Err(Error::Data(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(EmbeddingMatrix { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::Data(format!("row {i} has a different length")));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    /// Converts f64 rows, rounding to f32.
    pub fn from_f64_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Data(format!("row {i} has a different length")));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// Row `i` widened to f64.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// New matrix holding the given rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::Argument(format!("row {i} out of range for {} rows", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, data)
    }

    /// Copy with every row scaled to unit L2 norm (zero rows stay zero).
    pub fn normalized(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.d) {
            let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        EmbeddingMatrix {
            n: self.n,
            d: self.d,
            data,
        }
    }

    /// Stacks `other` under `self`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::Argument(format!(
                "cannot stack d={} with d={}",
                self.d, other.d
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.n + other.n, self.d, data)
    }
}

/// Unit-normalizes an f64 vector in place and returns the original norm.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
