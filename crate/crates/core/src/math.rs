//! Dense kernels shared by the model, trainer and evaluator.
//!
//! Everything is `f64`. Vectors are plain slices; matrices use the row-major
//! [`DenseMatrix`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RamError, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RamError::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from nested rows; all rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(RamError::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Softmax computed in place with max subtraction.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return;
    }
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Softmax over all entries of `m` jointly; the result sums to one.
pub fn softmax_matrix(m: &DenseMatrix) -> DenseMatrix {
    DenseMatrix {
        rows: m.rows,
        cols: m.cols,
        data: softmax(&m.data),
    }
}

/// Vector-Jacobian product of softmax: given `s = softmax(x)` and `dL/ds`,
/// returns `dL/dx = s ⊙ (dL/ds − ⟨dL/ds, s⟩)`, i.e. `(diag(s) − s sᵀ) dL/ds`.
pub fn softmax_backward(s: &[f64], grad_s: &[f64]) -> Vec<f64> {
    debug_assert_eq!(s.len(), grad_s.len());
    let dot: f64 = s.iter().zip(grad_s).map(|(a, b)| a * b).sum();
    s.iter().zip(grad_s).map(|(si, gi)| si * (gi - dot)).collect()
}

/// `log Σ exp(x)` with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Multilinear product `⟨a_1, …, a_n⟩ = Σ_l a_1[l]·…·a_n[l]`.
pub fn multilinear(vectors: &[&[f64]]) -> Result<f64> {
    let Some(first) = vectors.first() else {
        return Err(RamError::Dimension("multilinear of an empty list".into()));
    };
    let d = first.len();
    if d == 0 {
        return Err(RamError::Dimension("multilinear of empty vectors".into()));
    }
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(RamError::Dimension(format!(
            "multilinear: lengths {d} and {}",
            bad.len()
        )));
    }
    let mut total = 0.0;
    for l in 0..d {
        let mut prod = 1.0;
        for v in vectors {
            prod *= v[l];
        }
        total += prod;
    }
    Ok(total)
}

/// `wᵀE`: a weighted sum of the rows of `e`.
pub fn row_weighted_contract(weights: &[f64], e: &DenseMatrix) -> Result<Vec<f64>> {
    if weights.len() != e.rows {
        return Err(RamError::Dimension(format!(
            "{} weights for {} rows",
            weights.len(),
            e.rows
        )));
    }
    let mut out = vec![0.0; e.cols];
    contract_rows_into(weights, &e.data, e.cols, &mut out);
    Ok(out)
}

/// Unchecked kernel behind [`row_weighted_contract`] over a flat row-major
/// block: `out[j] = Σ_k weights[k]·block[k*cols + j]`.
#[inline]
pub(crate) fn contract_rows_into(weights: &[f64], block: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = &block[k * cols..(k + 1) * cols];
        for (o, r) in out.iter_mut().zip(row) {
            *o += w * r;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// SplitMix64 finalizer, used to derive independent child seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a path of tags.
///
/// Distinct tag paths give statistically independent streams, so per-fact
/// randomness does not depend on the order facts are processed in.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Deterministic RNG for the given base seed and tag path.
pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
