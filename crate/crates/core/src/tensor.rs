//! Dense, sampled and CP representations of symmetric order-3 tensors.
//!
//! Everything that consumes a tensor through contractions goes through the
//! [`TensorOp`] trait, so the power method and the norms run unchanged on a
//! full dense tensor, on a reweighted sample set, or on a factored form.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default guard for materializing `n^3` entries.
pub const DEFAULT_MAX_DENSE_DIM: usize = 512;

/// Linear contraction `T(I, u, v)`.
pub trait TensorOp: Sync {
    fn dim(&self) -> usize;

    /// Writes `T(I, u, v)` into `out`. Lengths are checked by [`tvp`].
    fn contract(&self, u: &[f64], v: &[f64], out: &mut [f64]);
}

impl<T: TensorOp + ?Sized> TensorOp for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn contract(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).contract(u, v, out)
    }
}

/// Tensor-vector product `T(I, u, v) = Σ_i (Σ_jk T_ijk u_j v_k) e_i`.
pub fn tvp<T: TensorOp + ?Sized>(t: &T, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let n = t.dim();
    for len in [u.len(), v.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let mut out = vec![0.0; n];
    t.contract(u, v, &mut out);
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sort a triple so that `i <= j <= k`.
pub(crate) fn canonical(i: usize, j: usize, k: usize) -> (usize, usize, usize) {
    let (mut a, mut b, mut c) = (i, j, k);
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    if b > c {
        std::mem::swap(&mut b, &mut c);
    }
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    (a, b, c)
}

fn check_dense_dim(n: usize, limit: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("tensor dimension must be positive"));
    }
    if n > limit {
        return Err(Error::TooLarge {
            n,
            limit,
            bytes: (n as u128).pow(3) * 8,
        });
    }
    Ok(())
}

/// Full `n×n×n` symmetric tensor, stored face by face in `(i, j, k)` row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    n: usize,
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn zeros(n: usize) -> Result<Self> {
        check_dense_dim(n, DEFAULT_MAX_DENSE_DIM)?;
        Ok(Self {
            n,
            data: vec![0.0; n * n * n],
        })
    }

    /// Builds a tensor by evaluating `f` on sorted triples `i <= j <= k` and
    /// copying each value to all permutations, so symmetry is exact.
    pub fn from_symmetric_fn<F>(n: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> f64 + Sync,
    {
        Self::from_symmetric_fn_limited(n, DEFAULT_MAX_DENSE_DIM, f)
    }

    pub fn from_symmetric_fn_limited<F>(n: usize, limit: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> f64 + Sync,
    {
        check_dense_dim(n, limit)?;
        let nn = n * n;
        let mut data = vec![0.0; n * nn];
        data.par_chunks_mut(nn).enumerate().for_each(|(i, face)| {
            for j in 0..n {
                for k in 0..n {
                    let (a, b, c) = canonical(i, j, k);
                    face[j * n + k] = f(a, b, c);
                }
            }
        });
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite tensor entry at flat index {pos}"
            )));
        }
        Ok(Self { n, data })
    }

    /// Wraps raw row-major data, rejecting non-finite or asymmetric input.
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        check_dense_dim(n, usize::MAX)?;
        if data.len() != n * n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n * n,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite entries"));
        }
        let t = Self { n, data };
        if !t.is_symmetric(0.0) {
            return Err(Error::invalid("tensor is not symmetric"));
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    /// The `i`-th face `T[i, :, :]` as a row-major `n×n` slice.
    pub fn face(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.data[i * nn..(i + 1) * nn]
    }

    /// Exhaustive permutation check; `tol` is absolute.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n;
        (0..n).all(|i| {
            (i..n).all(|j| {
                (j..n).all(|k| {
                    let x = self.get(i, j, k);
                    [
                        self.get(i, k, j),
                        self.get(j, i, k),
                        self.get(j, k, i),
                        self.get(k, i, j),
                        self.get(k, j, i),
                    ]
                    .iter()
                    .all(|y| (x - y).abs() <= tol)
                })
            })
        })
    }

    pub fn sub(&self, other: &DenseTensor3) -> Result<DenseTensor3> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseTensor3 { n: self.n, data })
    }

    pub fn add(&self, other: &DenseTensor3) -> Result<DenseTensor3> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(DenseTensor3 { n: self.n, data })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Frobenius norm of face `i`.
    pub fn face_frobenius(&self, i: usize) -> Result<f64> {
        if i >= self.n {
            return Err(Error::invalid(format!(
                "face index {i} out of range for n={}",
                self.n
            )));
        }
        Ok(norm2(self.face(i)))
    }

    /// `sqrt(Σ_i ‖T_i‖²)` with the matrix spectral norm of each face.
    pub fn l22_norm(&self) -> Result<f64> {
        self.l22_norm_with(FaceNorm::Spectral)
    }

    pub fn l22_norm_with(&self, face_norm: FaceNorm) -> Result<f64> {
        l22_from_faces(self.n, face_norm, |i, buf| buf.copy_from_slice(self.face(i)))
    }
}

impl TensorOp for DenseTensor3 {
    fn dim(&self) -> usize {
        self.n
    }

    fn contract(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let row = |i: usize| -> f64 {
            let face = self.face(i);
            let mut acc = 0.0;
            for j in 0..n {
                acc += u[j] * dot(&face[j * n..(j + 1) * n], v);
            }
            acc
        };
        if n >= 64 {
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = row(i));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = row(i);
            }
        }
    }
}

/// Which matrix norm the L2,2 surrogate applies to each face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceNorm {
    #[default]
    Spectral,
    Frobenius,
}

impl std::str::FromStr for FaceNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(FaceNorm::Spectral),
            "frobenius" => Ok(FaceNorm::Frobenius),
            other => Err(Error::invalid(format!("unknown face norm `{other}`"))),
        }
    }
}

/// L2,2 norm of a (not necessarily symmetric) order-3 array whose faces are
/// produced by `fill(i, buf)`.
pub(crate) fn l22_from_faces<F>(n: usize, face_norm: FaceNorm, fill: F) -> Result<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let norms: Vec<Result<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; n * n];
            fill(i, &mut buf);
            match face_norm {
                FaceNorm::Frobenius => Ok(norm2(&buf)),
                FaceNorm::Spectral => spectral_norm(&buf, n, n),
            }
        })
        .collect();
    let mut acc = 0.0;
    for s in norms {
        let s = s?;
        acc += s * s;
    }
    Ok(acc.sqrt())
}

/// Spectral norm of a row-major `rows×cols` matrix: its largest singular
/// value, from a dense SVD.
pub fn spectral_norm(a: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if a.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: a.len(),
        });
    }
    if a.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite entry in face".into()));
    }
    let m = DMatrix::from_row_slice(rows, cols, a);
    Ok(m.singular_values().max())
}

/// Symmetric CP form `Σ_l σ_l U_l ⊗ U_l ⊗ U_l` with unit columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    n: usize,
    r: usize,
    /// Column-major `n×r`.
    u: Vec<f64>,
    sigma: Vec<f64>,
}

const UNIT_TOL: f64 = 1e-12;

impl CpFactors {
    /// `u` is column-major `n×r`. Columns must be unit length and weights positive.
    pub fn new(n: usize, r: usize, u: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if n == 0 || r == 0 {
            return Err(Error::invalid("CP factors need n >= 1 and r >= 1"));
        }
        if u.len() != n * r {
            return Err(Error::DimensionMismatch {
                expected: n * r,
                got: u.len(),
            });
        }
        if sigma.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                got: sigma.len(),
            });
        }
        if u.iter().chain(&sigma).any(|x| !x.is_finite()) {
            return Err(Error::invalid("CP factors contain non-finite values"));
        }
        if let Some(l) = sigma.iter().position(|&s| s <= 0.0) {
            return Err(Error::invalid(format!(
                "weight {l} is {} but must be positive",
                sigma[l]
            )));
        }
        for l in 0..r {
            let nrm = norm2(&u[l * n..(l + 1) * n]);
            if (nrm - 1.0).abs() > UNIT_TOL {
                return Err(Error::invalid(format!(
                    "column {l} has norm {nrm}, expected 1"
                )));
            }
        }
        Ok(Self { n, r, u, sigma })
    }

    pub fn from_columns(columns: Vec<Vec<f64>>, sigma: Vec<f64>) -> Result<Self> {
        let r = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("columns have different lengths"));
        }
        Self::new(n, r, columns.concat(), sigma)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn column(&self, l: usize) -> &[f64] {
        &self.u[l * self.n..(l + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.u.chunks(self.n)
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    #[inline]
    pub fn u(&self, i: usize, l: usize) -> f64 {
        self.u[l * self.n + i]
    }

    /// `max σ / min σ`.
    pub fn kappa(&self) -> f64 {
        let max = self.sigma.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.sigma.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    /// Euclidean norm of each row of `U`.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.r).map(|l| self.u(i, l).powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize, k: usize) -> f64 {
        (0..self.r)
            .map(|l| self.sigma[l] * self.u(i, l) * self.u(j, l) * self.u(k, l))
            .sum()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor3> {
        self.reconstruct_limited(DEFAULT_MAX_DENSE_DIM)
    }

    pub fn reconstruct_limited(&self, limit: usize) -> Result<DenseTensor3> {
        DenseTensor3::from_symmetric_fn_limited(self.n, limit, |i, j, k| self.entry(i, j, k))
    }

    /// `sqrt(Σ_lm σ_l σ_m ⟨U_l, U_m⟩³)`; reduces to `sqrt(Σ σ²)` for orthonormal `U`.
    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for l in 0..self.r {
            for m in 0..self.r {
                let g = dot(self.column(l), self.column(m));
                acc += self.sigma[l] * self.sigma[m] * g * g * g;
            }
        }
        acc.max(0.0).sqrt()
    }
}

impl TensorOp for CpFactors {
    fn dim(&self) -> usize {
        self.n
    }

    fn contract(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (l, col) in self.columns().enumerate() {
            let c = self.sigma[l] * dot(col, u) * dot(col, v);
            for (o, x) in out.iter_mut().zip(col) {
                *o += c * x;
            }
        }
    }
}

/// One observed entry of a sampled tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    /// Raw tensor value `T_ijk`.
    pub value: f64,
    /// Inclusion probability.
    pub p_hat: f64,
    /// Always `1 / p_hat`.
    pub weight: f64,
}

impl SampleRecord {
    pub fn new(i: usize, j: usize, k: usize, value: f64, p_hat: f64) -> Self {
        Self {
            i,
            j,
            k,
            value,
            p_hat,
            weight: 1.0 / p_hat,
        }
    }

    /// `value · weight`, the entry of `R_Ω(T)`.
    #[inline]
    pub fn reweighted(&self) -> f64 {
        self.value * self.weight
    }
}

/// Sparse set of observed triples with their inclusion probabilities.
///
/// Records are kept sorted by `(i, j, k)`; the triple set is not symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTensor {
    n: usize,
    records: Vec<SampleRecord>,
    row_offsets: Vec<usize>,
}

impl SampledTensor {
    pub fn new(n: usize, mut records: Vec<SampleRecord>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("tensor dimension must be positive"));
        }
        for r in &records {
            if r.i >= n || r.j >= n || r.k >= n {
                return Err(Error::invalid(format!(
                    "triple ({}, {}, {}) out of range for n={n}",
                    r.i, r.j, r.k
                )));
            }
            if !(r.p_hat > 0.0 && r.p_hat <= 1.0) {
                return Err(Error::invalid(format!(
                    "p_hat {} at ({}, {}, {}) outside (0, 1]",
                    r.p_hat, r.i, r.j, r.k
                )));
            }
            if !r.value.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite value at ({}, {}, {})",
                    r.i, r.j, r.k
                )));
            }
        }
        records.sort_by_key(|r| (r.i, r.j, r.k));
        if let Some(w) = records
            .windows(2)
            .find(|w| (w[0].i, w[0].j, w[0].k) == (w[1].i, w[1].j, w[1].k))
        {
            return Err(Error::invalid(format!(
                "duplicate triple ({}, {}, {})",
                w[0].i, w[0].j, w[0].k
            )));
        }
        for r in &mut records {
            r.weight = 1.0 / r.p_hat;
        }
        let mut row_offsets = vec![0; n + 1];
        for r in &records {
            row_offsets[r.i + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n,
            records,
            row_offsets,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    /// Records whose first index is `i`.
    pub fn row(&self, i: usize) -> &[SampleRecord] {
        &self.records[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// `Σ_Ω W v²`, an unbiased estimate of `‖T‖_F²`.
    pub fn frobenius_sq_estimate(&self) -> f64 {
        self.records.iter().map(|r| r.weight * r.value * r.value).sum()
    }

    /// Per-face estimate of `‖T_i‖_F²` from reweighted samples.
    pub fn face_sq_estimates(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|r| r.weight * r.value * r.value).sum())
            .collect()
    }

    /// Dense face `i` of `R_Ω(T)` added into `buf`.
    pub(crate) fn scatter_face(&self, i: usize, buf: &mut [f64]) {
        for r in self.row(i) {
            buf[r.j * self.n + r.k] += r.reweighted();
        }
    }
}

impl TensorOp for SampledTensor {
    fn dim(&self) -> usize {
        self.n
    }

    fn contract(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let row = |i: usize| -> f64 {
            let mut acc = 0.0;
            for r in self.row(i) {
                acc += r.reweighted() * u[r.j] * v[r.k];
            }
            acc
        };
        if self.records.len() >= 1 << 15 {
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = row(i));
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = row(i);
            }
        }
    }
}
