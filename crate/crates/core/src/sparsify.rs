//! Two-pass sparsification of the moment tensor `T = Σ_l X_l ⊗ X_l ⊗ X_l`.
//!
//! Pass one reads the sample matrix to get row norms, pass two computes only
//! the sampled entries. The full tensor is never formed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::{self, DrawSet, EntryDistribution, Family, SamplePlan};
use crate::tensor::{dot, DenseTensor3, SampledTensor};

/// `n×p` matrix whose columns are sample vectors, stored row-major so that a
/// row `Xⁱ` is contiguous.
#[derive(Debug)]
pub struct SampleMatrix {
    n: usize,
    p: usize,
    rows: Vec<f64>,
    passes: AtomicUsize,
}

impl Clone for SampleMatrix {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            p: self.p,
            rows: self.rows.clone(),
            passes: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for SampleMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.p == other.p && self.rows == other.rows
    }
}

impl SampleMatrix {
    pub fn from_rows(n: usize, p: usize, rows: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::invalid("sample matrix needs n >= 1 and p >= 1"));
        }
        if rows.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: rows.len(),
            });
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("sample matrix contains non-finite entries"));
        }
        if rows.iter().all(|&x| x == 0.0) {
            return Err(Error::Degenerate("sample matrix is all zero".into()));
        }
        Ok(Self {
            n,
            p,
            rows,
            passes: AtomicUsize::new(0),
        })
    }

    /// Builds from `p` column vectors of length `n`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let p = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("sample columns have different lengths"));
        }
        let mut rows = vec![0.0; n * p];
        for (l, col) in columns.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                rows[i * p + l] = x;
            }
        }
        Self::from_rows(n, p, rows)
    }

    /// Builds from sparse `(row, col, value)` triplets; repeated cells add up.
    pub fn from_triplets(n: usize, p: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![0.0; n * p];
        for &(r, c, v) in triplets {
            if r >= n || c >= p {
                return Err(Error::invalid(format!(
                    "triplet ({r}, {c}) outside {n}x{p} matrix"
                )));
            }
            rows[r * p + c] += v;
        }
        Self::from_rows(n, p, rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_samples(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.rows[i * self.p + l]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().filter(|&&x| x != 0.0).count()
    }

    /// Number of full passes made over the data since construction or the last reset.
    pub fn passes(&self) -> usize {
        self.passes.load(Ordering::SeqCst)
    }

    pub fn reset_passes(&self) {
        self.passes.store(0, Ordering::SeqCst);
    }

    fn begin_pass(&self) {
        self.passes.fetch_add(1, Ordering::SeqCst);
    }
}

/// Euclidean norm of every row `Xⁱ`, one pass over the data.
pub fn row_norm_pass(x: &SampleMatrix) -> Vec<f64> {
    x.begin_pass();
    (0..x.n)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            dot(row, row).sqrt()
        })
        .collect()
}

/// Moment tensor entry `Σ_l X_il X_jl X_kl`.
pub fn entry(x: &SampleMatrix, i: usize, j: usize, k: usize) -> Result<f64> {
    if i >= x.n || j >= x.n || k >= x.n {
        return Err(Error::invalid(format!(
            "entry ({i}, {j}, {k}) out of range for n={}",
            x.n
        )));
    }
    Ok(moment(x, i, j, k))
}

#[inline]
fn moment(x: &SampleMatrix, i: usize, j: usize, k: usize) -> f64 {
    let (a, b, c) = (x.row(i), x.row(j), x.row(k));
    let mut acc = 0.0;
    for l in 0..x.p {
        acc += a[l] * b[l] * c[l];
    }
    acc
}

/// Dense moment tensor; one pass over the data. Only for oracles and for
/// baselines that need every entry.
pub fn moment_tensor(x: &SampleMatrix) -> Result<DenseTensor3> {
    x.begin_pass();
    DenseTensor3::from_symmetric_fn(x.n, |i, j, k| moment(x, i, j, k))
}

/// Evaluates the moment entries at the drawn triples; one pass over the data.
pub fn sampled_entries_pass(x: &SampleMatrix, draws: &DrawSet) -> Result<SampledTensor> {
    x.begin_pass();
    // Draws arrive sorted by i, so consecutive work touches the same row.
    sampling::reweight(draws, |i, j, k| moment(x, i, j, k))
}

/// Distribution choices available without forming the tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowDistribution {
    TensorLS,
    Uniform,
    SumL3,
    ProdL3,
}

impl TryFrom<Family> for RowDistribution {
    type Error = Error;

    fn try_from(f: Family) -> Result<Self> {
        match f {
            Family::TensorLS => Ok(RowDistribution::TensorLS),
            Family::Uniform => Ok(RowDistribution::Uniform),
            Family::SumL3 => Ok(RowDistribution::SumL3),
            Family::ProdL3 => Ok(RowDistribution::ProdL3),
            other => Err(Error::invalid(format!(
                "{other} sampling needs the dense tensor and is not two-pass"
            ))),
        }
    }
}

impl RowDistribution {
    pub fn build(self, row_norms: &[f64]) -> Result<EntryDistribution> {
        match self {
            RowDistribution::TensorLS => EntryDistribution::from_samples(row_norms),
            RowDistribution::Uniform => EntryDistribution::uniform(row_norms.len()),
            RowDistribution::SumL3 => EntryDistribution::sum_l3(row_norms),
            RowDistribution::ProdL3 => EntryDistribution::prod_l3(row_norms),
        }
    }
}

/// Default budget `⌈10 n^{1.5}⌉`.
pub fn default_budget(n: usize) -> u64 {
    (10.0 * (n as f64).powf(1.5)).ceil() as u64
}

#[derive(Debug, Clone)]
pub struct SparsifyOutput {
    pub tensor: SampledTensor,
    pub deterministic: usize,
}

/// Two-pass sparsification with the sample-vector distribution and the
/// dimension-based default sampling mode.
pub fn sparsify(x: &SampleMatrix, m: u64, seed: u64) -> Result<SampledTensor> {
    let plan = SamplePlan::auto(m, x.n, seed)?;
    Ok(sparsify_with(x, RowDistribution::TensorLS, &plan)?.tensor)
}

pub fn sparsify_with(
    x: &SampleMatrix,
    dist: RowDistribution,
    plan: &SamplePlan,
) -> Result<SparsifyOutput> {
    let norms = row_norm_pass(x);
    let dist = dist.build(&norms)?;
    let draws = sampling::draw(&dist, plan)?;
    let tensor = sampled_entries_pass(x, &draws)?;
    Ok(SparsifyOutput {
        tensor,
        deterministic: draws.deterministic,
    })
}

/// Sparsifies with any family, forming the dense tensor when the family
/// needs entry values. Used by the experiment baselines.
pub fn sparsify_any(
    x: &SampleMatrix,
    family: Family,
    dense: Option<&Arc<DenseTensor3>>,
    plan: &SamplePlan,
) -> Result<SampledTensor> {
    if let Ok(rd) = RowDistribution::try_from(family) {
        return Ok(sparsify_with(x, rd, plan)?.tensor);
    }
    let dense = match dense {
        Some(t) => t.clone(),
        None => Arc::new(moment_tensor(x)?),
    };
    let dist = match family {
        Family::L1 => EntryDistribution::l1(dense.clone())?,
        Family::L2 => EntryDistribution::l2(dense.clone())?,
        Family::NoisyMixture => EntryDistribution::noisy_mixture(dense.clone())?,
        _ => unreachable!("row families handled above"),
    };
    let draws = sampling::draw(&dist, plan)?;
    sampling::reweight(&draws, |i, j, k| dense.get(i, j, k))
}
