//! Synthetic generators: biased sample matrices, biased orthogonal factors,
//! the block-diagonal counterexample tensor and expected block counts.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::sampling::{inclusion_probability, EntryDistribution, SampleMode};
use crate::sparsify::SampleMatrix;
use crate::tensor::{CpFactors, DenseTensor3};

const FACTOR_STREAM: u64 = 0xfac7_0000;

/// Power-law row scaling `D_ii = 1/i^a` with 1-based `i`.
pub fn bias_profile(n: usize, a: f64) -> Vec<f64> {
    (1..=n).map(|i| (i as f64).powf(-a)).collect()
}

fn check_bias(a: f64) -> Result<()> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("bias exponent must be finite and >= 0, got {a}")));
    }
    Ok(())
}

/// `p` Gaussian sample vectors in `R^n`, row `i` scaled by `D_ii`.
/// Row `i` is drawn from its own substream, so the matrix does not depend on
/// the thread count.
pub fn gen_samples(n: usize, p: usize, a: f64, seed: u64) -> Result<SampleMatrix> {
    check_bias(a)?;
    if n == 0 || p == 0 {
        return Err(Error::invalid("sample matrix needs n >= 1 and p >= 1"));
    }
    let d = bias_profile(n, a);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, i as u64);
            (0..p).map(|_| d[i] * r.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    SampleMatrix::from_rows(n, p, rows.concat())
}

/// Top-`r` left singular vectors of `D·G` for an `n×r` Gaussian `G`, with
/// weights `sigma` (all ones when `None`).
///
/// Each column's sign is fixed so that its largest-magnitude entry is positive.
pub fn gen_orthogonal_factors(
    n: usize,
    r: usize,
    a: f64,
    sigma: Option<&[f64]>,
    seed: u64,
) -> Result<CpFactors> {
    check_bias(a)?;
    if r == 0 || r > n {
        return Err(Error::invalid(format!("need 1 <= r <= n, got r = {r}, n = {n}")));
    }
    let sigma = match sigma {
        Some(s) if s.len() != r => {
            return Err(Error::DimensionMismatch {
                expected: r,
                got: s.len(),
            })
        }
        Some(s) => s.to_vec(),
        None => vec![1.0; r],
    };
    let d = bias_profile(n, a);
    let mut g = rng::substream(seed, FACTOR_STREAM);
    // Column-major fill: column l is drawn before column l+1.
    let raw: Vec<f64> = (0..n * r).map(|_| g.sample(StandardNormal)).collect();
    let m = DMatrix::from_fn(n, r, |i, l| d[i] * raw[l * n + i]);
    let svd = m.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("SVD did not return left singular vectors".into()))?;
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let columns = order
        .iter()
        .map(|&l| {
            let mut c: Vec<f64> = u.column(l).iter().copied().collect();
            let piv = c
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |b, (i, x)| if x.abs() > b.1 { (i, x.abs()) } else { b })
                .0;
            if c[piv] < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            // Re-normalize to absorb the SVD's rounding.
            let nc = crate::tensor::norm2(&c);
            c.iter_mut().for_each(|x| *x /= nc);
            c
        })
        .collect();
    CpFactors::from_columns(columns, sigma)
}

/// `⌈ln n⌉`, the default first-block size of the counterexample.
pub fn default_block_size(n: usize) -> usize {
    (n as f64).ln().ceil() as usize
}

#[derive(Debug, Clone)]
pub struct ClaimTensor {
    pub tensor: DenseTensor3,
    pub factors: CpFactors,
    /// Index range of the small block.
    pub block: Range<usize>,
}

/// Rank-2 block-diagonal all-ones tensor: a `b³` cube on the first `b`
/// indices and an `(n−b)³` cube on the rest.
///
/// Factors are the normalized block indicators with `σ₁ = b^{3/2}` and
/// `σ₂ = (n−b)^{3/2}`, which reconstruct the tensor exactly.
pub fn claim_tensor(n: usize, block_size: Option<usize>) -> Result<ClaimTensor> {
    let b = block_size.unwrap_or_else(|| default_block_size(n));
    if b == 0 || n <= 2 * b {
        return Err(Error::invalid(format!(
            "block tensor needs 1 <= b and n > 2b, got n = {n}, b = {b}"
        )));
    }
    let tensor = DenseTensor3::from_symmetric_fn(n, |i, _, k| {
        // Arguments arrive sorted, so the extremes decide block membership.
        if k < b || i >= b {
            1.0
        } else {
            0.0
        }
    })?;
    let u1: Vec<f64> = (0..n)
        .map(|i| if i < b { 1.0 / (b as f64).sqrt() } else { 0.0 })
        .collect();
    let u2: Vec<f64> = (0..n)
        .map(|i| if i >= b { 1.0 / ((n - b) as f64).sqrt() } else { 0.0 })
        .collect();
    let factors = CpFactors::from_columns(
        vec![u1, u2],
        vec![(b as f64).powf(1.5), ((n - b) as f64).powf(1.5)],
    )?;
    Ok(ClaimTensor {
        tensor,
        factors,
        block: 0..b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockCount {
    /// `Σ p̂` over `block³`.
    pub expected: f64,
    /// Smallest `p̂` inside the block.
    pub min_p_hat: f64,
    /// Triples inside the block.
    pub triples: usize,
}

/// Expected number of sampled triples inside `block³`, by exhaustive sum.
pub fn expected_block_counts(
    dist: &EntryDistribution,
    m: u64,
    mode: SampleMode,
    block: Range<usize>,
) -> Result<BlockCount> {
    if block.is_empty() || block.end > dist.dim() {
        return Err(Error::invalid(format!(
            "block {block:?} is empty or exceeds the dimension {}",
            dist.dim()
        )));
    }
    let per_face: Vec<(f64, f64)> = block
        .clone()
        .into_par_iter()
        .map(|i| {
            let (mut s, mut lo) = (0.0, f64::INFINITY);
            for j in block.clone() {
                for k in block.clone() {
                    let q = inclusion_probability(dist.prob(i, j, k), m, mode);
                    s += q;
                    lo = lo.min(q);
                }
            }
            (s, lo)
        })
        .collect();
    let b = block.len();
    Ok(BlockCount {
        expected: per_face.iter().map(|x| x.0).sum(),
        min_p_hat: per_face.iter().map(|x| x.1).fold(f64::INFINITY, f64::min),
        triples: b * b * b,
    })
}
