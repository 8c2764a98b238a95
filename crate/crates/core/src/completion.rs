//! Weighted alternating least squares on sampled entries.
//!
//! Each sweep solves every column `q` against the factors of the previous
//! sweep. The per-coordinate problem is a scalar weighted least-squares fit,
//! so a column update is a parallel map over the `n` faces.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics;
use crate::rng;
use crate::rtpm::{self, RtpmConfig};
use crate::tensor::{norm2, CpFactors, SampledTensor};

/// Upper bound on the default number of sweeps.
pub const MAX_DEFAULT_SWEEPS: usize = 200;
/// Target accuracy in the default sweep-count formula.
pub const DEFAULT_EPSILON: f64 = 1e-6;

const SPLIT_STREAM: u64 = 0x5f11_7000;

#[derive(Debug, Clone, PartialEq)]
pub struct WalsConfig {
    pub rank: usize,
    /// Number of sweeps; `None` derives it from the sample energy.
    pub sweeps: Option<usize>,
    /// Split `Ω` into `rank·sweeps` disjoint parts, one per column update.
    pub fresh_samples: bool,
    /// Per-row magnitude bounds applied after every column update.
    pub row_caps: Option<Vec<f64>>,
    pub epsilon: f64,
    pub seed: u64,
}

impl WalsConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            sweeps: None,
            fresh_samples: false,
            row_caps: None,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if self.sweeps == Some(0) {
            return Err(Error::invalid("number of sweeps must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if let Some(c) = &self.row_caps {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: c.len(),
                });
            }
            if c.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::invalid("row caps must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// `⌈4√r · ln(‖T̂‖_F/ε)⌉`, clamped to `[1, MAX_DEFAULT_SWEEPS]`, where `‖T̂‖_F`
/// is the reweighted-sample estimate.
pub fn default_sweeps(samples: &SampledTensor, rank: usize, epsilon: f64) -> usize {
    let fro = samples.frobenius_sq_estimate().sqrt();
    let b = 4.0 * (rank as f64).sqrt() * (fro / epsilon).ln();
    if b.is_nan() {
        1
    } else {
        // Saturating cast: +inf lands on the cap, -inf on 1.
        (b.ceil().max(1.0) as usize).min(MAX_DEFAULT_SWEEPS)
    }
}

/// Uniformly random partition of `Ω` into `parts` pieces whose sizes differ
/// by at most one.
pub fn split_omega(samples: &SampledTensor, parts: usize, seed: u64) -> Result<Vec<SampledTensor>> {
    if parts == 0 {
        return Err(Error::invalid("cannot split into zero parts"));
    }
    if samples.len() < parts {
        return Err(Error::invalid(format!(
            "{} sampled triples cannot be split into {parts} nonempty parts",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng::substream(seed, SPLIT_STREAM));
    let mut buckets = vec![Vec::with_capacity(samples.len() / parts + 1); parts];
    for (pos, idx) in order.into_iter().enumerate() {
        buckets[pos % parts].push(samples.records()[idx]);
    }
    buckets
        .into_iter()
        .map(|b| SampledTensor::new(samples.dim(), b))
        .collect()
}

/// Closest unit vector to the direction of `v` subject to `|u_i| ≤ caps_i`.
///
/// The solution scales the uncapped coordinates by a common factor and pins
/// the rest to their caps. If the caps cannot hold a unit vector
/// (`Σ caps² < 1` over the support of `v`), falls back to clip-then-normalize.
pub fn cap_and_normalize(v: &[f64], caps: &[f64]) -> Result<Vec<f64>> {
    if v.len() != caps.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: caps.len(),
        });
    }
    let nv = norm2(v);
    if !(nv > 0.0 && nv.is_finite()) {
        return Err(Error::Degenerate("cannot normalize a zero or non-finite vector".into()));
    }
    let feasible: f64 = v
        .iter()
        .zip(caps)
        .filter(|(x, _)| **x != 0.0)
        .map(|(_, c)| c * c)
        .sum();
    if feasible < 1.0 {
        let clipped: Vec<f64> = v.iter().zip(caps).map(|(x, c)| x.clamp(-c, *c)).collect();
        let nc = norm2(&clipped);
        if nc == 0.0 {
            return Err(Error::Degenerate("row caps zero out the column".into()));
        }
        return Ok(clipped.into_iter().map(|x| x / nc).collect());
    }

    // Breakpoints t_i = c_i/|v_i|: coordinate i saturates once the scale passes t_i.
    let mut support: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    support.sort_by(|&a, &b| {
        (caps[a] / v[a].abs())
            .total_cmp(&(caps[b] / v[b].abs()))
            .then(a.cmp(&b))
    });
    // Suffix sums taken from the tail: subtracting a dominant coordinate from
    // a running total would cancel the tiny remainder to zero.
    let mut free_sq = vec![0.0; support.len() + 1];
    for (pos, &i) in support.iter().enumerate().rev() {
        free_sq[pos] = free_sq[pos + 1] + v[i] * v[i];
    }
    let mut pinned_sq = 0.0f64;
    let mut scale = f64::INFINITY;
    for (pos, &i) in support.iter().enumerate() {
        let t = ((1.0 - pinned_sq).max(0.0) / free_sq[pos]).sqrt();
        if t <= caps[i] / v[i].abs() {
            scale = t;
            break;
        }
        pinned_sq += caps[i] * caps[i];
    }
    Ok(v.iter()
        .zip(caps)
        .map(|(&x, &c)| {
            if x == 0.0 {
                0.0
            } else if scale.is_finite() {
                x.signum() * (x.abs() * scale).min(c)
            } else {
                x.signum() * c
            }
        })
        .collect())
}

/// Applies [`cap_and_normalize`] to every column.
pub fn threshold_factors(f: &CpFactors, caps: &[f64]) -> Result<CpFactors> {
    let cols = f
        .columns()
        .map(|c| cap_and_normalize(c, caps))
        .collect::<Result<Vec<_>>>()?;
    CpFactors::from_columns(cols, f.sigma().to_vec())
}

/// Result of solving for one column.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnUpdate {
    /// Unconstrained least-squares solution `Û_q`.
    pub raw: Vec<f64>,
    /// `‖Û_q‖`.
    pub sigma: f64,
    /// `Û_q/σ_q` after capping.
    pub column: Vec<f64>,
    /// Rows whose normal equation had a zero denominator and kept `σ_q U_iq`.
    pub untouched_rows: usize,
}

/// One closed-form weighted least-squares update of column `q`:
/// `Û_iq = Σ W R U_jq U_kq / Σ W U_jq² U_kq²` over sampled `(i,j,k)`, where
/// `R` removes every other component from the sampled value.
pub fn wals_step(
    samples: &SampledTensor,
    factors: &CpFactors,
    q: usize,
    caps: Option<&[f64]>,
) -> Result<ColumnUpdate> {
    let n = factors.dim();
    let r = factors.rank();
    if samples.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: samples.dim(),
        });
    }
    if q >= r {
        return Err(Error::invalid(format!("column {q} out of range for rank {r}")));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no sampled entries to fit"));
    }
    let sigma = factors.sigma();
    let uq = factors.column(q);

    let solved: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for rec in samples.row(i) {
                let (j, k) = (rec.j, rec.k);
                let mut others = 0.0;
                for l in (0..r).filter(|&l| l != q) {
                    others += sigma[l] * factors.u(i, l) * factors.u(j, l) * factors.u(k, l);
                }
                let g = uq[j] * uq[k];
                num += rec.weight * (rec.value - others) * g;
                den += rec.weight * g * g;
            }
            (den > 0.0).then(|| num / den)
        })
        .collect();

    let untouched_rows = solved.iter().filter(|x| x.is_none()).count();
    let raw: Vec<f64> = solved
        .iter()
        .zip(uq)
        .map(|(s, u)| s.unwrap_or(sigma[q] * u))
        .collect();
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite update for column {q}")));
    }
    let s = norm2(&raw);
    if !(s > 0.0) {
        return Err(Error::Degenerate(format!("column {q} update vanished")));
    }
    let column = match caps {
        Some(c) => cap_and_normalize(&raw, c)?,
        None => raw.iter().map(|x| x / s).collect(),
    };
    Ok(ColumnUpdate {
        raw,
        sigma: s,
        column,
        untouched_rows,
    })
}

/// Replaces column `q` of `factors` with an update.
pub fn apply_update(factors: &CpFactors, q: usize, upd: &ColumnUpdate) -> Result<CpFactors> {
    let mut cols: Vec<Vec<f64>> = factors.columns().map(<[f64]>::to_vec).collect();
    let mut sigma = factors.sigma().to_vec();
    cols[q] = upd.column.clone();
    sigma[q] = upd.sigma;
    CpFactors::from_columns(cols, sigma)
}

/// `Σ_Ω W (T_ijk − T̂_ijk)²`.
pub fn weighted_residual_sq(samples: &SampledTensor, factors: &CpFactors) -> f64 {
    let per_row: Vec<f64> = (0..samples.dim())
        .into_par_iter()
        .map(|i| {
            samples
                .row(i)
                .iter()
                .map(|rec| rec.weight * (rec.value - factors.entry(rec.i, rec.j, rec.k)).powi(2))
                .sum()
        })
        .collect();
    per_row.iter().sum()
}

/// Weighted residual on `Ω` relative to the weighted sample energy.
pub fn relative_residual(samples: &SampledTensor, factors: &CpFactors) -> f64 {
    let energy = samples.frobenius_sq_estimate();
    let res = weighted_residual_sq(samples, factors);
    if energy > 0.0 {
        (res / energy).sqrt()
    } else {
        res.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepDiagnostics {
    /// 0 for the initialization.
    pub sweep: usize,
    /// Relative weighted residual on all of `Ω`.
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_inf: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WalsOutput {
    /// Also serves as the lazily evaluated completed tensor.
    pub factors: CpFactors,
    pub diagnostics: Vec<SweepDiagnostics>,
}

/// Runs the full alternating loop from `init`. `truth` only feeds diagnostics.
pub fn wals(
    samples: &SampledTensor,
    cfg: &WalsConfig,
    init: &CpFactors,
    truth: Option<&CpFactors>,
) -> Result<WalsOutput> {
    let n = init.dim();
    cfg.validate(n)?;
    if init.rank() != cfg.rank {
        return Err(Error::invalid(format!(
            "initial factors have rank {}, config asks for {}",
            init.rank(),
            cfg.rank
        )));
    }
    if samples.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: samples.dim(),
        });
    }
    if let Some(t) = truth {
        if t.dim() != n || t.rank() != cfg.rank {
            return Err(Error::invalid("ground-truth factors do not match the problem shape"));
        }
    }
    let sweeps = cfg
        .sweeps
        .unwrap_or_else(|| default_sweeps(samples, cfg.rank, cfg.epsilon));
    let parts = if cfg.fresh_samples {
        Some(split_omega(samples, cfg.rank * sweeps, cfg.seed)?)
    } else {
        None
    };
    let caps = cfg.row_caps.as_deref();

    let diag = |sweep: usize, f: &CpFactors| -> Result<SweepDiagnostics> {
        Ok(SweepDiagnostics {
            sweep,
            residual: relative_residual(samples, f),
            d_inf: truth.map(|t| metrics::d_inf(f, t)).transpose()?,
        })
    };

    let mut factors = init.clone();
    let mut diagnostics = vec![diag(0, &factors)?];
    for t in 0..sweeps {
        let mut cols = Vec::with_capacity(cfg.rank);
        let mut sigma = Vec::with_capacity(cfg.rank);
        for q in 0..cfg.rank {
            let subset = match &parts {
                Some(p) => &p[t * cfg.rank + q],
                None => samples,
            };
            let upd = wals_step(subset, &factors, q, caps).map_err(|e| match e {
                Error::Numerical(msg) | Error::Degenerate(msg) => Error::Numerical(format!(
                    "sweep {}: {msg}; diagnostics so far: {}",
                    t + 1,
                    serde_json::to_string(&diagnostics).unwrap_or_default()
                )),
                other => other,
            })?;
            cols.push(upd.column);
            sigma.push(upd.sigma);
        }
        factors = CpFactors::from_columns(cols, sigma)?;
        diagnostics.push(diag(t + 1, &factors)?);
    }
    Ok(WalsOutput {
        factors,
        diagnostics,
    })
}

/// Power-method initialization on `R_Ω(T)`, thresholded at the row caps
/// when present, followed by [`wals`].
pub fn complete(
    samples: &SampledTensor,
    cfg: &WalsConfig,
    rtpm_cfg: &RtpmConfig,
    truth: Option<&CpFactors>,
) -> Result<WalsOutput> {
    cfg.validate(samples.dim())?;
    let mut init = rtpm::rtpm(samples, cfg.rank, rtpm_cfg)?;
    if let Some(c) = &cfg.row_caps {
        init = threshold_factors(&init, c)?;
    }
    wals(samples, cfg, &init, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SampleRecord;

    fn full(f: &CpFactors) -> SampledTensor {
        let n = f.dim();
        let mut recs = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    recs.push(SampleRecord::new(i, j, k, f.entry(i, j, k), 1.0));
                }
            }
        }
        SampledTensor::new(n, recs).unwrap()
    }

    fn dummy(n: usize, count: usize) -> SampledTensor {
        let recs = (0..count)
            .map(|c| SampleRecord::new(c % n, (c / n) % n, c / (n * n), 1.0, 0.5))
            .collect();
        SampledTensor::new(n, recs).unwrap()
    }

    #[test]
    fn dominant_coordinate_keeps_tiny_remainder() {
        let mut v = vec![1e-150; 8];
        v[3] = -1.0;
        let caps = vec![0.97; 8];
        let u = cap_and_normalize(&v, &caps).unwrap();
        assert_eq!(u[3], -0.97);
        assert!((norm2(&u) - 1.0).abs() < 1e-12);
        assert!(u.iter().all(|x| x.abs() <= 0.97));
    }

    #[test]
    fn split_sizes() {
        let parts = split_omega(&dummy(3, 12), 4, 1).unwrap();
        assert!(parts.iter().all(|p| p.len() == 3));
        let mut sizes: Vec<usize> = split_omega(&dummy(3, 13), 4, 1)
            .unwrap()
            .iter()
            .map(|p| p.len())
            .collect();
        sizes.sort();
        assert_eq!(sizes, vec![3, 3, 3, 4]);
        assert!(split_omega(&dummy(3, 3), 4, 1).is_err());
    }

    #[test]
    fn exact_factors_are_fixed() {
        let f = CpFactors::from_columns(vec![vec![0.6, 0.8, 0.0]], vec![2.0]).unwrap();
        let upd = wals_step(&full(&f), &f, 0, None).unwrap();
        for (a, b) in upd.raw.iter().zip(f.column(0)) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        assert!((upd.sigma - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_step_is_a_power_step() {
        let truth = CpFactors::from_columns(vec![vec![0.6, 0.8, 0.0]], vec![2.0]).unwrap();
        let u = vec![0.0, 0.6, 0.8];
        let init = CpFactors::from_columns(vec![u.clone()], vec![1.0]).unwrap();
        let upd = wals_step(&full(&truth), &init, 0, None).unwrap();
        let c = 0.48f64;
        for (a, b) in upd.raw.iter().zip(truth.column(0)) {
            assert!((a - 2.0 * c * c * b).abs() < 1e-12);
        }
    }

    #[test]
    fn caps_hold_after_normalization() {
        let v = vec![3.0, 1.0, -1.0, 0.5];
        let caps = vec![0.5, 0.9, 0.9, 0.9];
        let u = cap_and_normalize(&v, &caps).unwrap();
        assert!((norm2(&u) - 1.0).abs() < 1e-14);
        for (x, c) in u.iter().zip(&caps) {
            assert!(x.abs() <= c + 1e-15);
        }
        assert_eq!(u[0], 0.5);
        assert!(u[2] < 0.0);
        // Non-binding caps leave the direction alone.
        let loose = cap_and_normalize(&v, &[10.0; 4]).unwrap();
        for (a, b) in loose.iter().zip(&v) {
            assert!((a - b / norm2(&v)).abs() < 1e-15);
        }
    }

    #[test]
    fn infeasible_caps_fall_back_to_clipping() {
        let u = cap_and_normalize(&[1.0, 1.0], &[0.1, 0.2]).unwrap();
        assert!((norm2(&u) - 1.0).abs() < 1e-14);
        assert!((u[1] / u[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn converges_in_one_sweep_from_truth() {
        let f = CpFactors::from_columns(vec![vec![0.0, 0.6, 0.8, 0.0]], vec![1.5]).unwrap();
        let mut cfg = WalsConfig::new(1);
        cfg.sweeps = Some(1);
        let out = wals(&full(&f), &cfg, &f, Some(&f)).unwrap();
        assert_eq!(out.diagnostics.len(), 2);
        assert!(out.diagnostics[1].residual < 1e-10);
        assert!(out.diagnostics[1].d_inf.unwrap() < 1e-12);
    }

    #[test]
    fn zero_denominator_keeps_previous_coordinate() {
        let f = CpFactors::from_columns(vec![vec![0.6, 0.8]], vec![2.0]).unwrap();
        let s = SampledTensor::new(2, vec![SampleRecord::new(0, 0, 0, 2.0 * 0.216, 1.0)]).unwrap();
        let upd = wals_step(&s, &f, 0, None).unwrap();
        assert_eq!(upd.untouched_rows, 1);
        assert!((upd.raw[0] - 1.2).abs() < 1e-12);
        assert_eq!(upd.raw[1], 2.0 * 0.8);
    }

    #[test]
    fn default_sweeps_formula() {
        let s = SampledTensor::new(2, vec![SampleRecord::new(0, 0, 0, 1.0, 1.0)]).unwrap();
        assert_eq!(default_sweeps(&s, 4, 1e-6), (8.0 * 1e6f64.ln()).ceil() as usize);
        let big = SampledTensor::new(2, vec![SampleRecord::new(0, 0, 0, 1e300, 1.0)]).unwrap();
        assert_eq!(default_sweeps(&big, 100, 1e-6), MAX_DEFAULT_SWEEPS);
    }
}
