//! Two-pass approximate factorization of a noisy low-rank tensor.
//!
//! Pass 1 reads every face once to get face norms. Pass 2 reads every face
//! once more and keeps a Bernoulli sample of entries. Everything after that
//! (power-method init, thresholding, WALS) sees only the [`SampledTensor`].

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::completion::{self, threshold_factors, SweepDiagnostics, WalsConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::rtpm::{self, RtpmConfig};
use crate::sampling::{inclusion_probability, EntryDistribution, Family, SampleMode};
use crate::tensor::{canonical, CpFactors, DenseTensor3, SampleRecord, SampledTensor};

const PASS2_TAG: u64 = 0x9a55_0002;
const RTPM_TAG: u64 = 0x9a55_0003;
const WALS_TAG: u64 = 0x9a55_0004;

/// Row-major face access to a symmetric tensor that may not be stored.
pub trait FaceSource: Sync {
    fn dim(&self) -> usize;
    /// Writes face `i` (`buf[j·n + k] = T_ijk`).
    fn fill_face(&self, i: usize, buf: &mut [f64]);
}

impl FaceSource for DenseTensor3 {
    fn dim(&self) -> usize {
        DenseTensor3::dim(self)
    }

    fn fill_face(&self, i: usize, buf: &mut [f64]) {
        buf.copy_from_slice(self.face(i));
    }
}

/// Wraps a source and counts face reads; `passes()` is reads divided by `n`.
pub struct CountingSource<'a, S: FaceSource + ?Sized> {
    inner: &'a S,
    reads: AtomicUsize,
}

impl<'a, S: FaceSource + ?Sized> CountingSource<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn face_reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    /// Full passes completed (partial passes round down).
    pub fn passes(&self) -> usize {
        self.face_reads() / self.inner.dim().max(1)
    }
}

impl<S: FaceSource + ?Sized> FaceSource for CountingSource<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn fill_face(&self, i: usize, buf: &mut [f64]) {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.fill_face(i, buf);
    }
}

/// Statistics gathered in the first pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaceStats {
    /// `‖T_i‖_F²` per face.
    pub face_sq: Vec<f64>,
    pub fro: f64,
    /// `Σ|T_ijk|`, needed only by the L1 baseline.
    pub abs_sum: f64,
    /// `νᵢ = ‖T_i‖_F/‖T‖_F + 1/√n`.
    pub nu: Vec<f64>,
    /// `(Σ νᵢ^{3/2})²`.
    pub z: f64,
}

/// One streaming pass computing face norms, `ν` and `Z`.
pub fn face_pass<S: FaceSource + ?Sized>(src: &S) -> Result<FaceStats> {
    let n = src.dim();
    if n == 0 {
        return Err(Error::invalid("tensor dimension must be positive"));
    }
    let per_face: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; n * n];
            src.fill_face(i, &mut buf);
            (
                buf.iter().map(|x| x * x).sum(),
                buf.iter().map(|x| x.abs()).sum(),
            )
        })
        .collect();
    let face_sq: Vec<f64> = per_face.iter().map(|x| x.0).collect();
    let abs_sum = per_face.iter().map(|x| x.1).sum();
    let dist = EntryDistribution::noisy_from_face_norms(&face_sq)?;
    Ok(FaceStats {
        fro: face_sq.iter().sum::<f64>().sqrt(),
        abs_sum,
        nu: dist.nu().expect("mixture carries nu").to_vec(),
        z: dist.z().expect("mixture carries Z"),
        face_sq,
    })
}

fn pass2_distribution(family: Family, n: usize, stats: &FaceStats) -> Result<EntryDistribution> {
    match family {
        Family::NoisyMixture => EntryDistribution::noisy_from_face_norms(&stats.face_sq),
        Family::Uniform => EntryDistribution::uniform(n),
        Family::L2 => EntryDistribution::value_mass_streaming(n, 2, stats.fro * stats.fro),
        Family::L1 => EntryDistribution::value_mass_streaming(n, 1, stats.abs_sum),
        other => Err(Error::invalid(format!(
            "{other} sampling needs factor or sample-vector rows, which a plain tensor does not provide"
        ))),
    }
}

/// Second pass: visits every entry once and keeps it with probability
/// `min{m·p, 1}`. Face `i` draws from its own substream.
pub fn sample_pass<S: FaceSource + ?Sized>(
    src: &S,
    dist: &EntryDistribution,
    m: u64,
    seed: u64,
) -> Result<(SampledTensor, usize)> {
    let n = src.dim();
    if dist.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: dist.dim(),
        });
    }
    let faces: Vec<(Vec<SampleRecord>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; n * n];
            src.fill_face(i, &mut buf);
            let mut r = rng::substream(seed, i as u64);
            let mut out = Vec::new();
            let mut certain = 0;
            for j in 0..n {
                for k in 0..n {
                    let v = buf[j * n + k];
                    let q = inclusion_probability(
                        dist.prob_with_value(i, j, k, v),
                        m,
                        SampleMode::ExactBernoulli,
                    );
                    if q >= 1.0 {
                        certain += 1;
                        out.push(SampleRecord::new(i, j, k, v, 1.0));
                    } else if q > 0.0 && r.random::<f64>() < q {
                        out.push(SampleRecord::new(i, j, k, v, q));
                    }
                }
            }
            (out, certain)
        })
        .collect();
    let deterministic = faces.iter().map(|f| f.1).sum();
    let records = faces.into_iter().flat_map(|f| f.0).collect();
    Ok((SampledTensor::new(n, records)?, deterministic))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizeConfig {
    pub m: u64,
    pub rank: usize,
    /// WALS sweeps; `None` uses the default formula.
    pub sweeps: Option<usize>,
    pub family: Family,
    pub rtpm: RtpmConfig,
    pub fresh_samples: bool,
    pub seed: u64,
}

impl FactorizeConfig {
    pub fn new(m: u64, rank: usize, seed: u64) -> Self {
        Self {
            m,
            rank,
            sweeps: None,
            family: Family::NoisyMixture,
            rtpm: RtpmConfig::default(),
            fresh_samples: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorizeDiagnostics {
    pub family: String,
    pub passes: usize,
    pub samples: usize,
    pub deterministic: usize,
    pub fro: f64,
    pub z: f64,
    pub nu: Vec<f64>,
    pub sweeps: Vec<SweepDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct FactorizeOutput {
    pub factors: CpFactors,
    /// Thresholded power-method initialization.
    pub init: CpFactors,
    pub diagnostics: FactorizeDiagnostics,
}

/// Full two-pass pipeline. `truth` only feeds per-sweep diagnostics.
pub fn factorize<S: FaceSource + ?Sized>(
    src: &S,
    cfg: &FactorizeConfig,
    truth: Option<&CpFactors>,
) -> Result<FactorizeOutput> {
    if cfg.m == 0 || cfg.rank == 0 {
        return Err(Error::invalid("factorize needs m >= 1 and rank >= 1"));
    }
    let counted = CountingSource::new(src);
    let n = counted.dim();
    let stats = face_pass(&counted)?;
    let dist = pass2_distribution(cfg.family, n, &stats)?;
    let (samples, deterministic) =
        sample_pass(&counted, &dist, cfg.m, rng::derive_seed(cfg.seed, PASS2_TAG))?;
    let passes = counted.passes();
    if samples.is_empty() {
        return Err(Error::Degenerate("second pass kept no entries".into()));
    }

    let caps: Vec<f64> = stats.nu.iter().map(|v| 2.0 * v).collect();
    let rcfg = RtpmConfig {
        seed: rng::derive_seed(cfg.seed, RTPM_TAG),
        ..cfg.rtpm
    };
    let init = threshold_factors(&rtpm::rtpm(&samples, cfg.rank, &rcfg)?, &caps)?;
    let wcfg = WalsConfig {
        rank: cfg.rank,
        sweeps: cfg.sweeps,
        fresh_samples: cfg.fresh_samples,
        row_caps: Some(caps),
        epsilon: completion::DEFAULT_EPSILON,
        seed: rng::derive_seed(cfg.seed, WALS_TAG),
    };
    let out = completion::wals(&samples, &wcfg, &init, truth)?;
    Ok(FactorizeOutput {
        factors: out.factors,
        init,
        diagnostics: FactorizeDiagnostics {
            family: cfg.family.name().to_string(),
            passes,
            samples: samples.len(),
            deterministic,
            fro: stats.fro,
            z: stats.z,
            nu: stats.nu,
            sweeps: out.diagnostics,
        },
    })
}

/// Shape of generated noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    /// `±‖E‖_F/n^{3/2}` with hashed signs. Meets the flatness cap with equality.
    #[default]
    Sign,
    /// Gaussian entries rescaled to the target norm. Only meets the flatness
    /// cap when `flatness_slack` is well above 1.
    Gaussian,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign" => Ok(Self::Sign),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::invalid(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Target `‖E‖_F`.
    pub frobenius_level: f64,
    pub kind: NoiseKind,
    /// Constant in `‖E‖_F ≤ C σ*_min/(100 r)`.
    pub c: f64,
    /// Multiplier on the entrywise cap `‖E‖_F/n^{3/2}`.
    pub flatness_slack: f64,
}

impl NoiseSpec {
    pub fn new(frobenius_level: f64, kind: NoiseKind) -> Self {
        Self {
            frobenius_level,
            kind,
            c: 1.0,
            flatness_slack: 1.0,
        }
    }
}

/// Resample rounds for Gaussian entries that break the flatness cap.
pub const NOISE_RESAMPLE_ROUNDS: u64 = 3;

fn triple_key(n: usize, i: usize, j: usize, k: usize) -> u64 {
    let (a, b, c) = canonical(i, j, k);
    ((a * n + b) * n + c) as u64
}

/// Sign of the hashed sign-noise entry at `(i, j, k)`; symmetric by construction.
pub fn sign_noise(seed: u64, n: usize, i: usize, j: usize, k: usize) -> f64 {
    if rng::derive_seed(seed, triple_key(n, i, j, k)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn hashed_gaussian(seed: u64, key: u64, round: u64) -> f64 {
    let h1 = rng::derive_seed(seed, key.wrapping_mul(NOISE_RESAMPLE_ROUNDS + 1) + round);
    let h2 = rng::splitmix64(h1);
    let u1 = ((h1 >> 11) + 1) as f64 * f64::EPSILON / 2.0;
    let u2 = (h2 >> 11) as f64 * f64::EPSILON / 2.0;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Symmetric noise tensor with `‖E‖_F` equal to the requested level.
pub fn generate_noise(n: usize, spec: &NoiseSpec, seed: u64) -> Result<DenseTensor3> {
    let f = spec.frobenius_level;
    if !(f >= 0.0 && f.is_finite()) {
        return Err(Error::invalid("noise level must be finite and nonnegative"));
    }
    if !(spec.flatness_slack >= 1.0) {
        return Err(Error::invalid("flatness slack must be at least 1"));
    }
    if f == 0.0 {
        return DenseTensor3::zeros(n);
    }
    let flat = f / (n as f64).powf(1.5);
    match spec.kind {
        NoiseKind::Sign => {
            DenseTensor3::from_symmetric_fn(n, |i, j, k| flat * sign_noise(seed, n, i, j, k))
        }
        NoiseKind::Gaussian => {
            let cap = spec.flatness_slack * flat;
            let mut raw =
                DenseTensor3::from_symmetric_fn(n, |i, j, k| hashed_gaussian(seed, triple_key(n, i, j, k), 0))?;
            for round in 0..=NOISE_RESAMPLE_ROUNDS {
                let scale = f / raw.frobenius_norm();
                let violators = raw.as_slice().iter().filter(|x| (*x * scale).abs() > cap).count();
                if violators == 0 {
                    return DenseTensor3::from_symmetric_fn(n, |i, j, k| raw.get(i, j, k) * scale);
                }
                if round == NOISE_RESAMPLE_ROUNDS {
                    return Err(Error::invalid(format!(
                        "{violators} Gaussian noise entries still exceed {} x ||E||_F/n^1.5 after \
                         {NOISE_RESAMPLE_ROUNDS} resampling rounds; the strict cap admits only \
                         constant-magnitude noise (use sign noise or a larger slack)",
                        spec.flatness_slack
                    )));
                }
                let prev = raw;
                raw = DenseTensor3::from_symmetric_fn(n, |i, j, k| {
                    let v = prev.get(i, j, k);
                    if (v * scale).abs() > cap {
                        hashed_gaussian(seed, triple_key(n, i, j, k), round + 1)
                    } else {
                        v
                    }
                })?;
            }
            unreachable!("loop returns on its last round")
        }
    }
}

/// Measured noise against both assumption bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseCheck {
    pub fro: f64,
    pub inf: f64,
    /// `C σ*_min / (100 r)`.
    pub fro_bound: f64,
    /// `slack · ‖E‖_F / n^{3/2}`.
    pub inf_bound: f64,
    pub fro_ok: bool,
    pub inf_ok: bool,
}

/// Relative slack absorbing rounding in the bound comparisons.
pub const NOISE_CHECK_RTOL: f64 = 1e-12;

pub fn check_noise_assumption(
    e: &DenseTensor3,
    sigma_min: f64,
    rank: usize,
    c: f64,
    flatness_slack: f64,
) -> NoiseCheck {
    let n = e.dim() as f64;
    let fro = e.frobenius_norm();
    let inf = e.max_abs();
    let fro_bound = c * sigma_min / (100.0 * rank as f64);
    let inf_bound = flatness_slack * fro / n.powf(1.5);
    NoiseCheck {
        fro,
        inf,
        fro_bound,
        inf_bound,
        fro_ok: fro <= fro_bound * (1.0 + NOISE_CHECK_RTOL),
        inf_ok: inf <= inf_bound * (1.0 + NOISE_CHECK_RTOL),
    }
}

/// `Σ σ_l U_l⊗U_l⊗U_l + E` with sign noise, evaluated face by face without
/// ever storing `n³` values.
pub struct NoisyLowRank {
    pub factors: CpFactors,
    /// Magnitude of every noise entry (`‖E‖_F/n^{3/2}`).
    pub noise_entry: f64,
    pub noise_seed: u64,
}

impl NoisyLowRank {
    pub fn new(factors: CpFactors, frobenius_level: f64, noise_seed: u64) -> Result<Self> {
        if !(frobenius_level >= 0.0 && frobenius_level.is_finite()) {
            return Err(Error::invalid("noise level must be finite and nonnegative"));
        }
        let n = factors.dim() as f64;
        Ok(Self {
            noise_entry: frobenius_level / n.powf(1.5),
            factors,
            noise_seed,
        })
    }
}

impl FaceSource for NoisyLowRank {
    fn dim(&self) -> usize {
        self.factors.dim()
    }

    fn fill_face(&self, i: usize, buf: &mut [f64]) {
        let n = self.factors.dim();
        for j in 0..n {
            for k in 0..n {
                let mut v = self.factors.entry(i, j, k);
                if self.noise_entry > 0.0 {
                    v += self.noise_entry * sign_noise(self.noise_seed, n, i, j, k);
                }
                buf[j * n + k] = v;
            }
        }
    }
}
