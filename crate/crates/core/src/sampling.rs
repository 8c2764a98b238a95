//! Entry-sampling distributions over index triples and the sampler that
//! draws `Ω` from them.
//!
//! All product-form families share one shape: a symmetric sum of pairwise
//! products of per-index weights,
//!
//! ```text
//! p(i,j,k) = (a_i a_j + a_j a_k + a_k a_i) / (3 n A²),   A = Σ a_i
//! ```
//!
//! which normalizes exactly because `Σ_ijk a_i a_j = n A²`. The families
//! differ only in how `a` is derived from row norms.

use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{DenseTensor3, SampleRecord, SampledTensor};

/// Dimension above which [`SamplePlan::auto`] switches to categorical sampling.
pub const EXACT_BERNOULLI_MAX_DIM: usize = 200;

const DRAW_CHUNK: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Uniform,
    L1,
    L2,
    SumL3,
    ProdL3,
    TensorLS,
    NoisyMixture,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Uniform,
        Family::L1,
        Family::L2,
        Family::SumL3,
        Family::ProdL3,
        Family::TensorLS,
        Family::NoisyMixture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::L1 => "l1",
            Family::L2 => "l2",
            Family::SumL3 => "suml3",
            Family::ProdL3 => "prodl3",
            Family::TensorLS => "tensorls",
            Family::NoisyMixture => "noisy",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown distribution `{s}`")))
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Flat,
    /// Pairwise products of `a`, normalized by `3 n A²`.
    Pair { a: Vec<f64>, total: f64 },
    /// `(b_i + b_j + b_k) / (3 n² B)`.
    Sum { b: Vec<f64>, total: f64 },
    /// `|T_ijk|^power / Σ |T|^power`.
    Value { power: i32, total: f64 },
    /// Half pair-product on `ν^{3/2}`, half `T² / ‖T‖_F²`.
    Mixture {
        a: Vec<f64>,
        total: f64,
        fro_sq: f64,
    },
}

/// A probability mass over the `n³` index triples.
#[derive(Debug, Clone)]
pub struct EntryDistribution {
    n: usize,
    family: Family,
    shape: Shape,
    values: Option<Arc<DenseTensor3>>,
    nu: Option<Vec<f64>>,
}

fn check_row_norms(norms: &[f64]) -> Result<()> {
    if norms.is_empty() {
        return Err(Error::invalid("row norms are empty"));
    }
    if let Some(x) = norms.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::invalid(format!("row norm {x} is not a finite nonnegative number")));
    }
    if norms.iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate(
            "all row norms are zero; the distribution is undefined".into(),
        ));
    }
    Ok(())
}

impl EntryDistribution {
    fn pair(family: Family, a: Vec<f64>) -> Self {
        let total = a.iter().sum();
        Self {
            n: a.len(),
            family,
            shape: Shape::Pair { a, total },
            values: None,
            nu: None,
        }
    }

    /// Sparsification distribution on sample-matrix row norms `‖Xⁱ‖`:
    /// pair products of `‖Xⁱ‖³`.
    pub fn from_samples(row_norms: &[f64]) -> Result<Self> {
        check_row_norms(row_norms)?;
        Ok(Self::pair(
            Family::TensorLS,
            row_norms.iter().map(|x| x.powi(3)).collect(),
        ))
    }

    /// Completion distribution on factor row norms `‖(U*)ⁱ‖`: pair products of `‖(U*)ⁱ‖^{3/2}`.
    pub fn from_factor_rows(row_norms: &[f64]) -> Result<Self> {
        check_row_norms(row_norms)?;
        Ok(Self::pair(
            Family::TensorLS,
            row_norms.iter().map(|x| x.powf(1.5)).collect(),
        ))
    }

    /// Sum of cubed row norms.
    pub fn sum_l3(row_norms: &[f64]) -> Result<Self> {
        check_row_norms(row_norms)?;
        let b: Vec<f64> = row_norms.iter().map(|x| x.powi(3)).collect();
        let total = b.iter().sum();
        Ok(Self {
            n: b.len(),
            family: Family::SumL3,
            shape: Shape::Sum { b, total },
            values: None,
            nu: None,
        })
    }

    /// Pair products of cubed row norms.
    pub fn prod_l3(row_norms: &[f64]) -> Result<Self> {
        check_row_norms(row_norms)?;
        Ok(Self::pair(
            Family::ProdL3,
            row_norms.iter().map(|x| x.powi(6)).collect(),
        ))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(Self {
            n,
            family: Family::Uniform,
            shape: Shape::Flat,
            values: None,
            nu: None,
        })
    }

    /// `p ∝ |T_ijk|`.
    pub fn l1(t: Arc<DenseTensor3>) -> Result<Self> {
        Self::value_mass(Family::L1, 1, t)
    }

    /// `p ∝ T_ijk²`.
    pub fn l2(t: Arc<DenseTensor3>) -> Result<Self> {
        Self::value_mass(Family::L2, 2, t)
    }

    /// `p ∝ |T_ijk|^power` from a precomputed total `Σ|T|^power`, for callers
    /// that stream values through [`EntryDistribution::prob_with_value`].
    pub fn value_mass_streaming(n: usize, power: i32, total: f64) -> Result<Self> {
        let family = match power {
            1 => Family::L1,
            2 => Family::L2,
            _ => return Err(Error::invalid(format!("unsupported value power {power}"))),
        };
        if n == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{family} distribution needs a positive total, got {total}"
            )));
        }
        Ok(Self {
            n,
            family,
            shape: Shape::Value { power, total },
            values: None,
            nu: None,
        })
    }

    fn value_mass(family: Family, power: i32, t: Arc<DenseTensor3>) -> Result<Self> {
        let total: f64 = t.as_slice().iter().map(|x| x.abs().powi(power)).sum();
        if total == 0.0 {
            return Err(Error::Degenerate(format!(
                "{family} distribution of an all-zero tensor"
            )));
        }
        Ok(Self {
            n: t.dim(),
            family,
            shape: Shape::Value { power, total },
            values: Some(t),
            nu: None,
        })
    }

    /// Noise-aware mixture built from a dense tensor (reads it once for face norms).
    pub fn noisy_mixture(t: Arc<DenseTensor3>) -> Result<Self> {
        let n = t.dim();
        let face_sq: Vec<f64> = (0..n).map(|i| t.face(i).iter().map(|x| x * x).sum()).collect();
        let mut d = Self::noisy_from_face_norms(&face_sq)?;
        d.values = Some(t);
        Ok(d)
    }

    /// Noise-aware mixture from squared face Frobenius norms only. The value
    /// term must then be supplied through [`EntryDistribution::prob_with_value`].
    pub fn noisy_from_face_norms(face_sq: &[f64]) -> Result<Self> {
        if face_sq.is_empty() {
            return Err(Error::invalid("no faces"));
        }
        let n = face_sq.len();
        let fro_sq: f64 = face_sq.iter().sum();
        if !(fro_sq > 0.0 && fro_sq.is_finite()) {
            return Err(Error::Degenerate("noisy mixture of an all-zero tensor".into()));
        }
        let fro = fro_sq.sqrt();
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();
        let nu: Vec<f64> = face_sq.iter().map(|s| s.sqrt() / fro + inv_sqrt_n).collect();
        let a: Vec<f64> = nu.iter().map(|x| x.powf(1.5)).collect();
        let total = a.iter().sum();
        Ok(Self {
            n,
            family: Family::NoisyMixture,
            shape: Shape::Mixture { a, total, fro_sq },
            values: None,
            nu: Some(nu),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Per-index weights entering the product or sum terms (empty for
    /// value-only families).
    pub fn row_stat(&self) -> &[f64] {
        match &self.shape {
            Shape::Pair { a, .. } | Shape::Mixture { a, .. } => a,
            Shape::Sum { b, .. } => b,
            Shape::Flat | Shape::Value { .. } => &[],
        }
    }

    /// The normalizer in the denominator (`3nA²`, `3n²B`, `Σ|T|^p` or `n³`).
    pub fn norm_const(&self) -> f64 {
        let n = self.n as f64;
        match &self.shape {
            Shape::Flat => n * n * n,
            Shape::Pair { total, .. } | Shape::Mixture { total, .. } => 3.0 * n * total * total,
            Shape::Sum { total, .. } => 3.0 * n * n * total,
            Shape::Value { total, .. } => *total,
        }
    }

    /// `νᵢ = ‖T_i‖_F/‖T‖_F + 1/√n` for the noisy mixture.
    pub fn nu(&self) -> Option<&[f64]> {
        self.nu.as_deref()
    }

    /// `Z = (Σ νᵢ^{3/2})²` for the noisy mixture.
    pub fn z(&self) -> Option<f64> {
        match &self.shape {
            Shape::Mixture { total, .. } => Some(total * total),
            _ => None,
        }
    }

    pub fn needs_values(&self) -> bool {
        matches!(self.shape, Shape::Value { .. } | Shape::Mixture { .. })
    }

    /// Probability of `(i, j, k)`, reading the tensor value from the attached
    /// tensor when the family needs it.
    pub fn prob(&self, i: usize, j: usize, k: usize) -> f64 {
        let v = match &self.values {
            Some(t) => t.get(i, j, k),
            None => {
                debug_assert!(!self.needs_values(), "value-dependent family without values");
                0.0
            }
        };
        self.prob_with_value(i, j, k, v)
    }

    /// Probability of `(i, j, k)` when the entry value is `t_ijk`.
    pub fn prob_with_value(&self, i: usize, j: usize, k: usize, t_ijk: f64) -> f64 {
        let n = self.n as f64;
        match &self.shape {
            Shape::Flat => 1.0 / (n * n * n),
            Shape::Pair { a, total } => {
                (a[i] * a[j] + a[j] * a[k] + a[k] * a[i]) / (3.0 * n * total * total)
            }
            Shape::Sum { b, total } => (b[i] + b[j] + b[k]) / (3.0 * n * n * total),
            Shape::Value { power, total } => t_ijk.abs().powi(*power) / total,
            Shape::Mixture { a, total, fro_sq } => {
                0.5 * (a[i] * a[j] + a[j] * a[k] + a[k] * a[i]) / (3.0 * n * total * total)
                    + 0.5 * t_ijk * t_ijk / fro_sq
            }
        }
    }
}

/// How `Ω` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Visit every triple, include independently with `min{m·p, 1}`.
    ExactBernoulli,
    /// `m` i.i.d. categorical draws, deduplicated; `p̂ = 1 − (1−p)^m`.
    FastCategorical,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(SampleMode::ExactBernoulli),
            "categorical" => Ok(SampleMode::FastCategorical),
            other => Err(Error::invalid(format!("unknown sampling mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePlan {
    pub m: u64,
    pub mode: SampleMode,
    pub seed: u64,
}

impl SamplePlan {
    pub fn new(m: u64, mode: SampleMode, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("sample budget m must be at least 1"));
        }
        Ok(Self { m, mode, seed })
    }

    /// Exact Bernoulli up to [`EXACT_BERNOULLI_MAX_DIM`], categorical above.
    pub fn auto(m: u64, n: usize, seed: u64) -> Result<Self> {
        let mode = if n <= EXACT_BERNOULLI_MAX_DIM {
            SampleMode::ExactBernoulli
        } else {
            SampleMode::FastCategorical
        };
        Self::new(m, mode, seed)
    }
}

/// Inclusion probability of a triple with mass `p` under budget `m`.
pub fn inclusion_probability(p: f64, m: u64, mode: SampleMode) -> f64 {
    match mode {
        SampleMode::ExactBernoulli => (m as f64 * p).min(1.0),
        SampleMode::FastCategorical => {
            if p >= 1.0 {
                1.0
            } else {
                -(m as f64 * (-p).ln_1p()).exp_m1()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub p_hat: f64,
}

/// Result of [`draw`]: sorted, duplicate-free triples.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet {
    pub n: usize,
    pub draws: Vec<Draw>,
    /// Triples with `p̂ = 1`, included without consuming randomness.
    pub deterministic: usize,
}

impl DrawSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn random(&self) -> usize {
        self.draws.len() - self.deterministic
    }
}

/// Draws the sample set `Ω` from `dist` according to `plan`.
pub fn draw(dist: &EntryDistribution, plan: &SamplePlan) -> Result<DrawSet> {
    if dist.needs_values() && dist.values.is_none() {
        return Err(Error::invalid(format!(
            "{} distribution has no attached tensor values",
            dist.family
        )));
    }
    match plan.mode {
        SampleMode::ExactBernoulli => Ok(draw_bernoulli(dist, plan)),
        SampleMode::FastCategorical => draw_categorical(dist, plan),
    }
}

fn draw_bernoulli(dist: &EntryDistribution, plan: &SamplePlan) -> DrawSet {
    let n = dist.n;
    let per_face: Vec<(Vec<Draw>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::substream(plan.seed, i as u64);
            let mut out = Vec::new();
            let mut certain = 0;
            for j in 0..n {
                for k in 0..n {
                    let p_hat = inclusion_probability(dist.prob(i, j, k), plan.m, plan.mode);
                    if p_hat >= 1.0 {
                        certain += 1;
                        out.push(Draw { i, j, k, p_hat: 1.0 });
                    } else if p_hat > 0.0 && rng.random::<f64>() < p_hat {
                        out.push(Draw { i, j, k, p_hat });
                    }
                }
            }
            (out, certain)
        })
        .collect();
    let deterministic = per_face.iter().map(|(_, c)| c).sum();
    let draws = per_face.into_iter().flat_map(|(d, _)| d).collect();
    DrawSet {
        n,
        draws,
        deterministic,
    }
}

/// Cumulative table over nonnegative masses; sampling by binary search.
struct Cumulative {
    cum: Vec<f64>,
}

impl Cumulative {
    fn new(masses: impl Iterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let cum = masses
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        Self { cum }
    }

    fn sample(&self, rng: &mut rng::Rng) -> usize {
        let total = *self.cum.last().expect("nonempty table");
        let x = rng.random::<f64>() * total;
        let idx = self.cum.partition_point(|&c| c <= x);
        // Guard against landing on a trailing zero-mass cell via rounding.
        let mut idx = idx.min(self.cum.len() - 1);
        while idx > 0 && self.cum[idx] == self.cum[idx - 1] {
            idx -= 1;
        }
        idx
    }
}

enum Sampler {
    Flat,
    Pair(Cumulative),
    Sum(Cumulative),
    Table(Cumulative),
    Mixture(Cumulative, Cumulative),
}

fn draw_categorical(dist: &EntryDistribution, plan: &SamplePlan) -> Result<DrawSet> {
    let n = dist.n;
    let value_table = |power: i32| -> Cumulative {
        let t = dist.values.as_ref().expect("checked by draw");
        Cumulative::new(t.as_slice().iter().map(move |x| x.abs().powi(power)))
    };
    let sampler = match &dist.shape {
        Shape::Flat => Sampler::Flat,
        Shape::Pair { a, .. } => Sampler::Pair(Cumulative::new(a.iter().copied())),
        Shape::Sum { b, .. } => Sampler::Sum(Cumulative::new(b.iter().copied())),
        Shape::Value { power, .. } => Sampler::Table(value_table(*power)),
        Shape::Mixture { a, .. } => {
            Sampler::Mixture(Cumulative::new(a.iter().copied()), value_table(2))
        }
    };

    let pair_draw = |table: &Cumulative, rng: &mut rng::Rng| -> (usize, usize, usize) {
        let x = table.sample(rng);
        let y = table.sample(rng);
        let z = rng.random_range(0..n);
        // Uniform over which slot holds the uniform index.
        match rng.random_range(0..3u8) {
            0 => (x, y, z),
            1 => (z, x, y),
            _ => (y, z, x),
        }
    };
    let unflatten = |f: usize| (f / (n * n), (f / n) % n, f % n);

    let m = usize::try_from(plan.m).map_err(|_| Error::invalid("sample budget too large"))?;
    let chunks = m.div_ceil(DRAW_CHUNK);
    let mut triples: Vec<(usize, usize, usize)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng::substream(plan.seed, (1u64 << 40) + c as u64);
            let count = DRAW_CHUNK.min(m - c * DRAW_CHUNK);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let t = match &sampler {
                    Sampler::Flat => (
                        rng.random_range(0..n),
                        rng.random_range(0..n),
                        rng.random_range(0..n),
                    ),
                    Sampler::Pair(table) => pair_draw(table, &mut rng),
                    Sampler::Sum(table) => {
                        let x = table.sample(&mut rng);
                        let y = rng.random_range(0..n);
                        let z = rng.random_range(0..n);
                        match rng.random_range(0..3u8) {
                            0 => (x, y, z),
                            1 => (z, x, y),
                            _ => (y, z, x),
                        }
                    }
                    Sampler::Table(table) => unflatten(table.sample(&mut rng)),
                    Sampler::Mixture(pairs, values) => {
                        if rng.random::<bool>() {
                            pair_draw(pairs, &mut rng)
                        } else {
                            unflatten(values.sample(&mut rng))
                        }
                    }
                };
                out.push(t);
            }
            out
        })
        .collect();
    triples.sort_unstable();
    triples.dedup();

    let mut deterministic = 0;
    let draws = triples
        .into_iter()
        .map(|(i, j, k)| {
            let p_hat = inclusion_probability(dist.prob(i, j, k), plan.m, plan.mode);
            if p_hat >= 1.0 {
                deterministic += 1;
            }
            Draw { i, j, k, p_hat }
        })
        .collect();
    Ok(DrawSet {
        n,
        draws,
        deterministic,
    })
}

/// Attaches values and weights `1/p̂` to drawn triples.
pub fn reweight<F>(draws: &DrawSet, values: F) -> Result<SampledTensor>
where
    F: Fn(usize, usize, usize) -> f64 + Sync,
{
    let records: Vec<SampleRecord> = draws
        .draws
        .par_iter()
        .map(|d| SampleRecord::new(d.i, d.j, d.k, values(d.i, d.j, d.k), d.p_hat))
        .collect();
    if let Some(r) = records.iter().find(|r| !(r.p_hat > 0.0)) {
        return Err(Error::invalid(format!(
            "triple ({}, {}, {}) was drawn with p_hat = 0",
            r.i, r.j, r.k
        )));
    }
    SampledTensor::new(draws.n, records)
}

/// Exact expected sample count `Σ_ijk p̂_ijk` over the whole cube.
pub fn expected_count(dist: &EntryDistribution, m: u64, mode: SampleMode) -> f64 {
    let n = dist.n;
    let per_face: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    acc += inclusion_probability(dist.prob(i, j, k), m, mode);
                }
            }
            acc
        })
        .collect();
    per_face.iter().sum()
}
