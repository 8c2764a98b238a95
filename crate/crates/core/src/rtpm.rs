//! Robust tensor power method with implicit deflation.
//!
//! Works on anything implementing [`TensorOp`], so a sampled tensor stays
//! sparse: deflation subtracts `Σ λ ⟨w,u⟩⟨w,v⟩ w` from each contraction
//! instead of materializing `T − Σ λ w⊗w⊗w`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{dot, norm2, CpFactors, TensorOp};

/// Below this norm a power step is treated as having collapsed.
pub const COLLAPSE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RtpmConfig {
    pub restarts: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for RtpmConfig {
    fn default() -> Self {
        Self {
            restarts: 30,
            iters: 100,
            seed: 0,
        }
    }
}

impl RtpmConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// One extracted component `λ u⊗u⊗u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub lambda: f64,
    pub vector: Vec<f64>,
}

/// `base − Σ λ w⊗w⊗w` without materializing anything.
pub struct Deflated<'a, T: TensorOp + ?Sized> {
    base: &'a T,
    components: Vec<Extraction>,
}

impl<'a, T: TensorOp + ?Sized> Deflated<'a, T> {
    pub fn new(base: &'a T) -> Self {
        Self {
            base,
            components: Vec::new(),
        }
    }

    pub fn push(&mut self, c: Extraction) {
        self.components.push(c);
    }

    pub fn components(&self) -> &[Extraction] {
        &self.components
    }
}

impl<T: TensorOp + ?Sized> TensorOp for Deflated<'_, T> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn contract(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        self.base.contract(u, v, out);
        for c in &self.components {
            let s = c.lambda * dot(&c.vector, u) * dot(&c.vector, v);
            for (o, w) in out.iter_mut().zip(&c.vector) {
                *o -= s * w;
            }
        }
    }
}

/// Runs `iters` steps of `x ← T(I,x,x)/‖T(I,x,x)‖`. Returns `None` on collapse.
fn power_steps<T: TensorOp + ?Sized>(t: &T, x: &mut [f64], iters: usize) -> Option<()> {
    let mut y = vec![0.0; x.len()];
    for _ in 0..iters {
        t.contract(x, x, &mut y);
        let ny = norm2(&y);
        if !(ny >= COLLAPSE_TOL) {
            return None;
        }
        for (xv, yv) in x.iter_mut().zip(&y) {
            *xv = yv / ny;
        }
    }
    Some(())
}

fn rayleigh<T: TensorOp + ?Sized>(t: &T, x: &[f64]) -> f64 {
    let mut y = vec![0.0; x.len()];
    t.contract(x, x, &mut y);
    dot(x, &y)
}

/// Best of `restarts` seeded power iterations, polished with `iters` more steps.
///
/// The sign of `u` is chosen so that `λ > 0`; for odd order `(−λ, −u)` and
/// `(λ, u)` describe the same rank-one term.
pub fn power_extract<T: TensorOp + ?Sized>(t: &T, cfg: &RtpmConfig) -> Result<Extraction> {
    power_extract_stream(t, cfg, 0)
}

fn power_extract_stream<T: TensorOp + ?Sized>(
    t: &T,
    cfg: &RtpmConfig,
    round: u64,
) -> Result<Extraction> {
    let n = t.dim();
    if n == 0 || cfg.restarts == 0 {
        return Err(Error::invalid("power method needs n >= 1 and at least one restart"));
    }
    let candidates: Vec<Option<(f64, Vec<f64>)>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|s| {
            let stream = round * cfg.restarts as u64 + s as u64;
            let mut rng = rng::substream(cfg.seed, stream);
            let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let nx = norm2(&x);
            x.iter_mut().for_each(|v| *v /= nx);
            power_steps(t, &mut x, cfg.iters)?;
            Some((rayleigh(t, &x), x))
        })
        .collect();

    // Lowest restart index wins ties.
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (lambda, x) in candidates.into_iter().flatten() {
        if best.as_ref().is_none_or(|(b, _)| lambda.abs() > b.abs()) {
            best = Some((lambda, x));
        }
    }
    let (_, mut x) = best.ok_or_else(|| {
        Error::Degenerate("every power-method restart collapsed to zero".into())
    })?;
    power_steps(t, &mut x, cfg.iters)
        .ok_or_else(|| Error::Degenerate("power method collapsed during polishing".into()))?;
    let mut lambda = rayleigh(t, &x);
    if lambda < 0.0 {
        lambda = -lambda;
        x.iter_mut().for_each(|v| *v = -*v);
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Degenerate(format!(
            "extracted eigenvalue {lambda} is not positive"
        )));
    }
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    Ok(Extraction { lambda, vector: x })
}

/// `r` rounds of extraction with deflation between rounds.
pub fn rtpm<T: TensorOp + ?Sized>(t: &T, r: usize, cfg: &RtpmConfig) -> Result<CpFactors> {
    if r == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    let mut deflated = Deflated::new(t);
    for round in 0..r {
        let c = power_extract_stream(&deflated, cfg, round as u64).map_err(|e| match e {
            Error::Degenerate(msg) => Error::Degenerate(format!(
                "residual vanished after {round} of {r} components: {msg}"
            )),
            other => other,
        })?;
        deflated.push(c);
    }
    let (columns, sigma): (Vec<Vec<f64>>, Vec<f64>) = deflated
        .components
        .into_iter()
        .map(|c| (c.vector, c.lambda))
        .unzip();
    CpFactors::from_columns(columns, sigma)
}
