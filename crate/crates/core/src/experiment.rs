//! Seed-sweep experiment drivers producing plot-ready CSV.
//!
//! Every cell `(distribution, grid point, seed)` is independent and derives
//! its randomness from the base seed, so output is identical at any thread
//! count.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::completion::{self, WalsConfig};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::factorize::{self, FactorizeConfig, NoiseKind, NoiseSpec};
use crate::io::fmt_real;
use crate::metrics;
use crate::rng::derive_seed;
use crate::rtpm::RtpmConfig;
use crate::sampling::{self, EntryDistribution, Family, SamplePlan};
use crate::sparsify::{self, SampleMatrix};
use crate::synth;
use crate::tensor::{CpFactors, DenseTensor3, FaceNorm};

const TAG_MATRIX: u64 = 1;
const TAG_DRAW: u64 = 2;
const TAG_FACTORS: u64 = 3;
const TAG_WALS: u64 = 4;
const TAG_RTPM: u64 = 5;
const TAG_NOISE: u64 = 6;
const TAG_FACTORIZE: u64 = 7;

/// Seed for one cell, mixing the base seed with every coordinate.
fn cell_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |s, &p| derive_seed(s, p))
}

/// `‖R_Ω(T) − T‖` (L2,2) for one sparsification of the moment tensor of `x`.
pub fn sparsify_trial(
    x: &SampleMatrix,
    dense: &Arc<DenseTensor3>,
    family: Family,
    m: u64,
    seed: u64,
    face_norm: FaceNorm,
) -> Result<f64> {
    let plan = SamplePlan::auto(m, x.dim(), seed)?;
    let est = sparsify::sparsify_any(x, family, Some(dense), &plan)?;
    metrics::l22_error_sampled(&est, dense, face_norm)
}

/// Entry distribution for completing a tensor with known factors.
pub fn completion_distribution(
    family: Family,
    truth: &CpFactors,
    dense: Option<&Arc<DenseTensor3>>,
) -> Result<EntryDistribution> {
    let rows = truth.row_norms();
    let need_dense = || -> Result<Arc<DenseTensor3>> {
        match dense {
            Some(d) => Ok(d.clone()),
            None => Ok(Arc::new(truth.reconstruct()?)),
        }
    };
    match family {
        Family::TensorLS => EntryDistribution::from_factor_rows(&rows),
        Family::Uniform => EntryDistribution::uniform(truth.dim()),
        Family::SumL3 => EntryDistribution::sum_l3(&rows),
        Family::ProdL3 => EntryDistribution::prod_l3(&rows),
        Family::L1 => EntryDistribution::l1(need_dense()?),
        Family::L2 => EntryDistribution::l2(need_dense()?),
        Family::NoisyMixture => EntryDistribution::noisy_mixture(need_dense()?),
    }
}

/// Parameters of one completion run on synthetic orthogonal factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionTrial {
    pub n: usize,
    pub r: usize,
    pub a: f64,
    pub family: Family,
    pub m: u64,
    pub sweeps: usize,
}

/// Samples, initializes with the power method, runs WALS with caps
/// `2‖(U*)ⁱ‖` and returns the factor RMSE. Numerical breakdowns count as
/// failed recovery (`+∞`).
pub fn completion_trial(t: &CompletionTrial, seed: u64) -> Result<f64> {
    let truth = synth::gen_orthogonal_factors(t.n, t.r, t.a, None, derive_seed(seed, TAG_FACTORS))?;
    let dist = completion_distribution(t.family, &truth, None)?;
    let plan = SamplePlan::auto(t.m, t.n, derive_seed(seed, TAG_DRAW))?;
    let draws = sampling::draw(&dist, &plan)?;
    if draws.is_empty() {
        return Ok(f64::INFINITY);
    }
    let samples = sampling::reweight(&draws, |i, j, k| truth.entry(i, j, k))?;
    let cfg = WalsConfig {
        rank: t.r,
        sweeps: Some(t.sweeps),
        fresh_samples: false,
        row_caps: Some(truth.row_norms().iter().map(|x| 2.0 * x).collect()),
        epsilon: completion::DEFAULT_EPSILON,
        seed: derive_seed(seed, TAG_WALS),
    };
    let rcfg = RtpmConfig::with_seed(derive_seed(seed, TAG_RTPM));
    match completion::complete(&samples, &cfg, &rcfg, None) {
        Ok(out) => metrics::factor_rmse(&out.factors, &truth),
        Err(e) if e.is_numerical() => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Parameters of one two-pass factorization run on a noisy synthetic tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTrial {
    pub n: usize,
    pub r: usize,
    pub a: f64,
    pub family: Family,
    pub noise_fro: f64,
    pub noise: NoiseKind,
    /// Entrywise-cap multiplier for Gaussian noise.
    pub flatness_slack: f64,
    pub m: u64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTrialResult {
    pub rmse: f64,
    pub max_column_error: f64,
    pub passes: usize,
}

/// Builds `Σ U_l⊗U_l⊗U_l + E`, runs the two-pass pipeline and scores the
/// factors. The tensor depends only on `seed` and the noise level, so every
/// family sees the same input.
pub fn noise_trial(t: &NoiseTrial, seed: u64) -> Result<NoiseTrialResult> {
    let truth = synth::gen_orthogonal_factors(t.n, t.r, t.a, None, derive_seed(seed, TAG_FACTORS))?;
    let spec = NoiseSpec {
        frobenius_level: t.noise_fro,
        kind: t.noise,
        c: 1.0,
        flatness_slack: t.flatness_slack,
    };
    let e = factorize::generate_noise(t.n, &spec, derive_seed(seed, TAG_NOISE))?;
    let dense = truth.reconstruct()?.add(&e)?;
    let counted = factorize::CountingSource::new(&dense);
    let mut cfg = FactorizeConfig::new(t.m, t.r, derive_seed(seed, TAG_FACTORIZE));
    cfg.family = t.family;
    cfg.sweeps = Some(t.sweeps);
    match factorize::factorize(&counted, &cfg, None) {
        Ok(out) => Ok(NoiseTrialResult {
            rmse: metrics::factor_rmse(&out.factors, &truth)?,
            max_column_error: metrics::max_column_error(&out.factors, &truth)?,
            passes: counted.passes(),
        }),
        Err(e) if e.is_numerical() => Ok(NoiseTrialResult {
            rmse: f64::INFINITY,
            max_column_error: f64::INFINITY,
            passes: counted.passes(),
        }),
        Err(e) => Err(e),
    }
}

/// Median of finite-or-infinite values (NaN-free input); mean of the two
/// middle values for even counts.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Sparsification error vs number of samples.
    Fig1,
    /// Sparsification error vs number of sample vectors.
    Fig2,
    /// Samples needed for exact completion vs factor bias.
    Fig3a,
    /// Factorization error vs noise level.
    Fig3b,
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            "fig3a" => Ok(Self::Fig3a),
            "fig3b" => Ok(Self::Fig3b),
            other => Err(Error::invalid(format!(
                "unknown figure `{other}` (expected fig1, fig2, fig3a or fig3b)"
            ))),
        }
    }
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub figure: Figure,
    pub n: usize,
    pub p: usize,
    pub r: usize,
    pub a: Vec<f64>,
    pub dists: Vec<Family>,
    pub m_grid: Vec<u64>,
    pub p_grid: Vec<usize>,
    pub noise_grid: Vec<f64>,
    pub m: u64,
    pub seeds: u64,
    pub seed: u64,
    pub sweeps: usize,
    pub face_norm: FaceNorm,
    pub success_rmse: f64,
    pub success_rate: f64,
    pub noise: NoiseKind,
    pub flatness_slack: f64,
    /// Notes on reduced defaults, echoed into the CSV header.
    pub notes: Vec<String>,
}

fn positive<T: PartialOrd + Default + Copy + std::fmt::Display>(key: &str, xs: &[T]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid(format!("`{key}` must not be empty")));
    }
    if let Some(x) = xs.iter().find(|x| !(**x > T::default())) {
        return Err(Error::invalid(format!("`{key}` entries must be positive, got {x}")));
    }
    Ok(())
}

fn n15(n: usize) -> f64 {
    (n as f64).powf(1.5)
}

impl Experiment {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let figure: Figure = cfg
            .get("figure")?
            .ok_or_else(|| Error::invalid("config must set `figure`"))?;
        let mut notes = Vec::new();
        let default_n = match figure {
            Figure::Fig1 | Figure::Fig2 => 100,
            Figure::Fig3a => {
                notes.push("reduced default n=50 (full scale: n=100)".to_string());
                50
            }
            Figure::Fig3b => {
                notes.push("reduced default n=40 (full scale: n=100)".to_string());
                40
            }
        };
        let n: usize = cfg.get_or("n", default_n)?;
        if cfg.contains("n") {
            notes.clear();
        }
        let p: usize = cfg.get_or("p", 50)?;
        let r: usize = cfg.get_or("r", 5)?;
        let default_dists: &[Family] = match figure {
            Figure::Fig1 | Figure::Fig2 => &[Family::TensorLS, Family::Uniform, Family::L2, Family::SumL3],
            Figure::Fig3a => &[Family::TensorLS, Family::Uniform, Family::L2],
            Figure::Fig3b => &[Family::NoisyMixture, Family::Uniform, Family::L2],
        };
        let dists: Vec<Family> = cfg.get_list("dists")?.unwrap_or_else(|| default_dists.to_vec());
        if dists.is_empty() {
            return Err(Error::invalid("`dists` must list at least one distribution"));
        }
        let default_a = match figure {
            Figure::Fig3a => vec![0.0, 0.5, 1.0, 1.5],
            _ => vec![0.5],
        };
        let a: Vec<f64> = cfg.get_list("a")?.unwrap_or(default_a);
        if a.is_empty() || a.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid("`a` must list nonnegative bias exponents"));
        }
        let m_unit = match figure {
            Figure::Fig3a => n15(n) * r as f64,
            _ => n15(n),
        };
        let m_grid: Vec<u64> = match (cfg.get_list::<u64>("m_grid")?, cfg.get_list::<f64>("m_scale")?) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid("set only one of `m_grid` and `m_scale`"));
            }
            (Some(g), None) => {
                positive("m_grid", &g)?;
                g
            }
            (None, scale) => {
                let scale = scale.unwrap_or_else(|| match figure {
                    Figure::Fig3a => vec![1.0, 2.0, 4.0, 6.0, 10.0, 16.0, 24.0],
                    _ => vec![2.0, 4.0, 8.0, 16.0, 32.0],
                });
                positive("m_scale", &scale)?;
                scale.iter().map(|s| (s * m_unit).ceil() as u64).collect()
            }
        };
        let p_grid: Vec<usize> = cfg.get_list("p_grid")?.unwrap_or_else(|| vec![10, 25, 50, 100, 200]);
        positive("p_grid", &p_grid)?;
        let noise_grid: Vec<f64> = cfg
            .get_list("noise_grid")?
            .unwrap_or_else(|| vec![0.0, 0.05, 0.1, 0.2, 0.4]);
        if noise_grid.is_empty() || noise_grid.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid("`noise_grid` must list nonnegative noise levels"));
        }
        let default_m = match figure {
            Figure::Fig3b => (10.0 * n15(n) * r as f64).ceil() as u64,
            _ => (10.0 * n15(n)).ceil() as u64,
        };
        let m: u64 = cfg.get_or("m", default_m)?;
        let seeds: u64 = cfg.get_or("seeds", 20)?;
        let sweeps: usize = cfg.get_or("sweeps", 30)?;
        if n == 0 || p == 0 || r == 0 || r > n || m == 0 || seeds == 0 || sweeps == 0 {
            return Err(Error::invalid(
                "n, p, r, m, seeds and sweeps must be positive, with r <= n",
            ));
        }
        let success_rate: f64 = cfg.get_or("success_rate", 0.8)?;
        if !(success_rate > 0.0 && success_rate <= 1.0) {
            return Err(Error::invalid("`success_rate` must lie in (0, 1]"));
        }
        let exp = Self {
            figure,
            n,
            p,
            r,
            a,
            dists,
            m_grid,
            p_grid,
            noise_grid,
            m,
            seeds,
            seed: cfg.get_or("seed", 0)?,
            sweeps,
            face_norm: cfg.get_or("face_norm", FaceNorm::Spectral)?,
            success_rmse: cfg.get_or("success_rmse", 0.01)?,
            success_rate,
            noise: cfg.get_or("noise", NoiseKind::Sign)?,
            flatness_slack: cfg.get_or("flatness_slack", 1.0)?,
            notes,
        };
        cfg.finish()?;
        Ok(exp)
    }
}

/// CSV output of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: &'static str,
    pub rows: Vec<String>,
}

impl Table {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for c in &self.comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{}", self.header)?;
        for r in &self.rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn describe(exp: &Experiment) -> Vec<String> {
    let mut c = vec![format!(
        "figure={:?} n={} seeds={} base_seed={} dists={}",
        exp.figure,
        exp.n,
        exp.seeds,
        exp.seed,
        exp.dists.iter().map(|d| d.name()).collect::<Vec<_>>().join(",")
    )];
    c.extend(exp.notes.iter().cloned());
    c
}

/// Medians per `(dist, grid point)` over the seed axis, from cells laid out
/// dist-major, then grid, then seed.
fn medians(values: &[f64], dists: usize, grid: usize, seeds: usize) -> Vec<Vec<f64>> {
    (0..dists)
        .map(|d| {
            (0..grid)
                .map(|g| {
                    let base = (d * grid + g) * seeds;
                    median(&values[base..base + seeds])
                })
                .collect()
        })
        .collect()
}

fn trend_comment(exp: &Experiment, meds: &[Vec<f64>], axis: &str, increasing: bool) -> Vec<String> {
    exp.dists
        .iter()
        .zip(meds)
        .map(|(d, m)| {
            let ok = m.windows(2).all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] });
            let word = if increasing { "nondecreasing" } else { "nonincreasing" };
            format!("check: {} median error {word} in {axis}: {ok}", d.name())
        })
        .collect()
}

fn run_fig1(exp: &Experiment) -> Result<Table> {
    let a = exp.a[0];
    let s_count = exp.seeds as usize;
    let inputs: Vec<(SampleMatrix, Arc<DenseTensor3>)> = (0..exp.seeds)
        .into_par_iter()
        .map(|s| {
            let x = synth::gen_samples(exp.n, exp.p, a, cell_seed(exp.seed, &[TAG_MATRIX, s]))?;
            let t = Arc::new(sparsify::moment_tensor(&x)?);
            Ok((x, t))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = (0..exp.dists.len())
        .flat_map(|d| (0..exp.m_grid.len()).flat_map(move |g| (0..s_count).map(move |s| (d, g, s))))
        .collect();
    let errs: Vec<f64> = cells
        .par_iter()
        .map(|&(d, g, s)| {
            let (x, t) = &inputs[s];
            let seed = cell_seed(exp.seed, &[TAG_DRAW, d as u64, g as u64, s as u64]);
            sparsify_trial(x, t, exp.dists[d], exp.m_grid[g], seed, exp.face_norm)
        })
        .collect::<Result<_>>()?;
    let mut comments = describe(exp);
    comments.push(format!("p={} a={} face_norm={:?}", exp.p, a, exp.face_norm));
    let meds = medians(&errs, exp.dists.len(), exp.m_grid.len(), s_count);
    comments.extend(trend_comment(exp, &meds, "m", false));
    let rows = cells
        .iter()
        .zip(&errs)
        .map(|(&(d, g, s), e)| format!("{},{},{},{}", exp.dists[d].name(), exp.m_grid[g], s, fmt_real(*e)))
        .collect();
    Ok(Table {
        comments,
        header: "dist,m,seed,l22_error",
        rows,
    })
}

fn run_fig2(exp: &Experiment) -> Result<Table> {
    let a = exp.a[0];
    let s_count = exp.seeds as usize;
    let inputs: Vec<(SampleMatrix, Arc<DenseTensor3>)> = (0..exp.p_grid.len())
        .flat_map(|g| (0..s_count).map(move |s| (g, s)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(g, s)| {
            let x = synth::gen_samples(
                exp.n,
                exp.p_grid[g],
                a,
                cell_seed(exp.seed, &[TAG_MATRIX, g as u64, s as u64]),
            )?;
            let t = Arc::new(sparsify::moment_tensor(&x)?);
            Ok((x, t))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize, usize)> = (0..exp.dists.len())
        .flat_map(|d| (0..exp.p_grid.len()).flat_map(move |g| (0..s_count).map(move |s| (d, g, s))))
        .collect();
    let errs: Vec<f64> = cells
        .par_iter()
        .map(|&(d, g, s)| {
            let (x, t) = &inputs[g * s_count + s];
            let seed = cell_seed(exp.seed, &[TAG_DRAW, d as u64, g as u64, s as u64]);
            sparsify_trial(x, t, exp.dists[d], exp.m, seed, exp.face_norm)
        })
        .collect::<Result<_>>()?;
    let mut comments = describe(exp);
    comments.push(format!("m={} a={} face_norm={:?}", exp.m, a, exp.face_norm));
    let meds = medians(&errs, exp.dists.len(), exp.p_grid.len(), s_count);
    comments.extend(trend_comment(exp, &meds, "p", true));
    let rows = cells
        .iter()
        .zip(&errs)
        .map(|(&(d, g, s), e)| format!("{},{},{},{}", exp.dists[d].name(), exp.p_grid[g], s, fmt_real(*e)))
        .collect();
    Ok(Table {
        comments,
        header: "dist,p,seed,l22_error",
        rows,
    })
}

/// Fraction of seeds whose completion RMSE is below the threshold.
fn success_rate(exp: &Experiment, family: Family, a: f64, ai: usize, m: u64) -> Result<f64> {
    let t = CompletionTrial {
        n: exp.n,
        r: exp.r,
        a,
        family,
        m,
        sweeps: exp.sweeps,
    };
    let rmse: Vec<f64> = (0..exp.seeds)
        .into_par_iter()
        .map(|s| completion_trial(&t, cell_seed(exp.seed, &[TAG_FACTORS, ai as u64, s])))
        .collect::<Result<_>>()?;
    Ok(rmse.iter().filter(|e| **e < exp.success_rmse).count() as f64 / exp.seeds as f64)
}

fn run_fig3a(exp: &Experiment) -> Result<Table> {
    let mut grid = exp.m_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let cells: Vec<(usize, usize)> = (0..exp.dists.len())
        .flat_map(|d| (0..exp.a.len()).map(move |ai| (d, ai)))
        .collect();
    let m_star: Vec<Option<u64>> = cells
        .par_iter()
        .map(|&(d, ai)| {
            // Smallest grid budget meeting the success rate, assuming
            // success is monotone in m.
            let (mut lo, mut hi) = (0, grid.len());
            while lo < hi {
                let mid = (lo + hi) / 2;
                if success_rate(exp, exp.dists[d], exp.a[ai], ai, grid[mid])? >= exp.success_rate {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Ok((lo < grid.len()).then(|| grid[lo]))
        })
        .collect::<Result<_>>()?;
    let mut comments = describe(exp);
    comments.push(format!(
        "r={} sweeps={} success: rmse<{} in >={}% of seeds; m_grid={}",
        exp.r,
        exp.sweeps,
        exp.success_rmse,
        exp.success_rate * 100.0,
        grid.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    ));
    comments.push("m_star=inf means no grid budget succeeded".to_string());
    let rows = cells
        .iter()
        .zip(&m_star)
        .map(|(&(d, ai), m)| {
            let m = m.map_or_else(|| "inf".to_string(), |v| v.to_string());
            format!("{},{},{}", exp.dists[d].name(), fmt_real(exp.a[ai]), m)
        })
        .collect();
    Ok(Table {
        comments,
        header: "dist,a,m_star",
        rows,
    })
}

fn run_fig3b(exp: &Experiment) -> Result<Table> {
    let s_count = exp.seeds as usize;
    let cells: Vec<(usize, usize, usize)> = (0..exp.dists.len())
        .flat_map(|d| (0..exp.noise_grid.len()).flat_map(move |g| (0..s_count).map(move |s| (d, g, s))))
        .collect();
    let rmse: Vec<f64> = cells
        .par_iter()
        .map(|&(d, g, s)| {
            let t = NoiseTrial {
                n: exp.n,
                r: exp.r,
                a: exp.a[0],
                family: exp.dists[d],
                noise_fro: exp.noise_grid[g],
                noise: exp.noise,
                flatness_slack: exp.flatness_slack,
                m: exp.m,
                sweeps: exp.sweeps,
            };
            // Seed excludes the family so every family sees the same tensor.
            Ok(noise_trial(&t, cell_seed(exp.seed, &[TAG_NOISE, g as u64, s as u64]))?.rmse)
        })
        .collect::<Result<_>>()?;
    let mut comments = describe(exp);
    let mut line = String::new();
    let _ = write!(
        line,
        "r={} a={} m={} sweeps={} noise={:?} flatness_slack={}",
        exp.r, exp.a[0], exp.m, exp.sweeps, exp.noise, exp.flatness_slack
    );
    comments.push(line);
    let meds = medians(&rmse, exp.dists.len(), exp.noise_grid.len(), s_count);
    comments.extend(trend_comment(exp, &meds, "noise_fro", true));
    let rows = cells
        .iter()
        .zip(&rmse)
        .map(|(&(d, g, s), e)| {
            format!("{},{},{},{}", exp.dists[d].name(), fmt_real(exp.noise_grid[g]), s, fmt_real(*e))
        })
        .collect();
    Ok(Table {
        comments,
        header: "dist,noise_fro,seed,factor_rmse",
        rows,
    })
}

pub fn run(exp: &Experiment) -> Result<Table> {
    match exp.figure {
        Figure::Fig1 => run_fig1(exp),
        Figure::Fig2 => run_fig2(exp),
        Figure::Fig3a => run_fig3a(exp),
        Figure::Fig3b => run_fig3b(exp),
    }
}
