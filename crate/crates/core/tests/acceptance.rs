//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance`. Set `ACCEPTANCE_ONLY=3,5` to run
//! a subset. Tolerances are fixed here and never adjusted per run.
//!
//! Failures are reported but the process exits successfully so the rest of
//! the test suite still runs; set `ACCEPTANCE_STRICT=1` to turn any FAIL
//! into a non-zero exit status.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use tensamp::completion::{self, WalsConfig};
use tensamp::experiment::{self, CompletionTrial, NoiseTrial};
use tensamp::factorize::NoiseKind;
use tensamp::metrics;
use tensamp::rng::derive_seed;
use tensamp::rtpm::{self, RtpmConfig};
use tensamp::sampling::{self, EntryDistribution, Family, SampleMode, SamplePlan};
use tensamp::sparsify;
use tensamp::synth;
use tensamp::{CpFactors, FaceNorm, SampleRecord, SampledTensor};

const NORMALIZATION_TOL: f64 = 1e-9;
const UNBIASED_Z: f64 = 3.0;
const UNBIASED_OUTLIER_FRACTION: f64 = 0.01;
const SLOPE_RANGE: (f64, f64) = (-0.7, -0.3);
const EXACT_RMSE: f64 = 0.01;
const SUCCESS_RATE: f64 = 0.8;
const CONTRACTION_FACTOR: f64 = 0.5;
const CONTRACTION_FLOOR: f64 = 1e-6;
const LS_ORACLE_TOL: f64 = 1e-10;
const FIXED_POINT_TOL: f64 = 1e-12;
const RTPM_TOL: f64 = 1e-8;

type Check = std::result::Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn n15(n: usize) -> f64 {
    (n as f64).powf(1.5)
}

fn ensure(cond: bool, msg: String) -> Check {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn total_mass(d: &EntryDistribution) -> f64 {
    let n = d.dim();
    let faces: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    s += d.prob(i, j, k);
                }
            }
            s
        })
        .collect();
    faces.iter().sum()
}

/// Every family at every size with ten seeded parameter sets.
fn c1_normalization() -> Check {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &n in &[5usize, 10, 20, 30] {
        for s in 0..10u64 {
            let seed = derive_seed(1, n as u64 * 100 + s);
            let a = 0.25 * s as f64;
            let x = synth::gen_samples(n, 7, a, seed).map_err(err)?;
            let rows = sparsify::row_norm_pass(&x);
            let factors = synth::gen_orthogonal_factors(n, 3.min(n), a, None, seed).map_err(err)?;
            let dense = Arc::new(sparsify::moment_tensor(&x).map_err(err)?);
            let dists = vec![
                EntryDistribution::from_samples(&rows),
                EntryDistribution::from_factor_rows(&factors.row_norms()),
                EntryDistribution::sum_l3(&rows),
                EntryDistribution::prod_l3(&rows),
                EntryDistribution::uniform(n),
                EntryDistribution::l1(dense.clone()),
                EntryDistribution::l2(dense.clone()),
                EntryDistribution::noisy_mixture(dense.clone()),
            ];
            for d in dists {
                let d = d.map_err(err)?;
                worst = worst.max((total_mass(&d) - 1.0).abs());
                count += 1;
            }
        }
    }
    ensure(
        worst <= NORMALIZATION_TOL,
        format!("{count} distributions, max |Σp − 1| = {worst:.2e} (tol {NORMALIZATION_TOL:.0e})"),
    )
}

/// Monte Carlo mean of `R_Ω(T)` against the dense tensor, using the exact
/// per-entry standard error `|T|·sqrt((1/p̂ − 1)/draws)`.
fn c2_unbiased() -> Check {
    let (n, p, m, reps) = (10usize, 5usize, 300u64, 2000u64);
    let x = synth::gen_samples(n, p, 0.5, 7).map_err(err)?;
    let dense = Arc::new(sparsify::moment_tensor(&x).map_err(err)?);
    let families = [
        Family::TensorLS,
        Family::Uniform,
        Family::SumL3,
        Family::ProdL3,
        Family::L1,
        Family::L2,
        Family::NoisyMixture,
    ];
    let mut report = Vec::new();
    let mut ok = true;
    for (fi, &family) in families.iter().enumerate() {
        let sums: Vec<Vec<f64>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let plan = SamplePlan::new(m, SampleMode::ExactBernoulli, derive_seed(fi as u64, rep))
                    .expect("positive budget");
                let s = sparsify::sparsify_any(&x, family, Some(&dense), &plan).expect("sparsify");
                let mut acc = vec![0.0; n * n * n];
                for r in s.records() {
                    acc[(r.i * n + r.j) * n + r.k] += r.reweighted();
                }
                acc
            })
            .collect();
        let mut mean = vec![0.0; n * n * n];
        for v in &sums {
            for (m_, x_) in mean.iter_mut().zip(v) {
                *m_ += x_;
            }
        }
        let dist = match family {
            Family::L1 => EntryDistribution::l1(dense.clone()),
            Family::L2 => EntryDistribution::l2(dense.clone()),
            Family::NoisyMixture => EntryDistribution::noisy_mixture(dense.clone()),
            other => sparsify::RowDistribution::try_from(other)
                .and_then(|r| r.build(&sparsify::row_norm_pass(&x))),
        }
        .map_err(err)?;
        let mut outside = 0usize;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let t = dense.get(i, j, k);
                    let mu = mean[(i * n + j) * n + k] / reps as f64;
                    let p_hat = sampling::inclusion_probability(
                        dist.prob_with_value(i, j, k, t),
                        m,
                        SampleMode::ExactBernoulli,
                    );
                    let se = if p_hat > 0.0 {
                        t.abs() * ((1.0 / p_hat - 1.0) / reps as f64).sqrt()
                    } else {
                        f64::INFINITY
                    };
                    let bad = if se == 0.0 {
                        (mu - t).abs() > 1e-12 * t.abs().max(1.0)
                    } else {
                        (mu - t).abs() > UNBIASED_Z * se
                    };
                    outside += bad as usize;
                }
            }
        }
        let frac = outside as f64 / (n * n * n) as f64;
        ok &= frac <= UNBIASED_OUTLIER_FRACTION;
        report.push(format!("{}={:.2}%", family.name(), 100.0 * frac));
    }
    ensure(ok, format!("entries outside ±3 SE: {}", report.join(" ")))
}

struct SparsifyGrid {
    m: Vec<u64>,
    /// `medians[d][g]`
    medians: Vec<Vec<f64>>,
    families: Vec<Family>,
}

fn sparsify_grid() -> std::result::Result<&'static SparsifyGrid, String> {
    static GRID: std::sync::OnceLock<std::result::Result<SparsifyGrid, String>> = std::sync::OnceLock::new();
    GRID.get_or_init(|| {
        let (n, p, a, seeds) = (50usize, 50usize, 0.5, 20u64);
        let families = vec![Family::TensorLS, Family::Uniform, Family::L2, Family::SumL3];
        let m: Vec<u64> = [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|s| (s * n15(n)).ceil() as u64).collect();
        let inputs = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let x = synth::gen_samples(n, p, a, derive_seed(30, s))?;
                let t = Arc::new(sparsify::moment_tensor(&x)?);
                Ok((x, t))
            })
            .collect::<tensamp::Result<Vec<_>>>()
            .map_err(err)?;
        let mut medians = Vec::new();
        for (d, &family) in families.iter().enumerate() {
            let mut row = Vec::new();
            for (g, &mm) in m.iter().enumerate() {
                let errs = (0..seeds)
                    .into_par_iter()
                    .map(|s| {
                        let (x, t) = &inputs[s as usize];
                        let seed = derive_seed(derive_seed(31, (d * 100 + g) as u64), s);
                        experiment::sparsify_trial(x, t, family, mm, seed, FaceNorm::Spectral)
                    })
                    .collect::<tensamp::Result<Vec<f64>>>()
                    .map_err(err)?;
                row.push(experiment::median(&errs));
            }
            medians.push(row);
        }
        Ok(SparsifyGrid { m, medians, families })
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn c3_decay() -> Check {
    let g = sparsify_grid()?;
    let med = &g.medians[0];
    let decreasing = med.windows(2).all(|w| w[1] < w[0]);
    let ms: Vec<f64> = g.m.iter().map(|&m| m as f64).collect();
    let s = slope(&ms, med);
    let meds: Vec<String> = med.iter().map(|x| format!("{x:.4}")).collect();
    ensure(
        decreasing && s >= SLOPE_RANGE.0 && s <= SLOPE_RANGE.1,
        format!("tensorls medians [{}], strictly decreasing={decreasing}, log-log slope {s:.3}", meds.join(", ")),
    )
}

fn c4_dominance() -> Check {
    let g = sparsify_grid()?;
    let last = g.m.len() - 1;
    let ours = g.medians[0][last];
    let mut ok = true;
    let mut parts = vec![format!("tensorls={ours:.4}")];
    for (d, fam) in g.families.iter().enumerate().skip(1) {
        let v = g.medians[d][last];
        ok &= ours <= v;
        parts.push(format!("{}={v:.4}", fam.name()));
    }
    ensure(ok, format!("medians at m={}: {}", g.m[last], parts.join(" ")))
}

fn success_summary(rmse: &[f64]) -> (usize, f64) {
    let good = rmse.iter().filter(|&&e| e < EXACT_RMSE).count();
    (good, experiment::median(rmse))
}

fn c5_completion() -> Check {
    let n = 50;
    let r = 3;
    let t = CompletionTrial {
        n,
        r,
        a: 0.5,
        family: Family::TensorLS,
        m: (10.0 * n15(n) * r as f64).ceil() as u64,
        sweeps: 30,
    };
    let seeds = 25u64;
    let rmse = (0..seeds)
        .into_par_iter()
        .map(|s| experiment::completion_trial(&t, derive_seed(50, s)))
        .collect::<tensamp::Result<Vec<f64>>>()
        .map_err(err)?;
    let (good, med) = success_summary(&rmse);
    ensure(
        good as f64 >= SUCCESS_RATE * seeds as f64,
        format!("{good}/{seeds} runs with RMSE < {EXACT_RMSE} (m={}, median RMSE {med:.2e})", t.m),
    )
}

fn full_observation(t: &CpFactors) -> SampledTensor {
    let n = t.dim();
    let mut recs = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                recs.push(SampleRecord::new(i, j, k, t.entry(i, j, k), 1.0));
            }
        }
    }
    SampledTensor::new(n, recs).expect("valid records")
}

/// Truth plus a deterministic perturbation with column error 0.03 and
/// relative weight error 0.01.
fn perturbed(truth: &CpFactors, seed: u64) -> CpFactors {
    let n = truth.dim();
    let g = synth::gen_orthogonal_factors(n, truth.rank(), 0.0, None, seed).expect("valid shape");
    let cols = truth
        .columns()
        .enumerate()
        .map(|(l, u)| {
            let d = g.column(l);
            let proj: f64 = u.iter().zip(d).map(|(a, b)| a * b).sum();
            let mut w: Vec<f64> = d.iter().zip(u).map(|(b, a)| b - proj * a).collect();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().for_each(|x| *x /= wn);
            // Rotate by angle θ with 2 sin(θ/2) = 0.03.
            let theta = 2.0 * (0.015f64).asin();
            u.iter().zip(&w).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect()
        })
        .collect();
    let sigma = truth.sigma().iter().map(|s| s * 1.01).collect();
    CpFactors::from_columns(cols, sigma).expect("unit columns")
}

fn contracts(d: &[f64]) -> bool {
    for w in d.windows(2) {
        if w[0] < CONTRACTION_FLOOR {
            return true;
        }
        if w[1] > CONTRACTION_FACTOR * w[0] {
            return false;
        }
    }
    d.last().is_some_and(|&x| x < CONTRACTION_FLOOR)
}

fn c6_contraction() -> Check {
    let (n, r, seeds) = (30usize, 2usize, 20u64);
    let m = (10.0 * n15(n) * r as f64).ceil() as u64;
    let results = (0..seeds)
        .into_par_iter()
        .map(|s| -> tensamp::Result<(bool, bool, f64)> {
            let truth = synth::gen_orthogonal_factors(n, r, 0.5, Some(&[2.0, 1.0]), derive_seed(60, s))?;
            let init = perturbed(&truth, derive_seed(61, s));
            let d0 = metrics::d_inf(&init, &truth)?;
            let mut cfg = WalsConfig::new(r);
            cfg.sweeps = Some(40);
            let full = completion::wals(&full_observation(&truth), &cfg, &init, Some(&truth))?;
            let dist = EntryDistribution::from_factor_rows(&truth.row_norms())?;
            let plan = SamplePlan::new(m, SampleMode::ExactBernoulli, derive_seed(62, s))?;
            let samples = sampling::reweight(&sampling::draw(&dist, &plan)?, |i, j, k| truth.entry(i, j, k))?;
            let part = completion::wals(&samples, &cfg, &init, Some(&truth))?;
            let path = |o: &completion::WalsOutput| -> Vec<f64> {
                o.diagnostics.iter().map(|d| d.d_inf.expect("truth given")).collect()
            };
            Ok((contracts(&path(&full)), contracts(&path(&part)), d0))
        })
        .collect::<tensamp::Result<Vec<_>>>()
        .map_err(err)?;
    let d0 = results.iter().map(|x| x.2).fold(0.0, f64::max);
    let full_ok = results.iter().filter(|x| x.0).count();
    let part_ok = results.iter().filter(|x| x.1).count();
    let need = SUCCESS_RATE * seeds as f64;
    ensure(
        d0 <= 0.05 && full_ok as f64 >= need && part_ok as f64 >= need,
        format!("max initial d∞ {d0:.3}; halving to < 1e-6 in {full_ok}/{seeds} fully observed, {part_ok}/{seeds} sampled (m={m})"),
    )
}

/// One column update against a least-squares solve of the stacked system
/// `min_x Σ_ijk (T_ijk − Σ_{l≠q} σ_l U_il U_jl U_kl − x_i U_jq U_kq)²`.
fn c7_ls_oracle() -> Check {
    let (n, r) = (6usize, 3usize);
    let base = synth::gen_orthogonal_factors(n, r, 0.5, Some(&[3.0, 2.0, 1.0]), 70).map_err(err)?;
    let init = perturbed(&base, 71);
    // Off-model data: the low-rank tensor plus a symmetric perturbation.
    let data = |i: usize, j: usize, k: usize| {
        base.entry(i, j, k) + 0.1 * ((i * 7 + j * 7 + k * 7) % 5) as f64 - 0.2
    };
    let mut recs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                recs.push(SampleRecord::new(i, j, k, data(i, j, k), 1.0));
            }
        }
    }
    let samples = SampledTensor::new(n, recs).map_err(err)?;
    let mut worst: f64 = 0.0;
    for q in 0..r {
        let upd = completion::wals_step(&samples, &init, q, None).map_err(err)?;
        let rows = n * n * n;
        let mut a = DMatrix::<f64>::zeros(rows, n);
        let mut b = DVector::<f64>::zeros(rows);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let row = (i * n + j) * n + k;
                    let others: f64 = (0..r)
                        .filter(|&l| l != q)
                        .map(|l| init.sigma()[l] * init.u(i, l) * init.u(j, l) * init.u(k, l))
                        .sum();
                    a[(row, i)] = init.u(j, q) * init.u(k, q);
                    b[row] = data(i, j, k) - others;
                }
            }
        }
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let x = ata.lu().solve(&atb).ok_or("singular normal equations")?;
        for i in 0..n {
            worst = worst.max((x[i] - upd.raw[i]).abs());
        }
    }
    let truth = synth::gen_orthogonal_factors(12, 3, 0.5, Some(&[3.0, 2.0, 1.0]), 72).map_err(err)?;
    let mut cfg = WalsConfig::new(3);
    cfg.sweeps = Some(1);
    let out = completion::wals(&full_observation(&truth), &cfg, &truth, None).map_err(err)?;
    let mut fixed: f64 = 0.0;
    for l in 0..3 {
        fixed = fixed.max((out.factors.sigma()[l] - truth.sigma()[l]).abs());
        for i in 0..12 {
            fixed = fixed.max((out.factors.u(i, l) - truth.u(i, l)).abs());
        }
    }
    ensure(
        worst <= LS_ORACLE_TOL && fixed <= FIXED_POINT_TOL,
        format!("max |update − LS oracle| = {worst:.2e}; exact-factor drift {fixed:.2e}"),
    )
}

fn c8_claim() -> Check {
    let n = 100usize;
    let c = synth::claim_tensor(n, Some(5)).map_err(err)?;
    let t = Arc::new(c.tensor);
    let ln = (n as f64).ln();
    let m_l1 = ((n as f64).powi(3) / ln.powi(3)).floor() as u64;
    let l1 = EntryDistribution::l1(t.clone()).map_err(err)?;
    let count_l1 = synth::expected_block_counts(&l1, m_l1, SampleMode::ExactBernoulli, c.block.clone())
        .map_err(err)?;
    let m_ours = (n15(n) * ln.powf(4.5)).ceil() as u64;
    let ours = EntryDistribution::from_factor_rows(&c.factors.row_norms()).map_err(err)?;
    let count_ours = synth::expected_block_counts(&ours, m_ours, SampleMode::ExactBernoulli, c.block.clone())
        .map_err(err)?;
    ensure(
        (0.5..=2.0).contains(&count_l1.expected) && count_ours.min_p_hat == 1.0,
        format!(
            "l1 expected block count {:.3} at m={m_l1}; tensorls min p̂ on block {} at m={m_ours}",
            count_l1.expected, count_ours.min_p_hat
        ),
    )
}

fn c9_two_pass() -> Check {
    let n = 50;
    let r = 3;
    let t = NoiseTrial {
        n,
        r,
        a: 0.5,
        family: Family::NoisyMixture,
        noise_fro: 0.0,
        noise: NoiseKind::Sign,
        flatness_slack: 1.0,
        m: (10.0 * n15(n) * r as f64).ceil() as u64,
        sweeps: 30,
    };
    let seeds = 25u64;
    let res = (0..seeds)
        .into_par_iter()
        .map(|s| experiment::noise_trial(&t, derive_seed(90, s)))
        .collect::<tensamp::Result<Vec<_>>>()
        .map_err(err)?;
    let rmse: Vec<f64> = res.iter().map(|x| x.rmse).collect();
    let (good, med) = success_summary(&rmse);
    let passes_ok = res.iter().all(|x| x.passes == 2);
    ensure(
        good as f64 >= SUCCESS_RATE * seeds as f64 && passes_ok,
        format!("{good}/{seeds} runs with RMSE < {EXACT_RMSE} (median {med:.2e}); all runs exactly 2 passes: {passes_ok}"),
    )
}

const NOISE_LEVELS: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];

fn c10_noise() -> Check {
    let (n, r, seeds) = (40usize, 5usize, 20u64);
    let families = [Family::NoisyMixture, Family::Uniform, Family::L2];
    let m = (10.0 * n15(n) * r as f64).ceil() as u64;
    let mut med = vec![vec![0.0; NOISE_LEVELS.len()]; families.len()];
    for (d, &family) in families.iter().enumerate() {
        for (g, &level) in NOISE_LEVELS.iter().enumerate() {
            let t = NoiseTrial {
                n,
                r,
                a: 0.5,
                family,
                noise_fro: level,
                noise: NoiseKind::Sign,
                flatness_slack: 1.0,
                m,
                sweeps: 30,
            };
            let rmse = (0..seeds)
                .into_par_iter()
                .map(|s| experiment::noise_trial(&t, derive_seed(100 + g as u64, s)).map(|x| x.rmse))
                .collect::<tensamp::Result<Vec<f64>>>()
                .map_err(err)?;
            med[d][g] = experiment::median(&rmse);
        }
    }
    let monotone = med[0].windows(2).all(|w| w[1] >= w[0]);
    let dominant = (0..NOISE_LEVELS.len()).all(|g| med[0][g] <= med[1][g] && med[0][g] <= med[2][g]);
    let table: Vec<String> = families
        .iter()
        .zip(&med)
        .map(|(f, row)| {
            let v: Vec<String> = row.iter().map(|x| format!("{x:.2e}")).collect();
            format!("{}[{}]", f.name(), v.join(" "))
        })
        .collect();
    ensure(
        monotone && dominant,
        format!("‖E‖_F={NOISE_LEVELS:?}: {}; monotone={monotone} dominant={dominant}", table.join(" ")),
    )
}

fn c11_rtpm() -> Check {
    let (n, seeds) = (20usize, 20u64);
    let sigma = [3.0, 2.0, 1.0];
    let errs = (0..seeds)
        .into_par_iter()
        .map(|s| -> tensamp::Result<f64> {
            let truth = synth::gen_orthogonal_factors(n, 3, 0.5, Some(&sigma), derive_seed(110, s))?;
            let t = truth.reconstruct()?;
            let est = rtpm::rtpm(&t, 3, &RtpmConfig::with_seed(derive_seed(111, s)))?;
            let m = metrics::match_factors(&est, &truth)?;
            let mut worst: f64 = 0.0;
            for l in 0..3 {
                let e = m.perm[l];
                worst = worst.max((est.sigma()[e] - sigma[l]).abs());
                for i in 0..n {
                    worst = worst.max((m.signs[l] * est.u(i, e) - truth.u(i, l)).abs());
                }
            }
            Ok(worst)
        })
        .collect::<tensamp::Result<Vec<f64>>>()
        .map_err(err)?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    ensure(
        worst <= RTPM_TOL,
        format!("max entrywise factor/weight error over {seeds} seeds: {worst:.2e}"),
    )
}

/// Runs a pipeline of CLI invocations in `dir` and returns the produced files.
fn cli_pipeline(dir: &Path, threads: &str) -> std::result::Result<Vec<(String, Vec<u8>)>, String> {
    let exe = env!("CARGO_BIN_EXE_tensamp");
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth", "samples", "--n", "24", "--p", "10", "--bias", "0.5", "--seed", "3", "--out", &p("x.csv")],
        vec!["sparsify", "--input", &p("x.csv"), "--samples", "900", "--seed", "4", "--out", &p("omega.csv")],
        vec!["sparsify", "--input", &p("x.csv"), "--samples", "900", "--mode", "categorical", "--seed", "4", "--out", &p("omega_cat.csv")],
        vec!["synth", "factors", "--n", "24", "--rank", "2", "--bias", "0.5", "--seed", "5", "--out", &p("f.csv"), "--caps", &p("caps.csv")],
        vec!["synth", "tensor", "--factors", &p("f.csv"), "--noise", "0.05", "--seed", "6", "--out", &p("t.tns")],
        vec!["factorize", "--input", &p("t.tns"), "--samples", "2400", "--rank", "2", "--iters", "10", "--seed", "7", "--out", &p("fac.csv"), "--diag", &p("fac.json")],
        vec!["sparsify", "--input", &p("x.csv"), "--dist", "l2", "--samples", "900", "--seed", "8", "--out", &p("omega_l2.csv")],
        vec!["complete", "--omega", &p("omega.csv"), "--rank", "2", "--iters", "5", "--seed", "9", "--out", &p("comp.csv"), "--diag", &p("comp.json")],
        vec!["experiment", "--set", "figure=fig1", "--set", "n=12", "--set", "p=4", "--set", "seeds=3", "--set", "m_grid=60,240", "--out", &p("fig1.csv")],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in &steps {
        let out = Command::new(exe)
            .arg("--threads")
            .arg(threads)
            .args(args)
            .output()
            .map_err(err)?;
        if !out.status.success() {
            return Err(format!(
                "`tensamp {}` failed: {}",
                args.join(" "),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(err)?
        .map(|e| {
            let e = e.map_err(err)?;
            Ok((e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).map_err(err)?))
        })
        .collect::<std::result::Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn c12_determinism() -> Check {
    let runs: Vec<(&str, tempfile::TempDir)> = ["1", "4", "4"]
        .iter()
        .map(|t| Ok((*t, tempfile::tempdir().map_err(err)?)))
        .collect::<std::result::Result<_, String>>()?;
    let outputs = runs
        .iter()
        .map(|(t, d)| cli_pipeline(d.path(), t))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    let reference = &outputs[0];
    let mut differing = Vec::new();
    for o in &outputs[1..] {
        if o.len() != reference.len() {
            return Err("runs produced different file sets".into());
        }
        for ((name, a), (_, b)) in reference.iter().zip(o) {
            if a != b {
                differing.push(name.clone());
            }
        }
    }
    ensure(
        differing.is_empty(),
        format!(
            "{} output files compared across --threads 1/4/4; differing: {:?}",
            reference.len(),
            differing
        ),
    )
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "distribution normalization", budget: Some(Duration::from_secs(10)), run: c1_normalization },
        Criterion { id: 2, name: "unbiasedness of the reweighted sample", budget: Some(Duration::from_secs(60)), run: c2_unbiased },
        Criterion { id: 3, name: "sparsification error decay", budget: Some(Duration::from_secs(600)), run: c3_decay },
        Criterion { id: 4, name: "sparsification dominance", budget: None, run: c4_dominance },
        Criterion { id: 5, name: "exact completion", budget: Some(Duration::from_secs(600)), run: c5_completion },
        Criterion { id: 6, name: "WALS contraction", budget: None, run: c6_contraction },
        Criterion { id: 7, name: "WALS least-squares oracle and fixed point", budget: None, run: c7_ls_oracle },
        Criterion { id: 8, name: "block counterexample expected counts", budget: None, run: c8_claim },
        Criterion { id: 9, name: "two-pass factorization without noise", budget: None, run: c9_two_pass },
        Criterion { id: 10, name: "noise robustness", budget: None, run: c10_noise },
        Criterion { id: 11, name: "power-method exactness", budget: None, run: c11_rtpm },
        Criterion { id: 12, name: "CLI determinism across thread counts", budget: None, run: c12_determinism },
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let (mut ran, mut failed) = (0, 0);
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut result = (c.run)();
        let took = start.elapsed();
        if let (Ok(msg), Some(b)) = (&result, c.budget) {
            if took > b {
                result = Err(format!("{msg}; runtime {took:.1?} exceeds {b:?}"));
            }
        }
        let (tag, msg) = match &result {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!("[{tag}] C{:<2} {} ({:.1?}): {msg}", c.id, c.name, took);
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
