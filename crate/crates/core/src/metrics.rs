//! Error measures: the L2,2 surrogate, factor matching, RMSE and d∞.

use crate::error::{Error, Result};
use crate::tensor::{dot, l22_from_faces, DenseTensor3, FaceNorm, SampledTensor};

/// `l22_norm(a − b)`.
pub fn l22_error(a: &DenseTensor3, b: &DenseTensor3) -> Result<f64> {
    l22_error_with(a, b, FaceNorm::Spectral)
}

pub fn l22_error_with(a: &DenseTensor3, b: &DenseTensor3, face_norm: FaceNorm) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    l22_from_faces(a.dim(), face_norm, |i, buf| {
        for ((o, x), y) in buf.iter_mut().zip(a.face(i)).zip(b.face(i)) {
            *o = x - y;
        }
    })
}

/// `l22_norm(R_Ω(T) − T)` without forming the (asymmetric) difference tensor.
pub fn l22_error_sampled(est: &SampledTensor, truth: &DenseTensor3, face_norm: FaceNorm) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: est.dim(),
        });
    }
    l22_from_faces(truth.dim(), face_norm, |i, buf| {
        for (o, x) in buf.iter_mut().zip(truth.face(i)) {
            *o = -x;
        }
        est.scatter_face(i, buf);
    })
}

/// Column matching between an estimate and the truth.
///
/// `perm[l]` is the estimate column matched to truth column `l`, and
/// `signs[l]` the sign that best aligns it.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

/// Anything with unit columns and weights that can be compared.
pub trait Factored {
    fn dim(&self) -> usize;
    fn rank(&self) -> usize;
    fn column(&self, l: usize) -> &[f64];
    fn weight(&self, l: usize) -> f64;
}

impl Factored for crate::tensor::CpFactors {
    fn dim(&self) -> usize {
        crate::tensor::CpFactors::dim(self)
    }
    fn rank(&self) -> usize {
        crate::tensor::CpFactors::rank(self)
    }
    fn column(&self, l: usize) -> &[f64] {
        crate::tensor::CpFactors::column(self, l)
    }
    fn weight(&self, l: usize) -> f64 {
        self.sigma()[l]
    }
}

fn check_shapes<A: Factored, B: Factored>(est: &A, truth: &B) -> Result<()> {
    if est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: est.dim(),
        });
    }
    if est.rank() != truth.rank() {
        return Err(Error::invalid(format!(
            "rank mismatch: estimate has {}, truth has {}",
            est.rank(),
            truth.rank()
        )));
    }
    Ok(())
}

/// Greedy assignment on `|⟨U_l, U*_j⟩|`, largest first; ties go to the lowest
/// index pair.
pub fn match_factors<A: Factored, B: Factored>(est: &A, truth: &B) -> Result<Matching> {
    check_shapes(est, truth)?;
    let r = truth.rank();
    let gram: Vec<Vec<f64>> = (0..r)
        .map(|t| (0..r).map(|e| dot(est.column(e), truth.column(t))).collect())
        .collect();
    let mut perm = vec![usize::MAX; r];
    let mut signs = vec![1.0; r];
    let mut used = vec![false; r];
    for _ in 0..r {
        let mut best: Option<(usize, usize, f64)> = None;
        for (t, row) in gram.iter().enumerate() {
            if perm[t] != usize::MAX {
                continue;
            }
            for (e, &g) in row.iter().enumerate() {
                if used[e] {
                    continue;
                }
                if best.is_none_or(|(_, _, b)| g.abs() > b) {
                    best = Some((t, e, g.abs()));
                }
            }
        }
        let (t, e, _) = best.expect("an unmatched pair remains");
        perm[t] = e;
        used[e] = true;
        signs[t] = if gram[t][e] < 0.0 { -1.0 } else { 1.0 };
    }
    Ok(Matching { perm, signs })
}

fn column_error<A: Factored, B: Factored>(est: &A, truth: &B, m: &Matching, l: usize) -> f64 {
    est.column(m.perm[l])
        .iter()
        .zip(truth.column(l))
        .map(|(a, b)| (m.signs[l] * a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `sqrt(Σ_l ‖s_l U_{π(l)} − U*_l‖² / (n r))` under the given matching.
pub fn factor_rmse_matched<A: Factored, B: Factored>(est: &A, truth: &B, m: &Matching) -> f64 {
    let (n, r) = (truth.dim(), truth.rank());
    let sq: f64 = (0..r).map(|l| column_error(est, truth, m, l).powi(2)).sum();
    (sq / (n * r) as f64).sqrt()
}

/// `max_l (‖s_l U_{π(l)} − U*_l‖ + |σ_{π(l)} − σ*_l| / σ*_l)` under the given matching.
pub fn d_inf_matched<A: Factored, B: Factored>(est: &A, truth: &B, m: &Matching) -> f64 {
    (0..truth.rank())
        .map(|l| {
            let s = truth.weight(l);
            column_error(est, truth, m, l) + (est.weight(m.perm[l]) - s).abs() / s.abs()
        })
        .fold(0.0, f64::max)
}

pub fn factor_rmse<A: Factored, B: Factored>(est: &A, truth: &B) -> Result<f64> {
    let m = match_factors(est, truth)?;
    Ok(factor_rmse_matched(est, truth, &m))
}

pub fn d_inf<A: Factored, B: Factored>(est: &A, truth: &B) -> Result<f64> {
    let m = match_factors(est, truth)?;
    Ok(d_inf_matched(est, truth, &m))
}

/// Largest column error `max_l ‖s_l U_{π(l)} − U*_l‖`.
pub fn max_column_error<A: Factored, B: Factored>(est: &A, truth: &B) -> Result<f64> {
    let m = match_factors(est, truth)?;
    Ok((0..truth.rank())
        .map(|l| column_error(est, truth, &m, l))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::CpFactors;

    fn basis() -> CpFactors {
        CpFactors::from_columns(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8], vec![0.0, 0.8, -0.6]],
            vec![3.0, 2.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn identical_factors() {
        let t = basis();
        let m = match_factors(&t, &t).unwrap();
        assert_eq!(m.perm, vec![0, 1, 2]);
        assert_eq!(m.signs, vec![1.0, 1.0, 1.0]);
        assert_eq!(factor_rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(d_inf(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn swapped_and_negated() {
        let t = basis();
        let est = CpFactors::from_columns(
            vec![
                vec![0.0, -0.6, -0.8],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 0.8, -0.6],
            ],
            vec![2.0, 3.0, 1.0],
        )
        .unwrap();
        let m = match_factors(&est, &t).unwrap();
        assert_eq!(m.perm, vec![1, 0, 2]);
        assert_eq!(m.signs, vec![1.0, -1.0, 1.0]);
        assert!(factor_rmse(&est, &t).unwrap() < 1e-15);
    }

    #[test]
    fn chord_length_and_weight_error() {
        let theta: f64 = 0.3;
        let truth = CpFactors::from_columns(vec![vec![1.0, 0.0]], vec![2.0]).unwrap();
        let est = CpFactors::from_columns(vec![vec![theta.cos(), theta.sin()]], vec![2.0]).unwrap();
        assert!((d_inf(&est, &truth).unwrap() - 2.0 * (theta / 2.0).sin()).abs() < 1e-15);

        let est = CpFactors::from_columns(vec![vec![1.0, 0.0]], vec![2.2]).unwrap();
        assert!((d_inf(&est, &truth).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn l22_error_cases() {
        let u = vec![0.6, 0.8];
        let a = CpFactors::from_columns(vec![u.clone()], vec![1.0]).unwrap().reconstruct().unwrap();
        assert_eq!(l22_error(&a, &a).unwrap(), 0.0);
        let zero = DenseTensor3::zeros(2).unwrap();
        assert_eq!(l22_error(&a, &zero).unwrap(), a.l22_norm().unwrap());
        let b = CpFactors::from_columns(vec![u], vec![1.25]).unwrap().reconstruct().unwrap();
        assert!((l22_error(&b, &a).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn rank_mismatch_rejected() {
        let a = basis();
        let b = CpFactors::from_columns(vec![vec![1.0, 0.0, 0.0]], vec![1.0]).unwrap();
        assert!(match_factors(&a, &b).is_err());
    }
}
