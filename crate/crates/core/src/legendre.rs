//! Pointwise algebra of the Legendre–Lewy transform: Hessians map by
//! `M ↦ N = (M + κI)⁻¹` and the equation becomes `G(N) = −F(N⁻¹ − κI)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::sigma2::{linearized_matrix, residual, OnShellPoint, OnShellSampler};
use crate::spectral::{eigen_decompose, sigma2_gradient, SymmetricMatrix};

/// Default shear: the semiconvexity constant plus one, which makes the
/// gradient map `x ↦ Du + κx` expand distances.
pub fn default_kappa(k: f64) -> f64 {
    k + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShearedDualPoint {
    pub kappa: f64,
    pub m: SymmetricMatrix,
    pub n: SymmetricMatrix,
    /// `μ_i = 1/(λ_i + κ)`, listed in the order of the descending `λ_i`.
    pub mu: Vec<f64>,
}

pub fn dual_hessian(m: &SymmetricMatrix, kappa: f64) -> Result<ShearedDualPoint> {
    let spec = eigen_decompose(m)?;
    let min_shifted = spec.lambda[spec.dim() - 1] + kappa;
    if !(min_shifted > 0.0) {
        return Err(Error::NotShearConvex {
            min_eigenvalue: min_shifted,
        });
    }
    let dual = spec.map_eigenvalues(|l| 1.0 / (l + kappa));
    Ok(ShearedDualPoint {
        kappa,
        m: m.clone(),
        n: dual.reconstruct(),
        mu: dual.lambda,
    })
}

/// Recovers `M = N⁻¹ − κI`.
pub fn primal_hessian(n: &SymmetricMatrix, kappa: f64) -> Result<SymmetricMatrix> {
    Ok(n.inverse_spd()?.shift(-kappa))
}

/// `G(N) = −(σ₂(N⁻¹ − κI) − 1)`; zero exactly when the primal Hessian is on shell.
pub fn g_value(n: &SymmetricMatrix, kappa: f64) -> Result<f64> {
    Ok(-residual(&primal_hessian(n, kappa)?))
}

/// `∂G/∂N` by the chain rule: `N⁻¹ · DF(N⁻¹ − κI) · N⁻¹`.
pub fn dg_matrix(n: &SymmetricMatrix, kappa: f64) -> Result<SymmetricMatrix> {
    let inv = n.inverse_spd()?;
    let df = linearized_matrix(&inv.shift(-kappa));
    Ok(inv.sandwich(&df))
}

/// Central-difference oracle for `∂G/∂N_ij`, symmetric perturbations split
/// evenly between `(i, j)` and `(j, i)`.
pub fn dg_finite_difference(n: &SymmetricMatrix, kappa: f64, step: f64) -> Result<SymmetricMatrix> {
    let dim = n.dim();
    let mut out = SymmetricMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            let mut plus = n.clone();
            let mut minus = n.clone();
            plus.set(i, j, n.get(i, j) + step);
            minus.set(i, j, n.get(i, j) - step);
            let d = (g_value(&plus, kappa)? - g_value(&minus, kappa)?) / (2.0 * step);
            out.set(i, j, if i == j { d } else { 0.5 * d });
        }
    }
    Ok(out)
}

/// Oracle step `1e-5 · max(1, ‖N‖₂)`.
pub fn oracle_step(n: &SymmetricMatrix) -> Result<f64> {
    let spec = eigen_decompose(n)?;
    let norm = spec.lambda.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    Ok(1e-5 * norm.max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformCheck {
    /// `(M + κI) · DF(M) · (M + κI)`.
    pub lhs: SymmetricMatrix,
    /// Finite-difference `DG(N)` at `N = (M + κI)⁻¹`.
    pub rhs: SymmetricMatrix,
    pub max_abs_diff: f64,
}

pub fn transformation_rule_check(m: &SymmetricMatrix, kappa: f64) -> Result<TransformCheck> {
    let dual = dual_hessian(m, kappa)?;
    let shifted = m.shift(kappa);
    let lhs = shifted.sandwich(&linearized_matrix(m));
    let rhs = dg_finite_difference(&dual.n, kappa, oracle_step(&dual.n)?)?;
    let max_abs_diff = lhs.max_abs_diff(&rhs);
    Ok(TransformCheck {
        lhs,
        rhs,
        max_abs_diff,
    })
}

/// Closed-form eigenvalues of `DG` in the shared eigenbasis: `(κ + λ_i)² f_i`.
pub fn dg_eigenvalues(lambda: &[f64], kappa: f64) -> Vec<f64> {
    sigma2_gradient(lambda)
        .iter()
        .zip(lambda)
        .map(|(f, l)| (kappa + l).powi(2) * f)
        .collect()
}

/// `H = σ_n(μ) · DG(N)` by full matrix algebra.
pub fn conformal_matrix(n: &SymmetricMatrix, kappa: f64) -> Result<SymmetricMatrix> {
    let det = n.det_spd()?;
    Ok(dg_matrix(n, kappa)?.scale(det))
}

/// Eigenvalues of `H` for a primal spectrum `λ`:
/// `h_i = (Π_{j≠i} μ_j) · f_i / μ_i` with `μ_j = 1/(λ_j + κ)`.
pub fn conformal_eigenvalues(lambda: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let mu: Vec<f64> = lambda.iter().map(|l| 1.0 / (l + kappa)).collect();
    if mu.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        let min = lambda.iter().fold(f64::INFINITY, |a, &b| a.min(b)) + kappa;
        return Err(Error::NotShearConvex {
            min_eigenvalue: min,
        });
    }
    let f = sigma2_gradient(lambda);
    Ok((0..lambda.len())
        .map(|i| {
            let others: f64 = mu
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, m)| m)
                .product();
            others * f[i] / mu[i]
        })
        .collect())
}

/// Random symmetric matrix with `M + κI` positive definite: a random
/// orthogonal frame (Gram–Schmidt on Gaussian-ish columns) and shifted
/// eigenvalues drawn in `[shift_lo, shift_hi]`.
pub fn random_shear_convex<R: Rng + ?Sized>(
    dim: usize,
    kappa: f64,
    shifted_range: (f64, f64),
    rng: &mut R,
) -> SymmetricMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for c in &cols {
            let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c) {
                *x -= d * y;
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > 1e-3 {
            cols.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    let lam: Vec<f64> = (0..dim)
        .map(|_| rng.random_range(shifted_range.0..=shifted_range.1) - kappa)
        .collect();
    SymmetricMatrix::from_fn(dim, |i, j| {
        (0..dim).map(|k| cols[k][i] * lam[k] * cols[k][j]).sum()
    })
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && points >= 2) {
        return Err(Error::InvalidArgument(format!(
            "log grid [{lo}, {hi}] with {points} points"
        )));
    }
    let step = (hi / lo).ln() / (points - 1) as f64;
    let mut g: Vec<f64> = (0..points).map(|i| lo * (step * i as f64).exp()).collect();
    g[points - 1] = hi;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub lambda1: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityScan {
    pub n: usize,
    pub k: f64,
    pub kappa: f64,
    pub points: Vec<ScanPoint>,
    pub global_min: f64,
    pub global_max: f64,
    /// Largest relative spread of the per-point min (resp. max) over the top
    /// two decades of the grid.
    pub min_variation: f64,
    pub max_variation: f64,
    pub pass: bool,
}

/// Relative spread tolerated for the conformal eigenvalue extremes over the
/// top two decades of λ₁.
pub const STABILITY_TOL: f64 = 0.05;

/// Samples on-shell semiconvex points at each grid λ₁ and records the extreme
/// eigenvalues of `H`. The same random stream is reused at every grid point
/// so the λ₁-dependence is not masked by sampling noise.
pub fn uniform_ellipticity_scan(
    n: usize,
    k: f64,
    lambda1_grid: &[f64],
    samples_per_point: usize,
    seed: u64,
) -> Result<EllipticityScan> {
    if lambda1_grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda1 grid".into()));
    }
    let kappa = default_kappa(k);
    let mut points = Vec::with_capacity(lambda1_grid.len());
    for &l1 in lambda1_grid {
        let sampler = OnShellSampler::new(n, k, (l1, l1))?;
        let extremes = (0..samples_per_point as u64)
            .into_par_iter()
            .map(|i| -> Result<(f64, f64)> {
                let p: OnShellPoint = sampler.sample(&mut stream_rng(seed, i))?;
                let h = conformal_eigenvalues(p.lambda(), kappa)?;
                Ok(h.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    }))
            })
            .try_reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |a, b| Ok((a.0.min(b.0), a.1.max(b.1))),
            )?;
        points.push(ScanPoint {
            lambda1: l1,
            min_eig: extremes.0,
            max_eig: extremes.1,
            samples: samples_per_point,
        });
    }
    let global_min = points.iter().fold(f64::INFINITY, |a, p| a.min(p.min_eig));
    let global_max = points
        .iter()
        .fold(f64::NEG_INFINITY, |a, p| a.max(p.max_eig));
    let top = lambda1_grid
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let tail: Vec<&ScanPoint> = points.iter().filter(|p| p.lambda1 >= top / 100.0).collect();
    let spread = |vals: Vec<f64>| {
        let lo = vals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        (hi - lo) / lo.abs()
    };
    let min_variation = spread(tail.iter().map(|p| p.min_eig).collect());
    let max_variation = spread(tail.iter().map(|p| p.max_eig).collect());
    let pass = global_min > 0.0 && min_variation < STABILITY_TOL && max_variation < STABILITY_TOL;
    Ok(EllipticityScan {
        n,
        k,
        kappa,
        points,
        global_min,
        global_max,
        min_variation,
        max_variation,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_hessian_examples() {
        let m = SymmetricMatrix::from_diagonal(&[3.0, 1.0, -0.5]);
        let d = dual_hessian(&m, 1.0).unwrap();
        assert_eq!(d.mu, vec![0.25, 0.5, 2.0]);
        assert!(d.m.shift(1.0).sandwich(&d.n).max_abs_diff(&m.shift(1.0)) < 1e-14);

        let d = dual_hessian(&SymmetricMatrix::zeros(3), 1.0).unwrap();
        assert_eq!(d.n, SymmetricMatrix::identity(3));
    }

    #[test]
    fn dual_is_an_involution() {
        let mut m = SymmetricMatrix::from_diagonal(&[2.0, 0.3, -0.4]);
        m.set(0, 1, 0.7);
        m.set(1, 2, -0.2);
        let d = dual_hessian(&m, 1.5).unwrap();
        let back = primal_hessian(&d.n, 1.5).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn not_shear_convex_rejected() {
        let m = SymmetricMatrix::from_diagonal(&[1.0, -2.0]);
        assert!(matches!(
            dual_hessian(&m, 1.0),
            Err(Error::NotShearConvex { .. })
        ));
    }

    #[test]
    fn g_value_examples() {
        let m = SymmetricMatrix::from_diagonal(&[3.0, 1.0, -0.5]);
        let d = dual_hessian(&m, 1.0).unwrap();
        assert!(g_value(&d.n, 1.0).unwrap().abs() < 1e-13);
        for n in 2..=5 {
            let expected = -((n * (n - 1) / 2) as f64 - 1.0);
            assert_eq!(
                g_value(&SymmetricMatrix::identity(n), 0.0).unwrap(),
                expected
            );
        }
        let mut bad = SymmetricMatrix::identity(2);
        bad.set(0, 1, 2.0);
        assert_eq!(g_value(&bad, 0.0), Err(Error::Singular));
    }

    #[test]
    fn transformation_rule_two_dimensional_example() {
        let m = SymmetricMatrix::from_diagonal(&[2.0, 0.5]);
        let c = transformation_rule_check(&m, 1.0).unwrap();
        assert_eq!(c.lhs, SymmetricMatrix::from_diagonal(&[4.5, 4.5]));
        assert!(c.max_abs_diff < 1e-6);
        assert_eq!(dg_eigenvalues(&[2.0, 0.5], 1.0), vec![4.5, 4.5]);
    }

    #[test]
    fn isotropic_transform_is_isotropic() {
        let m = SymmetricMatrix::scaled_identity(3, 0.8);
        let c = transformation_rule_check(&m, 1.0).unwrap();
        let d = c.lhs.get(0, 0);
        assert_eq!(c.lhs, SymmetricMatrix::scaled_identity(3, d));
        assert!(c.max_abs_diff < 1e-7);
    }

    #[test]
    fn conformal_examples() {
        let m = SymmetricMatrix::from_diagonal(&[2.0, 0.5]);
        let d = dual_hessian(&m, 1.0).unwrap();
        let h = conformal_matrix(&d.n, 1.0).unwrap();
        assert!(h.max_abs_diff(&SymmetricMatrix::identity(2)) < 1e-14);
        let he = conformal_eigenvalues(&[2.0, 0.5], 1.0).unwrap();
        assert!((he[0] - 1.0).abs() < 1e-15 && (he[1] - 1.0).abs() < 1e-15);

        let l = 1.0 / 3f64.sqrt();
        let he = conformal_eigenvalues(&[l, l, l], 1.0).unwrap();
        assert!((he[0] - he[1]).abs() < 1e-15 && (he[1] - he[2]).abs() < 1e-15);
    }

    #[test]
    fn conformal_paths_agree_on_rotated_input() {
        let mut rng = stream_rng(3, 0);
        let p = OnShellSampler::new(3, 1.0, (2.0, 40.0))
            .unwrap()
            .sample(&mut rng)
            .unwrap();
        let base = random_shear_convex(3, 0.0, (0.5, 2.0), &mut rng);
        // Rotate diag(λ) by the eigenbasis of a random matrix.
        let frame = eigen_decompose(&base).unwrap();
        let m = SymmetricMatrix::from_diagonal(p.lambda()).congruence(&transpose(&frame.basis, 3));
        let kappa = 2.0;
        let d = dual_hessian(&m, kappa).unwrap();
        let h = eigen_decompose(&conformal_matrix(&d.n, kappa).unwrap()).unwrap();
        let mut closed = conformal_eigenvalues(p.lambda(), kappa).unwrap();
        closed.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in h.lambda.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    fn transpose(b: &[f64], n: usize) -> Vec<f64> {
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = b[i * n + j];
            }
        }
        t
    }

    #[test]
    fn two_dimensional_conformal_eigenvalues_stay_bounded() {
        for &t in &[2.0, 10.0, 1e3, 1e6] {
            let h = conformal_eigenvalues(&[t, 1.0 / t], 2.0).unwrap();
            // h₁ = μ₂ f₁/μ₁ = (t+2)/(t⁻¹+2)·t⁻¹, h₂ = (t⁻¹+2)/(t+2)·t.
            assert!(h.iter().all(|&v| v > 0.3 && v < 3.5), "{h:?}");
        }
    }

    #[test]
    fn scan_rejects_empty_grid() {
        assert!(uniform_ellipticity_scan(3, 1.0, &[], 10, 1).is_err());
    }
}
