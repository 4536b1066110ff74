//! Sampling suites over the pointwise algebra. Each returns a [`Report`]
//! whose numbers depend only on its arguments: every sample draws from its
//! own seed-derived stream and reductions are min/max only.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jacobi::{
    find_lambda_threshold, jacobi_breakdown, positive_balance_check, sample_third_slice,
    worst_direction, MARGIN_TOL, THRESHOLD_TOP,
};
use crate::legendre::{
    default_kappa, dg_eigenvalues, g_value, log_grid, random_shear_convex,
    transformation_rule_check, uniform_ellipticity_scan,
};
use crate::oracle::{jacobi_consistency, oracle_slice_scale};
use crate::report::Report;
use crate::rng::{derive_seed, stream_rng};
use crate::sigma2::{
    ellipticity_bounds, first_coefficient_identity, sigma1_lower_bound, small_eig_bound,
    weighted_ellipticity_ratio, weighted_ratio_bound_constant, OnShellPoint, OnShellSampler,
};
use crate::spectral::eigen_decompose;

/// Identity gap tolerance, relative to `|t|²|λ|²`.
pub const BALANCE_TOL: f64 = 1e-10;
/// Finite-difference DG oracle tolerance (absolute, entrywise).
pub const TRANSFORM_FD_TOL: f64 = 1e-6;
/// Closed-form DG eigenvalue tolerance (relative).
pub const TRANSFORM_EIG_TOL: f64 = 1e-12;
/// Finite-difference Jacobi oracle tolerance (relative) and its step.
pub const CONSISTENCY_TOL: f64 = 1e-5;
pub const CONSISTENCY_STEP: f64 = 1e-4;
/// Headroom on the fitted weighted-ratio constant.
pub const RATIO_HEADROOM: f64 = 1.1;

const LAMBDA1_RANGE: (f64, f64) = (1.0, THRESHOLD_TOP);

/// Log-uniform magnitude in `[1e-3, 1e3]` for third-derivative slices.
fn slice_scale<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    10f64.powf(rng.random_range(-3.0..3.0))
}

pub fn verify_balance(n: usize, k: f64, samples: u64, seed: u64) -> Result<Report> {
    let sampler = OnShellSampler::new(n, k, LAMBDA1_RANGE)?.log_uniform(true);
    let worst = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream_rng(seed, i);
            let p = sampler.sample(&mut rng)?;
            let scale = slice_scale(&mut rng);
            let t = sample_third_slice(&p, scale, &mut rng);
            let (lhs, rhs) = positive_balance_check(&p, &t)?;
            let d = t.diagonal();
            let t_sq: f64 = d.iter().map(|v| v * v).sum();
            let denom = t_sq * p.norm_sq();
            Ok(if denom == 0.0 {
                0.0
            } else {
                (lhs - rhs).abs() / denom
            })
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    let mut r = Report::new("verify-balance", samples, seed);
    r.metric("n", n as f64)
        .metric("K", k)
        .metric("worst_identity_gap", worst)
        .check_le("worst_identity_gap", worst, BALANCE_TOL);
    Ok(r)
}

#[derive(Debug, Clone, Copy)]
struct JacobiStats {
    worst_margin: f64,
    worst_random_margin: f64,
    min_term_iii: f64,
    worst_consistency: f64,
}

impl JacobiStats {
    fn identity() -> Self {
        Self {
            worst_margin: f64::INFINITY,
            worst_random_margin: f64::INFINITY,
            min_term_iii: f64::INFINITY,
            worst_consistency: 0.0,
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            worst_margin: self.worst_margin.min(o.worst_margin),
            worst_random_margin: self.worst_random_margin.min(o.worst_random_margin),
            min_term_iii: self.min_term_iii.min(o.min_term_iii),
            worst_consistency: self.worst_consistency.max(o.worst_consistency),
        }
    }
}

/// Number of draws that are also run through the finite-difference oracle.
const CONSISTENCY_SAMPLES: u64 = 1000;

/// Finds the empirical Λ(n, K) (unless `lambda` is given), then checks the
/// Jacobi margin on fresh draws with λ₁ log-uniform in `[Λ, 10⁶]`. Every draw
/// contributes a random slice and the exact minimizing slice for its point.
pub fn verify_jacobi(
    n: usize,
    k: f64,
    epsilon: f64,
    samples: u64,
    seed: u64,
    lambda: Option<f64>,
) -> Result<Report> {
    let mut r = Report::new("verify-jacobi", samples, seed);
    r.metric("n", n as f64)
        .metric("K", k)
        .metric("epsilon", epsilon);
    let big_lambda = match lambda {
        Some(l) => l,
        None => {
            let budget = (samples / 10).max(10_000) as usize;
            let found = find_lambda_threshold(n, k, epsilon, budget, derive_seed(seed, 1))?;
            r.metric("threshold_budget", budget as f64).metric(
                "threshold_grid_points_evaluated",
                found.evaluated.len() as f64,
            );
            found.lambda
        }
    };
    r.metric("Lambda", big_lambda);
    r.check_ge("Lambda", big_lambda, (1.0 + epsilon) / (1.0 - epsilon) * k);

    let sampler =
        OnShellSampler::new(n, k, (big_lambda, THRESHOLD_TOP.max(big_lambda)))?.log_uniform(true);
    let sample_seed = derive_seed(seed, 2);
    let stats = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<JacobiStats> {
            let mut rng = stream_rng(sample_seed, i);
            let p = sampler.sample(&mut rng)?;
            let t = sample_third_slice(&p, 1.0, &mut rng);
            let b = match jacobi_breakdown(&p, &t, epsilon) {
                Ok(b) => b,
                Err(Error::DegenerateTop { .. }) => return Ok(JacobiStats::identity()),
                Err(e) => return Err(e),
            };
            let (exact, _) = worst_direction(&p, epsilon)?;
            let random = b.margin / t.norm_sq();
            let consistency = if i < CONSISTENCY_SAMPLES {
                let t = sample_third_slice(&p, oracle_slice_scale(&p), &mut rng);
                jacobi_consistency(&p, &t, CONSISTENCY_STEP, derive_seed(sample_seed, i))?
                    .worst_rel_err()
            } else {
                0.0
            };
            Ok(JacobiStats {
                worst_margin: random.min(exact),
                worst_random_margin: random,
                min_term_iii: b.term_iii,
                worst_consistency: consistency,
            })
        })
        .try_reduce(JacobiStats::identity, |a, b| Ok(a.merge(b)))?;

    r.metric("worst_margin", stats.worst_margin)
        .metric("worst_random_margin", stats.worst_random_margin)
        .metric("min_term_iii", stats.min_term_iii)
        .metric("worst_fd_rel_err", stats.worst_consistency)
        .check_ge("worst_margin", stats.worst_margin, -MARGIN_TOL)
        .check_ge("min_term_iii", stats.min_term_iii, 0.0)
        .check_le("worst_fd_rel_err", stats.worst_consistency, CONSISTENCY_TOL)
        .note("margins are normalized by the Frobenius norm of the slice");
    Ok(r)
}

/// Runs the finite-difference Jacobi oracle on `samples` draws.
pub fn verify_consistency(n: usize, k: f64, samples: u64, seed: u64) -> Result<Report> {
    let sampler = OnShellSampler::new(n, k, LAMBDA1_RANGE)?.log_uniform(true);
    let worst = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream_rng(seed, i);
            let p = sampler.sample(&mut rng)?;
            let t = sample_third_slice(&p, oracle_slice_scale(&p), &mut rng);
            match jacobi_consistency(&p, &t, CONSISTENCY_STEP, derive_seed(seed, i)) {
                Ok(c) => Ok(c.worst_rel_err()),
                Err(Error::DegenerateTop { .. }) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    let mut r = Report::new("verify-consistency", samples, seed);
    r.metric("n", n as f64)
        .metric("K", k)
        .metric("worst_fd_rel_err", worst)
        .check_le("worst_fd_rel_err", worst, CONSISTENCY_TOL);
    Ok(r)
}

#[derive(Debug, Clone, Copy)]
struct TransformStats {
    fd_diff: f64,
    eig_rel: f64,
    g_onshell: f64,
    involution: f64,
}

impl TransformStats {
    fn merge(self, o: Self) -> Self {
        Self {
            fd_diff: self.fd_diff.max(o.fd_diff),
            eig_rel: self.eig_rel.max(o.eig_rel),
            g_onshell: self.g_onshell.max(o.g_onshell),
            involution: self.involution.max(o.involution),
        }
    }
}

/// Shifted eigenvalues `λ + κ` of the random shear-convex matrices.
pub const SHIFTED_RANGE: (f64, f64) = (0.25, 4.0);

pub fn verify_transform(n: usize, k: f64, samples: u64, seed: u64) -> Result<Report> {
    let kappa = default_kappa(k);
    let onshell = OnShellSampler::new(n, k, (1.0, 1e2))?.log_uniform(true);
    let zero = TransformStats {
        fd_diff: 0.0,
        eig_rel: 0.0,
        g_onshell: 0.0,
        involution: 0.0,
    };
    let stats = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<TransformStats> {
            let mut rng = stream_rng(seed, i);
            let m = random_shear_convex(n, kappa, SHIFTED_RANGE, &mut rng);
            let check = transformation_rule_check(&m, kappa)?;

            let spec = eigen_decompose(&check.lhs)?;
            let lambda = eigen_decompose(&m)?.lambda;
            let mut closed = dg_eigenvalues(&lambda, kappa);
            closed.sort_by(|a, b| b.total_cmp(a));
            // Norm-relative, the natural accuracy scale of a symmetric eigensolve.
            let scale = closed.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let eig_rel = spec
                .lambda
                .iter()
                .zip(&closed)
                .map(|(a, b)| (a - b).abs() / scale)
                .fold(0.0, f64::max);

            let dual = crate::legendre::dual_hessian(&m, kappa)?;
            let back = crate::legendre::primal_hessian(&dual.n, kappa)?;

            let p = onshell.sample(&mut rng)?;
            let frame = eigen_decompose(&random_shear_convex(n, 0.0, (0.5, 2.0), &mut rng))?;
            let rotated = frame.rotate(&p.hessian());
            let g = g_value(&crate::legendre::dual_hessian(&rotated, kappa)?.n, kappa)?;
            Ok(TransformStats {
                fd_diff: check.max_abs_diff,
                eig_rel,
                g_onshell: g.abs(),
                involution: back.max_abs_diff(&m),
            })
        })
        .try_reduce(|| zero, |a, b| Ok(a.merge(b)))?;
    let mut r = Report::new("verify-transform", samples, seed);
    r.metric("n", n as f64)
        .metric("kappa", kappa)
        .metric("max_abs_diff", stats.fd_diff)
        .metric("max_eigenvalue_rel_err", stats.eig_rel)
        .metric("max_onshell_g", stats.g_onshell)
        .metric("max_involution_err", stats.involution)
        .check_le("max_abs_diff", stats.fd_diff, TRANSFORM_FD_TOL)
        .check_le("max_eigenvalue_rel_err", stats.eig_rel, TRANSFORM_EIG_TOL)
        .check_le("max_onshell_g", stats.g_onshell, 1e-10)
        .check_le("max_involution_err", stats.involution, 1e-12);
    Ok(r)
}

/// Conformal ellipticity scan over `points` log-spaced λ₁ in `[Λ, 10⁶]`.
pub fn verify_ellipticity(
    n: usize,
    k: f64,
    lambda: f64,
    points: usize,
    samples_per_point: u64,
    seed: u64,
) -> Result<Report> {
    let grid = log_grid(lambda, THRESHOLD_TOP, points)?;
    let scan = uniform_ellipticity_scan(n, k, &grid, samples_per_point as usize, seed)?;
    let mut r = Report::new(
        "verify-ellipticity",
        samples_per_point * grid.len() as u64,
        seed,
    );
    r.metric("n", n as f64)
        .metric("K", k)
        .metric("kappa", scan.kappa)
        .metric("Lambda", lambda)
        .metric("c_empirical", scan.global_min)
        .metric("C_empirical", scan.global_max)
        .metric("min_variation_top_two_decades", scan.min_variation)
        .metric("max_variation_top_two_decades", scan.max_variation)
        .check_gt("c_empirical", scan.global_min, 0.0)
        .check_lt(
            "min_variation_top_two_decades",
            scan.min_variation,
            crate::legendre::STABILITY_TOL,
        )
        .check_lt(
            "max_variation_top_two_decades",
            scan.max_variation,
            crate::legendre::STABILITY_TOL,
        )
        .note("c_empirical and C_empirical are sample extremes, not proven constants");
    for p in &scan.points {
        r.metric(&format!("scan_min[{:.6e}]", p.lambda1), p.min_eig)
            .metric(&format!("scan_max[{:.6e}]", p.lambda1), p.max_eig);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy)]
struct QEllipStats {
    violations: u64,
    worst_slack_rel: f64,
    max_small_eig: f64,
    min_sigma1_slack: f64,
    max_identity_err: f64,
    min_identity_gap: f64,
    max_sigma1_sq_err: f64,
    fit_ratio: f64,
    heldout_ratio: f64,
}

impl QEllipStats {
    fn identity() -> Self {
        Self {
            violations: 0,
            worst_slack_rel: f64::INFINITY,
            max_small_eig: 0.0,
            min_sigma1_slack: f64::INFINITY,
            max_identity_err: 0.0,
            min_identity_gap: f64::INFINITY,
            max_sigma1_sq_err: 0.0,
            fit_ratio: 0.0,
            heldout_ratio: 0.0,
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            violations: self.violations + o.violations,
            worst_slack_rel: self.worst_slack_rel.min(o.worst_slack_rel),
            max_small_eig: self.max_small_eig.max(o.max_small_eig),
            min_sigma1_slack: self.min_sigma1_slack.min(o.min_sigma1_slack),
            max_identity_err: self.max_identity_err.max(o.max_identity_err),
            min_identity_gap: self.min_identity_gap.min(o.min_identity_gap),
            max_sigma1_sq_err: self.max_sigma1_sq_err.max(o.max_sigma1_sq_err),
            fit_ratio: self.fit_ratio.max(o.fit_ratio),
            heldout_ratio: self.heldout_ratio.max(o.heldout_ratio),
        }
    }
}

/// Multiple of the small-eigenvalue bound up to which the middle eigenvalues
/// are drawn, so the bound is tested rather than built into the sampler.
pub const MIDDLE_OVERSHOOT: f64 = 4.0;
/// `|f₁ − (|λ'|² + 2)/(σ₁ + λ₁)|` relative to `Σ_{k>1} |λ_k|`.
pub const F1_IDENTITY_TOL: f64 = 1e-14;
/// λ₁ below this feeds the weighted-ratio fit, above it is held out.
pub const RATIO_FIT_SPLIT: f64 = 1e3;

pub fn verify_qellip(n: usize, k: f64, samples: u64, seed: u64) -> Result<Report> {
    let bound = small_eig_bound(n, k);
    let sampler = OnShellSampler::new(n, k, LAMBDA1_RANGE)?
        .log_uniform(true)
        .middle_upper(MIDDLE_OVERSHOOT * bound);
    let s1_min = sigma1_lower_bound(n);
    let stats = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<QEllipStats> {
            let mut rng = stream_rng(seed, i);
            let p: OnShellPoint = sampler.sample(&mut rng)?;
            let e = ellipticity_bounds(&p);
            let l1 = p.lambda1();
            let (f1, f1_alt, f1_upper) = first_coefficient_identity(&p);
            let ratio = weighted_ellipticity_ratio(&p) / (l1 * l1);
            let small = p.tail().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            // f₁ = Σ λ' cancels down to O(1/λ₁); its attainable accuracy is
            // set by the size of the summands.
            let tail_scale: f64 = p.tail().iter().map(|v| v.abs()).sum();
            let s1 = p.sigma1();
            Ok(QEllipStats {
                violations: (!e.all_pass()) as u64,
                worst_slack_rel: e.worst_slack / l1,
                max_small_eig: small,
                min_sigma1_slack: p.sigma1() - s1_min,
                max_identity_err: (f1 - f1_alt).abs() / tail_scale,
                min_identity_gap: (f1_upper - f1_alt) / f1_upper,
                max_sigma1_sq_err: (s1 * s1 - (p.norm_sq() + 2.0)).abs() / (s1 * s1),
                fit_ratio: if l1 < RATIO_FIT_SPLIT { ratio } else { 0.0 },
                heldout_ratio: if l1 >= RATIO_FIT_SPLIT { ratio } else { 0.0 },
            })
        })
        .try_reduce(QEllipStats::identity, |a, b| Ok(a.merge(b)))?;

    let fitted = RATIO_HEADROOM * stats.fit_ratio;
    let mut r = Report::new("verify-qellip", samples, seed);
    r.metric("n", n as f64)
        .metric("K", k)
        .metric("qellip_violations", stats.violations as f64)
        .metric("worst_relative_slack", stats.worst_slack_rel)
        .metric("small_eig_bound", bound)
        .metric("max_small_eig", stats.max_small_eig)
        .metric("sigma1_lower_bound", s1_min)
        .metric("min_sigma1_slack", stats.min_sigma1_slack)
        .metric("max_f1_identity_err", stats.max_identity_err)
        .metric("max_sigma1_sq_rel_err", stats.max_sigma1_sq_err)
        .metric("min_f1_strict_gap", stats.min_identity_gap)
        .metric("weighted_ratio_fitted_C", fitted)
        .metric("weighted_ratio_heldout_max", stats.heldout_ratio)
        .metric(
            "weighted_ratio_analytic_C",
            weighted_ratio_bound_constant(n),
        )
        .check_le("qellip_violations", stats.violations as f64, 0.0)
        .check_ge("min_sigma1_slack", stats.min_sigma1_slack, 0.0)
        .check_le(
            "max_f1_identity_err",
            stats.max_identity_err,
            F1_IDENTITY_TOL,
        )
        .check_le("max_sigma1_sq_rel_err", stats.max_sigma1_sq_err, 1e-10)
        .check_gt("min_f1_strict_gap", stats.min_identity_gap, 0.0)
        .check_le("weighted_ratio_heldout_max", stats.heldout_ratio, fitted);
    if n >= 3 {
        r.check_le("max_small_eig", stats.max_small_eig, bound);
    } else {
        r.note("n = 2: the small-eigenvalue bound reduces to λ₂ = 1/λ₁ ≤ 1 and is reported, not asserted");
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for n in 2..=4 {
            assert!(verify_balance(n, 1.0, 2000, 1).unwrap().pass);
            let t = verify_transform(n, 1.0, 200, 1).unwrap();
            assert!(t.pass, "{t:#?}");
            let q = verify_qellip(n, 1.0, 2000, 1).unwrap();
            assert!(q.pass, "{q:#?}");
        }
        assert!(verify_consistency(3, 1.0, 200, 1).unwrap().pass);
    }

    #[test]
    fn suites_are_deterministic() {
        let a = verify_balance(3, 0.5, 500, 9).unwrap();
        let b = verify_balance(3, 0.5, 500, 9).unwrap();
        assert_eq!(a, b);
    }
}
