//! Integral Jacobi inequality and the mean value inequality on solved grids.

use serde::{Deserialize, Serialize};
use sigma2_core::sigma2::linearized_matrix;
use sigma2_core::SymmetricMatrix;

use crate::error::{Error, Result};
use crate::grid::{hessian_at, GridFunction};
use crate::solver::SolveResult;

/// Radial quartic-spline cutoff: 1 on `|x − c| ≤ inner`, 0 beyond `outer`.
/// With `s = (|x − c| − inner)/(outer − inner)` the transition is
/// `1 − 8s³ + 8s⁴` on `[0, ½]` and its point reflection `8(1−s)³ − 8(1−s)⁴`
/// on `[½, 1]`, which makes the profile C². Gradient is analytic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

impl Cutoff {
    pub fn new(center: Vec<f64>, inner: f64, outer: f64) -> Result<Self> {
        if !(inner >= 0.0 && outer > inner) {
            return Err(Error::InvalidArgument(format!(
                "cutoff radii {inner} < {outer} required"
            )));
        }
        Ok(Self {
            center,
            inner,
            outer,
        })
    }

    pub fn centered(n: usize, inner: f64, outer: f64) -> Result<Self> {
        Self::new(vec![0.0; n], inner, outer)
    }

    fn radius(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let s = ((self.radius(x) - self.inner) / (self.outer - self.inner)).clamp(0.0, 1.0);
        if s <= 0.5 {
            1.0 - 8.0 * s.powi(3) + 8.0 * s.powi(4)
        } else {
            let t = 1.0 - s;
            8.0 * t.powi(3) - 8.0 * t.powi(4)
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.radius(x);
        let w = self.outer - self.inner;
        let s = (r - self.inner) / w;
        if s <= 0.0 || s >= 1.0 {
            return vec![0.0; x.len()];
        }
        let t = s.min(1.0 - s);
        let d = (-24.0 * t * t + 32.0 * t.powi(3)) / w;
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| d * (a - c) / r)
            .collect()
    }

    pub fn supported(&self, x: &[f64]) -> bool {
        self.radius(x) < self.outer
    }
}

/// `b = ¼ ln max(Λ, λ_max)`.
pub fn jacobi_quantity(lambda: f64, lambda_max: f64) -> f64 {
    0.25 * lambda.max(lambda_max).ln()
}

fn support_nodes(u: &GridFunction, cutoff: &Cutoff) -> Result<Vec<usize>> {
    let nodes: Vec<usize> = (0..u.len())
        .filter(|&i| cutoff.supported(&u.point(i)))
        .collect();
    if let Some(&i) = nodes.iter().find(|&&i| u.layer(i) < 2) {
        return Err(Error::InvalidArgument(format!(
            "cutoff support reaches node {:?} within two layers of the boundary",
            u.node(i)
        )));
    }
    Ok(nodes)
}

fn central(values: &[f64], u: &GridFunction, i: usize) -> Vec<f64> {
    (0..u.dim())
        .map(|a| {
            let s = u.stride(a);
            (values[i + s] - values[i - s]) / (2.0 * u.spacing())
        })
        .collect()
}

/// `Σ_nodes [F_ij φ_i β_j + φ F_ij β_i β_j] hⁿ` with β differenced from its
/// nodal values. φ vanishes with its gradient on the edge of its support, so
/// the trapezoid weights are all 1 there.
fn jacobi_form(u: &GridFunction, beta: &[f64], cutoff: &Cutoff) -> Result<f64> {
    let cell = u.spacing().powi(u.dim() as i32);
    let mut total = 0.0;
    for i in support_nodes(u, cutoff)? {
        let x = u.point(i);
        let f = linearized_matrix(&hessian_at(u, i));
        let db = central(beta, u, i);
        let dphi = cutoff.gradient(&x);
        total += bilinear(&f, &dphi, &db) + cutoff.value(&x) * f.quad_form(&db);
    }
    Ok(total * cell)
}

/// `Σ_nodes |F_ij φ_i β_j| hⁿ`: the size of the term whose cancellation the
/// quadrature has to resolve.
pub fn first_term_mass(u: &GridFunction, beta: &[f64], cutoff: &Cutoff) -> Result<f64> {
    let cell = u.spacing().powi(u.dim() as i32);
    let mut total = 0.0;
    for i in support_nodes(u, cutoff)? {
        let f = linearized_matrix(&hessian_at(u, i));
        total += bilinear(&f, &cutoff.gradient(&u.point(i)), &central(beta, u, i)).abs();
    }
    Ok(total * cell)
}

fn bilinear(m: &SymmetricMatrix, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(m.mul_vec(b)).map(|(x, y)| x * y).sum()
}

/// Discrete `∫ F_ij φ_i b_j + φ F_ij b_i b_j dx` for
/// `b = ¼ ln max(Λ, λ_max)`; non-positive up to quadrature error on
/// solutions with Λ above the pointwise Jacobi threshold.
pub fn integral_jacobi_check(sol: &SolveResult, lambda: f64, cutoff: &Cutoff) -> Result<f64> {
    let b: Vec<f64> = sol
        .lambda_max_field
        .values()
        .iter()
        .map(|&l| jacobi_quantity(lambda, l))
        .collect();
    jacobi_form(&sol.u, &b, cutoff)
}

/// `ψ = ¼ ln(1 + |x|²)` on the nodes: the smooth weight the quadrature is
/// calibrated with.
pub fn calibration_weight(u: &GridFunction) -> Vec<f64> {
    (0..u.len())
        .map(|i| 0.25 * (1.0 + u.point(i).iter().map(|c| c * c).sum::<f64>()).ln())
        .collect()
}

/// Quadrature constant `C_q` calibrated on an exact quadratic `q` (constant
/// coefficients, where `∫ F_ij φ_i ψ_j + φ F_ij ψ_ij = 0` holds exactly):
/// the discrete identity defect for [`calibration_weight`], divided by h².
pub fn quadrature_constant(q: &GridFunction, cutoff: &Cutoff) -> Result<f64> {
    let psi = calibration_weight(q);
    let first = jacobi_form(q, &psi, cutoff)?;
    // Subtract the quadratic term φ F ψ_i ψ_j that jacobi_form includes and
    // add the analytic φ F_ij ψ_ij.
    let cell = q.spacing().powi(q.dim() as i32);
    let mut correction = 0.0;
    for i in support_nodes(q, cutoff)? {
        let x = q.point(i);
        let f = linearized_matrix(&hessian_at(q, i));
        let db = central(&psi, q, i);
        let r2 = 1.0 + x.iter().map(|c| c * c).sum::<f64>();
        let hess = SymmetricMatrix::from_fn(q.dim(), |a, b| {
            let delta = if a == b { 1.0 } else { 0.0 };
            0.5 * (delta / r2 - 2.0 * x[a] * x[b] / (r2 * r2))
        });
        let phi = cutoff.value(&x);
        correction += phi * f.contract(&hess) - phi * f.quad_form(&db);
    }
    let defect = first + correction * cell;
    Ok(defect.abs() / (q.spacing() * q.spacing()))
}

/// `(b(0), ∫_{B₁} b Δu dx)` by the nodal rule over nodes with `|x| ≤ 1`.
pub fn mvi_check(sol: &SolveResult, lambda: f64) -> Result<(f64, f64)> {
    let u = &sol.u;
    let cell = u.spacing().powi(u.dim() as i32);
    let lmax = sol.lambda_max_field.values();
    let mut rhs = 0.0;
    for i in 0..u.len() {
        let x = u.point(i);
        if x.iter().map(|c| c * c).sum::<f64>() <= 1.0 + 1e-12 {
            if u.layer(i) == 0 {
                return Err(Error::InvalidArgument(
                    "unit ball touches the boundary".into(),
                ));
            }
            rhs += jacobi_quantity(lambda, lmax[i]) * hessian_at(u, i).trace();
        }
    }
    Ok((jacobi_quantity(lambda, lmax[u.origin()]), rhs * cell))
}

/// Lattice volume of the unit ball on the grid: the nodal-rule weight of 1.
pub fn unit_ball_volume(u: &GridFunction) -> f64 {
    let count = (0..u.len())
        .filter(|&i| u.point(i).iter().map(|c| c * c).sum::<f64>() <= 1.0 + 1e-12)
        .count();
    count as f64 * u.spacing().powi(u.dim() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{onshell_diagonal, Profile};
    use crate::solver::{newton_solve, SolverOptions};
    use sigma2_core::sigma2::sigma1_lower_bound;

    #[test]
    fn cutoff_profile_and_gradient() {
        let c = Cutoff::centered(2, 1.0, 2.0).unwrap();
        assert_eq!(c.value(&[0.5, 0.5]), 1.0);
        assert_eq!(c.value(&[2.0, 0.1]), 0.0);
        let x = [1.3, 0.4];
        let h = 1e-6;
        let g = c.gradient(&x);
        let d0 = (c.value(&[x[0] + h, x[1]]) - c.value(&[x[0] - h, x[1]])) / (2.0 * h);
        assert!((g[0] - d0).abs() < 1e-8);
        assert!(Cutoff::centered(2, 2.0, 1.0).is_err());
    }

    fn quadratic_solution(t: f64, shape: usize, r: f64) -> SolveResult {
        let b = Profile::quadratic(onshell_diagonal(3, t))
            .sample(shape, r)
            .unwrap();
        newton_solve(&b, &SolverOptions::default()).unwrap()
    }

    #[test]
    fn flat_b_gives_zero_integral() {
        let s = quadratic_solution(3.0, 13, 3.0);
        let c = Cutoff::centered(3, 1.0, 2.0).unwrap();
        // λ_max = 3 < Λ: b is constant
        assert_eq!(integral_jacobi_check(&s, 10.0, &c).unwrap(), 0.0);
        // λ_max = 3 > Λ but constant on a quadratic: still exactly zero
        assert!(integral_jacobi_check(&s, 1.0, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn support_must_stay_inside() {
        let s = quadratic_solution(3.0, 9, 1.0);
        let c = Cutoff::centered(3, 0.5, 1.0).unwrap();
        assert!(integral_jacobi_check(&s, 1.0, &c).is_err());
    }

    #[test]
    fn quadrature_constant_is_small_and_stable() {
        let c = Cutoff::centered(2, 0.5, 1.5).unwrap();
        let cq: Vec<f64> = [17, 33]
            .iter()
            .map(|&shape| {
                quadrature_constant(
                    &Profile::quadratic(vec![2.0, 0.5])
                        .sample(shape, 3.0)
                        .unwrap(),
                    &c,
                )
                .unwrap()
            })
            .collect();
        assert!(cq.iter().all(|v| v.is_finite() && *v < 10.0), "{cq:?}");
    }

    #[test]
    fn constant_b_ratio_obeys_the_sigma1_bound() {
        let s = quadratic_solution(3.0, 17, 3.0);
        let lambda = 10.0;
        let (lhs, rhs) = mvi_check(&s, lambda).unwrap();
        let b = jacobi_quantity(lambda, 0.0);
        assert!((lhs - b).abs() < 1e-15);
        let vol = unit_ball_volume(&s.u);
        let sigma1: f64 = onshell_diagonal(3, 3.0).iter().sum();
        assert!((rhs - b * sigma1 * vol).abs() < 1e-10 * rhs);
        assert!(lhs / rhs <= 1.0 / (sigma1_lower_bound(3) * vol));
    }
}
