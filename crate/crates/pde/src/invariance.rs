//! Operator invariance under the Legendre–Lewy transform: on a solution,
//! `F_ij(D²u) ∂²φ/∂xᵢ∂xⱼ (x) = G_ij(D²w) ∂²φ*/∂yᵢ∂yⱼ (y)` with
//! `φ*(y) = φ(x(y))`. The first-order terms that would otherwise appear
//! cancel only because u solves the equation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sigma2_core::legendre::{dg_matrix, dual_hessian};
use sigma2_core::sigma2::linearized_matrix;
use sigma2_core::SymmetricMatrix;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::legendre::LegendreDual;

/// Closed-form test functions with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestFunction {
    /// `½x₁² + x₁x₂ − x₂²`.
    Quadratic,
    /// `sin(x₁)cos(x₂)`.
    SinCos,
}

impl TestFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Quadratic => 0.5 * x[0] * x[0] + x[0] * x[1] - x[1] * x[1],
            Self::SinCos => x[0].sin() * x[1].cos(),
        }
    }

    pub fn hessian(&self, x: &[f64]) -> SymmetricMatrix {
        let mut m = SymmetricMatrix::zeros(x.len());
        match self {
            Self::Quadratic => {
                m.set(0, 0, 1.0);
                m.set(0, 1, 1.0);
                m.set(1, 1, -2.0);
            }
            Self::SinCos => {
                let (s0, c0, s1, c1) = (x[0].sin(), x[0].cos(), x[1].sin(), x[1].cos());
                m.set(0, 0, -s0 * c1);
                m.set(0, 1, -c0 * s1);
                m.set(1, 1, -s0 * c1);
            }
        }
        m
    }
}

/// Cube `center ± half_width` in y-space with `points` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBox {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub points: usize,
}

impl DualBox {
    /// Centred at `y(0)`, inscribed in the image of the inner half-box, with
    /// spacing tied to the x-grid: `(shape − 1)/2 + 1` points per axis.
    pub fn inscribed(dual: &LegendreDual, u: &GridFunction, fraction: f64) -> Self {
        Self {
            center: dual.origin_image().to_vec(),
            half_width: fraction * dual.covered_half_width(0.5 * u.half_width()),
            points: (u.shape() - 1) / 2 + 1,
        }
    }

    /// Same box, spacing tied to another x-grid.
    pub fn for_shape(&self, shape: usize) -> Self {
        Self {
            points: (shape - 1) / 2 + 1,
            ..self.clone()
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceCheck {
    /// `max |L − R| / max |L|` over the interior y-nodes.
    pub max_rel_diff: f64,
    pub max_abs_diff: f64,
    pub max_lhs: f64,
    pub points: usize,
}

/// Compares the two sides of the transformation rule on the interior nodes of
/// `domain`. The left side uses the interpolated discrete Hessian at
/// `x(y)` and the analytic Hessian of φ; the right side differences
/// `φ*(y) = φ(x(y))` on the y-grid and evaluates `DG` at
/// `D²w(y) = (D²u(x(y)) + κI)⁻¹`.
pub fn operator_invariance_check(
    u: &GridFunction,
    kappa: f64,
    testfn: TestFunction,
    domain: &DualBox,
) -> Result<InvarianceCheck> {
    let dual = LegendreDual::new(u, kappa)?;
    invariance_with_dual(&dual, testfn, domain)
}

pub fn invariance_with_dual(
    dual: &LegendreDual,
    testfn: TestFunction,
    domain: &DualBox,
) -> Result<InvarianceCheck> {
    let n = dual.dim();
    let m = domain.points;
    if m < 3 || domain.center.len() != n || !(domain.half_width > 0.0) {
        return Err(Error::InvalidArgument("degenerate dual box".into()));
    }
    let hy = domain.spacing();
    let len = m.pow(n as u32);
    let strides: Vec<usize> = (0..n).map(|a| m.pow((n - 1 - a) as u32)).collect();
    let coord = |mut k: usize| {
        let mut y = vec![0.0; n];
        for a in (0..n).rev() {
            y[a] = domain.center[a] - domain.half_width + (k % m) as f64 * hy;
            k /= m;
        }
        y
    };
    let interior = |mut k: usize| {
        (0..n).all(|_| {
            let i = k % m;
            k /= m;
            i > 0 && i < m - 1
        })
    };
    let preimages = (0..len)
        .into_par_iter()
        .map(|k| dual.inverse(&coord(k)))
        .collect::<Result<Vec<_>>>()?;
    let phi: Vec<f64> = preimages.iter().map(|x| testfn.value(x)).collect();
    let sides = (0..len)
        .into_par_iter()
        .filter(|&k| interior(k))
        .map(|k| {
            let x = &preimages[k];
            let d2u = dual.hessian(x)?;
            let lhs = linearized_matrix(&d2u).contract(&testfn.hessian(x));
            let dphi = SymmetricMatrix::from_fn(n, |a, b| {
                let (sa, sb) = (strides[a], strides[b]);
                if a == b {
                    (phi[k + sa] - 2.0 * phi[k] + phi[k - sa]) / (hy * hy)
                } else {
                    (phi[k + sa + sb] - phi[k + sa - sb] - phi[k - sa + sb] + phi[k - sa - sb])
                        / (4.0 * hy * hy)
                }
            });
            let nmat = dual_hessian(&d2u, dual.kappa)?.n;
            let rhs = dg_matrix(&nmat, dual.kappa)?.contract(&dphi);
            Ok((lhs, rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_lhs = sides.iter().fold(0.0f64, |a, s| a.max(s.0.abs()));
    let max_abs_diff = sides.iter().fold(0.0f64, |a, s| a.max((s.0 - s.1).abs()));
    Ok(InvarianceCheck {
        max_rel_diff: max_abs_diff / max_lhs,
        max_abs_diff,
        max_lhs,
        points: sides.len(),
    })
}

/// `|x|⁴`: shear-convex for any κ > 0 but not a solution, so the first-order
/// terms survive and the discrepancy does not vanish under refinement.
pub fn quartic_control(n: usize, shape: usize, r: f64) -> Result<GridFunction> {
    GridFunction::from_fn(n, shape, r, |x| {
        x.iter().map(|c| c * c).sum::<f64>().powi(2)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{onshell_diagonal, Profile};

    #[test]
    fn test_function_hessians_match_differences() {
        let x = [0.3, -0.8];
        let h = 1e-4;
        for f in [TestFunction::Quadratic, TestFunction::SinCos] {
            let m = f.hessian(&x);
            let d11 = (f.value(&[x[0] + h, x[1]]) - 2.0 * f.value(&x) + f.value(&[x[0] - h, x[1]]))
                / (h * h);
            let d12 = (f.value(&[x[0] + h, x[1] + h])
                - f.value(&[x[0] + h, x[1] - h])
                - f.value(&[x[0] - h, x[1] + h])
                + f.value(&[x[0] - h, x[1] - h]))
                / (4.0 * h * h);
            assert!((d11 - m.get(0, 0)).abs() < 1e-6 && (d12 - m.get(0, 1)).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_quadratic_with_quadratic_test_is_exact() {
        let u = Profile::quadratic(onshell_diagonal(2, 3.0))
            .sample(17, 1.0)
            .unwrap();
        let dual = LegendreDual::new(&u, 2.0).unwrap();
        let dom = DualBox::inscribed(&dual, &u, 0.9);
        let c = invariance_with_dual(&dual, TestFunction::Quadratic, &dom).unwrap();
        assert!(c.max_rel_diff < 1e-9, "{c:?}");
        assert!(c.points == 7 * 7);
    }

    #[test]
    fn non_solution_keeps_a_discrepancy() {
        let u = quartic_control(2, 33, 1.0).unwrap();
        let dual = LegendreDual::new(&u, 2.0).unwrap();
        let dom = DualBox::inscribed(&dual, &u, 0.9);
        let c = invariance_with_dual(&dual, TestFunction::SinCos, &dom).unwrap();
        assert!(c.max_rel_diff > 1e-2, "{c:?}");
    }
}
