//! Discrete Legendre–Lewy transform of a grid function: the sup-based conjugate
//! on a y-grid, and the smooth dual obtained by inverting the interpolated
//! gradient map `y(x) = Du(x) + κx`.

use rayon::prelude::*;
use sigma2_core::legendre::dual_hessian;
use sigma2_core::spectral::eigen_decompose;
use sigma2_core::SymmetricMatrix;

use crate::error::{Error, Result};
use crate::grid::{gradient_at, hessian_at, GridFunction};
use crate::interp::NodalField;

/// Fails with the first interior node where `D²u + κI` is not positive
/// definite; returns the smallest shifted eigenvalue otherwise.
pub fn check_shear_convex(u: &GridFunction, kappa: f64) -> Result<f64> {
    let worst = (0..u.len())
        .into_par_iter()
        .filter(|&i| u.layer(i) > 0)
        .map(|i| {
            eigen_decompose(&hessian_at(u, i)).map(|s| (s.lambda[s.lambda.len() - 1] + kappa, i))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
    if worst.0 > 0.0 {
        Ok(worst.0)
    } else {
        Err(Error::NotShearConvex {
            node: u.node(worst.1),
            min_eigenvalue: worst.0,
        })
    }
}

/// `out(…, j_a, …) = max_i x_i·y_j + g(…, i, …)` along every axis in turn.
/// A tensor-grid conjugate factorizes into one-dimensional ones.
fn separable_sup(g: &GridFunction, x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = g.dim();
    let shape = g.shape();
    let mut cur = g.values().to_vec();
    for a in 0..n {
        let stride = g.stride(a);
        let mut next = vec![f64::NEG_INFINITY; cur.len()];
        for base in 0..cur.len() {
            if (base / stride) % shape != 0 {
                continue;
            }
            for (j, &yj) in y.iter().enumerate() {
                let best = (0..shape)
                    .map(|i| x[i] * yj + cur[base + i * stride])
                    .fold(f64::NEG_INFINITY, f64::max);
                next[base + j * stride] = best;
            }
        }
        cur = next;
    }
    cur
}

/// Convex conjugate `f*(y) = max_x ⟨x,y⟩ − f(x)` over the nodes of `f`,
/// evaluated on the nodes of a grid with the same shape and half-width `ry`.
pub fn conjugate(f: &GridFunction, ry: f64) -> Result<GridFunction> {
    let neg = f.with_values(f.values().iter().map(|v| -v).collect())?;
    let target = GridFunction::from_fn(f.dim(), f.shape(), ry, |_| 0.0)?;
    let x: Vec<f64> = (0..f.shape()).map(|i| f.coordinate(i)).collect();
    let y: Vec<f64> = (0..f.shape()).map(|i| target.coordinate(i)).collect();
    target.with_values(separable_sup(&neg, &x, &y))
}

/// `v = u + κ|x|²/2` on the nodes of `u`.
pub fn sheared(u: &GridFunction, kappa: f64) -> Result<GridFunction> {
    let values = (0..u.len())
        .map(|i| u.values()[i] + 0.5 * kappa * u.point(i).iter().map(|c| c * c).sum::<f64>())
        .collect();
    u.with_values(values)
}

/// Nodes with `|x|_∞ ≤ R/2`.
pub fn inner_box(u: &GridFunction) -> Vec<usize> {
    let half = 0.5 * u.half_width() + 1e-12 * u.half_width();
    (0..u.len())
        .filter(|&i| u.point(i).iter().all(|c| c.abs() <= half))
        .collect()
}

/// Legendre–Lewy dual `w(y) = max_x ⟨x,y⟩ − v(x)` over the grid nodes, with
/// `v = u + κ|x|²/2`, on a y-grid of the same shape whose half-width is the
/// largest `|y(x)|_∞` over the inner box (gradient map by central differences).
pub fn discrete_legendre(u: &GridFunction, kappa: f64) -> Result<GridFunction> {
    check_shear_convex(u, kappa)?;
    let ry = inner_box(u)
        .into_iter()
        .flat_map(|i| {
            let x = u.point(i);
            gradient_at(u, i)
                .into_iter()
                .zip(x)
                .map(move |(g, c)| (g + kappa * c).abs())
        })
        .fold(0.0, f64::max);
    conjugate(&sheared(u, kappa)?, ry)
}

/// Smooth Legendre–Lewy dual built from cubic interpolants of the nodal
/// gradient map and Hessian. The gradient map is monotone, so its inverse is
/// found by Newton iteration with the (positive definite) interpolated
/// `D²u + κI` as Jacobian.
#[derive(Debug, Clone)]
pub struct LegendreDual {
    pub kappa: f64,
    n: usize,
    u: NodalField,
    field: NodalField,
    origin_y: Vec<f64>,
    min_shear: f64,
    seeds: Vec<(Vec<f64>, Vec<f64>)>,
}

const INVERSE_MAX_ITER: usize = 60;

impl LegendreDual {
    pub fn new(u: &GridFunction, kappa: f64) -> Result<Self> {
        let min_shear = check_shear_convex(u, kappa)?;
        let n = u.dim();
        let last = u.shape() - 1;
        let comps = n + n * (n + 1) / 2;
        let field = NodalField::new(u, comps, 1, last - 1, |i| {
            let x = u.point(i);
            let mut v: Vec<f64> = gradient_at(u, i)
                .iter()
                .zip(&x)
                .map(|(g, c)| g + kappa * c)
                .collect();
            let m = hessian_at(u, i);
            for a in 0..n {
                for b in a..n {
                    v.push(m.get(a, b));
                }
            }
            v
        })?;
        let values = NodalField::new(u, 1, 0, last, |i| vec![u.values()[i]])?;
        let origin_y = field.eval(&vec![0.0; n])?[..n].to_vec();
        let seeds = (0..u.len())
            .filter(|&i| u.layer(i) > 0)
            .map(|i| {
                let x = u.point(i);
                let y = field.eval(&x).map(|v| v[..n].to_vec());
                y.map(|y| (x, y))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kappa,
            n,
            u: values,
            field,
            origin_y,
            min_shear,
            seeds,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest eigenvalue of `D²u + κI` over the interior nodes: the
    /// monotonicity constant of the gradient map.
    pub fn min_shear(&self) -> f64 {
        self.min_shear
    }

    pub fn origin_image(&self) -> &[f64] {
        &self.origin_y
    }

    fn split(&self, v: &[f64]) -> (Vec<f64>, SymmetricMatrix) {
        let n = self.n;
        let mut k = n;
        let mut m = SymmetricMatrix::zeros(n);
        for a in 0..n {
            for b in a..n {
                m.set(a, b, v[k]);
                k += 1;
            }
        }
        (v[..n].to_vec(), m)
    }

    pub fn gradient_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.split(&self.field.eval(x)?).0)
    }

    /// Interpolated discrete Hessian `D²u(x)`.
    pub fn hessian(&self, x: &[f64]) -> Result<SymmetricMatrix> {
        Ok(self.split(&self.field.eval(x)?).1)
    }

    /// `x(y)`: the preimage of `y` under the interpolated gradient map.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        let dist = |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut x = self
            .seeds
            .iter()
            .min_by(|a, b| dist(&a.1).total_cmp(&dist(&b.1)))
            .map(|s| s.0.clone())
            .ok_or_else(|| Error::Interpolation {
                point: y.to_vec(),
                reason: "empty grid".into(),
            })?;
        let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for _ in 0..INVERSE_MAX_ITER {
            let (yx, m) = self.split(&self.field.eval(&x)?);
            let r: Vec<f64> = yx.iter().zip(y).map(|(a, b)| a - b).collect();
            let jac = m.shift(self.kappa);
            let inv = jac.inverse_spd().map_err(|_| Error::Interpolation {
                point: y.to_vec(),
                reason: "interpolated D²u + κI lost definiteness".into(),
            })?;
            let dx = inv.mul_vec(&r);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi -= d;
            }
            let step = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if step <= 4.0 * f64::EPSILON * scale.max(1.0) {
                return Ok(x);
            }
        }
        // Converged to rounding if the last residual is at ulp level.
        let yx = self.gradient_map(&x)?;
        let res = yx
            .iter()
            .zip(y)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if res <= 1e-12 * scale {
            Ok(x)
        } else {
            Err(Error::Interpolation {
                point: y.to_vec(),
                reason: format!("inverse gradient map did not converge (residual {res:e})"),
            })
        }
    }

    /// `w(y) = ⟨x(y), y⟩ − u(x(y)) − κ|x(y)|²/2`.
    pub fn value(&self, y: &[f64]) -> Result<f64> {
        let x = self.inverse(y)?;
        let u = self.u.eval(&x)?[0];
        let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let xx: f64 = x.iter().map(|a| a * a).sum();
        Ok(xy - u - 0.5 * self.kappa * xx)
    }

    /// `D²w(y) = (D²u(x(y)) + κI)⁻¹`.
    pub fn dual_hessian(&self, y: &[f64]) -> Result<SymmetricMatrix> {
        let x = self.inverse(y)?;
        Ok(dual_hessian(&self.hessian(&x)?, self.kappa)?.n)
    }

    /// Largest y-cube centred at `y(0)` that the gradient map provably covers
    /// from the x-cube of half-width `r`: a map with monotonicity constant m
    /// sends the ball of radius r onto a set containing the ball of radius
    /// m·r about `y(0)`.
    pub fn covered_half_width(&self, r: f64) -> f64 {
        self.min_shear * r / (self.n as f64).sqrt()
    }
}

/// Smallest `⟨y(a) − y(b), a − b⟩ / |a − b|²` over all node pairs of the
/// inner box, with the gradient map from central differences. At least 1
/// when `D²u ≥ −K I` and κ = K + 1.
pub fn gradient_map_monotonicity(u: &GridFunction, kappa: f64) -> f64 {
    let nodes = inner_box(u);
    let pts: Vec<(Vec<f64>, Vec<f64>)> = nodes
        .iter()
        .map(|&i| {
            let x = u.point(i);
            let y = gradient_at(u, i)
                .iter()
                .zip(&x)
                .map(|(g, c)| g + kappa * c)
                .collect();
            (x, y)
        })
        .collect();
    (0..pts.len())
        .into_par_iter()
        .map(|p| {
            let (xa, ya) = &pts[p];
            pts[p + 1..]
                .iter()
                .map(|(xb, yb)| {
                    let mut dot = 0.0;
                    let mut dd = 0.0;
                    for a in 0..xa.len() {
                        let dx = xa[a] - xb[a];
                        dot += (ya[a] - yb[a]) * dx;
                        dd += dx * dx;
                    }
                    dot / dd
                })
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{onshell_diagonal, Bump, Profile};
    use crate::solver::{newton_solve, SolverOptions};

    #[test]
    fn quadratic_conjugate_is_closed_form() {
        let (a, kappa) = (1.5, 2.0);
        let u =
            GridFunction::from_fn(2, 33, 1.0, |x| 0.5 * a * (x[0] * x[0] + x[1] * x[1])).unwrap();
        let w = discrete_legendre(&u, kappa).unwrap();
        let h = u.spacing();
        let mut worst: f64 = 0.0;
        for i in 0..w.len() {
            let y = w.point(i);
            let exact = (y[0] * y[0] + y[1] * y[1]) / (2.0 * (a + kappa));
            worst = worst.max((w.values()[i] - exact).abs());
        }
        // The discrete sup misses the maximizer by at most half a cell per
        // axis, costing (a + κ)(h/2)²/2 each.
        assert!(
            worst <= 2.0 * 0.5 * (a + kappa) * (0.5 * h).powi(2) + 1e-12,
            "{worst}"
        );
    }

    #[test]
    fn biconjugate_returns_the_function_on_the_inner_box() {
        let errs: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&shape| {
                let u = GridFunction::from_fn(2, shape, 1.0, |x| {
                    0.6 * x[0] * x[0] + 0.1 * x[1].powi(4) + 0.2 * x[0] * x[1]
                })
                .unwrap();
                let kappa = 1.0;
                let w = discrete_legendre(&u, kappa).unwrap();
                let back = conjugate(&w, u.half_width()).unwrap();
                let v = sheared(&u, kappa).unwrap();
                inner_box(&u)
                    .iter()
                    .map(|&i| (back.values()[i] - v.values()[i]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[2] < errs[0] && errs[2] < 0.05, "{errs:?}");
    }

    #[test]
    fn concave_data_are_rejected() {
        let u = GridFunction::from_fn(2, 9, 1.0, |x| -(x[0] * x[0] + x[1] * x[1])).unwrap();
        assert!(matches!(
            discrete_legendre(&u, 1.0),
            Err(Error::NotShearConvex { .. })
        ));
        assert!(LegendreDual::new(&u, 1.0).is_err());
    }

    #[test]
    fn inverse_map_round_trips() {
        let b = Profile::quadratic(onshell_diagonal(2, 3.0))
            .with_bump(Bump::centered(2, 0.05))
            .sample(17, 1.0)
            .unwrap();
        let s = newton_solve(&b, &SolverOptions::default()).unwrap();
        let d = LegendreDual::new(&s.u, 2.0).unwrap();
        let x = [0.21, -0.37];
        let y = d.gradient_map(&x).unwrap();
        let back = d.inverse(&y).unwrap();
        assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
        assert!(gradient_map_monotonicity(&s.u, 2.0) >= 1.0);
    }

    #[test]
    fn dual_hessian_converges_at_second_order() {
        // At the origin, D²w(y(0)) from second differences of the smooth
        // dual against the nodal dual Hessian (D²u(0) + κI)⁻¹.
        let errs: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&shape| {
                let b = Profile::quadratic(onshell_diagonal(2, 2.0))
                    .with_bump(Bump::centered(2, 0.05))
                    .sample(shape, 1.0)
                    .unwrap();
                let s = newton_solve(&b, &SolverOptions::default()).unwrap();
                let kappa = 2.0;
                let d = LegendreDual::new(&s.u, kappa).unwrap();
                let y0 = d.origin_image().to_vec();
                let hy = 2.0 * s.u.spacing();
                let at = |da: f64, db: f64| d.value(&[y0[0] + da, y0[1] + db]).unwrap();
                let w00 = at(0.0, 0.0);
                let fd = SymmetricMatrix::from_fn(2, |a, b| match (a, b) {
                    (0, 0) => (at(hy, 0.0) - 2.0 * w00 + at(-hy, 0.0)) / (hy * hy),
                    (1, 1) => (at(0.0, hy) - 2.0 * w00 + at(0.0, -hy)) / (hy * hy),
                    _ => (at(hy, hy) - at(hy, -hy) - at(-hy, hy) + at(-hy, -hy)) / (4.0 * hy * hy),
                });
                let exact = d.dual_hessian(&y0).unwrap();
                fd.max_abs_diff(&exact)
            })
            .collect();
        let order = (errs[1] / errs[2]).log2();
        assert!(order > 1.5, "{errs:?}");
    }
}
