//! The pointwise Jacobi inequality for `b = ln λ₁` as a quadratic form in the
//! third-derivative slice `T_ij = u_ij1`, taken in the frame diagonalizing D²u.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::sigma2::{OnShellPoint, OnShellSampler};
use crate::spectral::{eigen_decompose, gap_tol, SymmetricMatrix};

/// Negative margins down to `−MARGIN_TOL · ‖T‖²` count as rounding.
pub const MARGIN_TOL: f64 = 1e-10;

/// Third derivatives `u_ij1` at an on-shell point, with the linearized
/// equation `Σ f_i T_ii = 0` built in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThirdSlice {
    t: SymmetricMatrix,
}

impl ThirdSlice {
    /// Projects the diagonal of `raw` orthogonally onto `{Σ f_i T_ii = 0}`.
    pub fn project(p: &OnShellPoint, raw: SymmetricMatrix) -> Result<Self> {
        let n = p.dim();
        if raw.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: raw.dim(),
            });
        }
        let f = p.f();
        let ff: f64 = f.iter().map(|v| v * v).sum();
        let fd: f64 = (0..n).map(|i| f[i] * raw.get(i, i)).sum();
        let mut t = raw;
        for i in 0..n {
            t.set(i, i, t.get(i, i) - fd / ff * f[i]);
        }
        Ok(Self { t })
    }

    /// Accepts `t` as-is if it satisfies the constraint to `1e-10` relative.
    pub fn checked(p: &OnShellPoint, t: SymmetricMatrix) -> Result<Self> {
        let slice = Self { t };
        let r = slice.constraint_residual(p);
        let scale = norm(p.f()) * slice.t.frobenius();
        if r.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) && r != 0.0 {
            return Err(Error::ConstraintViolated { residual: r });
        }
        Ok(slice)
    }

    pub fn matrix(&self) -> &SymmetricMatrix {
        &self.t
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.t.diagonal()
    }

    pub fn norm_sq(&self) -> f64 {
        self.t.frobenius_sq()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { t: self.t.scale(c) }
    }

    /// `Σ f_i T_ii`.
    pub fn constraint_residual(&self, p: &OnShellPoint) -> f64 {
        p.f()
            .iter()
            .enumerate()
            .map(|(i, fi)| fi * self.t.get(i, i))
            .sum()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Uniform entries in `[−scale, scale]`, diagonal projected onto the constraint.
pub fn sample_third_slice<R: Rng + ?Sized>(
    p: &OnShellPoint,
    scale: f64,
    rng: &mut R,
) -> ThirdSlice {
    let n = p.dim();
    let raw = SymmetricMatrix::from_fn(n, |_, _| {
        if scale == 0.0 {
            0.0
        } else {
            rng.random_range(-scale..=scale)
        }
    });
    ThirdSlice::project(p, raw).expect("dimensions agree by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiBreakdown {
    pub term_i: f64,
    pub term_ii: f64,
    pub term_iii: f64,
    pub grad_sq: f64,
    pub epsilon: f64,
    pub margin: f64,
}

impl JacobiBreakdown {
    /// `Δ_F b` for `b = ln λ₁`.
    pub fn laplacian(&self) -> f64 {
        self.term_i + self.term_ii + self.term_iii
    }

    /// Margin of the coefficient-one form for `b̃ = ε ln λ₁`:
    /// `Δ_F b̃ − |∇_F b̃|² = ε (Δ_F b − ε |∇_F b|²)`.
    pub fn rescaled_margin(&self) -> f64 {
        let lap = self.epsilon * self.laplacian();
        let grad = self.epsilon * self.epsilon * self.grad_sq;
        lap - grad
    }
}

fn check_simple_top(p: &OnShellPoint) -> Result<()> {
    let l = p.lambda();
    let tol = gap_tol(l[0]);
    let gap = l[0] - l[1];
    if gap <= tol {
        return Err(Error::DegenerateTop { gap, tol });
    }
    Ok(())
}

/// Evaluates `Δ_F ln λ₁` split into its diagonal (I), `u_11i` (II) and
/// `u_ij1`, `i, j > 1` (III) groups, together with `|∇_F ln λ₁|²`.
///
/// The `u_11i²` coefficient is `2b′ + 2b′ f₁/(λ₁ − λ_i) + b″ f_i`: the middle
/// term comes from `F₁₁ (∂₁ u_1i)²` in the second derivative of λ₁, so it
/// carries `f₁`.
pub fn jacobi_breakdown(p: &OnShellPoint, t: &ThirdSlice, epsilon: f64) -> Result<JacobiBreakdown> {
    check_simple_top(p)?;
    let n = p.dim();
    let l = p.lambda();
    let f = p.f();
    let m = t.matrix();
    if m.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: m.dim(),
        });
    }
    let l1 = l[0];
    let b1 = 1.0 / l1;
    let b2 = -1.0 / (l1 * l1);

    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..i {
            cross -= 2.0 * m.get(i, i) * m.get(j, j);
        }
    }
    let diag_weighted: f64 = (1..n)
        .map(|k| 2.0 * f[k] / (l1 - l[k]) * m.get(k, k).powi(2))
        .sum();
    let term_i = b1 * (cross + diag_weighted) + b2 * f[0] * m.get(0, 0).powi(2);

    let term_ii = (1..n)
        .map(|i| {
            let c = 2.0 * b1 + 2.0 * b1 * f[0] / (l1 - l[i]) + b2 * f[i];
            c * m.get(0, i).powi(2)
        })
        .sum();

    let mut term_iii = 0.0;
    for i in 1..n {
        for j in 1..i {
            let c = 2.0 * b1 * (1.0 + f[i] / (l1 - l[j]) + f[j] / (l1 - l[i]));
            term_iii += c * m.get(i, j).powi(2);
        }
    }

    let grad_sq = b1 * b1 * (0..n).map(|k| f[k] * m.get(0, k).powi(2)).sum::<f64>();
    let margin = term_i + term_ii + term_iii - epsilon * grad_sq;
    Ok(JacobiBreakdown {
        term_i,
        term_ii,
        term_iii,
        grad_sq,
        epsilon,
        margin,
    })
}

/// Both sides of the rewrite of `2Σ_{i>j} −t_i t_j` that uses the squared
/// linearized equation: `((|λ|² + 2)|t|² − ⟨λ, t⟩²)/σ₁²`.
pub fn positive_balance_check(p: &OnShellPoint, t: &ThirdSlice) -> Result<(f64, f64)> {
    let r = t.constraint_residual(p);
    let d = t.diagonal();
    let scale = norm(p.f()) * norm(&d);
    if r.abs() > 1e-10 * scale && r != 0.0 {
        return Err(Error::ConstraintViolated { residual: r });
    }
    let n = d.len();
    let mut lhs = 0.0;
    for i in 0..n {
        for j in 0..i {
            lhs -= 2.0 * d[i] * d[j];
        }
    }
    let l = p.lambda();
    let t_sq: f64 = d.iter().map(|v| v * v).sum();
    let lt: f64 = l.iter().zip(&d).map(|(a, b)| a * b).sum();
    let s1 = p.sigma1();
    let rhs = ((p.norm_sq() + 2.0) * t_sq - lt * lt) / (s1 * s1);
    Ok((lhs, rhs))
}

/// Exact minimum of `margin(T)/‖T‖²` over all admissible slices at `p`,
/// together with a minimizing slice of unit Frobenius norm.
///
/// The form splits into three independent blocks: the constrained diagonal,
/// the `T_1i` entries and the `T_ij`, `i, j > 1` entries.
pub fn worst_direction(p: &OnShellPoint, epsilon: f64) -> Result<(f64, ThirdSlice)> {
    check_simple_top(p)?;
    let n = p.dim();
    let l = p.lambda();
    let f = p.f();
    let l1 = l[0];
    let b1 = 1.0 / l1;
    let b2 = -1.0 / (l1 * l1);

    // Diagonal block restricted to f⊥.
    let a = SymmetricMatrix::from_fn(n, |i, j| {
        if i != j {
            -b1
        } else if i == 0 {
            b2 * f[0] - epsilon * b1 * b1 * f[0]
        } else {
            b1 * 2.0 * f[i] / (l1 - l[i])
        }
    });
    let q = complement_basis(f);
    let m = n - 1;
    let restricted = SymmetricMatrix::from_fn(m, |i, j| {
        let qi: Vec<f64> = (0..n).map(|r| q[r * m + i]).collect();
        let qj: Vec<f64> = (0..n).map(|r| q[r * m + j]).collect();
        a.mul_vec(&qj).iter().zip(&qi).map(|(x, y)| x * y).sum()
    });
    let spec = eigen_decompose(&restricted)?;
    let mut best = spec.lambda[m - 1];
    let z = spec.eigenvector(m - 1);
    let mut best_t = SymmetricMatrix::from_diagonal(
        &(0..n)
            .map(|r| (0..m).map(|c| q[r * m + c] * z[c]).sum())
            .collect::<Vec<f64>>(),
    );

    let off = 1.0 / 2f64.sqrt();
    for i in 1..n {
        let c = 2.0 * b1 + 2.0 * b1 * f[0] / (l1 - l[i]) + b2 * f[i] - epsilon * b1 * b1 * f[i];
        if c / 2.0 < best {
            best = c / 2.0;
            best_t = SymmetricMatrix::zeros(n);
            best_t.set(0, i, off);
        }
    }
    for i in 1..n {
        for j in 1..i {
            let c = 2.0 * b1 * (1.0 + f[i] / (l1 - l[j]) + f[j] / (l1 - l[i]));
            if c / 2.0 < best {
                best = c / 2.0;
                best_t = SymmetricMatrix::zeros(n);
                best_t.set(i, j, off);
            }
        }
    }
    Ok((best, ThirdSlice { t: best_t }))
}

/// Orthonormal basis of the complement of `v`, row-major `n × (n−1)`, from
/// the Householder reflection taking `v/|v|` to `±e₁`.
fn complement_basis(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let nv = norm(v);
    let mut w: Vec<f64> = v.iter().map(|x| x / nv).collect();
    let sign = if w[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += sign;
    let nw = norm(&w);
    for x in &mut w {
        *x /= nw;
    }
    let mut q = vec![0.0; n * (n - 1)];
    for r in 0..n {
        for c in 1..n {
            let id = if r == c { 1.0 } else { 0.0 };
            q[r * (n - 1) + (c - 1)] = id - 2.0 * w[r] * w[c];
        }
    }
    q
}

/// Geometric grid `start, 1.5·start, …` capped by (and ending at) `top`.
pub fn threshold_grid(start: f64, top: f64, factor: f64) -> Vec<f64> {
    let mut g = Vec::new();
    let mut x = start;
    while x < top {
        g.push(x);
        x *= factor;
    }
    g.push(top);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// Empirical Λ(n, K).
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// `(λ₁, worst normalized margin)` for every grid point evaluated.
    pub evaluated: Vec<(f64, f64)>,
    pub budget: usize,
}

pub const THRESHOLD_TOP: f64 = 1e6;
pub const THRESHOLD_FACTOR: f64 = 1.5;

/// Worst `margin/‖T‖²` over `budget` draws with λ₁ pinned at `lambda1`. Each
/// draw contributes a random slice and the exact worst slice for its point.
/// `−∞` if no admissible point exists at that λ₁.
pub fn worst_margin_at(
    n: usize,
    k: f64,
    epsilon: f64,
    lambda1: f64,
    budget: usize,
    seed: u64,
) -> Result<f64> {
    let sampler = OnShellSampler::new(n, k, (lambda1, lambda1))?;
    let worst = (0..budget as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let p = match sampler.sample(&mut rng) {
                Ok(p) => p,
                Err(_) => return f64::NEG_INFINITY,
            };
            let t = sample_third_slice(&p, 1.0, &mut rng);
            let random = match jacobi_breakdown(&p, &t, epsilon) {
                Ok(b) => b.margin / t.norm_sq(),
                Err(Error::DegenerateTop { .. }) => return f64::INFINITY,
                Err(_) => return f64::NEG_INFINITY,
            };
            let exact = worst_direction(&p, epsilon)
                .map(|(m, _)| m)
                .unwrap_or(f64::NEG_INFINITY);
            random.min(exact)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(worst)
}

/// Smallest grid λ₁ from which the Jacobi margin is non-negative (within
/// tolerance) at every grid point above, assuming monotonicity and bisecting
/// over grid indices.
pub fn find_lambda_threshold(
    n: usize,
    k: f64,
    epsilon: f64,
    budget: usize,
    seed: u64,
) -> Result<ThresholdResult> {
    if budget < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} below 1e4 samples per grid point"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 1)"
        )));
    }
    let start = ((1.0 + epsilon) / (1.0 - epsilon) * k).max(1.0);
    let grid = threshold_grid(start, THRESHOLD_TOP, THRESHOLD_FACTOR);
    let mut evaluated = Vec::new();
    let mut passes = |idx: usize| -> Result<bool> {
        let w = worst_margin_at(
            n,
            k,
            epsilon,
            grid[idx],
            budget,
            derive_seed(seed, idx as u64),
        )?;
        evaluated.push((grid[idx], w));
        Ok(w >= -MARGIN_TOL)
    };
    let top = grid.len() - 1;
    if !passes(top)? {
        return Err(Error::NotFound);
    }
    // Invariant: grid[hi] passes, grid[lo] fails (lo = None means untested below 0).
    let mut hi = top;
    let mut lo: Option<usize> = None;
    if passes(0)? {
        hi = 0;
    } else {
        lo = Some(0);
    }
    while let Some(l) = lo {
        if hi - l <= 1 {
            break;
        }
        let mid = (l + hi) / 2;
        if passes(mid)? {
            hi = mid;
        } else {
            lo = Some(mid);
        }
    }
    evaluated.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ThresholdResult {
        lambda: grid[hi],
        grid,
        evaluated,
        budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn point(l: &[f64], k: f64) -> OnShellPoint {
        OnShellPoint::new(l.to_vec(), k).unwrap()
    }

    #[test]
    fn zero_scale_gives_zero_slice() {
        let p = point(&[3.0, 1.0, -0.5], 1.0);
        let t = sample_third_slice(&p, 0.0, &mut stream_rng(1, 0));
        assert_eq!(t.matrix(), &SymmetricMatrix::zeros(3));
        let b = jacobi_breakdown(&p, &t, 0.25).unwrap();
        assert_eq!(b.margin, 0.0);
        assert_eq!(b.laplacian(), 0.0);
        assert_eq!(b.grad_sq, 0.0);
    }

    #[test]
    fn projection_lands_on_kernel_direction() {
        let p = OnShellPoint::from_top(2.0, &[], 0.0).unwrap();
        let raw = SymmetricMatrix::from_diagonal(&[1.0, 0.0]);
        let t = ThirdSlice::project(&p, raw).unwrap();
        let d = t.diagonal();
        // The kernel of 0.5 t₁ + 2 t₂ = 0 is spanned by (4, −1).
        assert!((d[0] / d[1] + 4.0).abs() < 1e-14);
        assert!(t.constraint_residual(&p).abs() < 1e-15);
    }

    #[test]
    fn balance_example_in_two_dimensions() {
        let p = OnShellPoint::from_top(2.0, &[], 0.0).unwrap();
        let t = ThirdSlice::checked(&p, SymmetricMatrix::from_diagonal(&[4.0, -1.0])).unwrap();
        let (lhs, rhs) = positive_balance_check(&p, &t).unwrap();
        assert_eq!(lhs, 8.0);
        assert!((rhs - 8.0).abs() < 1e-14);

        let b = jacobi_breakdown(&p, &t, 0.0).unwrap();
        assert_eq!(b.term_ii, 0.0);
        assert_eq!(b.term_iii, 0.0);
        // b′[8 + 2·2/1.5·1] + b″·0.5·16 with b′ = 1/2, b″ = −1/4.
        let expected = 0.5 * (8.0 + 4.0 / 1.5) - 0.25 * 0.5 * 16.0;
        assert!((b.term_i - expected).abs() < 1e-14);
        assert_eq!(b.margin, b.term_i);
    }

    #[test]
    fn balance_rejects_unconstrained_slice() {
        let p = OnShellPoint::from_top(2.0, &[], 0.0).unwrap();
        let t = ThirdSlice {
            t: SymmetricMatrix::from_diagonal(&[1.0, 1.0]),
        };
        assert!(matches!(
            positive_balance_check(&p, &t),
            Err(Error::ConstraintViolated { .. })
        ));
        assert!(ThirdSlice::checked(&p, SymmetricMatrix::from_diagonal(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn degenerate_top_rejected() {
        let p = point(&[1.0, 1.0], 0.0);
        let t = ThirdSlice::project(&p, SymmetricMatrix::identity(2)).unwrap();
        assert!(matches!(
            jacobi_breakdown(&p, &t, 0.25),
            Err(Error::DegenerateTop { .. })
        ));
    }

    #[test]
    fn worst_direction_attains_the_minimum() {
        let p = point(&[3.0, 1.0, -0.5], 1.0);
        let (best, t) = worst_direction(&p, 0.25).unwrap();
        assert!((t.norm_sq() - 1.0).abs() < 1e-12);
        assert!(t.constraint_residual(&p).abs() < 1e-12);
        let b = jacobi_breakdown(&p, &t, 0.25).unwrap();
        assert!((b.margin - best).abs() < 1e-12);
        let mut rng = stream_rng(5, 0);
        for _ in 0..2000 {
            let t = sample_third_slice(&p, 1.0, &mut rng);
            let m = jacobi_breakdown(&p, &t, 0.25).unwrap().margin / t.norm_sq();
            assert!(m >= best - 1e-12);
        }
    }

    #[test]
    fn rescaled_margin_is_coefficient_one_form() {
        let p = OnShellPoint::from_tail(&[0.4, -0.3], 0.5).unwrap();
        let t = sample_third_slice(&p, 1.0, &mut stream_rng(2, 0));
        let b = jacobi_breakdown(&p, &t, 0.25).unwrap();
        assert!((b.rescaled_margin() - 0.25 * b.margin).abs() < 1e-14);
        // Same sign: Δ_F b ≥ ¼|∇_F b|² ⇔ Δ_F(b/4) ≥ |∇_F(b/4)|².
        assert_eq!(b.margin >= 0.0, b.rescaled_margin() >= 0.0);
    }

    #[test]
    fn grid_layout() {
        let g = threshold_grid(1.0, 10.0, 1.5);
        assert_eq!(g[0], 1.0);
        assert_eq!(*g.last().unwrap(), 10.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn small_budget_rejected() {
        assert!(matches!(
            find_lambda_threshold(3, 1.0, 0.25, 10, 1),
            Err(Error::InvalidArgument(_))
        ));
    }
}
