//! The σ₂ operator on its positive (Δu > 0) branch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::spectral::{sigma2_gradient, sigma_k, SymmetricMatrix, MAX_DIM};

/// `½[(tr M)² − |M|²] − 1`.
pub fn residual(m: &SymmetricMatrix) -> f64 {
    let tr = m.trace();
    0.5 * (tr * tr - m.frobenius_sq()) - 1.0
}

/// Matrix of partial derivatives of σ₂ in the entries of `M`: `(tr M) I − M`.
pub fn linearized_matrix(m: &SymmetricMatrix) -> SymmetricMatrix {
    m.scale(-1.0).shift(m.trace())
}

/// Bound on `|λ_k|`, `k ≥ 2`, for on-shell points with `λ_n ≥ −K`.
///
/// For `n = 2` the general constant degenerates; there `λ₂ = 1/λ₁ ≤ 1` on the
/// positive branch with `λ₁ ≥ λ₂`, so the bound is 1.
pub fn small_eig_bound(n: usize, k: f64) -> f64 {
    if n <= 2 {
        return 1.0;
    }
    (n as f64 + 1.0) * (2.0 + 2.0 * (n as f64 - 2.0) * k)
}

/// Maclaurin lower bound `√(2n/(n−1))` for σ₁ on shell.
pub fn sigma1_lower_bound(n: usize) -> f64 {
    (2.0 * n as f64 / (n as f64 - 1.0)).sqrt()
}

fn check_dim(n: usize) -> Result<()> {
    if (2..=MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(Error::Dimension(n))
    }
}

/// Ordered eigenvalues on `σ₂ = 1`, positive branch, with `λ_n ≥ −K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnShellPoint {
    k: f64,
    lambda: Vec<f64>,
    f: Vec<f64>,
}

impl OnShellPoint {
    /// Validates every invariant. `lambda` must already be sorted descending.
    pub fn new(lambda: Vec<f64>, k: f64) -> Result<Self> {
        let n = lambda.len();
        check_dim(n)?;
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "semiconvexity constant {k}"
            )));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::OffShell("non-finite eigenvalue".into()));
        }
        if lambda.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::OffShell("eigenvalues not sorted descending".into()));
        }
        let s2 = sigma_k(&lambda, 2);
        // Absolute 1e-10 on unit-size terms, scaled by the magnitude of the
        // cancelling pairwise products.
        let magnitude: f64 = lambda[0].abs() * lambda[1..].iter().map(|v| v.abs()).sum::<f64>();
        if (s2 - 1.0).abs() > 1e-10 * magnitude.max(1.0) {
            return Err(Error::OffShell(format!("sigma2 = {s2}")));
        }
        let s1: f64 = lambda.iter().sum();
        if !(s1 > 0.0) {
            return Err(Error::OffShell("negative branch".into()));
        }
        if lambda[n - 1] < -k {
            return Err(Error::OffShell(format!(
                "lambda_min = {} < -K = {}",
                lambda[n - 1],
                -k
            )));
        }
        let f = sigma2_gradient(&lambda);
        if f.iter().any(|&fi| !(fi > 0.0)) {
            return Err(Error::OffShell("linearization not positive".into()));
        }
        if s1 < sigma1_lower_bound(n) * (1.0 - 1e-12) {
            return Err(Error::OffShell(format!(
                "sigma1 = {s1} below Maclaurin bound"
            )));
        }
        Ok(Self { k, lambda, f })
    }

    /// Prescribes the top eigenvalue and all but the last of the others; the
    /// last follows in closed form since σ₂ is affine in each argument.
    pub fn from_top(lambda1: f64, middle: &[f64], k: f64) -> Result<Self> {
        let mut head = Vec::with_capacity(middle.len() + 2);
        head.push(lambda1);
        head.extend_from_slice(middle);
        let s1 = sigma_k(&head, 1);
        if !(s1 > 0.0) {
            return Err(Error::OffShell("cannot solve for lambda_n".into()));
        }
        let last = (1.0 - sigma_k(&head, 2)) / s1;
        if head
            .iter()
            .chain(std::iter::once(&last))
            .any(|&v| v > lambda1)
        {
            return Err(Error::OffShell(
                "prescribed lambda1 is not the top eigenvalue".into(),
            ));
        }
        head.push(last);
        head[1..].sort_by(|a, b| b.total_cmp(a));
        Self::new(head, k)
    }

    /// Prescribes `λ' = (λ₂, …, λ_n)` and solves `λ₁ = (1 − σ₂(λ'))/σ₁(λ')`.
    pub fn from_tail(tail: &[f64], k: f64) -> Result<Self> {
        let s1 = sigma_k(tail, 1);
        if !(s1 > 0.0) {
            return Err(Error::OffShell("cannot solve for lambda1".into()));
        }
        let l1 = (1.0 - sigma_k(tail, 2)) / s1;
        let mut lambda = Vec::with_capacity(tail.len() + 1);
        lambda.push(l1);
        lambda.extend_from_slice(tail);
        Self::new(lambda, k)
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn semiconvexity(&self) -> f64 {
        self.k
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda[0]
    }

    pub fn tail(&self) -> &[f64] {
        &self.lambda[1..]
    }

    /// `f_i = σ₁ − λ_i`.
    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn sigma1(&self) -> f64 {
        self.lambda.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.lambda.iter().map(|v| v * v).sum()
    }

    pub fn hessian(&self) -> SymmetricMatrix {
        SymmetricMatrix::from_diagonal(&self.lambda)
    }
}

/// Draws on-shell semiconvex points with the top eigenvalue in a range.
#[derive(Debug, Clone)]
pub struct OnShellSampler {
    pub n: usize,
    pub k: f64,
    pub lambda1_range: (f64, f64),
    /// Draw `λ₁` log-uniformly instead of uniformly.
    pub log_uniform: bool,
    /// Upper end of the box for the middle eigenvalues.
    pub middle_upper: f64,
    pub max_tries: usize,
}

impl OnShellSampler {
    pub fn new(n: usize, k: f64, lambda1_range: (f64, f64)) -> Result<Self> {
        check_dim(n)?;
        let (lo, hi) = lambda1_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda1 range [{lo}, {hi}] must lie in (0, inf)"
            )));
        }
        if !(k >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "semiconvexity constant {k}"
            )));
        }
        Ok(Self {
            n,
            k,
            lambda1_range,
            log_uniform: false,
            middle_upper: small_eig_bound(n, k),
            max_tries: 10_000,
        })
    }

    pub fn log_uniform(mut self, yes: bool) -> Self {
        self.log_uniform = yes;
        self
    }

    pub fn middle_upper(mut self, upper: f64) -> Self {
        self.middle_upper = upper;
        self
    }

    fn draw_lambda1<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.lambda1_range;
        if hi == lo {
            return lo;
        }
        if self.log_uniform {
            (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
        } else {
            rng.random_range(lo..=hi)
        }
    }

    /// Middle eigenvalues live in `[−K, middle_upper]`. A plain uniform box
    /// almost never lands on the feasible set once λ₁ is large (there the
    /// middle values must sum to roughly `K`), so draws mix the uniform box
    /// with shared and per-coordinate log-scale offsets from `−K`.
    fn draw_middle<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        let width = self.middle_upper + self.k;
        let mode = rng.random_range(0..3u8);
        let shared = width * 10f64.powf(-9.0 * rng.random::<f64>());
        for _ in 0..self.n.saturating_sub(2) {
            let offset = match mode {
                0 => width * rng.random::<f64>(),
                1 => shared * rng.random::<f64>(),
                _ => width * 10f64.powf(-9.0 * rng.random::<f64>()),
            };
            out.push(-self.k + offset);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<OnShellPoint> {
        let mut middle = Vec::with_capacity(self.n);
        for _ in 0..self.max_tries {
            let l1 = self.draw_lambda1(rng);
            self.draw_middle(rng, &mut middle);
            if let Ok(p) = OnShellPoint::from_top(l1, &middle, self.k) {
                return Ok(p);
            }
        }
        Err(Error::ExhaustedRejection {
            tries: self.max_tries,
        })
    }
}

/// Deterministic single draw for a seed.
pub fn sample_onshell(
    n: usize,
    k: f64,
    lambda1_range: (f64, f64),
    seed: u64,
) -> Result<OnShellPoint> {
    OnShellSampler::new(n, k, lambda1_range)?.sample(&mut stream_rng(seed, 0))
}

/// Quantitative ellipticity bounds of the linearization at an on-shell point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub f: Vec<f64>,
    pub lower_first: f64,
    pub upper_first: f64,
    pub lower_rest: f64,
    pub upper_rest: f64,
    /// Per inequality: `[f₁ lower, f₁ upper, f₂ lower, f₂ upper, …]`.
    pub pass: Vec<bool>,
    pub worst_slack: f64,
}

impl EllipticityReport {
    pub fn all_pass(&self) -> bool {
        self.pass.iter().all(|&p| p)
    }
}

pub fn ellipticity_bounds(p: &OnShellPoint) -> EllipticityReport {
    let n = p.dim() as f64;
    let l1 = p.lambda1();
    let lower_first = 2.0 / ((n + 1.0) * l1);
    let upper_first = (n - 1.0) * l1;
    let lower_rest = (2f64.sqrt() - 1.0) * l1;
    let upper_rest = (n - 1.0) * l1;
    let mut pass = Vec::with_capacity(2 * p.dim());
    let mut worst = f64::INFINITY;
    let mut record = |slack: f64, scale: f64| {
        worst = worst.min(slack);
        pass.push(slack >= -1e-12 * scale.abs().max(1.0));
    };
    for (i, &fi) in p.f().iter().enumerate() {
        let (lo, hi) = if i == 0 {
            (lower_first, upper_first)
        } else {
            (lower_rest, upper_rest)
        };
        record(fi - lo, lo);
        record(hi - fi, hi);
    }
    EllipticityReport {
        f: p.f().to_vec(),
        lower_first,
        upper_first,
        lower_rest,
        upper_rest,
        pass,
        worst_slack: worst,
    }
}

/// `‖DF‖ⁿ / det DF = (σ₁ − λ_n)ⁿ / Π f_i`.
pub fn weighted_ellipticity_ratio(p: &OnShellPoint) -> f64 {
    let n = p.dim();
    let top = p.sigma1() - p.lambda()[n - 1];
    let det: f64 = p.f().iter().product();
    top.powi(n as i32) / det
}

/// Constant `C(n)` with `‖DF‖ⁿ/det DF ≤ C(n) λ₁²` obtained by combining the
/// ellipticity bounds: `(n−1)ⁿ (n+1) / (2 (√2−1)ⁿ⁻¹)`.
pub fn weighted_ratio_bound_constant(n: usize) -> f64 {
    let nf = n as f64;
    (nf - 1.0).powi(n as i32) * (nf + 1.0) / (2.0 * (2f64.sqrt() - 1.0).powi(n as i32 - 1))
}

/// The two forms of `f₁` and its upper bound:
/// `(σ₁ − λ₁, (|λ'|² + 2)/(σ₁ + λ₁), (½|λ'|² + 1)/λ₁)`.
pub fn first_coefficient_identity(p: &OnShellPoint) -> (f64, f64, f64) {
    let tail_sq: f64 = p.tail().iter().map(|v| v * v).sum();
    let l1 = p.lambda1();
    (
        p.f()[0],
        (tail_sq + 2.0) / (p.sigma1() + l1),
        (0.5 * tail_sq + 1.0) / l1,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_examples() {
        assert_eq!(residual(&SymmetricMatrix::from_diagonal(&[1.0, 1.0])), 0.0);
        assert_eq!(
            residual(&SymmetricMatrix::from_diagonal(&[3.0, 1.0, -0.5])),
            0.0
        );
        assert_eq!(residual(&SymmetricMatrix::zeros(3)), -1.0);
    }

    #[test]
    fn linearized_matrix_examples() {
        let m = SymmetricMatrix::from_diagonal(&[1.0, 1.0]);
        assert_eq!(
            linearized_matrix(&m),
            SymmetricMatrix::from_diagonal(&[1.0, 1.0])
        );
        let m = SymmetricMatrix::from_diagonal(&[3.0, 1.0, -0.5]);
        assert_eq!(
            linearized_matrix(&m),
            SymmetricMatrix::from_diagonal(&[0.5, 2.5, 4.0])
        );
        let mut m = SymmetricMatrix::from_diagonal(&[2.0, 1.0]);
        m.set(0, 1, 0.7);
        assert_eq!(linearized_matrix(&m).get(0, 1), -0.7);
    }

    #[test]
    fn small_eig_bound_values() {
        assert_eq!(small_eig_bound(3, 1.0), 16.0);
        assert_eq!(small_eig_bound(3, 0.0), 8.0);
        assert_eq!(small_eig_bound(5, 1.0), 6.0 * 8.0);
        assert_eq!(small_eig_bound(2, 3.0), 1.0);
    }

    #[test]
    fn from_tail_solves_for_top() {
        let p = OnShellPoint::from_tail(&[1.0, -0.5], 0.5).unwrap();
        assert_eq!(p.lambda(), &[3.0, 1.0, -0.5]);
        // λ₃ = −0.5 violates K = 0.
        assert!(matches!(
            OnShellPoint::from_tail(&[1.0, -0.5], 0.0),
            Err(Error::OffShell(_))
        ));
    }

    #[test]
    fn from_top_in_two_dimensions() {
        let p = OnShellPoint::from_top(2.0, &[], 0.0).unwrap();
        assert_eq!(p.lambda(), &[2.0, 0.5]);
        assert!(OnShellPoint::from_top(0.5, &[], 0.0).is_err());
    }

    #[test]
    fn invariants_rejected() {
        assert!(OnShellPoint::new(vec![1.0, 2.0], 0.0).is_err());
        assert!(OnShellPoint::new(vec![2.0, 2.0], 0.0).is_err());
        assert!(OnShellPoint::new(vec![-1.0, -1.0], 5.0).is_err());
        assert!(OnShellPoint::new(vec![1.0; 9], 0.0).is_err());
    }

    #[test]
    fn ellipticity_examples() {
        let p = OnShellPoint::new(vec![3.0, 1.0, -0.5], 1.0).unwrap();
        let r = ellipticity_bounds(&p);
        assert!(r.all_pass());
        assert_eq!(r.lower_first, 2.0 / 12.0);
        assert_eq!(r.upper_first, 6.0);
        assert!((r.lower_rest - (2f64.sqrt() - 1.0) * 3.0).abs() < 1e-15);

        let p = OnShellPoint::new(vec![1.0, 1.0], 0.0).unwrap();
        let r = ellipticity_bounds(&p);
        assert!(r.all_pass());
        assert_eq!(r.lower_first, 2.0 / 3.0);
        assert_eq!(r.worst_slack, 0.0);
    }

    #[test]
    fn weighted_ratio_examples() {
        let p = OnShellPoint::new(vec![1.0, 1.0], 0.0).unwrap();
        assert_eq!(weighted_ellipticity_ratio(&p), 1.0);
        let p = OnShellPoint::new(vec![3.0, 1.0, -0.5], 1.0).unwrap();
        assert!((weighted_ellipticity_ratio(&p) - 12.8).abs() < 1e-12);
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = sample_onshell(4, 1.0, (2.0, 50.0), 11).unwrap();
        let b = sample_onshell(4, 1.0, (2.0, 50.0), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_range_exhausts() {
        // λ₁ below the isotropic value 1/√3 cannot be the top of an on-shell point.
        let mut s = OnShellSampler::new(3, 0.0, (0.1, 0.2)).unwrap();
        s.max_tries = 100;
        let mut rng = stream_rng(1, 0);
        assert_eq!(
            s.sample(&mut rng),
            Err(Error::ExhaustedRejection { tries: 100 })
        );
    }

    #[test]
    fn bad_range_rejected() {
        assert!(OnShellSampler::new(3, 0.0, (-1.0, 2.0)).is_err());
        assert!(OnShellSampler::new(1, 0.0, (1.0, 2.0)).is_err());
    }
}
