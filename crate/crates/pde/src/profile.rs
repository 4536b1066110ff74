//! Closed-form boundary data: diagonal quadratics, optionally perturbed by a
//! Gaussian bump. Both pieces scale like `R²·p(x/R)`, so a family at half-width
//! R is the `v(x) = u(Rx)/R²` rescaling of the family at half-width 1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// `A·R²·exp(−|x/R − c|²/(2w²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

impl Bump {
    pub const DEFAULT_WIDTH: f64 = 0.5;

    pub fn centered(n: usize, amplitude: f64) -> Self {
        Self {
            amplitude,
            center: vec![0.0; n],
            width: Self::DEFAULT_WIDTH,
        }
    }

    /// Seeded variant: centre uniform in `[−spread, spread]ⁿ`.
    pub fn random<R: Rng + ?Sized>(n: usize, amplitude: f64, spread: f64, rng: &mut R) -> Self {
        Self {
            amplitude,
            center: (0..n).map(|_| rng.random_range(-spread..=spread)).collect(),
            width: Self::DEFAULT_WIDTH,
        }
    }

    pub fn value(&self, x: &[f64], r: f64) -> f64 {
        let d2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(xi, c)| (xi / r - c).powi(2))
            .sum();
        self.amplitude * r * r * (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

/// `½ Σ dₐ xₐ² + bump(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub diagonal: Vec<f64>,
    pub bump: Option<Bump>,
}

impl Profile {
    pub fn quadratic(diagonal: Vec<f64>) -> Self {
        Self {
            diagonal,
            bump: None,
        }
    }

    pub fn with_bump(mut self, bump: Bump) -> Self {
        self.bump = Some(bump);
        self
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn value(&self, x: &[f64], r: f64) -> f64 {
        let q: f64 = self
            .diagonal
            .iter()
            .zip(x)
            .map(|(d, xi)| 0.5 * d * xi * xi)
            .sum();
        q + self.bump.as_ref().map_or(0.0, |b| b.value(x, r))
    }

    /// The profile sampled on every node of a grid; the solver keeps the
    /// boundary layer and discards the rest.
    pub fn sample(&self, shape: usize, r: f64) -> Result<GridFunction> {
        GridFunction::from_fn(self.dim(), shape, r, |x| self.value(x, r))
    }

    /// Parses the command-line presets
    /// `quadratic:d1,d2,…` and `bump:A,d1,d2,…`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, args) = spec.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("boundary preset `{spec}` lacks `kind:`"))
        })?;
        let nums = args
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("boundary preset `{spec}`: {e}")))?;
        match kind {
            "quadratic" => Ok(Self::quadratic(nums)),
            "bump" if nums.len() >= 3 => {
                let n = nums.len() - 1;
                Ok(Self::quadratic(nums[1..].to_vec()).with_bump(Bump::centered(n, nums[0])))
            }
            _ => Err(Error::InvalidArgument(format!(
                "unknown boundary preset `{spec}`"
            ))),
        }
    }
}

/// On-shell diagonal `(t, s, …, s)` with `σ₂ = 1`. For `n = 2` this is
/// `(t, 1/t)`; for `n = 3` it is `(t, s, s)` with `s = 1/(t + √(t²+1))`.
pub fn onshell_diagonal(n: usize, t: f64) -> Vec<f64> {
    let m = (n - 1) as f64;
    // Root of C(n−1,2)s² + (n−1)ts − 1 = 0 in cancellation-free form.
    let s = 2.0 / (m * t + (m * m * t * t + 2.0 * m * (m - 1.0)).sqrt());
    let mut d = vec![s; n];
    d[0] = t;
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use sigma2_core::spectral::sigma_k;

    #[test]
    fn onshell_diagonals_solve_the_equation() {
        for n in 2..=5 {
            for &t in &[1.0, 3.0, 50.0, 1e4] {
                let d = onshell_diagonal(n, t);
                assert!((sigma_k(&d, 2) - 1.0).abs() < 1e-12, "n={n} t={t}");
            }
        }
        assert!((onshell_diagonal(2, 4.0)[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bump_scales_with_the_box() {
        let b = Bump::centered(2, 0.05);
        let x = [0.3, -0.2];
        let scaled = [0.6, -0.4];
        assert!((b.value(&scaled, 2.0) - 4.0 * b.value(&x, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn presets_parse() {
        let p = Profile::parse("quadratic:3,0.3333333").unwrap();
        assert_eq!(p.diagonal, vec![3.0, 0.3333333]);
        assert!(p.bump.is_none());
        let p = Profile::parse("bump:0.05,3,0.5,0.5").unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p.bump.unwrap().amplitude, 0.05);
        assert!(Profile::parse("cubic:1,2").is_err());
        assert!(Profile::parse("quadratic:1,x").is_err());
        assert!(Profile::parse("bump:0.1,2").is_err());
    }
}
