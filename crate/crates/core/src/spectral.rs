//! Dense symmetric matrices, their spectra, elementary symmetric functions and
//! the first two derivatives of the top eigenvalue along a linear path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 8;

const MAX_SWEEPS: usize = 100;

/// Dense real symmetric matrix stored as its packed upper triangle, so an
/// asymmetric value cannot be represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    n: usize,
    upper: Vec<f64>,
}

#[inline]
fn packed(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * n - i + 1) / 2 + (j - i)
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            upper: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        Self::from_diagonal(&vec![c; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds a matrix from `entry(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(n: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, entry(i, j));
            }
        }
        m
    }

    /// Builds a matrix from dense rows, reading the upper triangle. Rows must
    /// be square; the lower triangle is ignored.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: r.len(),
                });
            }
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[packed(self.n, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = packed(self.n, i, j);
        self.upper[k] = v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Squared Frobenius norm, off-diagonal entries counted twice.
    pub fn frobenius_sq(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let v = self.get(i, j);
                s += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        s
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            n: self.n,
            upper: self.upper.iter().map(|a| c * a).collect(),
        }
    }

    pub fn shift(&self, c: f64) -> Self {
        let mut m = self.clone();
        for i in 0..self.n {
            m.set(i, i, self.get(i, i) + c);
        }
        m
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).max_abs()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Frobenius inner product `Σ_ij A_ij B_ij`.
    pub fn contract(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                let p = self.get(i, j) * other.get(i, j);
                s += if i == j { p } else { 2.0 * p };
            }
        }
        s
    }

    /// `self · inner · self`, symmetric because both factors are.
    pub fn sandwich(&self, inner: &Self) -> Self {
        let n = self.n;
        let a = self.to_dense();
        let b = inner.to_dense();
        let mut ab = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i][k];
                for j in 0..n {
                    ab[i][j] += aik * b[k][j];
                }
            }
        }
        Self::from_fn(n, |i, j| (0..n).map(|k| ab[i][k] * a[k][j]).sum())
    }

    /// `Bᵀ · self · B` for a dense row-major `n × n` matrix `B`.
    pub fn congruence(&self, b: &[f64]) -> Self {
        let n = self.n;
        let mut mb = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                mb[i * n + j] = (0..n).map(|k| self.get(i, k) * b[k * n + j]).sum();
            }
        }
        Self::from_fn(n, |i, j| (0..n).map(|k| b[k * n + i] * mb[k * n + j]).sum())
    }

    /// Lower Cholesky factor, row-major, or `None` if not positive definite.
    pub fn cholesky(&self) -> Option<Vec<f64>> {
        let n = self.n;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(l)
    }

    /// Inverse of a positive definite matrix via Cholesky.
    pub fn inverse_spd(&self) -> Result<Self> {
        let n = self.n;
        let l = self.cholesky().ok_or(Error::Singular)?;
        // Solve L Lᵀ X = I column by column.
        let mut inv = vec![0.0; n * n];
        for c in 0..n {
            let mut y = vec![0.0; n];
            for i in 0..n {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for k in 0..i {
                    s -= l[i * n + k] * y[k];
                }
                y[i] = s / l[i * n + i];
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= l[k * n + i] * inv[k * n + c];
                }
                inv[i * n + c] = s / l[i * n + i];
            }
        }
        Ok(Self::from_fn(n, |i, j| {
            0.5 * (inv[i * n + j] + inv[j * n + i])
        }))
    }

    pub fn det_spd(&self) -> Result<f64> {
        let n = self.n;
        let l = self.cholesky().ok_or(Error::Singular)?;
        Ok((0..n).map(|i| l[i * n + i] * l[i * n + i]).product())
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub lambda: Vec<f64>,
    /// Row-major `n × n`; column `c` is the unit eigenvector of `lambda[c]`.
    pub basis: Vec<f64>,
    /// `λ₁ − λ₂`, zero for `n = 1`.
    pub gap: f64,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn eigenvector(&self, c: usize) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|r| self.basis[r * n + c]).collect()
    }

    /// `V · diag(λ) · Vᵀ`.
    pub fn reconstruct(&self) -> SymmetricMatrix {
        let n = self.dim();
        let v = &self.basis;
        SymmetricMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| v[i * n + k] * self.lambda[k] * v[j * n + k])
                .sum()
        })
    }

    /// Expresses `e` in the eigenbasis: `Vᵀ · e · V`.
    pub fn rotate(&self, e: &SymmetricMatrix) -> SymmetricMatrix {
        e.congruence(&self.basis)
    }

    /// Rebuilds a matrix sharing this eigenbasis with eigenvalues `g(λ_i)`.
    pub fn map_eigenvalues(&self, g: impl Fn(f64) -> f64) -> Spectrum {
        Spectrum {
            lambda: self.lambda.iter().map(|&l| g(l)).collect(),
            basis: self.basis.clone(),
            gap: f64::NAN,
        }
    }

    pub fn max_orthonormality_error(&self) -> f64 {
        let n = self.dim();
        let v = &self.basis;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|r| v[r * n + a] * v[r * n + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Rejection threshold for a simple top eigenvalue.
pub fn gap_tol(lambda1: f64) -> f64 {
    1e-8 * lambda1.abs().max(1.0)
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            s += a[p * n + q] * a[p * n + q];
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigen-decomposition. Eigenvalues are sorted descending with
/// ties kept in their original diagonal order.
pub fn eigen_decompose(m: &SymmetricMatrix) -> Result<Spectrum> {
    let n = m.dim();
    for i in 0..n {
        for j in i..n {
            if !m.get(i, j).is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = m.get(i, j);
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = m.frobenius();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off = off_diagonal_norm(&a, n);
        if off == 0.0 || off <= 1e-17 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&a, n);
        if !(off <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::NonConvergence {
                sweeps: MAX_SWEEPS,
                off_diagonal: off,
            });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal eigenvalues in original index order.
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]));
    let lambda: Vec<f64> = order.iter().map(|&k| a[k * n + k]).collect();
    let mut basis = vec![0.0; n * n];
    for (c, &k) in order.iter().enumerate() {
        for r in 0..n {
            basis[r * n + c] = v[r * n + k];
        }
    }
    let gap = if n > 1 { lambda[0] - lambda[1] } else { 0.0 };
    Ok(Spectrum { lambda, basis, gap })
}

/// k-th elementary symmetric polynomial; `σ_0 = 1`, `σ_k = 0` for `k > n`.
pub fn sigma_k(lambda: &[f64], k: usize) -> f64 {
    if k > lambda.len() {
        return 0.0;
    }
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &x in lambda {
        for j in (1..=k).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e[k]
}

/// `∂σ₂/∂λ_i = σ₁ − λ_i`, summed as `Σ_{j≠i} λ_j` so that a small
/// coefficient next to a large `λ_i` keeps its relative accuracy.
pub fn sigma2_gradient(lambda: &[f64]) -> Vec<f64> {
    (0..lambda.len())
        .map(|i| {
            lambda
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, l)| l)
                .sum()
        })
        .collect()
}

/// First and second derivatives of `s ↦ λ₁(M + sE)` at `s = 0`.
pub fn lambda_max_derivatives(m: &SymmetricMatrix, e: &SymmetricMatrix) -> Result<(f64, f64)> {
    if m.dim() != e.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            actual: e.dim(),
        });
    }
    let spec = eigen_decompose(m)?;
    let tol = gap_tol(spec.lambda[0]);
    if spec.dim() > 1 && spec.gap <= tol {
        return Err(Error::DegenerateTop { gap: spec.gap, tol });
    }
    let et = spec.rotate(e);
    let first = et.get(0, 0);
    let l1 = spec.lambda[0];
    let second = (1..spec.dim())
        .map(|k| 2.0 * et.get(0, k).powi(2) / (l1 - spec.lambda[k]))
        .sum();
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_input_is_already_decomposed() {
        let m = SymmetricMatrix::from_diagonal(&[3.0, 1.0, -0.5]);
        let s = eigen_decompose(&m).unwrap();
        assert_eq!(s.lambda, vec![3.0, 1.0, -0.5]);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(s.basis[r * 3 + c], if r == c { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(s.gap, 2.0);
    }

    #[test]
    fn identity_has_zero_gap() {
        let s = eigen_decompose(&SymmetricMatrix::identity(3)).unwrap();
        assert_eq!(s.lambda, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.gap, 0.0);
    }

    #[test]
    fn unsorted_diagonal_is_sorted_descending() {
        let m = SymmetricMatrix::from_diagonal(&[-1.0, 4.0, 2.0]);
        let s = eigen_decompose(&m).unwrap();
        assert_eq!(s.lambda, vec![4.0, 2.0, -1.0]);
        assert_eq!(s.eigenvector(0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = SymmetricMatrix::identity(2);
        m.set(0, 1, f64::NAN);
        assert!(matches!(eigen_decompose(&m), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sigma_k_examples() {
        assert_eq!(sigma_k(&[1.0, 1.0, 1.0], 2), 3.0);
        assert_eq!(sigma_k(&[3.0, 1.0, -0.5], 2), 1.0);
        assert_eq!(sigma_k(&[7.0, 0.0, 0.0, 0.0], 2), 0.0);
        assert_eq!(sigma_k(&[2.0, 3.0], 1), 5.0);
        assert_eq!(sigma_k(&[2.0, 3.0, 4.0], 3), 24.0);
    }

    #[test]
    fn sigma2_gradient_examples() {
        assert_eq!(sigma2_gradient(&[3.0, 1.0, -0.5]), vec![0.5, 2.5, 4.0]);
        assert_eq!(sigma2_gradient(&[1.0, 1.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn lambda_max_derivative_examples() {
        let m = SymmetricMatrix::from_diagonal(&[3.0, 1.0, -0.5]);
        let mut e = SymmetricMatrix::zeros(3);
        e.set(0, 0, 2.0);
        assert_eq!(lambda_max_derivatives(&m, &e).unwrap(), (2.0, 0.0));

        let mut e = SymmetricMatrix::zeros(3);
        e.set(0, 1, 1.0);
        let (d1, d2) = lambda_max_derivatives(&m, &e).unwrap();
        assert_eq!(d1, 0.0);
        assert!((d2 - 1.0).abs() < 1e-15);
        // Cross-check against the closed-form top eigenvalue of the 2x2 block.
        let top = |s: f64| 2.0 + (1.0 + s * s).sqrt();
        let h = 1e-4;
        let fd2 = (top(h) - 2.0 * top(0.0) + top(-h)) / (h * h);
        assert!((fd2 - d2).abs() < 1e-6);
    }

    #[test]
    fn degenerate_top_rejected() {
        let m = SymmetricMatrix::identity(3);
        let e = SymmetricMatrix::identity(3);
        assert!(matches!(
            lambda_max_derivatives(&m, &e),
            Err(Error::DegenerateTop { .. })
        ));
    }

    #[test]
    fn spd_inverse_and_determinant() {
        let m = SymmetricMatrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap();
        let inv = m.inverse_spd().unwrap();
        let prod = m.sandwich(&inv);
        assert!(prod.max_abs_diff(&m) < 1e-13);
        let spec = eigen_decompose(&m).unwrap();
        let det: f64 = spec.lambda.iter().product();
        assert!((m.det_spd().unwrap() - det).abs() < 1e-12 * det);
        assert_eq!(
            SymmetricMatrix::from_diagonal(&[1.0, -1.0]).inverse_spd(),
            Err(Error::Singular)
        );
    }

    #[test]
    fn packed_storage_is_symmetric() {
        let mut m = SymmetricMatrix::zeros(4);
        m.set(3, 1, 2.5);
        assert_eq!(m.get(1, 3), 2.5);
        assert_eq!(m.frobenius_sq(), 2.0 * 2.5 * 2.5);
    }
}
