//! Tensor-product grids on the box `[−R, R]ⁿ` and the central-difference
//! stencils used everywhere else in the crate.

use sigma2_core::SymmetricMatrix;

use crate::error::{Error, Result};

/// Nodal values on `shape` points per axis over `[−R, R]ⁿ`, row-major with
/// axis 0 slowest. `shape` is odd so the origin is a node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    n: usize,
    shape: usize,
    r: f64,
    h: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(n: usize, shape: usize, r: f64, values: Vec<f64>) -> Result<Self> {
        check_layout(n, shape, r)?;
        let len = shape.pow(n as u32);
        if values.len() != len {
            return Err(Error::Grid(format!(
                "expected {len} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            n,
            shape,
            r,
            h: 2.0 * r / (shape - 1) as f64,
            values,
        })
    }

    pub fn from_fn(n: usize, shape: usize, r: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        check_layout(n, shape, r)?;
        let h = 2.0 * r / (shape - 1) as f64;
        let len = shape.pow(n as u32);
        let mut x = vec![0.0; n];
        let values = (0..len)
            .map(|i| {
                fill_point(n, shape, r, h, i, &mut x);
                f(&x)
            })
            .collect();
        Self::new(n, shape, r, values)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> usize {
        self.shape
    }

    pub fn half_width(&self) -> f64 {
        self.r
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access; callers must keep the values finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.shape.pow((self.n - 1 - axis) as u32)
    }

    pub fn index(&self, node: &[usize]) -> usize {
        node.iter().fold(0, |acc, &i| acc * self.shape + i)
    }

    pub fn node(&self, mut index: usize) -> Vec<usize> {
        let mut node = vec![0; self.n];
        for a in (0..self.n).rev() {
            node[a] = index % self.shape;
            index /= self.shape;
        }
        node
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.r + i as f64 * self.h
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        fill_point(self.n, self.shape, self.r, self.h, index, &mut x);
        x
    }

    pub fn origin(&self) -> usize {
        self.index(&vec![self.shape / 2; self.n])
    }

    /// Distance in nodes to the nearest boundary face (0 on the boundary).
    pub fn layer(&self, index: usize) -> usize {
        self.node(index)
            .iter()
            .map(|&i| i.min(self.shape - 1 - i))
            .min()
            .unwrap_or(0)
    }

    pub fn get(&self, node: &[usize]) -> f64 {
        self.values[self.index(node)]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.shape, self.r, values)
    }

    /// `v(x) = (ρ/R)² u(Rx/ρ)` on the box of half-width ρ: same nodes, same
    /// discrete Hessians.
    pub fn rescaled(&self, rho: f64) -> Result<Self> {
        let c = (rho / self.r).powi(2);
        Self::new(
            self.n,
            self.shape,
            rho,
            self.values.iter().map(|v| c * v).collect(),
        )
    }

    /// Index of the node nearest to `x` (clamped into the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let node: Vec<usize> = x
            .iter()
            .map(|&c| (((c + self.r) / self.h).round().max(0.0) as usize).min(self.shape - 1))
            .collect();
        self.index(&node)
    }
}

fn check_layout(n: usize, shape: usize, r: f64) -> Result<()> {
    if !(2..=3).contains(&n) {
        return Err(Error::Grid(format!("dimension {n} outside 2..=3")));
    }
    if shape < 5 || shape % 2 == 0 {
        return Err(Error::Grid(format!(
            "shape {shape} must be odd and at least 5"
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Grid(format!("half-width {r} must be positive")));
    }
    Ok(())
}

fn fill_point(n: usize, shape: usize, r: f64, h: f64, mut index: usize, x: &mut [f64]) {
    for a in (0..n).rev() {
        x[a] = -r + (index % shape) as f64 * h;
        index /= shape;
    }
}

fn interior_or_err(u: &GridFunction, index: usize) -> Result<()> {
    if u.layer(index) == 0 {
        Err(Error::BoundaryNode {
            node: u.node(index),
        })
    } else {
        Ok(())
    }
}

/// Central-difference Hessian: 3-point second differences on the diagonal and
/// the 4-point cross stencil off it. Exact on quadratics.
pub fn fd_hessian(u: &GridFunction, node: &[usize]) -> Result<SymmetricMatrix> {
    let index = u.index(node);
    interior_or_err(u, index)?;
    Ok(hessian_at(u, index))
}

/// [`fd_hessian`] by flat index, without the boundary check.
pub(crate) fn hessian_at(u: &GridFunction, i: usize) -> SymmetricMatrix {
    let v = &u.values;
    let inv_h2 = 1.0 / (u.h * u.h);
    SymmetricMatrix::from_fn(u.n, |a, b| {
        let sa = u.stride(a);
        if a == b {
            (v[i + sa] - 2.0 * v[i] + v[i - sa]) * inv_h2
        } else {
            let sb = u.stride(b);
            (v[i + sa + sb] - v[i + sa - sb] - v[i - sa + sb] + v[i - sa - sb]) * 0.25 * inv_h2
        }
    })
}

/// Central-difference gradient.
pub fn fd_gradient(u: &GridFunction, node: &[usize]) -> Result<Vec<f64>> {
    let index = u.index(node);
    interior_or_err(u, index)?;
    Ok(gradient_at(u, index))
}

pub(crate) fn gradient_at(u: &GridFunction, i: usize) -> Vec<f64> {
    (0..u.n)
        .map(|a| {
            let s = u.stride(a);
            (u.values[i + s] - u.values[i - s]) / (2.0 * u.h)
        })
        .collect()
}

/// Trapezoid rule over the whole box.
pub fn trapezoid(u: &GridFunction) -> f64 {
    let last = u.shape - 1;
    let cell = u.h.powi(u.n as i32);
    u.values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let faces = u.node(i).iter().filter(|&&k| k == 0 || k == last).count();
            v * 0.5f64.powi(faces as i32)
        })
        .sum::<f64>()
        * cell
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> f64 {
        let q = [[3.0, 0.4, -0.2], [0.4, 1.0, 0.1], [-0.2, 0.1, -0.5]];
        let mut s = 0.7 - 0.3 * x[0];
        for a in 0..x.len() {
            for b in 0..x.len() {
                s += 0.5 * q[a][b] * x[a] * x[b];
            }
        }
        s
    }

    #[test]
    fn layout_round_trips() {
        let u = GridFunction::from_fn(3, 7, 1.5, |x| x[0] + 10.0 * x[1] + 100.0 * x[2]).unwrap();
        assert_eq!(u.spacing(), 0.5);
        for i in [0, 17, 200, u.len() - 1] {
            assert_eq!(u.index(&u.node(i)), i);
        }
        let o = u.origin();
        assert!(u.point(o).iter().all(|&c| c == 0.0));
        assert_eq!(u.layer(o), 3);
        assert_eq!(u.nearest(&[0.1, -0.2, 0.26]), u.index(&[3, 3, 4]));
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(GridFunction::from_fn(2, 6, 1.0, |_| 0.0).is_err());
        assert!(GridFunction::from_fn(2, 3, 1.0, |_| 0.0).is_err());
        assert!(GridFunction::from_fn(4, 5, 1.0, |_| 0.0).is_err());
        assert!(GridFunction::from_fn(2, 5, 1.0, |_| f64::NAN).is_err());
    }

    #[test]
    fn stencils_are_exact_on_quadratics() {
        let u = GridFunction::from_fn(3, 9, 1.0, quadratic).unwrap();
        let q = SymmetricMatrix::from_rows(&[
            vec![3.0, 0.4, -0.2],
            vec![0.4, 1.0, 0.1],
            vec![-0.2, 0.1, -0.5],
        ])
        .unwrap();
        let node = [2, 5, 6];
        assert!(fd_hessian(&u, &node).unwrap().max_abs_diff(&q) < 1e-12);
        let x = u.point(u.index(&node));
        let g = fd_gradient(&u, &node).unwrap();
        for a in 0..3 {
            let exact =
                if a == 0 { -0.3 } else { 0.0 } + (0..3).map(|b| q.get(a, b) * x[b]).sum::<f64>();
            assert!((g[a] - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn quartic_stencil_value() {
        let u = GridFunction::from_fn(2, 11, 1.0, |x| x[0].powi(4)).unwrap();
        let h = u.spacing();
        let d = fd_hessian(&u, &[5, 5]).unwrap();
        assert!((d.get(0, 0) - 2.0 * h * h).abs() < 1e-14);
    }

    #[test]
    fn boundary_nodes_are_rejected() {
        let u = GridFunction::from_fn(2, 5, 1.0, |_| 0.0).unwrap();
        assert!(matches!(
            fd_hessian(&u, &[0, 2]),
            Err(Error::BoundaryNode { .. })
        ));
        assert!(fd_gradient(&u, &[2, 4]).is_err());
    }

    #[test]
    fn hessian_converges_at_second_order() {
        let f = |x: &[f64]| (x[0] + 0.5 * x[1]).sin() * x[1].exp();
        let exact = SymmetricMatrix::from_fn(2, |a, b| {
            // at the origin: u = sin(s)e^y with s = x + y/2
            match (a, b) {
                (0, 0) => 0.0,
                (0, 1) => 1.0,
                _ => 1.0,
            }
        });
        let err = |shape: usize| {
            let u = GridFunction::from_fn(2, shape, 1.0, f).unwrap();
            fd_hessian(&u, &u.node(u.origin()))
                .unwrap()
                .max_abs_diff(&exact)
        };
        let (e1, e2) = (err(17), err(33));
        let order = (e1 / e2).log2();
        assert!(order > 1.9 && order < 2.1, "order {order}");
    }

    #[test]
    fn trapezoid_integrates_bilinear_exactly() {
        let u = GridFunction::from_fn(2, 9, 2.0, |x| 1.0 + x[0] * x[1] + 3.0 * x[0]).unwrap();
        assert!((trapezoid(&u) - 16.0).abs() < 1e-12);
    }
}
