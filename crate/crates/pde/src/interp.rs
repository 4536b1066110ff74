//! Tensor-product cubic Lagrange interpolation of vector-valued nodal data.

use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// Nodal vectors on a grid layout, defined on the index range `lo..=hi` of
/// every axis (e.g. `1..=shape−2` for data produced by central differences).
#[derive(Debug, Clone)]
pub struct NodalField {
    layout: GridFunction,
    components: usize,
    lo: usize,
    hi: usize,
    data: Vec<f64>,
}

fn weights(s: f64) -> [f64; 4] {
    // Lagrange basis on the offsets −1, 0, 1, 2.
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

impl NodalField {
    /// `f(index)` is evaluated on every node of the valid range.
    pub fn new(
        layout: &GridFunction,
        components: usize,
        lo: usize,
        hi: usize,
        f: impl Fn(usize) -> Vec<f64>,
    ) -> Result<Self> {
        if hi >= layout.shape() || hi < lo + 3 {
            return Err(Error::InvalidArgument(format!(
                "index range {lo}..={hi} too small for cubic stencils"
            )));
        }
        let mut data = vec![0.0; layout.len() * components];
        for i in 0..layout.len() {
            if layout.node(i).iter().all(|&k| (lo..=hi).contains(&k)) {
                let v = f(i);
                data[i * components..(i + 1) * components].copy_from_slice(&v);
            }
        }
        Ok(Self {
            layout: layout.with_values(vec![0.0; layout.len()])?,
            components,
            lo,
            hi,
            data,
        })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Physical extent `[min, max]` of the valid range along each axis.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.layout.coordinate(self.lo),
            self.layout.coordinate(self.hi),
        )
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let (a, b) = self.extent();
        x.iter().all(|&c| c >= a && c <= b)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.layout.dim();
        if x.len() != n || !self.contains(x) {
            return Err(Error::Interpolation {
                point: x.to_vec(),
                reason: "outside the interpolation range".into(),
            });
        }
        let h = self.layout.spacing();
        let r = self.layout.half_width();
        let mut base = vec![0usize; n];
        let mut w = vec![[0.0; 4]; n];
        for a in 0..n {
            let t = (x[a] + r) / h;
            let cell = (t.floor() as usize).clamp(self.lo + 1, self.hi - 2);
            base[a] = cell - 1;
            w[a] = weights(t - cell as f64);
        }
        let mut out = vec![0.0; self.components];
        let mut node = vec![0usize; n];
        for corner in 0..4usize.pow(n as u32) {
            let mut c = corner;
            let mut weight = 1.0;
            for a in (0..n).rev() {
                node[a] = base[a] + c % 4;
                weight *= w[a][c % 4];
                c /= 4;
            }
            let i = self.layout.index(&node);
            for (o, v) in out
                .iter_mut()
                .zip(&self.data[i * self.components..(i + 1) * self.components])
            {
                *o += weight * v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics_exactly() {
        let f = |x: &[f64]| x[0].powi(3) - 2.0 * x[0] * x[1] * x[1] + x[1] + 0.5;
        let u = GridFunction::from_fn(2, 9, 1.0, f).unwrap();
        let field = NodalField::new(&u, 1, 0, 8, |i| vec![u.values()[i]]).unwrap();
        for x in [[0.13, -0.71], [-1.0, 1.0], [0.999, 0.0]] {
            assert!((field.eval(&x).unwrap()[0] - f(&x)).abs() < 1e-13);
        }
        assert!(field.eval(&[1.01, 0.0]).is_err());
    }

    #[test]
    fn fourth_order_on_smooth_data() {
        let err = |shape: usize| {
            let u =
                GridFunction::from_fn(2, shape, 1.0, |x| (2.0 * x[0]).sin() * x[1].exp()).unwrap();
            let field = NodalField::new(&u, 1, 1, shape - 2, |i| vec![u.values()[i]]).unwrap();
            let x = [0.3217, -0.4411];
            (field.eval(&x).unwrap()[0] - (2.0 * x[0]).sin() * x[1].exp()).abs()
        };
        let order = (err(17) / err(33)).log2();
        assert!(order > 3.5, "order {order}");
    }
}
