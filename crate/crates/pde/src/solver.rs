//! Damped Newton for `σ₂(D²u) = 1` with Dirichlet data on the box.

use faer::linalg::solvers::{Solve, SolveLstsq};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat, Triplet};
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sigma2_core::sigma2::{linearized_matrix, residual};
use sigma2_core::spectral::{eigen_decompose, sigma2_gradient};

use crate::error::{Error, Result};
use crate::grid::{hessian_at, GridFunction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Semiconvexity constant: iterates must keep `D²u + K I > 0`.
    pub k: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            k: 1.0,
            tol: 1e-10,
            max_iter: 25,
            max_halvings: 30,
        }
    }
}

/// State after an accepted Newton step; each stage starts with an unstepped
/// entry for its initial guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub residual_norm: f64,
    pub min_shear_eig: f64,
    pub min_ellipticity: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: GridFunction,
    pub residual_norm: f64,
    /// Newton steps over all continuation stages.
    pub iterations: usize,
    /// 1 for a direct solve, more when the data were reached by continuation.
    pub stages: usize,
    pub min_shear_eig: f64,
    pub lambda_max_field: GridFunction,
    pub k: f64,
    pub history: Vec<IterationRecord>,
}

/// Worst-case nodal quantities of an iterate over the interior.
#[derive(Debug, Clone, Copy)]
struct Health {
    residual_norm: f64,
    residual_node: usize,
    min_shear_eig: f64,
    shear_node: usize,
    min_ellipticity: f64,
    ellipticity_node: usize,
}

impl Health {
    fn elliptic(&self) -> bool {
        self.min_shear_eig > 0.0 && self.min_ellipticity > 0.0
    }
}

struct NodeHealth {
    index: usize,
    residual: f64,
    shear: f64,
    ellipticity: f64,
}

fn node_health(u: &GridFunction, i: usize, k: f64) -> NodeHealth {
    let m = hessian_at(u, i);
    let (shear, ellipticity) = match eigen_decompose(&m) {
        Ok(s) => {
            let f = sigma2_gradient(&s.lambda);
            (
                s.lambda[s.lambda.len() - 1] + k,
                f.iter().copied().fold(f64::INFINITY, f64::min),
            )
        }
        Err(_) => (f64::NAN, f64::NAN),
    };
    NodeHealth {
        index: i,
        residual: residual(&m),
        shear,
        ellipticity,
    }
}

fn health(u: &GridFunction, interior: &[usize], k: f64) -> Health {
    let init = Health {
        residual_norm: 0.0,
        residual_node: interior[0],
        min_shear_eig: f64::INFINITY,
        shear_node: interior[0],
        min_ellipticity: f64::INFINITY,
        ellipticity_node: interior[0],
    };
    // Ties resolve to the smaller index, so the reduction is order-independent.
    let better = |a: f64, ai: usize, b: f64, bi: usize| b > a || (b == a && bi < ai) || b.is_nan();
    interior
        .par_iter()
        .map(|&i| node_health(u, i, k))
        .fold(
            || init,
            |mut h, n| {
                if better(h.residual_norm, h.residual_node, n.residual.abs(), n.index) {
                    h.residual_norm = n.residual.abs();
                    h.residual_node = n.index;
                }
                if better(-h.min_shear_eig, h.shear_node, -n.shear, n.index) {
                    h.min_shear_eig = n.shear;
                    h.shear_node = n.index;
                }
                if better(
                    -h.min_ellipticity,
                    h.ellipticity_node,
                    -n.ellipticity,
                    n.index,
                ) {
                    h.min_ellipticity = n.ellipticity;
                    h.ellipticity_node = n.index;
                }
                h
            },
        )
        .reduce(
            || init,
            |mut a, b| {
                if better(
                    a.residual_norm,
                    a.residual_node,
                    b.residual_norm,
                    b.residual_node,
                ) {
                    a.residual_norm = b.residual_norm;
                    a.residual_node = b.residual_node;
                }
                if better(
                    -a.min_shear_eig,
                    a.shear_node,
                    -b.min_shear_eig,
                    b.shear_node,
                ) {
                    a.min_shear_eig = b.min_shear_eig;
                    a.shear_node = b.shear_node;
                }
                if better(
                    -a.min_ellipticity,
                    a.ellipticity_node,
                    -b.min_ellipticity,
                    b.ellipticity_node,
                ) {
                    a.min_ellipticity = b.min_ellipticity;
                    a.ellipticity_node = b.ellipticity_node;
                }
                a
            },
        )
}

/// Residual and branch indicators of an arbitrary grid function, in the form
/// of an (unstepped) iteration record.
pub fn assess(u: &GridFunction, k: f64) -> IterationRecord {
    let h = health(u, &interior_nodes(u), k);
    IterationRecord {
        residual_norm: h.residual_norm,
        min_shear_eig: h.min_shear_eig,
        min_ellipticity: h.min_ellipticity,
        step: 0.0,
    }
}

fn interior_nodes(u: &GridFunction) -> Vec<usize> {
    (0..u.len()).filter(|&i| u.layer(i) > 0).collect()
}

/// Least-squares quadratic `c + g·x + ½xᵀAx` through the boundary-layer
/// values, evaluated on every interior node; boundary values are kept.
pub fn quadratic_interpolant(boundary: &GridFunction) -> Result<GridFunction> {
    let fit = quadratic_fit(boundary)?;
    let values = (0..boundary.len())
        .map(|i| {
            if boundary.layer(i) > 0 {
                fit.values()[i]
            } else {
                boundary.values()[i]
            }
        })
        .collect();
    boundary.with_values(values)
}

/// The least-squares quadratic evaluated on every node.
fn quadratic_fit(boundary: &GridFunction) -> Result<GridFunction> {
    let n = boundary.dim();
    let r = boundary.half_width();
    let basis = |x: &[f64]| {
        let mut row = vec![1.0];
        row.extend(x.iter().map(|v| v / r));
        for a in 0..n {
            for b in a..n {
                let w = if a == b { 0.5 } else { 1.0 };
                row.push(w * x[a] * x[b] / (r * r));
            }
        }
        row
    };
    let nodes: Vec<usize> = (0..boundary.len())
        .filter(|&i| boundary.layer(i) == 0)
        .collect();
    let rows: Vec<Vec<f64>> = nodes.iter().map(|&i| basis(&boundary.point(i))).collect();
    let p = rows[0].len();
    let a = Mat::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let b = Mat::from_fn(rows.len(), 1, |i, _| boundary.values()[nodes[i]]);
    let coef = a.qr().solve_lstsq(&b);
    let values = (0..boundary.len())
        .map(|i| {
            let row = basis(&boundary.point(i));
            (0..p).map(|j| row[j] * coef[(j, 0)]).sum()
        })
        .collect();
    boundary.with_values(values)
}

/// Newton's starting point: [`quadratic_interpolant`] plus the discrete
/// harmonic extension of the boundary mismatch. Without the correction the
/// mismatch enters the first interior layer's Hessian divided by h², which
/// on fine grids pushes those nodes off the elliptic branch.
pub fn initial_guess(boundary: &GridFunction) -> Result<GridFunction> {
    harmonic_correction(&quadratic_fit(boundary)?, boundary)
}

/// `base` with its boundary layer replaced by that of `boundary` and the
/// difference extended discretely harmonically into the interior.
fn harmonic_correction(base: &GridFunction, boundary: &GridFunction) -> Result<GridFunction> {
    let mismatch: Vec<f64> = boundary
        .values()
        .iter()
        .zip(base.values())
        .map(|(b, q)| b - q)
        .collect();
    let scale = (0..boundary.len())
        .filter(|&i| boundary.layer(i) == 0)
        .fold(0.0f64, |m, i| m.max(mismatch[i].abs()));
    if scale == 0.0 {
        return Ok(base.clone());
    }
    let interior = interior_nodes(boundary);
    let mut unknown = vec![None; boundary.len()];
    for (k, &i) in interior.iter().enumerate() {
        unknown[i] = Some(k);
    }
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; interior.len()];
    for (row, &i) in interior.iter().enumerate() {
        triplets.push(Triplet::new(row, row, 2.0 * boundary.dim() as f64));
        for a in 0..boundary.dim() {
            let s = boundary.stride(a);
            for j in [i + s, i - s] {
                match unknown[j] {
                    Some(col) => triplets.push(Triplet::new(row, col, -1.0)),
                    None => rhs[row] += mismatch[j],
                }
            }
        }
    }
    let m = interior.len();
    let lap = SparseColMat::try_new_from_triplets(m, m, &triplets)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let llt = lap
        .sp_cholesky(faer::Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let mut x = Mat::from_fn(m, 1, |i, _| rhs[i]);
    llt.solve_in_place(&mut x);
    let mut values = boundary.values().to_vec();
    for (k, &i) in interior.iter().enumerate() {
        values[i] = base.values()[i] + x[(k, 0)];
    }
    base.with_values(values)
}

/// Sparsity pattern of the Newton Jacobian: for every interior row the
/// centre, the 2n axis neighbours and the 4·C(n,2) diagonal neighbours that
/// are themselves unknowns, in a fixed order.
struct Pattern {
    unknown: Vec<Option<usize>>,
    interior: Vec<usize>,
    row_start: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

fn stencil(u: &GridFunction) -> Vec<isize> {
    let n = u.dim();
    let mut offs = vec![0isize];
    for a in 0..n {
        let s = u.stride(a) as isize;
        offs.extend([s, -s]);
    }
    for a in 0..n {
        for b in a + 1..n {
            let (sa, sb) = (u.stride(a) as isize, u.stride(b) as isize);
            offs.extend([sa + sb, sa - sb, -sa + sb, -sa - sb]);
        }
    }
    offs
}

impl Pattern {
    fn new(u: &GridFunction) -> Result<Self> {
        let interior = interior_nodes(u);
        let mut unknown = vec![None; u.len()];
        for (k, &i) in interior.iter().enumerate() {
            unknown[i] = Some(k);
        }
        let mut pairs = Vec::new();
        let mut row_start = vec![0];
        for (row, &i) in interior.iter().enumerate() {
            for off in stencil(u) {
                if let Some(col) = unknown[(i as isize + off) as usize] {
                    pairs.push(Pair { row, col });
                }
            }
            row_start.push(pairs.len());
        }
        let m = interior.len();
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(m, m, &pairs)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Self {
            unknown,
            interior,
            row_start,
            symbolic,
            argsort,
            lu,
        })
    }

    /// Jacobian entries in pattern order, plus the nodal residuals.
    fn assemble(&self, u: &GridFunction) -> (Vec<f64>, Vec<f64>) {
        let n = u.dim();
        let inv_h2 = 1.0 / (u.spacing() * u.spacing());
        let rows: Vec<(Vec<f64>, f64)> = self
            .interior
            .par_iter()
            .map(|&i| {
                let m = hessian_at(u, i);
                let f = linearized_matrix(&m);
                let mut coef = vec![-2.0 * f.trace() * inv_h2];
                for a in 0..n {
                    let c = f.get(a, a) * inv_h2;
                    coef.extend([c, c]);
                }
                for a in 0..n {
                    for b in a + 1..n {
                        let c = 0.5 * f.get(a, b) * inv_h2;
                        coef.extend([c, -c, -c, c]);
                    }
                }
                let vals = stencil(u)
                    .into_iter()
                    .zip(coef)
                    .filter(|(off, _)| self.unknown[(i as isize + off) as usize].is_some())
                    .map(|(_, c)| c)
                    .collect();
                (vals, residual(&m))
            })
            .collect();
        let mut vals = Vec::with_capacity(*self.row_start.last().unwrap());
        let mut res = Vec::with_capacity(rows.len());
        for (v, r) in rows {
            vals.extend(v);
            res.push(r);
        }
        (vals, res)
    }

    fn solve(&self, vals: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        let a = SparseColMat::new_from_argsort(self.symbolic.clone(), &self.argsort, vals)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let lu = Lu::try_new_with_symbolic(self.lu.clone(), a.as_ref())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let mut x = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        lu.solve_in_place(&mut x);
        let x: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::Factorization("singular Newton system".into()))
        }
    }
}

fn line_search_error(u: &GridFunction, h: &Health, what: &str) -> Error {
    let (node, reason) = if h.min_shear_eig.is_nan() || h.min_shear_eig <= 0.0 {
        (
            h.shear_node,
            format!("{what}: min shear eigenvalue {:e}", h.min_shear_eig),
        )
    } else if h.min_ellipticity.is_nan() || h.min_ellipticity <= 0.0 {
        (
            h.ellipticity_node,
            format!("{what}: min linearized eigenvalue {:e}", h.min_ellipticity),
        )
    } else {
        (
            h.residual_node,
            format!("{what}: residual {:e} did not decrease", h.residual_norm),
        )
    };
    Error::LineSearchFailed {
        node: u.node(node),
        reason,
    }
}

/// Smallest boundary-data increment the continuation may take.
const MIN_CONTINUATION_STEP: f64 = 1.0 / 1024.0;

fn record(h: &Health, step: f64) -> IterationRecord {
    IterationRecord {
        residual_norm: h.residual_norm,
        min_shear_eig: h.min_shear_eig,
        min_ellipticity: h.min_ellipticity,
        step,
    }
}

/// Damped Newton from an elliptic `u` with its own boundary layer fixed.
/// Accepted iterates are appended to `history`.
fn iterate(
    mut u: GridFunction,
    pattern: &Pattern,
    opts: &SolverOptions,
    history: &mut Vec<IterationRecord>,
) -> Result<(GridFunction, Health, usize)> {
    let mut state = health(&u, &pattern.interior, opts.k);
    if !state.elliptic() {
        return Err(line_search_error(
            &u,
            &state,
            "initial guess off the elliptic branch",
        ));
    }
    history.push(record(&state, 0.0));
    let mut iterations = 0;
    while state.residual_norm > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::MaxIterations {
                iterations,
                residual: state.residual_norm,
            });
        }
        let (vals, res) = pattern.assemble(&u);
        let rhs: Vec<f64> = res.iter().map(|r| -r).collect();
        let delta = pattern.solve(&vals, &rhs)?;
        let mut step = 1.0;
        let mut halvings = 0;
        loop {
            let mut trial = u.clone();
            for (k, &i) in pattern.interior.iter().enumerate() {
                trial.values_mut()[i] += step * delta[k];
            }
            let th = health(&trial, &pattern.interior, opts.k);
            if th.elliptic() && th.residual_norm < state.residual_norm {
                u = trial;
                state = th;
                break;
            }
            halvings += 1;
            if halvings > opts.max_halvings {
                return Err(line_search_error(&trial, &th, "step exhausted"));
            }
            step *= 0.5;
        }
        iterations += 1;
        history.push(record(&state, step));
    }
    Ok((u, state, iterations))
}

/// Solves `σ₂(D²u) = 1` on the interior nodes with the boundary-layer values
/// of `boundary` held fixed.
///
/// Every accepted iterate keeps `D²u + K I > 0` and a positive definite
/// linearization at every interior node; the step is halved until that holds
/// and the max-norm residual decreases.
///
/// When [`initial_guess`] is not elliptic (strongly anisotropic data, where
/// the small eigenvalues leave little room), the boundary data are reached by
/// continuation from their least-squares quadratic: each stage solves for
/// `q + θ(g − q)` starting from the previous solution plus the harmonic
/// extension of the data increment, and θ's increment is halved whenever a
/// stage fails.
pub fn newton_solve(boundary: &GridFunction, opts: &SolverOptions) -> Result<SolveResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {} must be positive",
            opts.tol
        )));
    }
    let guess = initial_guess(boundary)?;
    let pattern = Pattern::new(&guess)?;
    let mut history = Vec::new();
    let direct = health(&guess, &pattern.interior, opts.k);
    let (u, state, iterations, stages) = if direct.elliptic() {
        let (u, state, it) = iterate(guess, &pattern, opts, &mut history)?;
        (u, state, it, 1)
    } else {
        let q = quadratic_fit(boundary)?;
        let start = health(&q, &pattern.interior, opts.k);
        if !start.elliptic() {
            return Err(line_search_error(
                &guess,
                &direct,
                "initial guess off the elliptic branch",
            ));
        }
        let (mut u, mut state, mut total) = iterate(q.clone(), &pattern, opts, &mut history)?;
        let mut stages = 1;
        let (mut theta, mut dtheta) = (0.0f64, 0.5f64);
        while theta < 1.0 {
            let next = (theta + dtheta).min(1.0);
            let target = q.with_values(
                q.values()
                    .iter()
                    .zip(boundary.values())
                    .map(|(a, b)| a + next * (b - a))
                    .collect(),
            )?;
            let mut stage_history = Vec::new();
            let attempt = harmonic_correction(&u, &target)
                .and_then(|g| iterate(g, &pattern, opts, &mut stage_history));
            match attempt {
                Ok((v, h, it)) => {
                    u = v;
                    state = h;
                    total += it;
                    stages += 1;
                    history.extend(stage_history);
                    theta = next;
                    dtheta = (2.0 * dtheta).min(1.0);
                }
                Err(e @ (Error::LineSearchFailed { .. } | Error::MaxIterations { .. })) => {
                    dtheta *= 0.5;
                    if dtheta < MIN_CONTINUATION_STEP {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        (u, state, total, stages)
    };
    let lambda_max_field = lambda_max_field(&u)?;
    Ok(SolveResult {
        residual_norm: state.residual_norm,
        iterations,
        stages,
        min_shear_eig: state.min_shear_eig,
        lambda_max_field,
        k: opts.k,
        history,
        u,
    })
}

/// Top eigenvalue of the discrete Hessian on interior nodes; boundary nodes
/// copy their nearest interior neighbour.
pub fn lambda_max_field(u: &GridFunction) -> Result<GridFunction> {
    let shape = u.shape();
    let values = (0..u.len())
        .into_par_iter()
        .map(|i| {
            let node: Vec<usize> = u.node(i).iter().map(|&k| k.clamp(1, shape - 2)).collect();
            eigen_decompose(&hessian_at(u, u.index(&node))).map(|s| s.lambda[0])
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    u.with_values(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{onshell_diagonal, Bump, Profile};

    #[test]
    fn interpolant_recovers_a_general_quadratic() {
        let q = |x: &[f64]| {
            0.3 + x[0] - 2.0 * x[1] + 1.5 * x[0] * x[0] + 0.4 * x[0] * x[1] - 0.2 * x[1] * x[1]
        };
        let exact = GridFunction::from_fn(2, 9, 2.0, q).unwrap();
        let mut b = exact.clone();
        for i in 0..b.len() {
            if b.layer(i) > 0 {
                b.values_mut()[i] = 0.0;
            }
        }
        assert!(quadratic_interpolant(&b).unwrap().max_abs_diff(&exact) < 1e-12);
    }

    #[test]
    fn exact_quadratic_needs_no_iterations() {
        let b = Profile::quadratic(onshell_diagonal(3, 3.0))
            .sample(9, 1.0)
            .unwrap();
        let s = newton_solve(&b, &SolverOptions::default()).unwrap();
        assert_eq!(s.iterations, 0);
        assert!(s.u.max_abs_diff(&b) < 1e-12);
        assert!((s.lambda_max_field.values()[0] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn perturbed_data_converges_quadratically() {
        let b = Profile::quadratic(onshell_diagonal(2, 2.0))
            .with_bump(Bump::centered(2, 0.05))
            .sample(17, 1.0)
            .unwrap();
        let s = newton_solve(&b, &SolverOptions::default()).unwrap();
        assert!(s.residual_norm <= 1e-10);
        assert!(s.iterations <= 8);
        assert!(s.history.iter().all(|r| r.min_shear_eig > 0.0));
        // boundary data are reproduced exactly
        for i in 0..b.len() {
            if b.layer(i) == 0 {
                assert_eq!(s.u.values()[i], b.values()[i]);
            }
        }
    }

    #[test]
    fn concave_data_are_rejected() {
        let b = Profile::quadratic(vec![-2.0, -0.5]).sample(9, 1.0).unwrap();
        let e = newton_solve(&b, &SolverOptions::default()).unwrap_err();
        assert!(matches!(e, Error::LineSearchFailed { .. }), "{e}");
    }

    #[test]
    fn iteration_cap_is_reported() {
        let b = Profile::quadratic(vec![3.0, 0.5]).sample(9, 1.0).unwrap();
        let opts = SolverOptions {
            max_iter: 1,
            tol: 1e-14,
            ..SolverOptions::default()
        };
        assert!(matches!(
            newton_solve(&b, &opts),
            Err(Error::MaxIterations { .. })
        ));
    }
}
