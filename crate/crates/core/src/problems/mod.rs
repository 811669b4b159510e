//! Aggregative optimization problems
//!
//! ```text
//! minimize  f(x) = sum_i f_i(x_i, chi(x)),   chi(x) = (1/N) sum_i g_i(x_i)
//! ```
//!
//! Agents only evaluate their own `f_i`, `g_i` and the associated gradients.
//! The global objective, its true gradient and the reference solver are
//! centralized utilities used for validation.

mod checks;
mod quadratic;

pub use checks::{
    check_constants, check_local_derivatives, operating_box, ConstantCheck, DerivativeCheck,
    OperatingBox,
};
pub use quadratic::{
    make_bandwidth_sharing, make_placement, make_quadratic_synthetic, Family, QuadraticAgent,
    QuadraticProblem,
};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::norm2;

/// Regularity constants: strong convexity `mu`, smoothness `l1`, Lipschitz
/// constant `l2` of the aggregate gradient, and `l3` with
/// `||jac g_i|| <= l3 / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityConstants {
    pub mu: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl RegularityConstants {
    /// Checks the sign conditions the tuning formulas require.
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0 && self.l1 > 0.0 && self.l2 >= 0.0 && self.l3 > 0.0;
        let finite = [self.mu, self.l1, self.l2, self.l3].iter().all(|v| v.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "constants must satisfy mu > 0, l1 > 0, l2 >= 0, l3 > 0 (got mu={}, l1={}, l2={}, l3={})",
                self.mu, self.l1, self.l2, self.l3
            )))
        }
    }
}

/// Per-agent evaluators of an aggregative problem.
///
/// Implementations must be pure: the engine may call them from several
/// threads and relies on identical outputs for identical inputs.
pub trait AggregativeProblem: Send + Sync {
    fn n_agents(&self) -> usize;
    /// Dimension `n` of each local decision `x_i`.
    fn dim_x(&self) -> usize;
    /// Dimension `r` of the aggregate.
    fn dim_agg(&self) -> usize;

    fn local_cost(&self, agent: usize, x: &[f64], chi: &[f64]) -> f64;
    fn grad_x(&self, agent: usize, x: &[f64], chi: &[f64]) -> Vec<f64>;
    fn grad_chi(&self, agent: usize, x: &[f64], chi: &[f64]) -> Vec<f64>;
    /// `g_i(x_i)`.
    fn aggregate_map(&self, agent: usize, x: &[f64]) -> Vec<f64>;
    /// `n x r` Jacobian of `g_i` (the gradient convention: column `c` is the
    /// gradient of the `c`-th component).
    fn aggregate_jacobian(&self, agent: usize, x: &[f64]) -> DMatrix<f64>;

    fn constants(&self) -> RegularityConstants;

    /// Exposes the quadratic structure so the reference solver can use a
    /// direct linear solve.
    fn as_quadratic(&self) -> Option<&QuadraticProblem> {
        None
    }
}

/// `jac * v` for an `n x r` Jacobian and an `r`-vector.
pub fn jacobian_apply(jac: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..jac.nrows())
        .map(|row| (0..jac.ncols()).map(|c| jac[(row, c)] * v[c]).sum())
        .collect()
}

fn check_len(p: &dyn AggregativeProblem, x: &[f64]) -> Result<()> {
    let expected = p.n_agents() * p.dim_x();
    if x.len() != expected {
        return Err(Error::Shape {
            expected,
            actual: x.len(),
        });
    }
    Ok(())
}

/// `chi(x) = (1/N) sum_i g_i(x_i)`.
pub fn aggregate(p: &dyn AggregativeProblem, x: &[f64]) -> Result<Vec<f64>> {
    check_len(p, x)?;
    let (n, r, dx) = (p.n_agents(), p.dim_agg(), p.dim_x());
    let mut chi = vec![0.0; r];
    for i in 0..n {
        for (acc, v) in chi.iter_mut().zip(p.aggregate_map(i, &x[i * dx..(i + 1) * dx])) {
            *acc += v;
        }
    }
    chi.iter_mut().for_each(|c| *c /= n as f64);
    Ok(chi)
}

/// Global objective `sum_i f_i(x_i, chi(x))`.
pub fn eval_global(p: &dyn AggregativeProblem, x: &[f64]) -> Result<f64> {
    let chi = aggregate(p, x)?;
    let dx = p.dim_x();
    Ok((0..p.n_agents())
        .map(|i| p.local_cost(i, &x[i * dx..(i + 1) * dx], &chi))
        .sum())
}

/// True gradient of the global objective:
/// `grad_{x_i} f_i(x_i, chi) + jac g_i(x_i) * (1/N) sum_j grad_chi f_j(x_j, chi)`.
pub fn eval_aggregated_gradient(p: &dyn AggregativeProblem, x: &[f64]) -> Result<Vec<f64>> {
    let chi = aggregate(p, x)?;
    let (n, r, dx) = (p.n_agents(), p.dim_agg(), p.dim_x());
    let mut mean_chi_grad = vec![0.0; r];
    for i in 0..n {
        let gc = p.grad_chi(i, &x[i * dx..(i + 1) * dx], &chi);
        for (acc, v) in mean_chi_grad.iter_mut().zip(gc) {
            *acc += v / n as f64;
        }
    }
    let mut out = Vec::with_capacity(n * dx);
    for i in 0..n {
        let xi = &x[i * dx..(i + 1) * dx];
        let gx = p.grad_x(i, xi, &chi);
        let corr = jacobian_apply(&p.aggregate_jacobian(i, xi), &mean_chi_grad);
        out.extend(gx.iter().zip(corr).map(|(a, b)| a + b));
    }
    Ok(out)
}

/// Optimal point together with the tracker fixed points it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub chi_star: Vec<f64>,
    pub y_star: Vec<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
}

impl ReferenceSolution {
    /// Assembles `chi* = chi(x*)`, `y* = (1/N) sum_i grad_chi f_i(x*_i, chi*)`
    /// and the objective value at a given point.
    pub fn at(p: &dyn AggregativeProblem, x_star: Vec<f64>) -> Result<Self> {
        let chi_star = aggregate(p, &x_star)?;
        let (n, r, dx) = (p.n_agents(), p.dim_agg(), p.dim_x());
        let mut y_star = vec![0.0; r];
        for i in 0..n {
            let gc = p.grad_chi(i, &x_star[i * dx..(i + 1) * dx], &chi_star);
            for (acc, v) in y_star.iter_mut().zip(gc) {
                *acc += v / n as f64;
            }
        }
        let f_star = eval_global(p, &x_star)?;
        let grad_norm = norm2(&eval_aggregated_gradient(p, &x_star)?);
        Ok(Self {
            x_star,
            chi_star,
            y_star,
            f_star,
            grad_norm,
        })
    }
}

/// Centralized minimizer.
///
/// Quadratic problems are solved through their stationarity system; the
/// result is then polished by gradient descent if it misses `tol` (it
/// normally does not). Other problems use gradient descent from the origin.
pub fn solve_reference(
    p: &dyn AggregativeProblem,
    tol: f64,
    max_iter: usize,
) -> Result<ReferenceSolution> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let start = match p.as_quadratic().and_then(|q| q.solve_stationarity()) {
        Some(x) => x,
        None => vec![0.0; p.n_agents() * p.dim_x()],
    };
    solve_gradient_descent(p, start, tol, max_iter)
}

/// Gradient descent with fixed step `1 / l1` until `||grad|| <= tol`.
pub fn solve_gradient_descent(
    p: &dyn AggregativeProblem,
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ReferenceSolution> {
    check_len(p, &x0)?;
    let step = 1.0 / p.constants().l1;
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::Domain("gradient descent needs l1 > 0".into()));
    }
    let mut x = x0;
    let mut grad = eval_aggregated_gradient(p, &x)?;
    let mut gnorm = norm2(&grad);
    let mut iter = 0;
    while gnorm > tol {
        if iter == max_iter || !gnorm.is_finite() {
            return Err(Error::NoConvergence {
                iterations: iter,
                grad_norm: gnorm,
                last_iterate: x,
            });
        }
        x.iter_mut().zip(&grad).for_each(|(xi, gi)| *xi -= step * gi);
        grad = eval_aggregated_gradient(p, &x)?;
        gnorm = norm2(&grad);
        iter += 1;
    }
    ReferenceSolution::at(p, x)
}
