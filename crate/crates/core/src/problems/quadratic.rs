use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AggregativeProblem, RegularityConstants};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Placement,
    Bandwidth,
    Synthetic,
    Custom,
}

/// One agent of a quadratic aggregative problem:
///
/// ```text
/// f_i(x, chi) = 1/2 x'Px + b'x + x'C chi + 1/2 chi'D chi + e'chi + offset
/// g_i(x)      = G x
/// ```
///
/// with `P` (n x n) and `D` (r x r) symmetric, `C` n x r and `G` r x n.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAgent {
    pub p: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DVector<f64>,
    pub offset: f64,
    pub g: DMatrix<f64>,
}

/// Quadratic problem with linear aggregate maps. All built-in families are
/// of this form, which makes their regularity constants and optimum exact.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    family: Family,
    agents: Vec<QuadraticAgent>,
    dim_x: usize,
    dim_agg: usize,
    constants: RegularityConstants,
}

impl QuadraticProblem {
    pub fn new(family: Family, agents: Vec<QuadraticAgent>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::InvalidSize("problem needs at least one agent".into()))?;
        let (n, r) = (first.p.nrows(), first.d.nrows());
        if n == 0 || r == 0 {
            return Err(Error::InvalidSize("dimensions must be positive".into()));
        }
        for (i, a) in agents.iter().enumerate() {
            let shapes_ok = a.p.shape() == (n, n)
                && a.b.len() == n
                && a.c.shape() == (n, r)
                && a.d.shape() == (r, r)
                && a.e.len() == r
                && a.g.shape() == (r, n);
            if !shapes_ok {
                return Err(Error::Parameter(format!("agent {i} has inconsistent block shapes")));
            }
        }
        let mut problem = Self {
            family,
            agents,
            dim_x: n,
            dim_agg: r,
            constants: RegularityConstants {
                mu: 0.0,
                l1: 0.0,
                l2: 0.0,
                l3: 0.0,
            },
        };
        problem.constants = problem.analytic_constants();
        Ok(problem)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn agents(&self) -> &[QuadraticAgent] {
        &self.agents
    }

    /// Replaces the constants reported to tuning and diagnostics.
    pub fn with_constants(mut self, constants: RegularityConstants) -> Self {
        self.constants = constants;
        self
    }

    /// `S = (1/N) [G_1 ... G_N]`, so `chi(x) = S x`.
    fn aggregation_operator(&self) -> DMatrix<f64> {
        let (big_n, n, r) = (self.agents.len(), self.dim_x, self.dim_agg);
        let mut s = DMatrix::zeros(r, big_n * n);
        for (i, a) in self.agents.iter().enumerate() {
            s.view_mut((0, i * n), (r, n)).copy_from(&(&a.g / big_n as f64));
        }
        s
    }

    /// Hessian of the global objective and the constant part of its gradient.
    pub fn global_hessian(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (big_n, n, r) = (self.agents.len(), self.dim_x, self.dim_agg);
        let s = self.aggregation_operator();
        let mut block_p = DMatrix::zeros(big_n * n, big_n * n);
        let mut stacked_c = DMatrix::zeros(big_n * n, r);
        let mut d_sum = DMatrix::zeros(r, r);
        let mut e_sum = DVector::zeros(r);
        let mut lin = DVector::zeros(big_n * n);
        for (i, a) in self.agents.iter().enumerate() {
            block_p.view_mut((i * n, i * n), (n, n)).copy_from(&a.p);
            stacked_c.view_mut((i * n, 0), (n, r)).copy_from(&a.c);
            d_sum += &a.d;
            e_sum += &a.e;
            lin.rows_mut(i * n, n).copy_from(&a.b);
        }
        let cs = &stacked_c * &s;
        let hess = block_p + &cs + cs.transpose() + s.transpose() * d_sum * &s;
        lin += s.transpose() * e_sum;
        (hess, lin)
    }

    /// Solves `H x = -lin`; `None` when the Hessian is not positive definite.
    pub fn solve_stationarity(&self) -> Option<Vec<f64>> {
        let (hess, lin) = self.global_hessian();
        let chol = hess.clone().cholesky()?;
        let mut x = chol.solve(&(-&lin));
        // one step of iterative refinement
        let resid = &hess * &x + &lin;
        x -= chol.solve(&resid);
        Some(x.iter().cloned().collect())
    }

    /// Exact constants for the quadratic family.
    ///
    /// * `mu`, and part of `l1`: extreme eigenvalues of the global Hessian.
    /// * `l1` also bounds the Jacobians of
    ///   `F(x, z) = grad_x f(x, z) + jac g(x) (1 ⊗ (1/N) sum_i grad_{z_i} f_i(x_i, z_i))`
    ///   in `x` and in `z` separately.
    /// * `l2`: `||grad_z f(x', z') - grad_z f(x, z)|| <= l2 (||dx|| + ||dz||)`.
    /// * `l3 = N max_i ||G_i||`.
    fn analytic_constants(&self) -> RegularityConstants {
        let (big_n, n, r) = (self.agents.len(), self.dim_x, self.dim_agg);
        let (hess, _) = self.global_hessian();
        let eig = hess.symmetric_eigen().eigenvalues;
        let mu = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let lmax = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let mut dfdx = DMatrix::zeros(big_n * n, big_n * n);
        let mut dfdz = DMatrix::zeros(big_n * n, big_n * r);
        for (i, ai) in self.agents.iter().enumerate() {
            let jac = ai.g.transpose();
            dfdx.view_mut((i * n, i * n), (n, n)).copy_from(&ai.p);
            dfdz.view_mut((i * n, i * r), (n, r)).copy_from(&ai.c);
            for (j, aj) in self.agents.iter().enumerate() {
                let mut bx = dfdx.view_mut((i * n, j * n), (n, n));
                bx += &jac * aj.c.transpose() / big_n as f64;
                let mut bz = dfdz.view_mut((i * n, j * r), (n, r));
                bz += &jac * &aj.d / big_n as f64;
            }
        }
        let l1 = lmax.max(spectral_norm(&dfdx)).max(spectral_norm(&dfdz));

        let l2 = self
            .agents
            .iter()
            .map(|a| spectral_norm(&a.c).max(spectral_norm(&a.d)))
            .fold(0.0, f64::max);
        let l3 = big_n as f64
            * self
                .agents
                .iter()
                .map(|a| spectral_norm(&a.g))
                .fold(0.0, f64::max);
        RegularityConstants { mu, l1, l2, l3 }
    }
}

impl AggregativeProblem for QuadraticProblem {
    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_agg(&self) -> usize {
        self.dim_agg
    }

    fn local_cost(&self, agent: usize, x: &[f64], chi: &[f64]) -> f64 {
        let a = &self.agents[agent];
        let x = DVector::from_column_slice(x);
        let z = DVector::from_column_slice(chi);
        0.5 * x.dot(&(&a.p * &x))
            + a.b.dot(&x)
            + x.dot(&(&a.c * &z))
            + 0.5 * z.dot(&(&a.d * &z))
            + a.e.dot(&z)
            + a.offset
    }

    fn grad_x(&self, agent: usize, x: &[f64], chi: &[f64]) -> Vec<f64> {
        let a = &self.agents[agent];
        let x = DVector::from_column_slice(x);
        let z = DVector::from_column_slice(chi);
        (&a.p * x + &a.b + &a.c * z).iter().cloned().collect()
    }

    fn grad_chi(&self, agent: usize, x: &[f64], chi: &[f64]) -> Vec<f64> {
        let a = &self.agents[agent];
        let x = DVector::from_column_slice(x);
        let z = DVector::from_column_slice(chi);
        (a.c.tr_mul(&x) + &a.d * z + &a.e).iter().cloned().collect()
    }

    fn aggregate_map(&self, agent: usize, x: &[f64]) -> Vec<f64> {
        let a = &self.agents[agent];
        (&a.g * DVector::from_column_slice(x)).iter().cloned().collect()
    }

    fn aggregate_jacobian(&self, agent: usize, _x: &[f64]) -> DMatrix<f64> {
        self.agents[agent].g.transpose()
    }

    fn constants(&self) -> RegularityConstants {
        self.constants
    }

    fn as_quadratic(&self) -> Option<&QuadraticProblem> {
        Some(self)
    }
}

/// Optimal placement: `f_i = gamma_i ||x_i - r_i||^2 + ||x_i - chi||^2` with
/// `chi(x) = sum_i x_i / sqrt(N)`, i.e. `g_i(x_i) = sqrt(N) x_i`.
pub fn make_placement(targets: &[[f64; 2]], gammas: &[f64]) -> Result<QuadraticProblem> {
    let big_n = targets.len();
    if big_n == 0 {
        return Err(Error::InvalidSize("placement needs at least one agent".into()));
    }
    if gammas.len() != big_n {
        return Err(Error::Parameter(format!(
            "{} targets but {} weights",
            big_n,
            gammas.len()
        )));
    }
    let eye = DMatrix::<f64>::identity(2, 2);
    let sqrt_n = (big_n as f64).sqrt();
    let agents = targets
        .iter()
        .zip(gammas)
        .map(|(t, &w)| {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Parameter(format!("placement weight must be positive, got {w}")));
            }
            if t.iter().any(|c| *c < 0.0 || !c.is_finite()) {
                return Err(Error::Parameter(format!(
                    "target {t:?} is outside the nonnegative quadrant"
                )));
            }
            let target = DVector::from_column_slice(t);
            Ok(QuadraticAgent {
                p: &eye * (2.0 * (w + 1.0)),
                b: &target * (-2.0 * w),
                c: &eye * -2.0,
                d: &eye * 2.0,
                e: DVector::zeros(2),
                offset: w * target.norm_squared(),
                g: &eye * sqrt_n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    QuadraticProblem::new(Family::Placement, agents)
}

/// Cooperative bandwidth sharing in minimization form:
/// `f_i = -x_i (1 - N chi) + reg x_i^2` with `g_i(x_i) = x_i`.
pub fn make_bandwidth_sharing(n_agents: usize, reg: f64) -> Result<QuadraticProblem> {
    if n_agents == 0 {
        return Err(Error::InvalidSize("bandwidth sharing needs at least one agent".into()));
    }
    if !(reg >= 0.0) {
        return Err(Error::Parameter(format!("regularizer must be nonnegative, got {reg}")));
    }
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let agents = (0..n_agents)
        .map(|_| QuadraticAgent {
            p: one(2.0 * reg),
            b: DVector::from_element(1, -1.0),
            c: one(n_agents as f64),
            d: one(0.0),
            e: DVector::zeros(1),
            offset: 0.0,
            g: one(1.0),
        })
        .collect();
    QuadraticProblem::new(Family::Bandwidth, agents)
}

/// Seeded random family
/// `f_i = 1/2 x'P_i x + b_i'x + 1/2 c_i ||chi - d_i||^2`, `g_i(x) = G_i x / N`.
pub fn make_quadratic_synthetic(
    n_agents: usize,
    dim_x: usize,
    dim_agg: usize,
    seed: u64,
) -> Result<QuadraticProblem> {
    if n_agents == 0 || dim_x == 0 || dim_agg == 0 {
        return Err(Error::InvalidSize("synthetic dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let agents = (0..n_agents)
        .map(|_| {
            let m = DMatrix::from_fn(dim_x, dim_x, |_, _| uniform(-1.0, 1.0));
            let shift = uniform(0.5, 1.5);
            let p = (&m * m.transpose()) / dim_x as f64
                + DMatrix::identity(dim_x, dim_x) * shift;
            let b = DVector::from_fn(dim_x, |_, _| uniform(-1.0, 1.0));
            let c = uniform(0.2, 1.0);
            let d = DVector::from_fn(dim_agg, |_, _| uniform(-1.0, 1.0));
            let g = DMatrix::from_fn(dim_agg, dim_x, |_, _| uniform(-1.0, 1.0));
            QuadraticAgent {
                p,
                b,
                c: DMatrix::zeros(dim_x, dim_agg),
                d: DMatrix::identity(dim_agg, dim_agg) * c,
                e: &d * -c,
                offset: 0.5 * c * d.norm_squared(),
                g: g / n_agents as f64,
            }
        })
        .collect();
    QuadraticProblem::new(Family::Synthetic, agents)
}
