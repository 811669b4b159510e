//! Sampling checks for user-declared derivatives and regularity constants.

use rand::Rng;

use super::{eval_aggregated_gradient, AggregativeProblem};
use crate::linalg::{norm2, norm_inf, sub};

/// Axis-aligned box `center ± radius` in the stacked decision space.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingBox {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl OperatingBox {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.center
            .iter()
            .map(|c| c + rng.random_range(-self.radius..=self.radius))
            .collect()
    }
}

/// Box of radius `2 (||x0 - x*||_inf + 1)` around `x*`.
pub fn operating_box(x0: &[f64], x_star: &[f64]) -> OperatingBox {
    let c0 = norm_inf(&sub(x0, x_star));
    OperatingBox {
        center: x_star.to_vec(),
        radius: 2.0 * (c0 + 1.0),
    }
}

/// Largest tolerance-normalised mismatch between the declared local
/// derivatives and central differences; values `<= 1` pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub grad_x: f64,
    pub grad_chi: f64,
    pub jacobian: f64,
    /// Largest `||jac g_i|| / (l3 / N)` seen.
    pub jacobian_bound: f64,
}

impl DerivativeCheck {
    pub fn passed(&self) -> bool {
        self.grad_x <= 1.0
            && self.grad_chi <= 1.0
            && self.jacobian <= 1.0
            && self.jacobian_bound <= 1.0 + 1e-12
    }
}

fn central_diff(f: impl Fn(&[f64]) -> Vec<f64>, at: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..at.len())
        .map(|k| {
            let mut plus = at.to_vec();
            plus[k] += h;
            let mut minus = at.to_vec();
            minus[k] -= h;
            f(&plus)
                .iter()
                .zip(f(&minus))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect()
        })
        .collect()
}

fn scaled_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let err = norm2(&sub(analytic, numeric));
    err / f64::max(1e-6, 1e-4 * norm2(analytic))
}

/// Compares `grad_x`, `grad_chi` and `jac g` of every agent with central
/// differences at `samples` random points of `bounds` (aggregate arguments
/// drawn from the aggregate of another random point).
pub fn check_local_derivatives<R: Rng>(
    p: &dyn AggregativeProblem,
    bounds: &OperatingBox,
    samples: usize,
    rng: &mut R,
) -> DerivativeCheck {
    let (n, dx, r) = (p.n_agents(), p.dim_x(), p.dim_agg());
    let l3 = p.constants().l3;
    let h = 1e-5;
    let mut out = DerivativeCheck {
        grad_x: 0.0,
        grad_chi: 0.0,
        jacobian: 0.0,
        jacobian_bound: 0.0,
    };
    for _ in 0..samples {
        let x = bounds.sample(rng);
        let chi: Vec<f64> = (0..r).map(|_| rng.random_range(-5.0..5.0)).collect();
        for i in 0..n {
            let xi = &x[i * dx..(i + 1) * dx];
            let num_gx: Vec<f64> = central_diff(|v| vec![p.local_cost(i, v, &chi)], xi, h)
                .into_iter()
                .map(|d| d[0])
                .collect();
            out.grad_x = out.grad_x.max(scaled_error(&p.grad_x(i, xi, &chi), &num_gx));

            let num_gc: Vec<f64> = central_diff(|z| vec![p.local_cost(i, xi, z)], &chi, h)
                .into_iter()
                .map(|d| d[0])
                .collect();
            out.grad_chi = out.grad_chi.max(scaled_error(&p.grad_chi(i, xi, &chi), &num_gc));

            // row k of the numeric Jacobian is d g / d x_k, matching the n x r layout
            let num_jac = central_diff(|v| p.aggregate_map(i, v), xi, h);
            let jac = p.aggregate_jacobian(i, xi);
            for (k, row) in num_jac.iter().enumerate() {
                let analytic: Vec<f64> = (0..r).map(|c| jac[(k, c)]).collect();
                out.jacobian = out.jacobian.max(scaled_error(&analytic, row));
            }
            let jn = crate::linalg::spectral_norm(&jac);
            out.jacobian_bound = out.jacobian_bound.max(jn / (l3 / n as f64));
        }
    }
    out
}

/// Worst observed ratios over sampled pairs; each must be `<= 1` for the
/// declared constants to be honest on the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantCheck {
    /// `||grad f(x) - grad f(y)|| / (l1 ||x - y||)`.
    pub smoothness: f64,
    /// `mu ||x - y||^2 / <grad f(x) - grad f(y), x - y>`.
    pub strong_convexity: f64,
    /// `||grad_z f(x, z) - grad_z f(x', z')|| / (l2 (||dx|| + ||dz||))`.
    pub aggregate_lipschitz: f64,
    pub pairs: usize,
}

impl ConstantCheck {
    pub fn passed(&self) -> bool {
        let tol = 1.0 + 1e-9;
        self.smoothness <= tol && self.strong_convexity <= tol && self.aggregate_lipschitz <= tol
    }
}

pub fn check_constants<R: Rng>(
    p: &dyn AggregativeProblem,
    bounds: &OperatingBox,
    pairs: usize,
    rng: &mut R,
) -> ConstantCheck {
    let c = p.constants();
    let (n, dx, r) = (p.n_agents(), p.dim_x(), p.dim_agg());
    let mut out = ConstantCheck {
        smoothness: 0.0,
        strong_convexity: 0.0,
        aggregate_lipschitz: 0.0,
        pairs,
    };
    let stacked_chi_grad = |x: &[f64], z: &[f64]| -> Vec<f64> {
        (0..n)
            .flat_map(|i| p.grad_chi(i, &x[i * dx..(i + 1) * dx], &z[i * r..(i + 1) * r]))
            .collect()
    };
    for _ in 0..pairs {
        let x = bounds.sample(rng);
        let y = bounds.sample(rng);
        let diff = sub(&x, &y);
        let dist = norm2(&diff);
        if dist == 0.0 {
            continue;
        }
        let gdiff = sub(
            &eval_aggregated_gradient(p, &x).expect("box has problem shape"),
            &eval_aggregated_gradient(p, &y).expect("box has problem shape"),
        );
        out.smoothness = out.smoothness.max(norm2(&gdiff) / (c.l1 * dist));
        let inner: f64 = gdiff.iter().zip(&diff).map(|(a, b)| a * b).sum();
        let sc = if inner > 0.0 {
            c.mu * dist * dist / inner
        } else {
            f64::INFINITY
        };
        out.strong_convexity = out.strong_convexity.max(sc);

        let z1: Vec<f64> = (0..n * r).map(|_| rng.random_range(-5.0..5.0)).collect();
        let z2: Vec<f64> = (0..n * r).map(|_| rng.random_range(-5.0..5.0)).collect();
        let num = norm2(&sub(&stacked_chi_grad(&x, &z1), &stacked_chi_grad(&y, &z2)));
        let den = c.l2 * (dist + norm2(&sub(&z1, &z2)));
        let ratio = if den > 0.0 {
            num / den
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        out.aggregate_lipschitz = out.aggregate_lipschitz.max(ratio);
    }
    out
}
