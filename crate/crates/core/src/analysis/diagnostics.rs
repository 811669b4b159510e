//! Per-round error diagnostics computed from a recorded trajectory.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use super::tuning::{c3_constant, spectral_norm3, spectral_radius};
use crate::engine::{consensus_error, Snapshot, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{norm2, norm_inf, sub};
use crate::problems::{eval_global, AggregativeProblem};

/// Residuals at or below this value are treated as numerical zero.
pub const RESIDUAL_FLOOR: f64 = 1e-14;

/// `(||x - x*||, ||chi - 1 (x) chi_bar||, ||y - 1 (x) y_bar||)`.
pub fn compute_theta(snap: &Snapshot, x_star: &[f64], n_agents: usize, dim_agg: usize) -> [f64; 3] {
    [
        norm2(&sub(&snap.x, x_star)),
        consensus_error(&snap.chi, n_agents, dim_agg),
        consensus_error(&snap.y, n_agents, dim_agg),
    ]
}

/// `(0, 2 ||e_chi||, 2 l2 ||e_chi|| + 2 ||e_y||)` with `e = value - reconstruction`.
pub fn error_vector(snap: &Snapshot, l2: f64) -> [f64; 3] {
    let e_chi = norm2(&sub(&snap.chi, &snap.chi_hat));
    let e_y = norm2(&sub(&snap.y, &snap.y_hat));
    [0.0, 2.0 * e_chi, 2.0 * l2 * e_chi + 2.0 * e_y]
}

/// Largest deviations `|mean(chi) - mean(g_i(x_i))|` and
/// `|mean(y) - mean(grad_chi f_i(x_i, chi_i))|` (infinity norm over components).
pub fn conservation_gaps(p: &dyn AggregativeProblem, snap: &Snapshot) -> (f64, f64) {
    let (n, dx, r) = (p.n_agents(), p.dim_x(), p.dim_agg());
    let mut chi_gap = vec![0.0; r];
    let mut y_gap = vec![0.0; r];
    for i in 0..n {
        let xi = &snap.x[i * dx..(i + 1) * dx];
        let chi_i = &snap.chi[i * r..(i + 1) * r];
        let g = p.aggregate_map(i, xi);
        let d = p.grad_chi(i, xi, chi_i);
        for c in 0..r {
            chi_gap[c] += (chi_i[c] - g[c]) / n as f64;
            y_gap[c] += (snap.y[i * r + c] - d[c]) / n as f64;
        }
    }
    (norm_inf(&chi_gap), norm_inf(&y_gap))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma3Check {
    /// `ok[k]` covers the transition from round `k` to `k + 1`.
    pub ok: Vec<bool>,
    /// Smallest componentwise `rhs - lhs` per transition.
    pub slack: Vec<f64>,
}

impl Lemma3Check {
    pub fn all_ok(&self) -> bool {
        self.ok.iter().all(|b| *b)
    }

    pub fn violations(&self) -> usize {
        self.ok.iter().filter(|b| !**b).count()
    }

    pub fn min_slack(&self) -> f64 {
        self.slack.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates `Theta(k+1) <= H Theta(k) + E(k)` componentwise for every
/// recorded transition. A relative slack of `1e-10` absorbs rounding.
pub fn check_lemma3(traj: &Trajectory, h: &Matrix3<f64>, l2: f64, x_star: &[f64]) -> Lemma3Check {
    let (n, r) = (traj.n_agents, traj.dim_agg);
    let thetas: Vec<[f64; 3]> = traj.snapshots.iter().map(|s| compute_theta(s, x_star, n, r)).collect();
    let mut out = Lemma3Check {
        ok: Vec::with_capacity(thetas.len()),
        slack: Vec::with_capacity(thetas.len()),
    };
    for k in 0..thetas.len().saturating_sub(1) {
        let e = error_vector(&traj.snapshots[k], l2);
        let rhs = h * Vector3::from(thetas[k]) + Vector3::from(e);
        let lhs = thetas[k + 1];
        let mut ok = true;
        let mut slack = f64::INFINITY;
        for c in 0..3 {
            let s = rhs[c] - lhs[c];
            slack = slack.min(s);
            if s < -1e-10 * (1.0 + rhs[c].abs()) {
                ok = false;
            }
        }
        out.ok.push(ok);
        out.slack.push(slack);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma4Check {
    pub holds: bool,
    pub c3: f64,
    /// Largest `||H^k|| / (c3 (rho + eps)^k)` over the checked range.
    pub worst_ratio: f64,
}

/// Checks `||H^k|| <= c3 (rho(H) + eps)^k` for `k = 0..=k_max` by direct
/// powering.
pub fn check_lemma4(h: &Matrix3<f64>, epsilon: f64, k_max: usize) -> Lemma4Check {
    let rho = spectral_radius(h);
    let c3 = c3_constant(spectral_norm3(h), epsilon);
    let base = rho + epsilon;
    let mut power = Matrix3::identity();
    let mut worst = 0.0f64;
    for k in 0..=k_max {
        let bound = c3 * base.powi(k as i32);
        worst = worst.max(spectral_norm3(&power) / bound);
        power *= h;
    }
    Lemma4Check {
        holds: worst <= 1.0,
        c3,
        worst_ratio: worst,
    }
}

/// `J(k) = exp(gamma_j k) |f(x(k)) - f*|`.
pub fn performance_index(p: &dyn AggregativeProblem, traj: &Trajectory, f_star: f64, gamma_j: f64) -> Result<Vec<f64>> {
    traj.snapshots
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let gap = (eval_global(p, &s.x)? - f_star).abs();
            Ok(if gap == 0.0 {
                0.0
            } else {
                (gamma_j * k as f64 + gap.ln()).exp()
            })
        })
        .collect()
}

/// Per-round ratio from a least-squares fit of `ln residual` against `k`
/// over the last `tail_fraction` of the series. Points at or below
/// [`RESIDUAL_FLOOR`] are skipped.
pub fn fit_linear_rate(residuals: &[f64], tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let len = residuals.len();
    let window = ((len as f64 * tail_fraction).ceil() as usize).clamp(len.min(2), len);
    let pts: Vec<(f64, f64)> = residuals[len - window..]
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > RESIDUAL_FLOOR && r.is_finite())
        .map(|(k, r)| ((len - window + k) as f64, r.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::RateUndefined);
    }
    let m = pts.len() as f64;
    let kbar = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let vbar = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - kbar) * (p.1 - vbar)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - kbar).powi(2)).sum();
    Ok((sxy / sxx).exp())
}

/// Whether `||Theta(k)|| <= C0 gamma^k` along a trajectory, with the worst
/// ratio.
pub fn check_envelope(traj: &Trajectory, x_star: &[f64], big_c0: f64, gamma: f64) -> (bool, f64) {
    let worst = traj
        .snapshots
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let t = compute_theta(s, x_star, traj.n_agents, traj.dim_agg);
            norm2(&t) / (big_c0 * gamma.powi(k as i32))
        })
        .fold(0.0, f64::max);
    (worst <= 1.0, worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub round: usize,
    pub theta: [f64; 3],
    pub e_vec: [f64; 3],
    pub j: f64,
    pub consensus_chi: f64,
    pub consensus_y: f64,
    /// Whether the contraction inequality held on the step into this round
    /// (`None` at round 0).
    pub lemma3_ok: Option<bool>,
}

pub fn diagnostics_series(
    p: &dyn AggregativeProblem,
    traj: &Trajectory,
    x_star: &[f64],
    f_star: f64,
    h: &Matrix3<f64>,
    gamma_j: f64,
) -> Result<Vec<DiagnosticsRecord>> {
    let l2 = p.constants().l2;
    let j = performance_index(p, traj, f_star, gamma_j)?;
    let lemma3 = check_lemma3(traj, h, l2, x_star);
    let (n, r) = (traj.n_agents, traj.dim_agg);
    Ok(traj
        .snapshots
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let theta = compute_theta(s, x_star, n, r);
            DiagnosticsRecord {
                round: k,
                theta,
                e_vec: error_vector(s, l2),
                j: j[k],
                consensus_chi: theta[1],
                consensus_y: theta[2],
                lemma3_ok: k.checked_sub(1).map(|prev| lemma3.ok[prev]),
            }
        })
        .collect())
}

/// Columns `round,theta_1,theta_2,theta_3,e_2,e_3,J,lemma3_ok`.
pub fn diagnostics_to_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::from("round,theta_1,theta_2,theta_3,e_2,e_3,J,lemma3_ok\n");
    for d in records {
        let ok = match d.lemma3_ok {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{ok}",
            d.round, d.theta[0], d.theta[1], d.theta[2], d.e_vec[1], d.e_vec[2], d.j
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tuning::build_h;
    use crate::codec::ScalingSchedule;
    use crate::engine::{run, Engine, Mode, RunConfig};
    use crate::problems::{make_quadratic_synthetic, solve_reference, RegularityConstants};
    use crate::topology::MixingMatrix;
    use approx::assert_relative_eq;

    #[test]
    fn rate_of_geometric_series() {
        let s: Vec<f64> = (0..200).map(|k| 0.9f64.powi(k)).collect();
        assert_relative_eq!(fit_linear_rate(&s, 0.5).unwrap(), 0.9, max_relative = 1e-6);
        assert_relative_eq!(fit_linear_rate(&[3.0; 50], 0.5).unwrap(), 1.0, max_relative = 1e-12);
        assert_eq!(fit_linear_rate(&[1e-16; 50], 0.5), Err(Error::RateUndefined));
        assert!(fit_linear_rate(&s, 0.0).is_err());
    }

    #[test]
    fn rate_skips_floor() {
        let mut s: Vec<f64> = (0..100).map(|k| 0.8f64.powi(k)).collect();
        s.extend([0.0; 20]);
        assert_relative_eq!(fit_linear_rate(&s, 0.5).unwrap(), 0.8, max_relative = 1e-9);
    }

    #[test]
    fn power_bound_diagonal_and_k0() {
        let h = Matrix3::from_diagonal(&Vector3::new(0.5, 0.3, 0.1));
        let c = check_lemma4(&h, 0.1, 100);
        assert!(c.holds);
        assert!(c.c3 >= 3.0 * 3f64.sqrt());
        let c = check_lemma4(&h, 0.1, 0);
        assert!(c.worst_ratio <= 1.0 / (3.0 * 3f64.sqrt()) + 1e-15);
    }

    #[test]
    fn theta_vanishes_at_fixed_point() {
        let p = make_quadratic_synthetic(3, 2, 2, 5).unwrap();
        let a = MixingMatrix::ring(3, 0.5).unwrap();
        let sol = solve_reference(&p, 1e-12, 10_000).unwrap();
        let chi0: Vec<f64> = (0..3).flat_map(|_| sol.chi_star.clone()).collect();
        let y0: Vec<f64> = (0..3).flat_map(|_| sol.y_star.clone()).collect();
        let sched = ScalingSchedule::new(1.0, 0.9).unwrap();
        let cfg = RunConfig::new(0.01, sched, 10, 1, sol.x_star.clone()).with_mode(Mode::Exact);
        let eng = Engine::with_trackers(&p, &a, cfg, chi0, y0).unwrap();
        let t = compute_theta(&eng.trajectory().snapshots[0], &sol.x_star, 3, 2);
        assert!(t.iter().all(|v| *v < 1e-9), "{t:?}");
    }

    #[test]
    fn consensus_matches_engine_record() {
        let p = make_quadratic_synthetic(4, 1, 2, 2).unwrap();
        let a = MixingMatrix::ring(4, 0.4).unwrap();
        let sched = ScalingSchedule::new(5.0, 0.95).unwrap();
        let traj = run(&p, &a, RunConfig::new(0.005, sched, 20, 30, vec![1.0, -1.0, 0.5, 2.0])).unwrap();
        let x_star = vec![0.0; 4];
        for (s, (cc, cy)) in traj.snapshots.iter().zip(traj.consensus_errors()) {
            let t = compute_theta(s, &x_star, 4, 2);
            assert_eq!(t[1], cc);
            assert_eq!(t[2], cy);
        }
    }

    #[test]
    fn exact_mode_has_zero_error_vector() {
        let p = make_quadratic_synthetic(3, 1, 1, 2).unwrap();
        let a = MixingMatrix::complete(3).unwrap();
        let sched = ScalingSchedule::new(5.0, 0.95).unwrap();
        let traj = run(&p, &a, RunConfig::new(0.01, sched, 10, 5, vec![1.0; 3]).with_mode(Mode::Exact)).unwrap();
        for s in &traj.snapshots {
            assert_eq!(error_vector(s, 3.0), [0.0; 3]);
        }
    }

    #[test]
    fn contraction_check_negative_control() {
        // Stiff local costs and a weak aggregate, started with opposite
        // offsets along the stiff direction: the l1 terms carry the bound.
        use crate::problems::{Family, QuadraticAgent, QuadraticProblem};
        use nalgebra::{DMatrix, DVector};
        let agents = (0..2)
            .map(|i| QuadraticAgent {
                p: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0])),
                b: DVector::from_vec(vec![i as f64, 1.0]),
                c: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
                d: DMatrix::zeros(1, 1),
                e: DVector::zeros(1),
                offset: 0.0,
                g: DMatrix::from_row_slice(1, 2, &[0.005, 0.0]),
            })
            .collect();
        let p = QuadraticProblem::new(Family::Custom, agents).unwrap();
        let a = MixingMatrix::complete(2).unwrap();
        let sol = solve_reference(&p, 1e-12, 100_000).unwrap();
        let c = p.constants();
        let kappa = a.kappa();
        let alpha = crate::analysis::auto_alpha(&c, kappa).unwrap();
        let mut x0 = sol.x_star.clone();
        x0[0] += 3.0;
        x0[2] -= 3.0;
        let sched = ScalingSchedule::new(50.0, 0.999).unwrap();
        let traj = run(&p, &a, RunConfig::new(alpha, sched, 1000, 100, x0).with_mode(Mode::Exact)).unwrap();
        let honest = check_lemma3(&traj, &build_h(alpha, &c, kappa).unwrap(), c.l2, &sol.x_star);
        assert!(honest.all_ok(), "min slack {}", honest.min_slack());
        let weak = RegularityConstants {
            l1: c.l1 / 2.0,
            ..c
        };
        let broken = check_lemma3(&traj, &build_h(alpha, &weak, kappa).unwrap(), c.l2, &sol.x_star);
        assert!(broken.violations() > 0);
    }

    #[test]
    fn csv_header_and_rows() {
        let rec = DiagnosticsRecord {
            round: 0,
            theta: [1.0, 2.0, 3.0],
            e_vec: [0.0, 4.0, 5.0],
            j: 6.0,
            consensus_chi: 2.0,
            consensus_y: 3.0,
            lemma3_ok: None,
        };
        let csv = diagnostics_to_csv(&[rec.clone(), DiagnosticsRecord { round: 1, lemma3_ok: Some(true), ..rec }]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "round,theta_1,theta_2,theta_3,e_2,e_3,J,lemma3_ok");
        assert!(lines[1].ends_with(','));
        assert!(lines[2].ends_with(",1"));
    }
}
