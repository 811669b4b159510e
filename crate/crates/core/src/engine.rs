//! Synchronous-round quantized aggregative gradient tracking.
//!
//! Every round runs five phases, all agents reading the round-`k` state:
//!
//! 1. `x_i <- x_i - alpha [grad_x f_i(x_i, chi_i) + jac g_i(x_i) y_i]`
//! 2. `chi_i <- sum_j a_ij chi_hat_j + g_i(x_i') - g_i(x_i) + chi_i - chi_hat_i`
//! 3. `y_i <- sum_j a_ij y_hat_j + grad_chi f_i(x_i', chi_i') - grad_chi f_i(x_i, chi_i) + y_i - y_hat_i`
//! 4. each agent encodes its new `chi_i`, `y_i` against its own mirrors
//! 5. every receiver decodes the broadcast codes
//!
//! In [`Mode::Exact`] phases 4-5 are replaced by `chi_hat = chi`,
//! `y_hat = y`, which is the unquantized baseline.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::codec::{ChannelCodec, CodeRecord, ScalingSchedule, Stream, UniformQuantizer};
use crate::error::{Error, Result};
use crate::linalg::{norm2, norm_inf, sub};
use crate::problems::{jacobian_apply, AggregativeProblem};
use crate::topology::MixingMatrix;

/// Bits charged per scalar when states are exchanged unquantized.
pub const EXACT_BITS_PER_SCALAR: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Quantized,
    Exact,
}

/// Corrupts the first code component of one broadcast as received by every
/// neighbour. Used as a negative control for the mirror-equality checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeFault {
    pub round: usize,
    pub agent: usize,
    pub stream: Stream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub schedule: ScalingSchedule,
    pub levels: u64,
    pub max_rounds: usize,
    pub mode: Mode,
    /// Stacked initial decisions, length `N * n`.
    pub x0: Vec<f64>,
    pub strict_saturation: bool,
    /// Stop once `||x(k) - x(k-1)||_inf < stop_tol`; `0` runs every round.
    pub stop_tol: f64,
    pub fault: Option<CodeFault>,
}

impl RunConfig {
    pub fn new(alpha: f64, schedule: ScalingSchedule, levels: u64, max_rounds: usize, x0: Vec<f64>) -> Self {
        Self {
            alpha,
            schedule,
            levels,
            max_rounds,
            mode: Mode::Quantized,
            x0,
            strict_saturation: false,
            stop_tol: 0.0,
            fault: None,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.max_rounds == 0 {
            return Err(Error::Parameter("max_rounds must be at least 1".into()));
        }
        if self.levels == 0 {
            return Err(Error::Parameter("L must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stacked network state after one round. `chi_hat` and `y_hat` are the
/// senders' mirrors (equal to `chi` and `y` in exact mode).
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub x: Vec<f64>,
    pub chi: Vec<f64>,
    pub y: Vec<f64>,
    pub chi_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_agents: usize,
    pub dim_x: usize,
    pub dim_agg: usize,
    pub mode: Mode,
    /// One entry per round including the initial state.
    pub snapshots: Vec<Snapshot>,
    pub bits_cum: Vec<u64>,
    pub zero_free_bits_cum: Vec<u64>,
    pub saturations_cum: Vec<u64>,
    /// Broadcast codes in send order (quantized mode only).
    pub code_log: Vec<CodeRecord>,
    /// Rounds at which some receiver's reconstruction differed from the
    /// sender's mirror.
    pub mirror_mismatch_rounds: Vec<usize>,
    pub wall_time: Duration,
}

impl Trajectory {
    pub fn rounds(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }

    /// `||x(k) - x*||_2` for every round.
    pub fn residuals(&self, x_star: &[f64]) -> Vec<f64> {
        self.snapshots.iter().map(|s| norm2(&sub(&s.x, x_star))).collect()
    }

    /// `||x(k) - x*||_inf` for every round.
    pub fn residuals_inf(&self, x_star: &[f64]) -> Vec<f64> {
        self.snapshots.iter().map(|s| norm_inf(&sub(&s.x, x_star))).collect()
    }

    /// Consensus errors of the `chi` and `y` trackers per round.
    pub fn consensus_errors(&self) -> Vec<(f64, f64)> {
        let (n, r) = (self.n_agents, self.dim_agg);
        self.snapshots
            .iter()
            .map(|s| (consensus_error(&s.chi, n, r), consensus_error(&s.y, n, r)))
            .collect()
    }

    /// Feeds the logged codes through fresh decoders and checks that every
    /// reconstruction matches the recorded mirrors bit for bit.
    pub fn verify_replay(&self, quantizer: UniformQuantizer, schedule: ScalingSchedule) -> Result<bool> {
        if self.mode == Mode::Exact {
            return Ok(true);
        }
        let (n, r) = (self.n_agents, self.dim_agg);
        let mut decoders: Vec<[ChannelCodec; 2]> = (0..n)
            .map(|_| {
                [
                    ChannelCodec::new(quantizer, schedule, r),
                    ChannelCodec::new(quantizer, schedule, r),
                ]
            })
            .collect();
        let per_round = 2 * n;
        if self.code_log.len() != per_round * self.snapshots.len() {
            return Err(Error::Protocol(format!(
                "code log has {} records, expected {}",
                self.code_log.len(),
                per_round * self.snapshots.len()
            )));
        }
        for (k, chunk) in self.code_log.chunks(per_round).enumerate() {
            for rec in chunk {
                if rec.round != k {
                    return Err(Error::Protocol(format!(
                        "record for round {} found in round {k}",
                        rec.round
                    )));
                }
                let slot = match rec.stream {
                    Stream::Chi => 0,
                    Stream::Y => 1,
                };
                decoders[rec.agent][slot].decode(&rec.codes)?;
            }
            let snap = &self.snapshots[k];
            for (i, dec) in decoders.iter().enumerate() {
                if dec[0].recon() != &snap.chi_hat[i * r..(i + 1) * r]
                    || dec[1].recon() != &snap.y_hat[i * r..(i + 1) * r]
                {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// CSV: `round`, then per agent the `x`, `chi` and `y` components, then
    /// `residual_x` (empty without `x_star`), `bits_cum`, `saturations_cum`.
    /// Floats carry 17 significant digits.
    pub fn to_csv(&self, x_star: Option<&[f64]>) -> String {
        let (n, dx, r) = (self.n_agents, self.dim_x, self.dim_agg);
        let mut out = String::from("round");
        for i in 0..n {
            for c in 0..dx {
                write!(out, ",x_{i}_{c}").unwrap();
            }
            for c in 0..r {
                write!(out, ",chi_{i}_{c}").unwrap();
            }
            for c in 0..r {
                write!(out, ",y_{i}_{c}").unwrap();
            }
        }
        out.push_str(",residual_x,bits_cum,saturations_cum\n");
        for (k, s) in self.snapshots.iter().enumerate() {
            write!(out, "{k}").unwrap();
            for i in 0..n {
                for v in s.x[i * dx..(i + 1) * dx]
                    .iter()
                    .chain(&s.chi[i * r..(i + 1) * r])
                    .chain(&s.y[i * r..(i + 1) * r])
                {
                    write!(out, ",{v:.16e}").unwrap();
                }
            }
            match x_star {
                Some(xs) => write!(out, ",{:.16e}", norm2(&sub(&s.x, xs))).unwrap(),
                None => out.push(','),
            }
            writeln!(out, ",{},{}", self.bits_cum[k], self.saturations_cum[k]).unwrap();
        }
        out
    }
}

struct Inbound {
    from: usize,
    chi: ChannelCodec,
    y: ChannelCodec,
}

/// `||v - 1 (x) mean(v)||_2` for a stacked vector of `n` blocks of size `r`.
pub fn consensus_error(stacked: &[f64], n: usize, r: usize) -> f64 {
    let mut mean = vec![0.0; r];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(&stacked[i * r..(i + 1) * r]) {
            *m += v / n as f64;
        }
    }
    stacked
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean[k % r]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Stepwise executor. Most callers want [`run`].
pub struct Engine<'a> {
    problem: &'a dyn AggregativeProblem,
    matrix: &'a MixingMatrix,
    cfg: RunConfig,
    round: usize,
    x: Vec<f64>,
    chi: Vec<f64>,
    y: Vec<f64>,
    /// Per agent: mirrors of its own chi and y streams.
    outbound: Vec<[ChannelCodec; 2]>,
    /// Per agent: decoders for each in-neighbour.
    inbound: Vec<Vec<Inbound>>,
    traj: Trajectory,
}

impl<'a> Engine<'a> {
    /// Standard initialization: `chi_i(0) = g_i(x_i(0))`,
    /// `y_i(0) = grad_chi f_i(x_i(0), chi_i(0))`.
    pub fn new(problem: &'a dyn AggregativeProblem, matrix: &'a MixingMatrix, cfg: RunConfig) -> Result<Self> {
        Self::check_shapes(problem, matrix, &cfg)?;
        let (n, dx) = (problem.n_agents(), problem.dim_x());
        let mut chi = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let xi = &cfg.x0[i * dx..(i + 1) * dx];
            let gi = problem.aggregate_map(i, xi);
            y.extend(problem.grad_chi(i, xi, &gi));
            chi.extend(gi);
        }
        Self::with_trackers(problem, matrix, cfg, chi, y)
    }

    /// Starts from arbitrary tracker values instead of the standard
    /// initialization (used for fixed-point checks).
    pub fn with_trackers(
        problem: &'a dyn AggregativeProblem,
        matrix: &'a MixingMatrix,
        cfg: RunConfig,
        chi0: Vec<f64>,
        y0: Vec<f64>,
    ) -> Result<Self> {
        Self::check_shapes(problem, matrix, &cfg)?;
        let (n, r) = (problem.n_agents(), problem.dim_agg());
        for v in [&chi0, &y0] {
            if v.len() != n * r {
                return Err(Error::Shape {
                    expected: n * r,
                    actual: v.len(),
                });
            }
        }
        let quantizer = UniformQuantizer::new(cfg.levels)?;
        let codec = || ChannelCodec::new(quantizer, cfg.schedule, r).strict(cfg.strict_saturation);
        let (outbound, inbound) = match cfg.mode {
            Mode::Quantized => (
                (0..n).map(|_| [codec(), codec()]).collect(),
                (0..n)
                    .map(|i| {
                        matrix
                            .in_neighbors(i)
                            .into_iter()
                            .map(|from| Inbound {
                                from,
                                chi: codec(),
                                y: codec(),
                            })
                            .collect()
                    })
                    .collect(),
            ),
            Mode::Exact => (Vec::new(), Vec::new()),
        };
        let traj = Trajectory {
            n_agents: n,
            dim_x: problem.dim_x(),
            dim_agg: r,
            mode: cfg.mode,
            snapshots: Vec::with_capacity(cfg.max_rounds + 1),
            bits_cum: Vec::with_capacity(cfg.max_rounds + 1),
            zero_free_bits_cum: Vec::with_capacity(cfg.max_rounds + 1),
            saturations_cum: Vec::with_capacity(cfg.max_rounds + 1),
            code_log: Vec::new(),
            mirror_mismatch_rounds: Vec::new(),
            wall_time: Duration::ZERO,
        };
        let mut engine = Self {
            problem,
            matrix,
            x: cfg.x0.clone(),
            cfg,
            round: 0,
            chi: chi0,
            y: y0,
            outbound,
            inbound,
            traj,
        };
        engine.check_finite(0)?;
        engine.communicate()?;
        Ok(engine)
    }

    fn check_shapes(problem: &dyn AggregativeProblem, matrix: &MixingMatrix, cfg: &RunConfig) -> Result<()> {
        cfg.validate()?;
        if matrix.n_agents() != problem.n_agents() {
            return Err(Error::Shape {
                expected: problem.n_agents(),
                actual: matrix.n_agents(),
            });
        }
        let expected = problem.n_agents() * problem.dim_x();
        if cfg.x0.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: cfg.x0.len(),
            });
        }
        Ok(())
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }

    fn check_finite(&self, round: usize) -> Result<()> {
        let finite = self.x.iter().chain(&self.chi).chain(&self.y).all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Divergence { round })
        }
    }

    /// Stacked mirrors `chi_hat`, `y_hat` as seen by their senders.
    fn mirrors(&self) -> (Vec<f64>, Vec<f64>) {
        match self.cfg.mode {
            Mode::Exact => (self.chi.clone(), self.y.clone()),
            Mode::Quantized => (
                self.outbound.iter().flat_map(|o| o[0].recon().to_vec()).collect(),
                self.outbound.iter().flat_map(|o| o[1].recon().to_vec()).collect(),
            ),
        }
    }

    /// Phases 4-5 for the current round, then records the snapshot.
    fn communicate(&mut self) -> Result<()> {
        let k = self.round;
        let (n, r) = (self.problem.n_agents(), self.problem.dim_agg());
        let levels = self.cfg.levels as i64;
        if self.cfg.mode == Mode::Quantized {
            for i in 0..n {
                for (slot, stream) in [(0usize, Stream::Chi), (1, Stream::Y)] {
                    let value = match stream {
                        Stream::Chi => &self.chi[i * r..(i + 1) * r],
                        Stream::Y => &self.y[i * r..(i + 1) * r],
                    };
                    let sent = self.outbound[i][slot].encode(value).map_err(|e| match e {
                        Error::Saturation { .. } => Error::Saturation { round: k },
                        other => other,
                    })?;
                    let mut wire = sent;
                    if self.cfg.fault == Some(CodeFault { round: k, agent: i, stream }) {
                        wire[0] = if wire[0] < levels { wire[0] + 1 } else { wire[0] - 1 };
                    }
                    for receiver in self.inbound.iter_mut() {
                        for inb in receiver.iter_mut().filter(|inb| inb.from == i) {
                            match stream {
                                Stream::Chi => inb.chi.decode(&wire)?,
                                Stream::Y => inb.y.decode(&wire)?,
                            };
                        }
                    }
                    self.traj.code_log.push(CodeRecord {
                        round: k,
                        agent: i,
                        stream,
                        codes: wire,
                    });
                }
            }
            let in_sync = self.inbound.iter().all(|rx| {
                rx.iter().all(|inb| {
                    inb.chi.recon() == self.outbound[inb.from][0].recon()
                        && inb.y.recon() == self.outbound[inb.from][1].recon()
                })
            });
            if !in_sync {
                self.traj.mirror_mismatch_rounds.push(k);
            }
        }

        let (chi_hat, y_hat) = self.mirrors();
        let (bits, zero_free, sats) = match self.cfg.mode {
            Mode::Quantized => self.outbound.iter().flatten().fold((0, 0, 0), |acc, c| {
                (acc.0 + c.bits_sent(), acc.1 + c.zero_free_bits(), acc.2 + c.saturations())
            }),
            Mode::Exact => {
                let b = (k as u64 + 1) * 2 * (n * r) as u64 * EXACT_BITS_PER_SCALAR;
                (b, b, 0)
            }
        };
        self.traj.bits_cum.push(bits);
        self.traj.zero_free_bits_cum.push(zero_free);
        self.traj.saturations_cum.push(sats);
        self.traj.snapshots.push(Snapshot {
            x: self.x.clone(),
            chi: self.chi.clone(),
            y: self.y.clone(),
            chi_hat,
            y_hat,
        });
        Ok(())
    }

    /// Weighted sum `sum_j a_ij v_hat_j` using agent `i`'s own view of its
    /// neighbours: its mirror for `j = i`, its decoders otherwise.
    fn mixed(&self, i: usize, slot: usize, own_hat: &[f64], stacked_hat: &[f64]) -> Vec<f64> {
        let r = self.problem.dim_agg();
        let mut acc: Vec<f64> = own_hat.iter().map(|v| self.matrix.weight(i, i) * v).collect();
        match self.cfg.mode {
            Mode::Exact => {
                for j in self.matrix.in_neighbors(i) {
                    let a = self.matrix.weight(i, j);
                    for (acc, v) in acc.iter_mut().zip(&stacked_hat[j * r..(j + 1) * r]) {
                        *acc += a * v;
                    }
                }
            }
            Mode::Quantized => {
                for inb in &self.inbound[i] {
                    let a = self.matrix.weight(i, inb.from);
                    let recon = if slot == 0 { inb.chi.recon() } else { inb.y.recon() };
                    for (acc, v) in acc.iter_mut().zip(recon) {
                        *acc += a * v;
                    }
                }
            }
        }
        acc
    }

    /// Advances one synchronous round.
    pub fn step(&mut self) -> Result<()> {
        let p = self.problem;
        let (n, dx, r) = (p.n_agents(), p.dim_x(), p.dim_agg());
        let alpha = self.cfg.alpha;
        let (chi_hat, y_hat) = self.mirrors();

        let mut x_new = Vec::with_capacity(n * dx);
        for i in 0..n {
            let xi = &self.x[i * dx..(i + 1) * dx];
            let chi_i = &self.chi[i * r..(i + 1) * r];
            let y_i = &self.y[i * r..(i + 1) * r];
            let gx = p.grad_x(i, xi, chi_i);
            let corr = jacobian_apply(&p.aggregate_jacobian(i, xi), y_i);
            x_new.extend(xi.iter().zip(gx.iter().zip(&corr)).map(|(x, (g, c))| x - alpha * (g + c)));
        }

        let mut chi_new = Vec::with_capacity(n * r);
        for i in 0..n {
            let own = &chi_hat[i * r..(i + 1) * r];
            let mix = self.mixed(i, 0, own, &chi_hat);
            let g_new = p.aggregate_map(i, &x_new[i * dx..(i + 1) * dx]);
            let g_old = p.aggregate_map(i, &self.x[i * dx..(i + 1) * dx]);
            let chi_i = &self.chi[i * r..(i + 1) * r];
            for c in 0..r {
                chi_new.push(mix[c] + g_new[c] - g_old[c] + chi_i[c] - own[c]);
            }
        }

        let mut y_new = Vec::with_capacity(n * r);
        for i in 0..n {
            let own = &y_hat[i * r..(i + 1) * r];
            let mix = self.mixed(i, 1, own, &y_hat);
            let d_new = p.grad_chi(i, &x_new[i * dx..(i + 1) * dx], &chi_new[i * r..(i + 1) * r]);
            let d_old = p.grad_chi(i, &self.x[i * dx..(i + 1) * dx], &self.chi[i * r..(i + 1) * r]);
            let y_i = &self.y[i * r..(i + 1) * r];
            for c in 0..r {
                y_new.push(mix[c] + d_new[c] - d_old[c] + y_i[c] - own[c]);
            }
        }

        self.x = x_new;
        self.chi = chi_new;
        self.y = y_new;
        self.round += 1;
        self.check_finite(self.round)?;
        self.communicate()
    }
}

/// Runs until `max_rounds` or the optional step-size stop criterion.
pub fn run(problem: &dyn AggregativeProblem, matrix: &MixingMatrix, cfg: RunConfig) -> Result<Trajectory> {
    let start = Instant::now();
    let max_rounds = cfg.max_rounds;
    let stop_tol = cfg.stop_tol;
    let mut engine = Engine::new(problem, matrix, cfg)?;
    for _ in 0..max_rounds {
        engine.step()?;
        if stop_tol > 0.0 {
            let snaps = &engine.traj.snapshots;
            let (a, b) = (&snaps[snaps.len() - 1].x, &snaps[snaps.len() - 2].x);
            if norm_inf(&sub(a, b)) < stop_tol {
                break;
            }
        }
    }
    let mut traj = engine.into_trajectory();
    traj.wall_time = start.elapsed();
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_placement, make_quadratic_synthetic, solve_reference};
    use approx::assert_abs_diff_eq;

    fn schedule() -> ScalingSchedule {
        ScalingSchedule::new(10.0, 0.95).unwrap()
    }

    #[test]
    fn single_agent_exact_step_is_gradient_descent() {
        // N = 1: chi = g(x), y = grad_chi f, so one step is plain gradient descent.
        let p = make_quadratic_synthetic(1, 3, 2, 9).unwrap();
        let a = MixingMatrix::complete(1).unwrap();
        let x0 = vec![0.3, -0.7, 1.1];
        let alpha = 0.05;
        let cfg = RunConfig::new(alpha, schedule(), 10, 1, x0.clone()).with_mode(Mode::Exact);
        let traj = run(&p, &a, cfg).unwrap();
        let grad = crate::problems::eval_aggregated_gradient(&p, &x0).unwrap();
        for c in 0..3 {
            assert_abs_diff_eq!(traj.snapshots[1].x[c], x0[c] - alpha * grad[c], epsilon = 1e-14);
        }
    }

    #[test]
    fn snapshot_count_and_exact_mode_recon() {
        let p = make_quadratic_synthetic(3, 2, 2, 1).unwrap();
        let a = MixingMatrix::ring(3, 0.5).unwrap();
        let cfg = RunConfig::new(0.01, schedule(), 10, 7, vec![0.5; 6]).with_mode(Mode::Exact);
        let traj = run(&p, &a, cfg).unwrap();
        assert_eq!(traj.snapshots.len(), 8);
        for s in &traj.snapshots {
            assert_eq!(s.chi, s.chi_hat);
            assert_eq!(s.y, s.y_hat);
        }
    }

    #[test]
    fn exact_mode_ignores_codec_parameters() {
        let p = make_quadratic_synthetic(4, 2, 3, 3).unwrap();
        let a = MixingMatrix::ring(4, 0.4).unwrap();
        let x0 = vec![1.0, -1.0, 0.5, 0.2, 0.0, 0.3, -0.4, 0.9];
        let t1 = run(&p, &a, RunConfig::new(0.02, schedule(), 10, 50, x0.clone()).with_mode(Mode::Exact)).unwrap();
        let other = ScalingSchedule::new(0.1, 0.5).unwrap();
        let t2 = run(&p, &a, RunConfig::new(0.02, other, 1, 50, x0).with_mode(Mode::Exact)).unwrap();
        assert_eq!(t1.snapshots, t2.snapshots);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let p = make_placement(&[[3.0, 5.0], [6.0, 9.0], [9.0, 8.0]], &[2.0; 3]).unwrap();
        let a = MixingMatrix::ring(3, 0.4).unwrap();
        let sol = solve_reference(&p, 1e-12, 10_000).unwrap();
        let chi0: Vec<f64> = (0..3).flat_map(|_| sol.chi_star.clone()).collect();
        let y0: Vec<f64> = (0..3).flat_map(|_| sol.y_star.clone()).collect();
        let cfg = RunConfig::new(0.01, schedule(), 10, 1, sol.x_star.clone()).with_mode(Mode::Exact);
        let mut eng = Engine::with_trackers(&p, &a, cfg, chi0, y0).unwrap();
        eng.step().unwrap();
        let moved = norm_inf(&sub(&eng.trajectory().last().x, &sol.x_star));
        assert!(moved <= 1e-9, "fixed point moved by {moved}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = make_quadratic_synthetic(3, 2, 2, 1).unwrap();
        let a = MixingMatrix::complete(4).unwrap();
        let cfg = RunConfig::new(0.01, schedule(), 10, 5, vec![0.0; 6]);
        assert!(matches!(run(&p, &a, cfg), Err(Error::Shape { .. })));
        let a = MixingMatrix::complete(3).unwrap();
        let cfg = RunConfig::new(0.01, schedule(), 10, 5, vec![0.0; 5]);
        assert!(matches!(run(&p, &a, cfg), Err(Error::Shape { .. })));
        let cfg = RunConfig::new(0.01, schedule(), 10, 0, vec![0.0; 6]);
        assert!(matches!(run(&p, &a, cfg), Err(Error::Parameter(_))));
    }

    #[test]
    fn strict_saturation_reports_round() {
        let p = make_placement(&[[3.0, 5.0], [6.0, 9.0], [9.0, 8.0]], &[1.0; 3]).unwrap();
        let a = MixingMatrix::complete(3).unwrap();
        let tight = ScalingSchedule::new(0.1, 0.5).unwrap();
        let mut cfg = RunConfig::new(0.01, tight, 1, 10, vec![5.0; 6]);
        cfg.strict_saturation = true;
        assert_eq!(run(&p, &a, cfg).unwrap_err(), Error::Saturation { round: 0 });
    }

    #[test]
    fn divergence_is_detected() {
        let p = make_placement(&[[3.0, 5.0], [6.0, 9.0], [9.0, 8.0]], &[100.0; 3]).unwrap();
        let a = MixingMatrix::complete(3).unwrap();
        let cfg = RunConfig::new(1.0, schedule(), 10, 500, vec![5.0; 6]).with_mode(Mode::Exact);
        assert!(matches!(run(&p, &a, cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn fault_breaks_mirror_equality() {
        let p = make_quadratic_synthetic(3, 2, 2, 1).unwrap();
        let a = MixingMatrix::ring(3, 0.5).unwrap();
        let mut cfg = RunConfig::new(0.01, schedule(), 10, 5, vec![0.5; 6]);
        let clean = run(&p, &a, cfg.clone()).unwrap();
        assert!(clean.mirror_mismatch_rounds.is_empty());
        cfg.fault = Some(CodeFault {
            round: 2,
            agent: 1,
            stream: Stream::Chi,
        });
        let faulty = run(&p, &a, cfg).unwrap();
        assert_eq!(faulty.mirror_mismatch_rounds.first(), Some(&2));
    }

    #[test]
    fn bits_accounting() {
        let p = make_quadratic_synthetic(3, 2, 2, 1).unwrap();
        let a = MixingMatrix::complete(3).unwrap();
        let traj = run(&p, &a, RunConfig::new(0.01, schedule(), 10, 4, vec![0.5; 6])).unwrap();
        // 3 agents x 2 streams x 2 scalars x 5 bits per round, 5 rounds incl. k = 0
        assert_eq!(traj.bits_cum, vec![60, 120, 180, 240, 300]);
        assert_eq!(traj.code_log.len(), 5 * 6);
    }

    #[test]
    fn csv_layout() {
        let p = make_quadratic_synthetic(2, 1, 1, 1).unwrap();
        let a = MixingMatrix::complete(2).unwrap();
        let traj = run(&p, &a, RunConfig::new(0.01, schedule(), 10, 2, vec![0.5, 0.1])).unwrap();
        let csv = traj.to_csv(Some(&[0.0, 0.0]));
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,x_0_0,chi_0_0,y_0_0,x_1_0,chi_1_0,y_1_0,residual_x,bits_cum,saturations_cum"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 10);
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.5);
        assert_eq!(csv.lines().count(), 4);
    }
}
