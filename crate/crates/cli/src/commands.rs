//! The `tune`, `run`, `sweep` and `verify` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qagt_core::analysis::{
    self, build_h, check_lemma3, check_lemma4, conservation_gaps, diagnostics_series, diagnostics_to_csv,
    fit_linear_rate, initial_bounds, TuningInputs, TuningReport,
};
use qagt_core::codec::{bits_per_scalar, code_log_to_csv, Stream};
use qagt_core::engine::{run, CodeFault, Engine, Mode};
use qagt_core::problems::{make_bandwidth_sharing, make_placement, make_quadratic_synthetic, solve_reference};
use qagt_core::{
    AggregativeProblem, MixingMatrix, QuadraticProblem, ReferenceSolution, RunConfig, ScalingSchedule, Trajectory,
    UniformQuantizer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Auto, ExperimentConfig, GraphSpec, InitialState, ModeSpec, ProblemSpec};
use crate::error::{CliError, Result};

/// Reference solver settings.
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_MAX_ITER: usize = 1_000_000;

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<ModeSpec>,
    pub strict_saturation: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A config with its problem, graph, oracle and initial state built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub problem: QuadraticProblem,
    pub matrix: MixingMatrix,
    pub reference: ReferenceSolution,
    pub x0: Vec<f64>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

impl Experiment {
    pub fn prepare(mut cfg: ExperimentConfig, ov: &Overrides) -> Result<Self> {
        if let Some(mode) = ov.mode {
            cfg.run.mode = mode;
        }
        if ov.strict_saturation {
            cfg.run.strict_saturation = true;
        }
        if let Some(seed) = ov.seed {
            let (lo, hi) = match cfg.run.x0 {
                Some(InitialState::Random { lo, hi, .. }) => (lo, hi),
                _ => (-5.0, 5.0),
            };
            cfg.run.x0 = Some(InitialState::Random { seed, lo, hi });
        }
        if let Some(out) = &ov.out {
            cfg.output.dir = out.clone();
        }

        let mut problem = match &cfg.problem {
            ProblemSpec::Placement { targets, weights } => make_placement(targets, weights)?,
            ProblemSpec::Bandwidth { agents, reg } => make_bandwidth_sharing(*agents, *reg)?,
            ProblemSpec::Quadratic {
                agents,
                dim_x,
                dim_agg,
                seed,
            } => make_quadratic_synthetic(*agents, *dim_x, *dim_agg, *seed)?,
        };
        if let Some(c) = cfg.constants {
            c.validate()?;
            problem = problem.with_constants(c);
        }
        let n = problem.n_agents();
        let matrix = match &cfg.graph {
            GraphSpec::Complete => MixingMatrix::complete(n)?,
            GraphSpec::Ring { self_weight } => MixingMatrix::ring(n, *self_weight)?,
            GraphSpec::File { path } => {
                let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                MixingMatrix::parse(&text)?
            }
        };
        if matrix.n_agents() != n {
            return Err(CliError::Config(format!(
                "graph has {} agents but the problem has {n}",
                matrix.n_agents()
            )));
        }
        let dim = n * problem.dim_x();
        let x0 = match &cfg.run.x0 {
            None => vec![0.0; dim],
            Some(InitialState::Explicit(x)) if x.len() == dim => x.clone(),
            Some(InitialState::Explicit(x)) => {
                return Err(CliError::Config(format!("x0 has {} entries, expected {dim}", x.len())))
            }
            Some(InitialState::Random { seed, lo, hi }) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..dim).map(|_| rng.random_range(*lo..*hi)).collect()
            }
        };
        if let Some(r) = &cfg.reported_x_star {
            if r.len() != dim {
                return Err(CliError::Config(format!(
                    "reported_x_star has {} entries, expected {dim}",
                    r.len()
                )));
            }
        }
        let reference = solve_reference(&problem, ORACLE_TOL, ORACLE_MAX_ITER)?;
        Ok(Self {
            cfg,
            problem,
            matrix,
            reference,
            x0,
        })
    }

    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        Self::prepare(ExperimentConfig::load(path)?, ov)
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.output.dir
    }

    fn tuning_inputs(&self) -> Result<TuningInputs> {
        let (c0, c1, c2) = initial_bounds(&self.problem, &self.x0, &self.reference.x_star)?;
        let r = &self.cfg.run;
        Ok(TuningInputs {
            constants: self.problem.constants(),
            kappa: self.matrix.kappa(),
            n_agents: self.problem.n_agents(),
            dim_x: self.problem.dim_x(),
            dim_agg: self.problem.dim_agg(),
            l0: r.l0,
            alpha: r.alpha.fixed(),
            gamma: r.gamma.fixed(),
            levels: r.levels.fixed(),
            margin: r.margin,
            c0,
            c1,
            c2,
        })
    }

    /// Tunes, failing on any tuning error.
    pub fn tune(&self) -> Result<TuningReport> {
        Ok(analysis::tune(&self.tuning_inputs()?)?)
    }

    /// Resolves `auto` run parameters. Tuning failures are fatal only when
    /// something actually needs resolving.
    pub fn resolve(&self) -> Result<Resolved> {
        let r = &self.cfg.run;
        let report = self.tune();
        let needs_tuning = matches!(r.alpha, Auto::Auto) || matches!(r.gamma, Auto::Auto) || matches!(r.levels, Auto::Auto);
        let report = match report {
            Ok(rep) => Some(rep),
            Err(e) if needs_tuning => return Err(e),
            Err(e) => {
                return Ok(Resolved {
                    alpha: r.alpha.fixed().expect("fixed"),
                    gamma: r.gamma.fixed().expect("fixed"),
                    levels: r.levels.fixed().expect("fixed"),
                    l0: r.l0,
                    report: None,
                    tuning_error: Some(e.to_string()),
                })
            }
        };
        let rep = report.expect("tuned");
        Ok(Resolved {
            alpha: rep.alpha,
            gamma: rep.gamma,
            levels: rep.levels,
            l0: r.l0,
            report: Some(rep),
            tuning_error: None,
        })
    }

    fn run_config(&self, res: &Resolved, mode: Mode, levels: u64) -> Result<RunConfig> {
        let r = &self.cfg.run;
        let mut cfg = RunConfig::new(
            res.alpha,
            ScalingSchedule::new(res.l0, res.gamma)?,
            levels,
            r.rounds,
            self.x0.clone(),
        )
        .with_mode(mode);
        cfg.strict_saturation = r.strict_saturation;
        cfg.stop_tol = r.stop_tol;
        Ok(cfg)
    }

    fn problem_label(&self) -> &'static str {
        match self.cfg.problem {
            ProblemSpec::Placement { .. } => "placement",
            ProblemSpec::Bandwidth { .. } => "bandwidth",
            ProblemSpec::Quadratic { .. } => "quadratic",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub alpha: f64,
    pub gamma: f64,
    pub levels: u64,
    pub l0: f64,
    pub report: Option<TuningReport>,
    /// Why no report is available when every parameter was fixed.
    pub tuning_error: Option<String>,
}

/// `tune`: writes `tuning_report.txt` and returns the report.
pub fn cmd_tune(exp: &Experiment) -> Result<TuningReport> {
    let report = exp.tune()?;
    write_file(exp.out_dir(), "tuning_report.txt", &report.to_text())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeStats {
    pub mode: Mode,
    pub rounds: usize,
    pub final_residual_inf: f64,
    pub final_residual_2: f64,
    /// `None` when every tail residual sits at the numerical floor.
    pub fitted_rate: Option<f64>,
    pub total_bits: u64,
    pub saturations: u64,
    pub mirror_mismatches: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub stats: Vec<ModeStats>,
    /// `max_k ||x_q(k) - x_e(k)||_inf` when both modes ran.
    pub mode_divergence: Option<f64>,
    pub oracle_deviation: Option<f64>,
    pub resolved: Resolved,
    pub text: String,
}

fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::Quantized => "quantized",
        Mode::Exact => "exact",
    }
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map_or("undefined".to_string(), |r| format!("{r:.16e}"))
}

fn stats_for(traj: &Trajectory, x_star: &[f64], mode: Mode) -> ModeStats {
    let res2 = traj.residuals(x_star);
    ModeStats {
        mode,
        rounds: traj.rounds(),
        final_residual_inf: *traj.residuals_inf(x_star).last().expect("nonempty"),
        final_residual_2: *res2.last().expect("nonempty"),
        fitted_rate: fit_linear_rate(&res2, 0.5).ok(),
        total_bits: *traj.bits_cum.last().expect("nonempty"),
        saturations: *traj.saturations_cum.last().expect("nonempty"),
        mirror_mismatches: traj.mirror_mismatch_rounds.len(),
        wall_time_s: traj.wall_time.as_secs_f64(),
    }
}

/// `run`: executes every configured mode and writes trajectories,
/// diagnostics, code streams and the summary.
pub fn cmd_run(exp: &Experiment) -> Result<RunSummary> {
    let res = exp.resolve()?;
    let modes = exp.cfg.run.mode.modes();
    let out = exp.out_dir().to_path_buf();
    let sol = &exp.reference;
    let h = build_h(res.alpha, &exp.problem.constants(), exp.matrix.kappa())?;
    let mut trajs = Vec::new();
    let mut stats = Vec::new();
    for &mode in &modes {
        let traj = run(&exp.problem, &exp.matrix, exp.run_config(&res, mode, res.levels)?)?;
        let suffix = if modes.len() > 1 {
            format!("_{}", mode_label(mode))
        } else {
            String::new()
        };
        if exp.cfg.output.write_trajectory {
            write_file(&out, &format!("trajectory{suffix}.csv"), &traj.to_csv(Some(&sol.x_star)))?;
            if mode == Mode::Quantized {
                write_file(&out, &format!("codes{suffix}.csv"), &code_log_to_csv(&traj.code_log))?;
            }
        }
        let diag = diagnostics_series(&exp.problem, &traj, &sol.x_star, sol.f_star, &h, exp.cfg.run.gamma_j)?;
        write_file(&out, &format!("diagnostics{suffix}.csv"), &diagnostics_to_csv(&diag))?;
        stats.push(stats_for(&traj, &sol.x_star, mode));
        trajs.push(traj);
    }
    let mode_divergence = (trajs.len() == 2).then(|| {
        trajs[0]
            .snapshots
            .iter()
            .zip(&trajs[1].snapshots)
            .flat_map(|(a, b)| a.x.iter().zip(&b.x).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    });
    let oracle_deviation = exp.cfg.reported_x_star.as_ref().map(|r| {
        r.iter()
            .zip(&sol.x_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    if let Some(rep) = &res.report {
        write_file(&out, "tuning_report.txt", &rep.to_text())?;
    }

    let mut text = String::new();
    let mut line = |k: &str, v: String| writeln!(text, "{k} = {v}").unwrap();
    line("problem", exp.problem_label().to_string());
    line("agents", exp.problem.n_agents().to_string());
    line("kappa", format!("{:.16e}", exp.matrix.kappa()));
    line("alpha", format!("{:.16e}", res.alpha));
    line("gamma", format!("{:.16e}", res.gamma));
    line("l0", format!("{:.16e}", res.l0));
    line("levels", res.levels.to_string());
    line("bits_per_scalar", bits_per_scalar(res.levels).to_string());
    line("rounds", exp.cfg.run.rounds.to_string());
    match &exp.cfg.run.x0 {
        Some(InitialState::Random { seed, lo, hi }) => {
            line("x0_seed", seed.to_string());
            line("x0_box", format!("{lo:?} {hi:?}"));
        }
        Some(InitialState::Explicit(_)) => line("x0", "explicit".into()),
        None => line("x0", "origin".into()),
    }
    line("oracle_f_star", format!("{:.16e}", sol.f_star));
    line("oracle_grad_norm", format!("{:.16e}", sol.grad_norm));
    if let Some(d) = oracle_deviation {
        line("reported_x_star_deviation", format!("{d:.16e}"));
    }
    match (&res.report, &res.tuning_error) {
        (Some(r), _) => line("rho_h", format!("{:.16e}", r.rho_h)),
        (None, Some(e)) => line("tuning", format!("unavailable ({e})")),
        _ => {}
    }
    for s in &stats {
        let m = mode_label(s.mode);
        line(&format!("{m}.rounds"), s.rounds.to_string());
        line(&format!("{m}.final_residual_inf"), format!("{:.16e}", s.final_residual_inf));
        line(&format!("{m}.final_residual_2"), format!("{:.16e}", s.final_residual_2));
        line(&format!("{m}.fitted_rate"), fmt_rate(s.fitted_rate));
        line(&format!("{m}.total_bits"), s.total_bits.to_string());
        line(&format!("{m}.saturations"), s.saturations.to_string());
        line(&format!("{m}.mirror_mismatches"), s.mirror_mismatches.to_string());
        line(&format!("{m}.wall_time_s"), format!("{:.6}", s.wall_time_s));
    }
    if let Some(d) = mode_divergence {
        line("max_mode_divergence_inf", format!("{d:.16e}"));
    }
    write_file(&out, "summary.txt", &text)?;
    Ok(RunSummary {
        stats,
        mode_divergence,
        oracle_deviation,
        resolved: res,
        text,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub levels: u64,
    pub bits_per_scalar: u32,
    pub final_residual: Option<f64>,
    pub total_bits: Option<u64>,
    pub saturations: Option<u64>,
    /// Error message when the run failed.
    pub error: Option<String>,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("levels,bits_per_scalar,final_residual,total_bits,saturations,status\n");
    for r in rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.levels,
            r.bits_per_scalar,
            opt(r.final_residual.map(|v| format!("{v:.16e}"))),
            opt(r.total_bits.map(|v| v.to_string())),
            opt(r.saturations.map(|v| v.to_string())),
            r.error.as_deref().map_or("ok".to_string(), |e| format!("\"{}\"", e.replace('"', "'"))),
        )
        .unwrap();
    }
    out
}

/// `sweep`: one quantized run per level, in parallel; rows keep the input
/// order. Failed runs are recorded in their row.
pub fn cmd_sweep(exp: &Experiment, levels: &[u64]) -> Result<Vec<SweepRow>> {
    if levels.is_empty() {
        return Err(CliError::Config("sweep needs at least one level".into()));
    }
    if let Some(bad) = levels.iter().find(|l| **l == 0) {
        return Err(CliError::Config(format!("quantization levels must be positive, got {bad}")));
    }
    let res = exp.resolve()?;
    let x_star = &exp.reference.x_star;
    let rows: Vec<SweepRow> = levels
        .par_iter()
        .map(|&l| {
            let outcome = exp
                .run_config(&res, Mode::Quantized, l)
                .and_then(|cfg| Ok(run(&exp.problem, &exp.matrix, cfg)?));
            let base = SweepRow {
                levels: l,
                bits_per_scalar: bits_per_scalar(l),
                final_residual: None,
                total_bits: None,
                saturations: None,
                error: None,
            };
            match outcome {
                Ok(traj) => SweepRow {
                    final_residual: traj.residuals_inf(x_star).last().copied(),
                    total_bits: traj.bits_cum.last().copied(),
                    saturations: traj.saturations_cum.last().copied(),
                    ..base
                },
                Err(e) => SweepRow {
                    error: Some(e.to_string()),
                    ..base
                },
            }
        })
        .collect();
    write_file(exp.out_dir(), "sweep.csv", &sweep_to_csv(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Fail)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut out = format!("{:<width$}  status  detail\n", "check");
        for c in &self.checks {
            let s = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "SKIP",
            };
            writeln!(out, "{:<width$}  {s:<6}  {}", c.name, c.detail).unwrap();
        }
        out
    }
}

fn outcome(name: String, ok: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
        detail,
    }
}

/// `verify`: conservation, fixed point, contraction inequality, power bound
/// and mirror equality. With `sabotage`, one broadcast code is corrupted
/// halfway through the quantized run.
pub fn cmd_verify(exp: &Experiment, sabotage: bool) -> Result<VerifyReport> {
    let res = exp.resolve()?;
    let sol = &exp.reference;
    let n = exp.problem.n_agents();
    let constants = exp.problem.constants();
    let h = build_h(res.alpha, &constants, exp.matrix.kappa())?;
    let mut checks = Vec::new();

    // one exact step from the oracle fixed point
    {
        let chi0: Vec<f64> = (0..n).flat_map(|_| sol.chi_star.clone()).collect();
        let y0: Vec<f64> = (0..n).flat_map(|_| sol.y_star.clone()).collect();
        let mut cfg = exp.run_config(&res, Mode::Exact, res.levels)?;
        cfg.x0 = sol.x_star.clone();
        cfg.max_rounds = 1;
        let mut eng = Engine::with_trackers(&exp.problem, &exp.matrix, cfg, chi0, y0)?;
        eng.step()?;
        let moved = eng
            .trajectory()
            .last()
            .x
            .iter()
            .zip(&sol.x_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        checks.push(outcome("fixed_point".into(), moved <= 1e-9, format!("step moved x by {moved:.3e}")));
    }

    for mode in exp.cfg.run.mode.modes() {
        let m = mode_label(mode);
        let mut cfg = exp.run_config(&res, mode, res.levels)?;
        if sabotage && mode == Mode::Quantized {
            cfg.fault = Some(CodeFault {
                round: (exp.cfg.run.rounds / 2).max(1),
                agent: 0,
                stream: Stream::Chi,
            });
        }
        let traj = run(&exp.problem, &exp.matrix, cfg)?;

        let (gc, gy) = traj
            .snapshots
            .iter()
            .map(|s| conservation_gaps(&exp.problem, s))
            .fold((0.0f64, 0.0f64), |acc, g| (acc.0.max(g.0), acc.1.max(g.1)));
        checks.push(outcome(
            format!("conservation[{m}]"),
            gc <= 1e-10 && gy <= 1e-10,
            format!("max chi gap {gc:.3e}, max y gap {gy:.3e}"),
        ));

        let lemma3 = check_lemma3(&traj, &h, constants.l2, &sol.x_star);
        checks.push(outcome(
            format!("contraction[{m}]"),
            lemma3.all_ok(),
            format!("{} of {} rounds violated, min slack {:.3e}", lemma3.violations(), lemma3.ok.len(), lemma3.min_slack()),
        ));

        if mode == Mode::Quantized {
            let q = UniformQuantizer::new(res.levels)?;
            let sched = ScalingSchedule::new(res.l0, res.gamma)?;
            let replay = traj.verify_replay(q, sched)?;
            let ok = traj.mirror_mismatch_rounds.is_empty() && replay;
            let detail = match traj.mirror_mismatch_rounds.first() {
                Some(k) => format!("receivers diverged from the sender mirror at round {k}"),
                None if !replay => "code replay did not reproduce the mirrors".into(),
                None => format!("{} rounds replayed bit-identically", traj.snapshots.len()),
            };
            checks.push(outcome(format!("mirror_equality[{m}]"), ok, detail));
        } else {
            checks.push(CheckOutcome {
                name: format!("mirror_equality[{m}]"),
                status: CheckStatus::Skipped,
                detail: "exact mode has no quantization".into(),
            });
        }
    }

    match &res.report {
        Some(rep) => {
            let l4 = check_lemma4(&rep.h, rep.epsilon, 200);
            checks.push(outcome(
                "power_bound".into(),
                l4.holds,
                format!("worst ||H^k|| / (c3 (rho+eps)^k) = {:.3e}", l4.worst_ratio),
            ));
        }
        None => checks.push(outcome(
            "power_bound".into(),
            false,
            format!("no tuning report: {}", res.tuning_error.as_deref().unwrap_or("unknown")),
        )),
    }
    Ok(VerifyReport { checks })
}
