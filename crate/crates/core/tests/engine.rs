use proptest::prelude::*;
use qagt_core::analysis::conservation_gaps;
use qagt_core::codec::{code_log_from_csv, code_log_to_csv, Stream};
use qagt_core::engine::{run, CodeFault};
use qagt_core::problems::{
    eval_aggregated_gradient, make_bandwidth_sharing, make_placement, make_quadratic_synthetic, solve_reference,
};
use qagt_core::{AggregativeProblem, Mode, MixingMatrix, QuadraticProblem, RunConfig, ScalingSchedule, UniformQuantizer};

const TARGETS: [[f64; 2]; 8] = [
    [3.0, 5.0],
    [6.0, 9.0],
    [9.0, 8.0],
    [6.0, 2.0],
    [9.0, 2.0],
    [1.0, 1.0],
    [4.0, 7.0],
    [8.0, 5.0],
];

fn family(kind: u8, n: usize, seed: u64) -> QuadraticProblem {
    match kind {
        0 => make_placement(&TARGETS[..n], &vec![2.0; n]).unwrap(),
        1 => make_bandwidth_sharing(n, 0.5).unwrap(),
        _ => make_quadratic_synthetic(n, 2, 2, seed).unwrap(),
    }
}

fn graph(n: usize, ring: bool) -> MixingMatrix {
    if ring && n >= 3 {
        MixingMatrix::ring(n, 0.4).unwrap()
    } else {
        MixingMatrix::complete(n).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conservation_every_round(
        n in 2usize..9,
        kind in 0u8..3,
        ring in any::<bool>(),
        quantized in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let p = family(kind, n, seed);
        let a = graph(n, ring);
        let x0: Vec<f64> = (0..n * p.dim_x()).map(|k| ((k * 7 + seed as usize) % 11) as f64 / 3.0 - 1.5).collect();
        let alpha = 0.5 * qagt_core::analysis::auto_alpha(&p.constants(), a.kappa()).unwrap();
        let mode = if quantized { Mode::Quantized } else { Mode::Exact };
        let sched = ScalingSchedule::new(5.0, 0.99).unwrap();
        let traj = run(&p, &a, RunConfig::new(alpha, sched, 50, 300, x0).with_mode(mode)).unwrap();
        for s in &traj.snapshots {
            let (gc, gy) = conservation_gaps(&p, s);
            prop_assert!(gc <= 1e-10 && gy <= 1e-10, "gaps {} {}", gc, gy);
        }
        prop_assert!(traj.mirror_mismatch_rounds.is_empty());
    }
}

#[test]
fn single_agent_matches_centralized_descent() {
    let p = make_quadratic_synthetic(1, 3, 2, 4).unwrap();
    let a = MixingMatrix::complete(1).unwrap();
    let alpha = 0.05;
    let mut x = vec![0.4, -1.0, 2.0];
    let cfg = RunConfig::new(alpha, ScalingSchedule::new(1.0, 0.9).unwrap(), 10, 50, x.clone()).with_mode(Mode::Exact);
    let traj = run(&p, &a, cfg).unwrap();
    for snap in traj.snapshots.iter().skip(1) {
        let g = eval_aggregated_gradient(&p, &x).unwrap();
        x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= alpha * gi);
        for (u, v) in snap.x.iter().zip(&x) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn replay_reproduces_reconstructions() {
    let p = make_placement(&TARGETS[..5], &[2.0; 5]).unwrap();
    let a = MixingMatrix::ring(5, 0.5).unwrap();
    let sched = ScalingSchedule::new(10.0, 0.95).unwrap();
    let cfg = RunConfig::new(0.005, sched, 10, 120, vec![0.0; 10]);
    let traj = run(&p, &a, cfg).unwrap();
    let q = UniformQuantizer::new(10).unwrap();
    assert!(traj.verify_replay(q, sched).unwrap());

    // codes survive a CSV round trip
    let log = code_log_from_csv(&code_log_to_csv(&traj.code_log)).unwrap();
    assert_eq!(log, traj.code_log);

    // a corrupted broadcast desynchronizes the receivers from the mirror
    let mut bad = RunConfig::new(0.005, sched, 10, 120, vec![0.0; 10]);
    bad.fault = Some(CodeFault {
        round: 30,
        agent: 2,
        stream: Stream::Y,
    });
    let faulty = run(&p, &a, bad).unwrap();
    assert_eq!(faulty.mirror_mismatch_rounds.first(), Some(&30));
    assert!(!faulty.verify_replay(q, sched).unwrap());
}

#[test]
fn runs_are_deterministic() {
    let p = make_quadratic_synthetic(6, 2, 3, 77).unwrap();
    let a = MixingMatrix::ring(6, 0.3).unwrap();
    let sched = ScalingSchedule::new(4.0, 0.97).unwrap();
    let cfg = RunConfig::new(0.02, sched, 7, 200, vec![1.0; 12]);
    let t1 = run(&p, &a, cfg.clone()).unwrap();
    let t2 = run(&p, &a, cfg).unwrap();
    assert_eq!(t1.to_csv(None), t2.to_csv(None));
    assert_eq!(t1.code_log, t2.code_log);
}

#[test]
fn quantized_tracks_exact_on_placement() {
    let p = make_placement(&TARGETS[..5], &[100.0; 5]).unwrap();
    let a = MixingMatrix::complete(5).unwrap();
    let sol = solve_reference(&p, 1e-12, 100_000).unwrap();
    let sched = ScalingSchedule::new(10.0, (-0.1f64).exp()).unwrap();
    let cfg = RunConfig::new(0.005, sched, 10, 300, vec![0.0; 10]);
    let q = run(&p, &a, cfg.clone()).unwrap();
    let e = run(&p, &a, cfg.with_mode(Mode::Exact)).unwrap();
    let rq = q.residuals_inf(&sol.x_star);
    let re = e.residuals_inf(&sol.x_star);
    assert!(rq.last().unwrap() <= &1e-6, "quantized residual {}", rq.last().unwrap());
    assert!(re.last().unwrap() <= &1e-6, "exact residual {}", re.last().unwrap());
    assert_eq!(q.saturations_cum.last(), Some(&0));
}
