use qagt_core::analysis::{
    build_h, check_envelope, check_lemma3, check_lemma4, fit_linear_rate, initial_bounds, performance_index,
    spectral_radius, tune, TuningInputs, TuningReport,
};
use qagt_core::engine::run;
use qagt_core::problems::{
    check_constants, check_local_derivatives, make_bandwidth_sharing, make_placement, make_quadratic_synthetic,
    operating_box, solve_reference,
};
use qagt_core::{AggregativeProblem, MixingMatrix, QuadraticProblem, ReferenceSolution, RunConfig, ScalingSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TARGETS: [[f64; 2]; 5] = [[3.0, 5.0], [6.0, 9.0], [9.0, 8.0], [6.0, 2.0], [9.0, 2.0]];

fn tuned(p: &QuadraticProblem, a: &MixingMatrix, x0: &[f64], l0: f64) -> (TuningReport, ReferenceSolution) {
    let sol = solve_reference(p, 1e-12, 100_000).unwrap();
    let (c0, c1, c2) = initial_bounds(p, x0, &sol.x_star).unwrap();
    let report = tune(&TuningInputs {
        constants: p.constants(),
        kappa: a.kappa(),
        n_agents: p.n_agents(),
        dim_x: p.dim_x(),
        dim_agg: p.dim_agg(),
        l0,
        alpha: None,
        gamma: None,
        levels: None,
        margin: 0.5,
        c0,
        c1,
        c2,
    })
    .unwrap();
    (report, sol)
}

#[test]
fn tuned_synthetic_runs_satisfy_certificates() {
    for seed in 0..6u64 {
        let n = 3 + seed as usize % 3;
        let p = make_quadratic_synthetic(n, 2, 1, seed).unwrap();
        let a = MixingMatrix::ring(n, 0.5).unwrap();
        let sol = solve_reference(&p, 1e-12, 100_000).unwrap();
        let x0: Vec<f64> = sol.x_star.iter().enumerate().map(|(k, v)| v + (k % 3) as f64 - 1.0).collect();
        let (r, sol) = tuned(&p, &a, &x0, 1.0);
        let sched = ScalingSchedule::new(r.l0, r.gamma).unwrap();
        let traj = run(&p, &a, RunConfig::new(r.alpha, sched, r.levels, 400, x0)).unwrap();
        assert_eq!(traj.saturations_cum.last(), Some(&0), "seed {seed}");
        let lemma3 = check_lemma3(&traj, &r.h, r.l2, &sol.x_star);
        assert!(lemma3.all_ok(), "seed {seed}: min slack {}", lemma3.min_slack());
        let (ok, worst) = check_envelope(&traj, &sol.x_star, r.big_c0, r.gamma);
        assert!(ok, "seed {seed}: envelope ratio {worst}");
        assert!(check_lemma4(&r.h, r.epsilon, 200).holds);
    }
}

#[test]
fn level_bound_prevents_saturation_on_toy() {
    let p = make_quadratic_synthetic(2, 1, 1, 3).unwrap();
    let a = MixingMatrix::complete(2).unwrap();
    let x0 = vec![2.0, -1.0];
    let (r, _) = tuned(&p, &a, &x0, 1.0);
    let sched = ScalingSchedule::new(r.l0, r.gamma).unwrap();
    let traj = run(&p, &a, RunConfig::new(r.alpha, sched, r.l_min.unwrap(), 500, x0.clone())).unwrap();
    assert_eq!(traj.saturations_cum.last(), Some(&0));

    // halving the time constant far below rho(H) starves a one-level quantizer
    let fast = ScalingSchedule::new(r.l0, r.rho_h / 2.0).unwrap();
    let starved = run(&p, &a, RunConfig::new(r.alpha, fast, 1, 500, x0)).unwrap();
    assert!(starved.saturations_cum.last().unwrap() > &0);
}

#[test]
fn doubling_l0_halves_initial_term() {
    let p = make_quadratic_synthetic(3, 2, 2, 8).unwrap();
    let a = MixingMatrix::ring(3, 0.5).unwrap();
    let x0 = vec![5.0; 6];
    let (r1, _) = tuned(&p, &a, &x0, 1.0);
    let (r2, _) = tuned(&p, &a, &x0, 2.0);
    let term = |r: &TuningReport| (4.0 * r.c1 * r.c1 + 4.0 * r.c2 * r.c2).sqrt() / r.l0;
    assert!((term(&r1) - 2.0 * term(&r2)).abs() <= 1e-12 * term(&r1));
    assert!(r2.l_min <= r1.l_min);
}

#[test]
fn placement_performance_index() {
    let p = make_placement(&TARGETS, &[100.0; 5]).unwrap();
    let a = MixingMatrix::complete(5).unwrap();
    let sol = solve_reference(&p, 1e-12, 100_000).unwrap();
    let gamma = (-0.1f64).exp();
    let sched = ScalingSchedule::new(10.0, gamma).unwrap();

    let stable = run(&p, &a, RunConfig::new(0.005, sched, 10, 150, vec![0.0; 10])).unwrap();
    let j = performance_index(&p, &stable, sol.f_star, 0.1).unwrap();
    assert!(j.iter().all(|v| *v <= j[0]), "J grew above its initial value");
    let rate = fit_linear_rate(&stable.residuals(&sol.x_star), 0.5).unwrap();
    assert!(rate < 1.0 && rate <= gamma + 0.02, "rate {rate}");

    let unstable = run(&p, &a, RunConfig::new(0.01, sched, 10, 150, vec![0.0; 10])).unwrap();
    let j = performance_index(&p, &unstable, sol.f_star, 0.1).unwrap();
    assert!(j.last().unwrap() > &(1e6 * j[0]));
}

#[test]
fn builtin_families_pass_sampling_checks() {
    let problems = vec![
        make_placement(&TARGETS, &[100.0; 5]).unwrap(),
        make_bandwidth_sharing(4, 0.3).unwrap(),
        make_quadratic_synthetic(4, 3, 2, 21).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in &problems {
        let sol = solve_reference(p, 1e-12, 100_000).unwrap();
        let x0 = vec![0.0; p.n_agents() * p.dim_x()];
        let bounds = operating_box(&x0, &sol.x_star);
        let d = check_local_derivatives(p, &bounds, 5, &mut rng);
        assert!(d.passed(), "{:?}: {d:?}", p.family());
        let c = check_constants(p, &bounds, 200, &mut rng);
        assert!(c.passed(), "{:?}: {c:?}", p.family());
    }
}

#[test]
fn placement_at_paper_step_is_untunable() {
    let p = make_placement(&TARGETS, &[100.0; 5]).unwrap();
    let a = MixingMatrix::complete(5).unwrap();
    let h = build_h(0.01, &p.constants(), a.kappa()).unwrap();
    assert!(spectral_radius(&h) > 1.0);
}
