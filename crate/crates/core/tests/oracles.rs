mod support;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsoc::eval::{run_batch, FilterMode, Integrator, Policy, RolloutOptions};
use rsoc::models::LinearProblem;
use rsoc::{
    backward_recursion, backward_step, build_plan, control_stage_terms, ekf_forward, solve, NoiseModel, SolverConfig,
    StageCost, StageDynamics, Trajectory, ValueExpansion, Vect,
};
use support::oracle::{self, DiscreteLq, StepInputs, M, V};

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> M {
    M::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn rand_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> M {
    let a = rand_mat(rng, n, n, 1.0);
    &a * a.transpose() + M::identity(n, n) * floor
}

fn max_abs(a: &M, b: &M) -> f64 {
    (a - b).abs().max()
}

fn zero_nominal(n: usize, m: usize, steps: usize, dt: f64) -> Trajectory<f64> {
    Trajectory::new(dt, vec![Vect::zeros(n); steps + 1], vec![Vect::zeros(m); steps]).unwrap()
}

#[test]
fn certainty_equivalent_gains_match_riccati() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let steps = rng.random_range(1..=50);
        let dt = 0.05;
        let ac = rand_mat(&mut rng, n, n, 1.0);
        let bc = rand_mat(&mut rng, n, m, 1.0);
        let q = rand_spd(&mut rng, n, 0.1);
        let r = rand_spd(&mut rng, m, 0.5);
        let qf = rand_spd(&mut rng, n, 0.1);
        let problem = LinearProblem::new(ac.clone(), bc.clone(), dt * steps as f64).with_cost(q.clone(), r.clone(), qf.clone());
        let noise = NoiseModel::new(rand_spd(&mut rng, n, 0.0), rand_spd(&mut rng, n, 0.1));
        let config = SolverConfig::default();
        let plan = build_plan(&problem, &zero_nominal(n, m, steps, dt), &config).unwrap();
        let sigma0 = rand_spd(&mut rng, n, 0.0);
        let est = ekf_forward(&plan, &noise, &sigma0).unwrap();
        let (law, _) = backward_recursion(&plan, &est, &noise, 0.0, 0.0).unwrap();

        let lq = DiscreteLq {
            a: M::identity(n, n) + &ac * dt,
            b: &bc * dt,
            q: &q * dt,
            p: M::zeros(n, m),
            r: &r * dt,
            qf,
        };
        let expected = oracle::riccati_gains(&lq, steps);
        assert_eq!(law.feedback.len(), steps);
        for (k, (got, want)) in law.feedback.iter().zip(&expected).enumerate() {
            let err = max_abs(got, want);
            assert!(err <= 1e-8, "case {case} step {k}: {err:e}");
        }
    }
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize, sigma: f64) -> StepInputs {
    let sx = rand_spd(rng, n, 0.5);
    let sh = rand_spd(rng, n, 0.1) * 0.3;
    StepInputs {
        a: M::identity(n, n) + rand_mat(rng, n, n, 0.2),
        b: rand_mat(rng, n, m, 0.5),
        c: rand_mat(rng, n, n, 0.5),
        f: rand_mat(rng, n, n, 0.5),
        d: rand_mat(rng, n, n, 0.5) + M::identity(n, n),
        k: rand_mat(rng, n, n, 0.5),
        omega: rand_spd(rng, n, 0.1) * 0.5,
        gamma: rand_spd(rng, n, 0.1) * 0.5,
        q0: rng.random_range(0.0..1.0),
        qv: V::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        rv: V::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
        qm: rand_spd(rng, n, 0.1),
        pm: rand_mat(rng, n, m, 0.2),
        rm: rand_spd(rng, m, 2.0),
        sx,
        sh,
        sxh: rand_mat(rng, n, n, 0.2),
        sxv: V::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        shv: V::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        s: rng.random_range(-1.0..1.0),
        sigma,
    }
}

#[test]
fn recursion_matches_straight_line_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    for case in 0..20 {
        let n = 1 + case % 2;
        let m = 1 + (case / 2) % 2;
        for sigma in [-0.3, 0.0, 0.3] {
            let i = random_instance(&mut rng, n, m, sigma);
            let o = oracle::joint_recursion_step(&i);
            let stage = StageDynamics { a: i.a.clone(), b: i.b.clone(), c: i.c.clone(), f: i.f.clone(), e: M::zeros(n, m), d: i.d.clone() };
            let cost = StageCost::new(i.q0, i.qv.clone(), i.rv.clone(), i.qm.clone(), i.pm.clone(), i.rm.clone());
            let next = ValueExpansion { sxx: i.sx.clone(), sxh: i.sxh.clone(), shh: i.sh.clone(), sx: i.sxv.clone(), sh: i.shv.clone(), s0: i.s };
            let noise = NoiseModel::new(i.omega.clone(), i.gamma.clone());

            let terms = control_stage_terms(&stage, &cost, &i.k, &next, &noise, sigma).unwrap();
            let tol = 1e-12;
            assert!(max_abs(&terms.h, &oracle::sym(&o.h)) <= tol, "H case {case} σ {sigma}");
            assert!((&terms.g - &o.g).abs().max() <= tol, "g case {case} σ {sigma}");
            assert!(max_abs(&terms.gx, &o.gx) <= tol, "Gx case {case} σ {sigma}");
            assert!(max_abs(&terms.gh, &o.gh) <= tol, "Gh case {case} σ {sigma}");

            let (l, big_l, value) = backward_step(&stage, &cost, &i.k, &next, &noise, sigma, 0.0).unwrap();
            assert!((&l - &o.l).abs().max() <= tol, "l case {case} σ {sigma}");
            assert!(max_abs(&big_l, &o.big_l) <= tol, "L case {case} σ {sigma}");
            assert!(max_abs(&value.sxx, &oracle::sym(&o.sx)) <= tol, "Sx case {case} σ {sigma}");
            assert!(max_abs(&value.shh, &oracle::sym(&o.sh)) <= tol, "Sh case {case} σ {sigma}");
            assert!(max_abs(&value.sxh, &o.sxh) <= tol, "Sxh case {case} σ {sigma}");
            assert!((&value.sx - &o.sxv).abs().max() <= tol, "sx case {case} σ {sigma}");
            assert!((&value.sh - &o.shv).abs().max() <= tol, "sh case {case} σ {sigma}");
            assert!((value.s0 - o.s).abs() <= tol, "s case {case} σ {sigma}");
            checked += 1;
        }
    }
    assert_eq!(checked, 60);
}

#[test]
fn scalar_example_instance() {
    let s = |v: f64| M::from_element(1, 1, v);
    let i = StepInputs {
        a: s(1.0),
        b: s(1.0),
        c: s(1.0),
        f: s(1.0),
        d: s(1.0),
        k: s(0.5),
        omega: s(1.0),
        gamma: s(1.0),
        q0: 0.0,
        qv: V::zeros(1),
        rv: V::zeros(1),
        qm: s(0.0),
        pm: s(0.0),
        rm: s(1.0),
        sx: s(1.0),
        sh: s(0.5),
        sxh: s(-0.1),
        sxv: V::zeros(1),
        shv: V::zeros(1),
        s: 0.0,
        sigma: 0.2,
    };
    let o = oracle::joint_recursion_step(&i);
    let stage = StageDynamics { a: s(1.0), b: s(1.0), c: s(1.0), f: s(1.0), e: s(0.0), d: s(1.0) };
    let cost = StageCost::new(0.0, V::zeros(1), V::zeros(1), s(0.0), s(0.0), s(1.0));
    let next = ValueExpansion { sxx: s(1.0), sxh: s(-0.1), shh: s(0.5), sx: V::zeros(1), sh: V::zeros(1), s0: 0.0 };
    let noise = NoiseModel::new(s(1.0), s(1.0));
    let t = control_stage_terms(&stage, &cost, &s(0.5), &next, &noise, 0.2).unwrap();
    // Hand values: H = 1 + 1.3 + 0.2·(0.81 + 0.25·0.16) = 2.47.
    assert!((o.h[(0, 0)] - 2.47).abs() < 1e-12);
    assert!((t.h[(0, 0)] - o.h[(0, 0)]).abs() < 1e-12);
    assert!((t.gx[(0, 0)] - o.gx[(0, 0)]).abs() < 1e-12);
    assert!((t.gh[(0, 0)] - o.gh[(0, 0)]).abs() < 1e-12);
}

fn scalar_lq(omega: f64, gamma: f64, steps: usize, dt: f64) -> (LinearProblem<f64>, NoiseModel<f64>) {
    let s = |v: f64| M::from_element(1, 1, v);
    let problem = LinearProblem::new(s(0.5), s(1.0), dt * steps as f64).with_cost(s(1.0), s(0.1), s(1.0));
    (problem, NoiseModel::new(s(omega), s(gamma)))
}

#[test]
fn closed_loop_variance_matches_lyapunov() {
    let (steps, dt) = (50, 0.02);
    let (problem, noise) = scalar_lq(1.0, 0.05, steps, dt);
    let config = SolverConfig::default();
    let x0 = Vect::zeros(1);
    let result = solve(&problem, &noise, &x0, &vec![Vect::zeros(1); steps], &config).unwrap();
    assert!(result.law.feedforward.iter().all(|l| l.norm() < 1e-12));

    let options = RolloutOptions { filter: FilterMode::Precomputed, integrator: Integrator::Euler, ..Default::default() };
    let batch = run_batch(&problem, &problem, &noise, Policy::from(&result), &x0, 7, 10_000, &options).unwrap();
    let finals: Vec<f64> = batch.trajectories.iter().map(|t| t.final_state()[0]).collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (finals.len() - 1) as f64;

    let s = |v: f64| M::from_element(1, 1, v);
    let covs = oracle::joint_covariance(
        &s(1.0 + 0.5 * dt),
        &s(dt),
        &s(dt.sqrt()),
        &s(dt),
        &s(dt.sqrt()),
        &result.estimator.gains,
        &result.law.feedback,
        &s(1.0),
        &s(0.05),
        &DMatrix::zeros(2, 2),
    );
    let expected = covs[steps][(0, 0)];
    assert!(((var - expected) / expected).abs() < 0.05, "empirical {var} vs {expected}");
}

#[test]
fn estimator_gains_match_written_out_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..10 {
        let n = rng.random_range(1..=3);
        let steps = 20;
        let dt = 0.05;
        let ac = rand_mat(&mut rng, n, n, 1.0);
        let c = rand_mat(&mut rng, n, n, 1.0);
        let problem = LinearProblem::new(ac.clone(), M::zeros(n, 1), dt * steps as f64).with_observation(c.clone(), M::identity(n, n));
        let noise = NoiseModel::new(rand_spd(&mut rng, n, 0.1), rand_spd(&mut rng, n, 0.1));
        let plan = build_plan(&problem, &zero_nominal(n, 1, steps, dt), &SolverConfig::default()).unwrap();
        let p0 = rand_spd(&mut rng, n, 0.1);
        let est = ekf_forward(&plan, &noise, &p0).unwrap();
        let a = M::identity(n, n) + &ac * dt;
        let (gains, covs) = oracle::kalman_predictor(
            &a,
            &(M::identity(n, n) * dt.sqrt()),
            &(&c * dt),
            &(M::identity(n, n) * dt.sqrt()),
            noise.process_cov(),
            noise.measurement_cov(),
            &p0,
            steps,
        );
        for k in 0..steps {
            assert!(max_abs(&est.gains[k], &gains[k]) < 1e-9);
            assert!(max_abs(&est.error_covs[k + 1], &covs[k + 1]) < 1e-9);
        }
    }
}

fn peak_gain(omega: f64, gamma: f64, sigma: f64) -> f64 {
    let (steps, dt) = (40, 0.025);
    let (problem, noise) = scalar_lq(omega, gamma, steps, dt);
    let plan = build_plan(&problem, &zero_nominal(1, 1, steps, dt), &SolverConfig::default()).unwrap();
    let est = ekf_forward(&plan, &noise, &M::from_element(1, 1, 1e-2)).unwrap();
    let (law, _) = backward_recursion(&plan, &est, &noise, sigma, 0.0).unwrap();
    law.feedback.iter().map(|l| l.norm()).fold(0.0, f64::max)
}

#[test]
fn process_noise_raises_scalar_gains() {
    let gains: Vec<f64> = [0.0, 0.1, 0.2].iter().map(|&w| peak_gain(w, 1e-6, 2.5)).collect();
    assert!(gains[0] <= gains[1] && gains[1] <= gains[2], "{gains:?}");
}

#[test]
fn measurement_noise_lowers_scalar_gains() {
    let gains: Vec<f64> = [0.01, 0.1, 1.0].iter().map(|&g| peak_gain(0.2, g, 2.5)).collect();
    assert!(gains[0] >= gains[1] && gains[1] >= gains[2], "{gains:?}");
}
