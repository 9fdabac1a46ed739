//! Oracle checks run by `rsoc selftest` and by the acceptance suite.

#[path = "../../core/tests/support/oracle.rs"]
mod oracle;

use nalgebra::Vector2;
use oracle::{DiscreteLq, StepInputs, M, V};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsoc::approx::fd;
use rsoc::models::{
    ContactCost, ContactProblem, LinearProblem, ManipulatorParams, Viapoint, ViapointCost, ViapointProblem, WallContact,
};
use rsoc::problem::rk4_step;
use rsoc::{
    backward_recursion, backward_step, build_plan, control_stage_terms, ekf_forward, ekf_gain_optimality_check,
    NoiseModel, Problem, SolverConfig, StageCost, StageDynamics, Trajectory, ValueExpansion, Vect,
};
use serde::Serialize;

/// Outcome of one check: `value` is the worst observed error, compared
/// against `tolerance` in the direction the check defines.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        Self { name, passed: value <= tolerance, value, tolerance, detail }
    }
}

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
    Trajectory::new(dt, vec![Vect::zeros(n); steps + 1], vec![Vect::zeros(m); steps]).expect("consistent lengths")
}

/// Risk-neutral gains on random linear problems against a textbook Riccati
/// recursion, for random noise levels and initial error covariances.
pub fn riccati(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..cases {
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
        let sigma0 = rand_spd(&mut rng, n, 0.0);
        let law = build_plan(&problem, &zero_nominal(n, m, steps, dt), &SolverConfig::default())
            .and_then(|plan| {
                let est = ekf_forward(&plan, &noise, &sigma0)?;
                backward_recursion(&plan, &est, &noise, 0.0, 0.0)
            })
            .map(|(law, _)| law);
        let law = match law {
            Ok(l) => l,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                worst = f64::INFINITY;
                continue;
            }
        };
        let lq = DiscreteLq { a: M::identity(n, n) + &ac * dt, b: &bc * dt, q: &q * dt, p: M::zeros(n, m), r: &r * dt, qf };
        let expected = oracle::riccati_gains(&lq, steps);
        if law.feedback.len() != expected.len() {
            failures.push(format!("case {case}: {} gains for {steps} steps", law.feedback.len()));
            worst = f64::INFINITY;
        }
        for (got, want) in law.feedback.iter().zip(&expected) {
            worst = worst.max(max_abs(got, want));
        }
    }
    Check::at_most("riccati", worst, 1e-8, format!("{cases} random problems{}", list(&failures)))
}

fn list(items: &[String]) -> String {
    if items.is_empty() {
        String::new()
    } else {
        format!("; {}", items.join("; "))
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

/// One backward step against the straight-line oracle on random scalar and
/// two-state instances at σ ∈ {−0.3, 0, 0.3}.
pub fn transcription(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for case in 0..cases {
        let n = 1 + case % 2;
        let m = 1 + (case / 2) % 2;
        for sigma in [-0.3, 0.0, 0.3] {
            let i = random_instance(&mut rng, n, m, sigma);
            let o = oracle::joint_recursion_step(&i);
            let stage = StageDynamics { a: i.a.clone(), b: i.b.clone(), c: i.c.clone(), f: i.f.clone(), e: M::zeros(n, m), d: i.d.clone() };
            let cost = StageCost::new(i.q0, i.qv.clone(), i.rv.clone(), i.qm.clone(), i.pm.clone(), i.rm.clone());
            let next = ValueExpansion { sxx: i.sx.clone(), sxh: i.sxh.clone(), shh: i.sh.clone(), sx: i.sxv.clone(), sh: i.shv.clone(), s0: i.s };
            let noise = NoiseModel::new(i.omega.clone(), i.gamma.clone());
            let terms = control_stage_terms(&stage, &cost, &i.k, &next, &noise, sigma);
            let step = backward_step(&stage, &cost, &i.k, &next, &noise, sigma, 0.0);
            let (terms, (l, big_l, value)) = match (terms, step) {
                (Ok(t), Ok(s)) => (t, s),
                (Err(e), _) | (_, Err(e)) => {
                    failures.push(format!("case {case} σ {sigma}: {e}"));
                    worst = f64::INFINITY;
                    continue;
                }
            };
            let errs = [
                max_abs(&terms.h, &oracle::sym(&o.h)),
                (&terms.g - &o.g).abs().max(),
                max_abs(&terms.gx, &o.gx),
                max_abs(&terms.gh, &o.gh),
                (&l - &o.l).abs().max(),
                max_abs(&big_l, &o.big_l),
                max_abs(&value.sxx, &oracle::sym(&o.sx)),
                max_abs(&value.shh, &oracle::sym(&o.sh)),
                max_abs(&value.sxh, &o.sxh),
                (&value.sx - &o.sxv).abs().max(),
                (&value.sh - &o.shv).abs().max(),
                (value.s0 - o.s).abs(),
            ];
            worst = errs.iter().copied().fold(worst, f64::max);
        }
    }
    Check::at_most("transcription", worst, 1e-12, format!("{} instances{}", cases * 3, list(&failures)))
}

/// Filter gains and covariances against a written-out Kalman predictor.
pub fn kalman(cases: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=3);
        let steps = 20;
        let dt = 0.05;
        let ac = rand_mat(&mut rng, n, n, 1.0);
        let c = rand_mat(&mut rng, n, n, 1.0);
        let problem = LinearProblem::new(ac.clone(), M::zeros(n, 1), dt * steps as f64).with_observation(c.clone(), M::identity(n, n));
        let noise = NoiseModel::new(rand_spd(&mut rng, n, 0.1), rand_spd(&mut rng, n, 0.1));
        let p0 = rand_spd(&mut rng, n, 0.1);
        let est = match build_plan(&problem, &zero_nominal(n, 1, steps, dt), &SolverConfig::default())
            .and_then(|plan| ekf_forward(&plan, &noise, &p0))
        {
            Ok(e) => e,
            Err(e) => return Check::at_most("kalman", f64::INFINITY, 1e-9, e.to_string()),
        };
        let (gains, covs) = oracle::kalman_predictor(
            &(M::identity(n, n) + &ac * dt),
            &(M::identity(n, n) * dt.sqrt()),
            &(&c * dt),
            &(M::identity(n, n) * dt.sqrt()),
            noise.process_cov(),
            noise.measurement_cov(),
            &p0,
            steps,
        );
        for k in 0..steps {
            worst = worst.max(max_abs(&est.gains[k], &gains[k])).max(max_abs(&est.error_covs[k + 1], &covs[k + 1]));
        }
    }
    Check::at_most("kalman", worst, 1e-9, format!("{cases} random filters"))
}

/// Random gain perturbations never shrink the propagated error covariance
/// trace: returns the most negative trace change seen.
pub fn ekf_perturbations(systems: usize, steps: usize, perturbations: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut lowest = f64::INFINITY;
    for sys in 0..systems {
        let n = 1 + sys % 4;
        let p = 1 + sys % 3;
        let dt = 0.05;
        let problem = LinearProblem::new(rand_mat(&mut rng, n, n, 1.0), rand_mat(&mut rng, n, 1, 1.0), dt * steps as f64)
            .with_observation(rand_mat(&mut rng, p, n, 1.0), M::identity(p, p) + rand_mat(&mut rng, p, p, 0.3))
            .with_noise_inputs(rand_mat(&mut rng, n, n, 1.0), M::identity(p, p));
        let noise = NoiseModel::new(rand_spd(&mut rng, n, 0.1), rand_spd(&mut rng, p, 0.1));
        let p0 = rand_spd(&mut rng, n, 0.01);
        let result = build_plan(&problem, &zero_nominal(n, 1, steps, dt), &SolverConfig::default())
            .and_then(|plan| ekf_forward(&plan, &noise, &p0).map(|pass| (plan, pass)));
        let (plan, pass) = match result {
            Ok(r) => r,
            Err(e) => return Check { name: "ekf_perturbations", passed: false, value: f64::NAN, tolerance: -1e-10, detail: e.to_string() },
        };
        for k in 0..steps {
            let scale = pass.gains[k].norm().max(1e-3) * 1e-2;
            for _ in 0..perturbations {
                let dk = rand_mat(&mut rng, n, p, scale);
                lowest = lowest.min(ekf_gain_optimality_check(&plan, &noise, &pass, k, &dk));
            }
        }
    }
    Check {
        name: "ekf_perturbations",
        passed: lowest >= -1e-10,
        value: lowest,
        tolerance: -1e-10,
        detail: format!("{systems} systems × {steps} steps × {perturbations} perturbations"),
    }
}

fn rel_err(analytic: &M, numeric: &M) -> f64 {
    analytic.iter().zip(numeric.iter()).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())).fold(0.0, f64::max)
}

fn col(v: &Vect<f64>) -> M {
    M::from_column_slice(v.len(), 1, v.as_slice())
}

/// Analytic dynamics, measurement and cost derivatives of the arm models
/// against central finite differences at random states.
fn model_derivatives<P: Problem<f64>>(problem: &P, x: &Vect<f64>, u: &Vect<f64>, t: f64) -> f64 {
    let n = x.len();
    let z = Vect::from_iterator(n + u.len(), x.iter().chain(u.iter()).copied());
    let split = |z: &Vect<f64>| (z.rows(0, n).into_owned(), z.rows(n, z.len() - n).into_owned());
    let mut worst: f64 = 0.0;
    if let Some((jx, ju)) = problem.drift_jacobians(x, u, t) {
        let num = fd::jacobian(|z| { let (x, u) = split(z); problem.drift(&x, &u, t) }, &z, 1e-6);
        worst = worst.max(rel_err(&jx, &num.columns(0, n).into_owned())).max(rel_err(&ju, &num.columns(n, u.len()).into_owned()));
    }
    if let Some((fx, fu)) = problem.measurement_jacobians(x, u, t) {
        let num = fd::jacobian(|z| { let (x, u) = split(z); problem.measurement_drift(&x, &u, t) }, &z, 1e-6);
        worst = worst.max(rel_err(&fx, &num.columns(0, n).into_owned())).max(rel_err(&fu, &num.columns(n, u.len()).into_owned()));
    }
    // Hessians are differenced from the analytic gradient, itself checked
    // against the cost: second differences of the stiff contact terms carry
    // truncation errors well above the tolerance.
    let grad = |z: &Vect<f64>| {
        let (x, u) = split(z);
        let c = problem.running_cost_derivatives(&x, &u, t).expect("checked below");
        Vect::from_iterator(z.len(), c.dx.iter().chain(c.du.iter()).copied())
    };
    if let Some(c) = problem.running_cost_derivatives(x, u, t) {
        let f = |z: &Vect<f64>| { let (x, u) = split(z); problem.running_cost(&x, &u, t) };
        let g = fd::gradient(f, &z, 1e-6);
        let h = fd::jacobian(grad, &z, 1e-6);
        worst = worst
            .max(rel_err(&M::from_element(1, 1, c.value), &M::from_element(1, 1, f(&z))))
            .max(rel_err(&col(&c.dx), &col(&g.rows(0, n).into_owned())))
            .max(rel_err(&col(&c.du), &col(&g.rows(n, u.len()).into_owned())))
            .max(rel_err(&c.dxx, &h.view((0, 0), (n, n)).into_owned()))
            .max(rel_err(&c.dxu, &h.view((0, n), (n, u.len())).into_owned()))
            .max(rel_err(&c.duu, &h.view((n, n), (u.len(), u.len())).into_owned()));
    }
    if let Some(c) = problem.terminal_cost_derivatives(x) {
        let f = |x: &Vect<f64>| problem.terminal_cost(x);
        worst = worst
            .max(rel_err(&col(&c.dx), &col(&fd::gradient(f, x, 1e-6))))
            .max(rel_err(&c.dxx, &fd::jacobian(|x| problem.terminal_cost_derivatives(x).expect("checked above").dx, x, 1e-6)));
    }
    worst
}

fn arm_state(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [rng.random_range(-1.5..1.5), rng.random_range(0.3..2.5), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]
}

/// Worst relative error over random states for the viapoint and contact
/// models, contact states kept clear of the force kinks.
pub fn derivatives(samples: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let params = ManipulatorParams { gravity: true, ..ManipulatorParams::default() };
    let (horizon, steps) = (1.0, 100);
    let viapoint = ViapointProblem::new(
        params,
        ViapointCost {
            control_weight: 0.05,
            viapoints: vec![Viapoint { step: 50, target: nalgebra::Vector4::new(0.5, 0.5, 0.1, -0.1), weight: 100.0 }],
            goal: nalgebra::Vector4::new(0.3, 0.7, 0.0, 0.0),
            goal_weight: 50.0,
        },
        horizon,
        steps,
    );
    let mut wall = WallContact::new(Vector2::new(-1.0, 0.0), -0.7);
    wall.stiffness = 1e3;
    let contact = ContactProblem::new(
        params,
        wall,
        ContactCost {
            control_weight: 0.05,
            via: Viapoint { step: 40, target: nalgebra::Vector4::new(0.6, 0.3, 0.0, 0.0), weight: 100.0 },
            force_target: 5.0,
            window: (0.6, 1.0),
            contact_weight: 5.0,
            goal: Some((nalgebra::Vector4::new(0.65, 0.3, 0.0, 0.0), 10.0)),
        },
        horizon,
        steps,
    );
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let s = arm_state(&mut rng);
        let u = Vect::from_column_slice(&[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
        let x4 = Vect::from_column_slice(&s);
        // Alternate between a viapoint step, an ordinary step and the window.
        let t = [0.5, 0.2, 0.8][i % 3];
        worst = worst.max(model_derivatives(&viapoint, &x4, &u, t));

        let q = Vector2::new(s[0], s[1]);
        let qd = Vector2::new(s[2], s[3]);
        let rate = contact.wall.distance_rate(&contact.params, &q, &qd);
        let phi = if i % 2 == 0 {
            rng.random_range(0.01..0.1)
        } else {
            let d: f64 = rng.random_range(-0.02..-0.005);
            if contact.wall.force_magnitude(d, rate) < 1.0 {
                continue;
            }
            d
        };
        let x5 = Vect::from_column_slice(&[s[0], s[1], s[2], s[3], phi]);
        worst = worst.max(model_derivatives(&contact, &x5, &u, t));
    }
    Check::at_most("derivatives", worst, 1e-4, format!("{samples} random states per model"))
}

/// Relative kinetic-energy drift of the undamped, unforced arm over one
/// second of RK4 at 1 ms.
pub fn energy_drift() -> Check {
    let params = ManipulatorParams { d1: 0.0, d2: 0.0, ..ManipulatorParams::default() };
    let cost = ViapointCost { control_weight: 0.0, viapoints: Vec::new(), goal: nalgebra::Vector4::zeros(), goal_weight: 0.0 };
    let problem = ViapointProblem::new(params, cost, 1.0, 1000);
    let energy = |x: &Vect<f64>| params.kinetic_energy(&Vector2::new(x[0], x[1]), &Vector2::new(x[2], x[3]));
    let mut x = Vect::from_column_slice(&[0.3, 0.5, 1.5, -2.0]);
    let u = Vect::zeros(2);
    let e0 = energy(&x);
    let dt = 1e-3;
    for k in 0..1000 {
        x = rk4_step(&problem, &x, &u, k as f64 * dt, dt);
    }
    let drift = ((energy(&x) - e0) / e0).abs();
    Check::at_most("energy_drift", drift, 1e-6, "1 s, dt = 1 ms".into())
}

/// Every check with its default size.
pub fn run_all() -> Vec<Check> {
    vec![
        riccati(50),
        transcription(20),
        kalman(10),
        ekf_perturbations(10, 20, 100),
        derivatives(60),
        energy_drift(),
    ]
}
