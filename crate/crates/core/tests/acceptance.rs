//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.
//!
//! `DUCT_PINN_ACCEPTANCE=full` trains every network with the paper-scale
//! configuration (7 layers, 90 neurons, 10 000 points, up to 14 000
//! iterations); the default `ci` profile uses smaller networks so the whole
//! suite runs in minutes on one core.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use duct_pinn::analysis::{
    error_report, find_velocity_nodes, impedance_errors, impedance_profile, oracle_profile,
    re_z_sign, FieldSample,
};
use duct_pinn::network::{he_init, Architecture, MlpParams};
use duct_pinn::optimizer::{minimize, LbfgsOptions, Termination};
use duct_pinn::oracle::{
    critical_mach, impedance, pressure_noflow_jet, re_z0_closed_form, scan_sign_changes,
    FlowSolution,
};
use duct_pinn::physics::{
    make_collocation, residual_flow, residual_noflow, residual_velocity, FieldKind, TrialField,
};
use duct_pinn::train::{train_pressure, train_velocity, TrainedField, TrainingConfig};
use duct_pinn::{Complex64, DuctProblem, LossKind, PinnLoss, VelocitySource};

const FREQUENCIES: [f64; 4] = [500.0, 1000.0, 1500.0, 2000.0];
const PROBE_MACHS: [f64; 3] = [0.1, 0.2, 0.3];
const N_T: usize = 500;

#[derive(Clone, Copy, PartialEq)]
enum Profile {
    Ci,
    Full,
}

struct Settings {
    profile: Profile,
    noflow: TrainingConfig,
    noflow_bound: f64,
    noflow_budget: Duration,
    flow: TrainingConfig,
    velocity: TrainingConfig,
    /// Flow iteration cap per hertz (capped at the flow config's own cap).
    flow_iterations_per_hz: Option<f64>,
}

impl Settings {
    fn from_env() -> Self {
        let full = std::env::var("DUCT_PINN_ACCEPTANCE").is_ok_and(|v| v == "full");
        if full {
            Self {
                profile: Profile::Full,
                noflow: TrainingConfig::default(),
                noflow_bound: 1e-3,
                noflow_budget: Duration::from_secs(30 * 60),
                flow: TrainingConfig::default(),
                velocity: TrainingConfig::default(),
                flow_iterations_per_hz: None,
            }
        } else {
            // the convected fields need the paper width, and the iterations
            // to converge grow with frequency
            let mut flow = TrainingConfig::reduced();
            flow.hidden_width = 90;
            flow.lbfgs.max_iterations = TrainingConfig::default().lbfgs.max_iterations;
            let velocity = TrainingConfig {
                hidden_width: 90,
                ..TrainingConfig::reduced()
            };
            Self {
                profile: Profile::Ci,
                noflow: TrainingConfig::reduced(),
                noflow_bound: 1e-2,
                noflow_budget: Duration::from_secs(3 * 60),
                flow,
                velocity,
                flow_iterations_per_hz: Some(7.0),
            }
        }
    }
}

struct Outcome {
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            passed: true,
            details: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, detail: String) {
        self.passed &= ok;
        self.details.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
    }
}

struct Run {
    pressure: TrainedField,
    velocity: Option<TrainedField>,
    profile: Vec<FieldSample>,
    truth: Vec<FieldSample>,
}

/// Trained runs keyed by (frequency, Mach) so criteria can share them.
struct Runs<'a> {
    settings: &'a Settings,
    cache: BTreeMap<(u64, u64), Run>,
}

impl<'a> Runs<'a> {
    fn get(&mut self, f: f64, mach: f64, velocity: bool) -> &Run {
        let key = (f.to_bits(), mach.to_bits());
        let needs = match self.cache.get(&key) {
            None => true,
            Some(r) => velocity && r.velocity.is_none(),
        };
        if needs {
            let problem = DuctProblem::air_duct(f, mach).expect("valid problem");
            let mut cfg = if mach == 0.0 { self.settings.noflow.clone() } else { self.settings.flow.clone() };
            if let (true, Some(per_hz)) = (mach > 0.0, self.settings.flow_iterations_per_hz) {
                cfg.lbfgs.max_iterations = cfg.lbfgs.max_iterations.min((per_hz * f).round() as usize);
            }
            let pressure = match self.cache.remove(&key) {
                Some(r) => r.pressure,
                None => {
                    eprintln!("  training pressure f = {f} Hz, M = {mach}");
                    train_pressure(&problem, &cfg, &mut |_| {}).expect("pressure training")
                }
            };
            let velocity = if velocity {
                eprintln!("  training velocity f = {f} Hz, M = {mach}");
                Some(train_velocity(&pressure.field, &self.settings.velocity, &mut |_| {}).expect("velocity training"))
            } else {
                None
            };
            let source = match &velocity {
                Some(v) => VelocitySource::Trained(&v.field),
                None => VelocitySource::FromPressure,
            };
            let profile = impedance_profile(&pressure.field, source, N_T).expect("profile");
            let truth = oracle_profile(&problem, N_T).expect("oracle profile");
            self.cache.insert(
                key,
                Run {
                    pressure,
                    velocity,
                    profile,
                    truth,
                },
            );
        }
        &self.cache[&key]
    }
}

fn psi(samples: &[FieldSample]) -> Vec<Complex64> {
    samples.iter().map(|s| s.psi).collect()
}

fn noflow_accuracy(runs: &mut Runs) -> Outcome {
    let mut out = Outcome::new();
    let (bound, budget) = (runs.settings.noflow_bound, runs.settings.noflow_budget);
    for f in FREQUENCIES {
        let run = runs.get(f, 0.0, false);
        let rep = error_report(&psi(&run.profile), &psi(&run.truth)).expect("errors");
        let t = run.pressure.wall_time;
        out.record(
            rep.delta_psi <= bound && t <= budget,
            format!(
                "f = {f} Hz: delta_psi {:.3e} (<= {bound:.0e}), {} iterations in {:.1} s (<= {} s)",
                rep.delta_psi,
                run.pressure.iterations,
                t.as_secs_f64(),
                budget.as_secs()
            ),
        );
    }
    out
}

fn flow_accuracy(runs: &mut Runs) -> Outcome {
    let mut out = Outcome::new();
    for f in FREQUENCIES {
        let run = runs.get(f, 0.1, false);
        let rep = error_report(&psi(&run.profile), &psi(&run.truth)).expect("errors");
        out.record(
            rep.delta_mag <= 0.02 && rep.delta_phase <= 0.005,
            format!(
                "f = {f} Hz, M = 0.1: delta_mag {:.3e} (<= 0.02), delta_phase {:.3e} (<= 0.005)",
                rep.delta_mag, rep.delta_phase
            ),
        );
    }
    out
}

fn impedance_accuracy(runs: &mut Runs) -> Outcome {
    let mut out = Outcome::new();
    let run = runs.get(500.0, 0.1, true);
    let e = impedance_errors(&run.profile, &run.truth).expect("valid samples");
    out.record(
        e.re <= 0.05 && e.im <= 0.05,
        format!(
            "f = 500 Hz, M = 0.1: Re Z error {:.3e}, Im Z error {:.3e} (<= 0.05) on {} valid samples",
            e.re, e.im, e.samples
        ),
    );
    out
}

fn sign_change(runs: &mut Runs) -> Outcome {
    let mut out = Outcome::new();
    let problem = DuctProblem::air_duct(500.0, 0.1).expect("valid problem");
    let crossings = scan_sign_changes(&problem, (0.1, 0.3), 1e-4).expect("scan");
    out.record(
        crossings.len() == 1 && (crossings[0] - 0.14).abs() <= 0.005,
        format!("indicator sign changes on [0.1, 0.3]: {crossings:?} (one, at 0.14 +- 0.005)"),
    );
    let roots = critical_mach(&problem, (1, 10), (0.1, 0.3)).expect("roots");
    out.record(
        roots.len() == 1 && roots[0].confirmed_by_scan,
        format!("closed-form root: {roots:?}"),
    );
    let signs: Vec<i8> = PROBE_MACHS.iter().map(|&m| re_z_sign(&runs.get(500.0, m, true).profile)).collect();
    out.record(
        signs == [-1, 1, 1],
        format!("trained Re Z sign at M = 0.1, 0.2, 0.3: {signs:?} (expected [-1, 1, 1])"),
    );
    out
}

fn inward(nodes: &[Vec<f64>]) -> bool {
    nodes.windows(2).all(|w| w[1][0] > w[0][0] && w[1][2] < w[0][2])
}

fn node_behaviour(runs: &mut Runs) -> Outcome {
    let mut out = Outcome::new();
    let mut oracle_nodes = Vec::new();
    let mut trained_nodes = Vec::new();
    for m in PROBE_MACHS {
        let run = runs.get(500.0, m, true);
        oracle_nodes.push(find_velocity_nodes(&run.truth));
        trained_nodes.push(find_velocity_nodes(&run.profile));
    }
    for (label, nodes, tol) in [("oracle", &oracle_nodes, 1e-3), ("trained", &trained_nodes, 1e-2)] {
        let three = nodes.iter().all(|n| n.len() == 3);
        let middle = three && nodes.iter().all(|n| (n[1] - 0.5).abs() <= tol);
        out.record(
            three && middle && inward(nodes),
            format!("{label} nodes at M = 0.1, 0.2, 0.3: {nodes:.4?} (middle 0.5 +- {tol:.0e}, outer inward)"),
        );
    }
    out
}

fn small_net(layers: usize, width: usize, outputs: usize, seed: u64) -> MlpParams {
    let mut p = he_init(Architecture::new(layers, width, outputs).expect("arch"), seed).expect("init");
    for (i, layer) in p.layers_mut().iter_mut().enumerate() {
        for (j, b) in layer.bias.iter_mut().enumerate() {
            *b = 0.1 * ((i * 5 + j * 3) % 7) as f64 - 0.3;
        }
    }
    p
}

fn fd_error(loss: &PinnLoss, params: &MlpParams) -> f64 {
    let theta = params.flatten();
    let (_, grad) = loss.eval_flat(&theta).expect("loss");
    let mut probe = theta.clone();
    let (mut diff, mut norm) = (0.0, 0.0);
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let fp = loss.eval_flat(&probe).expect("loss").0;
        probe[i] = theta[i] - h;
        let fm = loss.eval_flat(&probe).expect("loss").0;
        probe[i] = theta[i];
        let fd = (fp - fm) / (2.0 * h);
        diff += (grad[i] - fd).powi(2);
        norm += fd * fd;
    }
    (diff / norm).sqrt()
}

fn property_suite() -> Outcome {
    let mut out = Outcome::new();

    let mut worst = [0.0f64; 3];
    for seed in 0..20u64 {
        let f = 150.0 + 37.0 * seed as f64;
        let mach = 0.02 + 0.025 * seed as f64;
        let xs = make_collocation(1.0, 10, seed).expect("points");
        let noflow = DuctProblem::air_duct(f, 0.0).expect("problem");
        let flow = DuctProblem::air_duct(f, mach).expect("problem");
        let (layers, width) = (3 + (seed % 2) as usize, 3 + (seed % 4) as usize);
        let p1 = small_net(layers, width, 1, seed);
        let p2 = small_net(layers, width, 2, seed);
        let pressure = TrialField::new(FieldKind::PressureFlow, flow, small_net(3, 4, 2, seed + 500)).expect("field");
        let kinds = [
            (noflow, LossKind::NoFlow, &p1),
            (flow, LossKind::Flow, &p2),
            (flow, LossKind::Velocity { pressure: &pressure, anchor: seed % 2 == 0 }, &p2),
        ];
        for (i, (problem, kind, params)) in kinds.into_iter().enumerate() {
            let loss = PinnLoss::new(&problem, params.arch(), &xs, kind).expect("loss");
            worst[i] = worst[i].max(fd_error(&loss, params));
        }
    }
    out.record(
        worst.iter().all(|&e| e < 1e-4),
        format!("(a) gradient vs finite differences, 20 networks per kind, worst [noflow, flow, velocity] = [{:.2e}, {:.2e}, {:.2e}]", worst[0], worst[1], worst[2]),
    );

    let mut exact = true;
    for seed in 0..100u64 {
        let flow = seed % 2 == 0;
        let psi0 = Complex64::new(0.3 * seed as f64 - 15.0, if flow { -0.7 } else { 0.0 });
        let psi_l = Complex64::new(2.0 - 0.05 * seed as f64, if flow { 0.25 } else { 0.0 });
        let length = 0.2 + 0.03 * seed as f64;
        let problem = DuctProblem::new(length, 340.0, 1.225, 700.0, if flow { 0.15 } else { 0.0 }, psi0, psi_l)
            .expect("problem");
        let kind = if flow { FieldKind::PressureFlow } else { FieldKind::PressureNoFlow };
        let field = TrialField::new(kind, problem, small_net(3 + (seed % 4) as usize, 1 + (seed % 9) as usize, kind.output_width(), seed))
            .expect("field");
        exact &= field.eval(0.0).expect("eval").value() == psi0 && field.eval(length).expect("eval").value() == psi_l;
    }
    out.record(exact, "(b) boundary values of 100 random trial fields exact".into());

    let mut worst: f64 = 0.0;
    for &f in &[100.0, 500.0, 1000.0, 1500.0, 2000.0, 3000.0] {
        for &mach in &[0.0, 0.1, 0.2, 0.3, 0.5, 0.8] {
            let p = DuctProblem::air_duct(f, mach).expect("problem");
            let k = p.wavenumber();
            for i in 0..=50 {
                let x = i as f64 / 50.0;
                if mach == 0.0 {
                    let j = pressure_noflow_jet(&p, x).expect("oracle");
                    worst = worst.max(residual_noflow(&p, &j).abs() / (k * k * j.value().norm() + j.d2().norm()));
                } else {
                    let sol = FlowSolution::new(&p).expect("oracle");
                    let (ps, xi) = (sol.pressure(x), sol.velocity(x));
                    let (rr, ri) = residual_flow(&p, &ps);
                    let scale = (1.0 - mach * mach) * ps.d2().norm() + 2.0 * mach * k * ps.d1().norm() + k * k * ps.value().norm();
                    worst = worst.max(rr.hypot(ri) / scale);
                    let (vr, vi) = residual_velocity(&p, &ps, &xi);
                    let vscale = mach * xi.d1().norm() + k * xi.value().norm() + ps.d1().norm() / p.characteristic_impedance();
                    worst = worst.max(vr.hypot(vi) / vscale);
                }
            }
        }
    }
    out.record(worst <= 1e-8, format!("(c) closed forms annihilate the three residuals, worst relative {worst:.2e} (<= 1e-8)"));

    let mut worst: f64 = 0.0;
    for &f in &[250.0, 500.0, 750.0, 1000.0, 1250.0] {
        for &mach in &[0.05, 0.1, 0.2, 0.3] {
            let p = DuctProblem::air_duct(f, mach).expect("problem");
            let direct = impedance(&p, 0.0).expect("oracle").expect("valid").re;
            let closed = re_z0_closed_form(&p).expect("closed form");
            worst = worst.max((closed - direct).abs() / direct.abs());
        }
    }
    out.record(worst <= 1e-10, format!("(d) closed-form Re Z(0) vs direct Z(0) on 20 (f, M) points, worst {worst:.2e} (<= 1e-10)"));

    let rosenbrock = |x: &[f64]| -> duct_pinn::Result<(f64, Vec<f64>)> {
        let (a, b) = (x[1] - x[0] * x[0], 1.0 - x[0]);
        Ok((100.0 * a * a + b * b, vec![-400.0 * x[0] * a - 2.0 * b, 200.0 * a]))
    };
    let opts = LbfgsOptions {
        max_iterations: 500,
        tolerance: 1e-9,
        ..LbfgsOptions::default()
    };
    let res = minimize(rosenbrock, &[-1.2, 1.0], &opts).expect("minimize");
    let monotone = res.loss_history.windows(2).all(|w| w[1] <= w[0]);
    let dim = 6;
    let quad = |x: &[f64]| -> duct_pinn::Result<(f64, Vec<f64>)> {
        let g: Vec<f64> = (0..dim).map(|i| (i + 1) as f64 * x[i] - 1.0).collect();
        Ok(((0..dim).map(|i| 0.5 * (i + 1) as f64 * x[i] * x[i] - x[i]).sum(), g))
    };
    let q = minimize(
        quad,
        &[0.0; 6],
        &LbfgsOptions {
            tolerance: 1e-8,
            max_iterations: 100,
            wolfe_c2: 0.1,
            ..LbfgsOptions::default()
        },
    )
    .expect("minimize");
    let q_ok = q.termination == Termination::ToleranceMet
        && q.iterations <= 3 * dim
        && (0..dim).all(|i| (q.x[i] - 1.0 / (i + 1) as f64).abs() < 1e-8);
    out.record(
        monotone && res.termination == Termination::ToleranceMet && q_ok,
        format!(
            "(e) L-BFGS: Rosenbrock monotone over {} iterations, quadratic solved in {} iterations",
            res.iterations, q.iterations
        ),
    );

    let mut cfg = TrainingConfig::reduced();
    cfg.n_layers = 4;
    cfg.hidden_width = 8;
    cfg.collocation_points = 1_100;
    cfg.lbfgs.max_iterations = 30;
    let bits = |threads: usize| -> Vec<u64> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool");
        pool.install(|| {
            let p = DuctProblem::air_duct(500.0, 0.2).expect("problem");
            let t = train_pressure(&p, &cfg, &mut |_| {}).expect("train");
            let v = train_velocity(&t.field, &cfg, &mut |_| {}).expect("train");
            t.field.params().flatten().into_iter().chain(v.field.params().flatten()).map(f64::to_bits).collect()
        })
    };
    let reference = bits(1);
    out.record(
        reference == bits(1) && reference == bits(4),
        "(f) seeded training bitwise identical across runs and thread counts".into(),
    );
    out
}

fn main() -> ExitCode {
    let settings = Settings::from_env();
    let started = Instant::now();
    println!(
        "acceptance profile: {}",
        match settings.profile {
            Profile::Ci => "ci (set DUCT_PINN_ACCEPTANCE=full for the paper-scale profile)",
            Profile::Full => "full",
        }
    );
    let mut runs = Runs {
        settings: &settings,
        cache: BTreeMap::new(),
    };
    let criteria: [(&str, fn(&mut Runs) -> Outcome); 6] = [
        ("1 no-flow accuracy", noflow_accuracy),
        ("2 mean-flow accuracy", flow_accuracy),
        ("3 impedance accuracy", impedance_accuracy),
        ("4 sign-change reproduction", sign_change),
        ("5 node behaviour", node_behaviour),
        ("6 property suite", |_| property_suite()),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let outcome = check(&mut runs);
        println!(
            "{} criterion {name} ({:.0} s)",
            if outcome.passed { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        for d in &outcome.details {
            println!("    {d}");
        }
        failed += usize::from(!outcome.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0} s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
