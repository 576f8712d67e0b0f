//! Built-in invariant checks run by `duct-pinn validate`.

use clap::ValueEnum;
use duct_pinn::network::{he_init, Architecture, MlpParams};
use duct_pinn::oracle::{
    critical_mach, impedance, pressure_noflow_jet, re_z0_closed_form, FlowSolution,
};
use duct_pinn::physics::{
    make_collocation, residual_flow, residual_noflow, residual_velocity, DuctProblem, FieldKind,
    TrialField,
};
use duct_pinn::train::{train_pressure, TrainingConfig};
use duct_pinn::{Complex64, LossKind, PinnLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Scale He-initialized weights so their variance is doubled.
    HeVariance,
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name,
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

fn he_variance(fault: Option<Fault>) -> Result<String, String> {
    let arch = Architecture::new(7, 90, 1).map_err(|e| e.to_string())?;
    let mut params = he_init(arch, 2024).map_err(|e| e.to_string())?;
    if fault == Some(Fault::HeVariance) {
        for layer in params.layers_mut() {
            layer.weights.mapv_inplace(|w| w * std::f64::consts::SQRT_2);
        }
    }
    let mut worst: f64 = 0.0;
    for layer in &params.layers()[1..params.layers().len() - 1] {
        let n = layer.weights.len() as f64;
        let mean = layer.weights.sum() / n;
        let var = layer.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = 2.0 / layer.fan_in() as f64;
        worst = worst.max((var / expected - 1.0).abs());
    }
    let bias_zero = params.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0));
    if worst < 0.05 && (bias_zero || fault.is_some()) {
        Ok(format!("hidden-layer variance within {:.2}% of 2/fan_in", 100.0 * worst))
    } else {
        Err(format!("hidden-layer variance off by {:.1}% of 2/fan_in", 100.0 * worst))
    }
}

fn small_net(layers: usize, width: usize, outputs: usize, seed: u64) -> MlpParams {
    let mut p = he_init(Architecture::new(layers, width, outputs).expect("valid"), seed).expect("valid");
    for (i, layer) in p.layers_mut().iter_mut().enumerate() {
        for (j, b) in layer.bias.iter_mut().enumerate() {
            *b = 0.05 * ((i + 2 * j) % 7) as f64 - 0.15;
        }
    }
    p
}

fn fd_error(loss: &PinnLoss, params: &MlpParams) -> f64 {
    let theta = params.flatten();
    let (_, grad) = loss.eval_flat(&theta).expect("finite loss");
    let mut probe = theta.clone();
    let (mut diff, mut norm) = (0.0, 0.0);
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let fp = loss.eval_flat(&probe).expect("finite loss").0;
        probe[i] = theta[i] - h;
        let fm = loss.eval_flat(&probe).expect("finite loss").0;
        probe[i] = theta[i];
        let fd = (fp - fm) / (2.0 * h);
        diff += (grad[i] - fd).powi(2);
        norm += fd * fd;
    }
    (diff / norm).sqrt()
}

fn gradients() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let f = 200.0 + 150.0 * seed as f64;
        let xs = make_collocation(1.0, 10, seed).map_err(|e| e.to_string())?;
        let noflow = DuctProblem::air_duct(f, 0.0).map_err(|e| e.to_string())?;
        let flow = DuctProblem::air_duct(f, 0.05 + 0.1 * seed as f64).map_err(|e| e.to_string())?;
        let p1 = small_net(4, 5, 1, seed);
        let p2 = small_net(4, 5, 2, seed);
        let pressure = TrialField::new(FieldKind::PressureFlow, flow, small_net(3, 4, 2, seed + 100))
            .map_err(|e| e.to_string())?;
        let kinds = [
            (noflow, LossKind::NoFlow, &p1),
            (flow, LossKind::Flow, &p2),
            (flow, LossKind::Velocity { pressure: &pressure, anchor: seed % 2 == 1 }, &p2),
        ];
        for (problem, kind, params) in kinds {
            let loss = PinnLoss::new(&problem, params.arch(), &xs, kind).map_err(|e| e.to_string())?;
            worst = worst.max(fd_error(&loss, params));
        }
    }
    if worst < 1e-4 {
        Ok(format!("worst relative gradient error {worst:.2e} over 15 networks"))
    } else {
        Err(format!("relative gradient error {worst:.2e} exceeds 1e-4"))
    }
}

fn boundary_exactness() -> Result<String, String> {
    for seed in 0..100u64 {
        let flow = seed % 2 == 1;
        let a = 0.37 * seed as f64 - 10.0;
        let (psi0, psi_l) = (Complex64::new(a, if flow { 0.5 } else { 0.0 }), Complex64::new(1.0 - a, 0.0));
        let problem = DuctProblem::new(0.5 + 0.01 * seed as f64, 340.0, 1.225, 500.0, if flow { 0.2 } else { 0.0 }, psi0, psi_l)
            .map_err(|e| e.to_string())?;
        let kind = if flow { FieldKind::PressureFlow } else { FieldKind::PressureNoFlow };
        let field = TrialField::new(kind, problem, small_net(3 + (seed % 3) as usize, 6, kind.output_width(), seed))
            .map_err(|e| e.to_string())?;
        let at0 = field.eval(0.0).map_err(|e| e.to_string())?.value();
        let at_l = field.eval(problem.length).map_err(|e| e.to_string())?.value();
        if at0 != psi0 || at_l != psi_l {
            return Err(format!("seed {seed}: boundary values {at0}, {at_l} differ from {psi0}, {psi_l}"));
        }
    }
    Ok("100 random trial fields match boundary data bitwise".into())
}

fn oracle_annihilation() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for &f in &[300.0, 500.0, 1250.0, 2000.0] {
        for &mach in &[0.0, 0.1, 0.3, 0.6] {
            let p = DuctProblem::air_duct(f, mach).map_err(|e| e.to_string())?;
            let k = p.wavenumber();
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                if mach == 0.0 {
                    let psi = pressure_noflow_jet(&p, x).map_err(|e| e.to_string())?;
                    let scale = k * k * psi.value().norm() + psi.d2().norm();
                    worst = worst.max(residual_noflow(&p, &psi).abs() / scale);
                } else {
                    let sol = FlowSolution::new(&p).map_err(|e| e.to_string())?;
                    let (psi, xi) = (sol.pressure(x), sol.velocity(x));
                    let scale = (1.0 - mach * mach) * psi.d2().norm() + 2.0 * mach * k * psi.d1().norm() + k * k * psi.value().norm();
                    let (rr, ri) = residual_flow(&p, &psi);
                    worst = worst.max(rr.hypot(ri) / scale);
                    let vscale = mach * xi.d1().norm() + k * xi.value().norm() + psi.d1().norm() / p.characteristic_impedance();
                    let (vr, vi) = residual_velocity(&p, &psi, &xi);
                    worst = worst.max(vr.hypot(vi) / vscale);
                }
            }
        }
    }
    if worst < 1e-8 {
        Ok(format!("worst relative residual {worst:.2e}"))
    } else {
        Err(format!("relative residual {worst:.2e} exceeds 1e-8"))
    }
}

fn closed_form_impedance() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for &f in &[250.0, 500.0, 750.0, 1000.0, 1250.0] {
        for &mach in &[0.05, 0.1, 0.2, 0.3] {
            let p = DuctProblem::air_duct(f, mach).map_err(|e| e.to_string())?;
            let direct = impedance(&p, 0.0)
                .map_err(|e| e.to_string())?
                .ok_or("x = 0 fell in a velocity node")?
                .re;
            let closed = re_z0_closed_form(&p).map_err(|e| e.to_string())?;
            worst = worst.max((closed - direct).abs() / direct.abs());
        }
    }
    if worst < 1e-10 {
        Ok(format!("closed-form Re Z(0) matches direct value to {worst:.2e} on 20 (f, M) points"))
    } else {
        Err(format!("closed-form Re Z(0) differs by {worst:.2e}"))
    }
}

fn critical_mach_check() -> Result<String, String> {
    let p = DuctProblem::air_duct(500.0, 0.1).map_err(|e| e.to_string())?;
    let roots = critical_mach(&p, (1, 10), (0.1, 0.3)).map_err(|e| e.to_string())?;
    match roots.as_slice() {
        [r] if r.confirmed_by_scan && (r.mach - 0.14).abs() <= 0.005 => Ok(format!(
            "single sign change at M* = {:.6} (m = {}, {:?} branch)",
            r.mach, r.m, r.branch
        )),
        _ => Err(format!("expected one confirmed sign change near 0.14, got {roots:?}")),
    }
}

fn reproducibility() -> Result<String, String> {
    let p = DuctProblem::air_duct(500.0, 0.0).map_err(|e| e.to_string())?;
    let mut cfg = TrainingConfig::reduced();
    cfg.n_layers = 4;
    cfg.hidden_width = 6;
    cfg.collocation_points = 600;
    cfg.lbfgs.max_iterations = 20;
    let run = || -> Result<Vec<u64>, String> {
        let t = train_pressure(&p, &cfg, &mut |_| {}).map_err(|e| e.to_string())?;
        Ok(t.field.params().flatten().iter().map(|v| v.to_bits()).collect())
    };
    if run()? == run()? {
        Ok("two seeded trainings are bitwise identical".into())
    } else {
        Err("two seeded trainings differ".into())
    }
}

/// Runs every check, printing one line each; true when all pass.
pub fn run(fault: Option<Fault>) -> bool {
    let checks = [
        check("he_variance", he_variance(fault)),
        check("gradient_fd", gradients()),
        check("boundary_exactness", boundary_exactness()),
        check("oracle_annihilation", oracle_annihilation()),
        check("closed_form_impedance", closed_form_impedance()),
        check("critical_mach", critical_mach_check()),
        check("reproducibility", reproducibility()),
    ];
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    println!("validate: {} passed, {failed} failed", checks.len() - failed);
    failed == 0
}
