//! Training drivers: pressure field, then (with mean flow) particle velocity
//! against the frozen pressure.

use std::time::{Duration, Instant};

use crate::autodiff::{LossKind, PinnLoss};
use crate::error::Result;
use crate::network::{he_init, Architecture};
use crate::optimizer::{minimize_with_progress, LbfgsOptions, Progress, Termination};
use crate::physics::{make_collocation, DuctProblem, FieldKind, TrialField};

/// Offset between the network seed and the collocation seed.
const COLLOCATION_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub n_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub collocation_points: usize,
    pub lbfgs: LbfgsOptions,
    /// Add the `x = 0` closed-form anchor to the velocity loss.
    pub velocity_anchor: bool,
}

impl Default for TrainingConfig {
    /// 7 layers of which 5 hidden with 90 neurons, 10 000 collocation
    /// points, at most 14 000 L-BFGS iterations with tolerance `1e-5`.
    fn default() -> Self {
        Self {
            n_layers: 7,
            hidden_width: 90,
            seed: 1234,
            collocation_points: 10_000,
            lbfgs: LbfgsOptions::default(),
            velocity_anchor: false,
        }
    }
}

impl TrainingConfig {
    /// Smaller profile: 32 neurons per hidden layer, 2 000 points, at most
    /// 3 000 iterations.
    pub fn reduced() -> Self {
        Self {
            hidden_width: 32,
            collocation_points: 2_000,
            lbfgs: LbfgsOptions {
                max_iterations: 3_000,
                ..LbfgsOptions::default()
            },
            ..Self::default()
        }
    }

    pub fn collocation_seed(&self) -> u64 {
        self.seed.wrapping_add(COLLOCATION_SEED_OFFSET)
    }
}

/// A trained field with its optimization summary.
#[derive(Debug, Clone)]
pub struct TrainedField {
    pub field: TrialField,
    pub seed: u64,
    pub iterations: usize,
    pub evaluations: usize,
    pub final_loss: f64,
    pub initial_loss: f64,
    pub termination: Termination,
    pub wall_time: Duration,
    pub loss_history: Vec<f64>,
}

/// Pressure kind used for a problem: real without flow, complex otherwise.
pub fn pressure_kind(problem: &DuctProblem) -> FieldKind {
    if problem.mach == 0.0 && problem.has_real_boundary_data() {
        FieldKind::PressureNoFlow
    } else {
        FieldKind::PressureFlow
    }
}

fn run(
    problem: &DuctProblem,
    config: &TrainingConfig,
    kind: FieldKind,
    loss_kind: LossKind<'_>,
    seed: u64,
    progress: &mut dyn FnMut(&Progress),
) -> Result<TrainedField> {
    let started = Instant::now();
    let arch = Architecture::new(config.n_layers, config.hidden_width, kind.output_width())?;
    let collocation = make_collocation(problem.length, config.collocation_points, config.collocation_seed())?;
    let loss = PinnLoss::new(problem, arch, &collocation, loss_kind)?;
    let init = he_init(arch, seed)?;
    let mut params = init.clone();
    let res = minimize_with_progress(
        |flat: &[f64]| {
            params.assign_flat(flat)?;
            loss.loss_and_gradient(&params)
        },
        &init.flatten(),
        &config.lbfgs,
        |p| progress(p),
    )?;
    params.assign_flat(&res.x)?;
    Ok(TrainedField {
        field: TrialField::new(kind, *problem, params)?,
        seed,
        iterations: res.iterations,
        evaluations: res.evaluations,
        final_loss: res.loss,
        initial_loss: res.loss_history[0],
        termination: res.termination,
        wall_time: started.elapsed(),
        loss_history: res.loss_history,
    })
}

/// Trains the pressure trial field from He initialization with `config.seed`.
pub fn train_pressure(
    problem: &DuctProblem,
    config: &TrainingConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<TrainedField> {
    let kind = pressure_kind(problem);
    let loss_kind = match kind {
        FieldKind::PressureNoFlow => LossKind::NoFlow,
        _ => LossKind::Flow,
    };
    run(problem, config, kind, loss_kind, config.seed, progress)
}

/// Trains the velocity network against a frozen pressure field, from He
/// initialization with `config.seed + 1`.
pub fn train_velocity(
    pressure: &TrialField,
    config: &TrainingConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<TrainedField> {
    let loss_kind = LossKind::Velocity {
        pressure,
        anchor: config.velocity_anchor,
    };
    run(
        pressure.problem(),
        config,
        FieldKind::VelocityFlow,
        loss_kind,
        config.seed.wrapping_add(1),
        progress,
    )
}
