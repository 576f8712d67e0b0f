//! `solve`, `sweep` and `oracle` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use duct_pinn::analysis::{
    error_report, find_velocity_nodes, impedance_errors, impedance_profile, oracle_profile,
    re_z_sign, relative_error,
};
use duct_pinn::oracle::{scan_sign_changes, sign_indicator};
use duct_pinn::train::{train_pressure, train_velocity};
use duct_pinn::{Complex64, Progress, TrainedField, VelocitySource};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{fields_csv, write_atomic, write_checkpoint_file};
use crate::CliError;

pub const REPORT_FORMAT: &str = "duct-pinn report v1";

#[derive(Debug, Clone, Serialize)]
pub struct NetworkSummary {
    pub kind: String,
    pub seed: u64,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub termination: String,
    pub wall_time_s: f64,
    pub checkpoint: String,
}

impl NetworkSummary {
    fn new(t: &TrainedField, checkpoint: &Path) -> Self {
        Self {
            kind: t.field.kind().name().to_string(),
            seed: t.seed,
            iterations: t.iterations,
            evaluations: t.evaluations,
            initial_loss: t.initial_loss,
            final_loss: t.final_loss,
            termination: t.termination.name().to_string(),
            wall_time_s: t.wall_time.as_secs_f64(),
            checkpoint: checkpoint.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VelocitySummary {
    /// `trained` or `algebraic` (from the pressure slope without flow).
    pub method: String,
    #[serde(flatten)]
    pub network: Option<NetworkSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorSummary {
    pub n_t: usize,
    pub delta_psi: f64,
    pub delta_mag: f64,
    pub delta_phase: f64,
    pub delta_xi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub im_z: Option<f64>,
    pub valid_z_samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary {
    pub re_z_sign: i8,
    pub velocity_nodes: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_re_z_sign: Option<i8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_velocity_nodes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_indicator: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifacts {
    pub fields_csv: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_csv: Option<String>,
}

/// Everything needed to reproduce and judge one solve.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub format: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_unavailable: Option<String>,
    pub config: RunConfig,
    pub pressure: NetworkSummary,
    pub velocity: VelocitySummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorSummary>,
    pub analysis: AnalysisSummary,
    pub artifacts: Artifacts,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub report: Report,
}

impl SolveOutcome {
    pub fn summary_line(&self) -> String {
        let r = &self.report;
        let mut line = format!(
            "f = {} Hz, M = {}: pressure {} after {} iterations (loss {:.3e})",
            r.config.problem.frequency,
            r.config.problem.mach,
            r.pressure.termination,
            r.pressure.iterations,
            r.pressure.final_loss
        );
        if let Some(e) = &r.errors {
            write!(
                line,
                ", delta_psi {:.3e}, delta_mag {:.3e}, delta_phase {:.3e}",
                e.delta_psi, e.delta_mag, e.delta_phase
            )
            .expect("writing to a string");
        }
        line
    }
}

fn progress_printer(label: &'static str, every: usize) -> impl FnMut(&Progress) {
    move |p: &Progress| {
        if every > 0 && p.iteration % every == 0 {
            eprintln!(
                "{label}: iteration {} loss {:.6e} |g|_inf {:.3e} evaluations {}",
                p.iteration, p.loss, p.grad_inf_norm, p.evaluations
            );
        }
    }
}

/// Trains and post-processes one configuration, writing `fields.csv`,
/// `oracle.csv` (when the closed form exists), checkpoints and `report.toml`
/// into `dir`.
pub fn solve(cfg: &RunConfig, dir: &Path, verbose: bool) -> Result<SolveOutcome, CliError> {
    let problem = cfg.problem()?;
    let training = cfg.training()?;
    let n_t = cfg.output.test_points;
    let every = if verbose { cfg.output.progress_every } else { 0 };

    let pressure = train_pressure(&problem, &training, &mut progress_printer("pressure", every))
        .map_err(|e| CliError::Runtime(format!("pressure training failed: {e}")))?;
    let want_velocity = problem.mach > 0.0 || cfg.training.train_velocity;
    let velocity = if want_velocity {
        Some(
            train_velocity(&pressure.field, &training, &mut progress_printer("velocity", every))
                .map_err(|e| CliError::Runtime(format!("velocity training failed: {e}")))?,
        )
    } else {
        None
    };
    let source = match &velocity {
        Some(v) => VelocitySource::Trained(&v.field),
        None => VelocitySource::FromPressure,
    };
    let samples = impedance_profile(&pressure.field, source, n_t)?;

    let fields_path = dir.join("fields.csv");
    write_atomic(&fields_path, fields_csv(&samples).as_bytes())?;
    let pressure_ckpt = dir.join("pressure.ckpt");
    write_checkpoint_file(&pressure_ckpt, pressure.field.params(), pressure.seed)?;
    let velocity_summary = match &velocity {
        Some(v) => {
            let path = dir.join("velocity.ckpt");
            write_checkpoint_file(&path, v.field.params(), v.seed)?;
            VelocitySummary {
                method: "trained".into(),
                network: Some(NetworkSummary::new(v, &path)),
            }
        }
        None => VelocitySummary {
            method: "algebraic".into(),
            network: None,
        },
    };

    let (errors, oracle_csv, oracle_unavailable, truth) = match oracle_profile(&problem, n_t) {
        Ok(truth) => {
            let path = dir.join("oracle.csv");
            write_atomic(&path, fields_csv(&truth).as_bytes())?;
            let psi_p: Vec<Complex64> = samples.iter().map(|s| s.psi).collect();
            let psi_t: Vec<Complex64> = truth.iter().map(|s| s.psi).collect();
            let xi_p: Vec<Complex64> = samples.iter().map(|s| s.xi).collect();
            let xi_t: Vec<Complex64> = truth.iter().map(|s| s.xi).collect();
            let rep = error_report(&psi_p, &psi_t)?;
            let z = impedance_errors(&samples, &truth).ok();
            let summary = ErrorSummary {
                n_t: rep.n_t,
                delta_psi: rep.delta_psi,
                delta_mag: rep.delta_mag,
                delta_phase: rep.delta_phase,
                delta_xi: relative_error(&xi_p, &xi_t)?,
                re_z: z.map(|z| z.re),
                im_z: z.map(|z| z.im),
                valid_z_samples: z.map_or(0, |z| z.samples),
            };
            (Some(summary), Some(path.display().to_string()), None, Some(truth))
        }
        Err(e) => (None, None, Some(e.to_string()), None),
    };

    let analysis = AnalysisSummary {
        re_z_sign: re_z_sign(&samples),
        velocity_nodes: find_velocity_nodes(&samples),
        oracle_re_z_sign: truth.as_ref().map(|t| re_z_sign(t)),
        oracle_velocity_nodes: truth.as_ref().map(|t| find_velocity_nodes(t)),
        sign_indicator: if problem.has_real_boundary_data() {
            sign_indicator(&problem).ok()
        } else {
            None
        },
    };
    let report = Report {
        format: REPORT_FORMAT.into(),
        seed: training.seed,
        oracle_unavailable,
        config: cfg.clone(),
        pressure: NetworkSummary::new(&pressure, &pressure_ckpt),
        velocity: velocity_summary,
        errors,
        analysis,
        artifacts: Artifacts {
            fields_csv: fields_path.display().to_string(),
            oracle_csv,
        },
    };
    let text = toml::to_string(&report)
        .map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    write_atomic(&dir.join("report.toml"), text.as_bytes())?;
    Ok(SolveOutcome { report })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Frequency(Vec<f64>),
    Mach(Vec<f64>),
}

impl SweepAxis {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let s = &cfg.sweep;
        match (s.frequencies.is_empty(), s.machs.is_empty()) {
            (false, true) => Ok(SweepAxis::Frequency(s.frequencies.clone())),
            (true, false) => Ok(SweepAxis::Mach(s.machs.clone())),
            (true, true) => Err(CliError::Usage(
                "sweep axis is empty: give --freqs, --machs, sweep.frequencies or sweep.machs".into(),
            )),
            (false, false) => Err(CliError::Usage(
                "sweep needs exactly one axis, got both frequencies and Mach numbers".into(),
            )),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            SweepAxis::Frequency(v) | SweepAxis::Mach(v) => v,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SweepAxis::Frequency(_) => "frequency",
            SweepAxis::Mach(_) => "mach",
        }
    }
}

const SWEEP_HEADER: &str = "index,frequency,mach,status,pressure_iterations,delta_psi,delta_mag,delta_phase,re_z_error,im_z_error,re_z_sign,oracle_re_z_sign,velocity_nodes,message";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.16e}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    index: usize,
    frequency: f64,
    mach: f64,
    status: String,
    directory: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    re_z_sign: Option<i8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct SignChangeSummary {
    /// Consecutive swept Mach numbers between which the trained `Re Z` flips sign.
    trained_intervals: Vec<[f64; 2]>,
    /// Sign changes of the closed-form indicator on `[min, max]` of the axis.
    indicator_crossings: Vec<f64>,
    indicator_step: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SweepSummary {
    format: String,
    axis: String,
    runs: usize,
    failed: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    sign_change: Option<SignChangeSummary>,
    rows: Vec<SweepRow>,
}

/// Runs one solve per axis value into `dir/run-XX`, then writes `sweep.csv`
/// and `sweep.toml`. Failed runs are recorded and do not stop the sweep.
/// Returns the number of failed runs.
pub fn sweep(cfg: &RunConfig, axis: &SweepAxis, dir: &Path) -> Result<usize, CliError> {
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    let mut rows = Vec::new();
    let mut failed = 0;
    for (i, &value) in axis.values().iter().enumerate() {
        let mut run_cfg = cfg.clone();
        match axis {
            SweepAxis::Frequency(_) => run_cfg.problem.frequency = value,
            SweepAxis::Mach(_) => run_cfg.problem.mach = value,
        }
        let run_dir: PathBuf = dir.join(format!("run-{i:02}"));
        run_cfg.output.directory = run_dir.clone();
        eprintln!("sweep: run {i} with {} = {value}", axis.name());
        let (f, m) = (run_cfg.problem.frequency, run_cfg.problem.mach);
        match solve(&run_cfg, &run_dir, cfg.output.progress_every > 0) {
            Ok(out) => {
                let r = &out.report;
                let e = r.errors.as_ref();
                let nodes: Vec<String> = r.analysis.velocity_nodes.iter().map(|x| format!("{x:.16e}")).collect();
                writeln!(
                    csv,
                    "{i},{},{},ok,{},{},{},{},{},{},{},{},{},",
                    format_args!("{f:.16e}"),
                    format_args!("{m:.16e}"),
                    r.pressure.iterations,
                    opt(e.map(|e| e.delta_psi)),
                    opt(e.map(|e| e.delta_mag)),
                    opt(e.map(|e| e.delta_phase)),
                    opt(e.and_then(|e| e.re_z)),
                    opt(e.and_then(|e| e.im_z)),
                    r.analysis.re_z_sign,
                    r.analysis.oracle_re_z_sign.map_or_else(String::new, |s| s.to_string()),
                    nodes.join(";"),
                )
                .expect("writing to a string");
                rows.push(SweepRow {
                    index: i,
                    frequency: f,
                    mach: m,
                    status: "ok".into(),
                    directory: run_dir.display().to_string(),
                    re_z_sign: Some(r.analysis.re_z_sign),
                    message: None,
                });
            }
            Err(err) => {
                failed += 1;
                eprintln!("sweep: run {i} failed: {err}");
                writeln!(
                    csv,
                    "{i},{f:.16e},{m:.16e},failed,,,,,,,,,,{}",
                    csv_field(&err.to_string())
                )
                .expect("writing to a string");
                rows.push(SweepRow {
                    index: i,
                    frequency: f,
                    mach: m,
                    status: "failed".into(),
                    directory: run_dir.display().to_string(),
                    re_z_sign: None,
                    message: Some(err.to_string()),
                });
            }
        }
    }
    let sign_change = match axis {
        SweepAxis::Mach(machs) => Some(sign_change_summary(cfg, machs, &rows)?),
        SweepAxis::Frequency(_) => None,
    };
    write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
    let summary = SweepSummary {
        format: "duct-pinn sweep v1".into(),
        axis: axis.name().into(),
        runs: rows.len(),
        failed,
        sign_change,
        rows,
    };
    let text = toml::to_string(&summary)
        .map_err(|e| CliError::Runtime(format!("cannot serialize sweep summary: {e}")))?;
    write_atomic(&dir.join("sweep.toml"), text.as_bytes())?;
    Ok(failed)
}

const INDICATOR_STEP: f64 = 1e-4;

fn sign_change_summary(cfg: &RunConfig, machs: &[f64], rows: &[SweepRow]) -> Result<SignChangeSummary, CliError> {
    let mut ordered: Vec<(f64, i8)> = rows
        .iter()
        .filter_map(|r| r.re_z_sign.filter(|&s| s != 0).map(|s| (r.mach, s)))
        .collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
    let trained_intervals = ordered
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| [w[0].0, w[1].0])
        .collect();
    let lo = machs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = machs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let problem = cfg.problem()?;
    let indicator_crossings = if problem.has_real_boundary_data() && hi > lo {
        scan_sign_changes(&problem, (lo, hi), INDICATOR_STEP).unwrap_or_default()
    } else {
        Vec::new()
    };
    Ok(SignChangeSummary {
        trained_intervals,
        indicator_crossings,
        indicator_step: INDICATOR_STEP,
    })
}

/// Writes the closed-form fields to `dir/oracle.csv`.
pub fn oracle_dump(cfg: &RunConfig, dir: &Path) -> Result<PathBuf, CliError> {
    let problem = cfg.problem()?;
    if cfg.output.test_points < 2 {
        return Err(CliError::Usage("output.test_points must be at least 2".into()));
    }
    let truth = oracle_profile(&problem, cfg.output.test_points)?;
    let path = dir.join("oracle.csv");
    write_atomic(&path, fields_csv(&truth).as_bytes())?;
    Ok(path)
}
