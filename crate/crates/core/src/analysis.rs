//! Error metrics, particle velocity and impedance post-processing, and
//! velocity-node detection.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::oracle::{self, FlowSolution};
use crate::physics::{DuctProblem, FieldKind, TrialField};

/// Default number of linearly spaced test points.
pub const DEFAULT_TEST_POINTS: usize = 500;

/// `|xi|` below this fraction of the profile maximum makes `Z` invalid.
pub const NODE_GUARD: f64 = 1e-3;

/// Interior minima of `|xi|` deeper than this fraction of the profile
/// maximum count as velocity nodes.
pub const NODE_DEPTH: f64 = 0.5;

/// Pressure, velocity and impedance at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub x: f64,
    pub psi: Complex64,
    pub xi: Complex64,
    pub z: Complex64,
    pub valid_z: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub delta_psi: f64,
    pub delta_mag: f64,
    pub delta_phase: f64,
    pub n_t: usize,
}

/// `n` equally spaced points from `0` to `length` inclusive.
pub fn linspace(length: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| if i + 1 == n { length } else { length * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

fn check_pair(len_pred: usize, len_truth: usize) -> Result<()> {
    if len_pred != len_truth {
        return Err(Error::Structural(format!(
            "prediction has {len_pred} points, reference has {len_truth}"
        )));
    }
    if len_truth == 0 {
        return Err(Error::Input("no test points".into()));
    }
    Ok(())
}

/// `sqrt(sum |p - t|^2) / sqrt(sum |t|^2)`.
pub fn relative_error(predicted: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    check_pair(predicted.len(), truth.len())?;
    let den: f64 = truth.iter().map(|t| t.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let num: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).norm_sqr()).sum();
    Ok((num / den).sqrt())
}

/// [`relative_error`] for real sequences.
pub fn relative_error_real(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(predicted.len(), truth.len())?;
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    let num: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Phase of each sample, made continuous along the sequence.
pub fn unwrapped_phase(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for v in values {
        let raw = v.arg();
        if let Some(p) = prev {
            let mut jump = raw + offset - p;
            while jump > PI {
                offset -= 2.0 * PI;
                jump -= 2.0 * PI;
            }
            while jump < -PI {
                offset += 2.0 * PI;
                jump += 2.0 * PI;
            }
        }
        let cur = raw + offset;
        out.push(cur);
        prev = Some(cur);
    }
    out
}

/// Relative errors of the magnitude and of the unwrapped phase.
pub fn magnitude_phase_errors(predicted: &[Complex64], truth: &[Complex64]) -> Result<(f64, f64)> {
    check_pair(predicted.len(), truth.len())?;
    let mag_p: Vec<f64> = predicted.iter().map(|v| v.norm()).collect();
    let mag_t: Vec<f64> = truth.iter().map(|v| v.norm()).collect();
    let delta_mag = relative_error_real(&mag_p, &mag_t)?;
    let delta_phase = relative_error_real(&unwrapped_phase(predicted), &unwrapped_phase(truth))?;
    Ok((delta_mag, delta_phase))
}

pub fn error_report(predicted: &[Complex64], truth: &[Complex64]) -> Result<ErrorReport> {
    let delta_psi = relative_error(predicted, truth)?;
    let (delta_mag, delta_phase) = magnitude_phase_errors(predicted, truth)?;
    Ok(ErrorReport {
        delta_psi,
        delta_mag,
        delta_phase,
        n_t: truth.len(),
    })
}

/// Particle velocity without flow, `xi = -psi' / (j omega rho)`, from the
/// slope of a trained pressure field.
pub fn velocity_noflow(pressure: &TrialField, x: f64) -> Result<Complex64> {
    let p = pressure.problem();
    let slope = pressure.eval(x)?.d1();
    Ok(velocity_from_slope(p, slope))
}

fn velocity_from_slope(problem: &DuctProblem, slope: Complex64) -> Complex64 {
    -slope / (Complex64::i() * problem.angular_frequency() * problem.density)
}

/// Where the particle velocity of a profile comes from.
#[derive(Debug, Clone, Copy)]
pub enum VelocitySource<'a> {
    /// From the pressure slope through the no-flow momentum relation.
    FromPressure,
    /// A separately trained velocity network.
    Trained(&'a TrialField),
}

fn assemble(xs: &[f64], psi: Vec<Complex64>, xi: Vec<Complex64>) -> Vec<FieldSample> {
    let max_xi = xi.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let guard = NODE_GUARD * max_xi;
    xs.iter()
        .zip(psi)
        .zip(xi)
        .map(|((&x, psi), xi)| {
            let valid_z = xi.norm() >= guard && xi.norm() > 0.0;
            let z = if valid_z {
                psi / xi
            } else {
                Complex64::new(f64::NAN, f64::NAN)
            };
            FieldSample {
                x,
                psi,
                xi,
                z,
                valid_z,
            }
        })
        .collect()
}

/// Pressure, velocity and impedance of trained fields on `n_t` linearly
/// spaced points including both ends.
pub fn impedance_profile(
    pressure: &TrialField,
    velocity: VelocitySource<'_>,
    n_t: usize,
) -> Result<Vec<FieldSample>> {
    if n_t < 2 {
        return Err(Error::Input(format!("need at least 2 test points, got {n_t}")));
    }
    if !pressure.kind().is_pressure() {
        return Err(Error::Input("first field must be a pressure field".into()));
    }
    let problem = pressure.problem();
    let xs = linspace(problem.length, n_t);
    let p_jets = pressure.eval_many(&xs)?;
    let psi: Vec<Complex64> = p_jets.iter().map(|j| j.value()).collect();
    let xi: Vec<Complex64> = match velocity {
        VelocitySource::FromPressure => p_jets
            .iter()
            .map(|j| velocity_from_slope(problem, j.d1()))
            .collect(),
        VelocitySource::Trained(field) => {
            if field.kind() != FieldKind::VelocityFlow {
                return Err(Error::Input("velocity source must be a velocity field".into()));
            }
            field.eval_many(&xs)?.iter().map(|j| j.value()).collect()
        }
    };
    Ok(assemble(&xs, psi, xi))
}

/// Closed-form profile on the same grid as [`impedance_profile`].
pub fn oracle_profile(problem: &DuctProblem, n_t: usize) -> Result<Vec<FieldSample>> {
    if n_t < 2 {
        return Err(Error::Input(format!("need at least 2 test points, got {n_t}")));
    }
    let xs = linspace(problem.length, n_t);
    let (psi, xi) = if problem.mach == 0.0 {
        let mut psi = Vec::with_capacity(n_t);
        let mut xi = Vec::with_capacity(n_t);
        for &x in &xs {
            let j = oracle::pressure_noflow_jet(problem, x)?;
            psi.push(j.value());
            xi.push(velocity_from_slope(problem, j.d1()));
        }
        (psi, xi)
    } else {
        let sol = FlowSolution::new(problem)?;
        (
            xs.iter().map(|&x| sol.pressure(x).value()).collect(),
            xs.iter().map(|&x| sol.velocity(x).value()).collect(),
        )
    };
    Ok(assemble(&xs, psi, xi))
}

/// Positions of velocity nodes: interior strict local minima of `|xi|`
/// below [`NODE_DEPTH`] times the maximum, refined by fitting a parabola to
/// `|xi|^2` through the minimum and its two neighbours.
pub fn find_velocity_nodes(samples: &[FieldSample]) -> Vec<f64> {
    if samples.len() < 3 {
        return Vec::new();
    }
    let mag: Vec<f64> = samples.iter().map(|s| s.xi.norm()).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut nodes = Vec::new();
    for i in 1..samples.len() - 1 {
        if !(mag[i] < mag[i - 1] && mag[i] <= mag[i + 1] && mag[i] < NODE_DEPTH * max) {
            continue;
        }
        let (x0, x1, x2) = (samples[i - 1].x, samples[i].x, samples[i + 1].x);
        let (y0, y1, y2) = (mag[i - 1].powi(2), mag[i].powi(2), mag[i + 1].powi(2));
        let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
        let den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
        let x = if den != 0.0 { x1 - 0.5 * num / den } else { x1 };
        nodes.push(x.clamp(x0, x2));
    }
    nodes
}

/// Relative errors of `Re Z` and `Im Z` over the samples valid in both
/// profiles, with the number of samples used.
pub fn impedance_errors(predicted: &[FieldSample], truth: &[FieldSample]) -> Result<ImpedanceErrors> {
    check_pair(predicted.len(), truth.len())?;
    let (mut re_p, mut re_t, mut im_p, mut im_t) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (p, t) in predicted.iter().zip(truth) {
        if p.valid_z && t.valid_z {
            re_p.push(p.z.re);
            re_t.push(t.z.re);
            im_p.push(p.z.im);
            im_t.push(t.z.im);
        }
    }
    if re_t.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    Ok(ImpedanceErrors {
        re: relative_error_real(&re_p, &re_t)?,
        im: relative_error_real(&im_p, &im_t)?,
        samples: re_t.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceErrors {
    pub re: f64,
    pub im: f64,
    pub samples: usize,
}

/// Sign of `Re Z` shared by the majority of valid samples: `1`, `-1`, or
/// `0` for a tie or no valid sample.
pub fn re_z_sign(samples: &[FieldSample]) -> i8 {
    let (pos, neg) = samples
        .iter()
        .filter(|s| s.valid_z)
        .fold((0usize, 0usize), |(p, n), s| {
            if s.z.re > 0.0 {
                (p + 1, n)
            } else if s.z.re < 0.0 {
                (p, n + 1)
            } else {
                (p, n)
            }
        });
    match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
    }
}
