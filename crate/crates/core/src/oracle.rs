//! Closed-form plane-wave solutions used as ground truth, the impedance at
//! the inlet and the Mach numbers at which its real part changes sign.
//!
//! Time dependence is `exp(j omega t)`. With mean flow the pressure is
//! `A e^{-j k+ x} + B e^{j k- x}` with convective wavenumbers
//! `k+ = k / (1 + M)` and `k- = k / (1 - M)`, and the particle velocity
//! follows from the momentum equation as `(A e^{-j k+ x} - B e^{j k- x}) / (rho c)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::physics::{ComplexJet, DuctProblem};

/// Modal denominators below this magnitude are treated as resonant.
pub const RESONANCE_GUARD: f64 = 1e-9;

/// Convective wavenumbers of the forward (`plus`) and backward (`minus`) waves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvectiveWavenumbers {
    pub plus: f64,
    pub minus: f64,
}

impl ConvectiveWavenumbers {
    pub fn of(problem: &DuctProblem) -> Self {
        let k = problem.wavenumber();
        Self {
            plus: k / (1.0 + problem.mach),
            minus: k / (1.0 - problem.mach),
        }
    }
}

/// Amplitudes of the forward/backward pressure (`a`, `b`) and velocity
/// (`c`, `d`) waves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowModalConstants {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

/// Pressure without mean flow,
/// `psi0 cos(kx) + (psi_L - psi0 cos(kL)) / sin(kL) * sin(kx)`.
pub fn pressure_noflow(problem: &DuctProblem, x: f64) -> Result<f64> {
    Ok(pressure_noflow_jet(problem, x)?.re.value)
}

/// [`pressure_noflow`] with its first two derivatives.
pub fn pressure_noflow_jet(problem: &DuctProblem, x: f64) -> Result<ComplexJet> {
    if !problem.has_real_boundary_data() {
        return Err(Error::Unsupported(
            "the no-flow closed form is implemented for real boundary pressures".into(),
        ));
    }
    let k = problem.wavenumber();
    let kl = k * problem.length;
    let s = kl.sin();
    if s.abs() <= RESONANCE_GUARD {
        return Err(Error::Singular(format!("sin(kL) = {s:e}: duct resonance")));
    }
    let p0 = problem.psi0.re;
    let b = (problem.psi_l.re - p0 * kl.cos()) / s;
    let (sx, cx) = (k * x).sin_cos();
    let v = p0 * cx + b * sx;
    let d1 = k * (-p0 * sx + b * cx);
    Ok(ComplexJet::from_complex(
        Complex64::new(v, 0.0),
        Complex64::new(d1, 0.0),
        Complex64::new(-k * k * v, 0.0),
    ))
}

/// Wave amplitudes satisfying `psi(0) = psi0`, `psi(L) = psi_L`.
pub fn flow_constants(problem: &DuctProblem) -> Result<FlowModalConstants> {
    let kc = ConvectiveWavenumbers::of(problem);
    let l = problem.length;
    let j = Complex64::i();
    let fwd = (-j * kc.plus * l).exp();
    let bwd = (j * kc.minus * l).exp();
    let den = fwd - bwd;
    if den.norm() <= RESONANCE_GUARD {
        return Err(Error::Singular(format!(
            "|e^(-j k+ L) - e^(j k- L)| = {:e}: convected duct resonance",
            den.norm()
        )));
    }
    let a = (problem.psi_l - problem.psi0 * bwd) / den;
    let b = problem.psi0 - a;
    let rho_c = problem.characteristic_impedance();
    Ok(FlowModalConstants {
        a,
        b,
        c: a / rho_c,
        d: -b / rho_c,
    })
}

/// Closed-form pressure and velocity with mean flow, with derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSolution {
    pub wavenumbers: ConvectiveWavenumbers,
    pub constants: FlowModalConstants,
}

impl FlowSolution {
    pub fn new(problem: &DuctProblem) -> Result<Self> {
        Ok(Self {
            wavenumbers: ConvectiveWavenumbers::of(problem),
            constants: flow_constants(problem)?,
        })
    }

    fn waves(&self, x: f64) -> (Complex64, Complex64) {
        let j = Complex64::i();
        (
            (-j * self.wavenumbers.plus * x).exp(),
            (j * self.wavenumbers.minus * x).exp(),
        )
    }

    fn combine(&self, x: f64, p: Complex64, q: Complex64) -> ComplexJet {
        let j = Complex64::i();
        let (e1, e2) = self.waves(x);
        let (kp, km) = (self.wavenumbers.plus, self.wavenumbers.minus);
        let u = p * e1;
        let v = q * e2;
        ComplexJet::from_complex(u + v, -j * kp * u + j * km * v, -kp * kp * u - km * km * v)
    }

    pub fn pressure(&self, x: f64) -> ComplexJet {
        self.combine(x, self.constants.a, self.constants.b)
    }

    pub fn velocity(&self, x: f64) -> ComplexJet {
        self.combine(x, self.constants.c, self.constants.d)
    }

    /// Upper bound of `|xi|` over any interval.
    pub fn velocity_envelope(&self) -> f64 {
        self.constants.c.norm() + self.constants.d.norm()
    }
}

pub fn pressure_flow(problem: &DuctProblem, x: f64) -> Result<Complex64> {
    Ok(FlowSolution::new(problem)?.pressure(x).value())
}

pub fn velocity_flow(problem: &DuctProblem, x: f64) -> Result<Complex64> {
    Ok(FlowSolution::new(problem)?.velocity(x).value())
}

/// `Z = psi / xi` at `x`, or `None` within a velocity node where
/// `|xi| < 1e-3 (|C| + |D|)`.
pub fn impedance(problem: &DuctProblem, x: f64) -> Result<Option<Complex64>> {
    let sol = FlowSolution::new(problem)?;
    let xi = sol.velocity(x).value();
    if xi.norm() < 1e-3 * sol.velocity_envelope() {
        return Ok(None);
    }
    Ok(Some(sol.pressure(x).value() / xi))
}

fn require_real(problem: &DuctProblem) -> Result<(f64, f64)> {
    if !problem.has_real_boundary_data() {
        return Err(Error::Unsupported(
            "impedance sign analysis assumes real boundary pressures".into(),
        ));
    }
    Ok((problem.psi0.re, problem.psi_l.re))
}

/// `s = psi0 psi_L (cos k+ L - cos k- L)`; `Re Z` has the sign of `s`.
pub fn sign_indicator(problem: &DuctProblem) -> Result<f64> {
    let (p0, pl) = require_real(problem)?;
    let kc = ConvectiveWavenumbers::of(problem);
    let l = problem.length;
    Ok(p0 * pl * ((kc.plus * l).cos() - (kc.minus * l).cos()))
}

/// Closed form of `Re Z(0)`:
///
/// ```text
///             2 rho c psi0 psiL (cos k+L - cos k-L)
/// ---------------------------------------------------------------------
/// [2 psiL - psi0 (cos k+L + cos k-L)]^2 + [psi0 (sin k+L - sin k-L)]^2
/// ```
pub fn re_z0_closed_form(problem: &DuctProblem) -> Result<f64> {
    let (p0, pl) = require_real(problem)?;
    let kc = ConvectiveWavenumbers::of(problem);
    let l = problem.length;
    let (sp, cp) = (kc.plus * l).sin_cos();
    let (sm, cm) = (kc.minus * l).sin_cos();
    let num = 2.0 * problem.characteristic_impedance() * p0 * pl * (cp - cm);
    let den = (2.0 * pl - p0 * (cp + cm)).powi(2) + (p0 * (sp - sm)).powi(2);
    if den <= 0.0 {
        return Err(Error::Singular("Re Z(0) denominator vanishes".into()));
    }
    Ok(num / den)
}

/// Which family of roots of `cos k+L = cos k-L` a crossing belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RootBranch {
    /// `k+ L = 2 pi m - k- L`, i.e. `1 - M^2 = 2 f L / (c m)`.
    Sum,
    /// `k- L - k+ L = 2 pi m`, i.e. `M / (1 - M^2) = m c / (2 f L)`.
    Difference,
}

/// A Mach number where `Re Z` changes sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalMach {
    pub m: u32,
    pub branch: RootBranch,
    pub mach: f64,
    /// Sign change of the indicator found by the scan within one step of `mach`.
    pub confirmed_by_scan: bool,
}

/// Sign changes of [`sign_indicator`] on a uniform Mach grid with spacing
/// `step`; returns the midpoint of every bracketing interval.
pub fn scan_sign_changes(problem: &DuctProblem, mach_range: (f64, f64), step: f64) -> Result<Vec<f64>> {
    let (lo, hi) = mach_range;
    if !(0.0..1.0).contains(&lo) || !(lo..1.0).contains(&hi) || !(step > 0.0) {
        return Err(Error::Input(format!(
            "Mach range [{lo}, {hi}] with step {step} must lie in [0, 1)"
        )));
    }
    let n = ((hi - lo) / step).round() as usize;
    let mut crossings = Vec::new();
    let mut prev = sign_indicator(&problem.with_mach(lo)?)?;
    for i in 1..=n {
        let m = (lo + i as f64 * step).min(hi);
        let s = sign_indicator(&problem.with_mach(m)?)?;
        if prev != 0.0 && s != 0.0 && (prev < 0.0) != (s < 0.0) {
            crossings.push(m - 0.5 * step);
        }
        if s != 0.0 {
            prev = s;
        }
    }
    Ok(crossings)
}

/// Mach numbers in `mach_range` where `cos k+L = cos k-L`, solved in closed
/// form for `m` in `m_range` on both root branches, each checked against a
/// sign scan of the indicator at resolution `1e-4`.
pub fn critical_mach(
    problem: &DuctProblem,
    m_range: (u32, u32),
    mach_range: (f64, f64),
) -> Result<Vec<CriticalMach>> {
    require_real(problem)?;
    const STEP: f64 = 1e-4;
    let scan = scan_sign_changes(problem, mach_range, STEP)?;
    // dimensionless k L / pi = 2 f L / c
    let q = 2.0 * problem.frequency * problem.length / problem.sound_speed;
    let (lo, hi) = mach_range;
    let mut out = Vec::new();
    for m in m_range.0.max(1)..=m_range.1 {
        let mf = m as f64;
        // sum branch: 1 - M^2 = q / m
        let r = 1.0 - q / mf;
        if r >= 0.0 {
            out.push((m, RootBranch::Sum, r.sqrt()));
        }
        // difference branch: M / (1 - M^2) = m / q, positive root of (m/q) M^2 + M - m/q = 0
        let a = mf / q;
        out.push((m, RootBranch::Difference, (-1.0 + (1.0 + 4.0 * a * a).sqrt()) / (2.0 * a)));
    }
    let mut roots: Vec<CriticalMach> = out
        .into_iter()
        .filter(|&(_, _, mach)| (lo..=hi).contains(&mach))
        .map(|(m, branch, mach)| CriticalMach {
            m,
            branch,
            mach,
            confirmed_by_scan: scan.iter().any(|c| (c - mach).abs() <= STEP),
        })
        .collect();
    roots.sort_by(|a, b| a.mach.total_cmp(&b.mach));
    Ok(roots)
}

/// Right side of the sum-branch relation, `2 f L / (c m)`.
pub fn sum_branch_rhs(problem: &DuctProblem, m: u32) -> f64 {
    2.0 * problem.frequency * problem.length / (problem.sound_speed * m as f64)
}

/// `k+ L - k- L` for positive Mach is negative, so `k+ L = 2 pi m + k- L`
/// has no solution with `m >= 1`; returns that gap for diagnostics.
pub fn plus_branch_gap(problem: &DuctProblem) -> f64 {
    let kc = ConvectiveWavenumbers::of(problem);
    (kc.plus - kc.minus) * problem.length / (2.0 * PI)
}
