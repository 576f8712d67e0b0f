//! Duct problem definition, boundary-exact trial fields and the residuals of
//! the Helmholtz, convected Helmholtz and momentum equations.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{self, Order};
use crate::error::{Error, Result};
use crate::network::MlpParams;

/// Physical definition of a uniform duct driven by prescribed end pressures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuctProblem {
    /// Duct length in m.
    pub length: f64,
    /// Speed of sound in m/s.
    pub sound_speed: f64,
    /// Density in kg/m^3.
    pub density: f64,
    /// Frequency in Hz.
    pub frequency: f64,
    /// Mean-flow Mach number.
    pub mach: f64,
    /// Pressure at `x = 0`.
    pub psi0: Complex64,
    /// Pressure at `x = L`.
    pub psi_l: Complex64,
}

impl DuctProblem {
    pub fn new(
        length: f64,
        sound_speed: f64,
        density: f64,
        frequency: f64,
        mach: f64,
        psi0: Complex64,
        psi_l: Complex64,
    ) -> Result<Self> {
        let p = Self {
            length,
            sound_speed,
            density,
            frequency,
            mach,
            psi0,
            psi_l,
        };
        p.validate()?;
        Ok(p)
    }

    /// 1 m air-filled duct (c = 340 m/s, rho = 1.225 kg/m^3) with
    /// `psi(0) = 1`, `psi(L) = -1`.
    pub fn air_duct(frequency: f64, mach: f64) -> Result<Self> {
        Self::new(
            1.0,
            340.0,
            1.225,
            frequency,
            mach,
            Complex64::new(1.0, 0.0),
            Complex64::new(-1.0, 0.0),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("sound_speed", self.sound_speed),
            ("density", self.density),
            ("frequency", self.frequency),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Input(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.mach.is_finite() && (0.0..1.0).contains(&self.mach)) {
            return Err(Error::Input(format!(
                "Mach number must satisfy 0 <= M < 1, got {}",
                self.mach
            )));
        }
        let finite = |c: Complex64| c.re.is_finite() && c.im.is_finite();
        if !finite(self.psi0) || !finite(self.psi_l) {
            return Err(Error::Input("boundary pressures must be finite".into()));
        }
        Ok(())
    }

    pub fn with_mach(&self, mach: f64) -> Result<Self> {
        let p = Self { mach, ..*self };
        p.validate()?;
        Ok(p)
    }

    pub fn with_frequency(&self, frequency: f64) -> Result<Self> {
        let p = Self { frequency, ..*self };
        p.validate()?;
        Ok(p)
    }

    /// `k = 2 pi f / c`.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI * self.frequency / self.sound_speed
    }

    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    /// `rho c`.
    pub fn characteristic_impedance(&self) -> f64 {
        self.density * self.sound_speed
    }

    pub fn has_real_boundary_data(&self) -> bool {
        self.psi0.im == 0.0 && self.psi_l.im == 0.0
    }

    fn check_position(&self, x: f64) -> Result<()> {
        if (0.0..=self.length).contains(&x) {
            Ok(())
        } else {
            Err(Error::Domain { x, length: self.length })
        }
    }
}

/// Value and first two derivatives of a scalar function of `x`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }

    pub fn scale(self, a: f64) -> Self {
        Self::new(a * self.value, a * self.d1, a * self.d2)
    }
}

/// Real and imaginary jets of a complex field.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexJet {
    pub re: Jet,
    pub im: Jet,
}

impl ComplexJet {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value, self.im.value)
    }

    pub fn d1(&self) -> Complex64 {
        Complex64::new(self.re.d1, self.im.d1)
    }

    pub fn d2(&self) -> Complex64 {
        Complex64::new(self.re.d2, self.im.d2)
    }

    /// Jets of `f(x)` given as complex value and derivatives.
    pub fn from_complex(value: Complex64, d1: Complex64, d2: Complex64) -> Self {
        Self {
            re: Jet::new(value.re, d1.re, d2.re),
            im: Jet::new(value.im, d1.im, d2.im),
        }
    }
}

/// Linear blending weights `(phi_L, phi_0) = ((L - x) / L, x / L)`.
pub fn blend_functions(length: f64, x: f64) -> Result<(f64, f64)> {
    if !(0.0..=length).contains(&x) {
        return Err(Error::Domain { x, length });
    }
    Ok(((length - x) / length, x / length))
}

/// Trial construction `phi_L a + phi_0 b + phi_0 phi_L g(x)` for one real
/// component with end values `a` at `x = 0` and `b` at `x = L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialBlend {
    length: f64,
    start: f64,
    end: f64,
}

impl TrialBlend {
    pub fn new(length: f64, start: f64, end: f64) -> Self {
        Self { length, start, end }
    }

    /// `phi_0 phi_L` and its first two derivatives.
    fn bubble(&self, x: f64) -> Jet {
        let l2 = self.length * self.length;
        Jet::new(
            x * (self.length - x) / l2,
            (self.length - 2.0 * x) / l2,
            -2.0 / l2,
        )
    }

    /// Trial jet from the raw network jet `g`.
    pub fn apply(&self, x: f64, g: Jet) -> Jet {
        let l = self.length;
        let q = self.bubble(x);
        // phi_L a + phi_0 b is affine in x
        let base = ((l - x) * self.start + x * self.end) / l;
        let slope = (self.end - self.start) / l;
        // at the end points the bubble vanishes, so the boundary value is exact
        let value = if x == 0.0 {
            self.start
        } else if x == l {
            self.end
        } else {
            base + q.value * g.value
        };
        Jet::new(
            value,
            slope + q.d1 * g.value + q.value * g.d1,
            q.d2 * g.value + 2.0 * q.d1 * g.d1 + q.value * g.d2,
        )
    }

    /// Adjoint of [`TrialBlend::apply`]: maps a gradient with respect to the
    /// trial jet to a gradient with respect to the raw network jet.
    pub fn pullback(&self, x: f64, g: Jet) -> Jet {
        let q = self.bubble(x);
        Jet::new(
            q.value * g.value + q.d1 * g.d1 + q.d2 * g.d2,
            q.value * g.d1 + 2.0 * q.d1 * g.d2,
            q.value * g.d2,
        )
    }
}

/// What a trained network represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    /// Real pressure without mean flow (one output).
    PressureNoFlow,
    /// Complex pressure with mean flow (two outputs).
    PressureFlow,
    /// Complex particle velocity with mean flow (two outputs, no boundary blend).
    VelocityFlow,
}

impl FieldKind {
    pub fn is_pressure(self) -> bool {
        matches!(self, FieldKind::PressureNoFlow | FieldKind::PressureFlow)
    }

    pub fn output_width(self) -> usize {
        match self {
            FieldKind::PressureNoFlow => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::PressureNoFlow => "pressure_noflow",
            FieldKind::PressureFlow => "pressure_flow",
            FieldKind::VelocityFlow => "velocity_flow",
        }
    }
}

/// A network together with the construction that turns its output into a
/// physical field.
///
/// Pressure kinds blend the boundary values so that `psi(0) = psi0` and
/// `psi(L) = psi_L` hold exactly. The velocity kind is the raw network
/// output divided by `rho c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialField {
    kind: FieldKind,
    problem: DuctProblem,
    params: MlpParams,
}

impl TrialField {
    pub fn new(kind: FieldKind, problem: DuctProblem, params: MlpParams) -> Result<Self> {
        problem.validate()?;
        if params.arch().output_width != kind.output_width() {
            return Err(Error::Structural(format!(
                "{} needs {} network outputs, got {}",
                kind.name(),
                kind.output_width(),
                params.arch().output_width
            )));
        }
        if kind == FieldKind::PressureNoFlow && !problem.has_real_boundary_data() {
            return Err(Error::Input(
                "a real pressure field needs real boundary pressures".into(),
            ));
        }
        Ok(Self {
            kind,
            problem,
            params,
        })
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn problem(&self) -> &DuctProblem {
        &self.problem
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    fn blends(&self) -> (TrialBlend, TrialBlend) {
        let p = &self.problem;
        (
            TrialBlend::new(p.length, p.psi0.re, p.psi_l.re),
            TrialBlend::new(p.length, p.psi0.im, p.psi_l.im),
        )
    }

    fn assemble(&self, x: f64, raw_re: Jet, raw_im: Jet) -> ComplexJet {
        let (blend_re, blend_im) = self.blends();
        match self.kind {
            FieldKind::PressureNoFlow => ComplexJet {
                re: blend_re.apply(x, raw_re),
                im: Jet::default(),
            },
            FieldKind::PressureFlow => ComplexJet {
                re: blend_re.apply(x, raw_re),
                im: blend_im.apply(x, raw_im),
            },
            FieldKind::VelocityFlow => {
                let s = 1.0 / self.problem.characteristic_impedance();
                ComplexJet {
                    re: raw_re.scale(s),
                    im: raw_im.scale(s),
                }
            }
        }
    }

    /// Field value and derivatives at `x`.
    pub fn eval(&self, x: f64) -> Result<ComplexJet> {
        self.problem.check_position(x)?;
        let out = autodiff::eval_with_input_derivatives(&self.params, x)?;
        let raw_im = if out.value.len() > 1 { out.jet(1) } else { Jet::default() };
        Ok(self.assemble(x, out.jet(0), raw_im))
    }

    /// Batched [`TrialField::eval`].
    pub fn eval_many(&self, xs: &[f64]) -> Result<Vec<ComplexJet>> {
        for &x in xs {
            self.problem.check_position(x)?;
        }
        self.params.check_finite()?;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(1024) {
            let cache = autodiff::forward(&self.params, chunk, Order::Second);
            for (i, &x) in chunk.iter().enumerate() {
                let raw_im = if self.kind.output_width() > 1 {
                    cache.jet(1, i)
                } else {
                    Jet::default()
                };
                out.push(self.assemble(x, cache.jet(0, i), raw_im));
            }
        }
        Ok(out)
    }
}

/// `psi'' + k^2 psi`.
pub fn helmholtz_residual(k: f64, psi: &Jet) -> f64 {
    psi.d2 + k * k * psi.value
}

/// Real and imaginary parts of
/// `(1 - M^2) psi'' - 2 j M k psi' + k^2 psi`.
pub fn convected_residual(mach: f64, k: f64, re: &Jet, im: &Jet) -> (f64, f64) {
    let a = 1.0 - mach * mach;
    let b = 2.0 * mach * k;
    let k2 = k * k;
    (
        a * re.d2 + b * im.d1 + k2 * re.value,
        a * im.d2 - b * re.d1 + k2 * im.value,
    )
}

/// Gradient of `r_re^2 + r_im^2` with respect to the real and imaginary
/// trial jets, halved (the caller scales by `2 / N`).
pub fn convected_residual_pullback(mach: f64, k: f64, rr: f64, ri: f64) -> (Jet, Jet) {
    let a = 1.0 - mach * mach;
    let b = 2.0 * mach * k;
    let k2 = k * k;
    (
        Jet::new(k2 * rr, -b * ri, a * rr),
        Jet::new(k2 * ri, b * rr, a * ri),
    )
}

/// No-flow residual of a pressure field at one point.
pub fn residual_noflow(problem: &DuctProblem, psi: &ComplexJet) -> f64 {
    helmholtz_residual(problem.wavenumber(), &psi.re)
}

/// Mean-flow residual pair of a complex pressure field at one point.
pub fn residual_flow(problem: &DuctProblem, psi: &ComplexJet) -> (f64, f64) {
    convected_residual(problem.mach, problem.wavenumber(), &psi.re, &psi.im)
}

/// Real and imaginary parts of the momentum residual
/// `j k xi + M xi' + psi' / (rho c)`.
pub fn residual_velocity(problem: &DuctProblem, psi: &ComplexJet, xi: &ComplexJet) -> (f64, f64) {
    let m = problem.mach;
    let k = problem.wavenumber();
    let inv = 1.0 / problem.characteristic_impedance();
    (
        m * xi.re.d1 - k * xi.im.value + inv * psi.re.d1,
        m * xi.im.d1 + k * xi.re.value + inv * psi.im.d1,
    )
}

/// `n` collocation points drawn uniformly on `[0, L]` (ChaCha8 seeded with
/// `seed`). The draws closest to `0` and to `L` are replaced by the end
/// points themselves so the set always covers the closed interval.
pub fn make_collocation(length: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 collocation points, got {n}")));
    }
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::Input(format!("length must be positive, got {length}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * length).collect();
    let argmin = (0..n)
        .min_by(|&a, &b| xs[a].total_cmp(&xs[b]))
        .expect("non-empty");
    let argmax = (0..n)
        .filter(|&i| i != argmin)
        .max_by(|&a, &b| xs[a].total_cmp(&xs[b]))
        .expect("at least two points");
    xs[argmin] = 0.0;
    xs[argmax] = length;
    Ok(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_values() {
        assert_eq!(blend_functions(1.0, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(blend_functions(1.0, 1.0).unwrap(), (0.0, 1.0));
        assert_eq!(blend_functions(1.0, 0.25).unwrap(), (0.75, 0.25));
        let (a, b) = blend_functions(2.5, 0.7).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15);
        assert!(matches!(blend_functions(1.0, 1.5), Err(Error::Domain { .. })));
        assert!(matches!(blend_functions(1.0, -0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn trial_midpoint_algebra() {
        let blend = TrialBlend::new(1.0, 1.0, -1.0);
        let g = 0.37;
        let t = blend.apply(0.5, Jet::new(g, 0.0, 0.0));
        assert!((t.value - (0.0 + g / 4.0)).abs() < 1e-15);
        let blend = TrialBlend::new(2.0, 3.0, 5.0);
        let t = blend.apply(1.0, Jet::new(g, 0.0, 0.0));
        assert!((t.value - (4.0 + g / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn trial_blend_derivatives_match_product_rule() {
        // blend of g(x) = sin(3x) against finite differences of the assembled value
        let blend = TrialBlend::new(1.3, 0.4, -0.9);
        let g = |x: f64| Jet::new((3.0 * x).sin(), 3.0 * (3.0 * x).cos(), -9.0 * (3.0 * x).sin());
        let x = 0.61;
        let h = 1e-4;
        let v = |x: f64| blend.apply(x, g(x)).value;
        let t = blend.apply(x, g(x));
        let d1 = (v(x + h) - v(x - h)) / (2.0 * h);
        let d2 = (v(x + h) - 2.0 * v(x) + v(x - h)) / (h * h);
        assert!((t.d1 - d1).abs() < 1e-7);
        assert!((t.d2 - d2).abs() < 1e-5);
    }

    #[test]
    fn pullback_is_adjoint_of_apply() {
        let blend = TrialBlend::new(1.0, 0.0, 0.0);
        let x = 0.3;
        let g = Jet::new(0.2, -1.1, 0.7);
        let w = Jet::new(1.5, 0.25, -2.0);
        let t = blend.apply(x, g);
        let lhs = t.value * w.value + t.d1 * w.d1 + t.d2 * w.d2;
        let p = blend.pullback(x, w);
        let rhs = g.value * p.value + g.d1 * p.d1 + g.d2 * p.d2;
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn cosine_annihilates_helmholtz() {
        let k: f64 = 2.3;
        for &x in &[0.0, 0.2, 0.9] {
            let psi = Jet::new((k * x).cos(), -k * (k * x).sin(), -k * k * (k * x).cos());
            assert!(helmholtz_residual(k, &psi).abs() < 1e-12);
        }
        assert_eq!(helmholtz_residual(k, &Jet::default()), 0.0);
    }

    #[test]
    fn forward_convective_wave_annihilates_flow_residual() {
        let p = DuctProblem::air_duct(700.0, 0.25).unwrap();
        let kp = p.wavenumber() / (1.0 + p.mach);
        for &x in &[0.0, 0.33, 0.8] {
            let j = Complex64::i();
            let e = (-j * kp * x).exp();
            let psi = ComplexJet::from_complex(e, -j * kp * e, -kp * kp * e);
            let (rr, ri) = residual_flow(&p, &psi);
            let scale = p.wavenumber().powi(2);
            assert!(rr.abs() < 1e-12 * scale && ri.abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn flow_residual_reduces_to_noflow_at_zero_mach() {
        let p = DuctProblem::air_duct(500.0, 0.0).unwrap();
        let psi = ComplexJet {
            re: Jet::new(0.3, -1.2, 4.0),
            im: Jet::default(),
        };
        let (rr, ri) = residual_flow(&p, &psi);
        assert_eq!(rr, residual_noflow(&p, &psi));
        assert_eq!(ri, 0.0);
    }

    #[test]
    fn velocity_residual_zero_mach_matches_algebraic_relation() {
        let p = DuctProblem::air_duct(500.0, 0.0).unwrap();
        let k = p.wavenumber();
        let x = 0.42;
        // psi = cos(kx); xi = -psi' / (j omega rho)
        let dpsi = Complex64::new(-k * (k * x).sin(), 0.0);
        let psi = ComplexJet::from_complex(Complex64::new((k * x).cos(), 0.0), dpsi, Complex64::default());
        let xi_val = -dpsi / (Complex64::i() * p.angular_frequency() * p.density);
        let xi = ComplexJet::from_complex(xi_val, Complex64::default(), Complex64::default());
        let (rr, ri) = residual_velocity(&p, &psi, &xi);
        assert!(rr.abs() < 1e-15 && ri.abs() < 1e-15, "{rr} {ri}");
        let zero = ComplexJet::default();
        assert_eq!(residual_velocity(&p, &zero, &zero), (0.0, 0.0));
    }

    #[test]
    fn collocation_contract() {
        assert_eq!(make_collocation(2.0, 2, 5).unwrap().iter().fold(0.0, |a, &b| a + b), 2.0);
        let two = make_collocation(1.0, 2, 5).unwrap();
        assert!(two.contains(&0.0) && two.contains(&1.0));
        let xs = make_collocation(1.0, 10_000, 3).unwrap();
        assert_eq!(xs.len(), 10_000);
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert_eq!(xs, make_collocation(1.0, 10_000, 3).unwrap());
        assert!(make_collocation(1.0, 1, 3).is_err());
    }

    #[test]
    fn problem_validation() {
        assert!(DuctProblem::air_duct(500.0, 1.0).is_err());
        assert!(DuctProblem::air_duct(500.0, -0.1).is_err());
        assert!(DuctProblem::air_duct(0.0, 0.1).is_err());
        let p = DuctProblem::air_duct(500.0, 0.1).unwrap();
        assert!((p.wavenumber() - 2.0 * PI * 500.0 / 340.0).abs() < 1e-15);
        assert!((p.characteristic_impedance() - 416.5).abs() < 1e-12);
    }
}
