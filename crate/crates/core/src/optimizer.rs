//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The search direction comes from the standard two-loop recursion with the
//! initial inverse Hessian `gamma I`, `gamma = s'y / y'y` of the newest pair.
//! The line search brackets a step satisfying the strong Wolfe conditions
//! and then zooms with safeguarded cubic interpolation. The first trial step
//! is `1`, except on the very first iteration (no curvature information yet)
//! where it is `min(1, 1 / |g|_1)`.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Settings of [`minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    /// Stop when `|g|_inf < tolerance` or when the loss changes by less than
    /// `tolerance^2` between iterations.
    pub tolerance: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 14_000,
            tolerance: 1e-5,
            memory: 50,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_search_steps: 40,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Input(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if self.memory == 0 {
            return Err(Error::Input("L-BFGS memory must be at least 1".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::Input(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_line_search_steps == 0 {
            return Err(Error::Input("max_line_search_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    ToleranceMet,
    MaxIterations,
    LineSearchFailed,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::ToleranceMet => "tolerance_met",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailed => "line_search_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Loss at the starting point followed by the loss after each iteration.
    pub loss_history: Vec<f64>,
}

/// Per-iteration progress record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub loss: f64,
    pub grad_inf_norm: f64,
    pub evaluations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `objective`, which returns the loss and its gradient.
///
/// An objective error of kind [`Error::Numeric`] at a trial point inside
/// the line search is treated as an infinite loss, so the step shrinks;
/// any other error aborts the run.
pub fn minimize<F>(objective: F, x0: &[f64], opts: &LbfgsOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    minimize_with_progress(objective, x0, opts, |_| {})
}

pub fn minimize_with_progress<F, P>(
    mut objective: F,
    x0: &[f64],
    opts: &LbfgsOptions,
    mut progress: P,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    P: FnMut(&Progress),
{
    opts.validate()?;
    let dim = x0.len();
    let (mut f, mut g) = objective(x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("objective is not finite at the starting point (loss = {f})")));
    }
    if g.len() != dim {
        return Err(Error::Structural(format!(
            "gradient has {} entries for a {dim}-dimensional problem",
            g.len()
        )));
    }
    let mut x = x0.to_vec();
    let mut evaluations = 1;
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iteration = 0;

    if inf_norm(&g) < opts.tolerance {
        return Ok(OptimResult {
            x,
            loss: f,
            iterations: 0,
            evaluations,
            termination: Termination::ToleranceMet,
            loss_history: history,
        });
    }

    let termination = loop {
        if iteration >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        let mut d = direction(&g, &pairs);
        let mut gtd = dot(&g, &d);
        if !(gtd < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            gtd = dot(&g, &d);
        }
        let t0 = if iteration == 0 {
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            (1.0 / l1).min(1.0)
        } else {
            1.0
        };
        let step = strong_wolfe(&mut objective, &x, &d, f, &g, gtd, t0, opts)?;
        evaluations += step.evaluations;
        let Some((t, f_new, g_new)) = step.accepted else {
            break Termination::LineSearchFailed;
        };
        iteration += 1;
        let s: Vec<f64> = d.iter().map(|v| t * v).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let change = (f - f_new).abs();
        f = f_new;
        g = g_new;
        history.push(f);
        let gnorm = inf_norm(&g);
        progress(&Progress {
            iteration,
            loss: f,
            grad_inf_norm: gnorm,
            evaluations,
        });
        if gnorm < opts.tolerance || change < opts.tolerance * opts.tolerance {
            break Termination::ToleranceMet;
        }
    };
    Ok(OptimResult {
        x,
        loss: f,
        iterations: iteration,
        evaluations,
        termination,
        loss_history: history,
    })
}

/// Two-loop recursion: `-H g`.
fn direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[i] = a;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alphas[i] - b) * si;
        }
    }
    q
}

struct LineSearchOutcome {
    accepted: Option<(f64, f64, Vec<f64>)>,
    evaluations: usize,
}

#[derive(Clone)]
struct Point {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

/// Minimizer of the cubic interpolating `(t1, f1, g1)` and `(t2, f2, g2)`,
/// clamped to `[lo, hi]`; falls back to bisection when the cubic is degenerate.
fn cubic_interpolate(t1: f64, f1: f64, g1: f64, t2: f64, f2: f64, g2: f64, lo: f64, hi: f64) -> f64 {
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (t1 - t2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 && d2_sq.is_finite() {
        let d2 = d2_sq.sqrt();
        let t = if t1 <= t2 {
            t2 - (t2 - t1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            t1 - (t1 - t2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    objective: &mut F,
    x: &[f64],
    d: &[f64],
    f0: f64,
    g0: &[f64],
    gtd0: f64,
    t_init: f64,
    opts: &LbfgsOptions,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let c1 = opts.wolfe_c1;
    let c2 = opts.wolfe_c2;
    let max_steps = opts.max_line_search_steps;
    let d_norm = inf_norm(d);
    let mut evals = 0;
    let mut eval = |t: f64, evals: &mut usize| -> Result<Point> {
        *evals += 1;
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        match objective(&xt) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let gtd = dot(&g, d);
                Ok(Point { t, f, g, gtd })
            }
            Ok(_) | Err(Error::Numeric { .. }) => Ok(Point {
                t,
                f: f64::INFINITY,
                g: vec![0.0; x.len()],
                gtd: f64::NAN,
            }),
            Err(e) => Err(e),
        }
    };
    let start = Point {
        t: 0.0,
        f: f0,
        g: g0.to_vec(),
        gtd: gtd0,
    };
    let armijo = |p: &Point| p.f <= f0 + c1 * p.t * gtd0;
    let curvature = |p: &Point| p.gtd.abs() <= -c2 * gtd0;

    let mut prev = start.clone();
    let mut t = t_init;
    let mut bracket: Option<(Point, Point)> = None;
    let mut done: Option<Point> = None;
    while evals < max_steps {
        let cur = eval(t, &mut evals)?;
        if !armijo(&cur) || (evals > 1 && cur.f >= prev.f) {
            bracket = Some((prev.clone(), cur));
            break;
        }
        if curvature(&cur) {
            done = Some(cur);
            break;
        }
        if cur.gtd >= 0.0 {
            bracket = Some((cur, prev.clone()));
            break;
        }
        let lo = t + 0.01 * (t - prev.t);
        let hi = 10.0 * t;
        let next = cubic_interpolate(prev.t, prev.f, prev.gtd, cur.t, cur.f, cur.gtd, lo, hi);
        prev = cur;
        t = next;
    }
    if done.is_none() && bracket.is_none() {
        // budget exhausted while extrapolating; prev satisfies the decrease condition
        let accepted = (prev.t > 0.0).then(|| (prev.t, prev.f, prev.g));
        return Ok(LineSearchOutcome {
            accepted,
            evaluations: evals,
        });
    }

    if let Some((mut low, mut high)) = bracket {
        // `low` has the smallest loss among points satisfying the decrease condition
        if high.f < low.f && armijo(&high) {
            std::mem::swap(&mut low, &mut high);
        }
        let mut insufficient_progress = false;
        while evals < max_steps {
            if (high.t - low.t).abs() * d_norm < 1e-12 {
                break;
            }
            let (a, b) = if low.t < high.t { (&low, &high) } else { (&high, &low) };
            let (tmin, tmax) = (a.t, b.t);
            let mut t = cubic_interpolate(a.t, a.f, a.gtd, b.t, b.f, b.gtd, tmin, tmax);
            let eps = 0.1 * (tmax - tmin);
            if (tmax - t).min(t - tmin) < eps {
                if insufficient_progress || t >= tmax || t <= tmin {
                    t = if (t - tmax).abs() < (t - tmin).abs() {
                        tmax - eps
                    } else {
                        tmin + eps
                    };
                    insufficient_progress = false;
                } else {
                    insufficient_progress = true;
                }
            } else {
                insufficient_progress = false;
            }
            let cur = eval(t, &mut evals)?;
            if !armijo(&cur) || cur.f >= low.f {
                high = cur;
            } else {
                if curvature(&cur) {
                    done = Some(cur);
                    break;
                }
                if cur.gtd * (high.t - low.t) >= 0.0 {
                    high = low;
                }
                low = cur;
            }
        }
        if done.is_none() && low.t > 0.0 && low.f < f0 {
            done = Some(low);
        }
    }
    Ok(LineSearchOutcome {
        accepted: done.map(|p| (p.t, p.f, p.g)),
        evaluations: evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(a: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let f = x.iter().zip(&a).map(|(xi, ai)| (xi - ai).powi(2)).sum();
            let g = x.iter().zip(&a).map(|(xi, ai)| 2.0 * (xi - ai)).collect();
            Ok((f, g))
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        Ok((f, g))
    }

    #[test]
    fn sphere_converges_quickly() {
        let a = vec![1.0, -2.0, 3.5, 0.25];
        let res = minimize(quadratic(a.clone()), &[10.0, 10.0, -7.0, 0.0], &LbfgsOptions::default()).unwrap();
        assert!(res.iterations <= 3, "{} iterations", res.iterations);
        for (xi, ai) in res.x.iter().zip(&a) {
            assert!((xi - ai).abs() < 1e-5);
        }
        let (_, g) = quadratic(a)(&res.x).unwrap();
        assert!(inf_norm(&g) < 1e-5);
        assert_eq!(res.termination, Termination::ToleranceMet);
    }

    #[test]
    fn rosenbrock_converges() {
        let opts = LbfgsOptions {
            tolerance: 1e-9,
            ..LbfgsOptions::default()
        };
        let res = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert!(res.iterations < 200, "{} iterations", res.iterations);
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] - 1.0).abs() < 1e-6, "{:?}", res.x);
        for w in res.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn nan_at_start_is_rejected() {
        let res = minimize(|_: &[f64]| Ok((f64::NAN, vec![0.0])), &[0.0], &LbfgsOptions::default());
        assert!(matches!(res, Err(Error::Input(_))));
    }

    #[test]
    fn already_optimal_start_stops_immediately() {
        let res = minimize(quadratic(vec![1.0]), &[1.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(res.iterations, 0);
        assert_eq!(res.evaluations, 1);
    }

    #[test]
    fn iteration_cap_is_respected() {
        let opts = LbfgsOptions {
            max_iterations: 5,
            tolerance: 1e-14,
            ..LbfgsOptions::default()
        };
        let res = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(res.iterations, 5);
        assert_eq!(res.termination, Termination::MaxIterations);
        assert_eq!(res.loss_history.len(), 6);
    }

    #[test]
    fn full_memory_quadratic_terminates_in_dimension_steps() {
        // f = 1/2 x'Ax - b'x with an ill-conditioned diagonal-plus-coupling A
        let n = 6;
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 1.0 + 3.0 * i as f64;
            if i + 1 < n {
                a[i][i + 1] = 0.5;
                a[i + 1][i] = 0.5;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64) - 2.0).collect();
        let obj = |x: &[f64]| {
            let ax: Vec<f64> = a.iter().map(|row| dot(row, x)).collect();
            let f = 0.5 * dot(x, &ax) - dot(&b, x);
            let g = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
            Ok((f, g))
        };
        let opts = LbfgsOptions {
            memory: n,
            tolerance: 1e-8,
            wolfe_c2: 0.1,
            ..LbfgsOptions::default()
        };
        let res = minimize(obj, &vec![0.0; n], &opts).unwrap();
        assert!(res.iterations <= n + 1, "{} iterations", res.iterations);
    }

    #[test]
    fn adding_a_constant_does_not_change_iterates() {
        // tolerance tests disabled so both runs take the same number of steps
        let opts = LbfgsOptions {
            tolerance: 1e-300,
            max_iterations: 25,
            ..LbfgsOptions::default()
        };
        let base = minimize(rosenbrock, &[-1.2, 1.0], &opts).unwrap();
        let shifted = minimize(
            |x: &[f64]| rosenbrock(x).map(|(f, g)| (f + 4.0, g)),
            &[-1.2, 1.0],
            &opts,
        )
        .unwrap();
        assert_eq!(base.iterations, shifted.iterations);
        for (a, b) in base.x.iter().zip(&shifted.x) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn numeric_errors_shrink_the_step() {
        // the loss blows up outside |x| < 2; start near the edge with a large gradient
        let obj = |x: &[f64]| {
            if x[0].abs() >= 2.0 {
                return Err(Error::Numeric { index: 0, x: x[0] });
            }
            Ok((x[0].powi(4), vec![4.0 * x[0].powi(3)]))
        };
        let opts = LbfgsOptions {
            max_iterations: 50,
            ..LbfgsOptions::default()
        };
        let res = minimize(obj, &[1.9], &opts).unwrap();
        assert!(res.loss < 1.9f64.powi(4));
        assert!(res.x[0].abs() < 2.0);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let bad = LbfgsOptions {
            wolfe_c1: 0.95,
            ..LbfgsOptions::default()
        };
        assert!(minimize(quadratic(vec![0.0]), &[1.0], &bad).is_err());
        let bad = LbfgsOptions {
            memory: 0,
            ..LbfgsOptions::default()
        };
        assert!(bad.validate().is_err());
    }
}
