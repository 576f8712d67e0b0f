//! Exact input derivatives and parameter gradients of a `tanh` network.
//!
//! Every activation is carried as a jet `(u, u', u'')` of derivatives with
//! respect to the scalar input `x`. An affine layer maps each component
//! linearly (the bias only enters the value), and `tanh` maps
//!
//! ```text
//! a   = t                  t  = tanh(z)
//! a'  = s1 z'              s1 = 1 - t^2
//! a'' = s2 z'^2 + s1 z''   s2 = -2 t s1
//! ```
//!
//! Parameter gradients are obtained by reverse accumulation over this
//! extended forward graph, so a loss built from `(value, d1, d2)` of the
//! network output is differentiated exactly.
//!
//! Batches are stored as `width x (channels * n)` matrices whose column
//! blocks hold the value, first and (optionally) second derivative of each
//! of the `n` points, so that each layer is a single matrix product.

use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{Architecture, MlpParams};
use crate::physics::{self, DuctProblem, FieldKind, Jet, TrialBlend, TrialField};

/// Network output and its first two input derivatives, one entry per output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffOutput {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl DiffOutput {
    pub fn jet(&self, channel: usize) -> Jet {
        Jet::new(self.value[channel], self.d1[channel], self.d2[channel])
    }
}

/// Highest input derivative propagated through a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

impl Order {
    pub fn channels(self) -> usize {
        match self {
            Order::First => 2,
            Order::Second => 3,
        }
    }
}

/// Single-point forward pass carrying `(value, d1, d2)`.
pub fn eval_with_input_derivatives(params: &MlpParams, x: f64) -> Result<DiffOutput> {
    params.check_finite()?;
    if !x.is_finite() {
        return Err(Error::Input(format!("non-finite input x = {x}")));
    }
    let layers = params.layers();
    let mut u = vec![x];
    let mut du = vec![1.0];
    let mut ddu = vec![0.0];
    for (li, layer) in layers.iter().enumerate() {
        if layer.fan_in() != u.len() {
            return Err(Error::Structural(format!(
                "layer {li} expects {} inputs, previous layer produced {}",
                layer.fan_in(),
                u.len()
            )));
        }
        let hidden = li + 1 < layers.len();
        let mut v = Vec::with_capacity(layer.fan_out());
        let mut dv = Vec::with_capacity(layer.fan_out());
        let mut ddv = Vec::with_capacity(layer.fan_out());
        for (row, &b) in layer.weights.rows().into_iter().zip(layer.bias.iter()) {
            let mut z = b;
            let mut dz = 0.0;
            let mut ddz = 0.0;
            for (j, &w) in row.iter().enumerate() {
                z += w * u[j];
                dz += w * du[j];
                ddz += w * ddu[j];
            }
            if hidden {
                let t = z.tanh();
                let s1 = 1.0 - t * t;
                let s2 = -2.0 * t * s1;
                v.push(t);
                dv.push(s1 * dz);
                ddv.push(s2 * dz * dz + s1 * ddz);
            } else {
                v.push(z);
                dv.push(dz);
                ddv.push(ddz);
            }
        }
        u = v;
        du = dv;
        ddu = ddv;
    }
    Ok(DiffOutput {
        value: u,
        d1: du,
        d2: ddu,
    })
}

/// Intermediate state of a batched forward pass, kept for the backward sweep.
///
/// Buffers may be wider than the current batch so that a cache can be
/// reused across batches of different sizes; only the leading
/// `channels * n` columns are meaningful.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    order: Order,
    n: usize,
    /// Input of each layer, `fan_in x (channels * n)`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation jets of each layer, `fan_out x (channels * n)`.
    pre: Vec<Array2<f64>>,
}

impl ForwardCache {
    fn empty() -> Self {
        Self {
            order: Order::First,
            n: 0,
            inputs: Vec::new(),
            pre: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn order(&self) -> Order {
        self.order
    }

    fn cols(&self) -> usize {
        self.order.channels() * self.n
    }

    /// Output jets, `output_width x (channels * n)`.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        let cols = self.cols();
        self.pre.last().expect("at least one layer").slice(s![.., ..cols])
    }

    /// Output jet of `channel` at point `i`; `d2` is zero for first-order batches.
    pub fn jet(&self, channel: usize, i: usize) -> Jet {
        let out = self.pre.last().expect("at least one layer");
        let n = self.n;
        let d2 = match self.order {
            Order::Second => out[[channel, 2 * n + i]],
            Order::First => 0.0,
        };
        Jet::new(out[[channel, i]], out[[channel, n + i]], d2)
    }
}

/// Makes `bufs` hold one matrix per entry of `rows` with at least `cols` columns.
fn ensure_buffers(bufs: &mut Vec<Array2<f64>>, rows: &[usize], cols: usize) {
    let fits = bufs.len() == rows.len()
        && bufs.iter().zip(rows).all(|(b, &r)| b.nrows() == r && b.ncols() >= cols);
    if !fits {
        *bufs = rows.iter().map(|&r| Array2::zeros((r, cols))).collect();
    }
}

/// Batched forward pass over the points `xs`.
pub fn forward(params: &MlpParams, xs: &[f64], order: Order) -> ForwardCache {
    let mut cache = ForwardCache::empty();
    forward_into(params, xs, order, &mut cache);
    cache
}

/// Batched forward pass reusing the buffers of `cache`.
pub fn forward_into(params: &MlpParams, xs: &[f64], order: Order, cache: &mut ForwardCache) {
    let n = xs.len();
    let cols = order.channels() * n;
    let layers = params.layers();
    let fan_in: Vec<usize> = layers.iter().map(|l| l.fan_in()).collect();
    let fan_out: Vec<usize> = layers.iter().map(|l| l.fan_out()).collect();
    ensure_buffers(&mut cache.inputs, &fan_in, cols);
    ensure_buffers(&mut cache.pre, &fan_out, cols);
    cache.order = order;
    cache.n = n;
    {
        let mut input = cache.inputs[0].slice_mut(s![.., ..cols]);
        input.fill(0.0);
        for (i, &x) in xs.iter().enumerate() {
            input[[0, i]] = x;
            input[[0, n + i]] = 1.0;
        }
    }
    for (li, layer) in layers.iter().enumerate() {
        let mut z = cache.pre[li].slice_mut(s![.., ..cols]);
        general_mat_mul(1.0, &layer.weights, &cache.inputs[li].slice(s![.., ..cols]), 0.0, &mut z);
        for (mut row, &b) in z.rows_mut().into_iter().zip(layer.bias.iter()) {
            row.slice_mut(s![..n]).mapv_inplace(|v| v + b);
        }
        if li + 1 < layers.len() {
            let a = cache.inputs[li + 1].slice_mut(s![.., ..cols]);
            tanh_jets(z.view(), a, n, order);
        }
    }
}

fn tanh_jets(z: ArrayView2<'_, f64>, mut a: ArrayViewMut2<'_, f64>, n: usize, order: Order) {
    for (zr, mut ar) in z.rows().into_iter().zip(a.rows_mut()) {
        let zr = zr.to_slice().expect("contiguous rows");
        let ar = ar.as_slice_mut().expect("contiguous rows");
        let (av, rest) = ar.split_at_mut(n);
        let (ad1, ad2) = rest.split_at_mut(n);
        let (zv, zrest) = zr.split_at(n);
        let (zd1, zd2) = zrest.split_at(n);
        for i in 0..n {
            let t = zv[i].tanh();
            let s1 = 1.0 - t * t;
            let dz = zd1[i];
            av[i] = t;
            ad1[i] = s1 * dz;
            if order == Order::Second {
                let s2 = -2.0 * t * s1;
                ad2[i] = s2 * dz * dz + s1 * zd2[i];
            }
        }
    }
}

/// Offsets of each layer inside the flat parameter layout.
fn layer_offsets(arch: &Architecture) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut off = 0;
    for (fan_in, fan_out) in arch.layer_shapes() {
        offsets.push(off);
        off += fan_in * fan_out + fan_out;
    }
    offsets
}

/// Scratch matrices of the reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct BackwardScratch {
    current: Array2<f64>,
    next: Array2<f64>,
}

/// Reverse sweep: accumulates into `grad` (flat layout) the gradient of a
/// scalar whose derivative with respect to the output jets is `grad_out`
/// (same shape as [`ForwardCache::output`]).
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_out: Array2<f64>, grad: &mut [f64]) {
    backward_with(params, cache, grad_out.view(), grad, &mut BackwardScratch::default());
}

/// [`backward`] reusing the buffers of `scratch`.
pub fn backward_with(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_out: ArrayView2<'_, f64>,
    grad: &mut [f64],
    scratch: &mut BackwardScratch,
) {
    let n = cache.n;
    let order = cache.order;
    let cols = cache.cols();
    let layers = params.layers();
    let offsets = layer_offsets(&params.arch());
    let rows_needed = layers
        .iter()
        .map(|l| l.fan_in().max(l.fan_out()))
        .max()
        .unwrap_or(0);
    for buf in [&mut scratch.current, &mut scratch.next] {
        if buf.nrows() < rows_needed || buf.ncols() < cols {
            *buf = Array2::zeros((rows_needed, cols));
        }
    }
    let mut rows = grad_out.nrows();
    scratch.current.slice_mut(s![..rows, ..cols]).assign(&grad_out);
    let (mut cur, mut other) = (&mut scratch.current, &mut scratch.next);
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let (fan_out, fan_in) = layer.weights.dim();
        let off = offsets[li];
        let u = cache.inputs[li].slice(s![.., ..cols]);
        let gz = cur.slice(s![..rows, ..cols]);
        {
            let gw_slice = &mut grad[off..off + fan_out * fan_in];
            let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw_slice).expect("layout");
            general_mat_mul(1.0, &gz, &u.t(), 1.0, &mut gw);
        }
        let gb = &mut grad[off + fan_out * fan_in..off + fan_out * fan_in + fan_out];
        for (r, row) in gz.rows().into_iter().enumerate() {
            gb[r] += row.slice(s![..n]).sum();
        }
        if li == 0 {
            break;
        }
        let mut ga = other.slice_mut(s![..fan_in, ..cols]);
        general_mat_mul(1.0, &layer.weights.t(), &gz, 0.0, &mut ga);
        tanh_pullback(
            cache.pre[li - 1].slice(s![.., ..cols]),
            u,
            ga,
            n,
            order,
        );
        std::mem::swap(&mut cur, &mut other);
        rows = fan_in;
    }
}

/// Maps in place the gradient with respect to activation jets to the
/// gradient with respect to pre-activation jets.
fn tanh_pullback(
    z: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    mut ga: ArrayViewMut2<'_, f64>,
    n: usize,
    order: Order,
) {
    for ((zr, ar), mut gr) in z.rows().into_iter().zip(a.rows()).zip(ga.rows_mut()) {
        let zr = zr.to_slice().expect("contiguous rows");
        let ar = ar.to_slice().expect("contiguous rows");
        let g = gr.as_slice_mut().expect("contiguous rows");
        let (g0s, rest) = g.split_at_mut(n);
        let (g1s, g2s) = rest.split_at_mut(n);
        let (zd1, zd2) = zr[n..].split_at(n);
        match order {
            Order::First => {
                for i in 0..n {
                    let t = ar[i];
                    let s1 = 1.0 - t * t;
                    let s2 = -2.0 * t * s1;
                    let g1 = g1s[i];
                    g0s[i] = g0s[i] * s1 + g1 * s2 * zd1[i];
                    g1s[i] = g1 * s1;
                }
            }
            Order::Second => {
                for i in 0..n {
                    let t = ar[i];
                    let s1 = 1.0 - t * t;
                    let s2 = -2.0 * t * s1;
                    let s3 = -2.0 * s1 * (1.0 - 3.0 * t * t);
                    let dz = zd1[i];
                    let (g1, g2) = (g1s[i], g2s[i]);
                    g0s[i] = g0s[i] * s1 + g1 * s2 * dz + g2 * (s3 * dz * dz + s2 * zd2[i]);
                    g1s[i] = g1 * s1 + 2.0 * g2 * s2 * dz;
                    g2s[i] = g2 * s1;
                }
            }
        }
    }
}

/// Which residual the training loss is built from.
#[derive(Debug, Clone, Copy)]
pub enum LossKind<'a> {
    /// Helmholtz residual of a real one-output pressure trial.
    NoFlow,
    /// Real and imaginary convected-Helmholtz residuals of a two-output pressure trial.
    Flow,
    /// Momentum-equation residuals of a two-output velocity network given a
    /// frozen pressure trial. With `anchor` the penalty
    /// `|rho c xi(0) - (A_c - B_c)|^2` from the closed-form solution is added.
    Velocity {
        pressure: &'a TrialField,
        anchor: bool,
    },
}

#[derive(Debug, Clone)]
enum Prepared {
    NoFlow,
    Flow,
    Velocity {
        /// `d psi / dx` of the frozen pressure at each collocation point.
        pressure_slope: Vec<Complex64>,
        anchor: Option<Complex64>,
    },
}

/// Per-thread buffers of the batched loss evaluation.
struct Workspace {
    cache: ForwardCache,
    scratch: BackwardScratch,
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace {
        cache: ForwardCache::empty(),
        scratch: BackwardScratch::default(),
    });
}

/// Points per block of the batched loss evaluation.
const CHUNK: usize = 512;

/// Mean-squared residual loss over a fixed collocation set, with its exact
/// parameter gradient.
///
/// For the velocity kind the residuals are multiplied by `rho c`, and the
/// network output is divided by `rho c` to give the particle velocity, so
/// that the optimized quantities are of pressure scale.
#[derive(Debug, Clone)]
pub struct PinnLoss {
    problem: DuctProblem,
    arch: Architecture,
    collocation: Vec<f64>,
    prepared: Prepared,
}

impl PinnLoss {
    pub fn new(
        problem: &DuctProblem,
        arch: Architecture,
        collocation: &[f64],
        kind: LossKind<'_>,
    ) -> Result<Self> {
        arch.validate()?;
        if collocation.is_empty() {
            return Err(Error::Input("collocation set is empty".into()));
        }
        let length = problem.length;
        if let Some(&x) = collocation
            .iter()
            .find(|&&x| !(0.0..=length).contains(&x))
        {
            return Err(Error::Domain { x, length });
        }
        let want_outputs = match kind {
            LossKind::NoFlow => 1,
            _ => 2,
        };
        if arch.output_width != want_outputs {
            return Err(Error::Structural(format!(
                "loss needs a network with {want_outputs} outputs, architecture has {}",
                arch.output_width
            )));
        }
        let prepared = match kind {
            LossKind::NoFlow => {
                if problem.psi0.im != 0.0 || problem.psi_l.im != 0.0 {
                    return Err(Error::Input(
                        "the no-flow loss needs real boundary pressures".into(),
                    ));
                }
                Prepared::NoFlow
            }
            LossKind::Flow => Prepared::Flow,
            LossKind::Velocity { pressure, anchor } => {
                if !pressure.kind().is_pressure() {
                    return Err(Error::Input(
                        "velocity loss needs a frozen pressure trial field".into(),
                    ));
                }
                let pressure_slope = pressure
                    .eval_many(collocation)?
                    .into_iter()
                    .map(|p| Complex64::new(p.re.d1, p.im.d1))
                    .collect();
                let anchor = if anchor {
                    let k = crate::oracle::flow_constants(problem)?;
                    Some(k.a - k.b)
                } else {
                    None
                };
                Prepared::Velocity {
                    pressure_slope,
                    anchor,
                }
            }
        };
        Ok(Self {
            problem: *problem,
            arch,
            collocation: collocation.to_vec(),
            prepared,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn collocation(&self) -> &[f64] {
        &self.collocation
    }

    fn order(&self) -> Order {
        match self.prepared {
            Prepared::Velocity { .. } => Order::First,
            _ => Order::Second,
        }
    }

    /// Loss and gradient at a flat parameter vector.
    pub fn eval_flat(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = MlpParams::unflatten(self.arch, flat)?;
        self.loss_and_gradient(&params)
    }

    pub fn loss_and_gradient(&self, params: &MlpParams) -> Result<(f64, Vec<f64>)> {
        if params.arch() != self.arch {
            return Err(Error::Structural("parameters do not match the loss architecture".into()));
        }
        params.check_finite()?;
        let count = self.arch.param_count();
        let inv_n = 1.0 / self.collocation.len() as f64;
        let starts: Vec<usize> = (0..self.collocation.len()).step_by(CHUNK).collect();
        // Chunks may run in parallel; the reduction below is sequential in
        // chunk order so results do not depend on the thread count.
        let parts: Vec<Result<(f64, Vec<f64>)>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + CHUNK).min(self.collocation.len());
                self.chunk(params, start, &self.collocation[start..end], inv_n)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; count];
        for part in parts {
            let (l, g) = part?;
            loss += l;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        if let Prepared::Velocity {
            anchor: Some(target),
            ..
        } = &self.prepared
        {
            let cache = forward(params, &[0.0], Order::First);
            let diff = Complex64::new(cache.jet(0, 0).value, cache.jet(1, 0).value) - target;
            loss += diff.norm_sqr();
            let mut g = Array2::<f64>::zeros(cache.output().dim());
            g[[0, 0]] = 2.0 * diff.re;
            g[[1, 0]] = 2.0 * diff.im;
            backward(params, &cache, g, &mut grad);
        }
        Ok((loss, grad))
    }

    fn chunk(&self, params: &MlpParams, start: usize, xs: &[f64], inv_n: f64) -> Result<(f64, Vec<f64>)> {
        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            forward_into(params, xs, self.order(), &mut ws.cache);
            self.chunk_with(params, start, xs, inv_n, ws)
        })
    }

    fn chunk_with(
        &self,
        params: &MlpParams,
        start: usize,
        xs: &[f64],
        inv_n: f64,
        ws: &mut Workspace,
    ) -> Result<(f64, Vec<f64>)> {
        let p = &self.problem;
        let n = xs.len();
        let cache = &ws.cache;
        let mut g = Array2::<f64>::zeros(cache.output().dim());
        let mut loss = 0.0;
        let k = p.wavenumber();
        let blend_re = TrialBlend::new(p.length, p.psi0.re, p.psi_l.re);
        let blend_im = TrialBlend::new(p.length, p.psi0.im, p.psi_l.im);
        let scale = 2.0 * inv_n;
        for (i, &x) in xs.iter().enumerate() {
            let contribution = match &self.prepared {
                Prepared::NoFlow => {
                    let psi = blend_re.apply(x, cache.jet(0, i));
                    let r = physics::helmholtz_residual(k, &psi);
                    let gpsi = Jet::new(k * k, 0.0, 1.0).scale(scale * r);
                    let graw = blend_re.pullback(x, gpsi);
                    set_jet(&mut g, 0, i, n, graw);
                    r * r
                }
                Prepared::Flow => {
                    let pr = blend_re.apply(x, cache.jet(0, i));
                    let pi = blend_im.apply(x, cache.jet(1, i));
                    let (rr, ri) = physics::convected_residual(p.mach, k, &pr, &pi);
                    let (gr, gi) = physics::convected_residual_pullback(p.mach, k, rr, ri);
                    set_jet(&mut g, 0, i, n, blend_re.pullback(x, gr.scale(scale)));
                    set_jet(&mut g, 1, i, n, blend_im.pullback(x, gi.scale(scale)));
                    rr * rr + ri * ri
                }
                Prepared::Velocity { pressure_slope, .. } => {
                    let slope = pressure_slope[start + i];
                    // network output is rho*c*xi; residual times rho*c
                    let nr = cache.jet(0, i);
                    let ni = cache.jet(1, i);
                    let rr = p.mach * nr.d1 - k * ni.value + slope.re;
                    let ri = p.mach * ni.d1 + k * nr.value + slope.im;
                    g[[0, i]] = scale * ri * k;
                    g[[0, n + i]] = scale * rr * p.mach;
                    g[[1, i]] = -scale * rr * k;
                    g[[1, n + i]] = scale * ri * p.mach;
                    rr * rr + ri * ri
                }
            };
            if !contribution.is_finite() {
                return Err(Error::Numeric { index: start + i, x });
            }
            loss += contribution;
        }
        let mut grad = vec![0.0; self.arch.param_count()];
        backward_with(params, cache, g.view(), &mut grad, &mut ws.scratch);
        Ok((loss * inv_n, grad))
    }
}

fn set_jet(g: &mut Array2<f64>, channel: usize, i: usize, n: usize, jet: Jet) {
    g[[channel, i]] = jet.value;
    g[[channel, n + i]] = jet.d1;
    if g.ncols() == 3 * n {
        g[[channel, 2 * n + i]] = jet.d2;
    }
}

/// Loss and exact parameter gradient for one parameter set.
pub fn loss_and_gradient(
    problem: &DuctProblem,
    params: &MlpParams,
    collocation: &[f64],
    kind: LossKind<'_>,
) -> Result<(f64, Vec<f64>)> {
    PinnLoss::new(problem, params.arch(), collocation, kind)?.loss_and_gradient(params)
}

/// Field kind a loss trains.
pub fn trained_kind(kind: &LossKind<'_>) -> FieldKind {
    match kind {
        LossKind::NoFlow => FieldKind::PressureNoFlow,
        LossKind::Flow => FieldKind::PressureFlow,
        LossKind::Velocity { .. } => FieldKind::VelocityFlow,
    }
}
