//! Feed-forward network parameters, He initialization and the flat
//! parameter layout shared with the optimizer.
//!
//! Layer `i` maps `fan_in` activations to `fan_out` pre-activations through
//! `W_i x + b_i`. Hidden layers apply `tanh`, the output layer is the
//! identity. The input width is always one (the axial position `x`).
//!
//! Flat layout, layer-major from the first weight layer to the output layer:
//! for each layer the weights in row-major order (`fan_out x fan_in`)
//! followed by the `fan_out` biases.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Layer counts of a scalar-input multilayer perceptron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    /// Total number of layers including input and output.
    pub n_layers: usize,
    pub hidden_width: usize,
    /// 1 for a real field, 2 for a complex field (real and imaginary channels).
    pub output_width: usize,
}

impl Architecture {
    pub fn new(n_layers: usize, hidden_width: usize, output_width: usize) -> Result<Self> {
        let arch = Self {
            n_layers,
            hidden_width,
            output_width,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 3 {
            return Err(Error::Structural(format!(
                "n_layers must be at least 3, got {}",
                self.n_layers
            )));
        }
        if self.hidden_width == 0 {
            return Err(Error::Structural("hidden_width must be positive".into()));
        }
        if !(1..=2).contains(&self.output_width) {
            return Err(Error::Structural(format!(
                "output_width must be 1 or 2, got {}",
                self.output_width
            )));
        }
        Ok(())
    }

    /// Widths of every layer, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.n_layers);
        w.push(1);
        w.extend(std::iter::repeat_n(self.hidden_width, self.n_layers - 2));
        w.push(self.output_width);
        w
    }

    /// `(fan_in, fan_out)` of every weight layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|p| (p[0], p[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(fan_in, fan_out)| fan_out * fan_in + fan_out)
            .sum()
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_out x fan_in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Weights and biases of every layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: Architecture,
    layers: Vec<Dense>,
}

impl MlpParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| Dense::zeros(fan_in, fan_out))
            .collect();
        Ok(Self { arch, layers })
    }

    /// Builds parameters from explicit layers, checking shapes and finiteness.
    pub fn from_layers(arch: Architecture, layers: Vec<Dense>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::Structural(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (i, (layer, &(fan_in, fan_out))) in layers.iter().zip(&shapes).enumerate() {
            if layer.weights.dim() != (fan_out, fan_in) || layer.bias.len() != fan_out {
                return Err(Error::Structural(format!(
                    "layer {i}: expected weights {fan_out}x{fan_in} and {fan_out} biases, got {:?} and {}",
                    layer.weights.dim(),
                    layer.bias.len()
                )));
            }
        }
        let params = Self { arch, layers };
        params.check_finite()?;
        Ok(params)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("non-finite parameter in layer {i}")));
            }
        }
        Ok(())
    }

    /// Concatenates all parameters in the documented flat layout.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    /// Inverse of [`MlpParams::flatten`].
    pub fn unflatten(arch: Architecture, flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        params.assign_flat(flat)?;
        Ok(params)
    }

    /// Overwrites all parameters from a flat array without reallocating.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.arch.param_count();
        if flat.len() != expected {
            return Err(Error::Structural(format!(
                "flat parameter array has {} entries, architecture needs {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
            for b in layer.bias.iter_mut() {
                *b = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// He initialization: weights of a layer with `fan_in` inputs are
/// `sqrt(2 / fan_in) * z` with `z ~ N(0, 1)`, biases are zero.
///
/// The stream is ChaCha8 seeded through `seed_from_u64(seed)`; normal
/// deviates come from the ziggurat sampler of `rand_distr::StandardNormal`.
/// Samples are drawn layer by layer, each weight matrix in row-major order.
pub fn he_init(arch: Architecture, seed: u64) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let scale = (2.0 / layer.fan_in() as f64).sqrt();
        for w in layer.weights.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = scale * z;
        }
    }
    Ok(params)
}

const CHECKPOINT_MAGIC: &str = "# duct-pinn checkpoint v1";

/// Writes a text checkpoint: a header with the architecture and seed, then
/// one parameter per line in flat layout. Values use the shortest decimal
/// representation that round-trips exactly.
pub fn write_checkpoint<W: Write>(mut out: W, params: &MlpParams, seed: u64) -> Result<()> {
    let arch = params.arch();
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "n_layers = {}", arch.n_layers)?;
    writeln!(out, "hidden_width = {}", arch.hidden_width)?;
    writeln!(out, "output_width = {}", arch.output_width)?;
    writeln!(out, "seed = {seed}")?;
    writeln!(out, "param_count = {}", arch.param_count())?;
    for v in params.flatten() {
        writeln!(out, "{v:?}")?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`]; returns the
/// parameters and the recorded seed.
pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(MlpParams, u64)> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        match lines.next() {
            Some(line) => Ok(line?),
            None => Err(Error::Format(format!("unexpected end of file, expected {what}"))),
        }
    };
    if next("header")?.trim() != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing checkpoint header".into()));
    }
    let mut header = |key: &str| -> Result<u64> {
        let line = next(key)?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("expected `{key} = <int>`, got `{line}`")))?;
        if k.trim() != key {
            return Err(Error::Format(format!("expected key `{key}`, got `{}`", k.trim())));
        }
        v.trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad integer for `{key}`: `{}`", v.trim())))
    };
    let arch = Architecture::new(
        header("n_layers")? as usize,
        header("hidden_width")? as usize,
        header("output_width")? as usize,
    )?;
    let seed = header("seed")?;
    let count = header("param_count")? as usize;
    if count != arch.param_count() {
        return Err(Error::Structural(format!(
            "checkpoint declares {count} parameters, architecture needs {}",
            arch.param_count()
        )));
    }
    let mut flat = Vec::with_capacity(count);
    for i in 0..count {
        let line = next("parameter")?;
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad parameter {i}: `{}`", line.trim())))?;
        flat.push(v);
    }
    let params = MlpParams::unflatten(arch, &flat)?;
    params.check_finite()?;
    Ok((params, seed))
}
