//! A small Q-network with hand-written forward and backward passes.
//!
//! All activations are stored channel-last (`[row][col][channel]`) and all
//! parameters live in one flat `Vec<f64>`, so gradients, Adam moments,
//! target-network copies and checkpoints are plain slices of the same length.
//!
//! Weight layouts:
//! - convolution: `[ky][kx][in_channel][out_channel]`, stride 1, no padding;
//! - dense: `[input][output]`.
//!
//! Max pooling is 2x2 with stride 2; odd trailing rows/columns are dropped.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = crate::env::NUM_ACTIONS;

const MAGIC: &[u8; 8] = b"BSPLACEQ";
const FORMAT_VERSION: u32 = 1;

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Grid-state network: two convolutions, one pooling layer, dense head.
    #[serde(rename = "proposed")]
    ProposedConv,
    /// Coordinate-state network: dense layers only.
    #[serde(rename = "traditional")]
    TraditionalMlp,
    /// Any other layer stack (tests, experiments).
    Custom,
}

impl Arch {
    fn tag(self) -> u8 {
        match self {
            Arch::ProposedConv => 0,
            Arch::TraditionalMlp => 1,
            Arch::Custom => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Arch::ProposedConv),
            1 => Ok(Arch::TraditionalMlp),
            2 => Ok(Arch::Custom),
            _ => Err(Error::Checkpoint(format!("unknown architecture tag {tag}"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::ProposedConv => "proposed",
            Arch::TraditionalMlp => "traditional",
            Arch::Custom => "custom",
        })
    }
}

/// Sizes for the two standard architectures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Kernel size (rows, cols).
    pub kernel: (usize, usize),
    pub hidden: (usize, usize),
    /// ReLU after each convolution.
    pub conv_relu: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv1_channels: 8,
            conv2_channels: 16,
            kernel: (4, 5),
            hidden: (50, 25),
            conv_relu: true,
        }
    }
}

/// Channel-last input shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Self { rows, cols, channels }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Conv {
        input: Shape,
        out_channels: usize,
        kh: usize,
        kw: usize,
        relu: bool,
        w: usize,
        b: usize,
    },
    MaxPool {
        input: Shape,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        relu: bool,
        w: usize,
        b: usize,
    },
}

impl Layer {
    fn output_len(&self) -> usize {
        match *self {
            Layer::Conv {
                input, out_channels, kh, kw, ..
            } => (input.rows - kh + 1) * (input.cols - kw + 1) * out_channels,
            Layer::MaxPool { input } => (input.rows / 2) * (input.cols / 2) * input.channels,
            Layer::Dense { outputs, .. } => outputs,
        }
    }

    fn input_len(&self) -> usize {
        match *self {
            Layer::Conv { input, .. } | Layer::MaxPool { input } => input.len(),
            Layer::Dense { inputs, .. } => inputs,
        }
    }

    fn relu(&self) -> bool {
        match *self {
            Layer::Conv { relu, .. } | Layer::Dense { relu, .. } => relu,
            Layer::MaxPool { .. } => false,
        }
    }

    /// (weight count, bias count, fan-in)
    fn param_shape(&self) -> (usize, usize, usize) {
        match *self {
            Layer::Conv {
                input, out_channels, kh, kw, ..
            } => (kh * kw * input.channels * out_channels, out_channels, kh * kw * input.channels),
            Layer::MaxPool { .. } => (0, 0, 0),
            Layer::Dense { inputs, outputs, .. } => (inputs * outputs, outputs, inputs),
        }
    }
}

/// Declarative layer description used to build a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out_channels: usize, kh: usize, kw: usize, relu: bool },
    MaxPool,
    Dense { outputs: usize, relu: bool },
}

/// Q-network parameters plus the layer stack that interprets them.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    arch: Arch,
    input: Shape,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Per-layer activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    pool_argmax: Vec<Vec<usize>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl QNetwork {
    /// Builds a zero-initialised network from a layer list.
    pub fn from_specs(arch: Arch, input: Shape, specs: &[LayerSpec]) -> Result<Self> {
        if input.is_empty() {
            return Err(shape_err("non-empty input", format!("{input:?}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        let mut offset = 0;
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kh,
                    kw,
                    relu,
                } => {
                    if kh == 0 || kw == 0 || out_channels == 0 || shape.rows < kh || shape.cols < kw {
                        return Err(shape_err(
                            format!("a convolution input of at least {kh}x{kw}"),
                            format!("{}x{}", shape.rows, shape.cols),
                        ));
                    }
                    let w = offset;
                    let b = w + kh * kw * shape.channels * out_channels;
                    offset = b + out_channels;
                    let l = Layer::Conv {
                        input: shape,
                        out_channels,
                        kh,
                        kw,
                        relu,
                        w,
                        b,
                    };
                    shape = Shape::new(shape.rows - kh + 1, shape.cols - kw + 1, out_channels);
                    l
                }
                LayerSpec::MaxPool => {
                    if shape.rows < 2 || shape.cols < 2 {
                        return Err(shape_err("a pooling input of at least 2x2", format!("{}x{}", shape.rows, shape.cols)));
                    }
                    let l = Layer::MaxPool { input: shape };
                    shape = Shape::new(shape.rows / 2, shape.cols / 2, shape.channels);
                    l
                }
                LayerSpec::Dense { outputs, relu } => {
                    if outputs == 0 {
                        return Err(shape_err("a non-empty dense layer", "0 outputs"));
                    }
                    let inputs = shape.len();
                    let w = offset;
                    let b = w + inputs * outputs;
                    offset = b + outputs;
                    shape = Shape::new(1, 1, outputs);
                    Layer::Dense {
                        inputs,
                        outputs,
                        relu,
                        w,
                        b,
                    }
                }
            };
            layers.push(layer);
        }
        if layers.is_empty() {
            return Err(shape_err("at least one layer", "none"));
        }
        Ok(Self {
            arch,
            input,
            layers,
            params: vec![0.0; offset],
        })
    }

    /// Grid-state network for a `rows x cols x 3` state.
    pub fn proposed(rows: usize, cols: usize, cfg: &ArchConfig) -> Result<Self> {
        let (kh, kw) = cfg.kernel;
        let specs = [
            LayerSpec::Conv {
                out_channels: cfg.conv1_channels,
                kh,
                kw,
                relu: cfg.conv_relu,
            },
            LayerSpec::MaxPool,
            LayerSpec::Conv {
                out_channels: cfg.conv2_channels,
                kh,
                kw,
                relu: cfg.conv_relu,
            },
            LayerSpec::Dense {
                outputs: cfg.hidden.0,
                relu: true,
            },
            LayerSpec::Dense {
                outputs: cfg.hidden.1,
                relu: true,
            },
            LayerSpec::Dense {
                outputs: NUM_ACTIONS,
                relu: false,
            },
        ];
        Self::from_specs(Arch::ProposedConv, Shape::new(rows, cols, 3), &specs)
    }

    /// Coordinate-state network on four inputs.
    pub fn traditional(cfg: &ArchConfig) -> Result<Self> {
        let specs = [
            LayerSpec::Dense {
                outputs: cfg.hidden.0,
                relu: true,
            },
            LayerSpec::Dense {
                outputs: cfg.hidden.1,
                relu: true,
            },
            LayerSpec::Dense {
                outputs: NUM_ACTIONS,
                relu: false,
            },
        ];
        Self::from_specs(Arch::TraditionalMlp, Shape::new(1, 1, 4), &specs)
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation of every
    /// weight and bias.
    pub fn init_uniform(&mut self, rng: &mut impl rand::Rng) {
        for layer in &self.layers {
            let (nw, nb, fan_in) = layer.param_shape();
            if nw == 0 {
                continue;
            }
            let (Layer::Conv { w, .. } | Layer::Dense { w, .. }) = *layer else {
                unreachable!()
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut self.params[w..w + nw + nb] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("non-empty").output_len()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Overwrites this network's parameters with `src`'s.
    pub fn copy_from(&mut self, src: &QNetwork) -> Result<()> {
        if self.layers != src.layers {
            return Err(shape_err("identical layer stacks", "different architectures"));
        }
        self.params.copy_from_slice(&src.params);
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input.len() {
            return Err(shape_err(
                format!("{} inputs ({:?})", self.input.len(), self.input),
                input.len().to_string(),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.acts.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = Vec::new();
        acts.push(input.to_vec());
        for layer in &self.layers {
            let x = acts.last().expect("non-empty");
            let mut out = vec![0.0; layer.output_len()];
            match *layer {
                Layer::Conv {
                    input, out_channels, kh, kw, w, b, ..
                } => conv_forward(&self.params[w..b], &self.params[b..b + out_channels], input, out_channels, kh, kw, x, &mut out),
                Layer::MaxPool { input } => pool_argmax.push(pool_forward(input, x, &mut out)),
                Layer::Dense {
                    inputs, outputs, w, b, ..
                } => dense_forward(&self.params[w..b], &self.params[b..b + outputs], inputs, x, &mut out),
            }
            if layer.relu() {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Ok(Trace { acts, pool_argmax })
    }

    /// Accumulates into `grads` the gradient of a scalar loss whose gradient
    /// with respect to the network output is `dout`.
    pub fn backward_into(&self, trace: &Trace, dout: &[f64], grads: &mut [f64]) -> Result<()> {
        if dout.len() != self.output_len() {
            return Err(shape_err(self.output_len().to_string(), dout.len().to_string()));
        }
        if grads.len() != self.params.len() {
            return Err(shape_err(self.params.len().to_string(), grads.len().to_string()));
        }
        let mut delta = dout.to_vec();
        let mut pool_idx = trace.pool_argmax.len();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu() {
                for (d, &a) in delta.iter_mut().zip(&trace.acts[li + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &trace.acts[li];
            let need_input = li > 0;
            let gated = li > 0 && self.relu_gated(li - 1);
            let mut dx = if need_input { vec![0.0; layer.input_len()] } else { Vec::new() };
            match *layer {
                Layer::Conv {
                    input, out_channels, kh, kw, w, b, ..
                } => {
                    let (gw, gb) = grads[w..b + out_channels].split_at_mut(b - w);
                    conv_backward(&self.params[w..b], input, out_channels, kh, kw, x, &delta, gw, gb, need_input.then_some(&mut dx[..]), gated);
                }
                Layer::MaxPool { .. } => {
                    pool_idx -= 1;
                    for (&src, &d) in trace.pool_argmax[pool_idx].iter().zip(&delta) {
                        dx[src] += d;
                    }
                }
                Layer::Dense {
                    inputs, outputs, w, b, ..
                } => {
                    let (gw, gb) = grads[w..b + outputs].split_at_mut(b - w);
                    dense_backward(&self.params[w..b], inputs, outputs, x, &delta, gw, gb, need_input.then_some(&mut dx[..]), gated);
                }
            }
            delta = dx;
        }
        Ok(())
    }

    /// True if gradient reaching a zero output of layer `li` is always
    /// discarded further down: a ReLU output that is zero has a dead unit,
    /// and a zero max-pool of ReLU outputs routes to one.
    fn relu_gated(&self, li: usize) -> bool {
        match self.layers[li] {
            Layer::MaxPool { .. } => li > 0 && self.relu_gated(li - 1),
            l => l.relu(),
        }
    }

    /// Squared TD error `(target - Q(input, action))^2` and its gradient
    /// scaled by `scale`, accumulated into `grads`. Only the taken action's
    /// output receives gradient.
    pub fn accumulate_td(&self, input: &[f64], action: usize, target: f64, scale: f64, grads: &mut [f64]) -> Result<f64> {
        if action >= self.output_len() {
            return Err(shape_err(format!("action < {}", self.output_len()), action.to_string()));
        }
        let trace = self.forward_trace(input)?;
        let residual = trace.output()[action] - target;
        let mut dout = vec![0.0; self.output_len()];
        dout[action] = 2.0 * residual * scale;
        if residual != 0.0 {
            self.backward_into(&trace, &dout, grads)?;
        }
        Ok(residual * residual)
    }

    /// Persists the network. Layout (little-endian): magic, format version
    /// (u32), architecture tag (u8), input rows/cols/channels (u32 each),
    /// layer count (u32) and per-layer descriptors, parameter count (u64),
    /// then the parameters as f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.arch.tag());
        for d in [self.input.rows, self.input.cols, self.input.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            let (kind, a, b, c) = match *layer {
                Layer::Conv {
                    out_channels, kh, kw, relu, ..
                } => (0u8, out_channels, kh, kw * 2 + usize::from(relu)),
                Layer::MaxPool { .. } => (1u8, 0, 0, 0),
                Layer::Dense { outputs, relu, .. } => (2u8, outputs, usize::from(relu), 0),
            };
            out.push(kind);
            for v in [a, b, c] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a Q-network checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let arch = Arch::from_tag(r.take(1)?[0])?;
        let input = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n_layers = r.u32()? as usize;
        let mut specs = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let kind = r.take(1)?[0];
            let (a, b, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            specs.push(match kind {
                0 => LayerSpec::Conv {
                    out_channels: a,
                    kh: b,
                    kw: c / 2,
                    relu: c % 2 == 1,
                },
                1 => LayerSpec::MaxPool,
                2 => LayerSpec::Dense { outputs: a, relu: b == 1 },
                _ => return Err(Error::Checkpoint(format!("unknown layer kind {kind}"))),
            });
        }
        let mut net = Self::from_specs(arch, input, &specs).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = r.u64()? as usize;
        if count != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match the architecture ({})",
                net.params.len()
            )));
        }
        for p in &mut net.params {
            *p = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Gradient of `(target - Q(input, action))^2` with respect to every parameter.
pub fn backward(net: &QNetwork, input: &[f64], action: usize, target: f64) -> Result<Vec<f64>> {
    let mut grads = vec![0.0; net.param_count()];
    net.accumulate_td(input, action, target, 1.0, &mut grads)?;
    Ok(grads)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape {
        expected: expected.into(),
        got: got.into(),
    }
}

// Convolution by scattering each non-zero input into the outputs it feeds;
// state tensors and post-ReLU activations are mostly zeros.
#[allow(clippy::too_many_arguments)]
fn conv_forward(weights: &[f64], bias: &[f64], input: Shape, oc: usize, kh: usize, kw: usize, x: &[f64], out: &mut [f64]) {
    let (oh, ow) = (input.rows - kh + 1, input.cols - kw + 1);
    let icn = input.channels;
    for pixel in out.chunks_exact_mut(oc) {
        pixel.copy_from_slice(bias);
    }
    for iy in 0..input.rows {
        let ky_range = kernel_range(iy, kh, oh);
        for ix in 0..input.cols {
            let kx_range = kernel_range(ix, kw, ow);
            let xs = &x[(iy * input.cols + ix) * icn..][..icn];
            for (ic, &v) in xs.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for ky in ky_range.clone() {
                    let row = (iy - ky) * ow;
                    for kx in kx_range.clone() {
                        let o = (row + ix - kx) * oc;
                        let wb = ((ky * kw + kx) * icn + ic) * oc;
                        axpy(&mut out[o..o + oc], v, &weights[wb..wb + oc]);
                    }
                }
            }
        }
    }
}

/// Kernel offsets `k` with `0 <= i - k < out_len`.
fn kernel_range(i: usize, k: usize, out_len: usize) -> std::ops::Range<usize> {
    (i + 1).saturating_sub(out_len)..k.min(i + 1)
}

#[inline(always)]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    // Fixed widths for the standard channel counts let the loop unroll.
    match y.len() {
        8 => axpy_fixed::<8>(y.try_into().expect("len 8"), a, x.try_into().expect("len 8")),
        16 => axpy_fixed::<16>(y.try_into().expect("len 16"), a, x.try_into().expect("len 16")),
        _ => {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += a * xi;
            }
        }
    }
}

#[inline(always)]
fn axpy_fixed<const N: usize>(y: &mut [f64; N], a: f64, x: &[f64; N]) {
    for i in 0..N {
        y[i] += a * x[i];
    }
}

/// Dot product with four interleaved partial sums.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    weights: &[f64],
    input: Shape,
    oc: usize,
    kh: usize,
    kw: usize,
    x: &[f64],
    delta: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut dx: Option<&mut [f64]>,
    gated: bool,
) {
    let (oh, ow) = (input.rows - kh + 1, input.cols - kw + 1);
    let icn = input.channels;
    for pixel in delta.chunks_exact(oc) {
        axpy(gb, 1.0, pixel);
    }
    for iy in 0..input.rows {
        let ky_range = kernel_range(iy, kh, oh);
        for ix in 0..input.cols {
            let kx_range = kernel_range(ix, kw, ow);
            for ic in 0..icn {
                let xi = (iy * input.cols + ix) * icn + ic;
                let v = x[xi];
                let want_dx = dx.is_some() && !(gated && v == 0.0);
                if v == 0.0 && !want_dx {
                    continue;
                }
                let mut acc = 0.0;
                for ky in ky_range.clone() {
                    let row = (iy - ky) * ow;
                    for kx in kx_range.clone() {
                        let o = (row + ix - kx) * oc;
                        let wb = ((ky * kw + kx) * icn + ic) * oc;
                        let d = &delta[o..o + oc];
                        if v != 0.0 {
                            axpy(&mut gw[wb..wb + oc], v, d);
                        }
                        if want_dx {
                            acc += dot(&weights[wb..wb + oc], d);
                        }
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    dx[xi] = acc;
                }
            }
        }
    }
}

fn pool_forward(input: Shape, x: &[f64], out: &mut [f64]) -> Vec<usize> {
    let (oh, ow, c) = (input.rows / 2, input.cols / 2, input.channels);
    let mut argmax = vec![0; out.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_i = (2 * oy * input.cols + 2 * ox) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = ((2 * oy + dy) * input.cols + 2 * ox + dx) * c + ch;
                    if x[i] > x[best_i] {
                        best_i = i;
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                out[o] = x[best_i];
                argmax[o] = best_i;
            }
        }
    }
    argmax
}

fn dense_forward(weights: &[f64], bias: &[f64], inputs: usize, x: &[f64], out: &mut [f64]) {
    let n = out.len();
    out.copy_from_slice(bias);
    for i in 0..inputs {
        let v = x[i];
        if v != 0.0 {
            axpy(out, v, &weights[i * n..(i + 1) * n]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    weights: &[f64],
    inputs: usize,
    outputs: usize,
    x: &[f64],
    delta: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    mut dx: Option<&mut [f64]>,
    gated: bool,
) {
    for (g, d) in gb.iter_mut().zip(delta) {
        *g += d;
    }
    for i in 0..inputs {
        let row = i * outputs..(i + 1) * outputs;
        let v = x[i];
        if v != 0.0 {
            axpy(&mut gw[row.clone()], v, delta);
        }
        if let Some(dx) = dx.as_deref_mut().filter(|_| !(gated && v == 0.0)) {
            dx[i] = dot(&weights[row], delta);
        }
    }
}

/// Piecewise-constant learning rate keyed by episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl Default for LrSchedule {
    fn default() -> Self {
        Self(vec![(0, 1e-3), (500, 1e-4), (1000, 1e-5)])
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.0.first().map(|e| e.0) != Some(0) {
            return Err(Error::Config("learning-rate schedule must start at episode 0".into()));
        }
        if self.0.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("learning-rate thresholds must be strictly increasing".into()));
        }
        if self.0.iter().any(|e| !(e.1 > 0.0 && e.1.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn lr(&self, episode: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= episode)
            .last()
            .map_or(self.0[0].1, |e| e.1)
    }
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
}

impl AdamState {
    pub fn new(n_params: usize, schedule: LrSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
        })
    }

    /// One bias-corrected Adam update with the learning rate scheduled for
    /// `episode`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], episode: usize) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err(self.m.len().to_string(), format!("{} / {}", params.len(), grads.len())));
        }
        self.t += 1;
        let lr = self.schedule.lr(episode);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(net: &mut QNetwork, adam: &mut AdamState, grads: &[f64], episode: usize) -> Result<()> {
    adam.step(net.params_mut(), grads, episode)
}
