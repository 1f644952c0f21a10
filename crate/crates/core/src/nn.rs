//! The toy denoiser ε_θ(z_t, c, t).
//!
//! A stack of `hidden_layers` convolutions (1×1 for [`Architecture::Pointwise`],
//! 3×3 with zero padding for [`Architecture::Convolutional`]) with SiLU
//! activations, followed by a linear convolution down to one output channel.
//! The first layer additionally receives a linear projection of the
//! sinusoidal timestep features and a learned per-class bias, both broadcast
//! over every pixel.
//!
//! Gradients are computed by an explicit reverse pass; [`loss_and_grad`]
//! takes any scalar loss of the predictions that can report its own
//! derivative with respect to those predictions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    /// 1×1 receptive field everywhere.
    Pointwise,
    /// 3×3 kernels with zero padding.
    Convolutional,
}

impl Architecture {
    pub fn kernel_size(self) -> usize {
        match self {
            Architecture::Pointwise => 1,
            Architecture::Convolutional => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Architecture::Pointwise => 0,
            Architecture::Convolutional => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Architecture::Pointwise),
            1 => Some(Architecture::Convolutional),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub hidden_layers: usize,
    pub time_embed_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    /// 3 input channels, 16 hidden channels, 2 hidden layers, 16 timestep features.
    pub fn pointwise(num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Pointwise,
            in_channels: 3,
            hidden_channels: 16,
            hidden_layers: 2,
            time_embed_dim: 16,
            num_classes,
        }
    }

    /// Same widths as [`ModelSpec::pointwise`] with 3×3 kernels.
    pub fn convolutional(num_classes: usize) -> Self {
        Self {
            architecture: Architecture::Convolutional,
            ..Self::pointwise(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("in_channels", self.in_channels),
            ("hidden_channels", self.hidden_channels),
            ("hidden_layers", self.hidden_layers),
            ("time_embed_dim", self.time_embed_dim),
            ("num_classes", self.num_classes),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Spec(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn kernel_size(&self) -> usize {
        self.architecture.kernel_size()
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        self.validate()?;
        Ok(ParamLayout::new(self))
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.len)
    }
}

/// Where each parameter block lives inside a [`ParamVector`].
///
/// Order: first-layer kernel, first-layer bias, timestep projection,
/// class table, remaining hidden layers (kernel then bias), output kernel,
/// output bias. Kernels are `[out][in][ky][kx]`, the timestep projection is
/// `[hidden][time_embed_dim]`, the class table `[class][hidden]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub hidden_weights: Vec<Range<usize>>,
    pub hidden_biases: Vec<Range<usize>>,
    pub time_projection: Range<usize>,
    pub class_table: Range<usize>,
    pub output_weight: Range<usize>,
    pub output_bias: Range<usize>,
    pub len: usize,
}

impl ParamLayout {
    fn new(spec: &ModelSpec) -> Self {
        let k2 = spec.kernel_size() * spec.kernel_size();
        let hid = spec.hidden_channels;
        let mut cursor = 0;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let mut hidden_weights = Vec::with_capacity(spec.hidden_layers);
        let mut hidden_biases = Vec::with_capacity(spec.hidden_layers);
        hidden_weights.push(take(hid * spec.in_channels * k2));
        hidden_biases.push(take(hid));
        let time_projection = take(hid * spec.time_embed_dim);
        let class_table = take(spec.num_classes * hid);
        for _ in 1..spec.hidden_layers {
            hidden_weights.push(take(hid * hid * k2));
            hidden_biases.push(take(hid));
        }
        let output_weight = take(hid * k2);
        let output_bias = take(1);
        Self {
            hidden_weights,
            hidden_biases,
            time_projection,
            class_table,
            output_weight,
            output_bias,
            len: cursor,
        }
    }
}

/// Flat model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Gradient with the layout of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|g| g * g).sum())
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add_assign(&mut self, other: &GradVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Fan-in-scaled uniform weights, zero biases. Each block draws from its own
/// stream so the values of one block do not depend on the sizes of others.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    let layout = spec.layout()?;
    let k2 = spec.kernel_size() * spec.kernel_size();
    let mut values = vec![0.0; layout.len];
    let first_fan_in = spec.in_channels * k2 + spec.time_embed_dim;
    let mut fill = |range: &Range<usize>, fan_in: usize, block: u64| {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        let mut r = rng::derive(seed, stream::INIT + block);
        for v in &mut values[range.clone()] {
            *v = r.random_range(-bound..bound);
        }
    };
    fill(&layout.hidden_weights[0], first_fan_in, 0);
    fill(&layout.time_projection, first_fan_in, 1);
    fill(&layout.class_table, first_fan_in, 2);
    for (l, range) in layout.hidden_weights.iter().enumerate().skip(1) {
        fill(range, spec.hidden_channels * k2, 2 + l as u64);
    }
    fill(
        &layout.output_weight,
        spec.hidden_channels * k2,
        2 + spec.hidden_layers as u64,
    );
    Ok(ParamVector(values))
}

/// Diffusion timestep `step ∈ [1, horizon]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Timestep {
    pub step: usize,
    pub horizon: usize,
}

impl Timestep {
    pub fn new(step: usize, horizon: usize) -> Self {
        Self { step, horizon }
    }

    pub fn fraction(&self) -> f64 {
        self.step as f64 / self.horizon as f64
    }
}

/// Sinusoidal features of `t / T`: alternating sin/cos at geometrically
/// spaced frequencies.
pub fn time_embedding(t: Timestep, width: usize) -> Vec<f64> {
    let s = 1000.0 * t.fraction();
    (0..width)
        .map(|j| {
            let pair = (j / 2) as f64;
            let freq = libm::pow(10_000.0, -2.0 * pair / width as f64);
            if j % 2 == 0 {
                libm::sin(s * freq)
            } else {
                libm::cos(s * freq)
            }
        })
        .collect()
}

/// Channel-major stack of equally sized planes fed to the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserInput {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl DenoiserInput {
    pub fn from_planes(planes: &[&Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Shape("no input planes".into()))?;
        let (height, width) = first.dims();
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in planes {
            p.ensure_dims((height, width), "input plane")?;
            data.extend_from_slice(p.data());
        }
        Ok(Self {
            height,
            width,
            channels: planes.len(),
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// One denoiser evaluation: input, timestep and condition class.
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    pub input: &'a DenoiserInput,
    pub t: Timestep,
    pub class: u32,
}

/// Intermediate values of a forward pass, kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct Trace {
    height: usize,
    width: usize,
    class: usize,
    temb: Vec<f64>,
    /// Pre-activations per hidden layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations per hidden layer.
    act: Vec<Vec<f64>>,
    output: Image,
}

impl Trace {
    pub fn output(&self) -> &Image {
        &self.output
    }
}

/// A parameter vector bound to its spec.
#[derive(Clone, Copy, Debug)]
pub struct Denoiser<'a> {
    spec: &'a ModelSpec,
    params: &'a [f64],
}

impl<'a> Denoiser<'a> {
    pub fn new(spec: &'a ModelSpec, params: &'a ParamVector) -> Result<Self> {
        let expected = spec.param_count()?;
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "{} parameters, spec needs {expected}",
                params.len()
            )));
        }
        Ok(Self {
            spec,
            params: params.as_slice(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn predict(&self, query: Query<'_>) -> Result<Image> {
        Ok(self.forward(query)?.output)
    }

    pub fn forward(&self, query: Query<'_>) -> Result<Trace> {
        let spec = self.spec;
        let input = query.input;
        if input.channels() != spec.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, spec expects {}",
                input.channels(),
                spec.in_channels
            )));
        }
        let class = query.class as usize;
        if class >= spec.num_classes {
            return Err(Error::Shape(format!(
                "class {class} outside [0, {})",
                spec.num_classes
            )));
        }
        if query.t.step == 0 || query.t.step > query.t.horizon {
            return Err(Error::Schedule(format!(
                "timestep {} outside [1, {}]",
                query.t.step, query.t.horizon
            )));
        }
        let layout = ParamLayout::new(spec);
        let (h, w) = input.dims();
        let n = h * w;
        let k = spec.kernel_size();
        let hid = spec.hidden_channels;
        let temb = time_embedding(query.t, spec.time_embed_dim);

        let mut pre = Vec::with_capacity(spec.hidden_layers);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(spec.hidden_layers);
        for l in 0..spec.hidden_layers {
            let bias = &self.params[layout.hidden_biases[l].clone()];
            let mut shift = bias.to_vec();
            if l == 0 {
                let proj = &self.params[layout.time_projection.clone()];
                let table = &self.params[layout.class_table.clone()];
                for o in 0..hid {
                    let row = &proj[o * spec.time_embed_dim..(o + 1) * spec.time_embed_dim];
                    shift[o] += row.iter().zip(&temb).map(|(a, b)| a * b).sum::<f64>();
                    shift[o] += table[class * hid + o];
                }
            }
            let mut z = vec![0.0; hid * n];
            for (o, s) in shift.iter().enumerate() {
                z[o * n..(o + 1) * n].fill(*s);
            }
            let (src, in_ch) = if l == 0 {
                (input.data(), spec.in_channels)
            } else {
                (act[l - 1].as_slice(), hid)
            };
            conv_forward(
                src,
                in_ch,
                h,
                w,
                &self.params[layout.hidden_weights[l].clone()],
                hid,
                k,
                &mut z,
            );
            act.push(z.iter().map(|&x| silu(x)).collect());
            pre.push(z);
        }
        let mut out = vec![self.params[layout.output_bias.start]; n];
        conv_forward(
            &act[spec.hidden_layers - 1],
            hid,
            h,
            w,
            &self.params[layout.output_weight.clone()],
            1,
            k,
            &mut out,
        );
        Ok(Trace {
            height: h,
            width: w,
            class,
            temb,
            pre,
            act,
            output: Image::from_vec(h, w, out)?,
        })
    }

    /// Accumulates `∂(grad_out · output)/∂θ` into `grad`.
    pub fn backward(
        &self,
        query: Query<'_>,
        trace: &Trace,
        grad_out: &Image,
        grad: &mut GradVector,
    ) -> Result<()> {
        let spec = self.spec;
        grad_out.ensure_dims((trace.height, trace.width), "output gradient")?;
        if grad.len() != self.params.len() {
            return Err(Error::Shape("gradient length differs from params".into()));
        }
        let layout = ParamLayout::new(spec);
        let (h, w) = (trace.height, trace.width);
        let n = h * w;
        let k = spec.kernel_size();
        let hid = spec.hidden_channels;
        let g = grad.as_mut_slice();

        let go = grad_out.data();
        g[layout.output_bias.start] += go.iter().sum::<f64>();
        let last = spec.hidden_layers - 1;
        let mut g_act = vec![0.0; hid * n];
        conv_backward(
            &trace.act[last],
            hid,
            h,
            w,
            &self.params[layout.output_weight.clone()],
            1,
            k,
            go,
            Some(&mut g_act),
            &mut g[layout.output_weight.clone()],
        );
        for l in (0..spec.hidden_layers).rev() {
            let g_pre: Vec<f64> = g_act
                .iter()
                .zip(&trace.pre[l])
                .map(|(ga, &z)| ga * silu_grad(z))
                .collect();
            let bias = layout.hidden_biases[l].clone();
            for o in 0..hid {
                let s: f64 = g_pre[o * n..(o + 1) * n].iter().sum();
                g[bias.start + o] += s;
                if l == 0 {
                    let proj = layout.time_projection.start + o * spec.time_embed_dim;
                    for (j, e) in trace.temb.iter().enumerate() {
                        g[proj + j] += s * e;
                    }
                    g[layout.class_table.start + trace.class * hid + o] += s;
                }
            }
            if l == 0 {
                conv_backward(
                    query.input.data(),
                    spec.in_channels,
                    h,
                    w,
                    &self.params[layout.hidden_weights[0].clone()],
                    hid,
                    k,
                    &g_pre,
                    None,
                    &mut g[layout.hidden_weights[0].clone()],
                );
            } else {
                let mut g_prev = vec![0.0; hid * n];
                conv_backward(
                    &trace.act[l - 1],
                    hid,
                    h,
                    w,
                    &self.params[layout.hidden_weights[l].clone()],
                    hid,
                    k,
                    &g_pre,
                    Some(&mut g_prev),
                    &mut g[layout.hidden_weights[l].clone()],
                );
                g_act = g_prev;
            }
        }
        Ok(())
    }
}

/// ε_θ for one input.
pub fn predict_noise(
    spec: &ModelSpec,
    params: &ParamVector,
    input: &DenoiserInput,
    t: Timestep,
    class: u32,
) -> Result<Image> {
    Denoiser::new(spec, params)?.predict(Query { input, t, class })
}

/// Evaluates a scalar loss of several predictions and its exact gradient.
///
/// `loss` receives the predictions for `queries` (same order) and returns
/// the loss value together with `∂loss/∂prediction` for each query.
pub fn loss_and_grad<F>(
    spec: &ModelSpec,
    params: &ParamVector,
    queries: &[Query<'_>],
    loss: F,
) -> Result<(f64, GradVector)>
where
    F: FnOnce(&[Image]) -> Result<(f64, Vec<Image>)>,
{
    let model = Denoiser::new(spec, params)?;
    let traces = queries
        .iter()
        .map(|q| model.forward(*q))
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<Image> = traces.iter().map(|t| t.output.clone()).collect();
    let (value, grads_out) = loss(&preds)?;
    if !value.is_finite() {
        return Err(Error::Numerics(format!("loss evaluated to {value}")));
    }
    if grads_out.len() != queries.len() {
        return Err(Error::Shape(format!(
            "{} output gradients for {} queries",
            grads_out.len(),
            queries.len()
        )));
    }
    let mut grad = GradVector::zeros(params.len());
    for ((q, trace), g_out) in queries.iter().zip(&traces).zip(&grads_out) {
        model.backward(*q, trace, g_out, &mut grad)?;
    }
    if grad.as_slice().iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerics("non-finite gradient".into()));
    }
    Ok((value, grad))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Zero-padded copy of `ch` planes of `h × w`, each `(h + 2p) × (w + 2p)`.
fn pad_planes(src: &[f64], ch: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; ch * ph * pw];
    for c in 0..ch {
        for y in 0..h {
            let dst = c * ph * pw + (y + p) * pw + p;
            out[dst..dst + w].copy_from_slice(&src[c * h * w + y * w..c * h * w + (y + 1) * w]);
        }
    }
    out
}

/// Adds the interior of padded plane `src` into the unpadded plane `dst`.
fn add_interior(src: &[f64], h: usize, w: usize, p: usize, dst: &mut [f64]) {
    let pw = w + 2 * p;
    for y in 0..h {
        let s = &src[(y + p) * pw + p..(y + p) * pw + p + w];
        for (d, v) in dst[y * w..(y + 1) * w].iter_mut().zip(s) {
            *d += v;
        }
    }
}

/// Geometry of a zero-padded plane. Output pixel `(y, x)` sits at padded
/// index `(y + p)·pw + x + p`; the taps of a kernel become constant index
/// offsets, so each tap is one contiguous slice operation over `span`.
/// Positions of `span` that fall in the padding are scratch.
struct Padded {
    plane: usize,
    pw: usize,
    pad: usize,
    span: Range<usize>,
}

impl Padded {
    fn new(h: usize, w: usize, k: usize) -> Self {
        let pad = k / 2;
        let pw = w + 2 * pad;
        let first = pad * pw + pad;
        let last = (h - 1 + pad) * pw + (w - 1 + pad);
        Self {
            plane: (h + 2 * pad) * pw,
            pw,
            pad,
            span: first..last + 1,
        }
    }

    fn offset(&self, ky: usize, kx: usize) -> isize {
        (ky as isize - self.pad as isize) * self.pw as isize + (kx as isize - self.pad as isize)
    }

    fn shifted(&self, off: isize) -> Range<usize> {
        let s = (self.span.start as isize + off) as usize;
        s..s + self.span.len()
    }
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[o] += Σ_i W[o][i] ⋆ input[i]` with zero padding.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_ch: usize,
    k: usize,
    out: &mut [f64],
) {
    let g = Padded::new(h, w, k);
    let src = pad_planes(input, in_ch, h, w, g.pad);
    let mut acc = vec![0.0; g.plane];
    for o in 0..out_ch {
        acc.fill(0.0);
        for i in 0..in_ch {
            let plane = &src[i * g.plane..(i + 1) * g.plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((o * in_ch + i) * k + ky) * k + kx];
                    let s = &plane[g.shifted(g.offset(ky, kx))];
                    for (d, v) in acc[g.span.clone()].iter_mut().zip(s) {
                        *d += wv * v;
                    }
                }
            }
        }
        add_interior(&acc, h, w, g.pad, &mut out[o * h * w..(o + 1) * h * w]);
    }
}

/// Reverse pass of [`conv_forward`].
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_ch: usize,
    k: usize,
    grad_out: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_weight: &mut [f64],
) {
    let g = Padded::new(h, w, k);
    let src = pad_planes(input, in_ch, h, w, g.pad);
    // Padding entries of the output gradient are zero, so scratch positions
    // of the span contribute nothing.
    let go = pad_planes(grad_out, out_ch, h, w, g.pad);
    let mut gi = grad_in.as_ref().map(|_| vec![0.0; in_ch * g.plane]);
    for o in 0..out_ch {
        let go_plane = &go[o * g.plane..(o + 1) * g.plane][g.span.clone()];
        for i in 0..in_ch {
            let plane = &src[i * g.plane..(i + 1) * g.plane];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * in_ch + i) * k + ky) * k + kx;
                    let r = g.shifted(g.offset(ky, kx));
                    grad_weight[widx] += dot(go_plane, &plane[r.clone()]);
                    if let Some(gi) = gi.as_mut() {
                        let wv = weight[widx];
                        let dst = &mut gi[i * g.plane..(i + 1) * g.plane][r];
                        for (d, v) in dst.iter_mut().zip(go_plane) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    if let (Some(out), Some(gi)) = (grad_in, gi) {
        for i in 0..in_ch {
            add_interior(&gi[i * g.plane..(i + 1) * g.plane], h, w, g.pad, &mut out[i * h * w..(i + 1) * h * w]);
        }
    }
}
