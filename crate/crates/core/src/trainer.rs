//! Desk-scale training: a synthetic 3D video dataset, a five-layer convnet,
//! and plain SGD with momentum.
//!
//! The point of this module is not state-of-the-art accuracy — it exists so
//! the three training regimes can be compared end to end on one machine:
//!
//! * `fs` — fully spatial: every convolution is the direct reference kernel.
//! * `fw` — full Winograd fine-tuning: eligible convolutions run in the
//!   Winograd domain and their dense domain weights train directly.
//! * `lr` — low-rank fine-tuning: domain weights are frozen at their
//!   inherited values and only the rank-s correction factors train.
//!
//! Every reduction (batch gradients, epoch metrics) folds in sample-index
//! order on the caller's thread, so results are bit-identical at any worker
//! count and across runs with the same seed.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::layer::{CompactLayer, ForwardCache, WinogradLayer};
use crate::lowrank::init_lowrank;
use crate::parallel::{parallel_map, thread_count};
use crate::refconv::{conv3d_backward, conv3d_forward};
use crate::rng::Rng;
use crate::tensor::{Element, Matrix, Tensor};

// ── training regimes ────────────────────────────────────────────────────────

/// Which parameter set SGD updates. The classifier head always trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Spatial kernels train; any Winograd layers are frozen.
    Fs,
    /// Winograd base weights `G_W` train; spatial kernels are frozen.
    Fw,
    /// Low-rank factors `G_r`, `G_c` train; `G_W` and spatial kernels frozen.
    Lr,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fs" => Ok(Mode::Fs),
            "fw" => Ok(Mode::Fw),
            "lr" => Ok(Mode::Lr),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected fs, fw, or lr)"
            ))),
        }
    }
}

// ── model ───────────────────────────────────────────────────────────────────

/// One network layer. Convolutions come in three executable forms that share
/// the same math: spatial (direct loops), Winograd (trainable), and compact
/// Winograd (pruned, inference-only).
#[derive(Clone, Debug)]
pub enum Layer<S: Element> {
    /// Direct convolution with kernel `(C_o, C_i, r, r, r)`.
    SpatialConv { kernel: Tensor<S>, pad: usize },
    Winograd(WinogradLayer<S>),
    WinogradCompact(CompactLayer<S>),
    Relu,
    /// Non-overlapping max pooling with a cubic window.
    MaxPool { window: usize },
    /// Final classifier: logits = `w · flatten(x) + b`.
    Linear { w: Matrix<S>, b: Vec<S> },
}

#[derive(Clone, Debug)]
pub struct Model<S: Element> {
    pub layers: Vec<Layer<S>>,
}

/// Per-layer forward state kept for the backward pass.
pub enum LayerCache<S: Element> {
    SpatialConv { input: Tensor<S> },
    Winograd(ForwardCache<S>),
    Relu { active: Vec<bool> },
    MaxPool { argmax: Vec<usize>, in_dims: Vec<usize> },
    Linear { input: Vec<S>, in_dims: Vec<usize> },
    /// Layers with nothing to store (and inference-only layers).
    Stateless,
}

/// Gradient (or momentum velocity) for one layer; `None` for layers without
/// parameters.
#[derive(Clone, Debug)]
pub enum GradSlot<S: Element> {
    None,
    Spatial {
        d_kernel: Tensor<S>,
    },
    Winograd {
        d_g_w: Matrix<S>,
        d_g_r: Matrix<S>,
        d_g_c: Matrix<S>,
    },
    Linear {
        d_w: Matrix<S>,
        d_b: Vec<S>,
    },
}

/// Model-shaped bundle of gradients; also used as the momentum buffer.
#[derive(Clone, Debug)]
pub struct ModelGrads<S: Element> {
    pub slots: Vec<GradSlot<S>>,
}

impl<S: Element> ModelGrads<S> {
    pub fn zeros_like(model: &Model<S>) -> Self {
        let slots = model
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::SpatialConv { kernel, .. } => GradSlot::Spatial {
                    d_kernel: Tensor::zeros(kernel.dims()),
                },
                Layer::Winograd(l) => GradSlot::Winograd {
                    d_g_w: Matrix::zeros(l.g_w.rows(), l.g_w.cols()),
                    d_g_r: Matrix::zeros(l.g_r.rows(), l.g_r.cols()),
                    d_g_c: Matrix::zeros(l.g_c.rows(), l.g_c.cols()),
                },
                Layer::Linear { w, b } => GradSlot::Linear {
                    d_w: Matrix::zeros(w.rows(), w.cols()),
                    d_b: vec![S::ZERO; b.len()],
                },
                _ => GradSlot::None,
            })
            .collect();
        ModelGrads { slots }
    }

    /// Elementwise accumulate, slot by slot in layer order.
    pub fn add(&mut self, other: &ModelGrads<S>) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            match (a, b) {
                (GradSlot::None, GradSlot::None) => {}
                (
                    GradSlot::Spatial { d_kernel: x },
                    GradSlot::Spatial { d_kernel: y },
                ) => add_slice(x.data_mut(), y.data()),
                (
                    GradSlot::Winograd {
                        d_g_w: xw,
                        d_g_r: xr,
                        d_g_c: xc,
                    },
                    GradSlot::Winograd {
                        d_g_w: yw,
                        d_g_r: yr,
                        d_g_c: yc,
                    },
                ) => {
                    add_slice(xw.data_mut(), yw.data());
                    add_slice(xr.data_mut(), yr.data());
                    add_slice(xc.data_mut(), yc.data());
                }
                (
                    GradSlot::Linear { d_w: xw, d_b: xb },
                    GradSlot::Linear { d_w: yw, d_b: yb },
                ) => {
                    add_slice(xw.data_mut(), yw.data());
                    add_slice(xb, yb);
                }
                _ => panic!("mismatched gradient slots"),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let f = S::from_f64(factor);
        for slot in &mut self.slots {
            match slot {
                GradSlot::None => {}
                GradSlot::Spatial { d_kernel } => scale_slice(d_kernel.data_mut(), f),
                GradSlot::Winograd { d_g_w, d_g_r, d_g_c } => {
                    scale_slice(d_g_w.data_mut(), f);
                    scale_slice(d_g_r.data_mut(), f);
                    scale_slice(d_g_c.data_mut(), f);
                }
                GradSlot::Linear { d_w, d_b } => {
                    scale_slice(d_w.data_mut(), f);
                    scale_slice(d_b, f);
                }
            }
        }
    }
}

fn add_slice<S: Element>(a: &mut [S], b: &[S]) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b) {
        *x += *y;
    }
}

fn scale_slice<S: Element>(a: &mut [S], f: S) {
    for x in a.iter_mut() {
        *x *= f;
    }
}

fn max_pool<S: Element>(x: &Tensor<S>, window: usize) -> Result<(Tensor<S>, Vec<usize>)> {
    if x.ndim() != 4 {
        return Err(Error::Shape(format!(
            "pooling expects (C, D, H, W), got {:?}",
            x.dims()
        )));
    }
    let d = x.dims().to_vec();
    if window == 0 || d[1] % window != 0 || d[2] % window != 0 || d[3] % window != 0 {
        return Err(Error::Shape(format!(
            "spatial dims {:?} not divisible by pool window {window}",
            &d[1..]
        )));
    }
    let (od, oh, ow) = (d[1] / window, d[2] / window, d[3] / window);
    let mut out = Tensor::zeros(&[d[0], od, oh, ow]);
    let mut argmax = vec![0usize; out.len()];
    let xd = x.data();
    let od_data = out.data_mut();
    let mut o = 0;
    for c in 0..d[0] {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    // first strictly-greater element wins, so ties resolve to
                    // the lowest flat index deterministically
                    let mut best_idx =
                        ((c * d[1] + z * window) * d[2] + y * window) * d[3] + xx * window;
                    let mut best = xd[best_idx];
                    for kz in 0..window {
                        for ky in 0..window {
                            for kx in 0..window {
                                let idx = ((c * d[1] + z * window + kz) * d[2]
                                    + y * window
                                    + ky)
                                    * d[3]
                                    + xx * window
                                    + kx;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    od_data[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

impl<S: Element> Model<S> {
    fn walk(
        &self,
        input: &Tensor<S>,
        keep_caches: bool,
    ) -> Result<(Vec<S>, Vec<LayerCache<S>>)> {
        let mut caches = Vec::with_capacity(if keep_caches { self.layers.len() } else { 0 });
        let push = |caches: &mut Vec<LayerCache<S>>, c: LayerCache<S>| {
            if keep_caches {
                caches.push(c);
            }
        };
        let mut x = input.clone();
        let mut logits: Option<Vec<S>> = None;
        for layer in &self.layers {
            if logits.is_some() {
                return Err(Error::Config(
                    "linear classifier must be the final layer".into(),
                ));
            }
            match layer {
                Layer::SpatialConv { kernel, pad } => {
                    let out = conv3d_forward(&x, kernel, *pad)?;
                    push(&mut caches, LayerCache::SpatialConv { input: x });
                    x = out;
                }
                Layer::Winograd(l) => {
                    let (out, cache) = l.forward_lowrank(&x)?;
                    push(&mut caches, LayerCache::Winograd(cache));
                    x = out;
                }
                Layer::WinogradCompact(l) => {
                    let out = l.forward(&x)?;
                    push(&mut caches, LayerCache::Stateless);
                    x = out;
                }
                Layer::Relu => {
                    let active: Vec<bool> = x.data().iter().map(|v| *v > S::ZERO).collect();
                    for v in x.data_mut() {
                        if !(*v > S::ZERO) {
                            *v = S::ZERO;
                        }
                    }
                    push(&mut caches, LayerCache::Relu { active });
                }
                Layer::MaxPool { window } => {
                    let (out, argmax) = max_pool(&x, *window)?;
                    push(
                        &mut caches,
                        LayerCache::MaxPool {
                            argmax,
                            in_dims: x.dims().to_vec(),
                        },
                    );
                    x = out;
                }
                Layer::Linear { w, b } => {
                    let flat = x.data();
                    if w.cols() != flat.len() {
                        return Err(Error::Shape(format!(
                            "classifier expects {} features, got {}",
                            w.cols(),
                            flat.len()
                        )));
                    }
                    let mut out = b.clone();
                    for (k, o) in out.iter_mut().enumerate() {
                        let row = w.row(k);
                        let mut acc = S::ZERO;
                        for (wv, xv) in row.iter().zip(flat) {
                            acc += *wv * *xv;
                        }
                        *o += acc;
                    }
                    push(
                        &mut caches,
                        LayerCache::Linear {
                            input: flat.to_vec(),
                            in_dims: x.dims().to_vec(),
                        },
                    );
                    logits = Some(out);
                }
            }
        }
        Ok((logits.unwrap_or_else(|| x.data().to_vec()), caches))
    }

    /// Forward pass keeping per-layer caches for [`Model::backward`].
    pub fn forward(&self, input: &Tensor<S>) -> Result<(Vec<S>, Vec<LayerCache<S>>)> {
        self.walk(input, true)
    }

    /// Forward pass without caches (inference; works on compact layers).
    pub fn infer(&self, input: &Tensor<S>) -> Result<Vec<S>> {
        self.walk(input, false).map(|(logits, _)| logits)
    }

    /// Backpropagate `d_logits` through the cached forward pass. The model
    /// must end in a `Linear` layer. Compact layers cannot train.
    pub fn backward(
        &self,
        caches: &[LayerCache<S>],
        d_logits: &[S],
    ) -> Result<ModelGrads<S>> {
        if caches.len() != self.layers.len() {
            return Err(Error::Cache(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut slots: Vec<GradSlot<S>> = (0..self.layers.len())
            .map(|_| GradSlot::None)
            .collect();
        let mut d: Option<Tensor<S>> = None;
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Linear { w, b }, LayerCache::Linear { input, in_dims }) => {
                    if d.is_some() {
                        return Err(Error::Config(
                            "linear classifier must be the final layer".into(),
                        ));
                    }
                    if d_logits.len() != b.len() {
                        return Err(Error::Shape(format!(
                            "{} logit gradients for {} classes",
                            d_logits.len(),
                            b.len()
                        )));
                    }
                    let mut d_w = Matrix::zeros(w.rows(), w.cols());
                    for k in 0..w.rows() {
                        let row = d_w.row_mut(k);
                        let g = d_logits[k];
                        for (rv, xv) in row.iter_mut().zip(input) {
                            *rv = g * *xv;
                        }
                    }
                    // d_x[j] = Σ_k w[k,j]·d_logits[k], k ascending
                    let mut d_x = vec![S::ZERO; input.len()];
                    for k in 0..w.rows() {
                        let row = w.row(k);
                        let g = d_logits[k];
                        for (dx, wv) in d_x.iter_mut().zip(row) {
                            *dx += *wv * g;
                        }
                    }
                    slots[i] = GradSlot::Linear {
                        d_w,
                        d_b: d_logits.to_vec(),
                    };
                    d = Some(Tensor::new(in_dims.clone(), d_x)?);
                }
                (Layer::Relu, LayerCache::Relu { active }) => {
                    let dt = d.as_mut().ok_or_else(no_head)?;
                    for (g, a) in dt.data_mut().iter_mut().zip(active) {
                        if !*a {
                            *g = S::ZERO;
                        }
                    }
                }
                (Layer::MaxPool { .. }, LayerCache::MaxPool { argmax, in_dims }) => {
                    let dt = d.as_ref().ok_or_else(no_head)?;
                    let mut back = Tensor::zeros(in_dims);
                    for (g, &idx) in dt.data().iter().zip(argmax) {
                        back.data_mut()[idx] += *g;
                    }
                    d = Some(back);
                }
                (Layer::SpatialConv { kernel, pad }, LayerCache::SpatialConv { input }) => {
                    let dt = d.as_ref().ok_or_else(no_head)?;
                    let (d_kernel, d_input) = conv3d_backward(input, kernel, *pad, dt)?;
                    slots[i] = GradSlot::Spatial { d_kernel };
                    d = Some(d_input);
                }
                (Layer::Winograd(l), LayerCache::Winograd(cache)) => {
                    let dt = d.as_ref().ok_or_else(no_head)?;
                    let grads = l.backward(cache, dt)?;
                    slots[i] = GradSlot::Winograd {
                        d_g_w: grads.d_g_w,
                        d_g_r: grads.d_g_r,
                        d_g_c: grads.d_g_c,
                    };
                    d = Some(grads.d_input);
                }
                (Layer::WinogradCompact(_), _) => {
                    return Err(Error::Config(
                        "compact layers are inference-only and cannot backpropagate".into(),
                    ));
                }
                _ => return Err(Error::Cache("cache does not match layer".into())),
            }
        }
        Ok(ModelGrads { slots })
    }

    /// References to the Winograd layers in network order.
    pub fn winograd_layers(&self) -> Vec<&WinogradLayer<S>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Winograd(w) => Some(w),
                _ => None,
            })
            .collect()
    }

    pub fn winograd_layers_mut(&mut self) -> Vec<&mut WinogradLayer<S>> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Winograd(w) => Some(w),
                _ => None,
            })
            .collect()
    }

    /// Parameters SGD would update in `mode` (classifier head included).
    pub fn trainable_params(&self, mode: Mode) -> usize {
        self.layers
            .iter()
            .map(|layer| match (layer, mode) {
                (Layer::SpatialConv { kernel, .. }, Mode::Fs) => kernel.len(),
                (Layer::Winograd(l), Mode::Fw) => l.dense_param_count(),
                (Layer::Winograd(l), Mode::Lr) => l.lowrank_param_count(),
                (Layer::Linear { w, b }, _) => w.rows() * w.cols() + b.len(),
                _ => 0,
            })
            .sum()
    }

    /// Convolution-side trainable parameters only (head excluded); the
    /// quantity the low-rank budget comparison is stated over.
    pub fn conv_trainable_params(&self, mode: Mode) -> usize {
        self.layers
            .iter()
            .map(|layer| match (layer, mode) {
                (Layer::SpatialConv { kernel, .. }, Mode::Fs) => kernel.len(),
                (Layer::Winograd(l), Mode::Fw) => l.dense_param_count(),
                (Layer::Winograd(l), Mode::Lr) => l.lowrank_param_count(),
                _ => 0,
            })
            .sum()
    }

    /// One-line structural description per layer (CLI display).
    pub fn describe(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|layer| match layer {
                Layer::SpatialConv { kernel, pad } => {
                    let d = kernel.dims();
                    format!("conv3d {}->{} r={} pad={pad}", d[1], d[0], d[2])
                }
                Layer::Winograd(l) => format!(
                    "winograd {}->{} pad={} s={} kept={}/{}",
                    l.c_in,
                    l.c_out,
                    l.pad,
                    l.rank(),
                    l.kept(),
                    l.spec.t3()
                ),
                Layer::WinogradCompact(l) => format!(
                    "winograd-compact {}->{} pad={} l={}",
                    l.c_in,
                    l.c_out,
                    l.pad,
                    l.l()
                ),
                Layer::Relu => "relu".into(),
                Layer::MaxPool { window } => format!("maxpool {window}"),
                Layer::Linear { w, .. } => format!("linear {}->{}", w.cols(), w.rows()),
            })
            .collect()
    }
}

fn no_head() -> Error {
    Error::Config("backward requires the model to end in a linear layer".into())
}

// ── loss ────────────────────────────────────────────────────────────────────

/// Softmax cross-entropy. Returns the loss and dL/d(logits) = p − onehot.
/// Internals run in f64 regardless of `S` (the max-subtracted softmax is
/// stable there for any desk-scale logits).
pub fn cross_entropy<S: Element>(logits: &[S], label: usize) -> Result<(f64, Vec<S>)> {
    if label >= logits.len() {
        return Err(Error::Data(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let z: Vec<f64> = logits.iter().map(|v| v.to_f64()).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (z[label] - m);
    let d = exps
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let p = e / sum;
            S::from_f64(if k == label { p - 1.0 } else { p })
        })
        .collect();
    Ok((loss, d))
}

/// Index of the largest logit; first occurrence wins on ties.
pub fn argmax<S: Element>(logits: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

// ── synthetic dataset ───────────────────────────────────────────────────────

/// Labelled 3D clips: each sample is `(C, D, H, W)` with `D` acting as time.
pub struct SynthDataset<S: Element> {
    pub samples: Vec<Tensor<S>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<S: Element> SynthDataset<S> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Generate a balanced moving-blob dataset.
///
/// Sample `i` gets label `i % classes`; class `k` moves a Gaussian blob along
/// heading `2πk/classes` across the `D` frames. The blob's amplitude ramps up
/// over time, so even time-collapsed statistics carry the heading, and a
/// small jitter plus per-voxel noise keep samples distinct. Labels are
/// balanced by construction (counts differ by at most one).
pub fn synth_dataset<S: Element>(
    seed: u64,
    n: usize,
    classes: usize,
    dims: [usize; 4],
) -> Result<SynthDataset<S>> {
    let [c, d, h, w] = dims;
    if n == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    if classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if c == 0 || d < 2 || h < 8 || w < 8 {
        return Err(Error::Config(format!(
            "dims {dims:?} too small for the moving-blob construction \
             (need C>=1, D>=2, H>=8, W>=8)"
        )));
    }
    let sigma2 = 2.0 * 1.7 * 1.7;
    // total travel spans about half the frame so blobs stay mostly in view
    let speed = (h.min(w) as f64 / 2.0 - 2.0) / (d - 1) as f64;
    let root = Rng::new(seed);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = root.split(i as u64);
        let label = i % classes;
        let angle = TAU * label as f64 / classes as f64;
        let (vy, vx) = (angle.sin() * speed, angle.cos() * speed);
        let cy0 = h as f64 / 2.0 + (rng.uniform() - 0.5) * 3.0;
        let cx0 = w as f64 / 2.0 + (rng.uniform() - 0.5) * 3.0;
        let noise = rng.normals(c * d * h * w);
        let mut data = Vec::with_capacity(c * d * h * w);
        for _ in 0..c {
            for t in 0..d {
                let centered = t as f64 - (d - 1) as f64 / 2.0;
                let (cy, cx) = (cy0 + vy * centered, cx0 + vx * centered);
                // brightness ramp breaks time-reversal symmetry: a blob moving
                // east brightens eastwards, one moving west brightens westwards
                let amp = 0.6 + 0.8 * t as f64 / (d - 1) as f64;
                for y in 0..h {
                    for x in 0..w {
                        let dy = y as f64 - cy;
                        let dx = x as f64 - cx;
                        let v = amp * (-(dy * dy + dx * dx) / sigma2).exp();
                        data.push(S::from_f64(v));
                    }
                }
            }
        }
        for (v, nz) in data.iter_mut().zip(&noise) {
            *v += S::from_f64(0.05 * nz);
        }
        samples.push(Tensor::new(vec![c, d, h, w], data)?);
        labels.push(label);
    }
    Ok(SynthDataset {
        samples,
        labels,
        classes,
    })
}

// ── network construction ────────────────────────────────────────────────────

/// Build the small 3D convnet used throughout: conv(C→8) → relu →
/// conv(8→16) → relu → pool2 → conv(16→16) → relu → pool2 → linear.
/// All convolutions are spatial (`fs` form); conversion helpers turn the
/// non-stem ones into Winograd layers. Spatial dims must be divisible by 4
/// for the two pooling stages.
pub fn tiny_c3d<S: Element>(seed: u64, classes: usize, dims: [usize; 4]) -> Result<Model<S>> {
    let [c, d, h, w] = dims;
    if classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if c == 0 || d % 4 != 0 || h % 4 != 0 || w % 4 != 0 || d == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "input dims {dims:?} must be nonzero with D, H, W divisible by 4"
        )));
    }
    let widths = [c, 8, 16, 16];
    let rng = Rng::new(seed);
    let mut layers = Vec::new();
    for (idx, pair) in widths.windows(2).enumerate() {
        let (ci, co) = (pair[0], pair[1]);
        let std = (2.0 / (ci as f64 * 27.0)).sqrt();
        let mut krng = rng.split(1 + idx as u64);
        let data: Vec<S> = krng
            .normals(co * ci * 27)
            .into_iter()
            .map(|v| S::from_f64(v * std))
            .collect();
        layers.push(Layer::SpatialConv {
            kernel: Tensor::new(vec![co, ci, 3, 3, 3], data)?,
            pad: 1,
        });
        layers.push(Layer::Relu);
        if idx > 0 {
            layers.push(Layer::MaxPool { window: 2 });
        }
    }
    let features = widths[3] * (d / 4) * (h / 4) * (w / 4);
    let std = (2.0 / features as f64).sqrt();
    let mut hrng = rng.split(10);
    let wdata: Vec<S> = hrng
        .normals(classes * features)
        .into_iter()
        .map(|v| S::from_f64(v * std))
        .collect();
    layers.push(Layer::Linear {
        w: Matrix::new(classes, features, wdata)?,
        b: vec![S::ZERO; classes],
    });
    Ok(Model { layers })
}

/// Convert every spatial convolution after the first (the stem) into a dense
/// Winograd layer with inherited weights. The stem stays spatial: its input
/// is raw data rather than feature maps, and keeping one reference layer in
/// the model exercises the mixed execution path.
pub fn convert_to_winograd<S: Element>(model: &Model<S>) -> Result<Model<S>> {
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut seen_conv = false;
    for layer in &model.layers {
        layers.push(match layer {
            Layer::SpatialConv { kernel, pad } => {
                if seen_conv {
                    Layer::Winograd(WinogradLayer::from_spatial(kernel, *pad)?)
                } else {
                    seen_conv = true;
                    layer.clone()
                }
            }
            other => other.clone(),
        });
    }
    Ok(Model { layers })
}

/// Attach rank-`plan[i]` correction factors to the i-th Winograd layer
/// (network order). Factors are initialized from the SVD of the layer's own
/// base weights, scaled by `alpha`.
pub fn attach_lowrank<S: Element>(
    model: &mut Model<S>,
    rank_plan: &[usize],
    alpha: f64,
) -> Result<()> {
    let mut wl = model.winograd_layers_mut();
    if wl.len() != rank_plan.len() {
        return Err(Error::Config(format!(
            "rank plan has {} entries for {} Winograd layers",
            rank_plan.len(),
            wl.len()
        )));
    }
    for (layer, &s) in wl.iter_mut().zip(rank_plan) {
        let g64 = layer.g_w.cast::<f64>();
        let (g_r, g_c) = init_lowrank(&g64, s, alpha)?;
        layer.set_rank_factors(g_r.cast(), g_c.cast())?;
    }
    Ok(())
}

// ── SGD ─────────────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Divide the learning rate by 10 every this many epochs (0 = never).
    pub lr_decay_every: usize,
    /// Seed for epoch shuffles only; weights come pre-seeded by the builder.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        TrainConfig {
            mode,
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            momentum: 0.9,
            lr_decay_every: 15,
            seed: 0,
        }
    }
}

/// Metrics for one epoch. Eval numbers are NaN when no eval set was given.
#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_loss: f64,
    pub eval_acc: f64,
}

/// Loss, gradient sum, and hit count over `idxs`, reduced in index order.
pub fn batch_grads<S: Element>(
    model: &Model<S>,
    ds: &SynthDataset<S>,
    idxs: &[usize],
    threads: usize,
) -> Result<(f64, usize, ModelGrads<S>)> {
    let per: Vec<Result<(f64, bool, ModelGrads<S>)>> =
        parallel_map(idxs.len(), threads, |j| {
            let i = idxs[j];
            let (logits, caches) = model.forward(&ds.samples[i])?;
            let (loss, d_logits) = cross_entropy(&logits, ds.labels[i])?;
            let grads = model.backward(&caches, &d_logits)?;
            Ok((loss, argmax(&logits) == ds.labels[i], grads))
        });
    let mut total = ModelGrads::zeros_like(model);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for r in per {
        let (loss, hit, grads) = r?;
        loss_sum += loss;
        correct += hit as usize;
        total.add(&grads);
    }
    Ok((loss_sum, correct, total))
}

/// One SGD-with-momentum step: `v ← μ·v + g`, `θ ← θ − lr·v`, applied only to
/// the parameter sets `mode` trains. Untouched slots keep their velocity.
pub fn sgd_step<S: Element>(
    model: &mut Model<S>,
    grads: &ModelGrads<S>,
    velocity: &mut ModelGrads<S>,
    lr: f64,
    momentum: f64,
    mode: Mode,
) {
    let mu = S::from_f64(momentum);
    let step = S::from_f64(lr);
    let update = |theta: &mut [S], g: &[S], v: &mut [S]| {
        for ((t, gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + *gi;
            *t -= step * *vi;
        }
    };
    for ((layer, g), v) in model
        .layers
        .iter_mut()
        .zip(&grads.slots)
        .zip(&mut velocity.slots)
    {
        match (layer, g, v) {
            (
                Layer::SpatialConv { kernel, .. },
                GradSlot::Spatial { d_kernel },
                GradSlot::Spatial { d_kernel: vk },
            ) if mode == Mode::Fs => update(kernel.data_mut(), d_kernel.data(), vk.data_mut()),
            (
                Layer::Winograd(l),
                GradSlot::Winograd { d_g_w, d_g_r, d_g_c },
                GradSlot::Winograd {
                    d_g_w: vw,
                    d_g_r: vr,
                    d_g_c: vc,
                },
            ) => match mode {
                Mode::Fw => update(l.g_w.data_mut(), d_g_w.data(), vw.data_mut()),
                Mode::Lr => {
                    update(l.g_r.data_mut(), d_g_r.data(), vr.data_mut());
                    update(l.g_c.data_mut(), d_g_c.data(), vc.data_mut());
                }
                Mode::Fs => {}
            },
            (
                Layer::Linear { w, b },
                GradSlot::Linear { d_w, d_b },
                GradSlot::Linear { d_w: vw, d_b: vb },
            ) => {
                update(w.data_mut(), d_w.data(), vw.data_mut());
                update(b, d_b, vb);
            }
            _ => {}
        }
    }
}

/// Average loss and accuracy over a dataset (inference only).
pub fn evaluate<S: Element>(model: &Model<S>, ds: &SynthDataset<S>) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let per: Vec<Result<(f64, bool)>> = parallel_map(ds.len(), thread_count(), |i| {
        let logits = model.infer(&ds.samples[i])?;
        let (loss, _) = cross_entropy(&logits, ds.labels[i])?;
        Ok((loss, argmax(&logits) == ds.labels[i]))
    });
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for r in per {
        let (loss, hit) = r?;
        loss_sum += loss;
        correct += hit as usize;
    }
    Ok((loss_sum / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Mini-batch SGD training loop. Shuffles per epoch from `cfg.seed`, steps
/// with momentum, and decays the learning rate by 10 every
/// `lr_decay_every` epochs. Returns one log entry per epoch; train metrics
/// are accumulated from the pre-update forward passes of each batch.
pub fn train<S: Element>(
    model: &mut Model<S>,
    train_ds: &SynthDataset<S>,
    eval_ds: Option<&SynthDataset<S>>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    if train_ds.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let threads = thread_count();
    let mut velocity = ModelGrads::zeros_like(model);
    let shuffler = Rng::new(cfg.seed);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = if cfg.lr_decay_every == 0 {
            cfg.lr
        } else {
            cfg.lr * 0.1f64.powi((epoch / cfg.lr_decay_every) as i32)
        };
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        shuffler.split(epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (l, c, mut grads) = batch_grads(model, train_ds, batch, threads)?;
            loss_sum += l;
            correct += c;
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(model, &grads, &mut velocity, lr, cfg.momentum, cfg.mode);
        }
        let (eval_loss, eval_acc) = match eval_ds {
            Some(ds) => evaluate(model, ds)?,
            None => (f64::NAN, f64::NAN),
        };
        logs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train_ds.len() as f64,
            train_acc: correct as f64 / train_ds.len() as f64,
            eval_loss,
            eval_acc,
        });
    }
    Ok(logs)
}
