//! Layered feed-forward networks.
//!
//! A network is an ordered stack of three layer kinds:
//!
//! - `Dense`: `A = X W^T + b` with `W` stored `out x in`;
//! - `Fixed`: an elementwise [`ActivationKind`];
//! - `Vaf`: an elementwise VAF, either one parameter set shared by the
//!   whole layer or one per neuron.
//!
//! Batches are matrices with one sample per row. [`Network::forward`]
//! returns a [`Tape`] which [`Network::backward`] consumes to produce exact
//! gradients for every parameter. For a shared VAF layer the gradient is
//! summed over neurons and samples.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::vaf::{self, VafGrad, VafParams};

const MODEL_FORMAT: &str = "vafnet-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Fixed(ActivationKind),
    Vaf { k: usize, g: ActivationKind, shared: bool },
}

/// How VAF layers are initialized by [`Network::build`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VafInit {
    #[default]
    Random,
    /// Start as an approximation of the given activation.
    Specific(ActivationKind),
}

impl fmt::Display for VafInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VafInit::Random => f.write_str("random"),
            VafInit::Specific(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for VafInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("random") {
            Ok(VafInit::Random)
        } else {
            s.parse().map(VafInit::Specific)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", bound(deserialize = "T: Scalar"))]
pub enum Layer<T> {
    Dense { weight: Matrix<T>, bias: Vec<T> },
    Fixed { activation: ActivationKind },
    Vaf { shared: bool, params: Vec<VafParams<T>> },
}

impl<T: Scalar> Layer<T> {
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense { weight, bias } => weight.rows() * weight.cols() + bias.len(),
            Layer::Fixed { .. } => 0,
            Layer::Vaf { params, .. } => params.iter().map(VafParams::param_count).sum(),
        }
    }

    /// The params a given neuron of a VAF layer uses.
    #[inline]
    fn vaf_for(params: &[VafParams<T>], shared: bool, neuron: usize) -> &VafParams<T> {
        if shared {
            &params[0]
        } else {
            &params[neuron]
        }
    }
}

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer<T>>,
    // Identifies the parameter state a tape was recorded against. Clones
    // share it because they share the parameters.
    stamp: u64,
}

/// Intermediate values recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    stamp: u64,
    inputs: Vec<Matrix<T>>,
    output_shape: (usize, usize),
}

impl<T: Scalar> Tape<T> {
    /// The matrix layer `i` received during the forward pass.
    pub fn layer_input(&self, i: usize) -> &Matrix<T> {
        &self.inputs[i]
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad<T> {
    Dense { weight: Matrix<T>, bias: Vec<T> },
    Fixed,
    Vaf(Vec<VafGrad<T>>),
}

/// Gradients laid out like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> GradientSet<T> {
    /// Same ordering as [`Network::flatten_params`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerGrad::Dense { weight, bias } => {
                    out.extend_from_slice(weight.as_slice());
                    out.extend_from_slice(bias);
                }
                LayerGrad::Fixed => {}
                LayerGrad::Vaf(grads) => grads.iter().for_each(|g| g.flatten_into(&mut out)),
            }
        }
        out
    }
}

impl<T: Scalar> Network<T> {
    /// Assembles a network from explicit layers, checking that they chain.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer<T>>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::input("input dimension must be positive"));
        }
        let mut dim = input_dim;
        let mut output_dim = None;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Dense { weight, bias } => {
                    if weight.cols() != dim {
                        return Err(Error::Layer {
                            layer: i,
                            msg: format!("dense layer expects {} inputs but receives {dim}", weight.cols()),
                        });
                    }
                    if bias.len() != weight.rows() {
                        return Err(Error::Layer {
                            layer: i,
                            msg: format!("bias has {} entries for {} outputs", bias.len(), weight.rows()),
                        });
                    }
                    dim = weight.rows();
                    output_dim = Some(dim);
                }
                Layer::Fixed { .. } => {}
                Layer::Vaf { shared, params } => {
                    let want = if *shared { 1 } else { dim };
                    if params.len() != want {
                        return Err(Error::Layer {
                            layer: i,
                            msg: format!("VAF layer of width {dim} holds {} parameter sets, expected {want}", params.len()),
                        });
                    }
                }
            }
        }
        let output_dim = output_dim.ok_or_else(|| Error::input("a network needs at least one dense layer"))?;
        Ok(Self {
            input_dim,
            output_dim,
            layers,
            stamp: fresh_stamp(),
        })
    }

    /// Instantiates `specs` with seeded initial weights.
    ///
    /// Dense weights are uniform on `[-r, r]`, `r = sqrt(6 / (in + out))`,
    /// with zero biases. VAF layers follow `init`.
    pub fn build(specs: &[LayerSpec], init: VafInit, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some(&LayerSpec::Dense { input, .. }) = specs.first() else {
            return Err(Error::input("the first layer must be dense"));
        };
        let mut dim = input;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense { input, output } => {
                    if input == 0 || output == 0 {
                        return Err(Error::Layer {
                            layer: i,
                            msg: "dense dimensions must be positive".into(),
                        });
                    }
                    if input != dim {
                        return Err(Error::Layer {
                            layer: i,
                            msg: format!("dense layer takes {input} inputs but the previous layer yields {dim}"),
                        });
                    }
                    dim = output;
                    let r = (6.0 / (input + output) as f64).sqrt();
                    let weight = Matrix::from_fn(output, input, |_, _| T::lit(rng.random_range(-r..=r)));
                    Layer::Dense {
                        weight,
                        bias: vec![T::zero(); output],
                    }
                }
                LayerSpec::Fixed(activation) => Layer::Fixed { activation },
                LayerSpec::Vaf { k, g, shared } => {
                    if k == 0 {
                        return Err(Error::Layer {
                            layer: i,
                            msg: "VAF needs k >= 1".into(),
                        });
                    }
                    let count = if shared { 1 } else { dim };
                    let params = (0..count)
                        .map(|_| match init {
                            VafInit::Random => VafParams::init_random(k, g, &mut rng),
                            VafInit::Specific(target) => VafParams::init_specific(k, g, target, &mut rng),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Layer::Vaf { shared, params }
                }
            };
            layers.push(layer);
        }
        Self::from_layers(input, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access to the layers for in-place edits of parameter values.
    /// Shapes must be left intact.
    pub fn with_layers_mut<R>(&mut self, f: impl FnOnce(&mut [Layer<T>]) -> R) -> R {
        self.stamp = fresh_stamp();
        f(&mut self.layers)
    }

    /// Layer descriptions, as accepted by [`Network::build`].
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { weight, .. } => LayerSpec::Dense {
                    input: weight.cols(),
                    output: weight.rows(),
                },
                Layer::Fixed { activation } => LayerSpec::Fixed(*activation),
                Layer::Vaf { shared, params } => LayerSpec::Vaf {
                    k: params[0].k(),
                    g: params[0].g(),
                    shared: *shared,
                },
            })
            .collect()
    }

    /// Width of the data entering each layer.
    fn widths(&self) -> Vec<usize> {
        let mut dim = self.input_dim;
        self.layers
            .iter()
            .map(|l| {
                let w = dim;
                if let Layer::Dense { weight, .. } = l {
                    dim = weight.rows();
                }
                w
            })
            .collect()
    }

    /// `(neurons, k)` for every VAF layer, in order.
    pub fn vaf_layers(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .zip(self.widths())
            .filter_map(|(l, w)| match l {
                Layer::Vaf { params, .. } => Some((w, params[0].k())),
                _ => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Batched forward pass. `x` is `batch x input_dim`.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Tape<T>)> {
        if x.cols() != self.input_dim {
            return Err(Error::Layer {
                layer: 0,
                msg: format!("input has {} columns, network expects {}", x.cols(), self.input_dim),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let next = Self::layer_forward(i, layer, &cur)?;
            inputs.push(cur);
            cur = next;
        }
        let tape = Tape {
            stamp: self.stamp,
            inputs,
            output_shape: cur.shape(),
        };
        Ok((cur, tape))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.input_dim {
            return Err(Error::Layer {
                layer: 0,
                msg: format!("input has {} columns, network expects {}", x.cols(), self.input_dim),
            });
        }
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = Self::layer_forward(i, layer, &cur)?;
        }
        Ok(cur)
    }

    fn layer_forward(index: usize, layer: &Layer<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
        match layer {
            Layer::Dense { weight, bias } => {
                if x.cols() != weight.cols() {
                    return Err(Error::Layer {
                        layer: index,
                        msg: format!("expected {} inputs, got {}", weight.cols(), x.cols()),
                    });
                }
                x.matmul_transposed(weight)?.add_row_broadcast(bias)
            }
            Layer::Fixed { activation } => Ok(x.map(|v| activation.apply(v))),
            Layer::Vaf { shared, params } => {
                if !*shared && params.len() != x.cols() {
                    return Err(Error::Layer {
                        layer: index,
                        msg: format!("VAF layer has {} neurons, input has {} columns", params.len(), x.cols()),
                    });
                }
                let mut out = x.clone();
                for i in 0..x.rows() {
                    for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                        *v = Layer::vaf_for(params, *shared, j).eval(*v);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Reverse pass. `dy` is `dL/dY` for the batch the tape was recorded on.
    pub fn backward(&self, tape: &Tape<T>, dy: &Matrix<T>) -> Result<GradientSet<T>> {
        if tape.stamp != self.stamp || tape.inputs.len() != self.layers.len() {
            return Err(Error::Tape("recorded against different parameters".into()));
        }
        if dy.shape() != tape.output_shape {
            return Err(Error::Tape(format!(
                "upstream gradient is {:?}, forward output was {:?}",
                dy.shape(),
                tape.output_shape
            )));
        }
        let mut grads: Vec<LayerGrad<T>> = Vec::with_capacity(self.layers.len());
        let mut upstream = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[i];
            let need_dx = i > 0;
            let (grad, dx) = match layer {
                Layer::Dense { weight, .. } => {
                    let dw = upstream.transposed_matmul(x)?;
                    let db = upstream.row_sum().into_vec();
                    let dx = if need_dx { Some(upstream.matmul(weight)?) } else { None };
                    (LayerGrad::Dense { weight: dw, bias: db }, dx)
                }
                Layer::Fixed { activation } => {
                    let dx = if need_dx {
                        Some(upstream.zip_map(x, "fixed_backward", |u, v| u * activation.derivative(v))?)
                    } else {
                        None
                    };
                    (LayerGrad::Fixed, dx)
                }
                Layer::Vaf { shared, params } => {
                    let mut pg: Vec<VafGrad<T>> = params.iter().map(|p| VafGrad::zeros(p.k())).collect();
                    let mut dx = upstream.clone();
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                            let slot = if *shared { 0 } else { j };
                            *d = params[slot].accumulate_backward(xr[j], *d, &mut pg[slot]);
                        }
                    }
                    (LayerGrad::Vaf(pg), need_dx.then_some(dx))
                }
            };
            grads.push(grad);
            if let Some(dx) = dx {
                upstream = dx;
            }
        }
        grads.reverse();
        Ok(GradientSet { layers: grads })
    }

    /// Half the sum of squared errors on a batch, and its gradient.
    pub fn loss_and_gradient(&self, x: &Matrix<T>, t: &Matrix<T>) -> Result<(T, GradientSet<T>)> {
        let (y, tape) = self.forward(x)?;
        let loss = loss_sse(&y, t)?;
        let dy = loss_sse_grad(&y, t)?;
        Ok((loss, self.backward(&tape, &dy)?))
    }

    /// All parameters: layers in order, dense `W` row-major then `b`, VAF
    /// `alpha, alpha0, beta, beta0` per parameter set.
    pub fn flatten_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    out.extend_from_slice(weight.as_slice());
                    out.extend_from_slice(bias);
                }
                Layer::Fixed { .. } => {}
                Layer::Vaf { params, .. } => params.iter().for_each(|p| p.flatten_into(&mut out)),
            }
        }
        out
    }

    /// Adds `delta` (flattening order) to the parameters.
    pub fn apply_update(&mut self, delta: &[T]) -> Result<()> {
        self.check_len(delta.len())?;
        self.stamp = fresh_stamp();
        let mut off = 0;
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    for w in weight.as_mut_slice() {
                        *w += delta[off];
                        off += 1;
                    }
                    for b in bias.iter_mut() {
                        *b += delta[off];
                        off += 1;
                    }
                }
                Layer::Fixed { .. } => {}
                Layer::Vaf { params, .. } => {
                    for p in params {
                        off += p.add_flat(&delta[off..]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Overwrites the parameters from a flat vector.
    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        self.check_len(values.len())?;
        self.stamp = fresh_stamp();
        let mut off = 0;
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    let n = weight.as_slice().len();
                    weight.as_mut_slice().copy_from_slice(&values[off..off + n]);
                    off += n;
                    let m = bias.len();
                    bias.copy_from_slice(&values[off..off + m]);
                    off += m;
                }
                Layer::Fixed { .. } => {}
                Layer::Vaf { params, .. } => {
                    for p in params {
                        off += p.set_flat(&values[off..]);
                    }
                }
            }
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let n = self.param_count();
        if len != n {
            return Err(Error::Shape {
                op: "parameter update",
                left: (n, 1),
                right: (len, 1),
            });
        }
        Ok(())
    }

    /// Pretty-printed model document.
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            layers: &self.layers,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc<T> = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::input(format!("not a model file (format `{}`)", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::input(format!("unsupported model version {}", doc.version)));
        }
        let net = Self::from_layers(doc.input_dim, doc.layers)?;
        if net.output_dim != doc.output_dim {
            return Err(Error::input(format!(
                "model declares output_dim {} but its layers yield {}",
                doc.output_dim, net.output_dim
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize)]
struct ModelRef<'a, T: Scalar> {
    format: &'static str,
    version: u32,
    input_dim: usize,
    output_dim: usize,
    layers: &'a [Layer<T>],
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct ModelDoc<T> {
    format: String,
    version: u32,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer<T>>,
}

/// `E = 1/2 * sum (y - t)^2`, no averaging.
pub fn loss_sse<T: Scalar>(y: &Matrix<T>, t: &Matrix<T>) -> Result<T> {
    if y.shape() != t.shape() {
        return Err(Error::Shape {
            op: "loss_sse",
            left: y.shape(),
            right: t.shape(),
        });
    }
    let s: T = y
        .as_slice()
        .iter()
        .zip(t.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(s * T::lit(0.5))
}

/// `dE/dY = Y - T`.
pub fn loss_sse_grad<T: Scalar>(y: &Matrix<T>, t: &Matrix<T>) -> Result<Matrix<T>> {
    y.zip_map(t, "loss_sse_grad", |a, b| a - b)
}

/// Fully connected architecture by hidden widths, optionally with VAF
/// activations.
///
/// Named `net_10`, `net_25_10` for plain networks and `vnet3_10`,
/// `vnet3_50_25` for networks whose hidden activations are VAFs with `k = 3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    /// `Some(k)` for VAF hidden activations.
    pub vaf_k: Option<usize>,
}

/// Hidden widths of the ten reference architectures, from simplest to
/// most complex.
pub const REFERENCE_WIDTHS: [&[usize]; 10] = [
    &[10],
    &[25],
    &[50],
    &[100],
    &[25, 10],
    &[50, 10],
    &[100, 10],
    &[50, 25],
    &[100, 25],
    &[100, 50],
];

impl Architecture {
    pub fn standard(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
            vaf_k: None,
        }
    }

    pub fn vaf(hidden: &[usize], k: usize) -> Self {
        Self {
            hidden: hidden.to_vec(),
            vaf_k: Some(k),
        }
    }

    /// The ten reference architectures, plain or with VAFs of `k` units.
    pub fn reference(vaf_k: Option<usize>) -> Vec<Self> {
        REFERENCE_WIDTHS
            .iter()
            .map(|h| Self {
                hidden: h.to_vec(),
                vaf_k,
            })
            .collect()
    }

    /// Hidden layers get `hidden_activation` (plain) or a VAF with hidden
    /// nonlinearity `g` (VAF); the output layer is linear.
    pub fn layer_specs(
        &self,
        input: usize,
        output: usize,
        hidden_activation: ActivationKind,
        g: ActivationKind,
        shared: bool,
    ) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut dim = input;
        for &w in &self.hidden {
            specs.push(LayerSpec::Dense { input: dim, output: w });
            specs.push(match self.vaf_k {
                Some(k) => LayerSpec::Vaf { k, g, shared },
                None => LayerSpec::Fixed(hidden_activation),
            });
            dim = w;
        }
        specs.push(LayerSpec::Dense { input: dim, output });
        specs.push(LayerSpec::Fixed(ActivationKind::Identity));
        specs
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.vaf_k {
            Some(k) => write!(f, "vnet{k}")?,
            None => f.write_str("net")?,
        }
        for w in &self.hidden {
            write!(f, "_{w}")?;
        }
        Ok(())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::input(format!("bad architecture name `{s}` (expected e.g. net_25_10 or vnet3_25_10)"));
        let mut parts = s.split('_');
        let head = parts.next().ok_or_else(bad)?;
        let vaf_k = if head == "net" {
            None
        } else if let Some(k) = head.strip_prefix("vnet") {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            Some(k)
        } else {
            return Err(bad());
        };
        let hidden = parts
            .map(|p| p.parse::<usize>().ok().filter(|&w| w > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(bad)?;
        if hidden.is_empty() {
            return Err(bad());
        }
        Ok(Self { hidden, vaf_k })
    }
}

/// Total VAF parameters of an architecture's hidden layers.
pub fn architecture_vaf_params(arch: &Architecture, shared: bool) -> usize {
    match arch.vaf_k {
        Some(k) => {
            let layers: Vec<(usize, usize)> = arch.hidden.iter().map(|&w| (w, k)).collect();
            vaf::parameter_count(shared, &layers)
        }
        None => 0,
    }
}
