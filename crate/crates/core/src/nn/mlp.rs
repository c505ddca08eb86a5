//! Dense MLP with exact input Jacobians.
//!
//! A batch of `n` inputs is processed as a stacked matrix of `(1 + dim) * n`
//! rows: the first `n` rows carry values, block `j` carries the tangent seeded
//! on spatial coordinate `j`. Affine layers act on every row (bias on value
//! rows only); activations map value rows through `sigma` and scale tangent
//! rows by `sigma'` at the matching value pre-activation. The reverse pass runs
//! over this augmented graph, so losses may depend on Jacobian entries.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    /// Leaky rectifier with the given negative slope.
    Leaky(f64),
    /// Exponential-linear unit with unit alpha.
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    fn value<T: Real>(self, z: T) -> T {
        match self {
            Activation::Leaky(s) => {
                if z > T::zero() {
                    z
                } else {
                    T::from_f64(s) * z
                }
            }
            Activation::Elu => {
                if z > T::zero() {
                    z
                } else {
                    z.exp() - T::one()
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative; at exactly zero the negative branch is used.
    #[inline]
    fn first<T: Real>(self, z: T) -> T {
        match self {
            Activation::Leaky(s) => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::from_f64(s)
                }
            }
            Activation::Elu => {
                if z > T::zero() {
                    T::one()
                } else {
                    z.exp()
                }
            }
            Activation::Identity => T::one(),
        }
    }

    #[inline]
    fn second<T: Real>(self, z: T) -> T {
        match self {
            Activation::Elu if z <= T::zero() => z.exp(),
            _ => T::zero(),
        }
    }

    fn is_piecewise_linear(self) -> bool {
        !matches!(self, Activation::Elu)
    }
}

/// Shape of the conditioned basis network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Spatial dimension (2 or 3).
    pub dim: usize,
    /// Number of basis fields.
    pub b: usize,
    /// Number of conditioning circles.
    pub m: usize,
    /// Number of affine layers.
    pub n_layers: usize,
    pub width: usize,
    pub leaky_slope: f64,
}

impl MlpConfig {
    pub fn new(dim: usize, b: usize, m: usize, n_layers: usize, width: usize) -> Self {
        Self {
            dim,
            b,
            m,
            n_layers,
            width,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim + (self.dim + 1) * self.m
    }

    pub fn dim_out(&self) -> usize {
        self.dim * self.b
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.n_layers);
        let mut fan_in = self.dim_in();
        for l in 0..self.n_layers {
            let out = if l + 1 == self.n_layers {
                self.dim_out()
            } else {
                self.width
            };
            shapes.push((out, fan_in));
            fan_in = out;
        }
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidConfig(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.b == 0 || self.n_layers == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("b, layers and width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `out x in`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(out: usize, fan_in: usize) -> Self {
        Self {
            weight: Array2::zeros((out, fan_in)),
            bias: Array1::zeros(out),
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub config: MlpConfig,
    pub layers: Vec<Dense<T>>,
}

/// Network output with (optionally) the output-by-point Jacobian columns.
/// `value` is `n x dim_out`; `tangents[j]` holds `d value / d p_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardBundle<T> {
    pub dim: usize,
    pub value: Array2<T>,
    pub tangents: Vec<Array2<T>>,
}

impl<T: Real> ForwardBundle<T> {
    pub fn n(&self) -> usize {
        self.value.nrows()
    }

    pub fn b(&self) -> usize {
        self.value.ncols() / self.dim
    }

    pub fn has_tangents(&self) -> bool {
        self.tangents.len() == self.dim
    }

    pub fn to_f64(&self) -> ForwardBundle<f64> {
        ForwardBundle {
            dim: self.dim,
            value: self.value.mapv(|x| x.to_f64()),
            tangents: self.tangents.iter().map(|t| t.mapv(|x| x.to_f64())).collect(),
        }
    }

    pub fn from_f64(b: &ForwardBundle<f64>) -> Self {
        ForwardBundle {
            dim: b.dim,
            value: b.value.mapv(T::from_f64),
            tangents: b.tangents.iter().map(|t| t.mapv(T::from_f64)).collect(),
        }
    }
}

/// Per-layer record of a tangent-forward pass, consumed by `backward`.
pub struct Tape<T> {
    n: usize,
    /// Stacked layer inputs, `(1 + dim) n x fan_in`.
    inputs: Vec<Array2<T>>,
    /// Stacked pre-activations, `(1 + dim) n x out`.
    pre: Vec<Array2<T>>,
}

/// Parameter gradient with the same shapes as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }
}

impl<T: Real> Mlp<T> {
    /// Kaiming-normal weights with the leaky-rectifier gain, zero biases.
    pub fn init_kaiming(config: MlpConfig, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let s = config.leaky_slope;
        let gain = (2.0 / (1.0 + s * s)).sqrt();
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(out, fan_in)| {
                let std = gain / (fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Dense {
                    weight: Array2::from_shape_simple_fn((out, fan_in), || {
                        T::from_f64(normal.sample(&mut rng))
                    }),
                    bias: Array1::zeros(out),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(out, fan_in)| Dense::zeros(out, fan_in))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Elu
        } else {
            Activation::Leaky(self.config.leaky_slope)
        }
    }

    pub fn dim_in(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn dim_out(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.dim_in() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.dim_in()
            )));
        }
        Ok(())
    }

    /// Row-wise forward pass, `n x dim_in -> n x dim_out`.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let mut z = Array2::zeros((a.nrows(), layer.weight.nrows()));
            general_mat_mul(T::one(), &a, &layer.weight.t(), T::zero(), &mut z);
            z += &layer.bias;
            z.mapv_inplace(|v| act.value(v));
            a = z;
        }
        Ok(a)
    }

    /// Forward pass carrying `dim` tangents seeded on the leading input
    /// coordinates.
    pub fn forward_with_tangents(&self, x: ArrayView2<T>) -> Result<ForwardBundle<T>> {
        Ok(self.forward_tape(x)?.0)
    }

    pub fn forward_tape(&self, x: ArrayView2<T>) -> Result<(ForwardBundle<T>, Tape<T>)> {
        self.check_input(&x)?;
        let n = x.nrows();
        let dim = self.config.dim;
        let rows = (1 + dim) * n;
        let mut a = Array2::zeros((rows, x.ncols()));
        a.slice_mut(s![..n, ..]).assign(&x);
        for j in 0..dim {
            a.slice_mut(s![(1 + j) * n..(2 + j) * n, j]).fill(T::one());
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation(l);
            let mut z = Array2::zeros((rows, layer.weight.nrows()));
            general_mat_mul(T::one(), &a, &layer.weight.t(), T::zero(), &mut z);
            z.slice_mut(s![..n, ..]).zip_mut_with(&layer.bias.view().insert_axis(Axis(0)), |v, &b| *v += b);
            let mut next = Array2::zeros(z.raw_dim());
            {
                let (zv, zt) = z.view().split_at(Axis(0), n);
                let (mut nv, mut nt) = next.view_mut().split_at(Axis(0), n);
                Zip::from(&mut nv).and(&zv).for_each(|o, &v| *o = act.value(v));
                for j in 0..dim {
                    let zt_j = zt.slice(s![j * n..(j + 1) * n, ..]);
                    let nt_j = nt.slice_mut(s![j * n..(j + 1) * n, ..]);
                    Zip::from(nt_j)
                        .and(&zt_j)
                        .and(&zv)
                        .for_each(|o, &t, &v| *o = act.first(v) * t);
                }
            }
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        let value = a.slice(s![..n, ..]).to_owned();
        let tangents = (0..dim)
            .map(|j| a.slice(s![(1 + j) * n..(2 + j) * n, ..]).to_owned())
            .collect();
        Ok((ForwardBundle { dim, value, tangents }, Tape { n, inputs, pre }))
    }

    /// Reverse pass over the value and tangent channels. `upstream` holds
    /// `dL/dvalue` and `dL/dtangent_j`; the gradient is summed over the batch.
    pub fn backward(&self, tape: &Tape<T>, upstream: &ForwardBundle<T>) -> Result<Gradients<T>> {
        let n = tape.n;
        let dim = self.config.dim;
        if upstream.value.dim() != (n, self.dim_out()) || upstream.tangents.len() != dim {
            return Err(Error::ShapeMismatch("upstream gradient does not match the bundle".into()));
        }
        if upstream.tangents.iter().any(|t| t.dim() != (n, self.dim_out())) {
            return Err(Error::ShapeMismatch("upstream tangent gradient shape".into()));
        }
        let rows = (1 + dim) * n;
        let mut grad_a = Array2::zeros((rows, self.dim_out()));
        grad_a.slice_mut(s![..n, ..]).assign(&upstream.value);
        for j in 0..dim {
            grad_a
                .slice_mut(s![(1 + j) * n..(2 + j) * n, ..])
                .assign(&upstream.tangents[j]);
        }
        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            let act = self.activation(l);
            let z = &tape.pre[l];
            let mut grad_z = Array2::zeros(z.raw_dim());
            {
                let (zv, zt) = z.view().split_at(Axis(0), n);
                let (gv, gt) = grad_a.view().split_at(Axis(0), n);
                let (mut gzv, mut gzt) = grad_z.view_mut().split_at(Axis(0), n);
                Zip::from(&mut gzv)
                    .and(&gv)
                    .and(&zv)
                    .for_each(|o, &g, &v| *o = act.first(v) * g);
                for j in 0..dim {
                    let rows_j = s![j * n..(j + 1) * n, ..];
                    let gt_j = gt.slice(rows_j);
                    Zip::from(gzt.slice_mut(rows_j))
                        .and(&gt_j)
                        .and(&zv)
                        .for_each(|o, &g, &v| *o = act.first(v) * g);
                    if !act.is_piecewise_linear() {
                        let zt_j = zt.slice(rows_j);
                        Zip::from(&mut gzv)
                            .and(&gt_j)
                            .and(&zt_j)
                            .and(&zv)
                            .for_each(|o, &g, &t, &v| *o += act.second(v) * t * g);
                    }
                }
            }
            let input = &tape.inputs[l];
            let layer = &self.layers[l];
            let out = &mut grads.layers[l];
            general_mat_mul(T::one(), &grad_z.t(), input, T::zero(), &mut out.weight);
            out.bias = grad_z.slice(s![..n, ..]).sum_axis(Axis(0));
            if l > 0 {
                let mut prev = Array2::zeros((rows, layer.weight.ncols()));
                general_mat_mul(T::one(), &grad_z, &layer.weight, T::zero(), &mut prev);
                grad_a = prev;
            }
        }
        Ok(grads)
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|x| U::from_f64(x.to_f64())),
                    bias: l.bias.mapv(|x| U::from_f64(x.to_f64())),
                })
                .collect(),
        }
    }

    /// Visit every parameter together with the matching gradient entry.
    pub fn zip_params_mut(&mut self, grads: &Gradients<T>, mut f: impl FnMut(usize, &mut T, T)) {
        let mut idx = 0;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, &gp) in layer.weight.iter_mut().zip(g.weight.iter()) {
                f(idx, p, gp);
                idx += 1;
            }
            for (p, &gp) in layer.bias.iter_mut().zip(g.bias.iter()) {
                f(idx, p, gp);
                idx += 1;
            }
        }
    }

    /// Mutable access to the i-th parameter in flattening order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut T {
        for layer in &mut self.layers {
            let nw = layer.weight.len();
            if index < nw {
                let cols = layer.weight.ncols();
                return &mut layer.weight[[index / cols, index % cols]];
            }
            index -= nw;
            let nb = layer.bias.len();
            if index < nb {
                return &mut layer.bias[index];
            }
            index -= nb;
        }
        panic!("parameter index out of range");
    }
}

/// Build the network input `[p, rho]` for a batch of points sharing one
/// conditioning vector. `points` is flattened `n x dim`.
pub fn assemble_input<T: Real>(points: &[f64], dim: usize, encoding: &[f64]) -> Array2<T> {
    let n = points.len() / dim;
    let cols = dim + encoding.len();
    let mut x = Array2::zeros((n, cols));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        for a in 0..dim {
            row[a] = T::from_f64(points[i * dim + a]);
        }
        for (c, &e) in encoding.iter().enumerate() {
            row[dim + c] = T::from_f64(e);
        }
    }
    x
}
