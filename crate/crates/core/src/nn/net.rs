use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer_norm::{mean, normalize_in_place, LAYER_NORM_EPS};
use super::matrix::{axpy, dot, Matrix};
use crate::error::{check_dim, Error, Result};

/// How hidden layers are wired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Each layer sees only the previous layer's output.
    Plain,
    /// Hidden layers after the first also see the raw network input
    /// (`[previous hidden | x]`).
    D2rl,
}

/// Architecture description; enough to rebuild a network's shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub arch: Arch,
    /// Layer normalization on every hidden layer, between the affine map and the ReLU.
    pub layer_norm: bool,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            arch: Arch::Plain,
            layer_norm: false,
        }
    }

    pub fn d2rl(mut self) -> Self {
        self.arch = Arch::D2rl;
        self
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::contract("network input and output dims must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::contract("hidden widths must be positive"));
        }
        Ok(())
    }

    /// Input width of each layer, hidden layers first, output layer last.
    pub fn layer_input_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        for k in 0..self.hidden.len() {
            dims.push(match (k, self.arch) {
                (0, _) => self.input_dim,
                (_, Arch::Plain) => self.hidden[k - 1],
                (_, Arch::D2rl) => self.hidden[k - 1] + self.input_dim,
            });
        }
        dims.push(self.hidden.last().copied().unwrap_or(self.input_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        let ins = self.layer_input_dims();
        let mut outs = self.hidden.clone();
        outs.push(self.output_dim);
        let mut n = 0;
        for (k, (i, o)) in ins.iter().zip(&outs).enumerate() {
            n += i * o + o;
            if self.layer_norm && k < self.hidden.len() {
                n += 2 * o;
            }
        }
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Offset of the `in_dim × out_dim` weight block (row k holds the weights leaving input k).
    w: usize,
    b: usize,
    /// Offset of the gain vector; the shift vector follows it.
    ln: Option<usize>,
    relu: bool,
    /// Input is `[previous output | raw input]`.
    skip: bool,
}

/// A named contiguous slice of a network's flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Feed-forward ReLU network with optional layer norm and D2RL skip wiring.
///
/// All parameters live in one flat vector, so gradients and optimizer state
/// are plain slices of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    spec: NetSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Per-parameter gradients plus the gradient with respect to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Matrix,
}

#[derive(Debug)]
struct Norm {
    normed: Matrix,
    inv_std: Vec<f64>,
}

#[derive(Debug)]
struct LayerCache {
    input: Matrix,
    norm: Option<Norm>,
    /// Value fed to the activation (after layer norm, if any).
    pre: Matrix,
}

/// Intermediates of one forward pass; consumed by exactly one backward pass.
#[derive(Debug)]
pub struct GradientTape {
    rows: usize,
    param_count: usize,
    caches: Vec<LayerCache>,
    spent: bool,
}

impl GradientTape {
    pub fn is_valid(&self) -> bool {
        !self.spent
    }

    pub fn batch_size(&self) -> usize {
        self.rows
    }
}

#[derive(Debug)]
struct DualCache {
    input: Matrix,
    input_dot: Matrix,
    norm: Option<DualNorm>,
    pre: Matrix,
}

#[derive(Debug)]
struct DualNorm {
    normed: Matrix,
    normed_dot: Matrix,
    centered_dot: Matrix,
    inv_std: Vec<f64>,
}

/// Tape for a forward pass that also pushes an input-space tangent through the net.
#[derive(Debug)]
pub struct DualTape {
    rows: usize,
    param_count: usize,
    caches: Vec<DualCache>,
    spent: bool,
}

impl DenseNet {
    /// Builds a network with Kaiming-uniform hidden layers and an output layer
    /// drawn from `U(±1/sqrt(fan_in))` and multiplied by `output_scale`.
    /// Biases start at zero, layer-norm gains at one.
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, output_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let n_layers = net.layers.len();
        for (k, layer) in net.layers.clone().into_iter().enumerate() {
            let fan_in = layer.in_dim as f64;
            let bound = if k + 1 < n_layers {
                libm::sqrt(6.0 / fan_in)
            } else {
                output_scale / libm::sqrt(fan_in)
            };
            for w in &mut net.params[layer.w..layer.w + layer.in_dim * layer.out_dim] {
                *w = if bound > 0.0 {
                    rng.random_range(-bound..bound)
                } else {
                    0.0
                };
            }
        }
        Ok(net)
    }

    /// All weights and biases zero, layer-norm gains one.
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let ins = spec.layer_input_dims();
        let n_hidden = spec.hidden.len();
        let mut layers = Vec::with_capacity(n_hidden + 1);
        let mut offset = 0;
        for (k, &in_dim) in ins.iter().enumerate() {
            let out_dim = if k < n_hidden { spec.hidden[k] } else { spec.output_dim };
            let w = offset;
            let b = w + in_dim * out_dim;
            offset = b + out_dim;
            let ln = if spec.layer_norm && k < n_hidden {
                let g = offset;
                offset += 2 * out_dim;
                Some(g)
            } else {
                None
            };
            layers.push(Layer {
                in_dim,
                out_dim,
                w,
                b,
                ln,
                relu: k < n_hidden,
                skip: spec.arch == Arch::D2rl && k > 0 && k < n_hidden,
            });
        }
        debug_assert_eq!(offset, spec.param_count());
        let mut params = vec![0.0; offset];
        for l in &layers {
            if let Some(g) = l.ln {
                params[g..g + l.out_dim].fill(1.0);
            }
        }
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    /// Rebuilds a network from a spec and a flat parameter vector.
    pub fn from_params(spec: NetSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        check_dim("DenseNet::from_params", net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Named parameter blocks in declaration order. Weight blocks have shape
    /// `[in, out]`.
    pub fn blocks(&self) -> Vec<ParamBlock> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push(ParamBlock {
                name: format!("layer{k}.weight"),
                shape: vec![l.in_dim, l.out_dim],
                offset: l.w,
                len: l.in_dim * l.out_dim,
            });
            out.push(ParamBlock {
                name: format!("layer{k}.bias"),
                shape: vec![l.out_dim],
                offset: l.b,
                len: l.out_dim,
            });
            if let Some(g) = l.ln {
                out.push(ParamBlock {
                    name: format!("layer{k}.ln_gain"),
                    shape: vec![l.out_dim],
                    offset: g,
                    len: l.out_dim,
                });
                out.push(ParamBlock {
                    name: format!("layer{k}.ln_shift"),
                    shape: vec![l.out_dim],
                    offset: g + l.out_dim,
                    len: l.out_dim,
                });
            }
        }
        out
    }

    /// Name of the block holding flat parameter `index`, with the element offset.
    pub fn param_name(&self, index: usize) -> String {
        self.blocks()
            .into_iter()
            .find(|b| index >= b.offset && index < b.offset + b.len)
            .map(|b| format!("{}[{}]", b.name, index - b.offset))
            .unwrap_or_else(|| format!("param[{index}]"))
    }

    /// Number of layers including the output layer.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Weight block of layer `k` as an `[in × out]` row-major slice.
    pub fn weight_mut(&mut self, k: usize) -> &mut [f64] {
        let l = self.layers[k];
        &mut self.params[l.w..l.w + l.in_dim * l.out_dim]
    }

    pub fn bias_mut(&mut self, k: usize) -> &mut [f64] {
        let l = self.layers[k];
        &mut self.params[l.b..l.b + l.out_dim]
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        check_dim("DenseNet input", self.spec.input_dim, x.cols())?;
        if !x.is_finite() {
            return Err(Error::contract("network input must be finite"));
        }
        Ok(())
    }

    fn affine(&self, l: &Layer, h: &Matrix) -> Matrix {
        let w = &self.params[l.w..l.w + l.in_dim * l.out_dim];
        gemm_rows(h, w, l.out_dim, Some(&self.params[l.b..l.b + l.out_dim]))
    }

    /// `h · W` without bias; used for tangents.
    fn linear(&self, l: &Layer, h: &Matrix) -> Matrix {
        let w = &self.params[l.w..l.w + l.in_dim * l.out_dim];
        gemm_rows(h, w, l.out_dim, None)
    }

    /// `dz · Wᵀ`
    fn linear_transpose(&self, l: &Layer, dz: &Matrix) -> Matrix {
        let w = &self.params[l.w..l.w + l.in_dim * l.out_dim];
        let mut wt = vec![0.0; w.len()];
        for k in 0..l.in_dim {
            for j in 0..l.out_dim {
                wt[j * l.in_dim + k] = w[k * l.out_dim + j];
            }
        }
        gemm_rows(dz, &wt, l.in_dim, None)
    }

    /// Accumulates `hᵀ dz` into the weight gradient.
    fn accumulate_weight_grad(l: &Layer, h: &Matrix, dz: &Matrix, grad: &mut [f64]) {
        let gw = &mut grad[l.w..l.w + l.in_dim * l.out_dim];
        let out = l.out_dim;
        let rows = h.rows();
        let mut r = 0;
        while r + 4 <= rows {
            let (d0, d1, d2, d3) = (dz.row(r), dz.row(r + 1), dz.row(r + 2), dz.row(r + 3));
            let (h0, h1, h2, h3) = (h.row(r), h.row(r + 1), h.row(r + 2), h.row(r + 3));
            for k in 0..l.in_dim {
                let (a0, a1, a2, a3) = (h0[k], h1[k], h2[k], h3[k]);
                let gk = &mut gw[k * out..(k + 1) * out];
                for ((((g, x0), x1), x2), x3) in gk.iter_mut().zip(d0).zip(d1).zip(d2).zip(d3) {
                    *g += (a0 * x0 + a1 * x1) + (a2 * x2 + a3 * x3);
                }
            }
            r += 4;
        }
        for r in r..rows {
            let dzr = dz.row(r);
            for (k, &hk) in h.row(r).iter().enumerate() {
                axpy(hk, dzr, &mut gw[k * out..(k + 1) * out]);
            }
        }
    }

    fn layer_norm_rows(&self, l: &Layer, z: &Matrix, g: usize) -> (Matrix, Norm) {
        let gain = &self.params[g..g + l.out_dim];
        let shift = &self.params[g + l.out_dim..g + 2 * l.out_dim];
        let mut normed = z.clone();
        let mut inv_std = Vec::with_capacity(z.rows());
        let mut out = Matrix::zeros(z.rows(), l.out_dim);
        for r in 0..z.rows() {
            inv_std.push(normalize_in_place(normed.row_mut(r), LAYER_NORM_EPS));
            for (((o, n), ga), sh) in out.row_mut(r).iter_mut().zip(normed.row(r)).zip(gain).zip(shift) {
                *o = ga * n + sh;
            }
        }
        (out, Norm { normed, inv_std })
    }

    fn layer_input(l: &Layer, prev: Matrix, x: &Matrix) -> Matrix {
        if l.skip {
            Matrix::hcat(&prev, x).expect("row counts agree")
        } else {
            prev
        }
    }

    /// Forward pass over a batch (one row per example), recording a tape.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, GradientTape)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let input = Self::layer_input(l, h, x);
            let z = self.affine(l, &input);
            let (pre, norm) = match l.ln {
                Some(g) => {
                    let (y, n) = self.layer_norm_rows(l, &z, g);
                    (y, Some(n))
                }
                None => (z, None),
            };
            let mut act = pre.clone();
            if l.relu {
                relu_in_place(&mut act);
            }
            caches.push(LayerCache { input, norm, pre });
            h = act;
        }
        let tape = GradientTape {
            rows: x.rows(),
            param_count: self.params.len(),
            caches,
            spent: false,
        };
        Ok((h, tape))
    }

    /// Forward pass for a single input vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<(Vec<f64>, GradientTape)> {
        let (y, tape) = self.forward(&Matrix::row_vector(x))?;
        Ok((y.into_vec(), tape))
    }

    /// Forward pass without recording intermediates.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            let input = Self::layer_input(l, h, x);
            let mut z = self.affine(l, &input);
            if let Some(g) = l.ln {
                z = self.layer_norm_rows(l, &z, g).0;
            }
            if l.relu {
                relu_in_place(&mut z);
            }
            h = z;
        }
        Ok(h)
    }

    /// Smallest `|pre-activation|` at any ReLU over the batch: how far the
    /// inputs sit from a kink. `INFINITY` for networks without hidden layers.
    pub fn relu_margin(&self, x: &Matrix) -> Result<f64> {
        self.check_input(x)?;
        let mut margin = f64::INFINITY;
        let mut h = x.clone();
        for l in &self.layers {
            let input = Self::layer_input(l, h, x);
            let mut z = self.affine(l, &input);
            if let Some(g) = l.ln {
                z = self.layer_norm_rows(l, &z, g).0;
            }
            if l.relu {
                margin = z.as_slice().iter().fold(margin, |m, v| m.min(v.abs()));
                relu_in_place(&mut z);
            }
            h = z;
        }
        Ok(margin)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::row_vector(x))?.into_vec())
    }

    fn check_tape(&self, rows: usize, param_count: usize, spent: bool, dy: &Matrix) -> Result<()> {
        if spent {
            return Err(Error::InvalidTape("tape already consumed by a backward pass"));
        }
        if param_count != self.params.len() {
            return Err(Error::InvalidTape("tape was recorded on a different network"));
        }
        check_dim("backward dy rows", rows, dy.rows())?;
        check_dim("backward dy cols", self.spec.output_dim, dy.cols())
    }

    /// Reverse pass: parameter gradients and the input gradient for upstream
    /// gradient `dy = ∂L/∂y`. Invalidates the tape.
    pub fn backward(&self, tape: &mut GradientTape, dy: &Matrix) -> Result<Gradients> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(tape, dy, Some(&mut params))?;
        Ok(Gradients { params, input })
    }

    /// Like [`backward`](Self::backward) but accumulates parameter gradients into
    /// `param_grad` (or skips them when `None`) and returns only `∂L/∂x`.
    pub fn backward_into(
        &self,
        tape: &mut GradientTape,
        dy: &Matrix,
        mut param_grad: Option<&mut [f64]>,
    ) -> Result<Matrix> {
        self.check_tape(tape.rows, tape.param_count, tape.spent, dy)?;
        if let Some(g) = param_grad.as_deref() {
            check_dim("backward param_grad", self.params.len(), g.len())?;
        }
        tape.spent = true;
        let caches = core::mem::take(&mut tape.caches);

        let rows = dy.rows();
        let mut dx = Matrix::zeros(rows, self.spec.input_dim);
        let mut upstream = dy.clone();
        for (k, (l, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let mut dpre = upstream;
            if l.relu {
                mask_in_place(&mut dpre, &cache.pre);
            }
            let dz = match (l.ln, cache.norm) {
                (Some(g), Some(norm)) => self.layer_norm_backward(l, g, &norm, &dpre, param_grad.as_deref_mut()),
                _ => dpre,
            };
            if let Some(grad) = param_grad.as_deref_mut() {
                Self::accumulate_weight_grad(l, &cache.input, &dz, grad);
                let gb = &mut grad[l.b..l.b + l.out_dim];
                for r in 0..rows {
                    axpy(1.0, dz.row(r), gb);
                }
            }
            let dh = self.linear_transpose(l, &dz);
            if k == 0 {
                add_into(&mut dx, &dh, 0);
                upstream = Matrix::zeros(0, 0);
            } else if l.skip {
                let prev_w = l.in_dim - self.spec.input_dim;
                add_into(&mut dx, &dh, prev_w);
                upstream = dh.columns(0, prev_w);
            } else {
                upstream = dh;
            }
        }
        Ok(dx)
    }

    fn layer_norm_backward(
        &self,
        l: &Layer,
        g: usize,
        norm: &Norm,
        dy: &Matrix,
        param_grad: Option<&mut [f64]>,
    ) -> Matrix {
        let n = l.out_dim;
        let gain = &self.params[g..g + n];
        if let Some(grad) = param_grad {
            for r in 0..dy.rows() {
                let (dyr, nr) = (dy.row(r), norm.normed.row(r));
                for j in 0..n {
                    grad[g + j] += dyr[j] * nr[j];
                    grad[g + n + j] += dyr[j];
                }
            }
        }
        let mut dz = Matrix::zeros(dy.rows(), n);
        let mut dn = vec![0.0; n];
        for r in 0..dy.rows() {
            let (dyr, nr) = (dy.row(r), norm.normed.row(r));
            for j in 0..n {
                dn[j] = dyr[j] * gain[j];
            }
            let mean_dn = mean(&dn);
            let mean_dn_n = dot(&dn, nr) / n as f64;
            let inv = norm.inv_std[r];
            for (j, out) in dz.row_mut(r).iter_mut().enumerate() {
                *out = inv * (dn[j] - mean_dn - nr[j] * mean_dn_n);
            }
        }
        dz
    }

    /// Forward pass carrying a tangent `v` (one input-space direction per row).
    ///
    /// Returns the output `y`, the directional derivative `ẏ = J(x)·v`, and a
    /// tape for [`backward_dual`](Self::backward_dual).
    pub fn forward_dual(&self, x: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix, DualTape)> {
        self.check_input(x)?;
        check_dim("forward_dual tangent rows", x.rows(), v.rows())?;
        check_dim("forward_dual tangent cols", x.cols(), v.cols())?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut h, mut h_dot) = (x.clone(), v.clone());
        for l in &self.layers {
            let input = Self::layer_input(l, h, x);
            let input_dot = Self::layer_input(l, h_dot, v);
            let z = self.affine(l, &input);
            let z_dot = self.linear(l, &input_dot);
            let (pre, mut pre_dot, norm) = match l.ln {
                Some(g) => {
                    let (y, norm) = self.layer_norm_rows(l, &z, g);
                    let gain = &self.params[g..g + l.out_dim];
                    let mut centered_dot = z_dot;
                    let mut normed_dot = Matrix::zeros(z.rows(), l.out_dim);
                    let mut y_dot = Matrix::zeros(z.rows(), l.out_dim);
                    for r in 0..z.rows() {
                        let cd = centered_dot.row_mut(r);
                        let m = mean(cd);
                        cd.iter_mut().for_each(|c| *c -= m);
                        let nr = norm.normed.row(r);
                        let s = dot(nr, cd) / l.out_dim as f64;
                        let inv = norm.inv_std[r];
                        let nd = normed_dot.row_mut(r);
                        for j in 0..l.out_dim {
                            nd[j] = inv * (cd[j] - nr[j] * s);
                        }
                        for (j, yd) in y_dot.row_mut(r).iter_mut().enumerate() {
                            *yd = gain[j] * nd[j];
                        }
                    }
                    let dn = DualNorm {
                        normed: norm.normed,
                        normed_dot,
                        centered_dot,
                        inv_std: norm.inv_std,
                    };
                    (y, y_dot, Some(dn))
                }
                None => (z, z_dot, None),
            };
            let mut act = pre.clone();
            if l.relu {
                mask_in_place(&mut pre_dot, &pre);
                relu_in_place(&mut act);
            }
            caches.push(DualCache {
                input,
                input_dot,
                norm,
                pre,
            });
            h = act;
            h_dot = pre_dot;
        }
        let tape = DualTape {
            rows: x.rows(),
            param_count: self.params.len(),
            caches,
            spent: false,
        };
        Ok((h, h_dot, tape))
    }

    /// Reverse pass through [`forward_dual`](Self::forward_dual): accumulates into
    /// `grad` the parameter gradient of `L(y, ẏ)` given `dy = ∂L/∂y` and
    /// `dy_dot = ∂L/∂ẏ`, with the tangent seed held fixed.
    pub fn backward_dual(
        &self,
        tape: &mut DualTape,
        dy: &Matrix,
        dy_dot: &Matrix,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_tape(tape.rows, tape.param_count, tape.spent, dy)?;
        check_dim("backward_dual dy_dot rows", dy.rows(), dy_dot.rows())?;
        check_dim("backward_dual dy_dot cols", dy.cols(), dy_dot.cols())?;
        check_dim("backward_dual grad", self.params.len(), grad.len())?;
        tape.spent = true;
        let caches = core::mem::take(&mut tape.caches);

        let rows = dy.rows();
        let mut up = dy.clone();
        let mut up_dot = dy_dot.clone();
        for (k, (l, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            if l.relu {
                mask_in_place(&mut up, &cache.pre);
                mask_in_place(&mut up_dot, &cache.pre);
            }
            let (dz, dz_dot) = match (l.ln, &cache.norm) {
                (Some(g), Some(norm)) => self.layer_norm_dual_backward(l, g, norm, &up, &up_dot, grad),
                _ => (up, up_dot),
            };
            Self::accumulate_weight_grad(l, &cache.input, &dz, grad);
            Self::accumulate_weight_grad(l, &cache.input_dot, &dz_dot, grad);
            let gb = &mut grad[l.b..l.b + l.out_dim];
            for r in 0..rows {
                axpy(1.0, dz.row(r), gb);
            }
            if k == 0 {
                break;
            }
            let dh = self.linear_transpose(l, &dz);
            let dh_dot = self.linear_transpose(l, &dz_dot);
            if l.skip {
                let prev_w = l.in_dim - self.spec.input_dim;
                up = dh.columns(0, prev_w);
                up_dot = dh_dot.columns(0, prev_w);
            } else {
                up = dh;
                up_dot = dh_dot;
            }
        }
        Ok(())
    }

    /// Adjoint of the layer-norm map `(z, ż) ↦ (y, ẏ)`.
    ///
    /// With `c = z − mean z`, `σ = sqrt(mean c² + eps)`, `n = c/σ`,
    /// `ċ = ż − mean ż`, `s = mean(n ⊙ ċ)` and `ṅ = (ċ − n s)/σ`.
    fn layer_norm_dual_backward(
        &self,
        l: &Layer,
        g: usize,
        norm: &DualNorm,
        dy: &Matrix,
        dy_dot: &Matrix,
        grad: &mut [f64],
    ) -> (Matrix, Matrix) {
        let n = l.out_dim;
        let nf = n as f64;
        let gain = &self.params[g..g + n];
        let rows = dy.rows();
        let mut dz = Matrix::zeros(rows, n);
        let mut dz_dot = Matrix::zeros(rows, n);
        let mut d_normed = vec![0.0; n];
        let mut d_centered_dot = vec![0.0; n];
        let mut dc = vec![0.0; n];
        for r in 0..rows {
            let (dyr, dydr) = (dy.row(r), dy_dot.row(r));
            let (nr, ndr, cdr) = (norm.normed.row(r), norm.normed_dot.row(r), norm.centered_dot.row(r));
            let inv = norm.inv_std[r];
            for j in 0..n {
                grad[g + j] += dyr[j] * nr[j] + dydr[j] * ndr[j];
                grad[g + n + j] += dyr[j];
            }
            let s = dot(nr, cdr) / nf;
            let mut q_dot_n = 0.0;
            let mut q_dot_nd = 0.0;
            for j in 0..n {
                let q = gain[j] * dydr[j];
                d_normed[j] = gain[j] * dyr[j] - inv * s * q;
                d_centered_dot[j] = inv * q;
                q_dot_n += q * nr[j];
                q_dot_nd += q * ndr[j];
            }
            let d_s = -inv * q_dot_n;
            let mut d_sigma = -inv * q_dot_nd;
            for j in 0..n {
                d_normed[j] += d_s * cdr[j] / nf;
                d_centered_dot[j] += d_s * nr[j] / nf;
            }
            let m = mean(&d_centered_dot);
            for (o, v) in dz_dot.row_mut(r).iter_mut().zip(&d_centered_dot) {
                *o = v - m;
            }
            d_sigma -= inv * dot(&d_normed, nr);
            for j in 0..n {
                dc[j] = inv * d_normed[j] + d_sigma * nr[j] / nf;
            }
            let m = mean(&dc);
            for (o, v) in dz.row_mut(r).iter_mut().zip(&dc) {
                *o = v - m;
            }
        }
        (dz, dz_dot)
    }
}

impl DualTape {
    pub fn is_valid(&self) -> bool {
        !self.spent
    }
}

/// `h · W (+ b)` for row-major `W` of shape `h.cols() × out`. Rows are
/// processed four at a time to reuse each weight row, but every output
/// element sees the same operation sequence whatever its batch position, so
/// a row's result never depends on the other rows.
fn gemm_rows(h: &Matrix, w: &[f64], out: usize, bias: Option<&[f64]>) -> Matrix {
    let (rows, inner) = (h.rows(), h.cols());
    debug_assert_eq!(w.len(), inner * out);
    let mut z = Matrix::zeros(rows, out);
    if let Some(b) = bias {
        for r in 0..rows {
            z.row_mut(r).copy_from_slice(b);
        }
    }
    let hs = h.as_slice();
    let zs = z.as_mut_slice();
    let mut r = 0;
    while r + 4 <= rows {
        let block = &mut zs[r * out..(r + 4) * out];
        let (z0, rest) = block.split_at_mut(out);
        let (z1, rest) = rest.split_at_mut(out);
        let (z2, z3) = rest.split_at_mut(out);
        for k in 0..inner {
            let wk = &w[k * out..(k + 1) * out];
            let a0 = hs[r * inner + k];
            let a1 = hs[(r + 1) * inner + k];
            let a2 = hs[(r + 2) * inner + k];
            let a3 = hs[(r + 3) * inner + k];
            for ((((y0, y1), y2), y3), wj) in z0.iter_mut().zip(z1.iter_mut()).zip(z2.iter_mut()).zip(z3.iter_mut()).zip(wk) {
                *y0 += a0 * wj;
                *y1 += a1 * wj;
                *y2 += a2 * wj;
                *y3 += a3 * wj;
            }
        }
        r += 4;
    }
    for r in r..rows {
        let zr = &mut zs[r * out..(r + 1) * out];
        for k in 0..inner {
            axpy(hs[r * inner + k], &w[k * out..(k + 1) * out], zr);
        }
    }
    z
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `m` wherever the ReLU input `pre` was not positive.
fn mask_in_place(m: &mut Matrix, pre: &Matrix) {
    for (v, p) in m.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if *p <= 0.0 {
            *v = 0.0;
        }
    }
}

/// `dst += src[:, start..]`
fn add_into(dst: &mut Matrix, src: &Matrix, start: usize) {
    for r in 0..src.rows() {
        axpy(1.0, &src.row(r)[start..], dst.row_mut(r));
    }
}
