//! Morse neural network: `M(s, a) = K(f(s, a), t)` with an RBF kernel
//! `K(z, t) = exp(-λ‖z − t‖²)`, a learned embedding `f` and a fixed target
//! embedding `t`.
//!
//! `M` is an unnormalized density over actions with value 1 on every mode of
//! the data, and `-log M = λ‖f − t‖²` is a squared distance to the nearest
//! mode. Training contrasts dataset pairs (pulled onto `t`) against uniformly
//! drawn actions (pushed away), with a one-sided penalty keeping the distance
//! field `‖f − t‖` close to `L`-Lipschitz in the input.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envtoy::OfflineDataset;
use crate::error::{check_dim, Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet, Matrix, NetSpec};

/// Distances below this are treated as "on the target" when normalizing.
const MIN_DISTANCE: f64 = 1e-12;

/// RBF Morse kernel with scale `λ > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseKernel {
    scale: f64,
}

impl MorseKernel {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::contract("kernel scale must be positive and finite"));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `exp(-λ‖z − t‖²)`, in `[0, 1]`.
    pub fn eval(&self, z: &[f64], t: &[f64]) -> Result<f64> {
        Ok(libm::exp(self.log_eval(z, t)?))
    }

    /// `-λ‖z − t‖²`, computed directly so it never underflows.
    pub fn log_eval(&self, z: &[f64], t: &[f64]) -> Result<f64> {
        check_dim("kernel operands", z.len(), t.len())?;
        Ok(-self.scale * squared_distance(z, t))
    }
}

fn squared_distance(z: &[f64], t: &[f64]) -> f64 {
    z.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Training and architecture settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorseConfig {
    /// Kernel scale λ.
    pub lambda: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Uniform actions drawn per batch state.
    pub negatives_per_state: usize,
    /// Weight of the gradient penalty relative to the contrastive loss.
    pub gp_weight: f64,
    /// Lipschitz target `L` of the penalty.
    pub lipschitz: f64,
    pub hidden: usize,
    pub depth: usize,
    /// Embedding width; `None` means twice the action dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    /// Negatives cover the observed action range widened by this fraction per side.
    pub action_margin: f64,
    pub d2rl: bool,
    pub layer_norm: bool,
    pub log_every: usize,
}

impl Default for MorseConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            batch_size: 512,
            steps: 100_000,
            lr: 3e-4,
            negatives_per_state: 1,
            gp_weight: 1.0,
            lipschitz: 1.0,
            hidden: 256,
            depth: 4,
            embed_dim: None,
            action_margin: 0.1,
            d2rl: true,
            layer_norm: true,
            log_every: 1000,
        }
    }
}

impl MorseConfig {
    /// Two hidden layers of 64 units, sized for the two-state bandit.
    pub fn didactic() -> Self {
        Self {
            batch_size: 128,
            steps: 3_000,
            hidden: 64,
            depth: 2,
            lr: 1e-3,
            ..Self::default()
        }
    }

    /// Small network and short schedule for the point-mass task.
    pub fn desk() -> Self {
        Self {
            batch_size: 128,
            steps: 5_000,
            hidden: 64,
            depth: 2,
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        MorseKernel::new(self.lambda)?;
        let positive = self.batch_size > 0
            && self.negatives_per_state > 0
            && self.lr > 0.0
            && self.gp_weight >= 0.0
            && self.lipschitz > 0.0
            && self.hidden > 0
            && self.action_margin >= 0.0
            && self.embed_dim != Some(0);
        if positive {
            Ok(())
        } else {
            Err(Error::contract("invalid Morse configuration"))
        }
    }
}

/// Components of one evaluation of the training objective.
#[derive(Clone, Debug, PartialEq)]
pub struct MorseLoss {
    pub total: f64,
    /// Mean `-log M` over dataset pairs.
    pub positive: f64,
    /// Mean `M` over uniform negatives.
    pub negative: f64,
    /// Unweighted gradient penalty.
    pub penalty: f64,
    pub grads: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorseLogEntry {
    pub step: usize,
    pub loss: f64,
    pub positive: f64,
    pub negative: f64,
    pub penalty: f64,
}

/// Embedding network plus kernel and target embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct MorseNetwork {
    embed: DenseNet,
    kernel: MorseKernel,
    target: Vec<f64>,
    state_dim: usize,
    action_dim: usize,
}

impl MorseNetwork {
    /// Freshly initialized network; the target embedding is the origin.
    pub fn new<R: Rng + ?Sized>(config: &MorseConfig, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embed_dim = config.embed_dim.unwrap_or(2 * action_dim);
        let mut spec = NetSpec::new(state_dim + action_dim, &vec![config.hidden; config.depth], embed_dim)
            .with_layer_norm(config.layer_norm);
        if config.d2rl {
            spec = spec.d2rl();
        }
        let embed = DenseNet::new(spec, 1e-2, rng)?;
        Self::from_parts(embed, MorseKernel::new(config.lambda)?, vec![0.0; embed_dim], state_dim, action_dim)
    }

    pub fn from_parts(
        embed: DenseNet,
        kernel: MorseKernel,
        target: Vec<f64>,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        check_dim("Morse embedding input", state_dim + action_dim, embed.input_dim())?;
        check_dim("Morse target embedding", embed.output_dim(), target.len())?;
        Ok(Self {
            embed,
            kernel,
            target,
            state_dim,
            action_dim,
        })
    }

    pub fn embedding_net(&self) -> &DenseNet {
        &self.embed
    }

    pub fn embedding_net_mut(&mut self) -> &mut DenseNet {
        &mut self.embed
    }

    pub fn kernel(&self) -> MorseKernel {
        self.kernel
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn embed_dim(&self) -> usize {
        self.target.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn join(&self, states: &Matrix, actions: &Matrix) -> Result<Matrix> {
        check_dim("Morse state", self.state_dim, states.cols())?;
        check_dim("Morse action", self.action_dim, actions.cols())?;
        Matrix::hcat(states, actions)
    }

    /// Embeddings `f(s, a)` for concatenated `[s | a]` rows.
    pub fn embed(&self, inputs: &Matrix) -> Result<Matrix> {
        self.embed.predict(inputs)
    }

    /// `-λ‖f(s, a) − t‖²` per row of `[s | a]`.
    pub fn log_certainty_inputs(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        let f = self.embed.predict(inputs)?;
        Ok(f.iter_rows()
            .map(|z| -self.kernel.scale * squared_distance(z, &self.target))
            .collect())
    }

    pub fn log_certainty_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        self.log_certainty_inputs(&self.join(states, actions)?)
    }

    pub fn certainty_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .log_certainty_batch(states, actions)?
            .into_iter()
            .map(libm::exp)
            .collect())
    }

    /// `M(s, a) ∈ [0, 1]`.
    pub fn certainty(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(libm::exp(self.log_certainty(s, a)?))
    }

    /// `log M(s, a) = -λ‖f(s, a) − t‖² ≤ 0`.
    pub fn log_certainty(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let v = self.log_certainty_batch(&Matrix::row_vector(s), &Matrix::row_vector(a))?;
        Ok(v[0])
    }

    /// `log M` per row and its gradient with respect to the action.
    pub fn log_certainty_action_grad(&self, states: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let x = self.join(states, actions)?;
        let (f, mut tape) = self.embed.forward(&x)?;
        let lam = self.kernel.scale;
        let mut dy = Matrix::zeros(f.rows(), f.cols());
        let mut values = Vec::with_capacity(f.rows());
        for r in 0..f.rows() {
            values.push(-lam * squared_distance(f.row(r), &self.target));
            for (j, d) in dy.row_mut(r).iter_mut().enumerate() {
                *d = -2.0 * lam * (f.get(r, j) - self.target[j]);
            }
        }
        let dx = self.embed.backward_into(&mut tape, &dy, None)?;
        Ok((values, dx.columns(self.state_dim, self.action_dim)))
    }

    /// Contrastive objective plus weighted gradient penalty, with the exact
    /// parameter gradient.
    ///
    /// `positives` and `negatives` are `[s | a]` rows; the penalty is summed
    /// over both sets.
    pub fn loss(&self, positives: &Matrix, negatives: &Matrix, gp_weight: f64, lipschitz: f64) -> Result<MorseLoss> {
        if positives.rows() == 0 || negatives.rows() == 0 {
            return Err(Error::contract("Morse loss needs at least one positive and one negative"));
        }
        check_dim("Morse positives", self.embed.input_dim(), positives.cols())?;
        check_dim("Morse negatives", self.embed.input_dim(), negatives.cols())?;
        let n_pos = positives.rows();
        let x = stack_rows(positives, negatives);
        let lam = self.kernel.scale;
        let (pos_w, neg_w) = (1.0 / n_pos as f64, 1.0 / negatives.rows() as f64);

        let mut grads = vec![0.0; self.embed.param_count()];
        let (f, mut tape) = self.embed.forward(&x)?;
        let penalty_field = if gp_weight > 0.0 {
            Some(self.penalty_field(&f, &mut tape, &x, lipschitz)?)
        } else {
            None
        };

        let (mut positive, mut negative) = (0.0, 0.0);
        let mut dy = Matrix::zeros(f.rows(), f.cols());
        for r in 0..f.rows() {
            let sq = squared_distance(f.row(r), &self.target);
            let coeff = if r < n_pos {
                positive += lam * sq * pos_w;
                2.0 * lam * pos_w
            } else {
                let k = libm::exp(-lam * sq);
                negative += k * neg_w;
                -2.0 * lam * k * neg_w
            };
            for (j, d) in dy.row_mut(r).iter_mut().enumerate() {
                *d = coeff * (f.get(r, j) - self.target[j]);
            }
        }

        let penalty = match penalty_field {
            None => {
                self.embed.backward_into(&mut tape, &dy, Some(&mut grads))?;
                0.0
            }
            Some(field) => {
                let mut tangent = field.tangent;
                for v in tangent.as_mut_slice() {
                    *v *= gp_weight;
                }
                let (_, f_dot, mut dual) = self.embed.forward_dual(&x, &tangent)?;
                let mut dy_dot = Matrix::zeros(f.rows(), f.cols());
                for r in 0..f.rows() {
                    let d = field.distance[r];
                    if d < MIN_DISTANCE {
                        continue;
                    }
                    let u: Vec<f64> = f.row(r).iter().zip(&self.target).map(|(a, b)| (a - b) / d).collect();
                    let fd = f_dot.row(r);
                    let u_fd: f64 = u.iter().zip(fd).map(|(a, b)| a * b).sum();
                    for (j, out) in dy.row_mut(r).iter_mut().enumerate() {
                        *out += (fd[j] - u[j] * u_fd) / d;
                    }
                    dy_dot.row_mut(r).copy_from_slice(&u);
                }
                self.embed.backward_dual(&mut dual, &dy, &dy_dot, &mut grads)?;
                field.value
            }
        };
        let total = positive + negative + gp_weight * penalty;
        Ok(MorseLoss {
            total,
            positive,
            negative,
            penalty,
            grads,
        })
    }

    /// `Σ max(0, ‖∇ₓ d(x)‖ − L)²` over rows of `inputs`, where
    /// `d(x) = ‖f(x) − t‖`.
    pub fn gradient_penalty(&self, inputs: &Matrix, lipschitz: f64) -> Result<f64> {
        let (f, mut tape) = self.embed.forward(inputs)?;
        Ok(self.penalty_field(&f, &mut tape, inputs, lipschitz)?.value)
    }

    /// Input gradient of the distance field per row, the penalty value, and
    /// the tangent `∂penalty/∂(∇ₓd)` that seeds the parameter gradient.
    fn penalty_field(&self, f: &Matrix, tape: &mut crate::nn::GradientTape, x: &Matrix, lipschitz: f64) -> Result<PenaltyField> {
        if !(lipschitz > 0.0) {
            return Err(Error::contract("Lipschitz constant must be positive"));
        }
        let mut distance = Vec::with_capacity(f.rows());
        let mut u = Matrix::zeros(f.rows(), f.cols());
        for r in 0..f.rows() {
            let d = libm::sqrt(squared_distance(f.row(r), &self.target));
            distance.push(d);
            if d >= MIN_DISTANCE {
                for (j, out) in u.row_mut(r).iter_mut().enumerate() {
                    *out = (f.get(r, j) - self.target[j]) / d;
                }
            }
        }
        let grad_x = self.embed.backward_into(tape, &u, None)?;
        let mut value = 0.0;
        let mut tangent = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let g = grad_x.row(r);
            let norm = libm::sqrt(g.iter().map(|v| v * v).sum());
            let excess = norm - lipschitz;
            if excess > 0.0 {
                value += excess * excess;
                for (t, gi) in tangent.row_mut(r).iter_mut().zip(g) {
                    *t = 2.0 * excess * gi / norm;
                }
            }
        }
        Ok(PenaltyField {
            value,
            distance,
            tangent,
        })
    }
}

struct PenaltyField {
    value: f64,
    distance: Vec<f64>,
    tangent: Matrix,
}

fn stack_rows(a: &Matrix, b: &Matrix) -> Matrix {
    let mut v = a.as_slice().to_vec();
    v.extend_from_slice(b.as_slice());
    Matrix::from_vec(a.rows() + b.rows(), a.cols(), v).expect("equal widths")
}

/// Draws `n` actions uniformly from the box `[low, high]`.
pub fn uniform_actions<R: Rng + ?Sized>(low: &[f64], high: &[f64], n: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(n, low.len());
    for r in 0..n {
        for (j, v) in m.row_mut(r).iter_mut().enumerate() {
            *v = low[j] + (high[j] - low[j]) * rng.random::<f64>();
        }
    }
    m
}

/// Trains a Morse network on `(s, a)` pairs of `dataset`: each step samples
/// a minibatch, pairs every state with uniform actions from the widened
/// action box, and takes one Adam step on the penalized objective.
pub fn train_morse<R: Rng + ?Sized>(
    config: &MorseConfig,
    dataset: &OfflineDataset,
    rng: &mut R,
    observer: &mut dyn FnMut(&MorseLogEntry),
) -> Result<MorseNetwork> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("cannot train a Morse network on an empty dataset"));
    }
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    let mut net = MorseNetwork::new(config, sd, ad, rng)?;
    let (low, high) = dataset.observed_action_box(config.action_margin).expect("non-empty");
    let mut adam = AdamState::for_net(&net.embed, AdamConfig::with_lr(config.lr));
    let k = config.negatives_per_state;
    for step in 1..=config.steps {
        let batch = dataset.sample_batch(config.batch_size, rng)?;
        let positives = Matrix::hcat(&batch.states, &batch.actions)?;
        let neg_actions = uniform_actions(&low, &high, batch.len() * k, rng);
        let mut neg_states = Matrix::zeros(batch.len() * k, sd);
        for r in 0..batch.len() * k {
            neg_states.row_mut(r).copy_from_slice(batch.states.row(r / k));
        }
        let negatives = Matrix::hcat(&neg_states, &neg_actions)?;
        let out = net.loss(&positives, &negatives, config.gp_weight, config.lipschitz)?;
        if !out.total.is_finite() {
            return Err(Error::Training {
                step,
                what: alloc::format!("non-finite Morse loss {}", out.total),
            });
        }
        adam.step_net(&mut net.embed, &out.grads).map_err(|e| e.at_step(step))?;
        if config.log_every > 0 && (step % config.log_every == 0 || step == config.steps) {
            observer(&MorseLogEntry {
                step,
                loss: out.total,
                positive: out.positive,
                negative: out.negative,
                penalty: out.penalty,
            });
        }
    }
    Ok(net)
}

/// Axis-aligned evaluation grid over a 2D action space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n1: usize,
    pub n2: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for GridSpec {
    /// 126 × 127 = 16,002 cells over `[-1.8, 1.8]²`.
    fn default() -> Self {
        Self {
            n1: 126,
            n2: 127,
            low: -1.8,
            high: 1.8,
        }
    }
}

impl GridSpec {
    pub fn square(n: usize) -> Self {
        Self {
            n1: n,
            n2: n,
            ..Self::default()
        }
    }

    fn coord(&self, i: usize, n: usize) -> f64 {
        if n == 1 {
            0.5 * (self.low + self.high)
        } else {
            self.low + (self.high - self.low) * i as f64 / (n - 1) as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCell {
    pub a1: f64,
    pub a2: f64,
    pub certainty: f64,
}

/// Certainty at every grid point for state `s`; `a1` is the outer (row) index.
pub fn density_grid(m: &MorseNetwork, s: &[f64], grid: &GridSpec) -> Result<Vec<GridCell>> {
    if m.action_dim != 2 {
        return Err(Error::Unsupported(alloc::format!(
            "density grid needs a 2D action space, got {} dims",
            m.action_dim
        )));
    }
    check_dim("density grid state", m.state_dim, s.len())?;
    if grid.n1 == 0 || grid.n2 == 0 || !(grid.low < grid.high) {
        return Err(Error::contract("density grid needs a non-empty range"));
    }
    let n = grid.n1 * grid.n2;
    let mut states = Matrix::zeros(n, m.state_dim);
    let mut actions = Matrix::zeros(n, 2);
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            let r = i * grid.n2 + j;
            states.row_mut(r).copy_from_slice(s);
            actions.set(r, 0, grid.coord(i, grid.n1));
            actions.set(r, 1, grid.coord(j, grid.n2));
        }
    }
    let c = m.certainty_batch(&states, &actions)?;
    Ok((0..n)
        .map(|r| GridCell {
            a1: actions.get(r, 0),
            a2: actions.get(r, 1),
            certainty: c[r],
        })
        .collect())
}

/// Observer that ignores training logs.
pub fn no_log() -> Box<dyn FnMut(&MorseLogEntry)> {
    Box::new(|_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envtoy::{didactic_state, make_didactic_dataset};
    use crate::nn::finite_difference_check;
    use crate::rng_from_seed;

    fn constant_embedding(input: usize, bias: &[f64], lambda: f64) -> MorseNetwork {
        let mut net = DenseNet::zeros(NetSpec::new(input, &[], bias.len())).unwrap();
        net.bias_mut(0).copy_from_slice(bias);
        MorseNetwork::from_parts(net, MorseKernel::new(lambda).unwrap(), vec![0.0; bias.len()], input - 1, 1).unwrap()
    }

    #[test]
    fn kernel_values() {
        let k = MorseKernel::new(1.0).unwrap();
        assert_eq!(k.eval(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 1.0);
        let r = libm::sqrt(core::f64::consts::LN_2);
        assert!((k.eval(&[r, 0.0], &[0.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        let sharp = MorseKernel::new(4.0).unwrap().eval(&[0.2], &[0.0]).unwrap();
        let soft = MorseKernel::new(0.1).unwrap().eval(&[0.2], &[0.0]).unwrap();
        assert!(sharp < soft);
        assert!(k.eval(&[1.0], &[1.0, 2.0]).unwrap_err().is_contract_violation());
        assert!(MorseKernel::new(0.0).is_err());
    }

    #[test]
    fn log_certainty_is_scaled_squared_distance() {
        let m = constant_embedding(3, &[1.0, 1.0, 1.0], 1.0);
        assert_eq!(m.log_certainty(&[0.2, 0.1], &[0.5]).unwrap(), -3.0);
        let m = constant_embedding(3, &[0.0, 0.0], 2.0);
        assert_eq!(m.log_certainty(&[0.2, 0.1], &[0.5]).unwrap(), 0.0);
        assert_eq!(m.certainty(&[0.2, 0.1], &[0.5]).unwrap(), 1.0);
    }

    #[test]
    fn zeroed_head_gives_unit_certainty() {
        let mut m = MorseNetwork::new(&MorseConfig::didactic(), 2, 2, &mut rng_from_seed(0)).unwrap();
        let out = m.embedding_net().depth() - 1;
        m.embedding_net_mut().weight_mut(out).fill(0.0);
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            let s = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let a = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            assert_eq!(m.certainty(&s, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn wrong_dims_rejected() {
        let m = MorseNetwork::new(&MorseConfig::didactic(), 2, 2, &mut rng_from_seed(0)).unwrap();
        assert!(m.certainty(&[1.0], &[0.0, 0.0]).unwrap_err().is_contract_violation());
        assert!(m.certainty(&[1.0, 0.0], &[0.0]).unwrap_err().is_contract_violation());
    }

    #[test]
    fn analytic_loss_value() {
        // Constant embedding at distance 1 from the target for every input.
        let m = constant_embedding(2, &[1.0, 0.0], 1.0);
        let pos = Matrix::from_rows(&[[0.3, 0.4]]).unwrap();
        let neg = Matrix::from_rows(&[[0.3, -0.9]]).unwrap();
        let out = m.loss(&pos, &neg, 0.0, 1.0).unwrap();
        assert!((out.total - (1.0 + libm::exp(-1.0))).abs() < 1e-15);
        let with_gp = m.loss(&pos, &neg, 1.0, 1.0).unwrap();
        assert_eq!(with_gp.penalty, 0.0);
        assert_eq!(with_gp.total, out.total);
    }

    #[test]
    fn loss_at_optimum_is_penalty_only() {
        // Embedding = (x₁ − 0)·c: positives at x₁ = 0 sit on the target,
        // negatives at x₁ = 40 are far away.
        let mut net = DenseNet::zeros(NetSpec::new(2, &[], 1)).unwrap();
        net.weight_mut(0).copy_from_slice(&[0.0, 2.0]);
        let m = MorseNetwork::from_parts(net, MorseKernel::new(1.0).unwrap(), vec![0.0], 1, 1).unwrap();
        let pos = Matrix::from_rows(&[[0.1, 0.0], [0.7, 0.0]]).unwrap();
        let neg = Matrix::from_rows(&[[0.1, 40.0], [0.7, -40.0]]).unwrap();
        let out = m.loss(&pos, &neg, 1.0, 1.0).unwrap();
        assert_eq!(out.positive, 0.0);
        assert!(out.negative < 1e-100);
        // Slope 2 everywhere off the target: (2 − 1)² per sample away from
        // f = t; the positives sit exactly on t and contribute nothing.
        assert!((out.penalty - 2.0).abs() < 1e-12);
        assert!((out.total - out.penalty).abs() < 1e-12);
    }

    #[test]
    fn penalty_examples() {
        let m = constant_embedding(3, &[0.4, -0.3], 1.0);
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(m.gradient_penalty(&x, 1.0).unwrap(), 0.0);

        let mut net = DenseNet::zeros(NetSpec::new(1, &[], 1)).unwrap();
        net.weight_mut(0)[0] = 3.0;
        net.bias_mut(0)[0] = 5.0;
        let m = MorseNetwork::from_parts(net, MorseKernel::new(1.0).unwrap(), vec![0.0], 0, 1).unwrap();
        let x = Matrix::from_rows(&[[0.25]]).unwrap();
        assert!((m.gradient_penalty(&x, 1.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = rng_from_seed(seed);
            let cfg = MorseConfig {
                hidden: 6,
                depth: 2,
                lambda: [0.5, 1.0, 2.0, 4.0][seed as usize % 4],
                ..MorseConfig::default()
            };
            let mut m = MorseNetwork::new(&cfg, 2, 2, &mut rng).unwrap();
            for p in m.embedding_net_mut().params_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
            let pos = uniform_actions(&[-1.0; 4], &[1.0; 4], 5, &mut rng);
            let neg = uniform_actions(&[-1.0; 4], &[1.0; 4], 5, &mut rng);
            // Low L so the hinge is active on most samples.
            let out = m.loss(&pos, &neg, 1.0, 0.05).unwrap();
            assert!(out.penalty > 0.0);
            let kernel = m.kernel();
            let target = m.target().to_vec();
            let report = finite_difference_check(
                m.embedding_net(),
                |net| {
                    MorseNetwork::from_parts(net.clone(), kernel, target.clone(), 2, 2)
                        .unwrap()
                        .loss(&pos, &neg, 1.0, 0.05)
                        .unwrap()
                        .total
                },
                &out.grads,
                1e-3,
            );
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn action_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(4);
        let cfg = MorseConfig {
            hidden: 8,
            depth: 2,
            ..MorseConfig::default()
        };
        let mut m = MorseNetwork::new(&cfg, 3, 2, &mut rng).unwrap();
        for p in m.embedding_net_mut().params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let s = uniform_actions(&[-1.0; 3], &[1.0; 3], 4, &mut rng);
        let a = uniform_actions(&[-1.0; 2], &[1.0; 2], 4, &mut rng);
        let (vals, grad) = m.log_certainty_action_grad(&s, &a).unwrap();
        assert_eq!(vals, m.log_certainty_batch(&s, &a).unwrap());
        let numeric = crate::nn::numeric_gradient(a.as_slice(), |xs| {
            let am = Matrix::from_vec(4, 2, xs.to_vec()).unwrap();
            m.log_certainty_batch(&s, &am).unwrap().iter().sum()
        });
        for (g, n) in grad.as_slice().iter().zip(&numeric) {
            assert!(crate::nn::relative_error(*g, *n) < 1e-3, "{g} vs {n}");
        }
    }

    #[test]
    fn certainty_range_and_ebm_consistency() {
        let mut rng = rng_from_seed(12);
        let cfg = MorseConfig {
            hidden: 16,
            depth: 2,
            lambda: 2.0,
            ..MorseConfig::default()
        };
        let mut m = MorseNetwork::new(&cfg, 2, 2, &mut rng).unwrap();
        for p in m.embedding_net_mut().params_mut() {
            *p *= 30.0;
        }
        let s = uniform_actions(&[-5.0; 2], &[5.0; 2], 100_000, &mut rng);
        let a = uniform_actions(&[-5.0; 2], &[5.0; 2], 100_000, &mut rng);
        let logs = m.log_certainty_batch(&s, &a).unwrap();
        let certs = m.certainty_batch(&s, &a).unwrap();
        for (l, c) in logs.iter().zip(&certs) {
            assert!(*l <= 0.0);
            assert!((0.0..=1.0).contains(c));
            if *c > 1e-12 {
                assert!((libm::exp(*l) - c).abs() < 1e-9);
            }
            assert!(-l / 2.0 >= 0.0);
        }
    }

    #[test]
    fn certainty_decreases_with_scale() {
        let mut rng = rng_from_seed(2);
        let base = MorseNetwork::new(&MorseConfig::didactic(), 2, 2, &mut rng).unwrap();
        let mut prev = f64::INFINITY;
        for lam in [0.1, 1.0, 2.0, 4.0] {
            let m = MorseNetwork::from_parts(
                base.embedding_net().clone(),
                MorseKernel::new(lam).unwrap(),
                base.target().to_vec(),
                2,
                2,
            )
            .unwrap();
            let c = m.certainty(&[1.0, 0.0], &[0.3, 0.3]).unwrap();
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn zero_steps_returns_initial_network() {
        let data = make_didactic_dataset(0);
        let cfg = MorseConfig {
            steps: 0,
            ..MorseConfig::didactic()
        };
        let trained = train_morse(&cfg, &data, &mut rng_from_seed(5), &mut |_| {}).unwrap();
        let fresh = MorseNetwork::new(&cfg, 2, 2, &mut rng_from_seed(5)).unwrap();
        assert_eq!(trained, fresh);
    }

    #[test]
    fn empty_dataset_rejected() {
        let data = OfflineDataset::new(2, 2, vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let err = train_morse(&MorseConfig::didactic(), &data, &mut rng_from_seed(0), &mut |_| {}).unwrap_err();
        assert!(err.is_contract_violation());
    }

    #[test]
    fn training_logs_and_is_deterministic() {
        let data = make_didactic_dataset(0);
        let cfg = MorseConfig {
            steps: 40,
            log_every: 10,
            batch_size: 16,
            hidden: 8,
            ..MorseConfig::didactic()
        };
        let mut steps = Vec::new();
        let a = train_morse(&cfg, &data, &mut rng_from_seed(3), &mut |e| steps.push(e.step)).unwrap();
        let b = train_morse(&cfg, &data, &mut rng_from_seed(3), &mut |_| {}).unwrap();
        assert_eq!(steps, vec![10, 20, 30, 40]);
        assert_eq!(a, b);
    }

    #[test]
    fn density_grid_shape() {
        let m = MorseNetwork::new(&MorseConfig::didactic(), 2, 2, &mut rng_from_seed(0)).unwrap();
        let cells = density_grid(&m, &didactic_state(0), &GridSpec::square(3)).unwrap();
        assert_eq!(cells.len(), 9);
        assert_eq!((cells[0].a1, cells[0].a2), (-1.8, -1.8));
        assert_eq!((cells[1].a1, cells[1].a2), (-1.8, 0.0));
        assert_eq!((cells[8].a1, cells[8].a2), (1.8, 1.8));
        assert!(cells.iter().all(|c| (0.0..=1.0).contains(&c.certainty)));
        assert_eq!(density_grid(&m, &didactic_state(0), &GridSpec::default()).unwrap().len(), 16_002);

        let m3 = MorseNetwork::new(&MorseConfig::didactic(), 2, 3, &mut rng_from_seed(0)).unwrap();
        assert!(matches!(
            density_grid(&m3, &[1.0, 0.0], &GridSpec::square(3)),
            Err(Error::Unsupported(_))
        ));
    }
}
