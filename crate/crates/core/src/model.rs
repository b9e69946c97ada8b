//! Dense multi-layer network whose forward/backward passes keep the
//! per-sample layer inputs `I_l` and preactivation gradients `G_l` around.
//!
//! Samples are columns. Every layer input carries a trailing constant-one
//! row so the bias lives in the last row of the weight matrix; nothing in the
//! Fisher code needs to know about it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at preactivation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Output distribution of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// `y ~ N(o, I)`; loss is half the squared error.
    Gaussian,
    /// `y ~ Categorical(softmax(o))`; loss is cross-entropy.
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Matrix,
    activation: Activation,
}

impl DenseLayer {
    /// `weights` is `(d_in + 1) × d_out`; the last row holds the bias.
    pub fn new(weights: Matrix, activation: Activation) -> Result<Self> {
        if weights.rows() < 2 || weights.cols() < 1 {
            return Err(Error::shape(
                "DenseLayer::new",
                "(d_in+1) x d_out with d_in, d_out >= 1",
                format!("{}x{}", weights.rows(), weights.cols()),
            ));
        }
        if !weights.is_finite() {
            return Err(Error::Numeric("layer weights".into()));
        }
        Ok(DenseLayer { weights, activation })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows() - 1
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }
}

/// Stored quantities of one layer for one mini-batch.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `I_l`, `(d_in + 1) × m`, last row all ones.
    pub input: Matrix,
    /// `O_l = W_lᵀ I_l`, `d_out × m`.
    pub preact: Matrix,
    /// `G_l`, per-sample `∂l_i/∂O_l` without any `1/m` factor. Filled by backward.
    pub grad: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct BatchCache {
    layers: Vec<LayerCache>,
}

impl BatchCache {
    pub fn layers(&self) -> &[LayerCache] {
        &self.layers
    }

    pub fn batch_size(&self) -> usize {
        self.layers[0].input.cols()
    }

    pub fn input(&self, layer: usize) -> &Matrix {
        &self.layers[layer].input
    }

    pub fn preact(&self, layer: usize) -> &Matrix {
        &self.layers[layer].preact
    }

    /// `G_l`; errors if backward has not run on this cache.
    pub fn output_grad(&self, layer: usize) -> Result<&Matrix> {
        self.layers
            .get(layer)
            .and_then(|l| l.grad.as_ref())
            .ok_or_else(|| Error::State(format!("no backward gradients cached for layer {layer}")))
    }

    /// Builds a cache directly from `(I_l, G_l)` pairs, as used by the
    /// Fisher constructors in isolation. Preactivations are left empty.
    pub fn from_parts(parts: Vec<(Matrix, Matrix)>) -> Result<Self> {
        let m = parts.first().map(|(i, _)| i.cols()).unwrap_or(0);
        let mut layers = Vec::with_capacity(parts.len());
        for (input, grad) in parts {
            if input.cols() != m || grad.cols() != m {
                return Err(Error::shape(
                    "BatchCache::from_parts",
                    format!("{m} columns"),
                    format!("{} / {}", input.cols(), grad.cols()),
                ));
            }
            layers.push(LayerCache {
                preact: Matrix::zeros(grad.rows(), m),
                input,
                grad: Some(grad),
            });
        }
        Ok(BatchCache { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
    head: Head,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>, head: Head) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Config("network needs at least one layer".into()));
        };
        if last.activation != Activation::Identity {
            return Err(Error::Config("output layer must use the identity activation".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    "Network::new",
                    format!("layer {} input dim {}", l + 1, pair[0].output_dim()),
                    format!("{}", pair[1].input_dim()),
                ));
            }
        }
        if head == Head::Categorical && last.output_dim() < 2 {
            return Err(Error::Config("categorical head needs at least two outputs".into()));
        }
        Ok(Network { layers, head })
    }

    /// Random network with layer widths `sizes = [d_in, hidden.., d_out]`.
    /// Hidden layers use `activation`; the output layer is linear. Weights are
    /// drawn from `U(-r, r)` with `r = sqrt(6 / (d_in + d_out))`, biases too.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, head: Head, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, pair) in sizes.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            let r = (6.0 / (d_in + d_out) as f64).sqrt();
            let data = (0..(d_in + 1) * d_out).map(|_| rng.random_range(-r..r)).collect();
            let act = if l + 2 == sizes.len() {
                Activation::Identity
            } else {
                activation
            };
            layers.push(DenseLayer::new(Matrix::from_vec(d_in + 1, d_out, data)?, act)?);
        }
        Network::new(layers, head)
    }

    pub fn seeded(sizes: &[usize], activation: Activation, head: Head, seed: u64) -> Result<Self> {
        Self::init(sizes, activation, head, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Per-layer parameter counts `p_l`.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(DenseLayer::param_count).collect()
    }

    /// Forward pass over the columns of `x`; returns predictions (softmax
    /// probabilities or Gaussian means) and the batch cache.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, BatchCache)> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("{} input rows", self.input_dim()),
                format!("{}", x.rows()),
            ));
        }
        let m = x.cols();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = augment(x);
        for layer in &self.layers {
            let preact = matmul_tn(&layer.weights, &current)?;
            let act = preact.map(|v| layer.activation.apply(v));
            if !act.is_finite() {
                return Err(Error::Numeric("forward activations".into()));
            }
            let next = augment(&act);
            caches.push(LayerCache {
                input: current,
                preact,
                grad: None,
            });
            current = next;
        }
        let out = caches.last().map(|c| &c.preact).expect("at least one layer");
        let predictions = match self.head {
            Head::Gaussian => out.clone(),
            Head::Categorical => softmax_cols(out),
        };
        debug_assert_eq!(predictions.cols(), m);
        Ok((predictions, BatchCache { layers: caches }))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    /// Mean loss of the network on `(x, targets)`.
    pub fn loss(&self, x: &Matrix, targets: &Matrix) -> Result<f64> {
        loss_eval(&self.predict(x)?, targets, self.head)
    }

    /// Fills every `G_l` in `cache` and returns the batch-mean gradients
    /// `g_l = (1/m) I_l G_lᵀ`, one `(d_in + 1) × d_out` matrix per layer.
    pub fn backward(&self, cache: &mut BatchCache, targets: &Matrix) -> Result<Vec<Matrix>> {
        self.check_cache(cache)?;
        let out = &cache.layers[self.layers.len() - 1].preact;
        if targets.shape() != out.shape() {
            return Err(Error::shape(
                "backward",
                format!("targets {}x{}", out.rows(), out.cols()),
                format!("{}x{}", targets.rows(), targets.cols()),
            ));
        }
        let predictions = match self.head {
            Head::Gaussian => out.clone(),
            Head::Categorical => softmax_cols(out),
        };
        self.backprop(cache, predictions.sub(targets)?)
    }

    /// Backpropagates arbitrary per-sample output-preactivation gradients
    /// `G_L` through the network, filling every `G_l` in `cache`. Returns
    /// `(1/m) I_l G_lᵀ` per layer.
    pub fn backprop(&self, cache: &mut BatchCache, output_grad: Matrix) -> Result<Vec<Matrix>> {
        self.check_cache(cache)?;
        let last = self.layers.len() - 1;
        if output_grad.shape() != cache.layers[last].preact.shape() {
            return Err(Error::shape(
                "backprop",
                format!("{:?}", cache.layers[last].preact.shape()),
                format!("{:?}", output_grad.shape()),
            ));
        }
        let mut delta = output_grad;
        let m = delta.cols() as f64;
        let mut grads = vec![Matrix::zeros(0, 0); self.layers.len()];
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            grads[l] = matmul_nt(&cache.layers[l].input, &delta)?.scale(1.0 / m);
            if l > 0 {
                // ∂l/∂I_l, minus the bias row, times the previous activation slope
                let upstream = matmul(&layer.weights, &delta)?;
                let prev = &self.layers[l - 1];
                let prev_pre = &cache.layers[l - 1].preact;
                let d_out = prev.output_dim();
                let mut next = Matrix::zeros(d_out, prev_pre.cols());
                for i in 0..d_out {
                    for ((n, u), z) in next.row_mut(i).iter_mut().zip(upstream.row(i)).zip(prev_pre.row(i)) {
                        *n = u * prev.activation.derivative(*z);
                    }
                }
                cache.layers[l].grad = Some(std::mem::replace(&mut delta, next));
            } else {
                cache.layers[l].grad = Some(delta.clone());
            }
        }
        Ok(grads)
    }

    fn check_cache(&self, cache: &BatchCache) -> Result<()> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::State(format!(
                "cache has {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        for (l, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate() {
            if lc.input.rows() != layer.weights.rows() || lc.preact.rows() != layer.output_dim() {
                return Err(Error::State(format!("cache layer {l} does not match the network")));
            }
        }
        Ok(())
    }

    /// All weights in row-major vec order, layer after layer.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().copied())
            .collect()
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::shape(
                "set_params",
                format!("{} parameters", self.param_count()),
                format!("{}", theta.len()),
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.weights.len();
            layer.weights.as_mut_slice().copy_from_slice(&theta[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Copy of this network with parameters `theta`.
    pub fn with_params(&self, theta: &[f64]) -> Result<Network> {
        let mut net = self.clone();
        net.set_params(theta)?;
        Ok(net)
    }

    /// `W_l ← W_l − Δ_l` for every layer.
    pub fn apply_update(&mut self, deltas: &[Matrix]) -> Result<()> {
        if deltas.len() != self.layers.len() {
            return Err(Error::shape(
                "apply_update",
                format!("{} layer deltas", self.layers.len()),
                format!("{}", deltas.len()),
            ));
        }
        for (layer, delta) in self.layers.iter().zip(deltas) {
            if layer.weights.shape() != delta.shape() {
                return Err(Error::shape(
                    "apply_update",
                    format!("{:?}", layer.weights.shape()),
                    format!("{:?}", delta.shape()),
                ));
            }
        }
        for (layer, delta) in self.layers.iter_mut().zip(deltas) {
            layer.weights.axpy(-1.0, delta)?;
        }
        Ok(())
    }

    /// Draws labels from the model's own predictive distribution.
    pub fn sample_labels(&self, x: &Matrix, seed: u64) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_labels_with(x, &mut rng)
    }

    pub fn sample_labels_with<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<Matrix> {
        let predictions = self.predict(x)?;
        Ok(match self.head {
            Head::Gaussian => sample_from_predictions(&predictions, self.head, &mut || rng.sample(StandardNormal)),
            Head::Categorical => sample_from_predictions(&predictions, self.head, &mut || rng.random::<f64>()),
        })
    }
}

/// Samples labels given predictions. `draw` yields standard normals for the
/// Gaussian head and uniforms on `[0, 1)` for the categorical head.
pub fn sample_from_predictions(predictions: &Matrix, head: Head, draw: &mut dyn FnMut() -> f64) -> Matrix {
    let (k, m) = predictions.shape();
    match head {
        Head::Gaussian => {
            let mut y = predictions.clone();
            for v in y.as_mut_slice() {
                *v += draw();
            }
            y
        }
        Head::Categorical => {
            let mut y = Matrix::zeros(k, m);
            for j in 0..m {
                let u = draw();
                let mut cum = 0.0;
                let mut chosen = None;
                let mut last_positive = 0;
                for c in 0..k {
                    let p = predictions[(c, j)];
                    if p > 0.0 {
                        last_positive = c;
                    }
                    cum += p;
                    if u < cum {
                        chosen = Some(c);
                        break;
                    }
                }
                y[(chosen.unwrap_or(last_positive), j)] = 1.0;
            }
            y
        }
    }
}

/// Mean loss over columns: `½‖o − y‖²` (Gaussian) or `−Σ_k y_k ln p_k`
/// (categorical, probabilities clamped at [`PROB_FLOOR`]).
pub fn loss_eval(predictions: &Matrix, targets: &Matrix, head: Head) -> Result<f64> {
    if predictions.shape() != targets.shape() {
        return Err(Error::shape(
            "loss_eval",
            format!("{:?}", predictions.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    let m = predictions.cols() as f64;
    let total: f64 = match head {
        Head::Gaussian => {
            0.5 * predictions
                .as_slice()
                .iter()
                .zip(targets.as_slice())
                .map(|(o, y)| (o - y) * (o - y))
                .sum::<f64>()
        }
        Head::Categorical => predictions
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .filter(|(_, &t)| t != 0.0)
            .map(|(&p, &t)| -t * p.max(PROB_FLOOR).ln())
            .sum(),
    };
    Ok(total / m)
}

/// Column-wise softmax.
pub fn softmax_cols(z: &Matrix) -> Matrix {
    let (k, m) = z.shape();
    let mut out = Matrix::zeros(k, m);
    for j in 0..m {
        let max = (0..k).map(|c| z[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..k {
            let e = (z[(c, j)] - max).exp();
            out[(c, j)] = e;
            total += e;
        }
        for c in 0..k {
            out[(c, j)] /= total;
        }
    }
    out
}

/// Column-wise log-softmax.
pub fn log_softmax_cols(z: &Matrix) -> Matrix {
    let (k, m) = z.shape();
    let mut out = Matrix::zeros(k, m);
    for j in 0..m {
        let max = (0..k).map(|c| z[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..k).map(|c| (z[(c, j)] - max).exp()).sum::<f64>().ln();
        for c in 0..k {
            out[(c, j)] = z[(c, j)] - lse;
        }
    }
    out
}

/// Concatenated row-major vec of per-layer gradient matrices, as `p × 1`.
pub fn flatten_grads(grads: &[Matrix]) -> Matrix {
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.as_slice().iter().copied()).collect();
    Matrix::column(&flat)
}

/// Splits a flat vector back into matrices shaped like `template`.
pub fn unflatten_like(flat: &[f64], template: &[Matrix]) -> Result<Vec<Matrix>> {
    let total: usize = template.iter().map(Matrix::len).sum();
    if flat.len() != total {
        return Err(Error::shape(
            "unflatten_like",
            format!("{total} entries"),
            format!("{}", flat.len()),
        ));
    }
    let mut offset = 0;
    template
        .iter()
        .map(|t| {
            let chunk = flat[offset..offset + t.len()].to_vec();
            offset += t.len();
            Matrix::from_vec(t.rows(), t.cols(), chunk)
        })
        .collect()
}

fn augment(x: &Matrix) -> Matrix {
    let (r, m) = x.shape();
    let mut data = Vec::with_capacity((r + 1) * m);
    data.extend_from_slice(x.as_slice());
    data.extend(std::iter::repeat_n(1.0, m));
    Matrix::from_vec(r + 1, m, data).expect("augmented shape")
}
