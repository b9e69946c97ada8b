//! Update rules: SGD, exact NGD, block-diagonal NGD and TENGraD.
//!
//! Every rule produces per-layer deltas `Δ_l` that are subtracted from the
//! weights, so `W_l ← W_l − Δ_l`. For the natural-gradient rules
//! `Δ_l = α·(F̃⁻¹ ḡ)_l + α·λ·W_l` where `F̃` is the damped empirical Fisher
//! (full, or per-layer block), `ḡ` the batch-mean gradient and `λ` the
//! weight decay.
//!
//! TENGraD computes the block rule through the Woodbury identity,
//!
//! ```text
//! (F_l + βI)⁻¹ ḡ_l = (1/β) · (ḡ_l − J_lᵀ (J_l J_lᵀ/m + βI)⁻¹ J_l ḡ_l / m)
//! ```
//!
//! with `J_l J_lᵀ`, `J_l ḡ_l` and `J_lᵀ v` all evaluated from `I_l` and `G_l`
//! directly, so neither `J_l` nor `F_l` is ever allocated.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use std::borrow::Cow;

use crate::fisher::{
    block_fim, cached_inputs, full_empirical_fim, gram_block, model_fisher_cache, FisherSource, DEFAULT_DENSE_CAP,
};
use crate::linalg::{hadamard, matmul_nt, matmul_tn, matvec, spd_inverse, Cholesky, Matrix};
use crate::model::{flatten_grads, unflatten_like, BatchCache, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sgd,
    ExactNgd,
    BlockNgd,
    Tengrad,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sgd, Method::ExactNgd, Method::BlockNgd, Method::Tengrad];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::ExactNgd => "exact-ngd",
            Method::BlockNgd => "block-ngd",
            Method::Tengrad => "tengrad",
        }
    }

    pub fn is_natural(self) -> bool {
        self != Method::Sgd
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "sgd" => Ok(Method::Sgd),
            "exact-ngd" | "ngd" => Ok(Method::ExactNgd),
            "block-ngd" => Ok(Method::BlockNgd),
            "tengrad" => Ok(Method::Tengrad),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub method: Method,
    /// Learning rate.
    pub alpha: f64,
    /// Damping added to the Fisher before inversion.
    pub beta: f64,
    /// Per-epoch multiplier on `alpha`.
    pub lr_decay: f64,
    pub weight_decay: f64,
    /// Largest `p` (or `p_l`) for which a dense Fisher is formed.
    pub dense_cap: usize,
    pub fisher: FisherSource,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            method: Method::Tengrad,
            alpha: 1e-2,
            beta: 1e-2,
            lr_decay: 1.0,
            weight_decay: 0.0,
            dense_cap: DEFAULT_DENSE_CAP,
            fisher: FisherSource::Empirical,
        }
    }
}

impl OptimConfig {
    pub fn new(method: Method, alpha: f64) -> Self {
        OptimConfig {
            method,
            alpha,
            ..Default::default()
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be a nonnegative finite number, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if self.method.is_natural() && self.beta <= 0.0 {
            return Err(Error::Config(format!("{} requires beta > 0", self.method)));
        }
        if self.lr_decay.is_nan() || self.lr_decay <= 0.0 || self.lr_decay > 1.0 {
            return Err(Error::Config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// `α · decay^epoch`.
pub fn lr_schedule(cfg: &OptimConfig, epoch: usize) -> f64 {
    cfg.alpha * cfg.lr_decay.powi(epoch as i32)
}

/// Deltas for one step plus the size of the optimizer's working set.
#[derive(Debug, Clone)]
pub struct Update {
    pub deltas: Vec<Matrix>,
    /// Real scalars held by the optimizer while computing this update:
    /// the gradient buffer plus any Fisher, Gram or Jacobian-substitute storage.
    pub working_scalars: usize,
}

impl Update {
    pub fn optimizer_bytes(&self) -> u64 {
        8 * self.working_scalars as u64
    }
}

/// The cache whose per-sample gradients define the Fisher for this step.
fn curvature_cache<'a>(net: &Network, cache: &'a BatchCache, cfg: &OptimConfig) -> Result<Cow<'a, BatchCache>> {
    match cfg.fisher {
        FisherSource::Empirical => Ok(Cow::Borrowed(cache)),
        FisherSource::Model => Ok(Cow::Owned(model_fisher_cache(net, &cached_inputs(cache)?)?)),
    }
}

fn check_grads(net: &Network, grads: &[Matrix]) -> Result<()> {
    if grads.len() != net.layers().len()
        || net
            .layers()
            .iter()
            .zip(grads)
            .any(|(l, g)| l.weights().shape() != g.shape())
    {
        return Err(Error::shape(
            "optimizer",
            format!("{} gradients shaped like the weights", net.layers().len()),
            format!("{} gradients", grads.len()),
        ));
    }
    Ok(())
}

/// `Δ_l = α·(d_l + λ·W_l)` for a per-layer direction `d_l`.
fn finish(net: &Network, directions: Vec<Matrix>, cfg: &OptimConfig) -> Result<Vec<Matrix>> {
    directions
        .into_iter()
        .zip(net.layers())
        .map(|(mut d, layer)| {
            if cfg.weight_decay != 0.0 {
                d.axpy(cfg.weight_decay, layer.weights())?;
            }
            Ok(d.scale(cfg.alpha))
        })
        .collect()
}

pub fn sgd_update(net: &Network, grads: &[Matrix], cfg: &OptimConfig) -> Result<Update> {
    check_grads(net, grads)?;
    let p = net.param_count();
    Ok(Update {
        deltas: finish(net, grads.to_vec(), cfg)?,
        working_scalars: p,
    })
}

/// `δ = (F + βI)⁻¹ vec(ḡ)` with `F` the full empirical Fisher of the batch.
pub fn exact_ngd_update(net: &Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    check_grads(net, grads)?;
    let cache = curvature_cache(net, cache, cfg)?;
    let p = net.param_count();
    if p > cfg.dense_cap {
        return Err(Error::Capacity {
            requested: p,
            cap: cfg.dense_cap,
        });
    }
    let m = cache.batch_size();
    let fisher = full_empirical_fim(&cache, cfg.dense_cap)?;
    let inverse = spd_inverse(&fisher.add_diagonal(cfg.beta)?)?;
    let g = flatten_grads(grads);
    let natural = matvec(&inverse, g.as_slice())?;
    let directions = unflatten_like(&natural, grads)?;
    Ok(Update {
        deltas: finish(net, directions, cfg)?,
        // F, its inverse, the m × p Jacobian, gradient and natural-gradient vectors
        working_scalars: 2 * p * p + m * p + 2 * p,
    })
}

/// Per-layer `δ_l = (F_l + βI)⁻¹ vec(ḡ_l)` with explicit blocks.
pub fn block_ngd_update(net: &Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    check_grads(net, grads)?;
    let cache = curvature_cache(net, cache, cfg)?;
    let m = cache.batch_size();
    let mut working = net.param_count();
    let mut directions = Vec::with_capacity(grads.len());
    for (l, g) in grads.iter().enumerate() {
        let block = block_fim(l, cache.input(l), cache.output_grad(l)?, cfg.beta, cfg.dense_cap)?;
        let inverse = spd_inverse(&block.damped()?).map_err(|e| name_layer(e, l))?;
        let natural = matvec(&inverse, g.as_slice())?;
        let p_l = g.len();
        working += block.stored_scalars() + inverse.len() + m * p_l + p_l;
        directions.push(Matrix::from_vec(g.rows(), g.cols(), natural)?);
    }
    Ok(Update {
        deltas: finish(net, directions, cfg)?,
        working_scalars: working,
    })
}

/// Block NGD through the Woodbury identity on `m × m` Gram systems.
pub fn tengrad_update(net: &Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    check_grads(net, grads)?;
    let cache = curvature_cache(net, cache, cfg)?;
    if cfg.beta <= 0.0 {
        return Err(Error::Config("tengrad requires beta > 0".into()));
    }
    let m = cache.batch_size();
    let mf = m as f64;
    let mut working = net.param_count();
    let mut directions = Vec::with_capacity(grads.len());
    for (l, g_mean) in grads.iter().enumerate() {
        let input = cache.input(l);
        let g_out = cache.output_grad(l)?;

        // Gram system S = (C1 ⊙ C2)/m + βI
        let block = gram_block(l, input, g_out, cfg.beta)?;
        let system = block.damped()?;

        // projected gradient b_i = (J_l vec(ḡ_l))_i = Σ_j (ḡ_lᵀ I_l)[j, i] · G_l[j, i]
        let projected = hadamard(&matmul_tn(g_mean, input)?, g_out)?;
        let b = projected.col_sums();

        let v = Cholesky::factor(&system)
            .map_err(|e| name_layer(e, l))?
            .solve(&Matrix::column(&b))?;

        // back to weight space: J_lᵀ v = I_l · (v 1ᵀ ⊙ G_lᵀ), here as I_l · (G_l diag(v))ᵀ
        let mut scaled = g_out.clone();
        for r in 0..scaled.rows() {
            for (s, vi) in scaled.row_mut(r).iter_mut().zip(v.as_slice()) {
                *s *= vi;
            }
        }
        let back = matmul_nt(input, &scaled)?;

        let mut direction = g_mean.clone();
        direction.axpy(-1.0 / mf, &back)?;
        directions.push(direction.scale(1.0 / cfg.beta));

        let d_o = g_out.rows();
        // C1, C2, S; ḡᵀI and its Hadamard with G; b, v; scaled G; J_lᵀv and the direction
        working += block.stored_scalars() + system.len() + 2 * d_o * m + 2 * m + d_o * m + 2 * g_mean.len();
    }
    Ok(Update {
        deltas: finish(net, directions, cfg)?,
        working_scalars: working,
    })
}

fn name_layer(err: Error, layer: usize) -> Error {
    match err {
        Error::Singular { context, condition } => Error::Singular {
            context: format!("{context} (layer {layer})"),
            condition,
        },
        other => other,
    }
}

/// Computes the update for `cfg.method`.
pub fn compute_update(net: &Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    match cfg.method {
        Method::Sgd => sgd_update(net, grads, cfg),
        Method::ExactNgd => exact_ngd_update(net, grads, cache, cfg),
        Method::BlockNgd => block_ngd_update(net, grads, cache, cfg),
        Method::Tengrad => tengrad_update(net, grads, cache, cfg),
    }
}

fn apply(net: &mut Network, update: Update) -> Result<Update> {
    if update.deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("optimizer update".into()));
    }
    net.apply_update(&update.deltas)?;
    Ok(update)
}

pub fn sgd_step(net: &mut Network, grads: &[Matrix], cfg: &OptimConfig) -> Result<Update> {
    let update = sgd_update(net, grads, cfg)?;
    apply(net, update)
}

pub fn exact_ngd_step(net: &mut Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    let update = exact_ngd_update(net, grads, cache, cfg)?;
    apply(net, update)
}

pub fn block_ngd_step(net: &mut Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    let update = block_ngd_update(net, grads, cache, cfg)?;
    apply(net, update)
}

pub fn tengrad_step(net: &mut Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    let update = tengrad_update(net, grads, cache, cfg)?;
    apply(net, update)
}

/// One optimizer step; the network is left untouched if the update is not finite.
pub fn step(net: &mut Network, grads: &[Matrix], cache: &BatchCache, cfg: &OptimConfig) -> Result<Update> {
    let update = compute_update(net, grads, cache, cfg)?;
    apply(net, update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;
    use crate::model::{Activation, DenseLayer, Head};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn setup(seed: u64, sizes: &[usize], m: usize) -> (Network, BatchCache, Vec<Matrix>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(sizes, Activation::Tanh, Head::Gaussian, &mut rng).unwrap();
        let x = random(&mut rng, sizes[0], m);
        let y = random(&mut rng, *sizes.last().unwrap(), m);
        let (_, mut cache) = net.forward(&x).unwrap();
        let grads = net.backward(&mut cache, &y).unwrap();
        (net, cache, grads)
    }

    fn max_rel(a: &[Matrix], b: &[Matrix]) -> f64 {
        let scale = b.iter().map(Matrix::max_abs).fold(0.0, f64::max);
        a.iter()
            .zip(b)
            .map(|(x, y)| x.sub(y).unwrap().max_abs())
            .fold(0.0, f64::max)
            / scale
    }

    fn scalar_net(w: f64) -> Network {
        // one input feature, no bias contribution when x = 1 and the bias weight is zero
        Network::new(
            vec![DenseLayer::new(Matrix::from_rows(&[&[w], &[0.0]]).unwrap(), Activation::Identity).unwrap()],
            Head::Gaussian,
        )
        .unwrap()
    }

    #[test]
    fn sgd_examples() {
        let (mut net, _, grads) = setup(1, &[2, 3, 1], 4);
        let before = net.clone();
        let zeros: Vec<Matrix> = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
        sgd_step(&mut net, &zeros, &OptimConfig::new(Method::Sgd, 0.5)).unwrap();
        assert_eq!(net, before);

        let mut net = scalar_net(3.0);
        let g = vec![Matrix::from_rows(&[&[1.0], &[0.0]]).unwrap()];
        sgd_step(&mut net, &g, &OptimConfig::new(Method::Sgd, 1.0)).unwrap();
        assert_eq!(net.params(), vec![2.0, 0.0]);
    }

    #[test]
    fn sgd_contracts_quadratic() {
        // loss ½w² realized as ½(w·1 − 0)² on one sample
        let mut net = scalar_net(1.0);
        let x = Matrix::column(&[1.0]);
        let y = Matrix::column(&[0.0]);
        let cfg = OptimConfig::new(Method::Sgd, 0.1);
        for _ in 0..10 {
            let (_, mut cache) = net.forward(&x).unwrap();
            let mut grads = net.backward(&mut cache, &y).unwrap();
            grads[0][(1, 0)] = 0.0; // freeze the bias
            sgd_step(&mut net, &grads, &cfg).unwrap();
        }
        assert!((net.params()[0] - 0.9f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn sgd_weight_decay() {
        let mut net = scalar_net(2.0);
        let g = vec![Matrix::zeros(2, 1)];
        let cfg = OptimConfig {
            weight_decay: 0.5,
            ..OptimConfig::new(Method::Sgd, 0.1)
        };
        sgd_step(&mut net, &g, &cfg).unwrap();
        assert!((net.params()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn exact_ngd_with_zero_fisher_is_gradient_step() {
        // G = 0 gives F = 0; feed a separate nonzero gradient
        let net = Network::seeded(&[2, 2], Activation::Identity, Head::Gaussian, 3).unwrap();
        let cache = BatchCache::from_parts(vec![(Matrix::filled(3, 4, 1.0), Matrix::zeros(2, 4))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = vec![random(&mut rng, 3, 2)];
        let cfg = OptimConfig::new(Method::ExactNgd, 1.0).with_beta(1.0);
        let up = exact_ngd_update(&net, &g, &cache, &cfg).unwrap();
        assert!(up.deltas[0].sub(&g[0]).unwrap().max_abs() < 1e-15);
        let up = block_ngd_update(&net, &g, &cache, &cfg).unwrap();
        assert!(up.deltas[0].sub(&g[0]).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn exact_ngd_identity_fisher_is_scaled_gradient() {
        // I_l = sqrt(m)·e_k columns with G = 1 make J = sqrt(m)·I, so F = I
        let m = 3;
        let s = (m as f64).sqrt();
        let mut input = Matrix::zeros(3, m);
        for k in 0..m {
            input[(k, k)] = s;
        }
        let cache = BatchCache::from_parts(vec![(input, Matrix::filled(1, m, 1.0))]).unwrap();
        let net = Network::seeded(&[2, 1], Activation::Identity, Head::Gaussian, 0).unwrap();
        let g = vec![Matrix::column(&[0.3, -0.2, 0.1])];
        // beta must be positive; 1e-12 is numerically zero here
        let cfg = OptimConfig::new(Method::ExactNgd, 0.5).with_beta(1e-12);
        let up = exact_ngd_update(&net, &g, &cache, &cfg).unwrap();
        assert!(up.deltas[0].sub(&g[0].scale(0.5)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn exact_ngd_one_step_solves_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let x = random(&mut rng, 3, n);
        let y = random(&mut rng, 1, n);
        let mut net = Network::seeded(&[3, 1], Activation::Identity, Head::Gaussian, 8).unwrap();
        let (_, mut cache) = net.forward(&x).unwrap();
        let grads = net.backward(&mut cache, &y).unwrap();
        let cfg = OptimConfig {
            fisher: FisherSource::Model,
            ..OptimConfig::new(Method::ExactNgd, 1.0).with_beta(1e-8)
        };
        exact_ngd_step(&mut net, &grads, &cache, &cfg).unwrap();
        // normal equations on the augmented design
        let xt = cache.input(0).clone();
        let lhs = matmul_nt(&xt, &xt).unwrap();
        let rhs = matmul_nt(&xt, &y).unwrap();
        let w = crate::linalg::cholesky_solve(&lhs, &rhs).unwrap();
        let got = Matrix::column(&net.params());
        assert!(got.sub(&w).unwrap().max_abs() <= 1e-6 * w.max_abs());
    }

    #[test]
    fn block_equals_exact_on_single_layer() {
        for seed in 0..10 {
            let (net, cache, grads) = setup(seed, &[4, 3], 6);
            let cfg = OptimConfig::new(Method::BlockNgd, 0.3).with_beta(0.05);
            let a = block_ngd_update(&net, &grads, &cache, &cfg).unwrap();
            let b = exact_ngd_update(&net, &grads, &cache, &cfg).unwrap();
            assert!(max_rel(&a.deltas, &b.deltas) <= 1e-10);
        }
    }

    #[test]
    fn block_equals_exact_with_masked_fisher() {
        let (net, cache, grads) = setup(11, &[3, 4, 2], 5);
        let cfg = OptimConfig::new(Method::BlockNgd, 1.0).with_beta(0.1);
        let block = block_ngd_update(&net, &grads, &cache, &cfg).unwrap();

        let full = full_empirical_fim(&cache, DEFAULT_DENSE_CAP).unwrap();
        let sizes = net.layer_param_counts();
        let mut masked = Matrix::zeros(full.rows(), full.cols());
        let mut offset = 0;
        for p_l in sizes {
            for i in offset..offset + p_l {
                for j in offset..offset + p_l {
                    masked[(i, j)] = full[(i, j)];
                }
            }
            offset += p_l;
        }
        let inv = spd_inverse(&masked.add_diagonal(0.1).unwrap()).unwrap();
        let g = flatten_grads(&grads);
        let oracle = unflatten_like(matmul(&inv, &g).unwrap().as_slice(), &grads).unwrap();
        assert!(max_rel(&block.deltas, &oracle) <= 1e-10);
    }

    #[test]
    fn tengrad_matches_block_ngd() {
        for (seed, beta) in [(1, 0.1), (2, 1e-3), (3, 1.0)] {
            let (net, cache, grads) = setup(seed, &[5, 4, 3], 8);
            let cfg = OptimConfig::new(Method::Tengrad, 0.7).with_beta(beta);
            let t = tengrad_update(&net, &grads, &cache, &cfg).unwrap();
            let b = block_ngd_update(&net, &grads, &cache, &cfg).unwrap();
            let err = max_rel(&t.deltas, &b.deltas);
            assert!(err <= 1e-8, "beta {beta}: {err}");
        }
    }

    #[test]
    fn tengrad_matches_block_ngd_with_weight_decay() {
        let (net, cache, grads) = setup(5, &[3, 6, 2], 4);
        let cfg = OptimConfig {
            weight_decay: 1e-2,
            ..OptimConfig::new(Method::Tengrad, 0.2).with_beta(0.05)
        };
        let t = tengrad_update(&net, &grads, &cache, &cfg).unwrap();
        let b = block_ngd_update(&net, &grads, &cache, &cfg).unwrap();
        assert!(max_rel(&t.deltas, &b.deltas) <= 1e-8);
    }

    #[test]
    fn tengrad_zero_gradient_is_noop() {
        let net = Network::seeded(&[2, 3], Activation::Identity, Head::Gaussian, 0).unwrap();
        let cache = BatchCache::from_parts(vec![(Matrix::filled(3, 5, 0.5), Matrix::zeros(3, 5))]).unwrap();
        let g = vec![Matrix::zeros(3, 3)];
        let mut after = net.clone();
        tengrad_step(&mut after, &g, &cache, &OptimConfig::new(Method::Tengrad, 1.0)).unwrap();
        assert_eq!(after, net);
    }

    #[test]
    fn tengrad_large_damping_aligns_with_gradient() {
        let (net, cache, grads) = setup(9, &[4, 5, 2], 6);
        let cfg = OptimConfig::new(Method::Tengrad, 1.0).with_beta(1e6);
        let up = tengrad_update(&net, &grads, &cache, &cfg).unwrap();
        let d = flatten_grads(&up.deltas);
        let g = flatten_grads(&grads);
        let cos = crate::linalg::dot(d.as_slice(), g.as_slice())
            / (crate::linalg::dot(d.as_slice(), d.as_slice()).sqrt()
                * crate::linalg::dot(g.as_slice(), g.as_slice()).sqrt());
        assert!(cos.min(1.0).acos() <= 1e-3);
    }

    #[test]
    fn working_set_accounting() {
        let (net, cache, grads) = setup(2, &[4, 6, 3], 5);
        let p = net.param_count() as u64;
        let sgd = sgd_update(&net, &grads, &OptimConfig::new(Method::Sgd, 0.1)).unwrap();
        assert_eq!(sgd.optimizer_bytes(), 8 * p);
        let exact = exact_ngd_update(&net, &grads, &cache, &OptimConfig::new(Method::ExactNgd, 0.1)).unwrap();
        assert!(exact.optimizer_bytes() >= 8 * p * p);
        let ten = tengrad_update(&net, &grads, &cache, &OptimConfig::new(Method::Tengrad, 0.1)).unwrap();
        let largest_block = net.layer_param_counts().into_iter().max().unwrap() as u64;
        assert!(ten.optimizer_bytes() < 8 * largest_block * largest_block);
    }

    #[test]
    fn capacity_and_config_errors() {
        let (net, cache, grads) = setup(3, &[4, 6, 3], 5);
        let cfg = OptimConfig {
            dense_cap: 10,
            ..OptimConfig::new(Method::ExactNgd, 0.1)
        };
        assert!(matches!(
            exact_ngd_update(&net, &grads, &cache, &cfg),
            Err(Error::Capacity { .. })
        ));
        assert!(OptimConfig::new(Method::Tengrad, 0.1)
            .with_beta(0.0)
            .validate()
            .is_err());
        assert!(OptimConfig::new(Method::Sgd, 0.1).with_beta(0.0).validate().is_ok());
        assert!(OptimConfig {
            lr_decay: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn non_finite_update_leaves_network_untouched() {
        let (mut net, _, mut grads) = setup(4, &[2, 2], 3);
        grads[0][(0, 0)] = f64::NAN;
        let before = net.clone();
        assert!(matches!(
            sgd_step(&mut net, &grads, &OptimConfig::new(Method::Sgd, 0.1)),
            Err(Error::Numeric(_))
        ));
        assert_eq!(net, before);
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = OptimConfig::new(Method::Sgd, 0.1);
        assert_eq!(lr_schedule(&cfg, 7), 0.1);
        let cfg = OptimConfig { lr_decay: 0.5, ..cfg };
        assert!((lr_schedule(&cfg, 3) - 0.0125).abs() < 1e-17);
        let cfg = OptimConfig { lr_decay: 0.9, ..cfg };
        let seq: Vec<f64> = (0..400).map(|e| lr_schedule(&cfg, e)).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
        assert!(seq[399] < 1e-18);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("adam".parse::<Method>().is_err());
    }
}
