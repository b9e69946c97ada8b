//! Empirical Fisher information built from a [`BatchCache`].
//!
//! Row `i` of the layer Jacobian `J_l` is `vec(I_l[:, i] G_l[:, i]ᵀ)`, the
//! gradient of sample `i`'s own loss with respect to `W_l`. From it:
//!
//! * explicit blocks `F_l = J_lᵀ J_l / m` (dense `p_l × p_l`),
//! * the full matrix `F = Jᵀ J / m` over all layers,
//! * the `m × m` Gram form `J_l J_lᵀ = (I_lᵀ I_l) ⊙ (G_lᵀ G_l)`, which never
//!   touches parameter space.

use crate::error::{Error, Result};
use crate::linalg::{hadamard, khatri_rao_cols, matmul_tn, Matrix};
use crate::model::{flatten_grads, softmax_cols, BatchCache, Head, Network};

/// Largest parameter count for which a dense `p × p` matrix is formed.
pub const DEFAULT_DENSE_CAP: usize = 5000;

/// Labels the Fisher's per-sample gradients are taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FisherSource {
    /// Training labels: `F = (1/m) Σ_i ∇l_i ∇l_iᵀ`.
    #[default]
    Empirical,
    /// The model's own predictive distribution, marginalized analytically.
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FisherRepr {
    /// `F_l` in parameter space.
    Explicit(Matrix),
    /// `C1 = I_lᵀ I_l` and `C2 = G_lᵀ G_l`, both `m × m`.
    Gram { c1: Matrix, c2: Matrix },
}

/// Curvature of one layer, plus the damping applied when it is inverted.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBlock {
    pub layer: usize,
    pub repr: FisherRepr,
    pub damping: f64,
}

impl FisherBlock {
    /// The damped system matrix: `F_l + βI` for explicit blocks,
    /// `(C1 ⊙ C2)/m + βI` for Gram blocks.
    pub fn damped(&self) -> Result<Matrix> {
        match &self.repr {
            FisherRepr::Explicit(f) => f.add_diagonal(self.damping),
            FisherRepr::Gram { c1, c2 } => {
                let m = c1.rows() as f64;
                hadamard(c1, c2)?.scale(1.0 / m).add_diagonal(self.damping)
            }
        }
    }

    /// Number of scalars held by this block.
    pub fn stored_scalars(&self) -> usize {
        match &self.repr {
            FisherRepr::Explicit(f) => f.len(),
            FisherRepr::Gram { c1, c2 } => c1.len() + c2.len(),
        }
    }
}

fn check_batch(i_l: &Matrix, g_l: &Matrix, op: &'static str) -> Result<()> {
    if i_l.cols() != g_l.cols() {
        return Err(Error::Shape {
            op,
            expected: format!("{} samples in G_l", i_l.cols()),
            got: format!("{}", g_l.cols()),
        });
    }
    Ok(())
}

fn check_cap(p: usize, cap: usize) -> Result<()> {
    if p > cap {
        return Err(Error::Capacity { requested: p, cap });
    }
    Ok(())
}

/// Per-sample layer Jacobian `J_l = (I_l ∗ G_l)ᵀ`, `m × p_l`.
pub fn layer_jacobian_explicit(i_l: &Matrix, g_l: &Matrix) -> Result<Matrix> {
    check_batch(i_l, g_l, "layer_jacobian_explicit")?;
    Ok(khatri_rao_cols(i_l, g_l)?.transpose())
}

/// `J_l J_lᵀ` computed as `(I_lᵀ I_l) ⊙ (G_lᵀ G_l)` without forming `J_l`.
pub fn gram_jacobian(i_l: &Matrix, g_l: &Matrix) -> Result<Matrix> {
    check_batch(i_l, g_l, "gram_jacobian")?;
    hadamard(&matmul_tn(i_l, i_l)?, &matmul_tn(g_l, g_l)?)
}

/// Concatenated Jacobian `[J_1, …, J_L]`, `m × p`.
pub fn full_jacobian(cache: &BatchCache) -> Result<Matrix> {
    let m = cache.batch_size();
    let blocks = (0..cache.layers().len())
        .map(|l| layer_jacobian_explicit(cache.input(l), cache.output_grad(l)?))
        .collect::<Result<Vec<_>>>()?;
    let p: usize = blocks.iter().map(Matrix::cols).sum();
    let mut j = Matrix::zeros(m, p);
    for i in 0..m {
        let row = j.row_mut(i);
        let mut offset = 0;
        for b in &blocks {
            row[offset..offset + b.cols()].copy_from_slice(b.row(i));
            offset += b.cols();
        }
    }
    Ok(j)
}

/// Full empirical Fisher `F = Jᵀ J / m` over every layer of the batch.
pub fn full_empirical_fim(cache: &BatchCache, cap: usize) -> Result<Matrix> {
    let p: usize = (0..cache.layers().len())
        .map(|l| cache.input(l).rows() * cache.output_grad(l).map_or(0, Matrix::rows))
        .sum();
    check_cap(p, cap)?;
    let j = full_jacobian(cache)?;
    Ok(matmul_tn(&j, &j)?.scale(1.0 / j.rows() as f64))
}

/// Explicit block `F_l = J_lᵀ J_l / m`.
pub fn block_fim(layer: usize, i_l: &Matrix, g_l: &Matrix, damping: f64, cap: usize) -> Result<FisherBlock> {
    check_batch(i_l, g_l, "block_fim")?;
    check_cap(i_l.rows() * g_l.rows(), cap)?;
    let j = layer_jacobian_explicit(i_l, g_l)?;
    let f = matmul_tn(&j, &j)?.scale(1.0 / j.rows() as f64);
    Ok(FisherBlock {
        layer,
        repr: FisherRepr::Explicit(f),
        damping,
    })
}

/// Gram-form block holding `C1 = I_lᵀ I_l` and `C2 = G_lᵀ G_l`.
pub fn gram_block(layer: usize, i_l: &Matrix, g_l: &Matrix, damping: f64) -> Result<FisherBlock> {
    check_batch(i_l, g_l, "gram_block")?;
    Ok(FisherBlock {
        layer,
        repr: FisherRepr::Gram {
            c1: matmul_tn(i_l, i_l)?,
            c2: matmul_tn(g_l, g_l)?,
        },
        damping,
    })
}

/// Network inputs `X` recovered from a cache (the first layer input without
/// its bias row).
pub fn cached_inputs(cache: &BatchCache) -> Result<Matrix> {
    let input = cache.input(0);
    let d = input.rows() - 1;
    Matrix::from_vec(d, input.cols(), input.as_slice()[..d * input.cols()].to_vec())
}

/// Cache whose Jacobian realizes the model Fisher
/// `(1/m) Σ_i J_iᵀ (∇²_o −log p(y|o_i)) J_i`, with `J_i` the output Jacobian.
///
/// Each sample expands into `K = d_out` pseudo-samples whose output gradients
/// are the columns of `√K · B_i`, where `B_i B_iᵀ` is the output-space Hessian:
/// `B = I` for the Gaussian head and `B[:, c] = √p_c (e_c − p)` for the
/// categorical head. Every Fisher routine that divides by the column count
/// then yields the model Fisher unchanged.
pub fn model_fisher_cache(net: &Network, x: &Matrix) -> Result<BatchCache> {
    let (m, k) = (x.cols(), net.output_dim());
    let mut expanded = Matrix::zeros(x.rows(), m * k);
    for r in 0..x.rows() {
        let src = x.row(r);
        for (dst, v) in expanded.row_mut(r).chunks_exact_mut(k).zip(src) {
            dst.fill(*v);
        }
    }
    let (_, mut cache) = net.forward(&expanded)?;
    let root_k = (k as f64).sqrt();
    let mut pseudo = Matrix::zeros(k, m * k);
    match net.head() {
        Head::Gaussian => {
            for i in 0..m {
                for c in 0..k {
                    pseudo[(c, i * k + c)] = root_k;
                }
            }
        }
        Head::Categorical => {
            // columns i·k .. i·k+k all carry sample i's logits
            let probs = softmax_cols(cache.preact(net.layers().len() - 1));
            for i in 0..m {
                for c in 0..k {
                    let w = root_k * probs[(c, i * k)].sqrt();
                    for r in 0..k {
                        let e = if r == c { 1.0 } else { 0.0 };
                        pseudo[(r, i * k + c)] = w * (e - probs[(r, i * k)]);
                    }
                }
            }
        }
    }
    net.backprop(&mut cache, pseudo)?;
    Ok(cache)
}

/// Score `∇_θ log p(y | x, θ)` of a single sample, flattened in vec order.
/// Equals the negated loss gradient since the two differ by a constant.
pub fn score(net: &Network, x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.cols() != 1 || y.cols() != 1 {
        return Err(Error::shape(
            "score",
            "single-column sample",
            format!("{} / {} columns", x.cols(), y.cols()),
        ));
    }
    let (_, mut cache) = net.forward(x)?;
    let grads = net.backward(&mut cache, y)?;
    Ok(flatten_grads(&grads).scale(-1.0))
}
