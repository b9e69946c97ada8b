//! Independent numerical verifiers for the Fisher identities: finite
//! differences, Monte Carlo over model-sampled labels, closed-form KL, and a
//! direct-inverse check of the Woodbury rewrite.
//!
//! None of these reuse the Gram/Woodbury path; they work from losses, scores
//! and explicit dense matrices only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fisher::{full_jacobian, score};
use crate::linalg::{matmul, matmul_nt, matmul_tn, spd_inverse, Cholesky, Matrix};
use crate::model::{log_softmax_cols, loss_eval, Activation, DenseLayer, Head, Network};

/// Finite-difference step for gradients.
pub const GRADIENT_EPS: f64 = 1e-5;
/// Finite-difference step for Hessians.
pub const HESSIAN_EPS: f64 = 1e-3;
/// Base z-multiplier for statistical checks.
pub const BASE_Z: f64 = 4.0;
/// z-multiplier of the elementwise Fisher-vs-Hessian comparison.
pub const FIM_Z: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToleranceKind {
    Relative,
    Absolute,
    Statistical { num_samples: usize, z: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub kind: ToleranceKind,
    pub value: f64,
}

impl Tolerance {
    pub fn relative(value: f64) -> Self {
        assert!(value > 0.0);
        Tolerance {
            kind: ToleranceKind::Relative,
            value,
        }
    }

    pub fn absolute(value: f64) -> Self {
        assert!(value > 0.0);
        Tolerance {
            kind: ToleranceKind::Absolute,
            value,
        }
    }

    pub fn statistical(num_samples: usize, z: f64) -> Self {
        assert!(z > 0.0 && num_samples > 0);
        Tolerance {
            kind: ToleranceKind::Statistical { num_samples, z },
            value: z,
        }
    }
}

/// One row of the verification table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, metric: &str, value: f64, tolerance: f64) -> Self {
        CheckReport {
            name: name.to_string(),
            metric: metric.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }
}

fn require_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} evaluated to {v}")))
    }
}

/// Central differences `(f(θ+εe_i) − f(θ−εe_i)) / 2ε`.
pub fn finite_diff_gradient<F>(f: F, theta: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        point[i] = theta[i] + eps;
        let plus = require_finite(f(&point)?, "objective")?;
        point[i] = theta[i] - eps;
        let minus = require_finite(f(&point)?, "objective")?;
        point[i] = theta[i];
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Central-difference Hessian from the four-point stencil. Only the upper
/// triangle is evaluated and mirrored, so the result is exactly symmetric.
pub fn finite_diff_hessian<F>(f: F, theta: &[f64], eps: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let n = theta.len();
    let mut h = Matrix::zeros(n, n);
    let mut point = theta.to_vec();
    let eval = |di: (usize, f64), dj: (usize, f64), point: &mut Vec<f64>| -> Result<f64> {
        point[di.0] += di.1;
        point[dj.0] += dj.1;
        let v = f(point);
        point[di.0] -= di.1;
        point[dj.0] -= dj.1;
        require_finite(v?, "objective")
    };
    for i in 0..n {
        for j in i..n {
            let pp = eval((i, eps), (j, eps), &mut point)?;
            let pm = eval((i, eps), (j, -eps), &mut point)?;
            let mp = eval((i, -eps), (j, eps), &mut point)?;
            let mm = eval((i, -eps), (j, -eps), &mut point)?;
            let v = (pp - pm - mp + mm) / (4.0 * eps * eps);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Componentwise Monte Carlo mean with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStats {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub num_samples: usize,
}

impl ScoreStats {
    /// Largest `|mean_i| / SE_i` (components with zero SE count only if the mean is nonzero).
    pub fn max_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_error)
            .map(|(&m, &se)| {
                if se > 0.0 {
                    m.abs() / se
                } else if m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Inputs `X` tiled to `num_samples` columns, cycling through the columns of `x`.
fn tile_inputs(x: &Matrix, start: usize, count: usize) -> Matrix {
    let n = x.cols();
    let mut out = Matrix::zeros(x.rows(), count);
    for r in 0..x.rows() {
        let src = x.row(r);
        for (j, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = src[(start + j) % n];
        }
    }
    out
}

const MC_CHUNK: usize = 2048;

/// Runs `visit` on chunks of (inputs, model-sampled labels, per-sample score
/// rows) for `num_samples` draws cycling over the columns of `x`.
fn for_each_sampled_chunk(
    net: &Network,
    x: &Matrix,
    num_samples: usize,
    seed: u64,
    mut visit: impl FnMut(usize, &Matrix, &Matrix) -> Result<()>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = 0;
    while start < num_samples {
        let count = MC_CHUNK.min(num_samples - start);
        let xs = tile_inputs(x, start, count);
        let ys = net.sample_labels_with(&xs, &mut rng)?;
        let (_, mut cache) = net.forward(&xs)?;
        net.backward(&mut cache, &ys)?;
        // rows of the Jacobian are per-sample loss gradients; scores are their negation
        let scores = full_jacobian(&cache)?.scale(-1.0);
        visit(start, &ys, &scores)?;
        start += count;
    }
    Ok(())
}

/// Mean score under labels drawn from the model itself, with standard errors.
pub fn mc_score_expectation(net: &Network, x: &Matrix, num_samples: usize, seed: u64) -> Result<ScoreStats> {
    if num_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let p = net.param_count();
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    for_each_sampled_chunk(net, x, num_samples, seed, |_, _, scores| {
        for i in 0..scores.rows() {
            for ((s, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(scores.row(i)) {
                *s += v;
                *q += v * v;
            }
        }
        Ok(())
    })?;
    let n = num_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_error = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok(ScoreStats {
        mean,
        std_error,
        num_samples,
    })
}

#[derive(Debug, Clone)]
pub struct FimHessianReport {
    /// Monte Carlo `E[s sᵀ]`.
    pub fisher: Matrix,
    /// Monte Carlo `E[∇² log p]` from finite differences.
    pub hessian: Matrix,
    /// Standard error of each entry of `F̂ + Ĥ`, from the per-draw values of `s sᵀ + ∇² log p`.
    pub std_error: Matrix,
    pub max_abs_sum: f64,
    /// Largest `|F̂ + Ĥ| / max(z·SE_ij, rel·‖F̂‖∞)` over entries; passes at `<= 1`.
    pub max_ratio: f64,
    pub passed: bool,
}

/// Checks `F = −E[∇² log p(y|x,θ)]` with labels drawn from the model.
///
/// The log-likelihood of both heads is affine in the label, so the Hessian
/// at any draw is `H(0) + Σ_c y_c (H(e_c) − H(0))`. Finite differences are
/// taken once per input and basis label; every draw then gets its exact
/// per-sample Hessian, and the standard error covers `F̂` and `Ĥ` jointly.
pub fn mc_fim_vs_hessian(
    net: &Network,
    x: &Matrix,
    num_samples: usize,
    seed: u64,
    z: f64,
    rel_tol: f64,
) -> Result<FimHessianReport> {
    if num_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let n_inputs = x.cols();
    let p = net.param_count();
    let k = net.output_dim();
    let theta = net.params();
    let mut basis = Vec::with_capacity(n_inputs);
    for j in 0..n_inputs {
        let xj = Matrix::column(&x.col(j));
        let hessian_at = |label: &Matrix| {
            let loglik =
                |t: &[f64]| -> Result<f64> { Ok(-loss_eval(&net.with_params(t)?.predict(&xj)?, label, net.head())?) };
            finite_diff_hessian(loglik, &theta, HESSIAN_EPS)
        };
        let h0 = hessian_at(&Matrix::zeros(k, 1))?;
        let mut slopes = Vec::with_capacity(k);
        for c in 0..k {
            let mut e = Matrix::zeros(k, 1);
            e[(c, 0)] = 1.0;
            slopes.push(hessian_at(&e)?.sub(&h0)?);
        }
        basis.push((h0, slopes));
    }

    let mut sum_outer = vec![0.0; p * p];
    let mut sum_hess = vec![0.0; p * p];
    let mut sum_sq = vec![0.0; p * p];
    let mut h = vec![0.0; p * p];
    for_each_sampled_chunk(net, x, num_samples, seed, |start, ys, scores| {
        for i in 0..ys.cols() {
            let (h0, slopes) = &basis[(start + i) % n_inputs];
            h.copy_from_slice(h0.as_slice());
            for (c, slope) in slopes.iter().enumerate() {
                let yc = ys[(c, i)];
                if yc != 0.0 {
                    h.iter_mut().zip(slope.as_slice()).for_each(|(a, b)| *a += yc * b);
                }
            }
            let s = scores.row(i);
            for a in 0..p {
                for b in 0..p {
                    let idx = a * p + b;
                    let outer = s[a] * s[b];
                    let v = outer + h[idx];
                    sum_outer[idx] += outer;
                    sum_hess[idx] += h[idx];
                    sum_sq[idx] += v * v;
                }
            }
        }
        Ok(())
    })?;
    let nf = num_samples as f64;
    let fisher = Matrix::from_vec(p, p, sum_outer.iter().map(|v| v / nf).collect())?;
    let hessian = Matrix::from_vec(p, p, sum_hess.iter().map(|v| v / nf).collect())?;
    let std_error = Matrix::from_vec(
        p,
        p,
        (0..p * p)
            .map(|i| {
                let mean = fisher.as_slice()[i] + hessian.as_slice()[i];
                ((sum_sq[i] / nf - mean * mean).max(0.0) / (nf - 1.0)).sqrt()
            })
            .collect(),
    )?;

    let floor = rel_tol * fisher.max_abs();
    let mut max_abs_sum: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    for i in 0..p * p {
        let diff = (fisher.as_slice()[i] + hessian.as_slice()[i]).abs();
        let allowed = (z * std_error.as_slice()[i]).max(floor);
        max_abs_sum = max_abs_sum.max(diff);
        let ratio = if allowed > 0.0 {
            diff / allowed
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(FimHessianReport {
        fisher,
        hessian,
        std_error,
        max_abs_sum,
        max_ratio,
        passed: max_ratio <= 1.0,
    })
}

/// Mean over the columns of `x` of `KL(p_a(·|x) ‖ p_b(·|x))`.
pub fn kl_divergence(net_a: &Network, net_b: &Network, x: &Matrix) -> Result<f64> {
    if net_a.head() != net_b.head() || net_a.layer_param_counts() != net_b.layer_param_counts() {
        return Err(Error::Config("KL needs two networks of the same architecture".into()));
    }
    let last = net_a.layers().len() - 1;
    let (_, ca) = net_a.forward(x)?;
    let (_, cb) = net_b.forward(x)?;
    let (oa, ob) = (ca.preact(last), cb.preact(last));
    let m = x.cols() as f64;
    let total: f64 = match net_a.head() {
        Head::Gaussian => 0.5 * oa.sub(ob)?.as_slice().iter().map(|d| d * d).sum::<f64>(),
        Head::Categorical => {
            let (la, lb) = (log_softmax_cols(oa), log_softmax_cols(ob));
            la.as_slice()
                .iter()
                .zip(lb.as_slice())
                .map(|(&a, &b)| a.exp() * (a - b))
                .sum()
        }
    };
    Ok(total / m)
}

/// Model Fisher `(1/n) Σ_x E_{y~p(·|x)}[s sᵀ]` with the expectation over
/// labels taken exactly: a probability-weighted sum over classes for the
/// categorical head, and the `d_out` unit-residual scores for the Gaussian
/// head (whose score covariance is `J_fᵀ J_f`).
pub fn model_fisher_exact(net: &Network, x: &Matrix) -> Result<Matrix> {
    let p = net.param_count();
    let k = net.output_dim();
    let n = x.cols();
    let mut f = Matrix::zeros(p, p);
    let predictions = net.predict(x)?;
    for j in 0..n {
        let xj = Matrix::column(&x.col(j));
        let pj = predictions.col(j);
        for c in 0..k {
            let (weight, label) = match net.head() {
                Head::Categorical => {
                    let mut y = vec![0.0; k];
                    y[c] = 1.0;
                    (pj[c], y)
                }
                Head::Gaussian => {
                    let mut y = pj.clone();
                    y[c] += 1.0;
                    (1.0, y)
                }
            };
            if weight == 0.0 {
                continue;
            }
            let s = score(net, &xj, &Matrix::column(&label))?;
            f.axpy(weight / n as f64, &matmul_nt(&s, &s)?)?;
        }
    }
    Ok(f)
}

#[derive(Debug, Clone)]
pub struct KlHessianReport {
    pub kl_hessian: Matrix,
    pub fisher: Matrix,
    /// `max|H − F| / max|F|`.
    pub rel_err: f64,
}

/// Compares the finite-difference Hessian of `θ' ↦ KL(p_θ ‖ p_θ')` at
/// `θ' = θ` with the exactly marginalized model Fisher.
pub fn kl_hessian_check(net: &Network, x: &Matrix, eps: f64) -> Result<KlHessianReport> {
    let kl = |theta: &[f64]| kl_divergence(net, &net.with_params(theta)?, x);
    let kl_hessian = finite_diff_hessian(kl, &net.params(), eps)?;
    let fisher = model_fisher_exact(net, x)?;
    let rel_err = kl_hessian.sub(&fisher)?.max_abs() / fisher.max_abs().max(f64::MIN_POSITIVE);
    Ok(KlHessianReport {
        kl_hessian,
        fisher,
        rel_err,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlQuadraticRow {
    pub scale: f64,
    pub kl: f64,
    pub quadratic: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlQuadraticReport {
    pub direction: Vec<f64>,
    pub rows: Vec<KlQuadraticRow>,
    /// The requested direction was zero; both sides vanish identically.
    pub degenerate: bool,
    /// The requested direction lay in the Fisher null space and was redrawn.
    pub resampled: bool,
}

impl KlQuadraticReport {
    pub fn ratio_error_at(&self, scale: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scale == scale)
            .map(|r| (r.ratio - 1.0).abs())
    }
}

/// Compares `KL(p_θ ‖ p_{θ+s·t})` with `½ s² tᵀ F t` over decreasing `scales`,
/// with `t` normalized to unit Euclidean length.
pub fn kl_quadratic_check(
    net: &Network,
    x: &Matrix,
    direction: &[f64],
    scales: &[f64],
    seed: u64,
) -> Result<KlQuadraticReport> {
    let p = net.param_count();
    if direction.len() != p {
        return Err(Error::shape(
            "kl_quadratic_check",
            format!("{p} entries"),
            format!("{}", direction.len()),
        ));
    }
    let fisher = model_fisher_exact(net, x)?;
    let curvature = |t: &[f64]| -> Result<f64> {
        let ft = matmul(&fisher, &Matrix::column(t))?;
        Ok(t.iter().zip(ft.as_slice()).map(|(a, b)| a * b).sum())
    };
    if direction.iter().all(|&v| v == 0.0) {
        let rows = scales
            .iter()
            .map(|&s| KlQuadraticRow {
                scale: s,
                kl: 0.0,
                quadratic: 0.0,
                ratio: 1.0,
            })
            .collect();
        return Ok(KlQuadraticReport {
            direction: direction.to_vec(),
            rows,
            degenerate: true,
            resampled: false,
        });
    }
    let mut t = direction.to_vec();
    let mut resampled = false;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let null_tol = 1e-12 * fisher.max_abs() * t.iter().map(|v| v * v).sum::<f64>();
    let mut tries = 0;
    while curvature(&t)? <= null_tol {
        tries += 1;
        if tries > 16 {
            return Err(Error::Numeric(
                "could not find a direction outside the Fisher null space".into(),
            ));
        }
        t = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        resampled = true;
    }
    // unit length, so `s` is the length of the parameter step
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    t.iter_mut().for_each(|v| *v /= norm);
    let tft = curvature(&t)?;
    let theta = net.params();
    let rows = scales
        .iter()
        .map(|&s| {
            let moved: Vec<f64> = theta.iter().zip(&t).map(|(a, b)| a + s * b).collect();
            let kl = kl_divergence(net, &net.with_params(&moved)?, x)?;
            let quadratic = 0.5 * s * s * tft;
            Ok(KlQuadraticRow {
                scale: s,
                kl,
                quadratic,
                ratio: kl / quadratic,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KlQuadraticReport {
        direction: t,
        rows,
        degenerate: false,
        resampled,
    })
}

/// Right-hand side of the Woodbury rewrite:
/// `(1/β) (I − Jᵀ/m · (J Jᵀ/m + βI)⁻¹ J)`.
pub fn woodbury_inverse(j: &Matrix, beta: f64) -> Result<Matrix> {
    let (m, p) = j.shape();
    let mf = m as f64;
    let small = matmul_nt(j, j)?.scale(1.0 / mf).add_diagonal(beta)?;
    let solved = Cholesky::factor(&small)?.solve(j)?; // (JJᵀ/m + βI)⁻¹ J, m × p
    let correction = matmul_tn(j, &solved)?.scale(1.0 / mf);
    Matrix::identity(p).sub(&correction).map(|r| r.scale(1.0 / beta))
}

/// Max relative error between `(JᵀJ/m + βI)⁻¹` formed directly and through
/// Woodbury, over `trials` random Jacobians with `p <= max_p`, `m <= max_m`.
pub fn woodbury_identity_check(beta: f64, trials: usize, max_p: usize, max_m: usize, seed: u64) -> Result<f64> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Config("Woodbury check needs beta > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = rng.random_range(1..=max_p);
        let m = rng.random_range(1..=max_m);
        let j = Matrix::from_vec(m, p, (0..m * p).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        worst = worst.max(woodbury_rel_err(&j, beta)?);
    }
    Ok(worst)
}

pub fn woodbury_rel_err(j: &Matrix, beta: f64) -> Result<f64> {
    let m = j.rows() as f64;
    let direct = spd_inverse(&matmul_tn(j, j)?.scale(1.0 / m).add_diagonal(beta)?)?;
    let via = woodbury_inverse(j, beta)?;
    Ok(via.sub(&direct)?.max_abs() / direct.max_abs())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_symmetric(1e-12) {
        return Err(Error::NotSymmetric("symmetric_eigenvalues".into()));
    }
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].powi(2))
            .sum();
        if off <= 1e-30 * m.as_slice().iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// `P(Z > z)` for a standard normal, via `erfc` (relative error < 1.2e-7).
pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// z-multiplier for `components` simultaneous two-sided checks whose joint
/// false-alarm rate matches a single check at `BASE_Z`; never below `BASE_Z`.
pub fn bonferroni_z(components: usize) -> f64 {
    let target = 2.0 * normal_upper_tail(BASE_Z) / components.max(1) as f64;
    let (mut lo, mut hi) = (0.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * normal_upper_tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.max(BASE_Z)
}

/// Standard test models used by the battery.
pub mod models {
    use super::*;

    /// Two-class softmax on a single zero input: only the biases matter and
    /// the logit difference is `b_1 − b_0`.
    pub fn bernoulli(logit_gap: f64) -> Result<(Network, Matrix)> {
        let w = Matrix::from_rows(&[&[0.0, 0.0], &[0.0, logit_gap]])?;
        let net = Network::new(vec![DenseLayer::new(w, Activation::Identity)?], Head::Categorical)?;
        Ok((net, Matrix::zeros(1, 1)))
    }

    /// Three-class softmax on one scalar feature.
    pub fn softmax3(seed: u64) -> Result<(Network, Matrix)> {
        let net = Network::seeded(&[1, 3], Activation::Identity, head_cat(), seed)?;
        Ok((net, Matrix::from_rows(&[&[-1.0, 0.3, 1.2]])?))
    }

    /// Linear Gaussian-head model.
    pub fn linear_gaussian(seed: u64) -> Result<(Network, Matrix)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(&[2, 1], Activation::Identity, Head::Gaussian, &mut rng)?;
        let x = Matrix::from_vec(2, 5, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        Ok((net, x))
    }

    /// 3 → 3 (tanh) → 2 network, 20 parameters.
    pub fn tanh_net(head: Head, n_inputs: usize, seed: u64) -> Result<(Network, Matrix)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::init(&[3, 3, 2], Activation::Tanh, head, &mut rng)?;
        let x = Matrix::from_vec(
            3,
            n_inputs,
            (0..3 * n_inputs).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        Ok((net, x))
    }

    fn head_cat() -> Head {
        Head::Categorical
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatteryConfig {
    pub seed: u64,
    pub score_samples: usize,
    pub fim_samples: usize,
    pub woodbury_trials: usize,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            seed: 20240601,
            score_samples: 100_000,
            fim_samples: 50_000,
            woodbury_trials: 100,
        }
    }
}

/// The fixed verification battery: score mean, Fisher vs Hessian, Fisher vs
/// KL Hessian, KL quadratic approximation, and the Woodbury rewrite.
pub fn run_battery(cfg: &BatteryConfig) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let seed = cfg.seed;

    // score has zero mean under the model
    let (bern, xb) = models::bernoulli(0.0)?;
    let stats = mc_score_expectation(&bern, &xb, cfg.score_samples, seed)?;
    out.push(CheckReport::at_most(
        "score_mean_bernoulli",
        "max |mean|/SE",
        stats.max_z(),
        BASE_Z,
    ));
    let (net, x) = models::tanh_net(Head::Gaussian, 8, seed + 1)?;
    let stats = mc_score_expectation(&net, &x, cfg.score_samples, seed + 2)?;
    let z = bonferroni_z(net.param_count());
    out.push(CheckReport::at_most(
        "score_mean_tanh_gaussian",
        "max |mean|/SE",
        stats.max_z(),
        z,
    ));
    let (net, x) = models::tanh_net(Head::Categorical, 8, seed + 3)?;
    let stats = mc_score_expectation(&net, &x, cfg.score_samples, seed + 4)?;
    out.push(CheckReport::at_most(
        "score_mean_tanh_categorical",
        "max |mean|/SE",
        stats.max_z(),
        z,
    ));

    // F = -E[H]
    let (bern, xb) = models::bernoulli(0.0)?;
    let r = mc_fim_vs_hessian(&bern, &xb, cfg.fim_samples, seed + 5, FIM_Z, 0.02)?;
    out.push(CheckReport::at_most(
        "fim_vs_hessian_bernoulli",
        "max |F+H|/max(3SE,2%)",
        r.max_ratio,
        1.0,
    ));
    for (name, head, s) in [
        ("fim_vs_hessian_tanh_gaussian", Head::Gaussian, 6),
        ("fim_vs_hessian_tanh_categorical", Head::Categorical, 8),
    ] {
        let (net, x) = models::tanh_net(head, 10, seed + s)?;
        let r = mc_fim_vs_hessian(&net, &x, cfg.fim_samples, seed + s + 1, FIM_Z, 0.02)?;
        out.push(CheckReport::at_most(name, "max |F+H|/max(3SE,2%)", r.max_ratio, 1.0));
    }

    // F = Hessian of KL at θ' = θ
    let kl_models = [
        ("kl_hessian_bernoulli", models::bernoulli(0.0)?),
        ("kl_hessian_softmax3", models::softmax3(seed + 10)?),
        ("kl_hessian_linear_gaussian", models::linear_gaussian(seed + 11)?),
        (
            "kl_hessian_tanh_categorical",
            models::tanh_net(Head::Categorical, 6, seed + 12)?,
        ),
    ];
    for (name, (net, x)) in &kl_models {
        let r = kl_hessian_check(net, x, HESSIAN_EPS)?;
        out.push(CheckReport::at_most(name, "max rel err", r.rel_err, 1e-4));
    }

    // KL ≈ ½ sᵀ F s
    let scales = [1e-1, 1e-2, 1e-3];
    for (name, (net, x)) in [
        ("kl_quadratic_bernoulli", models::bernoulli(0.0)?),
        ("kl_quadratic_softmax3", models::softmax3(seed + 13)?),
        (
            "kl_quadratic_tanh_categorical",
            models::tanh_net(Head::Categorical, 6, seed + 14)?,
        ),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 15);
        let t: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = kl_quadratic_check(&net, &x, &t, &scales, seed + 16)?;
        let err = r.ratio_error_at(1e-3).unwrap_or(f64::INFINITY);
        out.push(CheckReport::at_most(name, "|ratio-1| at s=1e-3", err, 1e-3));
    }

    // Woodbury rewrite
    let mut worst: f64 = 0.0;
    for (i, beta) in [1e-3, 1e-1, 1.0].into_iter().enumerate() {
        worst = worst.max(woodbury_identity_check(
            beta,
            cfg.woodbury_trials,
            30,
            10,
            seed + 20 + i as u64,
        )?);
    }
    out.push(CheckReport::at_most("woodbury_identity", "max rel err", worst, 1e-9));
    Ok(out)
}
