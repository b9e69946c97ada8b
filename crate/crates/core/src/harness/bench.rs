use std::fmt;
use std::time::Instant;

use super::dataset::{make_synthetic, SyntheticKind};
use crate::error::{Error, Result};
use crate::fisher::DEFAULT_DENSE_CAP;
use crate::model::{Activation, Network};
use crate::optim::{step, Method, OptimConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub depths: Vec<usize>,
    pub width: usize,
    pub input_dim: usize,
    pub batch_size: usize,
    pub methods: Vec<Method>,
    pub warmup_steps: usize,
    pub timed_steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub dense_cap: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            depths: vec![1, 2, 3, 4, 16],
            width: 20,
            input_dim: 8,
            batch_size: 128,
            methods: vec![Method::Sgd, Method::ExactNgd, Method::Tengrad],
            warmup_steps: 5,
            timed_steps: 20,
            alpha: 1e-3,
            beta: 1e-2,
            dense_cap: DEFAULT_DENSE_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchStatus {
    Ok,
    Infeasible,
    Failed(String),
}

impl fmt::Display for BenchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchStatus::Ok => f.write_str("ok"),
            BenchStatus::Infeasible => f.write_str("infeasible"),
            BenchStatus::Failed(msg) => write!(f, "error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    pub method: Method,
    pub depth: usize,
    pub width: usize,
    pub params: usize,
    /// Median wall time of a full training step (forward, backward, update).
    pub median_step_ns: Option<u64>,
    pub optimizer_bytes: Option<u64>,
    pub status: BenchStatus,
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Times every method on a regression net of each depth (hidden layers of
/// `width` units). Exact NGD beyond the dense cap yields an infeasible row.
pub fn scaling_bench(cfg: &ScalingConfig) -> Result<Vec<ScalingRecord>> {
    if cfg.timed_steps == 0 || cfg.depths.contains(&0) || cfg.width == 0 {
        return Err(Error::Config(
            "scaling bench needs timed steps, depths >= 1 and width >= 1".into(),
        ));
    }
    let ds = make_synthetic(SyntheticKind::LinregGaussian, cfg.batch_size, cfg.input_dim, cfg.seed)?;
    let mut out = Vec::new();
    for &depth in &cfg.depths {
        let mut sizes = vec![cfg.input_dim];
        sizes.extend(std::iter::repeat_n(cfg.width, depth));
        sizes.push(1);
        for &method in &cfg.methods {
            let mut net = Network::seeded(&sizes, Activation::Tanh, ds.task.head(), cfg.seed)?;
            let params = net.param_count();
            let mut record = ScalingRecord {
                method,
                depth,
                width: cfg.width,
                params,
                median_step_ns: None,
                optimizer_bytes: None,
                status: BenchStatus::Ok,
            };
            let optim = OptimConfig {
                dense_cap: cfg.dense_cap,
                ..OptimConfig::new(method, cfg.alpha).with_beta(cfg.beta)
            };
            let mut times = Vec::with_capacity(cfg.timed_steps);
            for i in 0..cfg.warmup_steps + cfg.timed_steps {
                let start = Instant::now();
                let result = net.forward(&ds.x).and_then(|(_, mut cache)| {
                    let grads = net.backward(&mut cache, &ds.y)?;
                    step(&mut net, &grads, &cache, &optim)
                });
                let elapsed = start.elapsed().as_nanos() as u64;
                match result {
                    Ok(update) => {
                        record.optimizer_bytes = Some(update.optimizer_bytes());
                        if i >= cfg.warmup_steps {
                            times.push(elapsed);
                        }
                    }
                    Err(Error::Capacity { .. }) => {
                        record.status = BenchStatus::Infeasible;
                        break;
                    }
                    Err(e) => {
                        record.status = BenchStatus::Failed(e.to_string());
                        break;
                    }
                }
            }
            if record.status == BenchStatus::Ok {
                record.median_step_ns = Some(median(times));
            } else {
                record.optimizer_bytes = None;
            }
            out.push(record);
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln(time)` against `ln(params)` over the feasible
/// rows of one method; `None` with fewer than two distinct sizes.
pub fn loglog_slope(records: &[ScalingRecord], method: Method) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| {
            r.median_step_ns
                .map(|t| ((r.params as f64).ln(), (t.max(1) as f64).ln()))
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ScalingConfig {
        ScalingConfig {
            depths: vec![1, 2],
            width: 3,
            input_dim: 2,
            batch_size: 8,
            methods: Method::ALL.to_vec(),
            warmup_steps: 1,
            timed_steps: 3,
            ..Default::default()
        }
    }

    #[test]
    fn accounting_matches_definitions() {
        let recs = scaling_bench(&tiny()).unwrap();
        assert_eq!(recs.len(), 8);
        for r in &recs {
            assert_eq!(r.status, BenchStatus::Ok);
            let p = r.params as u64;
            let bytes = r.optimizer_bytes.unwrap();
            match r.method {
                Method::Sgd => assert_eq!(bytes, 8 * p),
                Method::ExactNgd => assert!(bytes >= 8 * p * p),
                _ => assert!(bytes > 8 * p),
            }
        }
    }

    #[test]
    fn exact_ngd_over_cap_is_infeasible() {
        let cfg = ScalingConfig {
            dense_cap: 20,
            ..tiny()
        };
        let recs = scaling_bench(&cfg).unwrap();
        let ngd: Vec<_> = recs.iter().filter(|r| r.method == Method::ExactNgd).collect();
        // p = 13 at depth 1 and 25 at depth 2
        assert_eq!(ngd[0].status, BenchStatus::Ok);
        assert_eq!(ngd[1].status, BenchStatus::Infeasible);
        assert_eq!(ngd[1].median_step_ns, None);
        assert!(recs
            .iter()
            .filter(|r| r.method == Method::Tengrad)
            .all(|r| r.status == BenchStatus::Ok));
    }

    #[test]
    fn slope_of_power_law() {
        let recs: Vec<ScalingRecord> = [10usize, 100, 1000]
            .iter()
            .map(|&p| ScalingRecord {
                method: Method::Sgd,
                depth: 1,
                width: 1,
                params: p,
                median_step_ns: Some((p * p) as u64),
                optimizer_bytes: None,
                status: BenchStatus::Ok,
            })
            .collect();
        assert!((loglog_slope(&recs, Method::Sgd).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&recs, Method::Tengrad), None);
        assert_eq!(median(vec![5, 1, 3, 2]), 2);
    }
}
