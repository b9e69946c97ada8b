use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Activation, Network};
use crate::optim::{lr_schedule, step, OptimConfig};

/// A run is diverged once its loss exceeds this multiple of the initial loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Learning rates tried by default in a grid search.
pub const DEFAULT_ALPHA_GRID: [f64; 7] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Measure wall time per step. Off by default so logs are reproducible.
    pub record_timing: bool,
}

impl RunConfig {
    pub fn new(hidden: Vec<usize>, optim: OptimConfig, batch_size: usize, epochs: usize, seed: u64) -> Self {
        RunConfig {
            hidden,
            activation: Activation::Tanh,
            optim,
            batch_size,
            epochs,
            seed,
            record_timing: false,
        }
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}-a{:e}-b{:e}-m{}-s{}",
            self.optim.method, self.optim.alpha, self.optim.beta, self.batch_size, self.seed
        )
    }

    fn validate(&self, ds: &Dataset) -> Result<()> {
        self.optim.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > ds.len() {
            return Err(Error::Config(format!(
                "batch size {} must lie in [1, {}]",
                self.batch_size,
                ds.len()
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self, ds: &Dataset) -> Vec<usize> {
        let mut sizes = vec![ds.input_dim()];
        sizes.extend(&self.hidden);
        sizes.push(ds.output_dim());
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged,
    Failed(String),
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Completed => f.write_str("ok"),
            RunStatus::Diverged => f.write_str("diverged"),
            RunStatus::Failed(msg) => write!(f, "error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub run_id: String,
    pub method: String,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Mean loss of the batch, evaluated before the step.
    pub loss: f64,
    pub step_time_ns: u64,
    pub optimizer_bytes: u64,
    pub status: RunStatus,
}

impl TrainRecord {
    /// `ln(loss)`, or `None` when the loss is not positive.
    pub fn log_loss(&self) -> Option<f64> {
        (self.loss > 0.0).then(|| self.loss.ln())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    /// Full-data loss before training.
    pub initial_loss: f64,
    /// Full-data loss after each finished epoch.
    pub epoch_losses: Vec<f64>,
    pub status: RunStatus,
    pub model: Network,
}

impl TrainOutcome {
    /// Mean batch loss over the last epoch that logged any step.
    pub fn final_epoch_mean(&self) -> Option<f64> {
        let last = self.records.last()?.epoch;
        let losses: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == last)
            .map(|r| r.loss)
            .collect();
        Some(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// First epoch (1-based) whose full-data loss is at or below `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.epoch_losses.iter().position(|&l| l <= target).map(|e| e + 1)
    }
}

fn diverged(loss: f64, initial: f64) -> bool {
    // a run that starts at zero loss has no scale to diverge against
    !loss.is_finite() || (initial > 0.0 && loss > DIVERGENCE_FACTOR * initial)
}

/// Trains a fresh network on `ds`. Mini-batches come from a seeded shuffle
/// each epoch; the last short batch is kept. Divergence and optimizer errors
/// end the run and are reported through `status`, not as `Err`.
pub fn train_run(ds: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate(ds)?;
    let mut net = Network::seeded(&cfg.layer_sizes(ds), cfg.activation, ds.task.head(), cfg.seed)?;
    let mut shuffler = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffler.set_stream(1);

    let run_id = cfg.run_id();
    let method = cfg.optim.method.to_string();
    let initial_loss = net.loss(&ds.x, &ds.y)?;
    let mut records = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut step_index = 0;
    let mut status = RunStatus::Completed;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffler);
        let lr = lr_schedule(&cfg.optim, epoch);
        let optim = cfg.optim.with_alpha(lr);
        for chunk in order.chunks(cfg.batch_size) {
            let (xb, yb) = ds.batch(chunk);
            let start = cfg.record_timing.then(Instant::now);
            let (pred, mut cache) = net.forward(&xb)?;
            let loss = crate::model::loss_eval(&pred, &yb, net.head())?;
            let mut record = TrainRecord {
                run_id: run_id.clone(),
                method: method.clone(),
                epoch,
                step: step_index,
                lr,
                batch_size: chunk.len(),
                loss,
                step_time_ns: 0,
                optimizer_bytes: 0,
                status: RunStatus::Completed,
            };
            step_index += 1;
            if diverged(loss, initial_loss) {
                record.status = RunStatus::Diverged;
                status = RunStatus::Diverged;
                records.push(record);
                break 'epochs;
            }
            let result = net
                .backward(&mut cache, &yb)
                .and_then(|grads| step(&mut net, &grads, &cache, &optim));
            if let Some(start) = start {
                record.step_time_ns = start.elapsed().as_nanos() as u64;
            }
            match result {
                Ok(update) => record.optimizer_bytes = update.optimizer_bytes(),
                Err(Error::Numeric(_)) => {
                    record.status = RunStatus::Diverged;
                    status = RunStatus::Diverged;
                }
                Err(e) => {
                    record.status = RunStatus::Failed(e.to_string());
                    status = record.status.clone();
                }
            }
            let stop = !record.status.is_completed();
            records.push(record);
            if stop {
                break 'epochs;
            }
        }
        let full = net.loss(&ds.x, &ds.y)?;
        epoch_losses.push(full);
        if diverged(full, initial_loss) {
            status = RunStatus::Diverged;
            if let Some(last) = records.last_mut() {
                last.status = RunStatus::Diverged;
            }
            break;
        }
    }
    Ok(TrainOutcome {
        records,
        initial_loss,
        epoch_losses,
        status,
        model: net,
    })
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best_alpha: f64,
    pub runs: Vec<(f64, TrainOutcome)>,
}

impl GridSearchResult {
    pub fn best(&self) -> &TrainOutcome {
        &self
            .runs
            .iter()
            .find(|(a, _)| *a == self.best_alpha)
            .expect("best alpha comes from the runs")
            .1
    }
}

/// Trains once per candidate `α` with the same seed and keeps the completed
/// run with the lowest final-epoch mean loss; ties go to the smaller `α`.
pub fn grid_search_lr(ds: &Dataset, cfg: &RunConfig, alphas: &[f64]) -> Result<GridSearchResult> {
    if alphas.is_empty() {
        return Err(Error::Config("grid search needs at least one learning rate".into()));
    }
    let mut runs = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut run_cfg = cfg.clone();
        run_cfg.optim.alpha = alpha;
        runs.push((alpha, train_run(ds, &run_cfg)?));
    }
    let scored = runs
        .iter()
        .filter(|(_, o)| o.status.is_completed())
        .filter_map(|(a, o)| o.final_epoch_mean().map(|l| (*a, l)));
    match pick_best(scored) {
        Some(best_alpha) => Ok(GridSearchResult { best_alpha, runs }),
        None => {
            let outcomes: Vec<String> = runs.iter().map(|(a, o)| format!("alpha={a:e}: {}", o.status)).collect();
            Err(Error::Search(format!(
                "no learning rate completed ({})",
                outcomes.join("; ")
            )))
        }
    }
}

/// Lowest finite loss wins; equal losses go to the smaller `α`.
fn pick_best(scored: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    scored
        .filter(|(_, l)| l.is_finite())
        .min_by(|x, y| x.1.total_cmp(&y.1).then(x.0.total_cmp(&y.0)))
        .map(|(a, _)| a)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaPolicy {
    Fixed,
    GridSearch(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub batch_size: usize,
    pub alpha: f64,
    pub outcome: TrainOutcome,
}

/// One run per batch size, same seed; `α` is either `cfg.optim.alpha` or
/// grid-searched separately for each size.
pub fn batch_sweep(ds: &Dataset, cfg: &RunConfig, sizes: &[usize], policy: &AlphaPolicy) -> Result<Vec<SweepPoint>> {
    if let Some(&bad) = sizes.iter().find(|&&m| m == 0 || m > ds.len()) {
        return Err(Error::Config(format!("batch size {bad} outside [1, {}]", ds.len())));
    }
    sizes
        .iter()
        .map(|&batch_size| {
            let mut run_cfg = cfg.clone();
            run_cfg.batch_size = batch_size;
            let (alpha, outcome) = match policy {
                AlphaPolicy::Fixed => (cfg.optim.alpha, train_run(ds, &run_cfg)?),
                AlphaPolicy::GridSearch(alphas) => {
                    let mut search = grid_search_lr(ds, &run_cfg, alphas)?;
                    let idx = search.runs.iter().position(|(a, _)| *a == search.best_alpha).unwrap();
                    let (alpha, outcome) = search.runs.swap_remove(idx);
                    (alpha, outcome)
                }
            };
            Ok(SweepPoint {
                batch_size,
                alpha,
                outcome,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::{make_synthetic, SyntheticKind, Task};
    use crate::linalg::Matrix;
    use crate::optim::Method;

    fn line_data() -> Dataset {
        // x = ±1, y = 2x: the affine least-squares loss has unit curvature in
        // both weight and bias, so gradient descent is stable iff α < 2
        Dataset {
            x: Matrix::from_rows(&[&[1.0, -1.0]]).unwrap(),
            y: Matrix::from_rows(&[&[2.0, -2.0]]).unwrap(),
            task: Task::Regression,
            feature_names: vec!["x".into()],
            class_names: vec![],
            dropped_rows: 0,
            target_stats: None,
        }
    }

    fn sgd(alpha: f64, m: usize, epochs: usize) -> RunConfig {
        RunConfig::new(vec![], OptimConfig::new(Method::Sgd, alpha), m, epochs, 3)
    }

    #[test]
    fn single_full_batch_epoch_logs_one_step() {
        let ds = make_synthetic(SyntheticKind::LinregGaussian, 16, 2, 1).unwrap();
        let out = train_run(&ds, &sgd(0.1, 16, 1)).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.epoch_losses.len(), 1);
        // same columns in shuffled order: equal up to summation rounding
        assert!((out.records[0].loss - out.initial_loss).abs() <= 1e-14 * out.initial_loss);
    }

    #[test]
    fn step_count_keeps_short_batch() {
        let ds = make_synthetic(SyntheticKind::LinregGaussian, 10, 2, 1).unwrap();
        let out = train_run(&ds, &sgd(0.1, 4, 3)).unwrap();
        assert_eq!(out.records.len(), 9);
        let sizes: Vec<usize> = out.records.iter().take(3).map(|r| r.batch_size).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert!(out.records.iter().enumerate().all(|(i, r)| r.step == i));
    }

    #[test]
    fn zero_learning_rate_freezes_loss() {
        let ds = make_synthetic(SyntheticKind::LinregGaussian, 32, 3, 2).unwrap();
        for method in Method::ALL {
            let cfg = RunConfig::new(vec![4], OptimConfig::new(method, 0.0), 32, 4, 5);
            let out = train_run(&ds, &cfg).unwrap();
            assert!(out.epoch_losses.iter().all(|&l| l == out.initial_loss), "{method}");
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let ds = make_synthetic(SyntheticKind::BlobsClassification, 60, 3, 2).unwrap();
        let cfg = RunConfig::new(vec![5], OptimConfig::new(Method::Tengrad, 0.05), 8, 3, 11);
        let a = train_run(&ds, &cfg).unwrap();
        let b = train_run(&ds, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn divergence_is_recorded_not_raised() {
        let out = train_run(&line_data(), &sgd(2.5, 2, 40)).unwrap();
        assert_eq!(out.status, RunStatus::Diverged);
        assert_eq!(out.records.last().unwrap().status, RunStatus::Diverged);
        assert!(out.records.len() < 40);
    }

    #[test]
    fn grid_search_examples() {
        let ds = line_data();
        let r = grid_search_lr(&ds, &sgd(0.0, 2, 30), &[0.1]).unwrap();
        assert_eq!(r.best_alpha, 0.1);

        // 2.5 is past the stability bound 2/λ = 2, 0.9 is the largest stable candidate
        let r = grid_search_lr(&ds, &sgd(0.0, 2, 30), &[0.3, 0.9, 2.5]).unwrap();
        assert_eq!(r.best_alpha, 0.9);
        assert_eq!(r.runs[2].1.status, RunStatus::Diverged);

        let err = grid_search_lr(&ds, &sgd(0.0, 2, 30), &[2.5, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Search(_)));
        assert!(grid_search_lr(&ds, &sgd(0.0, 2, 30), &[]).is_err());
    }

    #[test]
    fn selection_prefers_lower_loss_then_smaller_alpha() {
        assert_eq!(pick_best([(0.1, 2.0), (0.01, 1.0)].into_iter()), Some(0.01));
        assert_eq!(pick_best([(0.3, 1.0), (0.1, 1.0), (0.2, 1.0)].into_iter()), Some(0.1));
        assert_eq!(pick_best([(0.3, f64::NAN), (0.1, f64::INFINITY)].into_iter()), None);
        assert_eq!(pick_best(std::iter::empty()), None);
    }

    #[test]
    fn full_size_sweep_matches_full_batch_run() {
        let ds = make_synthetic(SyntheticKind::LinregGaussian, 24, 2, 4).unwrap();
        let cfg = RunConfig::new(vec![3], OptimConfig::new(Method::Tengrad, 0.1), 24, 3, 2);
        let sweep = batch_sweep(&ds, &cfg, &[24], &AlphaPolicy::Fixed).unwrap();
        let direct = train_run(&ds, &cfg).unwrap();
        assert_eq!(sweep[0].outcome.records, direct.records);
        assert!(batch_sweep(&ds, &cfg, &[25], &AlphaPolicy::Fixed).is_err());
    }

    #[test]
    fn config_is_validated() {
        let ds = line_data();
        assert!(train_run(&ds, &sgd(0.1, 3, 1)).is_err());
        assert!(train_run(&ds, &sgd(0.1, 2, 0)).is_err());
        let mut cfg = sgd(0.1, 2, 1);
        cfg.optim = OptimConfig::new(Method::Tengrad, 0.1).with_beta(0.0);
        assert!(train_run(&ds, &cfg).is_err());
    }

    #[test]
    fn log_loss_sentinel() {
        let out = train_run(&line_data(), &sgd(0.1, 2, 1)).unwrap();
        let mut r = out.records[0].clone();
        assert_eq!(r.log_loss(), Some(r.loss.ln()));
        r.loss = 0.0;
        assert_eq!(r.log_loss(), None);
    }
}
