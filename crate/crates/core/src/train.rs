//! Epoch loop with validation tracking, best-model checkpointing and early
//! stopping.
//!
//! After every epoch the sum-of-squares loss is measured on the whole
//! training and validation sets. The network with the lowest validation
//! loss seen so far is kept, and training stops once `patience` epochs in a
//! row fail to improve on it, or after `max_epochs`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{loss_sse, Network};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::scalar::Scalar;

/// Below this many training examples the automatic choice is full-batch
/// Rprop; at or above it, mini-batch RMSProp.
pub const FULL_BATCH_LIMIT: usize = 5_000;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_PATIENCE: usize = 25;
pub const DEFAULT_MAX_EPOCHS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batching {
    Full,
    MiniBatch { size: usize, shuffle: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: OptimizerConfig,
    pub batching: Batching,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, batching: Batching) -> Self {
        Self {
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            optimizer,
            batching,
            seed: 0,
        }
    }

    /// Full-batch Rprop for small training sets, otherwise RMSProp on
    /// shuffled mini-batches of 64 with learning rate `lr`.
    pub fn auto(n_train: usize, lr: f64) -> Self {
        if n_train < FULL_BATCH_LIMIT {
            Self::new(OptimizerConfig::rprop(), Batching::Full)
        } else {
            Self::new(
                OptimizerConfig::rmsprop(lr),
                Batching::MiniBatch {
                    size: DEFAULT_BATCH_SIZE,
                    shuffle: true,
                },
            )
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::input("max_epochs must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::input("patience must be at least 1"));
        }
        if let Batching::MiniBatch { size: 0, .. } = self.batching {
            return Err(Error::input("batch size must be at least 1"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub error_t: Vec<f64>,
    pub error_v: Vec<f64>,
    /// 1-based epoch of the first minimum of `error_v`.
    pub best_epoch: usize,
    pub best_val_error: f64,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn epochs(&self) -> usize {
        self.error_v.len()
    }

    /// `epoch,error_t,error_v` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,error_t,error_v\n");
        for (i, (t, v)) in self.error_t.iter().zip(&self.error_v).enumerate() {
            out.push_str(&format!("{},{t},{v}\n", i + 1));
        }
        out
    }
}

/// Tracks validation error and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs: 0,
        }
    }

    /// Records the next epoch's validation error. Only strict improvements
    /// count.
    pub fn observe(&mut self, error_v: f64) -> Verdict {
        self.epochs += 1;
        let improved = error_v < self.best;
        if improved {
            self.best = error_v;
            self.best_epoch = self.epochs;
        }
        Verdict {
            improved,
            stop: self.epochs - self.best_epoch >= self.patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One pass over `data`.
///
/// Full batch: a single gradient step on the whole set. Mini-batch: the row
/// order is shuffled (when asked) and one step is taken per batch; the last
/// batch may be short.
pub fn epoch<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset<T>,
    optimizer: &mut Optimizer<T>,
    batching: Batching,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    match batching {
        Batching::Full => step_on(net, data.features(), data.targets(), optimizer),
        Batching::MiniBatch { size, shuffle } => {
            if size == 0 {
                return Err(Error::input("batch size must be at least 1"));
            }
            let mut order: Vec<usize> = (0..data.len()).collect();
            if shuffle {
                order.shuffle(rng);
            }
            for chunk in order.chunks(size) {
                let x = data.features().select_rows(chunk)?;
                let t = data.targets().select_rows(chunk)?;
                step_on(net, &x, &t, optimizer)?;
            }
            Ok(())
        }
    }
}

fn step_on<T: Scalar>(
    net: &mut Network<T>,
    x: &crate::linalg::Matrix<T>,
    t: &crate::linalg::Matrix<T>,
    optimizer: &mut Optimizer<T>,
) -> Result<()> {
    let (_, grads) = net.loss_and_gradient(x, t)?;
    let mut params = net.flatten_params();
    optimizer.step(&mut params, &grads.flatten())?;
    net.set_params(&params)
}

/// Sum-of-squares loss of `net` on a whole dataset.
pub fn evaluate_loss<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<f64> {
    let y = net.predict(data.features())?;
    Ok(loss_sse(&y, data.targets())?.to_f64_lossy())
}

/// Trains a copy of `net` and returns the snapshot with the lowest
/// validation loss together with the per-epoch trace.
pub fn train<T: Scalar>(
    net: &Network<T>,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(Network<T>, TrainTrace)> {
    cfg.validate()?;
    for (name, ds) in [("training", train_set), ("validation", val_set)] {
        if ds.is_empty() {
            return Err(Error::input(format!("{name} set is empty")));
        }
        if ds.n_features() != net.input_dim() || ds.n_outputs() != net.output_dim() {
            return Err(Error::input(format!(
                "{name} set is {} -> {} but the network is {} -> {}",
                ds.n_features(),
                ds.n_outputs(),
                net.input_dim(),
                net.output_dim()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer)?;
    let mut current = net.clone();
    let mut best = net.clone();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut trace = TrainTrace {
        error_t: Vec::new(),
        error_v: Vec::new(),
        best_epoch: 0,
        best_val_error: f64::INFINITY,
        stopped_early: false,
    };

    for n in 1..=cfg.max_epochs {
        epoch(&mut current, train_set, &mut optimizer, cfg.batching, &mut rng).map_err(|e| match e {
            Error::NonFiniteGradient { index } => Error::Divergence {
                epoch: n,
                msg: format!("non-finite gradient at parameter {index}"),
            },
            other => other,
        })?;
        let error_t = evaluate_loss(&current, train_set)?;
        let error_v = evaluate_loss(&current, val_set)?;
        if !error_t.is_finite() || !error_v.is_finite() {
            return Err(Error::Divergence {
                epoch: n,
                msg: format!("loss became non-finite (train {error_t}, validation {error_v})"),
            });
        }
        trace.error_t.push(error_t);
        trace.error_v.push(error_v);
        let verdict = stopper.observe(error_v);
        if verdict.improved {
            best = current.clone();
        }
        if verdict.stop && n < cfg.max_epochs {
            trace.stopped_early = true;
            break;
        }
    }
    trace.best_epoch = stopper.best_epoch();
    trace.best_val_error = stopper.best();
    Ok((best, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_regression, SynthRegression, Task};
    use crate::linalg::Matrix;
    use crate::network::{LayerSpec, VafInit};

    #[test]
    fn early_stop_sequence() {
        let mut es = EarlyStopping::new(2);
        let seq = [5.0, 4.0, 4.5, 4.6, 4.7];
        let mut stopped_at = None;
        for (i, &v) in seq.iter().enumerate() {
            if es.observe(v).stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(es.best_epoch(), 2);
        assert_eq!(es.best(), 4.0);
    }

    #[test]
    fn early_stop_needs_strict_improvement() {
        let mut es = EarlyStopping::new(3);
        assert!(es.observe(1.0).improved);
        assert!(!es.observe(1.0).improved);
        assert!(!es.observe(1.0).stop);
        assert!(es.observe(1.0).stop);
        assert_eq!(es.best_epoch(), 1);
    }

    fn linear_problem() -> (Dataset<f64>, Network<f64>) {
        let ds = synth_regression(SynthRegression::Linear, 40, 0.0, 0).unwrap();
        let net = Network::build(&[LayerSpec::Dense { input: 1, output: 1 }], VafInit::Random, 3).unwrap();
        (ds, net)
    }

    #[test]
    fn one_epoch_run() {
        let (ds, net) = linear_problem();
        let mut cfg = TrainConfig::new(OptimizerConfig::sgd(0.005), Batching::Full);
        cfg.max_epochs = 1;
        let (best, trace) = train(&net, &ds, &ds, &cfg).unwrap();
        assert_eq!(trace.epochs(), 1);
        assert_eq!(trace.best_epoch, 1);
        assert!(trace.best_val_error < evaluate_loss(&net, &ds).unwrap());
        assert_eq!(evaluate_loss(&best, &ds).unwrap(), trace.error_v[0]);
    }

    #[test]
    fn full_batch_equals_unshuffled_single_minibatch() {
        let (ds, net) = linear_problem();
        let run = |batching| {
            let mut n = net.clone();
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.01)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            for _ in 0..3 {
                epoch(&mut n, &ds, &mut opt, batching, &mut rng).unwrap();
            }
            n.flatten_params()
        };
        let a = run(Batching::Full);
        let b = run(Batching::MiniBatch {
            size: ds.len(),
            shuffle: false,
        });
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn zero_residual_leaves_params_unchanged() {
        let net = Network::build(&[LayerSpec::Dense { input: 2, output: 1 }], VafInit::Random, 3).unwrap();
        let x = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]).unwrap();
        let t = net.predict(&x).unwrap();
        let ds = Dataset::new(x, t, Task::Regression).unwrap();
        let mut n = net.clone();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
        epoch(&mut n, &ds, &mut opt, Batching::Full, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(n.flatten_params(), net.flatten_params());
    }

    #[test]
    fn convex_loss_decreases_monotonically() {
        let (ds, net) = linear_problem();
        let mut n = net.clone();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.005)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut last = evaluate_loss(&n, &ds).unwrap();
        for _ in 0..50 {
            epoch(&mut n, &ds, &mut opt, Batching::Full, &mut rng).unwrap();
            let l = evaluate_loss(&n, &ds).unwrap();
            assert!(l <= last);
            last = l;
        }
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (ds, net) = linear_problem();
        let mut cfg = TrainConfig::new(OptimizerConfig::sgd(1e6), Batching::Full);
        cfg.max_epochs = 200;
        match train(&net, &ds, &ds, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let (ds, net) = linear_problem();
        let mut cfg = TrainConfig::new(OptimizerConfig::rprop(), Batching::Full);
        cfg.patience = 0;
        assert!(train(&net, &ds, &ds, &cfg).is_err());
        let other = Network::build(&[LayerSpec::Dense { input: 3, output: 1 }], VafInit::Random, 3).unwrap();
        assert!(train(&other, &ds, &ds, &TrainConfig::auto(ds.len(), 0.01)).is_err());
    }

    #[test]
    fn auto_choice_follows_size() {
        assert_eq!(TrainConfig::auto(4999, 0.01).optimizer.name(), "rprop");
        let big = TrainConfig::auto(5000, 0.01);
        assert_eq!(big.optimizer.name(), "rmsprop");
        assert_eq!(big.batching, Batching::MiniBatch { size: 64, shuffle: true });
    }

    #[test]
    fn trace_csv_layout() {
        let trace = TrainTrace {
            error_t: vec![1.5, 1.0],
            error_v: vec![2.0, 2.5],
            best_epoch: 1,
            best_val_error: 2.0,
            stopped_early: false,
        };
        assert_eq!(trace.to_csv(), "epoch,error_t,error_v\n1,1.5,2\n2,1,2.5\n");
    }
}
