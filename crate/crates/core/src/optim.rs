//! First-order optimizers over flat parameter vectors.
//!
//! An [`Optimizer`] is created from an [`OptimizerConfig`] and keeps its
//! per-parameter state between calls to [`Optimizer::step`]. The state is
//! sized on the first step.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_SGD_LR: f64 = 0.01;
pub const DEFAULT_ADAM_LR: f64 = 1e-3;
// With a constant rate RMSProp ends up hopping across a minimum with
// amplitude lr / 2, so the usual 1e-3 leaves a visible floor.
pub const DEFAULT_RMSPROP_LR: f64 = 3e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    RmsProp {
        lr: f64,
        rho: f64,
        eps: f64,
    },
    /// iRprop-: sign-based step adaptation, update skipped after a sign change.
    Rprop {
        eta_plus: f64,
        eta_minus: f64,
        step_init: f64,
        step_min: f64,
        step_max: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self::RmsProp { lr, rho: 0.9, eps: 1e-8 }
    }

    /// `eta+ = 1.01`, `eta- = 0.5`, initial step 0.01 clamped to `[1e-6, 50]`.
    pub fn rprop() -> Self {
        Self::Rprop {
            eta_plus: 1.01,
            eta_minus: 0.5,
            step_init: 0.01,
            step_min: 1e-6,
            step_max: 50.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd { .. } => "sgd",
            Self::Adam { .. } => "adam",
            Self::RmsProp { .. } => "rmsprop",
            Self::Rprop { .. } => "rprop",
        }
    }

    /// Learning rate, for the optimizers that have one.
    pub fn lr(&self) -> Option<f64> {
        match *self {
            Self::Sgd { lr } | Self::Adam { lr, .. } | Self::RmsProp { lr, .. } => Some(lr),
            Self::Rprop { .. } => None,
        }
    }

    /// Same optimizer with a different learning rate. Rprop is unchanged.
    pub fn with_lr(mut self, new_lr: f64) -> Self {
        match &mut self {
            Self::Sgd { lr } | Self::Adam { lr, .. } | Self::RmsProp { lr, .. } => *lr = new_lr,
            Self::Rprop { .. } => {}
        }
        self
    }

    /// Learning rate used when none is given.
    pub fn default_lr(name: &str) -> Option<f64> {
        match name.to_ascii_lowercase().as_str() {
            "sgd" => Some(DEFAULT_SGD_LR),
            "adam" => Some(DEFAULT_ADAM_LR),
            "rmsprop" => Some(DEFAULT_RMSPROP_LR),
            _ => None,
        }
    }

    /// Named optimizer with every hyperparameter at its default.
    pub fn defaults(name: &str) -> Result<Self> {
        Self::by_name(name, Self::default_lr(name).unwrap_or(DEFAULT_ADAM_LR))
    }

    /// Default configuration for an optimizer name.
    pub fn by_name(name: &str, lr: f64) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::sgd(lr)),
            "adam" => Ok(Self::adam(lr)),
            "rmsprop" => Ok(Self::rmsprop(lr)),
            "rprop" => Ok(Self::rprop()),
            other => Err(Error::input(format!("unknown optimizer `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Sgd { lr } => lr > 0.0,
            Self::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            Self::RmsProp { lr, rho, eps } => lr > 0.0 && (0.0..1.0).contains(&rho) && eps > 0.0,
            Self::Rprop {
                eta_plus,
                eta_minus,
                step_init,
                step_min,
                step_max,
            } => {
                eta_plus > 1.0
                    && eta_minus > 0.0
                    && eta_minus < 1.0
                    && step_min > 0.0
                    && step_min <= step_init
                    && step_init <= step_max
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid optimizer settings: {self}")))
        }
    }
}

impl fmt::Display for OptimizerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Sgd { lr } => write!(f, "sgd(lr={lr})"),
            Self::Adam { lr, beta1, beta2, eps } => write!(f, "adam(lr={lr}, beta1={beta1}, beta2={beta2}, eps={eps})"),
            Self::RmsProp { lr, rho, eps } => write!(f, "rmsprop(lr={lr}, rho={rho}, eps={eps})"),
            Self::Rprop {
                eta_plus,
                eta_minus,
                step_init,
                step_min,
                step_max,
            } => write!(
                f,
                "rprop(eta+={eta_plus}, eta-={eta_minus}, step0={step_init}, steps in [{step_min}, {step_max}])"
            ),
        }
    }
}

#[derive(Debug, Clone)]
enum State<T> {
    Sgd,
    Adam { m: Vec<T>, v: Vec<T>, t: u64 },
    RmsProp { s: Vec<T> },
    Rprop { step: Vec<T>, prev_grad: Vec<T> },
}

#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    state: State<T>,
    len: Option<usize>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let state = match config {
            OptimizerConfig::Sgd { .. } => State::Sgd,
            OptimizerConfig::Adam { .. } => State::Adam {
                m: Vec::new(),
                v: Vec::new(),
                t: 0,
            },
            OptimizerConfig::RmsProp { .. } => State::RmsProp { s: Vec::new() },
            OptimizerConfig::Rprop { .. } => State::Rprop {
                step: Vec::new(),
                prev_grad: Vec::new(),
            },
        };
        Ok(Self {
            config,
            state,
            len: None,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Number of Adam steps taken so far; `None` for other optimizers.
    pub fn adam_steps(&self) -> Option<u64> {
        match &self.state {
            State::Adam { t, .. } => Some(*t),
            _ => None,
        }
    }

    /// Current Rprop step sizes; `None` for other optimizers.
    pub fn rprop_steps(&self) -> Option<&[T]> {
        match &self.state {
            State::Rprop { step, .. } => Some(step),
            _ => None,
        }
    }

    /// Updates `params` in place from `grads`.
    ///
    /// Fails without touching anything if a gradient is not finite or the
    /// lengths disagree with each other or with earlier steps.
    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                op: "optimizer step",
                left: (params.len(), 1),
                right: (grads.len(), 1),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        match self.len {
            Some(n) if n != params.len() => {
                return Err(Error::Shape {
                    op: "optimizer step",
                    left: (n, 1),
                    right: (params.len(), 1),
                })
            }
            Some(_) => {}
            None => self.init_state(params.len()),
        }

        match (&mut self.state, self.config) {
            (State::Sgd, OptimizerConfig::Sgd { lr }) => {
                let lr = T::lit(lr);
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            (State::Adam { m, v, t }, OptimizerConfig::Adam { lr, beta1, beta2, eps }) => {
                *t += 1;
                let bc1 = T::lit(1.0 - beta1.powf(*t as f64));
                let bc2 = T::lit(1.0 - beta2.powf(*t as f64));
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let (lr, eps) = (T::lit(lr), T::lit(eps));
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            (State::RmsProp { s }, OptimizerConfig::RmsProp { lr, rho, eps }) => {
                let (lr, rho, eps) = (T::lit(lr), T::lit(rho), T::lit(eps));
                for i in 0..params.len() {
                    let g = grads[i];
                    s[i] = rho * s[i] + (T::one() - rho) * g * g;
                    params[i] -= lr * g / (s[i] + eps).sqrt();
                }
            }
            (
                State::Rprop { step, prev_grad },
                OptimizerConfig::Rprop {
                    eta_plus,
                    eta_minus,
                    step_min,
                    step_max,
                    ..
                },
            ) => {
                let (up, down) = (T::lit(eta_plus), T::lit(eta_minus));
                let (lo, hi) = (T::lit(step_min), T::lit(step_max));
                for i in 0..params.len() {
                    let g = grads[i];
                    let agreement = prev_grad[i] * g;
                    if agreement > T::zero() {
                        step[i] = (step[i] * up).min(hi);
                        params[i] -= sign(g) * step[i];
                        prev_grad[i] = g;
                    } else if agreement < T::zero() {
                        step[i] = (step[i] * down).max(lo);
                        prev_grad[i] = T::zero();
                    } else {
                        params[i] -= sign(g) * step[i];
                        prev_grad[i] = g;
                    }
                }
            }
            _ => unreachable!("optimizer state does not match its configuration"),
        }
        Ok(())
    }

    fn init_state(&mut self, n: usize) {
        self.len = Some(n);
        match &mut self.state {
            State::Sgd => {}
            State::Adam { m, v, .. } => {
                *m = vec![T::zero(); n];
                *v = vec![T::zero(); n];
            }
            State::RmsProp { s } => *s = vec![T::zero(); n],
            State::Rprop { step, prev_grad } => {
                let OptimizerConfig::Rprop { step_init, .. } = self.config else {
                    unreachable!()
                };
                *step = vec![T::lit(step_init); n];
                *prev_grad = vec![T::zero(); n];
            }
        }
    }
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_single_step() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
        let mut p = [1.0];
        opt.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8f64).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut p = [0.3, -1.0, 2.5];
        for t in 1..=3 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
            assert_eq!(p, [0.3, -1.0, 2.5]);
            assert_eq!(opt.adam_steps(), Some(t));
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut p = [1.0f64, 1.0];
        opt.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut opt = Optimizer::new(OptimizerConfig::rmsprop(0.01)).unwrap();
        let mut p = [0.0f64];
        opt.step(&mut p, &[2.0]).unwrap();
        // s = 0.1 * 4, update = 0.01 * 2 / sqrt(0.4 + 1e-8)
        let want = -0.01 * 2.0 / (0.4f64 + 1e-8).sqrt();
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_length_changes() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01)).unwrap();
        let mut p = [1.0, 2.0];
        assert!(matches!(
            opt.step(&mut p, &[0.0, f64::NAN]),
            Err(Error::NonFiniteGradient { index: 1 })
        ));
        assert_eq!(p, [1.0, 2.0]);
        assert!(opt.step(&mut p, &[0.0]).is_err());
        opt.step(&mut p, &[1.0, 1.0]).unwrap();
        let mut q = [1.0, 2.0, 3.0];
        assert!(opt.step(&mut q, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(Optimizer::<f64>::new(OptimizerConfig::sgd(0.0)).is_err());
        assert!(Optimizer::<f64>::new(OptimizerConfig::Rprop {
            eta_plus: 0.9,
            eta_minus: 0.5,
            step_init: 0.1,
            step_min: 1e-6,
            step_max: 1.0
        })
        .is_err());
        assert!(OptimizerConfig::by_name("lbfgs", 0.1).is_err());
        assert_eq!(OptimizerConfig::by_name("RMSProp", 0.1).unwrap().lr(), Some(0.1));
        assert_eq!(OptimizerConfig::rprop().with_lr(0.5), OptimizerConfig::rprop());
    }

    #[test]
    fn config_serde() {
        let c = OptimizerConfig::rprop();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.starts_with("{\"kind\":\"rprop\""));
        assert_eq!(serde_json::from_str::<OptimizerConfig>(&s).unwrap(), c);
    }

    proptest! {
        #[test]
        fn rprop_steps_stay_in_bounds(seed in any::<u64>(), n in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = OptimizerConfig::Rprop {
                eta_plus: 1.2,
                eta_minus: 0.5,
                step_init: 0.1,
                step_min: 1e-3,
                step_max: 0.5,
            };
            let mut opt = Optimizer::<f64>::new(cfg).unwrap();
            let mut p = vec![0.0; n];
            for _ in 0..60 {
                let g: Vec<f64> = (0..n).map(|_| {
                    // Runs of equal sign with occasional flips and zeros.
                    match rng.random_range(0..10) {
                        0 => 0.0,
                        1..=2 => -rng.random_range(0.01..10.0),
                        _ => rng.random_range(0.01..10.0),
                    }
                }).collect();
                opt.step(&mut p, &g).unwrap();
                for &s in opt.rprop_steps().unwrap() {
                    prop_assert!((1e-3..=0.5).contains(&s));
                }
            }
        }

        #[test]
        fn steps_are_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grads: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            for cfg in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(0.1), OptimizerConfig::rmsprop(0.1), OptimizerConfig::rprop()] {
                let run = || {
                    let mut opt = Optimizer::<f64>::new(cfg).unwrap();
                    let mut p = vec![0.5; 4];
                    for g in &grads {
                        opt.step(&mut p, g).unwrap();
                    }
                    p
                };
                let (a, b) = (run(), run());
                prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
}
