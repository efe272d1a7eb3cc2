use serde::{Deserialize, Serialize};

use super::{NnError, ParamVector};

/// Serializable optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn build(&self) -> Result<Optimizer, NnError> {
        Optimizer::new(*self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self, NnError> {
        let ok = match config {
            OptimizerConfig::Sgd { lr } => lr.is_finite() && lr > 0.0,
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                lr.is_finite()
                    && lr > 0.0
                    && (0.0..1.0).contains(&beta1)
                    && (0.0..1.0).contains(&beta2)
                    && eps > 0.0
            }
        };
        if !ok {
            return Err(NnError::InvalidConfig(format!("{config:?}")));
        }
        Ok(Optimizer {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self, NnError> {
        Optimizer::new(OptimizerConfig::Sgd { lr })
    }

    pub fn adam(lr: f64) -> Result<Self, NnError> {
        Optimizer::new(OptimizerConfig::adam(lr))
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Update `params` in place from `grads`.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::LengthMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.m.is_empty() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                } else if self.m.len() != params.len() {
                    return Err(NnError::LengthMismatch {
                        expected: self.m.len(),
                        got: params.len(),
                    });
                }
                let t = (self.t + 1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .values_mut()
                    .iter_mut()
                    .zip(grads.values())
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        self.t += 1;
        Ok(())
    }
}

/// Scale `grads` so their L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut ParamVector, max_norm: f64) -> f64 {
    let norm = grads.values().iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().iter_mut().for_each(|g| *g *= s);
    }
    norm
}
