//! First-order optimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent: `θ ← θ − lr·g`.
    Sgd,
    /// Adaptive moments with the usual bias correction.
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; len], vec![0.0; len]),
        };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
        if self.lr == 0.0 {
            return;
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                assert_eq!(self.m.len(), params.len(), "optimizer sized for a different model");
                self.t = self.t.saturating_add(1);
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
    }
}

/// Settings for a mini-batch training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Stop once the loss improved by less than this fraction over `patience` epochs.
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            tolerance: 1e-5,
            patience: 10,
        }
    }
}

impl StageConfig {
    pub(crate) fn converged(&self, history: &[f64]) -> bool {
        let n = history.len();
        if self.patience == 0 || n <= self.patience {
            return false;
        }
        let old = history[n - 1 - self.patience];
        let new = history[n - 1];
        (old - new) / old.abs().max(f64::MIN_POSITIVE) < self.tolerance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_exact() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, 2);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[2.0, -4.0]);
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.0, 3);
            let mut p = vec![0.1, 0.2, 0.3];
            opt.step(&mut p, &[1.0, 2.0, 3.0]);
            assert_eq!(p, vec![0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, 2);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{p:?}");
    }
}
