use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        if let Optimizer::Adam { beta1, beta2, epsilon } = *self {
            ensure!((0.0..1.0).contains(&beta1), Validation, "adam beta1 must lie in [0,1)");
            ensure!((0.0..1.0).contains(&beta2), Validation, "adam beta2 must lie in [0,1)");
            ensure!(epsilon > 0.0, Validation, "adam epsilon must be positive");
        }
        Ok(())
    }
}

/// Adam moment estimates, one pair of buffers per parameter block.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(blocks: &[&[f64]]) -> Self {
        OptimizerState {
            step: 0,
            m: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            v: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn step(&mut self, opt: &Optimizer, lr: f64, params: &mut [&mut [f64]], grads: &[Vec<f64>]) {
        self.step += 1;
        match *opt {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -1.0];
        let g = vec![vec![0.5, -3.0]];
        let mut st = OptimizerState::new(&[&p]);
        st.step(&Optimizer::default(), 0.1, &mut [&mut p], &g);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn optimizer_json_shape() {
        let json = serde_json::to_string(&Optimizer::default()).unwrap();
        assert_eq!(json, r#"{"kind":"adam","beta1":0.9,"beta2":0.999,"epsilon":1e-8}"#);
        let sgd: Optimizer = serde_json::from_str(r#"{"kind":"sgd"}"#).unwrap();
        assert_eq!(sgd, Optimizer::Sgd);
    }
}
