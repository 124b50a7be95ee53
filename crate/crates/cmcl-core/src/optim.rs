//! Stochastic gradient descent with Nesterov momentum.
//!
//! Update rule, applied per parameter with `g` already including weight
//! decay:
//!
//! ```text
//! v <- mu * v - lr * g
//! theta <- theta + mu * v - lr * g
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{Gradients, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Velocity buffers mirroring one network's parameter shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    velocity_weights: Vec<Matrix>,
    velocity_biases: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &NetworkParams) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            config,
            velocity_weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.output_dim(), l.input_dim()))
                .collect(),
            velocity_biases: params
                .layers
                .iter()
                .map(|l| vec![0.0; l.output_dim()])
                .collect(),
        })
    }

    /// Applies one Nesterov-corrected update in place. Fails on non-finite
    /// gradients, naming the offending parameter tensor.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::Shape(format!(
                "gradients cover {} layers, params have {}",
                grads.layers.len(),
                params.layers.len()
            )));
        }
        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        let wd = self.config.weight_decay;

        for (j, (layer, grad)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
            if !grad.weight.is_finite() {
                return Err(Error::Optimizer(format!(
                    "non-finite gradient for layer {j} weights"
                )));
            }
            if grad.bias.iter().any(|g| !g.is_finite()) {
                return Err(Error::Optimizer(format!(
                    "non-finite gradient for layer {j} biases"
                )));
            }
            if layer.weight.data().len() != grad.weight.data().len()
                || layer.bias.len() != grad.bias.len()
            {
                return Err(Error::Shape(format!("gradient shape mismatch at layer {j}")));
            }

            let vw = &mut self.velocity_weights[j];
            for ((theta, v), &g_raw) in layer
                .weight
                .data_mut()
                .iter_mut()
                .zip(vw.data_mut())
                .zip(grad.weight.data())
            {
                let g = g_raw + wd * *theta;
                *v = mu * *v - lr * g;
                *theta += mu * *v - lr * g;
            }
            let vb = &mut self.velocity_biases[j];
            for ((theta, v), &g_raw) in layer.bias.iter_mut().zip(vb.iter_mut()).zip(&grad.bias) {
                let g = g_raw + wd * *theta;
                *v = mu * *v - lr * g;
                *theta += mu * *v - lr * g;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Activation, LayerGrads, LayerSpec};

    fn scalar_net(theta: f64) -> NetworkParams {
        NetworkParams {
            layers: vec![crate::net::LayerParams {
                weight: Matrix::from_vec(1, 1, vec![theta]).unwrap(),
                bias: vec![0.0],
                activation: Activation::Identity,
            }],
        }
    }

    fn scalar_grads(g: f64) -> Gradients {
        Gradients {
            layers: vec![LayerGrads {
                weight: Matrix::from_vec(1, 1, vec![g]).unwrap(),
                bias: vec![0.0],
            }],
            input: Matrix::zeros(1, 1),
            injections: Vec::new(),
        }
    }

    #[test]
    fn zero_momentum_reduces_to_plain_sgd() {
        let mut params = scalar_net(1.0);
        let mut state = OptimizerState::new(
            OptimizerConfig {
                learning_rate: 0.1,
                momentum: 0.0,
                weight_decay: 0.0,
            },
            &params,
        )
        .unwrap();
        state.step(&mut params, &scalar_grads(2.0)).unwrap();
        assert!((params.layers[0].weight.at(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let specs = [LayerSpec::new(3, 2, Activation::Softmax)];
        let mut params = init_params(&specs, 1).unwrap();
        let before = params.clone();
        let mut state = OptimizerState::new(OptimizerConfig::default(), &params).unwrap();
        let grads = Gradients::zeros_like(&params, 1);
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn nesterov_update_matches_hand_evaluation() {
        // mu=0.9, lr=0.1, theta=0, v=0, g=1:
        // v' = -0.1, theta' = 0 + 0.9*(-0.1) - 0.1 = -0.19
        let mut params = scalar_net(0.0);
        let mut state = OptimizerState::new(
            OptimizerConfig {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
            },
            &params,
        )
        .unwrap();
        state.step(&mut params, &scalar_grads(1.0)).unwrap();
        assert!((params.layers[0].weight.at(0, 0) + 0.19).abs() < 1e-15);
        assert!((state.velocity_weights[0].at(0, 0) + 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = scalar_net(0.0);
        let mut state = OptimizerState::new(OptimizerConfig::default(), &params).unwrap();
        let err = state.step(&mut params, &scalar_grads(f64::NAN)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 0"), "message was: {msg}");
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let base = OptimizerConfig::default();
        assert!(OptimizerConfig {
            learning_rate: 0.0,
            ..base
        }
        .validate()
        .is_err());
        assert!(OptimizerConfig {
            momentum: 1.0,
            ..base
        }
        .validate()
        .is_err());
        assert!(OptimizerConfig {
            weight_decay: -0.1,
            ..base
        }
        .validate()
        .is_err());
    }
}
