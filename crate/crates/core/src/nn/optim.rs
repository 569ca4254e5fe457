//! Parameter update rules: plain SGD, RMSProp, and Adam.
//!
//! The optimizer owns one accumulator slot per parameter array of the
//! network it was built for, in the network's canonical parameter order, so
//! `step` is a straight zip of parameters against gradients.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::num::Real;

/// RMSProp squared-gradient decay.
pub const RMSPROP_DECAY: f64 = 0.9;
/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Denominator guard shared by RMSProp and Adam.
pub const OPT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        };
        f.write_str(name)
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!(
                "unknown optimizer `{other}` (expected sgd, rmsprop, or adam)"
            )),
        }
    }
}

/// Update rule plus its per-parameter accumulators.
///
/// SGD keeps nothing; RMSProp keeps a decayed squared-gradient average;
/// Adam keeps bias-corrected first and second moments. `step_count` drives
/// Adam's bias correction.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    kind: OptimizerKind,
    learning_rate: T,
    step_count: u64,
    sq: Vec<Vec<T>>,
    moment: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    /// Zero-initialized accumulators shaped after `network`'s parameters.
    pub fn new(kind: OptimizerKind, learning_rate: f64, network: &Network<T>) -> Self {
        let shapes: Vec<usize> = network.param_arrays().iter().map(|a| a.len()).collect();
        let zeros = || -> Vec<Vec<T>> { shapes.iter().map(|&n| vec![T::zero(); n]).collect() };
        Self {
            kind,
            learning_rate: T::from_f64_lossy(learning_rate),
            step_count: 0,
            sq: zeros(),
            moment: zeros(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> T {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter of `network` in place.
    pub fn step(&mut self, network: &mut Network<T>, grads: &Gradients<T>) {
        self.step_count += 1;
        let mut params = network.param_arrays_mut();
        let grad_arrays = grads.arrays();
        assert_eq!(
            params.len(),
            grad_arrays.len(),
            "optimizer: {} parameter arrays vs {} gradient arrays",
            params.len(),
            grad_arrays.len()
        );
        let lr = self.learning_rate;
        let eps = T::from_f64_lossy(OPT_EPSILON);
        match self.kind {
            OptimizerKind::Sgd => {
                for (ps, gs) in params.iter_mut().zip(&grad_arrays) {
                    debug_assert_eq!(ps.len(), gs.len());
                    for (p, g) in ps.iter_mut().zip(*gs) {
                        *p = *p - lr * *g;
                    }
                }
            }
            OptimizerKind::RmsProp => {
                let decay = T::from_f64_lossy(RMSPROP_DECAY);
                let one_minus = T::one() - decay;
                for ((ps, gs), ss) in params.iter_mut().zip(&grad_arrays).zip(&mut self.sq) {
                    debug_assert_eq!(ps.len(), gs.len());
                    for ((p, g), s) in ps.iter_mut().zip(*gs).zip(ss) {
                        *s = decay * *s + one_minus * *g * *g;
                        *p = *p - lr * *g / (*s + eps).sqrt();
                    }
                }
            }
            OptimizerKind::Adam => {
                let beta1 = T::from_f64_lossy(ADAM_BETA1);
                let beta2 = T::from_f64_lossy(ADAM_BETA2);
                let t = self.step_count as i32;
                let corr1 = T::one() - beta1.powi(t);
                let corr2 = T::one() - beta2.powi(t);
                for (((ps, gs), ms), vs) in params
                    .iter_mut()
                    .zip(&grad_arrays)
                    .zip(&mut self.moment)
                    .zip(&mut self.sq)
                {
                    debug_assert_eq!(ps.len(), gs.len());
                    for (((p, g), m), v) in ps.iter_mut().zip(*gs).zip(ms).zip(vs) {
                        *m = beta1 * *m + (T::one() - beta1) * *g;
                        *v = beta2 * *v + (T::one() - beta2) * *g * *g;
                        let m_hat = *m / corr1;
                        let v_hat = *v / corr2;
                        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::nn::{mse_grad, Activation, LayerSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One linear unit y = w*x with w=2; a (batch of one) sample x=1 against
    /// `target` produces the weight gradient 2*(2 - target).
    fn net_and_grad(target: f64) -> (Network<f64>, Gradients<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net: Network<f64> = Network::new(
            &[LayerSpec::new(1, 1, Activation::Linear, false, 0.0).unwrap()],
            &mut rng,
        )
        .unwrap();
        net.layer_mut(0).set_weights(Mat::from_rows(&[vec![2.0]]), vec![0.0]);
        let batch = Mat::from_rows(&[vec![1.0]]);
        let (out, cache) = net.forward_train_with_masks(&batch, &[None]);
        let grad = mse_grad(out.data(), &[target]);
        let (grads, _) = net.backward(&cache, &Mat::from_vec(1, 1, grad));
        (net, grads)
    }

    fn weight(net: &Network<f64>) -> f64 {
        net.param_arrays()[0][0]
    }

    #[test]
    fn sgd_moves_against_the_gradient_by_lr() {
        // target 1.5 -> g = 1.
        let (mut net, grads) = net_and_grad(1.5);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.001, &net);
        opt.step(&mut net, &grads);
        assert_relative_eq!(weight(&net), 2.0 - 0.001, max_relative = 1e-12);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn rmsprop_first_step_matches_hand_arithmetic() {
        // target 1.75 -> g = 0.5; delta = -lr * 0.5 / sqrt(0.1*0.25 + 1e-8).
        let (mut net, grads) = net_and_grad(1.75);
        let mut opt = OptimizerState::new(OptimizerKind::RmsProp, 0.001, &net);
        opt.step(&mut net, &grads);
        let expected = 2.0 - 0.001 * 0.5 / (0.1 * 0.25f64 + 1e-8).sqrt();
        assert_relative_eq!(weight(&net), expected, max_relative = 1e-12);
        assert_relative_eq!(2.0 - weight(&net), 0.003162, epsilon = 1e-6);
    }

    #[test]
    fn adam_first_step_is_roughly_lr_times_sign() {
        let (mut net, grads) = net_and_grad(1.75); // g = 0.5 > 0
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.001, &net);
        opt.step(&mut net, &grads);
        let delta = 2.0 - weight(&net);
        assert_relative_eq!(delta, 0.001, epsilon = 1e-7);
    }

    #[test]
    fn optimizer_names_round_trip() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::RmsProp, OptimizerKind::Adam] {
            let parsed: OptimizerKind = kind.to_string().parse().unwrap();
            assert_eq!(parsed, kind);
        }
        assert!("momentum".parse::<OptimizerKind>().is_err());
    }
}
