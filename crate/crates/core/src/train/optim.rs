use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::model::{ModelParams, PyFormerParams};
use crate::tensor::Tensor;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-step learning-rate decay: `lr / (1 + decay * t)`.
    pub decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-4,
            decay: 1e-6,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid!("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid!("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) || !(self.decay >= 0.0) {
            return Err(invalid!("learning rate and epsilon must be positive, decay nonnegative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("beta1 and beta2 must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Step size used on step `t` (counted from 1).
    pub fn rate_at(&self, t: u64) -> f64 {
        self.learning_rate / (1.0 + self.decay * t as f64)
    }
}

/// First and second moment accumulators per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        AdamState { v: m.clone(), m, t: 0 }
    }

    pub fn for_model(params: &PyFormerParams) -> Self {
        AdamState::new(params.named().into_iter().map(|(_, t)| t))
    }

    /// One bias-corrected Adam update over parallel lists of parameters and
    /// gradients.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[&Tensor], cfg: &TrainConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(shape_err!(
                "{} parameters, {} gradients, {} optimizer slots",
                params.len(),
                grads.len(),
                self.m.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(shape_err!("parameter {} vs gradient {} vs slot {}", p.shape(), g.shape(), m.shape()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let lr = cfg.rate_at(self.t);
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gd[i];
                vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

pub fn adam_step(
    params: &mut PyFormerParams,
    grads: &ModelParams<Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let g: Vec<&Tensor> = grads.named().into_iter().map(|(_, t)| t).collect();
    state.step(params.values_mut(), &g, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_fn(vec![4], |i| i as f64).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(vec![4]).unwrap();
        let mut s = AdamState::new([&p]);
        s.step(vec![&mut p], &[&g], &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_rate() {
        let cfg = TrainConfig::default();
        let mut p = Tensor::zeros(vec![3]).unwrap();
        let g = Tensor::new(vec![3], vec![0.3, -2.0, 7.5]).unwrap();
        let mut s = AdamState::new([&p]);
        s.step(vec![&mut p], &[&g], &cfg).unwrap();
        let eta = cfg.rate_at(1);
        for (v, gv) in p.data().iter().zip(g.data()) {
            assert!((v.abs() - eta).abs() < 1e-9);
            assert_eq!(v.signum(), -gv.signum());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(vec![3]).unwrap();
        let g = Tensor::zeros(vec![2]).unwrap();
        let mut s = AdamState::new([&p]);
        assert!(s.step(vec![&mut p], &[&g], &TrainConfig::default()).is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
    }
}
