//! Optimizers (Adam, SGD with momentum), decoupled weight decay, and
//! milestone learning-rate schedules.

use crate::error::{Error, Result};
use crate::nn::{NetGrads, Network};
use crate::tensor::{Real, Tensor};

/// Optimizer family and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerSpec {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl OptimizerSpec {
    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            OptimizerSpec::Adam { lr, .. } | OptimizerSpec::Sgd { lr, .. } => *lr,
        }
    }
}

/// Multiply the learning rate by `factor` at each milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl Schedule {
    pub fn none() -> Self {
        Self { milestones: vec![], factor: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay factor must be in (0, 1], got {}",
                self.factor
            )));
        }
        Ok(())
    }

    /// Learning-rate multiplier in force at `epoch` (0-based).
    pub fn multiplier(&self, epoch: usize) -> f64 {
        let hits = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.factor.powi(hits as i32)
    }
}

/// Per-parameter moment buffers, allocated lazily in network visit order.
#[derive(Debug, Clone)]
pub struct OptimizerState<F: Real> {
    spec: OptimizerSpec,
    step: u64,
    first: Vec<Tensor<F>>,
    second: Vec<Tensor<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self { spec, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn spec(&self) -> OptimizerSpec {
        self.spec
    }

    /// Applies one update. Decoupled weight decay shrinks parameters by
    /// `1 - lr * weight_decay` before the gradient step. Only modules in
    /// `active` are touched; the range must stay fixed for the lifetime of
    /// this state because moment slots are allocated in visit order.
    pub fn step(
        &mut self,
        net: &mut Network<F>,
        grads: &NetGrads<F>,
        lr_multiplier: f64,
        weight_decay: f64,
        active: std::ops::Range<usize>,
    ) -> Result<()> {
        if !grads.is_all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.step += 1;
        let t = self.step;
        let mut slot = 0usize;
        let spec = self.spec;
        let first = &mut self.first;
        let second = &mut self.second;
        net.visit_params_with_grads(grads, active, |param, grad, _other| {
            if slot >= first.len() {
                first.push(Tensor::zeros(param.shape()));
                second.push(Tensor::zeros(param.shape()));
            }
            let decay = F::from_f64(1.0 - spec.base_lr() * lr_multiplier * weight_decay);
            if weight_decay > 0.0 {
                for p in param.data_mut() {
                    *p *= decay;
                }
            }
            match spec {
                OptimizerSpec::Sgd { lr, momentum } => {
                    let lr = F::from_f64(lr * lr_multiplier);
                    let mom = F::from_f64(momentum);
                    let buf = &mut first[slot];
                    for ((p, g), v) in param
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(buf.data_mut())
                    {
                        *v = mom * *v + *g;
                        *p -= lr * *v;
                    }
                }
                OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                    let lr = lr * lr_multiplier;
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    let b1 = F::from_f64(beta1);
                    let b2 = F::from_f64(beta2);
                    let one_m_b1 = F::from_f64(1.0 - beta1);
                    let one_m_b2 = F::from_f64(1.0 - beta2);
                    let m_buf = &mut first[slot];
                    let v_buf = &mut second[slot];
                    for (((p, g), m), v) in param
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m_buf.data_mut())
                        .zip(v_buf.data_mut())
                    {
                        *m = b1 * *m + one_m_b1 * *g;
                        *v = b2 * *v + one_m_b2 * *g * *g;
                        let m_hat = m.to_f64() / bc1;
                        let v_hat = v.to_f64() / bc2;
                        *p -= F::from_f64(lr * m_hat / (v_hat.sqrt() + eps));
                    }
                }
            }
            slot += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AuxHeadSpec, LayerKind, LayerSpec, ModuleSpec};

    fn one_dense_net() -> Network<f64> {
        let specs = vec![ModuleSpec::new(
            vec![LayerSpec::new(LayerKind::Dense { input: 2, output: 2 }, 3)],
            AuxHeadSpec::Identity,
            0,
        )];
        Network::build(&specs, &[2]).unwrap()
    }

    fn constant_grads(net: &Network<f64>, g: f64) -> NetGrads<f64> {
        let mut grads = net.zero_grads();
        for m in &mut grads.modules {
            for slot in m.layers.iter_mut().chain(m.head.iter_mut()).flatten() {
                for v in slot.0.data_mut() {
                    *v = g;
                }
                for v in slot.1.data_mut() {
                    *v = g;
                }
            }
        }
        grads
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut net = one_dense_net();
        let before: Vec<f64> = net.named_params()[0].1.data().to_vec();
        let grads = constant_grads(&net, 0.5);
        let mut opt = OptimizerState::new(OptimizerSpec::Sgd { lr: 0.1, momentum: 0.0 });
        opt.step(&mut net, &grads, 1.0, 0.0, 0..1).unwrap();
        let after = net.named_params()[0].1.data().to_vec();
        for (b, a) in before.iter().zip(&after) {
            assert!((a - (b - 0.05)).abs() < 1e-12);
        }
    }

    #[test]
    fn first_adam_step_is_signed_lr() {
        // With constant gradient, bias correction makes the first step
        // exactly lr * sign(g) up to the eps term.
        let mut net = one_dense_net();
        let before: Vec<f64> = net.named_params()[0].1.data().to_vec();
        let grads = constant_grads(&net, 3.0);
        let mut opt = OptimizerState::new(OptimizerSpec::adam(0.01));
        opt.step(&mut net, &grads, 1.0, 0.0, 0..1).unwrap();
        let after = net.named_params()[0].1.data().to_vec();
        for (b, a) in before.iter().zip(&after) {
            assert!((a - (b - 0.01)).abs() < 1e-6, "step was {}", b - a);
        }
    }

    #[test]
    fn zero_weight_decay_means_no_shrinkage() {
        let mut net = one_dense_net();
        let before: Vec<f64> = net.named_params()[0].1.data().to_vec();
        let grads = constant_grads(&net, 0.0);
        let mut opt = OptimizerState::new(OptimizerSpec::Sgd { lr: 0.1, momentum: 0.9 });
        opt.step(&mut net, &grads, 1.0, 0.0, 0..1).unwrap();
        assert_eq!(before, net.named_params()[0].1.data().to_vec());
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut net = one_dense_net();
        let grads = constant_grads(&net, f64::NAN);
        let mut opt = OptimizerState::new(OptimizerSpec::adam(0.01));
        assert!(matches!(
            opt.step(&mut net, &grads, 1.0, 0.0, 0..1),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn schedule_multiplier_compounds() {
        let s = Schedule { milestones: vec![10, 20], factor: 0.2 };
        assert_eq!(s.multiplier(0), 1.0);
        assert!((s.multiplier(10) - 0.2).abs() < 1e-15);
        assert!((s.multiplier(25) - 0.04).abs() < 1e-15);
    }
}
