use super::params::{ParamStore, Section};
use super::Real;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Exponential decay rate of the learning-rate schedule, per iteration.
pub const LR_DECAY: f64 = 5e-5;

/// `base_lr · exp(−5e-5 · iter)`.
pub fn lr_schedule(base_lr: f32, iter: u64) -> f32 {
    lr_schedule_with(base_lr, LR_DECAY, iter)
}

/// `base_lr · exp(−decay · iter)`.
pub fn lr_schedule_with(base_lr: f32, decay: f64, iter: u64) -> f32 {
    (base_lr as f64 * (-decay * iter as f64).exp()) as f32
}

/// Per-section first/second moments for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = |s: &Section<T>| vec![T::zero(); s.len()];
        Self {
            first: params.sections().iter().map(zeros).collect(),
            second: params.sections().iter().map(zeros).collect(),
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One update with the same learning rate for every section.
    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f32) -> Result<()> {
        self.step_with(params, |_| lr)
    }

    /// One update with a per-section learning rate. Gradients are zeroed
    /// afterwards. A non-finite gradient aborts before anything is written.
    pub fn step_with(
        &mut self,
        params: &mut ParamStore<T>,
        lr_for: impl Fn(&Section<T>) -> f32,
    ) -> Result<()> {
        if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.sections())
                .any(|(m, s)| m.len() != s.len())
        {
            return Err(Error::Config(
                "Adam moments do not match the parameter store".into(),
            ));
        }
        for s in params.sections() {
            if let Some(i) = s.grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training {
                    section: s.name.clone(),
                    message: format!("non-finite gradient at index {i}"),
                });
            }
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let eps = T::lit(self.eps);
        let one = T::one();
        for ((section, m), v) in params
            .sections_mut()
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let lr = T::lit(lr_for(section) as f64);
            let Section { values, grads, .. } = section;
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                grads[i] = T::zero();
            }
        }
        Ok(())
    }
}
