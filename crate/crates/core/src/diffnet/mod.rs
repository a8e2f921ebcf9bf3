//! Small reverse-mode differentiation toolkit: a flat parameter store, dense
//! MLPs with a recorded tape, Adam and the exponential learning-rate decay.

mod adam;
mod gradcheck;
mod mlp;
mod params;

pub use adam::{lr_schedule, lr_schedule_with, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LR_DECAY};
pub use gradcheck::{grad_check, grad_check_sampled, relative_error};
pub use mlp::{
    mlp_backward, mlp_forward, sigmoid, softplus, Activation, Init, Mlp, MlpSpec, MlpTape,
};
pub use params::{GradBuffer, ParamStore, Section, SectionId, SectionKind};

use std::fmt::Debug;
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};

/// Floating point type the whole pipeline is generic over. Training runs in
/// `f32`; `f64` exists so finite-difference oracles have headroom.
pub trait Real:
    Float
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
