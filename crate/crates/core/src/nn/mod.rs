//! A small dense/conv network library with exact reverse-mode gradients.
//!
//! Networks are generic over the float type: training runs in `f32`, the
//! gradient-check harness in `f64`.
//!
//! Sign convention: [`apply_update`] and [`Optimizer::apply`] always move
//! parameters *along* the supplied gradient (`w ← w + α·g`). Trainers that
//! minimise a loss therefore hand in the negated loss gradient; the helpers in
//! this module that return "ascent directions" say so explicitly.

mod arch;
mod conv;
pub mod gradcheck;
mod net;
mod optim;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

pub use arch::{conv_output_size, Activation, ArchitectureSpec, ConvGeometry, LayerShape};
pub use gradcheck::{gradient_check, GradCheckReport, LossTag};
pub use net::{backward, backward_into, forward, ForwardTrace, LayerTrace};
pub use optim::{apply_update, Optimizer, UpdateRule};
pub use params::{init_params, Gradients, LayerParams, NetworkParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("bad architecture token `{token}`: {reason}")]
    Spec { token: String, reason: String },
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape { context: &'static str, expected: usize, actual: usize },
    #[error("trace or gradients do not belong to this network: {0}")]
    Usage(String),
    #[error("non-finite value in {0}; update rejected")]
    NonFinite(String),
}

/// Floating-point element type for parameters and activations.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + AddAssign + SubAssign + MulAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
