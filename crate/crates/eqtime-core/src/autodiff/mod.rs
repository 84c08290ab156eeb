//! Deterministic reverse-mode automatic differentiation over dense
//! f64 arrays, sized for desk-scale experiments.

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use param::{ParamRef, ParamSet, Parameter};
pub use tape::{ReduceKind, Tape, ValueId};
pub use tensor::{flat_index, TensorValue};
