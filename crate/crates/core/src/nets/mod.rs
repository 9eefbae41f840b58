//! Sequence encoders, projections, optimizers, the learning-rate schedule and
//! checkpoints. Gradients are computed analytically and verified against
//! central finite differences in the tests.

pub mod checkpoint;
mod encoder;
pub mod gradcheck;
mod lstm;
mod optim;
mod params;
mod schedule;

pub use checkpoint::Checkpoint;
pub use encoder::{
    pool_segment, pool_segment_backward, BiRecurrentEncoder, CharEncoder, CharTrace, EncoderTrace, Pooling, Projection,
};
pub use lstm::{BiLstm, BiLstmTrace, Lstm, LstmTrace};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, NESTEROV_MOMENTUM};
pub use params::{ParamVisitor, ParamVisitorMut, Params};
pub use schedule::{Direction, LrSchedule, ScheduleAction};
