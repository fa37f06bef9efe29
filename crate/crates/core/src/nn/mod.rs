//! Dense MLP training engine: forward/backward passes, losses, optimizers.

mod model;
mod optim;
mod params;
mod train;

pub use model::{Activation, Loss, Model, ModelShape, OutputHead};
pub use optim::{OptimizerKind, OptimizerParams, OptimizerState};
pub use params::ParamVector;
pub use train::{error_rate_of, evaluate, local_train_step, LocalSchedule, LocalStep, Metric};

