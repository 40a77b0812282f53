//! Teacher-student training, learning-rate sweeps, one-dimensional loss
//! landscapes and trajectories, and signal propagation at initialization.

mod angle;
mod landscape;
mod sigprop;
mod train;

pub use angle::{
    default_angle_start, default_angle_target, normalized_loss_1d_gradient, train_1d_angle, AngleConfig, AngleParam,
    AngleTrajectory,
};
pub use landscape::{landscape_grid_1d, LandscapePoint, LandscapeScenario, REPARAM_KINDS};
pub use sigprop::{
    sigprop_at_init, Block, BlockSpec, DeepNet, DeepNetSpec, LayerNorm, NamedGrads, Nonlinearity, NormKind, PassStats,
    SigpropCell, SigpropConfig, SigpropData, SigpropRow,
};
pub use train::{
    default_lr_grid, lr_grid_sweep, median, mse_and_errors, student_family, teacher_batch, train, train_cell,
    StudentFamily, SweepCell, SweepOutcome, TeacherSpec, TrainConfig, TrainTrace, FINAL_LOSS_FRACTION,
};
