//! Hand-differentiated MLP stack: dense layers, the multimodal teacher, the
//! radar-only student, focal loss, SGD with a step schedule, a
//! finite-difference checker, training loop and checkpoints.

mod checkpoint;
mod gradcheck;
mod loss;
mod mlp;
mod model;
mod sgd;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointHeader, Model, ModelSpec, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, relative_error, sample_coords};
pub use loss::{focal_loss, focal_loss_batch, softmax, softmax_rows, FocalOutput, FOCAL_EPS};
pub use mlp::{Dense, Mlp, MlpPass, MlpSpec, Parameterized};
pub use model::{
    round_to_f32, BeamNet, Features, StudentArch, TeacherArch, TeacherNet, TeacherPass, TeacherSpec,
};
pub use sgd::{sgd_step, RestartMode, Steppable, TrainConfig};
pub use train::{
    train, BatchRecord, EpochRecord, Guidance, History, TeacherTargets, TrainData, ValData,
};
