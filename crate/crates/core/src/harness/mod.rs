//! Desk-scale experiments: synthetic scenes, training, metrics, the gradient
//! suite and the kNN benchmark.

pub mod bench;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod scene;
pub mod train;

pub use loss::cross_entropy;
pub use metrics::{part_miou, MetricsReport, PartObject};
pub use scene::{gen_scene, Layout, PrimitiveKind, SceneSpec, SyntheticScene};
pub use train::{ablate, evaluate, train, train_with, AblationRow, LossRecord, TrainOutcome};
