//! Loss, Adam, the training loop, evaluation metrics and map rendering.

mod gradcheck;
mod map;
mod metrics;
mod optim;
mod trainer;

pub use gradcheck::{check_model_gradients, gradcheck_batch, gradcheck_config, gradcheck_params, GroupCheck};
pub use map::{class_color, render_map, ClassMap, RgbImage, PALETTE};
pub use metrics::{metrics_from_confusion, ClassReport, ConfusionMatrix, Metrics, MetricsReport, PercentReport};
pub use optim::{adam_step, AdamState, TrainConfig};
pub use trainer::{batch_gradients, evaluate, loss, loss_on_tape, predict_class, train, EpochRecord, TrainHistory, PROB_FLOOR};
