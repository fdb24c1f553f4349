//! Metric head for few-shot detection: a support-only multi-prototype memory,
//! best-of-K cosine scoring, prototype-conditioned feature alignment and
//! logit fusion with an existing classifier.

pub mod align;
pub mod error;
pub mod io;
pub mod memory;
pub mod params;
pub mod scoring;
pub mod simgen;
pub mod tensor;
pub mod train;

pub use align::{aligned_class_scores, grid_sample, predict_offsets, AlignTarget, AlignerParams, OffsetField};
pub use error::{PdaError, Result};
pub use memory::{ema_update, init_from_support, route, PrototypeMemory, SupportSet, UpdateReport};
pub use params::{FusionWeights, PdaParams};
pub use scoring::{best_of_k, fuse, pda_logits, project_and_normalize, score_roi, select_global_best, softmax, ClassScores, ScoredRoi};
pub use tensor::{cosine, global_average_pool, l2_normalize, FeatureVector, LogitVector, Matrix, RoiFeatureMap};
pub use train::{finetune, grad_params, metric_loss, sgd_step, Label, LabeledBatch, LabeledItem, LossTarget, TrainConfig};
