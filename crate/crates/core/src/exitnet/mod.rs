//! Multi-exit models: assembly, uncertainty scoring, the early-exit state
//! machine and frozen-backbone branch training.

mod builders;
mod infer;
mod model;
mod persist;
mod train;
mod uncertainty;

pub use builders::{
    baseline_of_depth, build_dscp_variant, build_ujiloc_variant, reference_spec,
    reference_topology, DscpConfig, UjiConfig, REFERENCE_CLASSES, REFERENCE_INPUT_SIDE,
    REFERENCE_WIDTHS,
};
pub use infer::{
    baseline_forward, infer_batch, infer_full, infer_with_exits, ExitTaken, HeadOutput, Inference,
    InferenceTrace,
};
pub use model::{
    footprint_bytes, ExitBranchSpec, ExitPolicy, ExitRule, ModelMeta, ModelSpec, MultiExitModel,
    TrainingStatus,
};
pub use persist::{load_model, save_model};
pub use train::{exit_features, train_all_exits, train_baseline, train_exit_branch};
pub use uncertainty::{exit_decision, uncertainty_score, UncertaintyMethod};
