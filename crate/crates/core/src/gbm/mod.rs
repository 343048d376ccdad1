//! Gradient-boosted regression trees over the 725-entry patient profile:
//! exact greedy CART fitting, squared and logistic boosting with staged
//! prediction, per-feature importance, patient-grouped cross-validation,
//! and target dichotomization.

mod boost;
mod cv;
mod tree;

pub use boost::{
    gbm_fit, load_gbm, read_targets_csv, save_gbm, write_targets_csv, GbmHyperParams, GbmModel,
    Loss, GBM_FORMAT_VERSION,
};
pub use cv::{
    make_dichotomous_labels, patient_folds, tune_and_assess, variable_importance, CaseDirection,
    CvPlan, TuneGrid, TuneOutcome,
};
pub use tree::{fit_tree, FlatNode, RegressionTree, TreeNode};
