//! Off-policy evaluation for contextual bandits with discrete actions.
//!
//! The crate provides the classical direct-method, importance-sampling and
//! doubly robust estimators together with an information-borrowing reward
//! model (DM-IB) and a doubly robust estimator that applies its correction
//! only on contexts where the target and logging policies are close in KL
//! divergence (DR-IC). Everything is generic over [`Scalar`] (`f32` or
//! `f64`); the `*64` aliases below fix the common `f64` case.

pub mod data;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod policy;
pub mod reward;
pub mod scalar;
pub mod tuning;

pub use data::{
    derive_all_actions, load_classification_csv, parse_classification_csv, sample_toy,
    split_train_test, standardize_columns, to_bandit, to_bandit_traced, ClassificationTable,
    ContextSampler, DerivedDataset, LabelColumn, LoggedDataset, MeanReward, RewardMode,
    RewardNoise, SyntheticEnvironment,
};
pub use error::{Error, Result};
pub use estimators::{
    dm, dm_ib, dr, dr_ic, ips, switch_dr, EstimatorOutput, EstimatorParams, EstimatorTag,
    SwitchBase,
};
pub use linalg::Matrix;
pub use policy::{
    importance_weight, kl_divergence, kl_from_probabilities, sample_action,
    train_multinomial_logistic, DiscretePolicy, LogisticOptions, PolicyForm, PolicyTable,
    WeightProfile,
};
pub use reward::{
    fit_base, fit_ridge, BaseKind, IBRewardModel, NWModel, NwVariant, RewardModel, RidgeModel,
};
pub use scalar::Scalar;
pub use tuning::{
    bias_tilde_sq, bias_ub, geometric_grid, kl_quantile_grid, select_bandwidth, select_tau,
    variance_estimate, MseEstimate, Selection, TuningGrid,
};

// ── f64 aliases ─────────────────────────────────────────────────────────

pub type Matrix64 = Matrix<f64>;
pub type ClassificationTable64 = ClassificationTable<f64>;
pub type LoggedDataset64 = LoggedDataset<f64>;
pub type DiscretePolicy64 = DiscretePolicy<f64>;
pub type PolicyTable64 = PolicyTable<f64>;
pub type RidgeModel64 = RidgeModel<f64>;
pub type IBRewardModel64<'a> = IBRewardModel<'a, f64>;
pub type EstimatorOutput64 = EstimatorOutput<f64>;
pub type TuningGrid64 = TuningGrid<f64>;
pub type MseEstimate64 = MseEstimate<f64>;
pub type SyntheticEnvironment64 = SyntheticEnvironment<f64>;
