//! Reward models: the ridge base fit, the information-borrowing kernel
//! model and Nadaraya-Watson baselines.

mod ib;
mod nw;
mod ridge;

pub use ib::{
    build_cross_covariance, estimate_sigma_r, kernel_value, IBRewardModel, RewardDiagnostics,
    ROW_SUM_FLOOR, SIGMA_R_FLOOR,
};
pub use nw::{default_nw_grid, loo_cv_bandwidth, NWModel, NwPrediction, NwVariant, NwWeights};
pub use ridge::{fit_base, fit_ridge, ridge_solve, BaseKind, RidgeModel};

use crate::data::LoggedDataset;
use crate::error::Result;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Anything that predicts `r̂(x_i, a)` for every logged context and action.
pub trait RewardModel<T: Scalar> {
    /// `n × |A|` table of predictions over the dataset's contexts.
    fn predict_table(&self, dataset: &LoggedDataset<T>) -> Result<Matrix<T>>;
}

/// A fixed prediction table, e.g. a constant model in tests.
impl<T: Scalar> RewardModel<T> for Matrix<T> {
    fn predict_table(&self, dataset: &LoggedDataset<T>) -> Result<Matrix<T>> {
        if self.rows() != dataset.len() || self.cols() != dataset.action_count() {
            return Err(crate::error::Error::DimensionMismatch {
                expected: dataset.len() * dataset.action_count(),
                got: self.rows() * self.cols(),
            });
        }
        Ok(self.clone())
    }
}
