//! Policy-value estimators: DM, IPS, DR, switch-DR, DM-IB and DR-IC.
//!
//! Every estimator returns its per-sample contributions `Y_i` alongside the
//! value `V̂ = (1/n) Σ Y_i`; the tuners score thresholds from those terms.
//! The [`terms`] module exposes the same computations over precomputed
//! policy and prediction tables so one reward fit can serve many
//! thresholds.

use std::fmt;

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::policy::{DiscretePolicy, PolicyTable};
use crate::reward::{IBRewardModel, RewardModel};
use crate::scalar::{mean, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorTag {
    Dm,
    Ips,
    Dr,
    SwitchDr,
    DmIb,
    DrIc,
}

impl EstimatorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::Dm => "dm",
            EstimatorTag::Ips => "ips",
            EstimatorTag::Dr => "dr",
            EstimatorTag::SwitchDr => "switch-dr",
            EstimatorTag::DmIb => "dm-ib",
            EstimatorTag::DrIc => "dr-ic",
        }
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tuning parameters an estimate was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorParams<T> {
    /// KL threshold (DR-IC) or weight threshold (switch-DR).
    pub tau: Option<T>,
    pub bandwidth: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput<T> {
    pub value: T,
    pub per_sample: Vec<T>,
    pub tag: EstimatorTag,
    pub params: EstimatorParams<T>,
}

impl<T: Scalar> EstimatorOutput<T> {
    pub fn new(tag: EstimatorTag, per_sample: Vec<T>, params: EstimatorParams<T>) -> Self {
        Self {
            value: mean(&per_sample),
            per_sample,
            tag,
            params,
        }
    }

    /// `tag,tau,bandwidth,value` with empty cells for unused parameters.
    pub fn csv_record(&self) -> [String; 4] {
        let opt = |v: Option<T>| v.map_or_else(String::new, |x| x.to_string());
        [
            self.tag.to_string(),
            opt(self.params.tau),
            opt(self.params.bandwidth),
            self.value.to_string(),
        ]
    }
}

/// Writes outputs as CSV rows under a `tag,tau,bandwidth,value` header.
pub fn write_outputs_csv<T: Scalar, W: std::io::Write>(outputs: &[EstimatorOutput<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tag", "tau", "bandwidth", "value"])?;
    for o in outputs {
        w.write_record(o.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Which estimator switch-DR keeps for samples under the weight threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwitchBase {
    Ips,
    #[default]
    Dr,
}

/// Per-sample terms over precomputed tables.
pub mod terms {
    use super::*;

    /// `Σ_a π(a|x_i) r̂(x_i, a)`.
    pub fn dm<T: Scalar>(target: &Matrix<T>, predictions: &Matrix<T>) -> Vec<T> {
        (0..target.rows())
            .map(|i| {
                target
                    .row(i)
                    .iter()
                    .zip(predictions.row(i))
                    .fold(T::zero(), |acc, (&p, &r)| acc + p * r)
            })
            .collect()
    }

    #[inline]
    pub(crate) fn correction<T: Scalar>(w: T, r: T, r_hat: T) -> T {
        w * (r - r_hat)
    }

    /// `w_i r_i`.
    pub fn ips<T: Scalar>(dataset: &LoggedDataset<T>, weights: &[T]) -> Vec<T> {
        weights
            .iter()
            .zip(dataset.rewards())
            .map(|(&w, &r)| w * r)
            .collect()
    }

    /// `dm_i + w_i (r_i − r̂(x_i, a_i))`.
    pub fn dr<T: Scalar>(
        dataset: &LoggedDataset<T>,
        table: &PolicyTable<T>,
        predictions: &Matrix<T>,
    ) -> Vec<T> {
        let dm_terms = dm(&table.target, predictions);
        dm_terms
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let a = dataset.actions()[i];
                d + correction(table.logged_weights[i], dataset.rewards()[i], predictions.get(i, a))
            })
            .collect()
    }

    /// Base term where `w_i ≤ τ_w`, DM term otherwise.
    pub fn switch_dr<T: Scalar>(
        dataset: &LoggedDataset<T>,
        table: &PolicyTable<T>,
        predictions: &Matrix<T>,
        tau_w: T,
        base: SwitchBase,
    ) -> Vec<T> {
        let dm_terms = dm(&table.target, predictions);
        let base_terms = match base {
            SwitchBase::Ips => ips(dataset, &table.logged_weights),
            SwitchBase::Dr => dr(dataset, table, predictions),
        };
        table
            .logged_weights
            .iter()
            .zip(dm_terms.into_iter().zip(base_terms))
            .map(|(&w, (d, b))| if w <= tau_w { b } else { d })
            .collect()
    }

    /// `Y_i(τ)`: the DM term always, plus the weighted residual correction
    /// when `D_KL(x_i) < τ`.
    pub fn dr_ic<T: Scalar>(
        dataset: &LoggedDataset<T>,
        table: &PolicyTable<T>,
        ib_predictions: &Matrix<T>,
        tau: T,
    ) -> Vec<T> {
        let dm_terms = dm(&table.target, ib_predictions);
        dr_ic_from_dm(dataset, table, ib_predictions, &dm_terms, tau)
    }

    /// [`dr_ic`] reusing precomputed DM terms.
    pub fn dr_ic_from_dm<T: Scalar>(
        dataset: &LoggedDataset<T>,
        table: &PolicyTable<T>,
        ib_predictions: &Matrix<T>,
        dm_terms: &[T],
        tau: T,
    ) -> Vec<T> {
        dm_terms
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if table.kl[i] < tau {
                    let a = dataset.actions()[i];
                    d + correction(table.logged_weights[i], dataset.rewards()[i], ib_predictions.get(i, a))
                } else {
                    d
                }
            })
            .collect()
    }
}

fn check_actions<T: Scalar>(dataset: &LoggedDataset<T>, policy: &DiscretePolicy<T>) -> Result<()> {
    if dataset.action_count() != policy.action_count() {
        return Err(Error::DimensionMismatch {
            expected: dataset.action_count(),
            got: policy.action_count(),
        });
    }
    Ok(())
}

/// Direct method `V̂ = (1/n) Σ_i Σ_a π(a|x_i) r̂(x_i, a)`.
pub fn dm<T: Scalar>(
    dataset: &LoggedDataset<T>,
    target: &DiscretePolicy<T>,
    reward_model: &impl RewardModel<T>,
) -> Result<EstimatorOutput<T>> {
    check_actions(dataset, target)?;
    let tp = target.probability_matrix(dataset.contexts())?;
    let pred = reward_model.predict_table(dataset)?;
    Ok(EstimatorOutput::new(
        EstimatorTag::Dm,
        terms::dm(&tp, &pred),
        EstimatorParams::default(),
    ))
}

/// Inverse propensity scoring with the recorded logging propensities.
pub fn ips<T: Scalar>(dataset: &LoggedDataset<T>, target: &DiscretePolicy<T>) -> Result<EstimatorOutput<T>> {
    let table = PolicyTable::target_only(dataset, target)?;
    Ok(EstimatorOutput::new(
        EstimatorTag::Ips,
        terms::ips(dataset, &table.logged_weights),
        EstimatorParams::default(),
    ))
}

/// Doubly robust: DM plus the importance-weighted residual correction.
pub fn dr<T: Scalar>(
    dataset: &LoggedDataset<T>,
    target: &DiscretePolicy<T>,
    reward_model: &impl RewardModel<T>,
) -> Result<EstimatorOutput<T>> {
    let table = PolicyTable::target_only(dataset, target)?;
    let pred = reward_model.predict_table(dataset)?;
    Ok(EstimatorOutput::new(
        EstimatorTag::Dr,
        terms::dr(dataset, &table, &pred),
        EstimatorParams::default(),
    ))
}

/// Switch estimator: the base (IPS or DR) term for samples with
/// `w(x_i, a_i) ≤ τ_w`, the DM term otherwise.
pub fn switch_dr<T: Scalar>(
    dataset: &LoggedDataset<T>,
    target: &DiscretePolicy<T>,
    reward_model: &impl RewardModel<T>,
    tau_w: T,
    base: SwitchBase,
) -> Result<EstimatorOutput<T>> {
    if tau_w.is_nan() {
        return Err(Error::validation("switch threshold is NaN"));
    }
    let table = PolicyTable::target_only(dataset, target)?;
    let pred = reward_model.predict_table(dataset)?;
    Ok(EstimatorOutput::new(
        EstimatorTag::SwitchDr,
        terms::switch_dr(dataset, &table, &pred, tau_w, base),
        EstimatorParams {
            tau: Some(tau_w),
            bandwidth: None,
        },
    ))
}

/// Direct method with the information-borrowing reward model.
pub fn dm_ib<T: Scalar>(
    dataset: &LoggedDataset<T>,
    target: &DiscretePolicy<T>,
    ib: &IBRewardModel<'_, T>,
) -> Result<EstimatorOutput<T>> {
    check_actions(dataset, target)?;
    let tp = target.probability_matrix(dataset.contexts())?;
    let pred = ib.predict_table(dataset)?;
    Ok(EstimatorOutput::new(
        EstimatorTag::DmIb,
        terms::dm(&tp, &pred),
        EstimatorParams {
            tau: None,
            bandwidth: Some(ib.bandwidth()),
        },
    ))
}

/// DR-IC: DM-IB everywhere, with the DR correction switched on for
/// contexts whose `D_KL(π(·|x) ‖ μ(·|x))` is strictly below `tau`.
/// `tau = +∞` turns the correction on everywhere.
pub fn dr_ic<T: Scalar>(
    dataset: &LoggedDataset<T>,
    target: &DiscretePolicy<T>,
    logging: &DiscretePolicy<T>,
    ib: &IBRewardModel<'_, T>,
    tau: T,
) -> Result<EstimatorOutput<T>> {
    if tau.is_nan() || tau < T::zero() {
        return Err(Error::validation(format!("KL threshold must be non-negative, got {tau}")));
    }
    let table = PolicyTable::new(dataset, target, logging)?;
    let pred = ib.predict_table(dataset)?;
    Ok(EstimatorOutput::new(
        EstimatorTag::DrIc,
        terms::dr_ic(dataset, &table, &pred, tau),
        EstimatorParams {
            tau: Some(tau),
            bandwidth: Some(ib.bandwidth()),
        },
    ))
}
