//! One-off tuning traces for inspecting the bandwidth and threshold curves.

use std::str::FromStr;

use dric_core::data::to_bandit;
use dric_core::reward::{fit_base, IBRewardModel};
use dric_core::tuning::{geometric_grid, kl_quantile_grid, select_bandwidth_with_base, select_tau_from_tables, Selection};
use dric_core::{ClassificationTable, PolicyTable, RewardModel};

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use crate::harness::{prepare_seed, replicate_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneTarget {
    Bandwidth,
    Tau,
}

impl FromStr for TuneTarget {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bandwidth" => Ok(TuneTarget::Bandwidth),
            "tau" => Ok(TuneTarget::Tau),
            other => Err(BenchError::config(format!("unknown tuning target `{other}`"))),
        }
    }
}

/// Draws one bandit dataset of size `n` under seed 0 of the protocol and
/// evaluates the estimated-MSE curve. The `τ` trace uses the bandwidth the
/// bandwidth trace selects.
pub fn tune_trace(
    cfg: &ExperimentConfig,
    table: &ClassificationTable<f64>,
    what: TuneTarget,
    n: usize,
) -> Result<Selection<f64>> {
    let ctx = prepare_seed(table, cfg, 0)?;
    let data = to_bandit(&ctx.test, &ctx.logging, cfg.reward_mode, n, replicate_seed(cfg.base_seed, 0, n, 0))?;
    let policies = PolicyTable::new(&data, &ctx.target, &ctx.logging)?;
    let base = fit_base(&data, cfg.ridge_lambda, data.action_count(), cfg.cross_fit_folds, cfg.base_kind)?;
    let g = cfg.bandwidth_grid;
    let grid = geometric_grid(g.lo, g.hi, g.count)?;
    let bandwidth = select_bandwidth_with_base(&data, &policies, &base, &grid)?;
    match what {
        TuneTarget::Bandwidth => Ok(bandwidth),
        TuneTarget::Tau => {
            let ib = IBRewardModel::from_policy_table(&data, base, bandwidth.value, &policies, None)?;
            let pred = ib.predict_table(&data)?;
            let kl_grid = kl_quantile_grid(&policies.kl, cfg.kl_grid_count, cfg.include_zero_quantile)?;
            Ok(select_tau_from_tables(&data, &policies, &pred, &kl_grid, cfg.r_max.unwrap_or(1.0))?)
        }
    }
}
