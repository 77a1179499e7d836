//! Estimated-MSE tuning of the DR-IC threshold `τ`, the kernel bandwidth
//! and the switch-DR weight threshold, plus grid construction.

use std::io::Write;

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::estimators::{terms, SwitchBase};
use crate::linalg::Matrix;
use crate::policy::{DiscretePolicy, PolicyTable};
use crate::reward::{fit_ridge, IBRewardModel, RewardModel, RidgeModel};
use crate::scalar::{mean, Scalar};

/// Floor applied to non-positive KL grid endpoints before geometric spacing.
pub const KL_ENDPOINT_FLOOR: f64 = 1e-9;

// ── Grids ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridConstruction {
    Geometric { lo: f64, hi: f64, count: usize },
    KlQuantile { lo_level: f64, hi_level: f64, count: usize, include_zero_quantile: bool },
    Explicit,
}

/// Strictly ascending, finite grid of tuning values.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid<T> {
    values: Vec<T>,
    construction: GridConstruction,
}

impl<T: Scalar> TuningGrid<T> {
    /// Grid from explicit values; they must be finite and strictly ascending.
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        Self::checked(values, GridConstruction::Explicit)
    }

    fn checked(values: Vec<T>, construction: GridConstruction) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("tuning grid is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("tuning grid values must be finite"));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::validation("tuning grid must be strictly ascending"));
        }
        Ok(Self { values, construction })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn construction(&self) -> GridConstruction {
        self.construction
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn geometric_values(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let ratio = hi / lo;
    (0..count)
        .map(|k| {
            if k == 0 {
                lo
            } else if k + 1 == count {
                hi
            } else {
                lo * ratio.powf(k as f64 / (count - 1) as f64)
            }
        })
        .collect()
}

/// `lo · (hi/lo)^{k/(count−1)}` for `k = 0..count`.
pub fn geometric_grid<T: Scalar>(lo: f64, hi: f64, count: usize) -> Result<TuningGrid<T>> {
    if !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
        return Err(Error::validation(format!(
            "geometric grid needs 0 < lo < hi, got lo={lo}, hi={hi}"
        )));
    }
    if count < 2 {
        return Err(Error::validation("geometric grid needs at least 2 values"));
    }
    let values = dedup(geometric_values(lo, hi, count).into_iter().map(T::lit).collect());
    TuningGrid::checked(values, GridConstruction::Geometric { lo, hi, count })
}

/// The default bandwidth grid: 30 geometric values in `[0.01, 15]`.
pub fn default_bandwidth_grid<T: Scalar>() -> TuningGrid<T> {
    geometric_grid(0.01, 15.0, 30).expect("valid constant grid")
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::validation(format!("quantile level {level} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(quantile_sorted(&sorted, level))
}

fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let pos = level * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn dedup<T: Scalar>(mut values: Vec<T>) -> Vec<T> {
    values.dedup();
    values
}

/// Geometric grid in KL-value space between the 0.01 and 1.0 quantiles of
/// the per-sample KL values, optionally with the minimum KL value prepended.
///
/// All samples take part in the quantiles, including those with zero KL.
pub fn kl_quantile_grid<T: Scalar>(
    kl_values: &[T],
    count: usize,
    include_zero_quantile: bool,
) -> Result<TuningGrid<T>> {
    kl_quantile_grid_levels(kl_values, 0.01, 1.0, count, include_zero_quantile)
}

pub fn kl_quantile_grid_levels<T: Scalar>(
    kl_values: &[T],
    lo_level: f64,
    hi_level: f64,
    count: usize,
    include_zero_quantile: bool,
) -> Result<TuningGrid<T>> {
    if kl_values.is_empty() {
        return Err(Error::validation("KL grid needs at least one KL value"));
    }
    if count < 2 {
        return Err(Error::validation("KL grid needs at least 2 values"));
    }
    if !(lo_level <= hi_level) {
        return Err(Error::validation("KL grid quantile levels out of order"));
    }
    let mut sorted: Vec<f64> = kl_values.iter().map(|v| v.as_f64()).collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("KL values must be finite"));
    }
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = quantile_sorted(&sorted, lo_level).max(KL_ENDPOINT_FLOOR);
    let hi = quantile_sorted(&sorted, hi_level).max(KL_ENDPOINT_FLOOR);
    let spaced = if hi > lo {
        geometric_values(lo, hi, count)
    } else {
        vec![lo]
    };
    let mut values: Vec<T> = Vec::with_capacity(count + 1);
    if include_zero_quantile {
        let min = sorted[0];
        if min < spaced[0] {
            values.push(T::lit(min));
        }
    }
    values.extend(spaced.into_iter().map(T::lit));
    TuningGrid::checked(
        dedup(values),
        GridConstruction::KlQuantile {
            lo_level,
            hi_level,
            count,
            include_zero_quantile,
        },
    )
}

// ── MSE pieces ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate<T> {
    pub bias_sq_tilde: T,
    pub bias_ub: T,
    pub bias_sq_hat: T,
    pub variance_hat: T,
    pub total: T,
}

impl<T: Scalar> MseEstimate<T> {
    pub fn new(bias_sq_tilde: T, bias_ub: T, variance_hat: T) -> Self {
        let bias_sq_hat = bias_sq_tilde.min(bias_ub * bias_ub);
        Self {
            bias_sq_tilde,
            bias_ub,
            bias_sq_hat,
            variance_hat,
            total: bias_sq_hat + variance_hat,
        }
    }

    /// Estimate without an upper bound, so `bias_sq_hat = bias_sq_tilde`.
    pub fn unbounded(bias_sq_tilde: T, variance_hat: T) -> Self {
        Self::new(bias_sq_tilde, T::infinity(), variance_hat)
    }
}

/// `(1/n²) Σ (Y_i − Ȳ)²`, the variance of the mean.
pub fn variance_estimate<T: Scalar>(per_sample: &[T]) -> T {
    if per_sample.is_empty() {
        return T::zero();
    }
    let m = mean(per_sample);
    let n = T::from_count(per_sample.len());
    per_sample.iter().map(|&y| (y - m) * (y - m)).sum::<T>() / (n * n)
}

pub fn bias_tilde_sq<T: Scalar>(estimate: T, ips_value: T) -> T {
    let d = estimate - ips_value;
    d * d
}

/// `R_max` times the fraction of samples with `D_KL(x_i) ≥ τ`.
pub fn bias_ub<T: Scalar>(kl_values: &[T], tau: T, r_max: T) -> T {
    if kl_values.is_empty() {
        return T::zero();
    }
    let above = kl_values.iter().filter(|&&k| k >= tau).count();
    r_max * T::from_count(above) / T::from_count(kl_values.len())
}

/// `R_max (1/n) Σ_i Σ_a π(a|x_i) 𝟙{w(x_i, a) > τ_w}`: the probability mass
/// switch-DR hands to the reward model.
pub fn switch_bias_ub<T: Scalar>(target: &Matrix<T>, derived_weights: &Matrix<T>, tau_w: T, r_max: T) -> T {
    let n = target.rows();
    if n == 0 {
        return T::zero();
    }
    let mut mass = T::zero();
    for i in 0..n {
        for a in 0..target.cols() {
            if derived_weights.get(i, a) > tau_w {
                mass += target.get(i, a);
            }
        }
    }
    r_max * mass / T::from_count(n)
}

/// `R_max`: 1 for classification-derived rewards, otherwise the largest
/// observed reward.
pub fn default_r_max<T: Scalar>(dataset: &LoggedDataset<T>, classification: bool) -> Result<T> {
    if classification {
        return Ok(T::one());
    }
    let m = dataset.rewards().iter().copied().fold(T::neg_infinity(), T::max);
    if m > T::zero() {
        Ok(m)
    } else {
        Err(Error::validation("R_max must be positive; no positive reward observed"))
    }
}

fn argmin<T: Scalar>(points: &[MseEstimate<T>]) -> usize {
    // strict comparison keeps the earliest (smallest) grid value on ties
    let mut best = 0;
    for (k, p) in points.iter().enumerate().skip(1) {
        if p.total < points[best].total {
            best = k;
        }
    }
    best
}

/// Grid evaluation result: the chosen value, its index and every estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub value: T,
    pub index: usize,
    pub grid: Vec<T>,
    pub estimates: Vec<MseEstimate<T>>,
}

impl<T: Scalar> Selection<T> {
    fn from_points(grid: &TuningGrid<T>, estimates: Vec<MseEstimate<T>>) -> Self {
        let index = argmin(&estimates);
        Self {
            value: grid.values()[index],
            index,
            grid: grid.values().to_vec(),
            estimates,
        }
    }

    pub fn best(&self) -> &MseEstimate<T> {
        &self.estimates[self.index]
    }

    /// One row per grid value: `value,bias_sq_tilde,bias_ub,bias_sq_hat,variance_hat,total`.
    pub fn write_trace<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["value", "bias_sq_tilde", "bias_ub", "bias_sq_hat", "variance_hat", "total"])?;
        for (v, e) in self.grid.iter().zip(&self.estimates) {
            w.write_record([
                v.to_string(),
                e.bias_sq_tilde.to_string(),
                e.bias_ub.to_string(),
                e.bias_sq_hat.to_string(),
                e.variance_hat.to_string(),
                e.total.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_r_max<T: Scalar>(r_max: T) -> Result<()> {
    if r_max > T::zero() && r_max.is_finite() {
        Ok(())
    } else {
        Err(Error::validation("R_max must be positive and finite"))
    }
}

// ── Threshold selection ─────────────────────────────────────────────────────

/// `τ̂` over precomputed tables: `ib_predictions` is the IB prediction table
/// and `table` must carry KL values.
pub fn select_tau_from_tables<T: Scalar>(
    dataset: &LoggedDataset<T>,
    table: &PolicyTable<T>,
    ib_predictions: &Matrix<T>,
    grid: &TuningGrid<T>,
    r_max: T,
) -> Result<Selection<T>> {
    check_r_max(r_max)?;
    if table.kl.len() != dataset.len() {
        return Err(Error::validation("policy table was built without KL values"));
    }
    let v_ips = mean(&terms::ips(dataset, &table.logged_weights));
    let dm_terms = terms::dm(&table.target, ib_predictions);
    let estimates = grid
        .values()
        .iter()
        .map(|&tau| {
            let y = terms::dr_ic_from_dm(dataset, table, ib_predictions, &dm_terms, tau);
            MseEstimate::new(
                bias_tilde_sq(mean(&y), v_ips),
                bias_ub(&table.kl, tau, r_max),
                variance_estimate(&y),
            )
        })
        .collect();
    Ok(Selection::from_points(grid, estimates))
}

/// Picks the DR-IC threshold minimizing `B̂ias²(τ) + V̂ar(τ)` over the grid.
pub fn select_tau<T: Scalar>(
    dataset: &LoggedDataset<T>,
    target: &DiscretePolicy<T>,
    logging: &DiscretePolicy<T>,
    ib: &IBRewardModel<'_, T>,
    grid: &TuningGrid<T>,
    r_max: T,
) -> Result<Selection<T>> {
    let table = PolicyTable::new(dataset, target, logging)?;
    let pred = ib.predict_table(dataset)?;
    select_tau_from_tables(dataset, &table, &pred, grid, r_max)
}

/// Estimated MSE of DR-IC at `τ = +∞` for each bandwidth; `base` is reused
/// for every grid value.
pub fn select_bandwidth_with_base<T: Scalar>(
    dataset: &LoggedDataset<T>,
    table: &PolicyTable<T>,
    base: &RidgeModel<T>,
    grid: &TuningGrid<T>,
) -> Result<Selection<T>> {
    let first = IBRewardModel::from_policy_table(dataset, base.clone(), grid.values()[0], table, None)?;
    let v_ips = mean(&terms::ips(dataset, &table.logged_weights));
    let mut estimates = Vec::with_capacity(grid.len());
    for &h in grid.values() {
        let pred = first.with_bandwidth(h)?.predict_table(dataset)?;
        let y = terms::dr_ic(dataset, table, &pred, T::infinity());
        estimates.push(MseEstimate::unbounded(bias_tilde_sq(mean(&y), v_ips), variance_estimate(&y)));
    }
    Ok(Selection::from_points(grid, estimates))
}

/// Bandwidth selection at `τ = +∞` with a freshly fit ridge base.
pub fn select_bandwidth<T: Scalar>(
    dataset: &LoggedDataset<T>,
    target: &DiscretePolicy<T>,
    logging: &DiscretePolicy<T>,
    grid: &TuningGrid<T>,
    lambda: T,
    folds: usize,
) -> Result<Selection<T>> {
    let table = PolicyTable::new(dataset, target, logging)?;
    let base = fit_ridge(dataset, lambda, dataset.action_count(), folds)?;
    select_bandwidth_with_base(dataset, &table, &base, grid)
}

/// Quantile levels bounding the switch-DR weight grid.
pub const SWITCH_GRID_LEVELS: (f64, f64) = (0.05, 0.95);

/// Default number of switch-DR weight thresholds.
pub const SWITCH_GRID_COUNT: usize = 25;

/// Geometric weight thresholds between the 0.05 and 0.95 quantiles of the
/// given importance weights, built like the KL grid.
pub fn switch_weight_grid<T: Scalar>(weights: &[T], count: usize) -> Result<TuningGrid<T>> {
    if weights.is_empty() {
        return Err(Error::validation("switch grid needs at least one weight"));
    }
    let (lo, hi) = SWITCH_GRID_LEVELS;
    kl_quantile_grid_levels(weights, lo, hi, count, false)
}

/// Picks the switch-DR weight threshold by the analogous estimated MSE,
/// with the bias bounded by the target mass routed to the reward model.
pub fn select_switch_threshold<T: Scalar>(
    dataset: &LoggedDataset<T>,
    table: &PolicyTable<T>,
    predictions: &Matrix<T>,
    grid: &TuningGrid<T>,
    base: SwitchBase,
    r_max: T,
) -> Result<Selection<T>> {
    check_r_max(r_max)?;
    let derived = table.derived_weights()?;
    let v_ips = mean(&terms::ips(dataset, &table.logged_weights));
    let estimates = grid
        .values()
        .iter()
        .map(|&tau_w| {
            let y = terms::switch_dr(dataset, table, predictions, tau_w, base);
            MseEstimate::new(
                bias_tilde_sq(mean(&y), v_ips),
                switch_bias_ub(&table.target, &derived, tau_w, r_max),
                variance_estimate(&y),
            )
        })
        .collect();
    Ok(Selection::from_points(grid, estimates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn variance_examples() {
        assert_eq!(variance_estimate(&[0.3f64; 5]), 0.0);
        assert_abs_diff_eq!(variance_estimate(&[0.0f64, 1.0]), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(variance_estimate(&[1.0f64, 2.0, 3.0]), 2.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn bias_tilde_examples() {
        assert_eq!(bias_tilde_sq(0.5f64, 0.5), 0.0);
        assert_abs_diff_eq!(bias_tilde_sq(0.4f64, 0.7), 0.09, epsilon = 1e-15);
        assert_eq!(bias_tilde_sq(0.4f64, 0.7), bias_tilde_sq(0.7, 0.4));
    }

    #[test]
    fn bias_ub_examples() {
        let kl = [0.1f64, 0.2, 0.3, 0.4];
        assert_eq!(bias_ub(&kl, 0.5, 1.0), 0.0);
        assert_eq!(bias_ub(&kl, 0.1, 1.0), 1.0);
        assert_eq!(bias_ub(&kl, 0.25, 1.0), 0.5);
    }

    #[test]
    fn mse_estimate_takes_min() {
        let e = MseEstimate::new(0.09f64, 0.2, 0.01);
        assert_abs_diff_eq!(e.bias_sq_hat, 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(e.total, 0.05, epsilon = 1e-15);
        let u = MseEstimate::unbounded(0.09f64, 0.01);
        assert_eq!(u.bias_sq_hat, 0.09);
    }

    #[test]
    fn geometric_grid_examples() {
        let g: TuningGrid<f64> = default_bandwidth_grid();
        assert_eq!(g.len(), 30);
        assert_eq!(g.values()[0], 0.01);
        assert_eq!(g.values()[29], 15.0);
        assert_abs_diff_eq!(g.values()[1], 0.01 * 1500f64.powf(1.0 / 29.0), epsilon = 1e-15);
        assert_abs_diff_eq!(g.values()[1], 0.012868, epsilon = 1e-6);
        assert!(geometric_grid::<f64>(1.0, 1.0, 5).is_err());
        assert!(geometric_grid::<f64>(2.0, 1.0, 5).is_err());
        assert!(geometric_grid::<f64>(0.0, 1.0, 5).is_err());
        assert!(geometric_grid::<f64>(0.1, 1.0, 1).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert_abs_diff_eq!(quantile(&v, 0.5).unwrap(), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(quantile(&v, 0.01).unwrap(), 1.03, epsilon = 1e-12);
    }

    #[test]
    fn kl_grid_constant_collapses() {
        let g = kl_quantile_grid(&[0.7f64; 12], 30, true).unwrap();
        assert_eq!(g.values(), &[0.7]);
    }

    #[test]
    fn kl_grid_endpoints_and_ratio() {
        let kl: Vec<f64> = (1..=50).map(|k| 0.03 * k as f64).collect();
        let g = kl_quantile_grid(&kl, 30, false).unwrap();
        let v = g.values();
        assert_eq!(v.len(), 30);
        assert_abs_diff_eq!(v[0], quantile(&kl, 0.01).unwrap(), epsilon = 1e-12);
        assert_abs_diff_eq!(v[29], 1.5, epsilon = 1e-12);
        let r = v[1] / v[0];
        for w in v.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-9);
        }
        let with_min = kl_quantile_grid(&kl, 30, true).unwrap();
        assert_eq!(with_min.len(), 31);
        assert_eq!(with_min.values()[0], 0.03);
    }

    #[test]
    fn kl_grid_floors_zero_endpoints() {
        let kl = [0.0f64, 0.0, 0.0, 0.5];
        let g = kl_quantile_grid(&kl, 5, true).unwrap();
        assert_eq!(g.values()[0], 0.0);
        assert_eq!(g.values()[1], KL_ENDPOINT_FLOOR);
        assert_abs_diff_eq!(*g.values().last().unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn argmin_prefers_earliest_tie() {
        let pts = [
            MseEstimate::unbounded(0.1f64, 0.0),
            MseEstimate::unbounded(0.1, 0.0),
            MseEstimate::unbounded(0.2, 0.0),
        ];
        assert_eq!(argmin(&pts), 0);
        let inc = [MseEstimate::unbounded(0.1f64, 0.0), MseEstimate::unbounded(0.2, 0.0)];
        assert_eq!(argmin(&inc), 0);
    }

    #[test]
    fn explicit_grid_validation() {
        assert!(TuningGrid::<f64>::from_values(vec![]).is_err());
        assert!(TuningGrid::from_values(vec![1.0, 1.0]).is_err());
        assert!(TuningGrid::from_values(vec![1.0, f64::NAN]).is_err());
        assert!(TuningGrid::from_values(vec![0.5, 1.0]).is_ok());
    }

    #[test]
    fn switch_grid_spans_inner_quantiles() {
        let w: Vec<f64> = (1..=100).map(f64::from).collect();
        let g = switch_weight_grid(&w, SWITCH_GRID_COUNT).unwrap();
        assert_eq!(g.len(), 25);
        // linear interpolation: position 99·0.05 = 4.95 lies between 5 and 6
        assert_abs_diff_eq!(g.values()[0], 5.95, epsilon = 1e-12);
        assert_abs_diff_eq!(g.values()[24], 95.05, epsilon = 1e-12);
    }
}
