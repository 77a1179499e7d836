use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::scalar::Scalar;

use super::RewardModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NwVariant {
    /// Kernel over `z = (x, onehot(a))`, borrowing across actions.
    Plain,
    /// Context distance, restricted to samples with the same action.
    ActionTruncated,
    /// Action-truncated with the distance divided by `w_test · w_i`.
    Adaptive,
}

/// Weights needed by [`NwVariant::Adaptive`].
#[derive(Debug, Clone, PartialEq)]
pub struct NwWeights<T> {
    /// `w_i` for logged samples.
    pub logged: Vec<T>,
    /// `w̃` for every logged context and action, `n × |A|`.
    pub derived: Matrix<T>,
}

/// Nadaraya-Watson regression with the kernel `exp(−h‖z − z_i‖)`.
///
/// Note the bandwidth multiplies the distance: larger `h` is a narrower
/// kernel.
#[derive(Debug, Clone)]
pub struct NWModel<'a, T> {
    pub bandwidth: T,
    pub variant: NwVariant,
    pub logged: &'a LoggedDataset<T>,
    pub weights: Option<NwWeights<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NwPrediction<T> {
    pub value: T,
    /// Set when a truncated variant found no same-action sample and fell
    /// back to the untruncated average.
    pub fell_back: bool,
}

impl<'a, T: Scalar> NWModel<'a, T> {
    pub fn new(logged: &'a LoggedDataset<T>, bandwidth: T, variant: NwVariant) -> Result<Self> {
        if !(bandwidth > T::zero()) {
            return Err(Error::validation("NW bandwidth must be positive"));
        }
        Ok(Self {
            bandwidth,
            variant,
            logged,
            weights: None,
        })
    }

    pub fn with_weights(mut self, weights: NwWeights<T>) -> Self {
        self.weights = Some(weights);
        self
    }

    /// Prediction at `(context, action)`. `weights` carries `(w_test, w_i)`
    /// for the adaptive variant.
    pub fn predict_nw(
        &self,
        context: &[T],
        action: usize,
        weights: Option<(T, &[T])>,
    ) -> Result<NwPrediction<T>> {
        self.predict_excluding(context, action, weights, None)
    }

    fn predict_excluding(
        &self,
        context: &[T],
        action: usize,
        weights: Option<(T, &[T])>,
        exclude: Option<usize>,
    ) -> Result<NwPrediction<T>> {
        let data = self.logged;
        if context.len() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: context.len(),
            });
        }
        if self.variant == NwVariant::Adaptive && weights.is_none() {
            return Err(Error::validation("adaptive NW needs importance weights"));
        }
        let truncated = self.variant != NwVariant::Plain;
        let keep = |i: usize| Some(i) != exclude;
        let has_same = (0..data.len()).any(|i| keep(i) && data.actions()[i] == action);
        let fell_back = truncated && !has_same;

        // log-kernel values, then a max-shifted weighted average
        let mut logk: Vec<(usize, T)> = Vec::with_capacity(data.len());
        for i in (0..data.len()).filter(|&i| keep(i)) {
            let same = data.actions()[i] == action;
            if truncated && !fell_back && !same {
                continue;
            }
            let mut d2 = squared_distance(context, data.context(i));
            if self.variant == NwVariant::Plain && !same {
                // one-hot action coordinates differ in two places
                d2 += T::lit(2.0);
            }
            let mut dist = d2.sqrt();
            if self.variant == NwVariant::Adaptive && !fell_back {
                let (wt, wl) = weights.expect("checked above");
                dist = dist / (wt * wl[i]);
            }
            logk.push((i, -self.bandwidth * dist));
        }
        if logk.is_empty() {
            return Err(Error::validation("NW model has no samples to average"));
        }
        let max = logk.iter().map(|&(_, l)| l).fold(T::neg_infinity(), T::max);
        let (mut num, mut den) = (T::zero(), T::zero());
        for &(i, l) in &logk {
            let k = (l - max).exp();
            num += k * data.rewards()[i];
            den += k;
        }
        Ok(NwPrediction {
            value: num / den,
            fell_back,
        })
    }
}

impl<T: Scalar> RewardModel<T> for NWModel<'_, T> {
    fn predict_table(&self, dataset: &LoggedDataset<T>) -> Result<Matrix<T>> {
        if self.variant == NwVariant::Adaptive && self.weights.is_none() {
            return Err(Error::validation("adaptive NW needs importance weights"));
        }
        let mut m = Matrix::zeros(dataset.len(), dataset.action_count());
        for i in 0..dataset.len() {
            for a in 0..dataset.action_count() {
                let w = self
                    .weights
                    .as_ref()
                    .map(|w| (w.derived.get(i, a), w.logged.as_slice()));
                m.set(i, a, self.predict_nw(dataset.context(i), a, w)?.value);
            }
        }
        Ok(m)
    }
}

/// 20 log-spaced bandwidths between 0.01 and 100.
pub fn default_nw_grid<T: Scalar>() -> Vec<T> {
    (0..20)
        .map(|k| T::lit(10f64.powf(-2.0 + 4.0 * k as f64 / 19.0)))
        .collect()
}

/// Grid bandwidth with the smallest mean squared leave-one-out error; ties
/// go to the smaller bandwidth.
pub fn loo_cv_bandwidth<T: Scalar>(
    dataset: &LoggedDataset<T>,
    grid: &[T],
    variant: NwVariant,
    logged_weights: Option<&[T]>,
) -> Result<T> {
    if dataset.len() < 2 {
        return Err(Error::validation("leave-one-out needs at least 2 samples"));
    }
    if grid.is_empty() {
        return Err(Error::validation("bandwidth grid is empty"));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].partial_cmp(&grid[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut best: Option<(T, T)> = None;
    for &g in &order {
        let h = grid[g];
        let model = NWModel::new(dataset, h, variant)?;
        let mut sse = T::zero();
        for i in 0..dataset.len() {
            let w = logged_weights.map(|w| (w[i], w));
            let p = model.predict_excluding(dataset.context(i), dataset.actions()[i], w, Some(i))?;
            let e = p.value - dataset.rewards()[i];
            sse += e * e;
        }
        let mse = sse / T::from_count(dataset.len());
        if best.map_or(true, |(b, _)| mse < b) {
            best = Some((mse, h));
        }
    }
    Ok(best.expect("grid non-empty").1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(xs: &[f64], actions: &[usize], rewards: &[f64]) -> LoggedDataset<f64> {
        let c = Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap();
        LoggedDataset::new(c, actions.to_vec(), rewards.to_vec(), vec![0.5; xs.len()], 2).unwrap()
    }

    #[test]
    fn constant_rewards_predict_constant() {
        let d = data(&[0.0, 1.0, 5.0], &[0, 1, 0], &[0.3, 0.3, 0.3]);
        for v in [NwVariant::Plain, NwVariant::ActionTruncated] {
            let m = NWModel::new(&d, 2.0, v).unwrap();
            assert!((m.predict_nw(&[0.7], 1, None).unwrap().value - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn single_sample_and_symmetry() {
        let d = data(&[2.0], &[1], &[0.8]);
        let m = NWModel::new(&d, 1.0, NwVariant::Plain).unwrap();
        assert_eq!(m.predict_nw(&[-3.0], 1, None).unwrap().value, 0.8);
        let d = data(&[-1.0, 1.0], &[0, 0], &[0.0, 1.0]);
        let m = NWModel::new(&d, 1.0, NwVariant::Plain).unwrap();
        assert!((m.predict_nw(&[0.0], 0, None).unwrap().value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn truncated_fallback_is_flagged() {
        let d = data(&[0.0, 1.0], &[0, 0], &[0.0, 1.0]);
        let m = NWModel::new(&d, 1.0, NwVariant::ActionTruncated).unwrap();
        let p = m.predict_nw(&[0.5], 1, None).unwrap();
        assert!(p.fell_back);
        assert!((p.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adaptive_requires_weights() {
        let d = data(&[0.0, 1.0], &[0, 1], &[0.0, 1.0]);
        let m = NWModel::new(&d, 1.0, NwVariant::Adaptive).unwrap();
        assert!(m.predict_nw(&[0.5], 1, None).is_err());
        assert!(m.predict_nw(&[0.5], 1, Some((1.0, &[1.0, 2.0]))).is_ok());
    }

    #[test]
    fn default_grid_endpoints() {
        let g: Vec<f64> = default_nw_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.01).abs() < 1e-15);
        assert!((g[19] - 100.0).abs() < 1e-10);
    }

    #[test]
    fn loo_single_value_grid() {
        let d = data(&[0.0, 1.0, 2.0], &[0, 1, 0], &[0.0, 1.0, 1.0]);
        assert_eq!(loo_cv_bandwidth(&d, &[3.0], NwVariant::Plain, None).unwrap(), 3.0);
    }
}
