use std::io::Write;

use crate::data::{DerivedDataset, LoggedDataset};
use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::policy::{DiscretePolicy, PolicyTable, WeightProfile};
use crate::scalar::Scalar;

use super::{RewardModel, RidgeModel};

/// Kernel rows whose scaled sum falls below this use the base prediction.
pub const ROW_SUM_FLOOR: f64 = 1e-12;
/// Lower bound on the residual variance.
pub const SIGMA_R_FLOOR: f64 = 1e-12;

/// Gaussian kernel truncated at equal actions, with the bandwidth inflated
/// by the importance weights of both points:
///
/// `exp(−‖x̃ − x‖² / (2h² w̃ w)) / (√(2π) h √(w̃ w)) · 𝟙(ã = a)`
#[inline]
pub fn kernel_value<T: Scalar>(
    x_test: &[T],
    x_train: &[T],
    same_action: bool,
    w_test: T,
    w_train: T,
    h: T,
) -> T {
    if !same_action {
        return T::zero();
    }
    gaussian_entry(squared_distance(x_test, x_train), w_test * w_train, h)
}

#[inline]
fn gaussian_entry<T: Scalar>(sq_dist: T, weight_product: T, h: T) -> T {
    let two_pi_sqrt = T::lit((2.0 * std::f64::consts::PI).sqrt());
    let scale = h * weight_product.sqrt();
    (-sq_dist / (T::lit(2.0) * h * h * weight_product)).exp() / (two_pi_sqrt * scale)
}

/// Materializes the `n|A| × n` cross-covariance between derived pairs and
/// logged samples.
pub fn build_cross_covariance<T: Scalar>(
    derived: &DerivedDataset,
    dataset: &LoggedDataset<T>,
    test_weights: &[T],
    train_weights: &[T],
    h: T,
) -> Result<Matrix<T>> {
    if derived.parent_n() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            got: derived.parent_n(),
        });
    }
    if test_weights.len() != derived.len() || train_weights.len() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: derived.len(),
            got: test_weights.len(),
        });
    }
    check_bandwidth(h)?;
    let mut m = Matrix::zeros(derived.len(), dataset.len());
    for (j, &(ctx, a)) in derived.pairs().iter().enumerate() {
        for i in 0..dataset.len() {
            let v = kernel_value(
                dataset.context(ctx),
                dataset.context(i),
                dataset.actions()[i] == a,
                test_weights[j],
                train_weights[i],
                h,
            );
            m.set(j, i, v);
        }
    }
    Ok(m)
}

/// Population variance of the residuals, floored at [`SIGMA_R_FLOOR`].
pub fn estimate_sigma_r<T: Scalar>(residuals: &[T]) -> T {
    if residuals.is_empty() {
        return T::lit(SIGMA_R_FLOOR);
    }
    let n = T::from_count(residuals.len());
    let mean = residuals.iter().copied().sum::<T>() / n;
    let var = residuals
        .iter()
        .map(|&e| (e - mean) * (e - mean))
        .sum::<T>()
        / n;
    var.max(T::lit(SIGMA_R_FLOOR))
}

fn check_bandwidth<T: Scalar>(h: T) -> Result<()> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(Error::validation(format!("bandwidth must be positive, got {h}")));
    }
    Ok(())
}

/// The information-borrowing reward model: the base fit plus a
/// kernel-weighted average of base residuals from same-action samples.
#[derive(Debug, Clone)]
pub struct IBRewardModel<'a, T> {
    logged: &'a LoggedDataset<T>,
    base: RidgeModel<T>,
    bandwidth: T,
    sigma_r: T,
    weights: WeightProfile<T>,
    derived_weights: Matrix<T>,
    residuals: Vec<T>,
    base_table: Matrix<T>,
    samples_by_action: Vec<Vec<usize>>,
}

impl<'a, T: Scalar> IBRewardModel<'a, T> {
    /// Builds the model; weights are `π/μ` with the logged propensity for
    /// samples and the logging policy for derived pairs.
    pub fn fit(
        logged: &'a LoggedDataset<T>,
        base: RidgeModel<T>,
        bandwidth: T,
        target: &DiscretePolicy<T>,
        logging: &DiscretePolicy<T>,
    ) -> Result<Self> {
        let table = PolicyTable::new(logged, target, logging)?;
        Self::from_policy_table(logged, base, bandwidth, &table, None)
    }

    /// Builds the model from precomputed policy quantities, optionally
    /// capping every weight.
    pub fn from_policy_table(
        logged: &'a LoggedDataset<T>,
        base: RidgeModel<T>,
        bandwidth: T,
        table: &PolicyTable<T>,
        cap: Option<T>,
    ) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        let mut derived_weights = table.derived_weights()?;
        let mut w = table.logged_weights.clone();
        if let Some(c) = cap {
            w.iter_mut().for_each(|v| *v = v.min(c));
            for i in 0..derived_weights.rows() {
                derived_weights.row_mut(i).iter_mut().for_each(|v| *v = v.min(c));
            }
        }
        if w.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::numeric("logged importance weights must be positive and finite"));
        }
        let weights = WeightProfile::from_parts(w, cap);
        let residuals = base.residuals(logged);
        let sigma_r = estimate_sigma_r(&residuals);
        let base_table = base.predict_table(logged)?;
        let mut samples_by_action = vec![Vec::new(); logged.action_count()];
        for (i, &a) in logged.actions().iter().enumerate() {
            samples_by_action[a].push(i);
        }
        Ok(Self {
            logged,
            base,
            bandwidth,
            sigma_r,
            weights,
            derived_weights,
            residuals,
            base_table,
            samples_by_action,
        })
    }

    /// Same model with another bandwidth; nothing is refit.
    pub fn with_bandwidth(&self, bandwidth: T) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self {
            bandwidth,
            ..self.clone()
        })
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    pub fn sigma_r(&self) -> T {
        self.sigma_r
    }

    pub fn base(&self) -> &RidgeModel<T> {
        &self.base
    }

    pub fn residuals(&self) -> &[T] {
        &self.residuals
    }

    pub fn weights(&self) -> &WeightProfile<T> {
        &self.weights
    }

    /// `w̃` for every (context, action) pair, `n × |A|`.
    pub fn derived_weights(&self) -> &Matrix<T> {
        &self.derived_weights
    }

    pub fn logged(&self) -> &'a LoggedDataset<T> {
        self.logged
    }

    /// `r̂_IB` over the derived dataset, in its pair order.
    ///
    /// For pair `j` with kernel row `S_j = Σ_j / σ_r` and row sum `D_j`,
    /// `r̂_IB(j) = z̃_jᵀθ + (1/D_j) Σ_i S_ji (r_i − z_iᵀθ)`.
    pub fn predict(&self, derived: &DerivedDataset) -> Result<Vec<T>> {
        if derived.parent_n() != self.logged.len() || derived.action_count() != self.logged.action_count() {
            return Err(Error::DimensionMismatch {
                expected: self.logged.len() * self.logged.action_count(),
                got: derived.len(),
            });
        }
        derived
            .pairs()
            .iter()
            .enumerate()
            .map(|(j, &(ctx, a))| {
                let v = self.predict_pair(ctx, a);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::numeric(format!(
                        "non-finite information-borrowing prediction at derived pair {j} (context {ctx}, action {a})"
                    )))
                }
            })
            .collect()
    }

    fn predict_pair(&self, ctx: usize, action: usize) -> T {
        let base = self.base_table.get(ctx, action);
        let x = self.logged.context(ctx);
        let w_test = self.derived_weights.get(ctx, action);
        let w = self.weights.weights();
        let inv_sigma = T::one() / self.sigma_r;
        let mut row_sum = T::zero();
        let mut borrowed = T::zero();
        for &i in &self.samples_by_action[action] {
            let d2 = squared_distance(x, self.logged.context(i));
            let s = gaussian_entry(d2, w_test * w[i], self.bandwidth) * inv_sigma;
            row_sum += s;
            borrowed += s * self.residuals[i];
        }
        if row_sum < T::lit(ROW_SUM_FLOOR) {
            base
        } else {
            base + borrowed / row_sum
        }
    }
}

impl<T: Scalar> RewardModel<T> for IBRewardModel<'_, T> {
    fn predict_table(&self, dataset: &LoggedDataset<T>) -> Result<Matrix<T>> {
        if !std::ptr::eq(dataset, self.logged) && dataset != self.logged {
            return Err(Error::validation(
                "information-borrowing predictions are defined on the logged dataset only",
            ));
        }
        let n = self.logged.len();
        let k = self.logged.action_count();
        let mut m = Matrix::zeros(n, k);
        for i in 0..n {
            for a in 0..k {
                let v = self.predict_pair(i, a);
                if !v.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite information-borrowing prediction at derived pair {} (context {i}, action {a})",
                        i * k + a
                    )));
                }
                m.set(i, a, v);
            }
        }
        Ok(m)
    }
}

/// Residuals of the base fit and, when the true mean reward is known, the
/// pointwise error `r̂_IB(x, a) − E[r | x, a]` over derived pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDiagnostics<T> {
    pub residuals: Vec<T>,
    pub ib_bias_probe: Option<Vec<T>>,
}

impl<T: Scalar> RewardDiagnostics<T> {
    pub fn collect(
        model: &IBRewardModel<'_, T>,
        derived: &DerivedDataset,
        oracle: Option<&dyn Fn(&[T], usize) -> T>,
    ) -> Result<Self> {
        let probe = match oracle {
            Some(f) => {
                let pred = model.predict(derived)?;
                Some(
                    derived
                        .pairs()
                        .iter()
                        .zip(pred)
                        .map(|(&(i, a), p)| p - f(model.logged().context(i), a))
                        .collect(),
                )
            }
            None => None,
        };
        Ok(Self {
            residuals: model.residuals().to_vec(),
            ib_bias_probe: probe,
        })
    }

    /// Long-format CSV: `kind,index,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "index", "value"])?;
        for (i, e) in self.residuals.iter().enumerate() {
            w.write_record(["residual", &i.to_string(), &e.to_string()])?;
        }
        if let Some(p) = &self.ib_bias_probe {
            for (j, e) in p.iter().enumerate() {
                w.write_record(["ib_bias", &j.to_string(), &e.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
