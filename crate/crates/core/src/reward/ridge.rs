use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd, Matrix};
use crate::policy::{fit_softmax_weights, LogisticOptions};
use crate::scalar::{sigmoid, Scalar};

use super::RewardModel;

/// Link applied to the linear score `zᵀθ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseKind {
    /// Plain ridge regression on reward values.
    #[default]
    Ridge,
    /// Logistic regression on rewards in `[0, 1]`; predicts `σ(zᵀθ)`.
    Logistic,
}

/// Linear base fit over `z = (x, onehot(a))`.
///
/// With cross-fitting, fold `k` holds samples `i` with `i mod folds = k` and
/// prediction for a context that originated at sample `i` uses the fit that
/// excluded fold `i mod folds`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel<T> {
    thetas: Vec<Vec<T>>,
    lambda: T,
    action_count: usize,
    context_dim: usize,
    kind: BaseKind,
}

impl<T: Scalar> RidgeModel<T> {
    /// Coefficients of the first (with one fold, the only) fit.
    pub fn theta(&self) -> &[T] {
        &self.thetas[0]
    }

    pub fn fold_thetas(&self) -> &[Vec<T>] {
        &self.thetas
    }

    pub fn folds(&self) -> usize {
        self.thetas.len()
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn kind(&self) -> BaseKind {
        self.kind
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// `z = (x, onehot(a))`.
    pub fn encode(&self, context: &[T], action: usize) -> Vec<T> {
        encode(context, action, self.action_count)
    }

    #[inline]
    fn score(theta: &[T], context: &[T], action: usize, d: usize) -> T {
        dot(&theta[..d], context) + theta[d + action]
    }

    fn link(&self, s: T) -> T {
        match self.kind {
            BaseKind::Ridge => s,
            BaseKind::Logistic => sigmoid(s),
        }
    }

    /// Prediction for a context that came from logged sample `origin`; with
    /// `None` the fold predictions are averaged.
    pub fn predict(&self, origin: Option<usize>, context: &[T], action: usize) -> T {
        let d = self.context_dim;
        match origin {
            Some(i) => self.link(Self::score(&self.thetas[i % self.thetas.len()], context, action, d)),
            None => {
                let s: T = self
                    .thetas
                    .iter()
                    .map(|t| self.link(Self::score(t, context, action, d)))
                    .sum();
                s / T::from_count(self.thetas.len())
            }
        }
    }

    /// `r_i − r̂(x_i, a_i)` with cross-fit routing.
    pub fn residuals(&self, dataset: &LoggedDataset<T>) -> Vec<T> {
        (0..dataset.len())
            .map(|i| dataset.rewards()[i] - self.predict(Some(i), dataset.context(i), dataset.actions()[i]))
            .collect()
    }
}

impl<T: Scalar> RewardModel<T> for RidgeModel<T> {
    fn predict_table(&self, dataset: &LoggedDataset<T>) -> Result<Matrix<T>> {
        if dataset.dim() != self.context_dim || dataset.action_count() != self.action_count {
            return Err(Error::DimensionMismatch {
                expected: self.context_dim,
                got: dataset.dim(),
            });
        }
        let mut m = Matrix::zeros(dataset.len(), self.action_count);
        for i in 0..dataset.len() {
            for a in 0..self.action_count {
                m.set(i, a, self.predict(Some(i), dataset.context(i), a));
            }
        }
        Ok(m)
    }
}

fn encode<T: Scalar>(context: &[T], action: usize, action_count: usize) -> Vec<T> {
    let mut z = Vec::with_capacity(context.len() + action_count);
    z.extend_from_slice(context);
    z.extend((0..action_count).map(|a| if a == action { T::one() } else { T::zero() }));
    z
}

/// Closed-form ridge coefficients `(ZᵀZ + λI)⁻¹ Zᵀ r`.
pub fn ridge_solve<T: Scalar>(z: &Matrix<T>, r: &[T], lambda: T) -> Result<Vec<T>> {
    if z.rows() != r.len() {
        return Err(Error::DimensionMismatch {
            expected: z.rows(),
            got: r.len(),
        });
    }
    let p = z.cols();
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![T::zero(); p];
    for (row, &ri) in z.iter_rows().zip(r) {
        for j in 0..p {
            if row[j] == T::zero() {
                continue;
            }
            rhs[j] += row[j] * ri;
            for k in j..p {
                let v = gram.get(j, k) + row[j] * row[k];
                gram.set(j, k, v);
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            let v = gram.get(k, j);
            gram.set(j, k, v);
        }
        let v = gram.get(j, j) + lambda;
        gram.set(j, j, v);
    }
    solve_spd(&gram, &rhs)
}

/// Ridge base fit on `z = (x, onehot(a))`; `cross_fit_folds = 1` fits once on
/// all data.
pub fn fit_ridge<T: Scalar>(
    dataset: &LoggedDataset<T>,
    lambda: T,
    action_count: usize,
    cross_fit_folds: usize,
) -> Result<RidgeModel<T>> {
    fit_base(dataset, lambda, action_count, cross_fit_folds, BaseKind::Ridge)
}

pub fn fit_base<T: Scalar>(
    dataset: &LoggedDataset<T>,
    lambda: T,
    action_count: usize,
    cross_fit_folds: usize,
    kind: BaseKind,
) -> Result<RidgeModel<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::validation("ridge penalty must be non-negative"));
    }
    if cross_fit_folds == 0 {
        return Err(Error::validation("cross-fit folds must be at least 1"));
    }
    if action_count < dataset.action_count() {
        return Err(Error::validation("action count smaller than the dataset's"));
    }
    let n = dataset.len();
    let d = dataset.dim();
    let mut thetas = Vec::with_capacity(cross_fit_folds);
    for k in 0..cross_fit_folds {
        let train: Vec<usize> = if cross_fit_folds == 1 {
            (0..n).collect()
        } else {
            (0..n).filter(|i| i % cross_fit_folds != k).collect()
        };
        let mut z = Matrix::zeros(train.len(), d + action_count);
        let mut r = Vec::with_capacity(train.len());
        for (row, &i) in train.iter().enumerate() {
            z.row_mut(row)
                .copy_from_slice(&encode(dataset.context(i), dataset.actions()[i], action_count));
            r.push(dataset.rewards()[i]);
        }
        let theta = match kind {
            BaseKind::Ridge => ridge_solve(&z, &r, lambda)?,
            BaseKind::Logistic => fit_logistic_base(&z, &r, lambda)?,
        };
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::numeric("base regression produced non-finite coefficients"));
        }
        thetas.push(theta);
    }
    Ok(RidgeModel {
        thetas,
        lambda,
        action_count,
        context_dim: d,
        kind,
    })
}

fn fit_logistic_base<T: Scalar>(z: &Matrix<T>, r: &[T], lambda: T) -> Result<Vec<T>> {
    let p = z.cols();
    if z.rows() == 0 {
        return Ok(vec![T::zero(); p]);
    }
    let mut soft = Matrix::zeros(z.rows(), 2);
    for (i, &ri) in r.iter().enumerate() {
        let y = ri.max(T::zero()).min(T::one());
        soft.set(i, 0, T::one() - y);
        soft.set(i, 1, y);
    }
    // sum-of-losses penalty λ/2‖θ‖² expressed on the mean log-likelihood
    let opts = LogisticOptions {
        l2_penalty: lambda / T::from_count(z.rows()),
        max_iters: 500,
        tolerance: T::lit(1e-6),
        intercept: false,
    };
    let w = fit_softmax_weights(z, &soft, &opts)?;
    Ok((0..p).map(|j| w.get(j, 1)).collect())
}
