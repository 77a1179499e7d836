//! Discrete-action policies, multinomial-logistic training, importance
//! weights and the per-context KL divergence used for switching.

use std::fmt::Write as _;

use rand::Rng;

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{sigmoid, Scalar};

/// Tolerance on `Σ_a π(a|x) = 1` for tabulated probability rows.
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyForm<T> {
    /// Every action equally likely.
    Uniform,
    /// One probability row per categorical context; the first context
    /// coordinate is read as the row index.
    Table(Matrix<T>),
    /// Softmax over `xᵀW`. `weights` has one row per feature (plus a final
    /// intercept row when `intercept` is set) and one column per action.
    Logistic { weights: Matrix<T>, intercept: bool },
    /// Two actions with `p(1|x) = σ(slope · x₀)`.
    Sigmoid { slope: T },
}

/// A conditional distribution `π(a|x)` over a finite action set.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePolicy<T> {
    form: PolicyForm<T>,
    action_count: usize,
}

impl<T: Scalar> DiscretePolicy<T> {
    pub fn uniform(action_count: usize) -> Result<Self> {
        if action_count == 0 {
            return Err(Error::validation("policy needs at least one action"));
        }
        Ok(Self {
            form: PolicyForm::Uniform,
            action_count,
        })
    }

    pub fn table(rows: Matrix<T>) -> Result<Self> {
        if rows.rows() == 0 || rows.cols() == 0 {
            return Err(Error::validation("tabular policy needs rows and actions"));
        }
        for (r, row) in rows.iter_rows().enumerate() {
            if row.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) {
                return Err(Error::validation(format!(
                    "tabular policy row {r} has a negative or non-finite probability"
                )));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs().as_f64() > SUM_TOLERANCE {
                return Err(Error::validation(format!(
                    "tabular policy row {r} sums to {s}, not 1"
                )));
            }
        }
        let action_count = rows.cols();
        Ok(Self {
            form: PolicyForm::Table(rows),
            action_count,
        })
    }

    pub fn logistic(weights: Matrix<T>, intercept: bool) -> Result<Self> {
        if weights.cols() < 1 || weights.rows() < usize::from(intercept) + 1 {
            return Err(Error::validation("logistic policy weight matrix is too small"));
        }
        if !weights.all_finite() {
            return Err(Error::numeric("logistic policy weights are not finite"));
        }
        let action_count = weights.cols();
        Ok(Self {
            form: PolicyForm::Logistic { weights, intercept },
            action_count,
        })
    }

    pub fn sigmoid(slope: T) -> Self {
        Self {
            form: PolicyForm::Sigmoid { slope },
            action_count: 2,
        }
    }

    /// Logging policy of the two-action toy problem: `μ(1|x) = e^{5x}/(1+e^{5x})`.
    pub fn toy_logging() -> Self {
        Self::sigmoid(T::lit(5.0))
    }

    /// Target policy of the toy problem: `π(1|x) = e^{-5x}/(1+e^{-5x})`.
    pub fn toy_target() -> Self {
        Self::sigmoid(T::lit(-5.0))
    }

    pub fn form(&self) -> &PolicyForm<T> {
        &self.form
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Context dimension the policy requires, if it fixes one.
    pub fn context_dim(&self) -> Option<usize> {
        match &self.form {
            PolicyForm::Logistic { weights, intercept } => {
                Some(weights.rows() - usize::from(*intercept))
            }
            _ => None,
        }
    }

    /// Writes `π(·|x)` into `out` (length `action_count`).
    pub fn probabilities_into(&self, context: &[T], out: &mut [T]) -> Result<()> {
        if out.len() != self.action_count {
            return Err(Error::DimensionMismatch {
                expected: self.action_count,
                got: out.len(),
            });
        }
        match &self.form {
            PolicyForm::Uniform => {
                let p = T::one() / T::from_count(self.action_count);
                out.iter_mut().for_each(|o| *o = p);
            }
            PolicyForm::Table(rows) => {
                let first = *context.first().ok_or(Error::DimensionMismatch {
                    expected: 1,
                    got: 0,
                })?;
                let idx = first
                    .to_usize()
                    .filter(|&i| T::from_count(i) == first && i < rows.rows())
                    .ok_or_else(|| {
                        Error::validation(format!("context {first} is not a valid table row"))
                    })?;
                out.copy_from_slice(rows.row(idx));
            }
            PolicyForm::Logistic { weights, intercept } => {
                let dim = weights.rows() - usize::from(*intercept);
                if context.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: context.len(),
                    });
                }
                for (k, o) in out.iter_mut().enumerate() {
                    let mut s = T::zero();
                    for (j, &x) in context.iter().enumerate() {
                        s += x * weights.get(j, k);
                    }
                    if *intercept {
                        s += weights.get(dim, k);
                    }
                    *o = s;
                }
                softmax_in_place(out);
            }
            PolicyForm::Sigmoid { slope } => {
                let x = *context.first().ok_or(Error::DimensionMismatch {
                    expected: 1,
                    got: 0,
                })?;
                let s = *slope * x;
                out[1] = sigmoid(s);
                out[0] = sigmoid(-s);
            }
        }
        Ok(())
    }

    pub fn action_probabilities(&self, context: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.action_count];
        self.probabilities_into(context, &mut out)?;
        Ok(out)
    }

    /// Probabilities for every row of `contexts`, as an `n × |A|` matrix.
    pub fn probability_matrix(&self, contexts: &Matrix<T>) -> Result<Matrix<T>> {
        let mut m = Matrix::zeros(contexts.rows(), self.action_count);
        for i in 0..contexts.rows() {
            self.probabilities_into(contexts.row(i), m.row_mut(i))?;
        }
        Ok(m)
    }

    /// Serializes to a line-oriented, comma-separated text block. Floats use
    /// the shortest round-trip representation so reloading is bit-exact.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.form {
            PolicyForm::Uniform => {
                let _ = writeln!(s, "form,uniform");
                let _ = writeln!(s, "action_count,{}", self.action_count);
            }
            PolicyForm::Table(rows) => {
                let _ = writeln!(s, "form,table");
                let _ = writeln!(s, "shape,{},{}", rows.rows(), rows.cols());
                write_rows(&mut s, rows);
            }
            PolicyForm::Logistic { weights, intercept } => {
                let _ = writeln!(s, "form,logistic");
                let _ = writeln!(s, "intercept,{}", u8::from(*intercept));
                let _ = writeln!(s, "shape,{},{}", weights.rows(), weights.cols());
                write_rows(&mut s, weights);
            }
            PolicyForm::Sigmoid { slope } => {
                let _ = writeln!(s, "form,sigmoid");
                let _ = writeln!(s, "slope,{slope}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, Vec<String>)> {
            let (row, line) = lines.next().ok_or_else(|| Error::Parse {
                row: 0,
                message: format!("missing {what}"),
            })?;
            Ok((
                row + 1,
                line.split(',').map(|f| f.trim().to_string()).collect(),
            ))
        };
        let (row, form) = next("form line")?;
        let expect_key = |row: usize, fields: &[String], key: &str, n: usize| -> Result<()> {
            if fields.first().map(String::as_str) != Some(key) || fields.len() != n + 1 {
                return Err(Error::Parse {
                    row,
                    message: format!("expected `{key}` with {n} value(s)"),
                });
            }
            Ok(())
        };
        expect_key(row, &form, "form", 1)?;
        match form[1].as_str() {
            "uniform" => {
                let (row, f) = next("action_count")?;
                expect_key(row, &f, "action_count", 1)?;
                Self::uniform(parse_field(row, &f[1])?)
            }
            "sigmoid" => {
                let (row, f) = next("slope")?;
                expect_key(row, &f, "slope", 1)?;
                Ok(Self::sigmoid(parse_field(row, &f[1])?))
            }
            "table" | "logistic" => {
                let mut intercept = false;
                if form[1] == "logistic" {
                    let (row, f) = next("intercept")?;
                    expect_key(row, &f, "intercept", 1)?;
                    intercept = parse_field::<u8>(row, &f[1])? != 0;
                }
                let (row, f) = next("shape")?;
                expect_key(row, &f, "shape", 2)?;
                let rows: usize = parse_field(row, &f[1])?;
                let cols: usize = parse_field(row, &f[2])?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (row, f) = next("matrix row")?;
                    if f.len() != cols {
                        return Err(Error::Parse {
                            row,
                            message: format!("expected {cols} values, found {}", f.len()),
                        });
                    }
                    for v in &f {
                        data.push(parse_field(row, v)?);
                    }
                }
                let m = Matrix::from_vec(rows, cols, data)?;
                if form[1] == "table" {
                    Self::table(m)
                } else {
                    Self::logistic(m, intercept)
                }
            }
            other => Err(Error::Parse {
                row,
                message: format!("unknown policy form `{other}`"),
            }),
        }
    }
}

fn write_rows<T: Scalar>(s: &mut String, m: &Matrix<T>) {
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
}

fn parse_field<V: std::str::FromStr>(row: usize, field: &str) -> Result<V> {
    field.parse().map_err(|_| Error::Parse {
        row,
        message: format!("cannot parse `{field}`"),
    })
}

pub(crate) fn softmax_in_place<T: Scalar>(scores: &mut [T]) {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

// ── Training ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions<T> {
    /// Coefficient of `½‖W‖²` subtracted from the mean log-likelihood.
    pub l2_penalty: T,
    pub max_iters: usize,
    /// Convergence threshold on the gradient ∞-norm.
    pub tolerance: T,
    /// Append a constant feature.
    pub intercept: bool,
}

impl<T: Scalar> Default for LogisticOptions<T> {
    fn default() -> Self {
        Self {
            l2_penalty: T::lit(1e-3),
            max_iters: 500,
            tolerance: T::lit(1e-6),
            intercept: false,
        }
    }
}

/// Fits a multinomial logistic policy by full-batch gradient ascent with a
/// backtracking step. Class 0 is the reference class; its weights stay zero.
pub fn train_multinomial_logistic<T: Scalar>(
    features: &Matrix<T>,
    targets: &[usize],
    action_count: usize,
    options: &LogisticOptions<T>,
) -> Result<DiscretePolicy<T>> {
    if targets.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            got: targets.len(),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= action_count) {
        return Err(Error::validation(format!(
            "target label {bad} out of range for {action_count} actions"
        )));
    }
    let mut seen = vec![false; action_count];
    targets.iter().for_each(|&t| seen[t] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::validation(
            "logistic training needs at least two distinct target classes",
        ));
    }
    let mut soft = Matrix::zeros(targets.len(), action_count);
    for (i, &t) in targets.iter().enumerate() {
        soft.set(i, t, T::one());
    }
    let weights = fit_softmax_weights(features, &soft, options)?;
    DiscretePolicy::logistic(weights, options.intercept)
}

/// Maximizes `(1/m) Σ_i Σ_k y_ik log p_ik − (λ/2)‖W‖²` over softmax weights
/// for soft targets `y` (rows summing to one). Column 0 is pinned to zero.
pub(crate) fn fit_softmax_weights<T: Scalar>(
    features: &Matrix<T>,
    soft_targets: &Matrix<T>,
    options: &LogisticOptions<T>,
) -> Result<Matrix<T>> {
    let m = features.rows();
    let classes = soft_targets.cols();
    if m == 0 {
        return Err(Error::validation("logistic training needs at least one row"));
    }
    if !features.all_finite() {
        return Err(Error::validation("features contain non-finite values"));
    }
    if options.l2_penalty < T::zero() {
        return Err(Error::validation("l2 penalty must be non-negative"));
    }
    let x = if options.intercept {
        let mut aug = Matrix::zeros(m, features.cols() + 1);
        for i in 0..m {
            aug.row_mut(i)[..features.cols()].copy_from_slice(features.row(i));
            aug.set(i, features.cols(), T::one());
        }
        aug
    } else {
        features.clone()
    };
    let dim = x.cols();
    let lambda = options.l2_penalty;

    let objective = |w: &Matrix<T>, grad: Option<&mut Matrix<T>>| -> T {
        let mut scores = vec![T::zero(); classes];
        let mut ll = T::zero();
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            *g = Matrix::zeros(dim, classes);
        }
        for i in 0..m {
            let xi = x.row(i);
            for (k, s) in scores.iter_mut().enumerate() {
                let mut acc = T::zero();
                for j in 0..dim {
                    acc += xi[j] * w.get(j, k);
                }
                *s = acc;
            }
            let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<T>().ln();
            let yi = soft_targets.row(i);
            for k in 0..classes {
                if yi[k] > T::zero() {
                    ll += yi[k] * (scores[k] - lse);
                }
            }
            if let Some(g) = g.as_deref_mut() {
                for k in 1..classes {
                    let resid = yi[k] - (scores[k] - lse).exp();
                    for j in 0..dim {
                        let v = g.get(j, k) + xi[j] * resid;
                        g.set(j, k, v);
                    }
                }
            }
        }
        let inv_m = T::one() / T::from_count(m);
        let norm: T = w.as_slice().iter().map(|&v| v * v).sum();
        if let Some(g) = g {
            for j in 0..dim {
                for k in 1..classes {
                    let v = g.get(j, k) * inv_m - lambda * w.get(j, k);
                    g.set(j, k, v);
                }
            }
        }
        ll * inv_m - lambda * T::lit(0.5) * norm
    };

    let mut w = Matrix::zeros(dim, classes);
    let mut grad = Matrix::zeros(dim, classes);
    let mut f = objective(&w, Some(&mut grad));
    let mut step = T::one();
    let armijo = T::lit(1e-4);
    for _ in 0..options.max_iters {
        if !grad.all_finite() || !f.is_finite() {
            return Err(Error::numeric("non-finite gradient in logistic training"));
        }
        let gmax = grad.as_slice().iter().fold(T::zero(), |a, v| a.max(v.abs()));
        if gmax < options.tolerance {
            break;
        }
        let gnorm2: T = grad.as_slice().iter().map(|&v| v * v).sum();
        let mut accepted = false;
        while step > T::lit(1e-30) {
            let mut candidate = w.clone();
            for j in 0..dim {
                for k in 1..classes {
                    candidate.set(j, k, w.get(j, k) + step * grad.get(j, k));
                }
            }
            let fc = objective(&candidate, None);
            if fc.is_finite() && fc >= f + armijo * step * gnorm2 {
                w = candidate;
                f = objective(&w, Some(&mut grad));
                step = (step * T::lit(2.0)).min(T::lit(1e6));
                accepted = true;
                break;
            }
            step = step * T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    if !w.all_finite() {
        return Err(Error::numeric("logistic weights diverged"));
    }
    Ok(w)
}

// ── Weights and divergence ──────────────────────────────────────────────

/// `w(x,a) = π(a|x)/μ(a|x)`, optionally capped at `cap`.
pub fn importance_weight<T: Scalar>(
    target: &DiscretePolicy<T>,
    logging: &DiscretePolicy<T>,
    context: &[T],
    action: usize,
    cap: Option<T>,
) -> Result<T> {
    check_same_actions(target, logging)?;
    if action >= target.action_count() {
        return Err(Error::validation(format!("action {action} out of range")));
    }
    let p = target.action_probabilities(context)?[action];
    let q = logging.action_probabilities(context)?[action];
    let w = ratio(p, q, action)?;
    Ok(match cap {
        Some(c) => w.min(c),
        None => w,
    })
}

#[inline]
pub(crate) fn ratio<T: Scalar>(p: T, q: T, action: usize) -> Result<T> {
    if q > T::zero() {
        Ok(p / q)
    } else if p > T::zero() {
        Err(Error::SupportViolation {
            action,
            target_prob: p.as_f64(),
        })
    } else {
        Ok(T::zero())
    }
}

/// `D_KL(p ‖ q)` for two probability vectors, with `0 · log(0/q) = 0` and the
/// result clamped at zero.
pub fn kl_from_probabilities<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    let mut kl = T::zero();
    for (a, (&pa, &qa)) in p.iter().zip(q).enumerate() {
        if pa > T::zero() {
            if !(qa > T::zero()) {
                return Err(Error::SupportViolation {
                    action: a,
                    target_prob: pa.as_f64(),
                });
            }
            kl += pa * (pa / qa).ln();
        }
    }
    Ok(kl.max(T::zero()))
}

/// Context-specific divergence `D_KL(π(·|x) ‖ μ(·|x))`.
pub fn kl_divergence<T: Scalar>(
    target: &DiscretePolicy<T>,
    logging: &DiscretePolicy<T>,
    context: &[T],
) -> Result<T> {
    check_same_actions(target, logging)?;
    let p = target.action_probabilities(context)?;
    let q = logging.action_probabilities(context)?;
    kl_from_probabilities(&p, &q)
}

/// Inverse-CDF draw from `π(·|x)` using one uniform variate.
pub fn sample_action<T: Scalar, R: Rng + ?Sized>(
    policy: &DiscretePolicy<T>,
    context: &[T],
    rng: &mut R,
) -> Result<usize> {
    let probs = policy.action_probabilities(context)?;
    Ok(draw_from(&probs, rng.gen::<f64>()))
}

pub(crate) fn draw_from<T: Scalar>(probs: &[T], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (a, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = a;
            cum += p;
            if u < cum {
                return a;
            }
        }
    }
    last_positive
}

fn check_same_actions<T: Scalar>(a: &DiscretePolicy<T>, b: &DiscretePolicy<T>) -> Result<()> {
    if a.action_count() != b.action_count() {
        return Err(Error::DimensionMismatch {
            expected: a.action_count(),
            got: b.action_count(),
        });
    }
    Ok(())
}

/// Importance weights `w(x_i, a_i)` for logged samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile<T> {
    weights: Vec<T>,
    cap: Option<T>,
}

impl<T: Scalar> WeightProfile<T> {
    /// Uses the recorded logging propensities as denominators.
    pub fn from_logged(
        dataset: &LoggedDataset<T>,
        target: &DiscretePolicy<T>,
        cap: Option<T>,
    ) -> Result<Self> {
        if let Some(c) = cap {
            if !(c > T::zero()) {
                return Err(Error::validation("weight cap must be positive"));
            }
        }
        let mut probs = vec![T::zero(); target.action_count()];
        let mut weights = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            target.probabilities_into(dataset.context(i), &mut probs)?;
            let a = dataset.actions()[i];
            let w = probs[a] / dataset.logging_probs()[i];
            if !(w > T::zero()) || !w.is_finite() {
                return Err(Error::numeric(format!(
                    "importance weight of sample {i} is {w}; weights must be positive and finite"
                )));
            }
            weights.push(cap.map_or(w, |c| w.min(c)));
        }
        Ok(Self { weights, cap })
    }

    pub(crate) fn from_parts(weights: Vec<T>, cap: Option<T>) -> Self {
        Self { weights, cap }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn cap(&self) -> Option<T> {
        self.cap
    }
}

/// Per-context probabilities of both policies, the logged importance weights
/// and KL divergences, computed once per dataset and shared by the
/// estimators and tuners.
#[derive(Debug, Clone)]
pub struct PolicyTable<T> {
    /// `π(a|x_i)`, `n × |A|`.
    pub target: Matrix<T>,
    /// `μ(a|x_i)` from the logging policy, `n × |A|`.
    pub logging: Matrix<T>,
    /// `π(a_i|x_i) / μ_i` using the recorded propensity `μ_i`.
    pub logged_weights: Vec<T>,
    /// `D_KL(x_i)`.
    pub kl: Vec<T>,
}

impl<T: Scalar> PolicyTable<T> {
    pub fn new(
        dataset: &LoggedDataset<T>,
        target: &DiscretePolicy<T>,
        logging: &DiscretePolicy<T>,
    ) -> Result<Self> {
        check_same_actions(target, logging)?;
        if target.action_count() != dataset.action_count() {
            return Err(Error::DimensionMismatch {
                expected: dataset.action_count(),
                got: target.action_count(),
            });
        }
        let tp = target.probability_matrix(dataset.contexts())?;
        let lp = logging.probability_matrix(dataset.contexts())?;
        let mut kl = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            kl.push(kl_from_probabilities(tp.row(i), lp.row(i))?);
        }
        let logged_weights = logged_weights(dataset, &tp)?;
        Ok(Self {
            target: tp,
            logging: lp,
            logged_weights,
            kl,
        })
    }

    /// Only the target side; KL and logging probabilities are left empty.
    /// Enough for estimators that never switch on divergence.
    pub fn target_only(dataset: &LoggedDataset<T>, target: &DiscretePolicy<T>) -> Result<Self> {
        if target.action_count() != dataset.action_count() {
            return Err(Error::DimensionMismatch {
                expected: dataset.action_count(),
                got: target.action_count(),
            });
        }
        let tp = target.probability_matrix(dataset.contexts())?;
        let logged_weights = logged_weights(dataset, &tp)?;
        Ok(Self {
            target: tp,
            logging: Matrix::zeros(0, 0),
            logged_weights,
            kl: Vec::new(),
        })
    }

    /// `w̃` for every (context, action) pair, `n × |A|`.
    pub fn derived_weights(&self) -> Result<Matrix<T>> {
        if self.logging.rows() != self.target.rows() {
            return Err(Error::validation(
                "policy table was built without the logging policy",
            ));
        }
        let mut m = Matrix::zeros(self.target.rows(), self.target.cols());
        for i in 0..self.target.rows() {
            for a in 0..self.target.cols() {
                m.set(i, a, ratio(self.target.get(i, a), self.logging.get(i, a), a)?);
            }
        }
        Ok(m)
    }
}

fn logged_weights<T: Scalar>(dataset: &LoggedDataset<T>, target_probs: &Matrix<T>) -> Result<Vec<T>> {
    (0..dataset.len())
        .map(|i| {
            let a = dataset.actions()[i];
            ratio(target_probs.get(i, a), dataset.logging_probs()[i], a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_probabilities() {
        let p = DiscretePolicy::<f64>::uniform(4).unwrap();
        assert_eq!(p.action_probabilities(&[0.3]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn toy_policies_at_point_two() {
        let mu = DiscretePolicy::<f64>::toy_logging();
        let pi = DiscretePolicy::<f64>::toy_target();
        let e = 1f64.exp();
        assert_abs_diff_eq!(mu.action_probabilities(&[0.2]).unwrap()[1], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(mu.action_probabilities(&[0.2]).unwrap()[1], 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(pi.action_probabilities(&[0.2]).unwrap()[1], 0.268941, epsilon = 1e-6);
        let w1 = importance_weight(&pi, &mu, &[0.2], 1, None).unwrap();
        let w0 = importance_weight(&pi, &mu, &[0.2], 0, None).unwrap();
        assert_abs_diff_eq!(w1, (-1f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(w1, 0.367879, epsilon = 1e-6);
        assert_abs_diff_eq!(w0, 2.718282, epsilon = 1e-6);
    }

    #[test]
    fn weight_is_one_for_identical_policies_and_cap_applies() {
        let pi = DiscretePolicy::<f64>::toy_target();
        for a in 0..2 {
            assert_eq!(importance_weight(&pi, &pi, &[0.7], a, None).unwrap(), 1.0);
        }
        let mu = DiscretePolicy::<f64>::toy_logging();
        let w = importance_weight(&pi, &mu, &[1.0], 1, Some(3.0)).unwrap();
        assert!(w <= 3.0);
        let w = importance_weight(&pi, &mu, &[1.0], 0, Some(3.0)).unwrap();
        assert_eq!(w, 3.0);
    }

    #[test]
    fn support_violation_and_zero_over_zero() {
        let pi = DiscretePolicy::table(Matrix::from_rows(&[vec![0.5, 0.5, 0.0]]).unwrap()).unwrap();
        let mu = DiscretePolicy::table(Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap()).unwrap();
        assert!(matches!(
            importance_weight(&pi, &mu, &[0.0], 1, None),
            Err(Error::SupportViolation { action: 1, .. })
        ));
        assert_eq!(importance_weight(&pi, &mu, &[0.0], 2, None).unwrap(), 0.0);
        assert!(kl_divergence(&pi, &mu, &[0.0]).is_err());
    }

    #[test]
    fn toy_kl_values() {
        let mu = DiscretePolicy::<f64>::toy_logging();
        let pi = DiscretePolicy::<f64>::toy_target();
        assert_abs_diff_eq!(kl_divergence(&pi, &mu, &[1.0]).unwrap(), 4.933072, epsilon = 1e-6);
        assert_abs_diff_eq!(kl_divergence(&pi, &mu, &[1.0]).unwrap(), 5.0 * 2.5f64.tanh(), epsilon = 1e-12);
        assert_abs_diff_eq!(kl_divergence(&pi, &mu, &[0.5]).unwrap(), 2.5 * 1.25f64.tanh(), epsilon = 1e-12);
        assert_eq!(kl_divergence(&pi, &pi, &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_on_logistic_context() {
        let p = DiscretePolicy::logistic(Matrix::<f64>::zeros(2, 3), false).unwrap();
        assert!(matches!(
            p.action_probabilities(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn degenerate_policy_samples_its_action() {
        let p = DiscretePolicy::table(Matrix::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_action(&p, &[0.0], &mut rng).unwrap(), 2);
        }
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let p = DiscretePolicy::<f64>::uniform(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_action(&p, &[0.0], &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn same_generator_state_same_action() {
        let p = DiscretePolicy::<f64>::uniform(5).unwrap();
        let a = sample_action(&p, &[0.0], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_action(&p, &[0.0], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_features_train_to_uniform() {
        let x = Matrix::<f64>::zeros(6, 2);
        let p = train_multinomial_logistic(&x, &[0, 1, 2, 0, 1, 2], 3, &LogisticOptions::default()).unwrap();
        for v in p.action_probabilities(&[0.0, 0.0]).unwrap() {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn separable_one_dimensional_fit() {
        let xs: Vec<f64> = (-20..=20).filter(|&i| i != 0).map(|i| i as f64 / 10.0).collect();
        let x = Matrix::from_vec(xs.len(), 1, xs.clone()).unwrap();
        let y: Vec<usize> = xs.iter().map(|&v| usize::from(v > 0.0)).collect();
        let opts = LogisticOptions {
            l2_penalty: 1e-4,
            ..LogisticOptions::default()
        };
        let p = train_multinomial_logistic(&x, &y, 2, &opts).unwrap();
        assert!(p.action_probabilities(&[2.0]).unwrap()[1] > 0.9);
        assert!(p.action_probabilities(&[-2.0]).unwrap()[0] > 0.9);
        let s: f64 = p.action_probabilities(&[0.37]).unwrap().iter().sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn single_class_rejected() {
        let x = Matrix::<f64>::zeros(3, 1);
        assert!(matches!(
            train_multinomial_logistic(&x, &[1, 1, 1], 3, &LogisticOptions::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let w = Matrix::from_rows(&[vec![0.0, 0.1, -1.0 / 3.0], vec![0.0, 2.5e-17, 7.123456789012345]]).unwrap();
        let p = DiscretePolicy::logistic(w, true).unwrap();
        let back = DiscretePolicy::<f64>::from_text(&p.to_text()).unwrap();
        assert_eq!(p, back);
        let s = DiscretePolicy::<f64>::toy_target();
        assert_eq!(DiscretePolicy::<f64>::from_text(&s.to_text()).unwrap(), s);
        assert!(DiscretePolicy::<f64>::from_text("form,nope\n").is_err());
    }

    #[test]
    fn invalid_table_rejected() {
        assert!(DiscretePolicy::table(Matrix::from_rows(&[vec![0.5, 0.6]]).unwrap()).is_err());
        assert!(DiscretePolicy::table(Matrix::from_rows(&[vec![-0.5, 1.5]]).unwrap()).is_err());
    }
}
