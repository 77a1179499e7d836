//! Datasets: classification tables, logged bandit feedback, the derived
//! all-actions dataset and synthetic environments.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::policy::{draw_from, DiscretePolicy};
use crate::scalar::{sigmoid, Scalar};

// ── Classification tables ───────────────────────────────────────────────

/// Multi-class table whose classes become the bandit's actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTable<T> {
    features: Matrix<T>,
    labels: Vec<usize>,
    action_count: usize,
    label_names: Vec<String>,
}

impl<T: Scalar> ClassificationTable<T> {
    pub fn new(features: Matrix<T>, labels: Vec<usize>, action_count: usize) -> Result<Self> {
        let names = (0..action_count).map(|a| a.to_string()).collect();
        Self::with_label_names(features, labels, action_count, names)
    }

    fn with_label_names(
        features: Matrix<T>,
        labels: Vec<usize>,
        action_count: usize,
        label_names: Vec<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if features.rows() < 2 || features.cols() < 1 {
            return Err(Error::validation(
                "classification table needs at least 2 rows and 1 feature",
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= action_count) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {action_count} classes"
            )));
        }
        if !features.all_finite() {
            return Err(Error::validation("features contain non-finite values"));
        }
        Ok(Self {
            features,
            labels,
            action_count,
            label_names,
        })
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Original label text for each dense class index.
    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen = vec![false; self.action_count];
        self.labels.iter().for_each(|&l| seen[l] = true);
        seen.into_iter().filter(|&s| s).count()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            action_count: self.action_count,
            label_names: self.label_names.clone(),
        }
    }

    /// Writes the table as CSV: `x_0..x_{d-1},label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x_{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, &label) in self.features.iter_rows().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
    Last,
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s {
            "last" => LabelColumn::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

pub fn load_classification_csv<T: Scalar>(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    has_header: bool,
) -> Result<ClassificationTable<T>> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_classification_csv(file, label_column, has_header)
}

/// Parses a comma-separated classification table, standardizes every feature
/// column (population variance) and densely re-indexes labels in first-seen
/// order.
pub fn parse_classification_csv<T: Scalar, R: Read>(
    reader: R,
    label_column: &LabelColumn,
    has_header: bool,
) -> Result<ClassificationTable<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut width: Option<usize> = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;
    let mut values: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();

    for (k, record) in rdr.records().enumerate() {
        let row = k + 1 + usize::from(has_header);
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                row,
                message: format!("expected {w} columns, found {}", record.len()),
            });
        }
        let li = match label_idx {
            Some(li) => li,
            None => {
                let li = resolve_label_column(label_column, header.as_deref(), w)?;
                label_idx = Some(li);
                li
            }
        };
        for (j, cell) in record.iter().enumerate() {
            if j == li {
                let next = names.len();
                let id = *index_of.entry(cell.to_string()).or_insert(next);
                if id == next {
                    names.push(cell.to_string());
                }
                labels.push(id);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("non-numeric feature `{cell}` in column {j}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        message: format!("non-finite feature in column {j}"),
                    });
                }
                values.push(T::lit(v));
            }
        }
    }
    let m = labels.len();
    let width = width.unwrap_or(0);
    if m < 2 || width < 2 {
        return Err(Error::validation(
            "table needs at least 2 rows and one feature column besides the label",
        ));
    }
    if names.len() < 2 {
        return Err(Error::validation("table has a single class; need at least 2"));
    }
    let mut features = Matrix::from_vec(m, width - 1, values)?;
    standardize_columns(&mut features);
    let k = names.len();
    ClassificationTable::with_label_names(features, labels, k, names)
}

fn resolve_label_column(sel: &LabelColumn, header: Option<&[String]>, width: usize) -> Result<usize> {
    let idx = match sel {
        LabelColumn::Last => width.saturating_sub(1),
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::validation(format!("no column named `{name}`")))?,
    };
    if idx >= width {
        return Err(Error::validation(format!(
            "label column {idx} out of range for {width} columns"
        )));
    }
    Ok(idx)
}

/// Standardizes each column to zero mean and unit population variance.
/// Constant columns become all zeros.
pub fn standardize_columns<T: Scalar>(m: &mut Matrix<T>) {
    let n = T::from_count(m.rows());
    for j in 0..m.cols() {
        let mean = (0..m.rows()).map(|i| m.get(i, j)).sum::<T>() / n;
        let var = (0..m.rows())
            .map(|i| {
                let d = m.get(i, j) - mean;
                d * d
            })
            .sum::<T>()
            / n;
        let sd = var.sqrt();
        let constant = !(sd > T::epsilon() * mean.abs().max(T::one()));
        for i in 0..m.rows() {
            let v = if constant {
                T::zero()
            } else {
                (m.get(i, j) - mean) / sd
            };
            m.set(i, j, v);
        }
    }
}

/// Deterministic shuffled split; the training part gets `⌊fraction · m⌋` rows.
pub fn split_train_test<T: Scalar>(
    table: &ClassificationTable<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<(ClassificationTable<T>, ClassificationTable<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation("train fraction must lie in (0, 1)"));
    }
    let m = table.len();
    let n_train = (train_fraction * m as f64).floor() as usize;
    if n_train == 0 || n_train >= m {
        return Err(Error::validation(format!(
            "train fraction {train_fraction} leaves an empty split for {m} rows"
        )));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((table.subset(&idx[..n_train]), table.subset(&idx[n_train..])))
}

// ── Logged bandit feedback ──────────────────────────────────────────────

/// `n` context/action/reward triples with the logging propensities.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset<T> {
    contexts: Matrix<T>,
    actions: Vec<usize>,
    rewards: Vec<T>,
    logging_probs: Vec<T>,
    action_count: usize,
}

impl<T: Scalar> LoggedDataset<T> {
    pub fn new(
        contexts: Matrix<T>,
        actions: Vec<usize>,
        rewards: Vec<T>,
        logging_probs: Vec<T>,
        action_count: usize,
    ) -> Result<Self> {
        let n = contexts.rows();
        if n == 0 {
            return Err(Error::validation("logged dataset must be non-empty"));
        }
        for len in [actions.len(), rewards.len(), logging_probs.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if let Some(a) = actions.iter().find(|&&a| a >= action_count) {
            return Err(Error::validation(format!(
                "action {a} out of range for {action_count} actions"
            )));
        }
        if let Some(p) = logging_probs
            .iter()
            .find(|&&p| !(p > T::zero() && p <= T::one()))
        {
            return Err(Error::validation(format!(
                "logging probability {p} is outside (0, 1]"
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) || !contexts.all_finite() {
            return Err(Error::validation("rewards and contexts must be finite"));
        }
        Ok(Self {
            contexts,
            actions,
            rewards,
            logging_probs,
            action_count,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.contexts.cols()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn contexts(&self) -> &Matrix<T> {
        &self.contexts
    }

    pub fn context(&self, i: usize) -> &[T] {
        self.contexts.row(i)
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn logging_probs(&self) -> &[T] {
        &self.logging_probs
    }

    /// Samples whose index satisfies `keep`, in order.
    pub fn filter_indices(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self::new(
            self.contexts.select_rows(&idx),
            idx.iter().map(|&i| self.actions[i]).collect(),
            idx.iter().map(|&i| self.rewards[i]).collect(),
            idx.iter().map(|&i| self.logging_probs[i]).collect(),
            self.action_count,
        )
    }

    /// Dumps as CSV with columns `x_0..x_{d-1},action,reward,logging_prob`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x_{j}")).collect();
        header.extend(["action", "reward", "logging_prob"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.context(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.actions[i].to_string());
            rec.push(self.rewards[i].to_string());
            rec.push(self.logging_probs[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the dump written by [`LoggedDataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R, action_count: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let width = rdr.headers()?.len();
        if width < 4 {
            return Err(Error::validation("bandit dump needs context, action, reward and propensity"));
        }
        let d = width - 3;
        let (mut ctx, mut actions, mut rewards, mut probs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| Error::Parse { row, message: e.to_string() })?;
            let num = |j: usize| -> Result<T> {
                rec[j].parse::<T>().map_err(|_| Error::Parse {
                    row,
                    message: format!("cannot parse `{}`", &rec[j]),
                })
            };
            for j in 0..d {
                ctx.push(num(j)?);
            }
            actions.push(rec[d].parse::<usize>().map_err(|_| Error::Parse {
                row,
                message: format!("bad action `{}`", &rec[d]),
            })?);
            rewards.push(num(d + 1)?);
            probs.push(num(d + 2)?);
        }
        let n = actions.len();
        Self::new(Matrix::from_vec(n, d, ctx)?, actions, rewards, probs, action_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// `r = 𝟙{a = a*}`.
    Deterministic,
    /// `r = 𝟙{a = a*}` with probability 0.7, flipped otherwise.
    Stochastic,
}

impl RewardMode {
    /// Probability the observed reward equals the correctness indicator.
    pub const STOCHASTIC_KEEP: f64 = 0.7;

    /// `E[r | a, a*]`.
    pub fn expected_reward<T: Scalar>(self, action: usize, true_label: usize) -> T {
        let hit = action == true_label;
        match self {
            RewardMode::Deterministic => {
                if hit {
                    T::one()
                } else {
                    T::zero()
                }
            }
            RewardMode::Stochastic => {
                let keep = T::lit(Self::STOCHASTIC_KEEP);
                if hit {
                    keep
                } else {
                    T::one() - keep
                }
            }
        }
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "deterministic" => Ok(RewardMode::Deterministic),
            "stochastic" => Ok(RewardMode::Stochastic),
            other => Err(Error::validation(format!("unknown reward mode `{other}`"))),
        }
    }
}

/// Generates `n` bandit samples from a classification table.
pub fn to_bandit<T: Scalar>(
    table: &ClassificationTable<T>,
    logging: &DiscretePolicy<T>,
    mode: RewardMode,
    n: usize,
    seed: u64,
) -> Result<LoggedDataset<T>> {
    to_bandit_traced(table, logging, mode, n, seed).map(|(d, _)| d)
}

/// Like [`to_bandit`], also returning the table row each sample came from.
///
/// Per sample: a row is drawn uniformly with replacement, an action from
/// `logging(·|x)`, then the reward.
pub fn to_bandit_traced<T: Scalar>(
    table: &ClassificationTable<T>,
    logging: &DiscretePolicy<T>,
    mode: RewardMode,
    n: usize,
    seed: u64,
) -> Result<(LoggedDataset<T>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::validation("bandit sample size must be at least 1"));
    }
    if logging.action_count() != table.action_count() {
        return Err(Error::DimensionMismatch {
            expected: table.action_count(),
            got: logging.action_count(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = vec![T::zero(); table.action_count()];
    let mut ctx = Vec::with_capacity(n * table.dim());
    let (mut actions, mut rewards, mut props, mut rows) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let row = rng.gen_range(0..table.len());
        let x = table.features().row(row);
        logging.probabilities_into(x, &mut probs)?;
        if let Some(a) = probs.iter().position(|&p| !(p > T::zero())) {
            return Err(Error::validation(format!(
                "logging policy gives action {a} zero probability at table row {row}"
            )));
        }
        let a = draw_from(&probs, rng.gen::<f64>());
        let hit = a == table.labels()[row];
        let r = match mode {
            RewardMode::Deterministic => hit,
            RewardMode::Stochastic => {
                if rng.gen::<f64>() < RewardMode::STOCHASTIC_KEEP {
                    hit
                } else {
                    !hit
                }
            }
        };
        ctx.extend_from_slice(x);
        actions.push(a);
        rewards.push(if r { T::one() } else { T::zero() });
        props.push(probs[a]);
        rows.push(row);
    }
    let ds = LoggedDataset::new(
        Matrix::from_vec(n, table.dim(), ctx)?,
        actions,
        rewards,
        props,
        table.action_count(),
    )?;
    Ok((ds, rows))
}

// ── Derived dataset ─────────────────────────────────────────────────────

/// Every logged context paired with every action, row-major
/// (context outer, action inner).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedDataset {
    pairs: Vec<(usize, usize)>,
    parent_n: usize,
    action_count: usize,
}

impl DerivedDataset {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn parent_n(&self) -> usize {
        self.parent_n
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    #[inline]
    pub fn index_of(&self, context: usize, action: usize) -> usize {
        context * self.action_count + action
    }
}

pub fn derive_all_actions<T: Scalar>(dataset: &LoggedDataset<T>, action_count: usize) -> Result<DerivedDataset> {
    if action_count == 0 {
        return Err(Error::validation("action count must be at least 1"));
    }
    let n = dataset.len();
    let pairs = (0..n)
        .flat_map(|i| (0..action_count).map(move |a| (i, a)))
        .collect();
    Ok(DerivedDataset {
        pairs,
        parent_n: n,
        action_count,
    })
}

// ── Synthetic environments ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContextSampler {
    /// Independent uniform coordinates on `[lo, hi]`.
    Uniform { lo: f64, hi: f64, dim: usize },
    StandardNormal { dim: usize },
}

impl ContextSampler {
    pub fn dim(&self) -> usize {
        match *self {
            ContextSampler::Uniform { dim, .. } | ContextSampler::StandardNormal { dim } => dim,
        }
    }

    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<T>) {
        match *self {
            ContextSampler::Uniform { lo, hi, dim } => {
                for _ in 0..dim {
                    out.push(T::lit(lo + (hi - lo) * rng.gen::<f64>()));
                }
            }
            ContextSampler::StandardNormal { dim } => {
                for _ in 0..dim {
                    out.push(T::lit(rng.sample::<f64, _>(rand_distr_free::StandardNormal)));
                }
            }
        }
    }
}

/// Box-Muller normal draws, so the core crate needs only `rand`.
mod rand_distr_free {
    use rand::distributions::Distribution;
    use rand::Rng;

    pub struct StandardNormal;

    impl Distribution<f64> for StandardNormal {
        fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen::<f64>();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }
}

pub type MeanRewardFn<T> = Arc<dyn Fn(&[T], usize) -> T + Send + Sync>;

/// Expected reward `E[r | x, a]` before noise.
#[derive(Clone)]
pub enum MeanReward<T> {
    /// `𝟙{a = 1} · (1 + x₀)/2`.
    Toy,
    /// `σ(slope_a · x₀ + offset_a)` per action.
    Sigmoid { slopes: Vec<f64>, offsets: Vec<f64> },
    Custom(MeanRewardFn<T>),
}

impl<T: Scalar> MeanReward<T> {
    pub fn eval(&self, x: &[T], a: usize) -> T {
        match self {
            MeanReward::Toy => {
                if a == 1 {
                    (T::one() + x[0]) * T::lit(0.5)
                } else {
                    T::zero()
                }
            }
            MeanReward::Sigmoid { slopes, offsets } => {
                sigmoid(T::lit(slopes[a]) * x[0] + T::lit(offsets[a]))
            }
            MeanReward::Custom(f) => f(x, a),
        }
    }
}

impl<T> std::fmt::Debug for MeanReward<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeanReward::Toy => write!(f, "Toy"),
            MeanReward::Sigmoid { slopes, offsets } => f
                .debug_struct("Sigmoid")
                .field("slopes", slopes)
                .field("offsets", offsets)
                .finish(),
            MeanReward::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardNoise {
    /// Observed reward equals the mean.
    None,
    /// `r ~ Bernoulli(mean)`; the mean must lie in `[0, 1]`.
    Bernoulli,
    /// Observe the mean with probability `1 − p`, else `1 − mean`.
    BernoulliFlip(f64),
    Gaussian(f64),
}

/// Context distribution, mean reward and observation noise.
#[derive(Debug, Clone)]
pub struct SyntheticEnvironment<T> {
    pub context_sampler: ContextSampler,
    pub mean_reward: MeanReward<T>,
    pub reward_noise: RewardNoise,
    pub action_count: usize,
}

impl<T: Scalar> SyntheticEnvironment<T> {
    /// Two actions, contexts uniform on `[−1, 1]`, mean reward
    /// `𝟙{a=1}·(1+x)/2` observed without noise.
    pub fn toy() -> Self {
        Self {
            context_sampler: ContextSampler::Uniform { lo: -1.0, hi: 1.0, dim: 1 },
            mean_reward: MeanReward::Toy,
            reward_noise: RewardNoise::None,
            action_count: 2,
        }
    }

    /// `E[r | x, a]` including the effect of the noise model.
    pub fn expected_reward(&self, x: &[T], a: usize) -> T {
        let m = self.mean_reward.eval(x, a);
        match self.reward_noise {
            RewardNoise::BernoulliFlip(p) => {
                let p = T::lit(p);
                (T::one() - p) * m + p * (T::one() - m)
            }
            _ => m,
        }
    }

    fn observe<R: Rng + ?Sized>(&self, x: &[T], a: usize, rng: &mut R) -> T {
        let m = self.mean_reward.eval(x, a);
        match self.reward_noise {
            RewardNoise::None => m,
            RewardNoise::Bernoulli => {
                if rng.gen::<f64>() < m.as_f64() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            RewardNoise::BernoulliFlip(p) => {
                if rng.gen::<f64>() < p {
                    T::one() - m
                } else {
                    m
                }
            }
            RewardNoise::Gaussian(sd) => {
                m + T::lit(sd * rng.sample::<f64, _>(rand_distr_free::StandardNormal))
            }
        }
    }

    /// Draws `n` logged samples with actions from `logging`.
    pub fn sample(&self, logging: &DiscretePolicy<T>, n: usize, seed: u64) -> Result<LoggedDataset<T>> {
        if n == 0 {
            return Err(Error::validation("sample size must be at least 1"));
        }
        if logging.action_count() != self.action_count {
            return Err(Error::DimensionMismatch {
                expected: self.action_count,
                got: logging.action_count(),
            });
        }
        let d = self.context_sampler.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ctx = Vec::with_capacity(n * d);
        let mut probs = vec![T::zero(); self.action_count];
        let (mut actions, mut rewards, mut props) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            self.context_sampler.sample(&mut rng, &mut ctx);
            let x = &ctx[i * d..(i + 1) * d];
            logging.probabilities_into(x, &mut probs)?;
            let a = draw_from(&probs, rng.gen::<f64>());
            if !(probs[a] > T::zero()) {
                return Err(Error::numeric("sampled an action with zero logging probability"));
            }
            let r = self.observe(x, a, &mut rng);
            actions.push(a);
            rewards.push(r);
            props.push(probs[a]);
        }
        LoggedDataset::new(Matrix::from_vec(n, d, ctx)?, actions, rewards, props, self.action_count)
    }

    /// `V^π` for one-dimensional uniform contexts by composite Simpson
    /// quadrature with `intervals` (even) panels.
    pub fn policy_value_1d(&self, target: &DiscretePolicy<T>, intervals: usize) -> Result<f64> {
        let (lo, hi) = match self.context_sampler {
            ContextSampler::Uniform { lo, hi, dim: 1 } => (lo, hi),
            _ => {
                return Err(Error::validation(
                    "quadrature value needs one-dimensional uniform contexts",
                ))
            }
        };
        let intervals = intervals.max(2) & !1;
        let h = (hi - lo) / intervals as f64;
        let f = |x: f64| -> Result<f64> {
            let xs = [T::lit(x)];
            let p = target.action_probabilities(&xs)?;
            Ok((0..self.action_count)
                .map(|a| p[a].as_f64() * self.expected_reward(&xs, a).as_f64())
                .sum())
        };
        let mut s = f(lo)? + f(hi)?;
        for k in 1..intervals {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + k as f64 * h)?;
        }
        Ok(s * h / 3.0 / (hi - lo))
    }
}

/// Samples the two-action toy problem, returning the data with its logging
/// and target policies.
pub fn sample_toy<T: Scalar>(
    n: usize,
    seed: u64,
) -> Result<(LoggedDataset<T>, DiscretePolicy<T>, DiscretePolicy<T>)> {
    let logging = DiscretePolicy::toy_logging();
    let target = DiscretePolicy::toy_target();
    let data = SyntheticEnvironment::toy().sample(&logging, n, seed)?;
    Ok((data, logging, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn parse(text: &str, label: LabelColumn, header: bool) -> Result<ClassificationTable<f64>> {
        parse_classification_csv(text.as_bytes(), &label, header)
    }

    #[test]
    fn first_seen_label_indexing() {
        let t = parse("f,c\n1,A\n2,B\n3,A\n", LabelColumn::Name("c".into()), true).unwrap();
        assert_eq!(t.action_count(), 2);
        assert_eq!(t.labels(), &[0, 1, 0]);
        assert_eq!(t.label_names(), &["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn standardization_matches_hand_values() {
        let t = parse("1,0\n2,1\n3,0\n", LabelColumn::Index(1), false).unwrap();
        let col: Vec<f64> = t.features().iter_rows().map(|r| r[0]).collect();
        let s = 1.224744871391589;
        assert_abs_diff_eq!(col[0], -s, epsilon = 1e-6);
        assert_abs_diff_eq!(col[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(col[2], s, epsilon = 1e-6);
    }

    #[test]
    fn constant_column_becomes_zero() {
        let t = parse("5,1,0\n5,2,1\n5,4,1\n", LabelColumn::Last, false).unwrap();
        assert!(t.features().iter_rows().all(|r| r[0] == 0.0));
    }

    #[test]
    fn single_class_is_validation_error() {
        assert!(matches!(
            parse("1,A\n2,A\n", LabelColumn::Index(1), false),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_rows_report_row_numbers() {
        match parse("a,b\n1,0\n2\n", LabelColumn::Index(1), true) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        match parse("1,0\nx,1\n", LabelColumn::Index(1), false) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let feats = Matrix::from_vec(10, 1, (0..10).map(f64::from).collect()).unwrap();
        let t = ClassificationTable::new(feats, (0..10).map(|i| i % 2).collect(), 2).unwrap();
        let (a, b) = split_train_test(&t, 0.7, 5).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        let (a2, _) = split_train_test(&t, 0.7, 5).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<f64> = a.features().iter_rows().chain(b.features().iter_rows()).map(|r| r[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn split_tiny_table() {
        let t = ClassificationTable::new(Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(), vec![0, 1], 2).unwrap();
        let (a, b) = split_train_test(&t, 0.999, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(split_train_test(&t, 0.3, 1).is_err());
    }

    fn two_class_table() -> ClassificationTable<f64> {
        let feats = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        ClassificationTable::new(feats, vec![0, 1, 0, 1], 2).unwrap()
    }

    #[test]
    fn deterministic_reward_is_indicator() {
        let t = two_class_table();
        let logging = DiscretePolicy::uniform(2).unwrap();
        let (d, rows) = to_bandit_traced(&t, &logging, RewardMode::Deterministic, 200, 4).unwrap();
        for i in 0..d.len() {
            let expect = if d.actions()[i] == t.labels()[rows[i]] { 1.0 } else { 0.0 };
            assert_eq!(d.rewards()[i], expect);
            assert_eq!(d.logging_probs()[i], 0.5);
        }
    }

    #[test]
    fn zero_sample_size_rejected() {
        let t = two_class_table();
        let logging = DiscretePolicy::uniform(2).unwrap();
        assert!(matches!(
            to_bandit(&t, &logging, RewardMode::Deterministic, 0, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn zero_logging_probability_rejected() {
        let t = two_class_table();
        let rows = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        // table policies index rows by the first coordinate, so use a single-row table
        let t0 = ClassificationTable::new(Matrix::from_vec(2, 1, vec![0.0, 0.0]).unwrap(), vec![0, 1], 2).unwrap();
        let p = DiscretePolicy::table(rows).unwrap();
        assert!(matches!(
            to_bandit(&t0, &p, RewardMode::Deterministic, 5, 1),
            Err(Error::Validation(_))
        ));
        let _ = t;
    }

    #[test]
    fn derived_dataset_ordering() {
        let (d, _, _) = sample_toy::<f64>(3, 1).unwrap();
        let dd = derive_all_actions(&d, 4).unwrap();
        assert_eq!(dd.len(), 12);
        assert_eq!(dd.pairs()[5], (1, 1));
        let (d1, _, _) = sample_toy::<f64>(1, 1).unwrap();
        assert_eq!(derive_all_actions(&d1, 1).unwrap().pairs(), &[(0, 0)]);
    }

    #[test]
    fn toy_sampling_is_deterministic() {
        let (a, mu, pi) = sample_toy::<f64>(50, 7).unwrap();
        let (b, _, _) = sample_toy::<f64>(50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(mu.action_probabilities(&[0.0]).unwrap()[1], 0.5);
        assert_eq!(pi.action_probabilities(&[0.0]).unwrap()[1], 0.5);
        assert_abs_diff_eq!(mu.action_probabilities(&[1.0]).unwrap()[1], 0.993307, epsilon = 1e-6);
        assert!(a.contexts().as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn bandit_dump_round_trip() {
        let (a, _, _) = sample_toy::<f64>(20, 3).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let b = LoggedDataset::<f64>::read_csv(buf.as_slice(), 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logged_dataset_validation() {
        let c = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        assert!(LoggedDataset::new(c.clone(), vec![0], vec![1.0], vec![0.0], 2).is_err());
        assert!(LoggedDataset::new(c.clone(), vec![2], vec![1.0], vec![0.5], 2).is_err());
        assert!(LoggedDataset::new(c, vec![0], vec![f64::NAN], vec![0.5], 2).is_err());
    }
}
