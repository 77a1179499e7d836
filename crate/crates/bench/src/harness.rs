//! The classification-to-bandit benchmark: policy construction, exact
//! ground truth, replicated estimation and clipped-MSE aggregation.

use std::cell::OnceCell;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dric_core::data::{load_classification_csv, split_train_test, to_bandit, RewardMode};
use dric_core::estimators::{terms, SwitchBase};
use dric_core::policy::{kl_from_probabilities, train_multinomial_logistic};
use dric_core::reward::{default_nw_grid, fit_base, loo_cv_bandwidth, IBRewardModel, NWModel, NwVariant};
use dric_core::scalar::mean;
use dric_core::tuning::{
    geometric_grid, kl_quantile_grid, select_bandwidth_with_base, select_switch_threshold,
    select_tau_from_tables, switch_weight_grid, TuningGrid,
};
use dric_core::{
    ClassificationTable, DiscretePolicy, LoggedDataset, LogisticOptions, Matrix, PolicyTable,
    RewardModel, RidgeModel,
};

use crate::config::{EstimatorKind, ExperimentConfig};
use crate::error::{BenchError, Result};

// ── Seeding ─────────────────────────────────────────────────────────────

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive splitmix64 hash of a tuple of integers.
pub fn hash_parts(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |h, &p| splitmix64(h ^ p))
}

/// `base_seed ⊕ hash(seed index, n, replicate index)`.
pub fn replicate_seed(base_seed: u64, seed_index: usize, n: usize, replicate: usize) -> u64 {
    base_seed ^ hash_parts(&[seed_index as u64, n as u64, replicate as u64])
}

fn split_seed(base_seed: u64, seed_index: usize) -> u64 {
    base_seed ^ hash_parts(&[seed_index as u64, u64::MAX])
}

fn label_seed(base_seed: u64, seed_index: usize) -> u64 {
    base_seed ^ hash_parts(&[seed_index as u64, u64::MAX - 1])
}

// ── Policies and ground truth ───────────────────────────────────────────

/// Logging policy: logistic fit to uniformly random labels. Target policy:
/// logistic fit to the true labels.
pub fn make_policies(
    train: &ClassificationTable<f64>,
    seed: u64,
    options: &LogisticOptions<f64>,
) -> Result<(DiscretePolicy<f64>, DiscretePolicy<f64>)> {
    let k = train.action_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_labels: Vec<usize> = (0..train.len()).map(|_| rng.gen_range(0..k)).collect();
    let logging = train_multinomial_logistic(train.features(), &random_labels, k, options)?;
    let target = train_multinomial_logistic(train.features(), train.labels(), k, options)?;
    Ok((logging, target))
}

/// `V^π = (1/m) Σ_x Σ_a π(a|x) E[r | x, a]` over the table, computed exactly.
pub fn ground_truth(
    test: &ClassificationTable<f64>,
    target: &DiscretePolicy<f64>,
    mode: RewardMode,
) -> Result<f64> {
    if test.is_empty() {
        return Err(BenchError::config("ground truth needs a non-empty table"));
    }
    let mut probs = vec![0.0; target.action_count()];
    let mut total = 0.0;
    for (i, row) in test.features().iter_rows().enumerate() {
        target.probabilities_into(row, &mut probs)?;
        let star = test.labels()[i];
        total += probs
            .iter()
            .enumerate()
            .map(|(a, &p)| p * mode.expected_reward::<f64>(a, star))
            .sum::<f64>();
    }
    Ok(total / test.len() as f64)
}

/// Mean of `min(e, 1)` over squared errors.
pub fn clipped_mse(squared_errors: &[f64]) -> f64 {
    if squared_errors.is_empty() {
        return 0.0;
    }
    squared_errors.iter().map(|e| e.min(1.0)).sum::<f64>() / squared_errors.len() as f64
}

/// Index of the grid value whose replicate estimates have the smallest
/// clipped MSE against `truth`; `per_replicate[r][g]` is replicate `r`'s
/// estimate at grid value `g`. Ties go to the earlier (smaller) value.
pub fn oracle_index(grid_len: usize, per_replicate: &[Vec<f64>], truth: f64) -> Result<usize> {
    if grid_len == 0 {
        return Err(BenchError::config("oracle grid is empty"));
    }
    let mut best = (0, f64::INFINITY);
    for g in 0..grid_len {
        let errs: Vec<f64> = per_replicate.iter().map(|v| (v[g] - truth).powi(2)).collect();
        let m = clipped_mse(&errs);
        if m < best.1 {
            best = (g, m);
        }
    }
    Ok(best.0)
}

/// Grid parameter minimizing clipped MSE against ground truth, where
/// `evaluator(p)` yields one estimate per replicate.
pub fn oracle_tune(grid: &[f64], evaluator: impl Fn(f64) -> Vec<f64>, truth: f64) -> Result<f64> {
    let columns: Vec<Vec<f64>> = grid.iter().map(|&p| evaluator(p)).collect();
    let reps = columns.first().map_or(0, Vec::len);
    let per_replicate: Vec<Vec<f64>> = (0..reps)
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect();
    Ok(grid[oracle_index(grid.len(), &per_replicate, truth)?])
}

// ── Per-seed setup ──────────────────────────────────────────────────────

/// Everything fixed for one seed: the split, both policies, the ground truth
/// and the oracle grids built from the test population.
#[derive(Debug, Clone)]
pub struct SeedContext {
    pub seed_index: usize,
    pub train: ClassificationTable<f64>,
    pub test: ClassificationTable<f64>,
    pub logging: DiscretePolicy<f64>,
    pub target: DiscretePolicy<f64>,
    pub truth: f64,
    pub kl_grid: TuningGrid<f64>,
    pub switch_grid: TuningGrid<f64>,
}

pub fn prepare_seed(
    table: &ClassificationTable<f64>,
    cfg: &ExperimentConfig,
    seed_index: usize,
) -> Result<SeedContext> {
    let (train, test) = split_train_test(table, cfg.train_fraction, split_seed(cfg.base_seed, seed_index))?;
    let (logging, target) = make_policies(&train, label_seed(cfg.base_seed, seed_index), &cfg.logistic)?;
    let truth = ground_truth(&test, &target, cfg.reward_mode)?;

    let tp = target.probability_matrix(test.features())?;
    let lp = logging.probability_matrix(test.features())?;
    let mut kl = Vec::with_capacity(test.len());
    let mut weights = Vec::with_capacity(test.len() * test.action_count());
    for i in 0..test.len() {
        kl.push(kl_from_probabilities(tp.row(i), lp.row(i))?);
        weights.extend(tp.row(i).iter().zip(lp.row(i)).map(|(p, q)| p / q));
    }
    let kl_grid = kl_quantile_grid(&kl, cfg.kl_grid_count, cfg.include_zero_quantile)?;
    let switch_grid = switch_weight_grid(&weights, cfg.switch_grid_count)?;
    Ok(SeedContext {
        seed_index,
        train,
        test,
        logging,
        target,
        truth,
        kl_grid,
        switch_grid,
    })
}

// ── One replicate ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Point { value: f64, h: Option<f64>, tau: Option<f64> },
    /// One estimate per oracle grid value.
    Curve { values: Vec<f64>, h: Option<f64> },
}

type Slot = std::result::Result<Outcome, String>;

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub outcomes: Vec<Slot>,
    pub elapsed_ns: Vec<u128>,
}

/// Lazily computed quantities shared by several estimators.
struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    ctx: &'a SeedContext,
    data: &'a LoggedDataset<f64>,
    table: OnceCell<std::result::Result<PolicyTable<f64>, String>>,
    base: OnceCell<std::result::Result<(RidgeModel<f64>, Matrix<f64>), String>>,
    ib: OnceCell<std::result::Result<(f64, Matrix<f64>), String>>,
    nw: OnceCell<std::result::Result<Matrix<f64>, String>>,
}

impl<'a> Shared<'a> {
    fn table(&self) -> std::result::Result<&PolicyTable<f64>, String> {
        self.table
            .get_or_init(|| {
                PolicyTable::new(self.data, &self.ctx.target, &self.ctx.logging).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn base(&self) -> std::result::Result<&(RidgeModel<f64>, Matrix<f64>), String> {
        self.base
            .get_or_init(|| {
                let m = fit_base(
                    self.data,
                    self.cfg.ridge_lambda,
                    self.data.action_count(),
                    self.cfg.cross_fit_folds,
                    self.cfg.base_kind,
                )
                .map_err(|e| e.to_string())?;
                let p = m.predict_table(self.data).map_err(|e| e.to_string())?;
                Ok((m, p))
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Bandwidth chosen at `τ = ∞` and the resulting IB prediction table.
    fn ib(&self) -> std::result::Result<&(f64, Matrix<f64>), String> {
        self.ib
            .get_or_init(|| {
                let table = self.table()?;
                let (base, _) = self.base()?;
                let g = self.cfg.bandwidth_grid;
                let run = || -> dric_core::Result<(f64, Matrix<f64>)> {
                    let grid = geometric_grid(g.lo, g.hi, g.count)?;
                    let sel = select_bandwidth_with_base(self.data, table, base, &grid)?;
                    let ib = IBRewardModel::from_policy_table(self.data, base.clone(), sel.value, table, None)?;
                    Ok((sel.value, ib.predict_table(self.data)?))
                };
                run().map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn nw(&self) -> std::result::Result<&Matrix<f64>, String> {
        self.nw
            .get_or_init(|| {
                let run = || -> dric_core::Result<Matrix<f64>> {
                    let h = loo_cv_bandwidth(self.data, &default_nw_grid(), NwVariant::Plain, None)?;
                    NWModel::new(self.data, h, NwVariant::Plain)?.predict_table(self.data)
                };
                run().map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn r_max(&self) -> f64 {
        self.cfg.r_max.unwrap_or(1.0)
    }

    fn point(value: f64) -> Outcome {
        Outcome::Point { value, h: None, tau: None }
    }

    fn evaluate(&self, kind: EstimatorKind) -> Slot {
        let data = self.data;
        let err = |e: dric_core::Error| e.to_string();
        match kind {
            EstimatorKind::Dm => {
                let (_, pred) = self.base()?;
                Ok(Self::point(mean(&terms::dm(&self.table()?.target, pred))))
            }
            EstimatorKind::Ips => Ok(Self::point(mean(&terms::ips(data, &self.table()?.logged_weights)))),
            EstimatorKind::Dr => {
                let (_, pred) = self.base()?;
                Ok(Self::point(mean(&terms::dr(data, self.table()?, pred))))
            }
            EstimatorKind::SwitchDr => {
                let table = self.table()?;
                let (_, pred) = self.base()?;
                let grid = switch_weight_grid(&table.logged_weights, self.cfg.switch_grid_count).map_err(err)?;
                let sel = select_switch_threshold(data, table, pred, &grid, SwitchBase::Dr, self.r_max())
                    .map_err(err)?;
                let y = terms::switch_dr(data, table, pred, sel.value, SwitchBase::Dr);
                Ok(Outcome::Point {
                    value: mean(&y),
                    h: None,
                    tau: Some(sel.value),
                })
            }
            EstimatorKind::SwitchDrOracle => {
                let table = self.table()?;
                let (_, pred) = self.base()?;
                let values = self
                    .ctx
                    .switch_grid
                    .values()
                    .iter()
                    .map(|&t| mean(&terms::switch_dr(data, table, pred, t, SwitchBase::Dr)))
                    .collect();
                Ok(Outcome::Curve { values, h: None })
            }
            EstimatorKind::DmIb => {
                let (h, pred) = self.ib()?;
                Ok(Outcome::Point {
                    value: mean(&terms::dm(&self.table()?.target, pred)),
                    h: Some(*h),
                    tau: Some(0.0),
                })
            }
            EstimatorKind::DrIc => {
                let table = self.table()?;
                let (h, pred) = self.ib()?;
                let grid = kl_quantile_grid(&table.kl, self.cfg.kl_grid_count, self.cfg.include_zero_quantile)
                    .map_err(err)?;
                let sel = select_tau_from_tables(data, table, pred, &grid, self.r_max()).map_err(err)?;
                let y = terms::dr_ic(data, table, pred, sel.value);
                Ok(Outcome::Point {
                    value: mean(&y),
                    h: Some(*h),
                    tau: Some(sel.value),
                })
            }
            EstimatorKind::DrIcOracle => {
                let table = self.table()?;
                let (h, pred) = self.ib()?;
                let dm_terms = terms::dm(&table.target, pred);
                let values = self
                    .ctx
                    .kl_grid
                    .values()
                    .iter()
                    .map(|&t| mean(&terms::dr_ic_from_dm(data, table, pred, &dm_terms, t)))
                    .collect();
                Ok(Outcome::Curve { values, h: Some(*h) })
            }
            EstimatorKind::DmNw => {
                let pred = self.nw()?;
                Ok(Self::point(mean(&terms::dm(&self.table()?.target, pred))))
            }
            EstimatorKind::DrNw => {
                let pred = self.nw()?;
                Ok(Self::point(mean(&terms::dr(data, self.table()?, pred))))
            }
        }
    }
}

/// Draws one bandit dataset from the test split and runs every configured
/// estimator on it.
pub fn evaluate_replicate(cfg: &ExperimentConfig, ctx: &SeedContext, n: usize, replicate: usize) -> ReplicateResult {
    let k = cfg.estimators.len();
    let seed = replicate_seed(cfg.base_seed, ctx.seed_index, n, replicate);
    let data = match to_bandit(&ctx.test, &ctx.logging, cfg.reward_mode, n, seed) {
        Ok(d) => d,
        Err(e) => {
            return ReplicateResult {
                outcomes: vec![Err(e.to_string()); k],
                elapsed_ns: vec![0; k],
            }
        }
    };
    let shared = Shared {
        cfg,
        ctx,
        data: &data,
        table: OnceCell::new(),
        base: OnceCell::new(),
        ib: OnceCell::new(),
        nw: OnceCell::new(),
    };
    let mut outcomes = Vec::with_capacity(k);
    let mut elapsed_ns = Vec::with_capacity(k);
    for &kind in &cfg.estimators {
        let start = Instant::now();
        outcomes.push(shared.evaluate(kind));
        elapsed_ns.push(start.elapsed().as_nanos());
    }
    ReplicateResult { outcomes, elapsed_ns }
}

// ── Aggregation and output ──────────────────────────────────────────────

/// One output row: an estimator's performance for one `(n, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub estimator: String,
    pub n: usize,
    pub seed: usize,
    pub mse: Option<f64>,
    pub bias2: Option<f64>,
    pub var: Option<f64>,
    /// Mean selected bandwidth over replicates.
    pub param_h: Option<f64>,
    /// Mean selected threshold over replicates, or the oracle threshold.
    pub param_tau: Option<f64>,
    pub wall_ms: Option<f64>,
    pub error: String,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "dataset", "estimator", "n", "seed", "mse", "bias2", "var", "param_h", "param_tau", "wall_ms", "error",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.estimator.clone(),
                r.n.to_string(),
                r.seed.to_string(),
                cell(r.mse),
                cell(r.bias2),
                cell(r.var),
                cell(r.param_h),
                cell(r.param_tau),
                cell(r.wall_ms),
                r.error.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows for one estimator tag, in output order.
    pub fn for_estimator<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.estimator == tag)
    }

    pub fn find(&self, tag: &str, n: usize, seed: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.estimator == tag && r.n == n && r.seed == seed)
    }
}

fn mean_opt(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Summarizes one estimator's replicate outcomes against the ground truth.
pub fn aggregate(
    label: (&str, EstimatorKind, usize, usize),
    slots: &[&Slot],
    ctx: &SeedContext,
    wall_ms: Option<f64>,
) -> ResultRow {
    let (dataset, kind, n, seed) = label;
    let total = slots.len();
    let mut failures = slots.iter().filter_map(|s| s.as_ref().err());
    let first_error = failures.next().cloned();
    let failed = first_error.as_ref().map_or(0, |_| 1 + failures.count());
    let ok: Vec<&Outcome> = slots.iter().filter_map(|s| s.as_ref().ok()).collect();

    let mut values = Vec::with_capacity(ok.len());
    let mut hs = Vec::with_capacity(ok.len());
    let mut taus = Vec::with_capacity(ok.len());
    let mut oracle_tau = None;
    let curves: Vec<Vec<f64>> = ok
        .iter()
        .filter_map(|o| match o {
            Outcome::Curve { values, .. } => Some(values.clone()),
            _ => None,
        })
        .collect();
    if !curves.is_empty() {
        let grid = if kind == EstimatorKind::SwitchDrOracle {
            &ctx.switch_grid
        } else {
            &ctx.kl_grid
        };
        // curves come from a fixed grid, so the index is always in range
        let idx = oracle_index(grid.len(), &curves, ctx.truth).expect("non-empty grid");
        oracle_tau = Some(grid.values()[idx]);
        values.extend(curves.iter().map(|c| c[idx]));
    }
    for o in &ok {
        match o {
            Outcome::Point { value, h, tau } => {
                values.push(*value);
                hs.push(*h);
                taus.push(*tau);
            }
            Outcome::Curve { h, .. } => hs.push(*h),
        }
    }

    let truth = ctx.truth;
    let (mse, bias2, var) = if values.is_empty() {
        (None, None, None)
    } else {
        let sq: Vec<f64> = values.iter().map(|v| (v - truth).powi(2)).collect();
        let m = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
        (Some(clipped_mse(&sq)), Some((m - truth).powi(2)), Some(var))
    };
    let error = match first_error {
        Some(e) => format!("{failed} of {total} replicates failed: {e}"),
        None => String::new(),
    };
    ResultRow {
        dataset: dataset.to_string(),
        estimator: kind.tag().to_string(),
        n,
        seed,
        mse,
        bias2,
        var,
        param_h: mean_opt(&hs),
        param_tau: oracle_tau.or_else(|| mean_opt(&taus)),
        wall_ms,
        error,
    }
}

fn failed_rows(cfg: &ExperimentConfig, seed: usize, message: &str) -> Vec<ResultRow> {
    let dataset = cfg.dataset_label();
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        for &kind in &cfg.estimators {
            rows.push(ResultRow {
                dataset: dataset.clone(),
                estimator: kind.tag().to_string(),
                n,
                seed,
                mse: None,
                bias2: None,
                var: None,
                param_h: None,
                param_tau: None,
                wall_ms: None,
                error: message.to_string(),
            });
        }
    }
    rows
}

/// Runs the full protocol over an already loaded table.
pub fn run_on_table(cfg: &ExperimentConfig, table: &ClassificationTable<f64>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let dataset = cfg.dataset_label();
    let mut result = ExperimentResult::default();
    for seed in 0..cfg.seeds {
        let ctx = match prepare_seed(table, cfg, seed) {
            Ok(c) => c,
            Err(BenchError::Core(e)) if !e.is_validation() => {
                result.rows.extend(failed_rows(cfg, seed, &e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        for &n in &cfg.sizes {
            // collect preserves replicate order, so aggregation is
            // independent of the thread schedule
            let reps: Vec<ReplicateResult> = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| evaluate_replicate(cfg, &ctx, n, r))
                .collect();
            for (k, &kind) in cfg.estimators.iter().enumerate() {
                let slots: Vec<&Slot> = reps.iter().map(|r| &r.outcomes[k]).collect();
                let wall_ms = cfg
                    .timing
                    .then(|| reps.iter().map(|r| r.elapsed_ns[k]).sum::<u128>() as f64 / 1e6);
                result
                    .rows
                    .push(aggregate((&dataset, kind, n, seed), &slots, &ctx, wall_ms));
            }
        }
    }
    Ok(result)
}

/// Loads the configured dataset and runs the protocol.
pub fn run_replicates(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let table = load_classification_csv(&cfg.dataset, &cfg.label_col, cfg.has_header)?;
    run_on_table(cfg, &table)
}
