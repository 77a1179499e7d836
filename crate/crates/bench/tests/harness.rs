//! Protocol checks on the bundled datasets.

use std::path::{Path, PathBuf};

use dric_bench::config::{EstimatorKind, ExperimentConfig};
use dric_bench::harness::{make_policies, prepare_seed, run_on_table, ground_truth};
use dric_core::data::{load_classification_csv, split_train_test, to_bandit, LabelColumn, RewardMode};
use dric_core::{ClassificationTable, LogisticOptions};

fn dataset(name: &str) -> (PathBuf, ClassificationTable<f64>) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(format!("{name}.csv"));
    let table = load_classification_csv(&path, &LabelColumn::Last, true).unwrap();
    (path, table)
}

fn small_config(path: PathBuf, estimators: Vec<EstimatorKind>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = path;
    cfg.sizes = vec![80];
    cfg.replicates = 12;
    cfg.seeds = 2;
    cfg.estimators = estimators;
    cfg
}

// ── Ground truth ────────────────────────────────────────────────────────

#[test]
fn ground_truth_matches_monte_carlo() {
    for name in ["glass", "ecoli"] {
        let (_, table) = dataset(name);
        let (train, test) = split_train_test(&table, 0.7, 3).unwrap();
        let (_, target) = make_policies(&train, 4, &LogisticOptions::default()).unwrap();
        for mode in [RewardMode::Deterministic, RewardMode::Stochastic] {
            let truth = ground_truth(&test, &target, mode).unwrap();
            // acting with the target policy itself makes the mean reward an
            // unbiased estimate of its value
            let m = 100_000;
            let d = to_bandit(&test, &target, mode, m, 9).unwrap();
            let mean = d.rewards().iter().sum::<f64>() / m as f64;
            let var = d.rewards().iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            let se = (var / m as f64).sqrt();
            assert!((mean - truth).abs() <= 4.0 * se, "{name} {mode:?}: {mean} vs {truth} (se {se})");
        }
    }
}

// ── Policies ────────────────────────────────────────────────────────────

#[test]
fn logging_policy_is_diffuse_and_target_beats_chance() {
    for name in ["glass", "ecoli"] {
        let (_, table) = dataset(name);
        assert!(table.action_count() >= 4);
        let (train, test) = split_train_test(&table, 0.7, 11).unwrap();
        let (logging, target) = make_policies(&train, 12, &LogisticOptions::default()).unwrap();
        let probs = logging.probability_matrix(test.features()).unwrap();
        let mean_max = probs
            .iter_rows()
            .map(|r| r.iter().copied().fold(0.0, f64::max))
            .sum::<f64>()
            / test.len() as f64;
        assert!(mean_max < 0.6, "{name}: logging mean max prob {mean_max}");
        let value = ground_truth(&test, &target, RewardMode::Deterministic).unwrap();
        assert!(value > 1.0 / table.action_count() as f64, "{name}: target value {value}");
    }
}

#[test]
fn policies_are_deterministic_per_seed() {
    let (_, table) = dataset("glass");
    let (train, _) = split_train_test(&table, 0.7, 1).unwrap();
    let opts = LogisticOptions::default();
    let a = make_policies(&train, 5, &opts).unwrap();
    let b = make_policies(&train, 5, &opts).unwrap();
    assert_eq!(a.0.to_text(), b.0.to_text());
    assert_eq!(a.1.to_text(), b.1.to_text());
    let c = make_policies(&train, 6, &opts).unwrap();
    assert_ne!(a.0.to_text(), c.0.to_text());
}

// ── Runs ────────────────────────────────────────────────────────────────

#[test]
fn run_rows_cover_every_cell_and_stay_in_range() {
    let (path, table) = dataset("ecoli");
    let cfg = small_config(path, EstimatorKind::ALL.to_vec());
    let result = run_on_table(&cfg, &table).unwrap();
    assert_eq!(result.rows.len(), EstimatorKind::ALL.len() * cfg.seeds * cfg.sizes.len());
    for row in &result.rows {
        assert!(row.error.is_empty(), "{} failed: {}", row.estimator, row.error);
        let mse = row.mse.unwrap();
        assert!((0.0..=1.0).contains(&mse), "{}: mse {mse}", row.estimator);
        assert!(row.var.unwrap() >= 0.0);
        assert!(row.wall_ms.is_none());
    }
    for tag in ["dm-ib", "dr-ic", "dr-ic-oracle"] {
        assert!(result.for_estimator(tag).all(|r| r.param_h.is_some()));
    }
    for tag in ["dr-ic", "dr-ic-oracle", "switch-dr", "switch-dr-oracle"] {
        assert!(result.for_estimator(tag).all(|r| r.param_tau.is_some()));
    }
}

#[test]
fn rows_do_not_depend_on_other_estimators() {
    let (path, table) = dataset("glass");
    let full = run_on_table(&small_config(path.clone(), EstimatorKind::ALL.to_vec()), &table).unwrap();
    let alone = run_on_table(&small_config(path, vec![EstimatorKind::DrIc]), &table).unwrap();
    for row in &alone.rows {
        assert_eq!(full.find("dr-ic", row.n, row.seed), Some(row));
    }
}

#[test]
fn oracle_grids_are_fixed_per_seed() {
    let (path, table) = dataset("glass");
    let cfg = small_config(path, vec![EstimatorKind::DrIcOracle]);
    let a = prepare_seed(&table, &cfg, 0).unwrap();
    let b = prepare_seed(&table, &cfg, 0).unwrap();
    assert_eq!(a.kl_grid, b.kl_grid);
    assert_eq!(a.switch_grid, b.switch_grid);
    assert_eq!(a.truth, b.truth);
    let kl = a.kl_grid.values();
    assert!(kl.windows(2).all(|w| w[0] < w[1]));
    // oracle τ lands on the fixed grid
    let result = run_on_table(&cfg, &table).unwrap();
    let tau = result.find("dr-ic-oracle", 80, 0).unwrap().param_tau.unwrap();
    assert!(kl.contains(&tau));
}
