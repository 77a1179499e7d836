//! Closed-form and brute-force oracles for the core computations.

use approx::assert_abs_diff_eq;
use dric_core::data::{derive_all_actions, sample_toy, to_bandit_traced, RewardMode};
use dric_core::estimators::{dm, dm_ib, dr, dr_ic, ips, switch_dr, SwitchBase};
use dric_core::policy::{importance_weight, kl_divergence, train_multinomial_logistic, LogisticOptions};
use dric_core::reward::{build_cross_covariance, estimate_sigma_r, fit_ridge, IBRewardModel, RewardModel};
use dric_core::tuning::{
    geometric_grid, kl_quantile_grid, select_bandwidth, select_tau, TuningGrid,
};
use dric_core::{ClassificationTable, DiscretePolicy, LoggedDataset, Matrix, PolicyTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_d(xs: &[f64], actions: &[usize], rewards: &[f64], probs: &[f64], k: usize) -> LoggedDataset<f64> {
    let c = Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap();
    LoggedDataset::new(c, actions.to_vec(), rewards.to_vec(), probs.to_vec(), k).unwrap()
}

// ── Toy closed forms ────────────────────────────────────────────────────

#[test]
fn toy_kl_and_weights_match_closed_forms() {
    let mu = DiscretePolicy::<f64>::toy_logging();
    let pi = DiscretePolicy::<f64>::toy_target();
    for k in 0..=100 {
        let x = -1.0 + 2.0 * k as f64 / 100.0;
        let kl = kl_divergence(&pi, &mu, &[x]).unwrap();
        let closed = 5.0 * x * (2.5 * x).tanh();
        assert!((kl - closed).abs() < 1e-9, "x={x}: {kl} vs {closed}");
        let w1 = importance_weight(&pi, &mu, &[x], 1, None).unwrap();
        let w0 = importance_weight(&pi, &mu, &[x], 0, None).unwrap();
        assert!((w1 - (-5.0 * x).exp()).abs() < 1e-12 * (-5.0 * x).exp().max(1.0));
        assert!((w0 - (5.0 * x).exp()).abs() < 1e-12 * (5.0 * x).exp().max(1.0));
    }
}

#[test]
fn toy_sampler_examples() {
    let mu = DiscretePolicy::<f64>::toy_logging();
    let pi = DiscretePolicy::<f64>::toy_target();
    assert_eq!(mu.action_probabilities(&[0.0]).unwrap()[1], 0.5);
    assert_eq!(pi.action_probabilities(&[0.0]).unwrap()[1], 0.5);
    let e5 = 5f64.exp();
    assert_abs_diff_eq!(mu.action_probabilities(&[1.0]).unwrap()[1], e5 / (1.0 + e5), epsilon = 1e-12);
    let (a, _, _) = sample_toy::<f64>(50, 11).unwrap();
    let (b, _, _) = sample_toy::<f64>(50, 11).unwrap();
    assert_eq!(a, b);
}

// ── Policy training ─────────────────────────────────────────────────────

#[test]
fn logistic_reference_class_invariance() {
    // overlapping classes so the unpenalized optimum is finite and unique
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = 150;
    let mut feats = Vec::with_capacity(m * 2);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let c = rng.gen_range(0..3usize);
        let x0 = c as f64 * 0.6 + rng.gen_range(-1.0..1.0);
        let x1 = rng.gen_range(-1.0..1.0) - 0.3 * c as f64;
        feats.extend([x0, x1]);
        labels.push(c);
    }
    let x = Matrix::from_vec(m, 2, feats).unwrap();
    let opts = LogisticOptions {
        l2_penalty: 0.0,
        max_iters: 50_000,
        tolerance: 1e-10,
        intercept: true,
    };
    let base = train_multinomial_logistic(&x, &labels, 3, &opts).unwrap();
    // relabel so class 2 becomes the reference class 0
    let perm = [1usize, 2, 0];
    let relabeled: Vec<usize> = labels.iter().map(|&c| perm[c]).collect();
    let other = train_multinomial_logistic(&x, &relabeled, 3, &opts).unwrap();
    for i in 0..m {
        let p = base.action_probabilities(x.row(i)).unwrap();
        let q = other.action_probabilities(x.row(i)).unwrap();
        for c in 0..3 {
            assert!((p[c] - q[perm[c]]).abs() < 1e-6, "row {i} class {c}: {} vs {}", p[c], q[perm[c]]);
        }
    }
}

// ── Data conversion ─────────────────────────────────────────────────────

fn small_table() -> ClassificationTable<f64> {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0, ((i * 7) % 5) as f64]).collect();
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    ClassificationTable::new(Matrix::from_rows(&rows).unwrap(), labels, 3).unwrap()
}

#[test]
fn deterministic_rewards_match_source_rows() {
    let t = small_table();
    let mu = DiscretePolicy::uniform(3).unwrap();
    let (d, rows) = to_bandit_traced(&t, &mu, RewardMode::Deterministic, 500, 9).unwrap();
    for i in 0..d.len() {
        let expect = if d.actions()[i] == t.labels()[rows[i]] { 1.0 } else { 0.0 };
        assert_eq!(d.rewards()[i], expect);
        assert_eq!(d.context(i), t.features().row(rows[i]));
        assert_eq!(d.logging_probs()[i], 1.0 / 3.0);
    }
}

#[test]
fn stochastic_rewards_keep_rate() {
    let t = small_table();
    // uniform logging, conditioned on a = a*
    let mu = DiscretePolicy::uniform(3).unwrap();
    let (d, rows) = to_bandit_traced(&t, &mu, RewardMode::Stochastic, 30_000, 5).unwrap();
    let hits: Vec<f64> = (0..d.len())
        .filter(|&i| d.actions()[i] == t.labels()[rows[i]])
        .map(|i| d.rewards()[i])
        .collect();
    let n = hits.len() as f64;
    let p = hits.iter().sum::<f64>() / n;
    // 99% binomial interval around 0.7
    let half = 2.576 * (0.7f64 * 0.3 / n).sqrt();
    assert!((p - 0.7).abs() < half, "{p} with n={n}");
}

#[test]
fn derived_dataset_cardinality_grid() {
    for n in 1..=100 {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = one_d(&xs, &vec![0; n], &vec![0.0; n], &vec![1.0; n], 1);
        for k in 1..=10 {
            let dd = derive_all_actions(&d, k).unwrap();
            assert_eq!(dd.len(), n * k);
            for (j, &(i, a)) in dd.pairs().iter().enumerate() {
                assert_eq!((i, a), (j / k, j % k));
            }
        }
    }
}

// ── Information-borrowing model ─────────────────────────────────────────

/// Explicit-matrix evaluation of the IB predictor.
fn ib_oracle(
    d: &LoggedDataset<f64>,
    table: &PolicyTable<f64>,
    base: &dric_core::RidgeModel<f64>,
    h: f64,
) -> Vec<f64> {
    let derived = derive_all_actions(d, d.action_count()).unwrap();
    let dw = table.derived_weights().unwrap();
    let test_w: Vec<f64> = derived.pairs().iter().map(|&(i, a)| dw.get(i, a)).collect();
    let sigma = build_cross_covariance(&derived, d, &test_w, &table.logged_weights, h).unwrap();
    let resid = base.residuals(d);
    let sigma_r = estimate_sigma_r(&resid);
    derived
        .pairs()
        .iter()
        .enumerate()
        .map(|(j, &(i, a))| {
            let s: Vec<f64> = (0..d.len()).map(|c| sigma.get(j, c) / sigma_r).collect();
            let row: f64 = s.iter().sum();
            let ridge = base.predict(Some(i), d.context(i), a);
            if row < 1e-12 {
                ridge
            } else {
                ridge + s.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / row
            }
        })
        .collect()
}

#[test]
fn ib_matches_explicit_matrix_and_interpolates() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 2..=20 {
        // distinct contexts on a jittered lattice in [−1, 1], keeping the
        // toy weights bounded by e^5
        let xs: Vec<f64> = (0..n)
            .map(|i| -1.0 + 1.8 * i as f64 / (n - 1) as f64 + rng.gen_range(0.0..0.05))
            .collect();
        let mu = DiscretePolicy::<f64>::toy_logging();
        let pi = DiscretePolicy::<f64>::toy_target();
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let probs: Vec<f64> = (0..n)
            .map(|i| mu.action_probabilities(&[xs[i]]).unwrap()[actions[i]])
            .collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d = one_d(&xs, &actions, &rewards, &probs, 2);
        let base = fit_ridge(&d, 1.0, 2, 1).unwrap();
        let table = PolicyTable::new(&d, &pi, &mu).unwrap();
        for h in [1e-6, 0.3, 2.0] {
            let ib = IBRewardModel::from_policy_table(&d, base.clone(), h, &table, None).unwrap();
            let pred = ib.predict(&derive_all_actions(&d, 2).unwrap()).unwrap();
            let oracle = ib_oracle(&d, &table, &base, h);
            for (p, o) in pred.iter().zip(&oracle) {
                assert!((p - o).abs() < 1e-9, "n={n} h={h}: {p} vs {o}");
            }
            if h == 1e-6 {
                for i in 0..n {
                    assert!((pred[i * 2 + actions[i]] - rewards[i]).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn ib_huge_bandwidth_adds_mean_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 12;
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    // one action, so π = μ and every weight is 1
    let d = one_d(&xs, &vec![0; n], &rewards, &vec![1.0; n], 1);
    let p = DiscretePolicy::uniform(1).unwrap();
    let base = fit_ridge(&d, 0.5, 1, 1).unwrap();
    let ib = IBRewardModel::fit(&d, base.clone(), 1e6, &p, &p).unwrap();
    let pred = ib.predict_table(&d).unwrap();
    let mean_resid = base.residuals(&d).iter().sum::<f64>() / n as f64;
    for i in 0..n {
        assert_abs_diff_eq!(pred.get(i, 0), base.predict(Some(i), &[xs[i]], 0) + mean_resid, epsilon = 1e-9);
    }
    let plain = dm(&d, &p, &base).unwrap().value;
    assert_abs_diff_eq!(dm_ib(&d, &p, &ib).unwrap().value, plain + mean_resid, epsilon = 1e-9);
}

#[test]
fn ib_zero_residuals_reduce_to_ridge() {
    // zero rewards give θ = 0 exactly and zero residuals
    let (toy, mu, pi) = sample_toy::<f64>(25, 4).unwrap();
    let d = LoggedDataset::new(
        toy.contexts().clone(),
        toy.actions().to_vec(),
        vec![0.0; 25],
        toy.logging_probs().to_vec(),
        2,
    )
    .unwrap();
    let base = fit_ridge(&d, 1.0, 2, 1).unwrap();
    assert!(base.residuals(&d).iter().all(|&e| e == 0.0));
    let ib = IBRewardModel::fit(&d, base.clone(), 0.5, &pi, &mu).unwrap();
    assert_eq!(ib.predict_table(&d).unwrap(), base.predict_table(&d).unwrap());
    assert_eq!(
        dm_ib(&d, &pi, &ib).unwrap().per_sample,
        dm(&d, &pi, &base).unwrap().per_sample
    );
}

// ── Estimator identities ────────────────────────────────────────────────

#[test]
fn estimator_identities_hold_bit_exactly() {
    for seed in 0..20u64 {
        let (d, mu, pi) = sample_toy::<f64>(40, seed).unwrap();
        let base = fit_ridge(&d, 1.0, 2, 3).unwrap();
        let ib = IBRewardModel::fit(&d, base.clone(), 0.4, &pi, &mu).unwrap();

        let zero = Matrix::zeros(40, 2);
        assert_eq!(dr(&d, &pi, &zero).unwrap().per_sample, ips(&d, &pi).unwrap().per_sample);
        assert_eq!(
            switch_dr(&d, &pi, &base, f64::INFINITY, SwitchBase::Ips).unwrap().per_sample,
            ips(&d, &pi).unwrap().per_sample
        );
        assert_eq!(
            dr_ic(&d, &pi, &mu, &ib, 0.0).unwrap().per_sample,
            dm_ib(&d, &pi, &ib).unwrap().per_sample
        );
        let ib_table = ib.predict_table(&d).unwrap();
        assert_eq!(
            dr_ic(&d, &pi, &mu, &ib, f64::INFINITY).unwrap().per_sample,
            dr(&d, &pi, &ib_table).unwrap().per_sample
        );
        let min_w = PolicyTable::target_only(&d, &pi)
            .unwrap()
            .logged_weights
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(
            switch_dr(&d, &pi, &base, min_w * 0.5, SwitchBase::Dr).unwrap().per_sample,
            dm(&d, &pi, &base).unwrap().per_sample
        );
    }
}

#[test]
fn dr_ic_matches_literal_three_term_form() {
    for seed in 0..10u64 {
        let (d, mu, pi) = sample_toy::<f64>(60, 100 + seed).unwrap();
        let base = fit_ridge(&d, 1.0, 2, 1).unwrap();
        let ib = IBRewardModel::fit(&d, base, 0.3, &pi, &mu).unwrap();
        let r_ib = ib.predict_table(&d).unwrap();
        let n = d.len() as f64;
        for tau in [0.0, 0.5, 1.5, 3.0, f64::INFINITY] {
            let (mut first, mut second, mut third) = (0.0, 0.0, 0.0);
            for i in 0..d.len() {
                let x = d.context(i);
                let kl = kl_divergence(&pi, &mu, x).unwrap();
                let p = pi.action_probabilities(x).unwrap();
                let dm_i: f64 = (0..2).map(|a| p[a] * r_ib.get(i, a)).sum();
                let a = d.actions()[i];
                let w = p[a] / d.logging_probs()[i];
                if kl < tau {
                    first += dm_i;
                    second += (d.rewards()[i] - r_ib.get(i, a)) * w;
                } else {
                    third += dm_i;
                }
            }
            let literal = first / n + second / n + third / n;
            let v = dr_ic(&d, &pi, &mu, &ib, tau).unwrap().value;
            assert!((v - literal).abs() < 1e-12, "tau={tau}: {v} vs {literal}");
        }
    }
}

#[test]
fn dr_ic_two_toy_contexts() {
    let mu = DiscretePolicy::<f64>::toy_logging();
    let pi = DiscretePolicy::<f64>::toy_target();
    let xs = [0.0, 1.0];
    let actions = [1usize, 0];
    let probs: Vec<f64> = (0..2)
        .map(|i| mu.action_probabilities(&[xs[i]]).unwrap()[actions[i]])
        .collect();
    let d = one_d(&xs, &actions, &[0.5, 0.0], &probs, 2);
    let base = fit_ridge(&d, 1.0, 2, 1).unwrap();
    let ib = IBRewardModel::fit(&d, base, 0.5, &pi, &mu).unwrap();
    let r = ib.predict_table(&d).unwrap();
    let out = dr_ic(&d, &pi, &mu, &ib, 2.0).unwrap();
    for i in 0..2 {
        let p = pi.action_probabilities(&[xs[i]]).unwrap();
        let dm_i = p[0] * r.get(i, 0) + p[1] * r.get(i, 1);
        let expect = if i == 0 {
            let w = p[actions[i]] / probs[i];
            dm_i + w * (d.rewards()[i] - r.get(i, actions[i]))
        } else {
            dm_i
        };
        assert_abs_diff_eq!(out.per_sample[i], expect, epsilon = 1e-15);
    }
}

// ── Tuning ──────────────────────────────────────────────────────────────

#[test]
fn select_tau_returns_grid_argmin() {
    for seed in 0..5u64 {
        let (d, mu, pi) = sample_toy::<f64>(80, seed).unwrap();
        let base = fit_ridge(&d, 1.0, 2, 3).unwrap();
        let ib = IBRewardModel::fit(&d, base, 0.3, &pi, &mu).unwrap();
        let table = PolicyTable::new(&d, &pi, &mu).unwrap();
        let grid = kl_quantile_grid(&table.kl, 30, true).unwrap();
        let sel = select_tau(&d, &pi, &mu, &ib, &grid, 1.0).unwrap();
        for e in &sel.estimates {
            assert!(sel.best().total <= e.total);
            assert!(e.bias_sq_hat <= e.bias_sq_tilde && e.bias_sq_hat <= e.bias_ub * e.bias_ub);
        }
        let single = TuningGrid::from_values(vec![0.7]).unwrap();
        assert_eq!(select_tau(&d, &pi, &mu, &ib, &single, 1.0).unwrap().value, 0.7);
    }
}

#[test]
fn select_bandwidth_is_deterministic_argmin() {
    let (d, mu, pi) = sample_toy::<f64>(60, 21).unwrap();
    let grid = geometric_grid(0.05, 5.0, 8).unwrap();
    let a = select_bandwidth(&d, &pi, &mu, &grid, 1.0, 3).unwrap();
    let b = select_bandwidth(&d, &pi, &mu, &grid, 1.0, 3).unwrap();
    assert_eq!(a, b);
    for e in &a.estimates {
        assert!(a.best().total <= e.total);
    }
    let single = TuningGrid::from_values(vec![0.4]).unwrap();
    assert_eq!(select_bandwidth(&d, &pi, &mu, &single, 1.0, 3).unwrap().value, 0.4);
}

#[test]
fn tuning_trace_has_row_per_grid_value() {
    let (d, mu, pi) = sample_toy::<f64>(30, 1).unwrap();
    let grid = geometric_grid(0.1, 1.0, 4).unwrap();
    let sel = select_bandwidth(&d, &pi, &mu, &grid, 1.0, 1).unwrap();
    let mut buf = Vec::new();
    sel.write_trace(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("value,bias_sq_tilde,bias_ub,bias_sq_hat,variance_hat,total"));
}
