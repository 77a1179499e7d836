//! Two-action toy problem comparing the weight-based switching rule with
//! the KL-based one.

use std::fmt;
use std::io::Write;

use dric_core::data::sample_toy;
use dric_core::policy::kl_divergence;
use dric_core::{DiscretePolicy, LoggedDataset};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Residual correction applied.
    Dr,
    /// Reward model only.
    Dm,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Dr => "dr",
            Branch::Dm => "dm",
        })
    }
}

/// Switch-DR keeps the correction while `w(x, a) ≤ τ_w`.
pub fn switch_branch(weight: f64, tau_w: f64) -> Branch {
    if weight <= tau_w {
        Branch::Dr
    } else {
        Branch::Dm
    }
}

/// DR-IC keeps the correction while `D_KL(x) < τ`.
pub fn dric_branch(kl: f64, tau_kl: f64) -> Branch {
    if kl < tau_kl {
        Branch::Dr
    } else {
        Branch::Dm
    }
}

/// Closed-form toy weight `π(a|x)/μ(a|x)`: `e^{5x}` for action 0 and
/// `e^{−5x}` for action 1.
pub fn toy_weight(x: f64, action: usize) -> f64 {
    if action == 0 {
        (5.0 * x).exp()
    } else {
        (-5.0 * x).exp()
    }
}

/// Closed-form toy KL divergence `5x · tanh(5x/2)`.
pub fn toy_kl(x: f64) -> f64 {
    5.0 * x * (2.5 * x).tanh()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRow {
    pub split: &'static str,
    pub x: f64,
    pub action: usize,
    pub weight: f64,
    pub kl: f64,
    pub switch_branch: Branch,
    pub dric_branch: Branch,
}

impl ToyRow {
    pub fn agrees(&self) -> bool {
        self.switch_branch == self.dric_branch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub rows: Vec<ToyRow>,
    pub tau_w: f64,
    pub tau_kl: f64,
}

impl ToyReport {
    pub fn disagreements(&self) -> usize {
        self.rows.iter().filter(|r| !r.agrees()).count()
    }

    /// One row per logged sample, then a `summary` row whose `agree` cell
    /// holds the disagreement count over all rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["split", "x", "action", "weight", "kl", "switch_branch", "dric_branch", "agree"])?;
        for r in &self.rows {
            w.write_record([
                r.split.to_string(),
                r.x.to_string(),
                r.action.to_string(),
                r.weight.to_string(),
                r.kl.to_string(),
                r.switch_branch.to_string(),
                r.dric_branch.to_string(),
                r.agrees().to_string(),
            ])?;
        }
        w.write_record([
            "summary".to_string(),
            String::new(),
            String::new(),
            self.tau_w.to_string(),
            self.tau_kl.to_string(),
            String::new(),
            String::new(),
            format!("{} of {} disagree", self.disagreements(), self.rows.len()),
        ])?;
        w.flush()?;
        Ok(())
    }
}

fn rows_for(
    split: &'static str,
    data: &LoggedDataset<f64>,
    logging: &DiscretePolicy<f64>,
    target: &DiscretePolicy<f64>,
    tau_w: f64,
    tau_kl: f64,
) -> Result<Vec<ToyRow>> {
    (0..data.len())
        .map(|i| {
            let x = data.context(i);
            let a = data.actions()[i];
            let weight = target.action_probabilities(x)?[a] / data.logging_probs()[i];
            let kl = kl_divergence(target, logging, x)?;
            Ok(ToyRow {
                split,
                x: x[0],
                action: a,
                weight,
                kl,
                switch_branch: switch_branch(weight, tau_w),
                dric_branch: dric_branch(kl, tau_kl),
            })
        })
        .collect()
}

/// Samples the toy problem and records which branch each rule picks for
/// every logged sample.
pub fn toy_comparison(n_train: usize, n_test: usize, tau_w: f64, tau_kl: f64, seed: u64) -> Result<ToyReport> {
    if n_train < 1 || n_test < 1 {
        return Err(BenchError::config("toy sample sizes must be at least 1"));
    }
    let (train, logging, target) = sample_toy::<f64>(n_train, seed)?;
    let (test, _, _) = sample_toy::<f64>(n_test, seed.wrapping_add(1))?;
    let mut rows = rows_for("train", &train, &logging, &target, tau_w, tau_kl)?;
    rows.extend(rows_for("test", &test, &logging, &target, tau_w, tau_kl)?);
    Ok(ToyReport { rows, tau_w, tau_kl })
}

/// Grid points `(x, action)` over `[−1, 1]` where the two rules disagree,
/// using the closed forms.
pub fn closed_form_disagreements(tau_w: f64, tau_kl: f64, points: usize) -> Vec<(f64, usize)> {
    let mut out = Vec::new();
    for k in 0..points {
        let x = -1.0 + 2.0 * k as f64 / (points - 1) as f64;
        for a in 0..2 {
            if switch_branch(toy_weight(x, a), tau_w) != dric_branch(toy_kl(x), tau_kl) {
                out.push((x, a));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_agrees() {
        assert_eq!(toy_weight(0.0, 0), 1.0);
        assert_eq!(toy_kl(0.0), 0.0);
        assert_eq!(switch_branch(1.0, 1.0), Branch::Dr);
        assert_eq!(dric_branch(0.0, 1e-3), Branch::Dr);
    }

    #[test]
    fn large_kl_small_weight_disagrees() {
        // x = 0.6: KL ≈ 2.71 > 2.20 but w(x, 1) = e^{−3} < 12.65
        let x = 0.6;
        assert!(toy_kl(x) > 2.2);
        assert_eq!(switch_branch(toy_weight(x, 1), 12.65), Branch::Dr);
        assert_eq!(dric_branch(toy_kl(x), 2.2), Branch::Dm);
        let hits = closed_form_disagreements(12.65, 2.2, 201);
        assert!(hits.iter().any(|&(g, a)| a == 1 && (g - x).abs() < 1e-9));
    }

    #[test]
    fn comparison_is_deterministic() {
        let a = toy_comparison(20, 20, 12.65, 2.2, 7).unwrap();
        let b = toy_comparison(20, 20, 12.65, 2.2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 40);
        for r in &a.rows {
            assert!((r.kl - toy_kl(r.x)).abs() < 1e-9);
            assert!((r.weight - toy_weight(r.x, r.action)).abs() < 1e-9 * r.weight.max(1.0));
        }
    }
}
