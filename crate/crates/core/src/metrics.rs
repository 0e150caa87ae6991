//! Uplift metrics computed from a score vector aligned with a dataset's rows.
//!
//! Rankings sort by descending score and break ties by ascending row index,
//! so every metric is a deterministic function of `(scores, dataset)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{group_view, Group, UpliftDataset};
use crate::{Error, Result};

/// Per-arm outcome rates and the derived constants of the AUUC decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub y_bar_t: f64,
    pub y_bar_c: f64,
    pub lambda_t: f64,
    pub lambda_c: f64,
    pub gamma: f64,
    pub ate: f64,
}

impl GroupStats {
    pub fn from_means(y_bar_t: f64, y_bar_c: f64) -> Self {
        Self {
            y_bar_t,
            y_bar_c,
            lambda_t: y_bar_t * (1.0 - y_bar_t),
            lambda_c: y_bar_c * (1.0 - y_bar_c),
            gamma: y_bar_t - y_bar_t * y_bar_t / 2.0 - y_bar_c * y_bar_c / 2.0,
            ate: y_bar_t - y_bar_c,
        }
    }
}

pub fn group_stats(ds: &UpliftDataset) -> Result<GroupStats> {
    let (mut sum_t, mut n_t, mut sum_c, mut n_c) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &y) in ds.treatment().iter().zip(ds.outcome()) {
        if t == 1 {
            n_t += 1;
            sum_t += y as usize;
        } else {
            n_c += 1;
            sum_c += y as usize;
        }
    }
    if n_t == 0 {
        return Err(Error::EmptyGroup("T"));
    }
    if n_c == 0 {
        return Err(Error::EmptyGroup("C"));
    }
    Ok(GroupStats::from_means(
        sum_t as f64 / n_t as f64,
        sum_c as f64 / n_c as f64,
    ))
}

/// Value charged to a positive/negative pair with equal scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties count as misordered (`f(x+) <= f(x-)`); upper-bounds the strict risk.
    Full,
    /// Ties count one half; `1 - risk` is the usual AUC.
    #[default]
    Half,
}

impl TiePolicy {
    pub fn tie_value(self) -> f64 {
        match self {
            TiePolicy::Full => 1.0,
            TiePolicy::Half => 0.5,
        }
    }
}

fn check_finite(scores: &[f64]) -> Result<()> {
    match scores.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("score at position {i}"))),
        None => Ok(()),
    }
}

/// Empirical bipartite ranking risk: the fraction of (positive, negative)
/// pairs where the positive is scored below the negative, ties charged per
/// `tie_policy`. Runs in `O((P + N) log N)`.
pub fn ranking_risk(scores_pos: &[f64], scores_neg: &[f64], tie_policy: TiePolicy) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::invalid(
            "ranking risk needs at least one positive and one negative",
        ));
    }
    check_finite(scores_pos)?;
    check_finite(scores_neg)?;
    let mut neg = scores_neg.to_vec();
    neg.sort_by(|a, b| a.total_cmp(b));
    let n = neg.len();
    let tie = tie_policy.tie_value();
    let mut total = 0.0;
    for &s in scores_pos {
        // neg[..lo] < s, neg[lo..hi] == s, neg[hi..] > s
        let lo = neg.partition_point(|&v| v < s);
        let hi = neg.partition_point(|&v| v <= s);
        total += (n - hi) as f64 + tie * (hi - lo) as f64;
    }
    Ok(total / (scores_pos.len() as f64 * n as f64))
}

/// Risks `(R(f, S^T), R(f, S~^C))` of the treated group and of the control
/// group with reverted labels.
pub fn group_risks(scores: &[f64], ds: &UpliftDataset, tie_policy: TiePolicy) -> Result<(f64, f64)> {
    check_len(scores, ds)?;
    let mut out = [0.0; 2];
    for (slot, (group, revert)) in [(Group::Treatment, false), (Group::Control, true)]
        .into_iter()
        .enumerate()
    {
        let view = group_view(ds, group, revert)?;
        view.require_both_classes()?;
        let pos: Vec<f64> = view.positives().iter().map(|&i| scores[i]).collect();
        let neg: Vec<f64> = view.negatives().iter().map(|&i| scores[i]).collect();
        out[slot] = ranking_risk(&pos, &neg, tie_policy)?;
    }
    Ok((out[0], out[1]))
}

fn check_len(scores: &[f64], ds: &UpliftDataset) -> Result<()> {
    if scores.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            actual: scores.len(),
        });
    }
    Ok(())
}

/// Row indices by descending score, ties by ascending index.
pub fn ranking_order(scores: &[f64]) -> Result<Vec<usize>> {
    check_finite(scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    Ok(order)
}

/// Cumulative uplift `V(f, k)` for `k = 1..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftCurve {
    pub points: Vec<(usize, f64)>,
}

impl UpliftCurve {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    /// Riemann area `(1/n) Σ_k V(f, k)`.
    pub fn area(&self) -> f64 {
        self.values().sum::<f64>() / self.points.len() as f64
    }

    pub fn to_csv(&self) -> String {
        crate::io::two_column_csv(("k", "uplift"), self.points.iter().map(|&(k, v)| (k as f64, v)))
    }
}

/// Joint, relative uplift curve: `V(f,k) = (1/|T|) Σ_{top k, T} y - (1/|C|) Σ_{top k, C} y`.
pub fn uplift_curve(scores: &[f64], ds: &UpliftDataset) -> Result<UpliftCurve> {
    check_len(scores, ds)?;
    let n_t = ds.group_len(Group::Treatment);
    let n_c = ds.len() - n_t;
    if n_t == 0 {
        return Err(Error::EmptyGroup("T"));
    }
    if n_c == 0 {
        return Err(Error::EmptyGroup("C"));
    }
    let order = ranking_order(scores)?;
    let (mut pos_t, mut pos_c) = (0usize, 0usize);
    let mut points = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        if ds.outcome()[i] == 1 {
            if ds.is_treated(i) {
                pos_t += 1;
            } else {
                pos_c += 1;
            }
        }
        points.push((k + 1, pos_t as f64 / n_t as f64 - pos_c as f64 / n_c as f64));
    }
    Ok(UpliftCurve { points })
}

/// Area under the uplift curve with the `1/n` Riemann normalization.
pub fn auuc(scores: &[f64], ds: &UpliftDataset) -> Result<f64> {
    Ok(uplift_curve(scores, ds)?.area())
}

/// AUUC reconstructed from the two ranking risks:
/// `gamma - lambda_T * risk_T - lambda_C * risk_C_reverted`.
pub fn auuc_decomposed(stats: &GroupStats, risk_t: f64, risk_c_reverted: f64) -> Result<f64> {
    for (name, r) in [("risk_T", risk_t), ("risk_C", risk_c_reverted)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1], got {r}")));
        }
    }
    Ok(stats.gamma - stats.lambda_t * risk_t - stats.lambda_c * risk_c_reverted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRiskPoint {
    pub ratio: f64,
    pub risk: f64,
}

/// Risk of treating the top `ceil(ratio * n)` rows by score:
/// `1 - E[Y | T=1, treated] * p - E[Y | T=0, untreated] * (1 - p)` with
/// `p = ceil(ratio * n) / n`. A conditional mean over an empty cell
/// contributes 0.
pub fn policy_risk(scores: &[f64], ds: &UpliftDataset, ratio: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("treated ratio must lie in [0, 1], got {ratio}")));
    }
    check_len(scores, ds)?;
    if ds.group_len(Group::Treatment) == 0 {
        return Err(Error::EmptyGroup("T"));
    }
    if ds.group_len(Group::Treatment) == ds.len() {
        return Err(Error::EmptyGroup("C"));
    }
    let n = ds.len();
    // guard against 0.3 * 10 = 3.0000000000000004
    let k = ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let k = k.min(n);
    let order = ranking_order(scores)?;
    let mean = |rows: &[usize], treated: bool| {
        let (mut s, mut c) = (0usize, 0usize);
        for &i in rows {
            if ds.is_treated(i) == treated {
                c += 1;
                s += ds.outcome()[i] as usize;
            }
        }
        if c == 0 {
            0.0
        } else {
            s as f64 / c as f64
        }
    };
    let p = k as f64 / n as f64;
    Ok(1.0 - mean(&order[..k], true) * p - mean(&order[k..], false) * (1.0 - p))
}

pub fn policy_risk_curve(scores: &[f64], ds: &UpliftDataset, ratios: &[f64]) -> Result<Vec<PolicyRiskPoint>> {
    ratios
        .iter()
        .map(|&ratio| {
            Ok(PolicyRiskPoint {
                ratio,
                risk: policy_risk(scores, ds, ratio)?,
            })
        })
        .collect()
}

/// Treated ratios 0.1, 0.2, ..., 0.9.
pub fn decile_ratios() -> Vec<f64> {
    (1..10).map(|i| i as f64 / 10.0).collect()
}

pub fn policy_risk_csv(points: &[PolicyRiskPoint]) -> String {
    crate::io::two_column_csv(("ratio", "policy_risk"), points.iter().map(|p| (p.ratio, p.risk)))
}
