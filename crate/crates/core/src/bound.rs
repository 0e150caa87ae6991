//! Generalization lower bound on the AUUC of a linear scorer.
//!
//! The bound combines the empirical ranking risks of the treated group and of
//! the label-reverted control group with a closed-form upper bound on the
//! local fractional Rademacher complexity of the norm-capped linear class
//! `{x -> w·x : ||w|| <= Λ}` and the concentration terms of the union bound.
//! A Monte-Carlo estimate of the fractional Rademacher complexity is provided
//! to check the closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{group_view, Group, GroupView, UpliftDataset};
use crate::metrics::{group_risks, group_stats, GroupStats, TiePolicy};
use crate::parallel::map_indexed;
use crate::rng::{derive_seed, seeded, streams};
use crate::{Error, Result};

/// Largest pair count accepted by [`rademacher_mc_oracle`].
pub const ORACLE_MAX_PAIRS: usize = 100_000;

/// The capped linear class: `||w|| <= lambda_cap` on data with
/// `||x|| <= radius`, so every function has variance at most
/// `variance_cap = lambda_cap² radius²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClassSpec {
    pub lambda_cap: f64,
    pub radius: f64,
    pub variance_cap: f64,
}

impl FunctionClassSpec {
    pub fn new(lambda_cap: f64, radius: f64) -> Result<Self> {
        if !(lambda_cap > 0.0 && lambda_cap.is_finite()) {
            return Err(Error::invalid(format!("Λ must be positive, got {lambda_cap}")));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("R must be positive, got {radius}")));
        }
        Ok(Self {
            lambda_cap,
            radius,
            variance_cap: lambda_cap * lambda_cap * radius * radius,
        })
    }

    /// `R` measured as the largest feature norm of `train`.
    pub fn for_dataset(train: &UpliftDataset, lambda_cap: f64) -> Result<Self> {
        Self::new(lambda_cap, train.max_row_norm())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("δ must lie in (0, 1), got {delta}")))
    }
}

/// Closed-form upper bound on the empirical local fractional Rademacher
/// complexity of the capped linear class over the pairs of a group with
/// `n_pos` positives: `sqrt(R²Λ²/n₊) + sqrt(log(2/δ)/(2n₊))`.
pub fn rademacher_upper(n_pos: usize, radius: f64, lambda_cap: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n_pos == 0 {
        return Err(Error::invalid("n_pos must be at least 1"));
    }
    if !(radius >= 0.0 && radius.is_finite() && lambda_cap >= 0.0 && lambda_cap.is_finite()) {
        return Err(Error::invalid("R and Λ must be finite and non-negative"));
    }
    let n = n_pos as f64;
    Ok((radius * radius * lambda_cap * lambda_cap / n).sqrt() + ((2.0 / delta).ln() / (2.0 * n)).sqrt())
}

/// Aggregate complexity term `C_δ`.
pub fn c_delta(
    rad_t: f64,
    rad_c: f64,
    stats: &GroupStats,
    spec: &FunctionClassSpec,
    n_pos_t: usize,
    n_neg_c: usize,
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    if rad_t < 0.0 || rad_c < 0.0 {
        return Err(Error::invalid("Rademacher terms must be non-negative"));
    }
    if n_pos_t == 0 || n_neg_c == 0 {
        return Err(Error::invalid("governing counts must be at least 1"));
    }
    let shared = 1.25 * (2.0 * spec.variance_cap).sqrt();
    let sqrt_log = (2.0 / delta).ln().sqrt();
    let dev_t = (2.5 * rad_t.sqrt() + shared) / (n_pos_t as f64).sqrt();
    let dev_c = (2.5 * rad_c.sqrt() + shared) / (n_neg_c as f64).sqrt();
    Ok(stats.lambda_t * rad_t + stats.lambda_c * rad_c + (stats.lambda_t * dev_t + stats.lambda_c * dev_c) * sqrt_log)
}

/// `(25/48)(λ^T/n₊^T + λ^C/n₋^C) log(2/δ)`.
pub fn tail_term(stats: &GroupStats, n_pos_t: usize, n_neg_c: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n_pos_t == 0 || n_neg_c == 0 {
        return Err(Error::invalid("governing counts must be at least 1"));
    }
    Ok(25.0 / 48.0 * (stats.lambda_t / n_pos_t as f64 + stats.lambda_c / n_neg_c as f64) * (2.0 / delta).ln())
}

/// Every term of the AUUC lower bound for one scorer on one training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub gamma: f64,
    pub lambda_t: f64,
    pub lambda_c: f64,
    pub risk_t: f64,
    pub risk_c: f64,
    pub rad_t: f64,
    pub rad_c: f64,
    pub c_delta: f64,
    pub tail: f64,
    pub lower_bound: f64,
    pub delta: f64,
    /// Positives of the treated group.
    pub n_pos_t: usize,
    /// Negatives of the control group, i.e. positives of the reverted control group.
    pub n_neg_c: usize,
    pub lambda_cap: f64,
    pub radius: f64,
    pub variance_cap: f64,
}

impl BoundReport {
    /// `gamma - (λ^T risk_T + λ^C risk_C) - c_delta - tail`, recomputed from the fields.
    pub fn recomputed_lower_bound(&self) -> f64 {
        self.gamma - (self.lambda_t * self.risk_t + self.lambda_c * self.risk_c) - self.c_delta - self.tail
    }
}

/// Lower bound on the expected AUUC of the scorer that produced `scores`
/// (aligned with the rows of `train`). Empirical risks charge tied pairs in
/// full so the bound stays valid.
pub fn auuc_lower_bound(
    scores: &[f64],
    train: &UpliftDataset,
    spec: &FunctionClassSpec,
    delta: f64,
) -> Result<BoundReport> {
    check_delta(delta)?;
    let stats = group_stats(train)?;
    let view_t = group_view(train, Group::Treatment, false)?;
    let view_c = group_view(train, Group::Control, true)?;
    view_t.require_both_classes()?;
    view_c.require_both_classes()?;
    let n_pos_t = view_t.n_pos();
    let n_neg_c = view_c.n_pos();
    let (risk_t, risk_c) = group_risks(scores, train, TiePolicy::Full)?;
    let rad_t = rademacher_upper(n_pos_t, spec.radius, spec.lambda_cap, delta)?;
    let rad_c = rademacher_upper(n_neg_c, spec.radius, spec.lambda_cap, delta)?;
    let c = c_delta(rad_t, rad_c, &stats, spec, n_pos_t, n_neg_c, delta)?;
    let tail = tail_term(&stats, n_pos_t, n_neg_c, delta)?;
    let lower_bound = stats.gamma - (stats.lambda_t * risk_t + stats.lambda_c * risk_c) - c - tail;
    Ok(BoundReport {
        gamma: stats.gamma,
        lambda_t: stats.lambda_t,
        lambda_c: stats.lambda_c,
        risk_t,
        risk_c,
        rad_t,
        rad_c,
        c_delta: c,
        tail,
        lower_bound,
        delta,
        n_pos_t,
        n_neg_c,
        lambda_cap: spec.lambda_cap,
        radius: spec.radius,
        variance_cap: spec.variance_cap,
    })
}

/// Monte-Carlo estimate of the empirical fractional Rademacher complexity of
/// `{w·x : ||w|| <= Λ}` over the positive/negative pairs of `view`.
///
/// The pairs are covered by `max(n₊, n₋)` independent subsets of `min(n₊, n₋)`
/// pairs (a cyclic matching shifted by one per subset), each with weight 1.
/// For a fixed sign vector the supremum over the class on one subset is
/// `Λ ||Σ σ_i (x_i - x'_i)||`.
pub fn rademacher_mc_oracle(
    view: &GroupView<'_>,
    spec: &FunctionClassSpec,
    num_sigma_draws: usize,
    seed: u64,
) -> Result<f64> {
    view.require_both_classes()?;
    if num_sigma_draws == 0 {
        return Err(Error::invalid("need at least one σ draw"));
    }
    let pos = view.positives();
    let neg = view.negatives();
    let (p, n) = (pos.len(), neg.len());
    if p * n > ORACLE_MAX_PAIRS {
        return Err(Error::invalid(format!(
            "{} pairs exceed the oracle cap of {ORACLE_MAX_PAIRS}",
            p * n
        )));
    }
    let ds = view.parent();
    let d = ds.dim();
    let (m, subsets) = (p.min(n), p.max(n));
    // pair (a, b) of subset j: positive and negative indices
    let pair = |j: usize, i: usize| -> (usize, usize) {
        if p <= n {
            (pos[i], neg[(i + j) % n])
        } else {
            (pos[(i + j) % p], neg[i])
        }
    };
    let draw = |b: usize| -> f64 {
        let mut rng = seeded(derive_seed(seed, streams::SIGMA, b as u64));
        let mut acc = vec![0.0; d];
        let mut total = 0.0;
        for j in 0..subsets {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..m {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let (a, c) = pair(j, i);
                for ((s, xa), xc) in acc.iter_mut().zip(ds.row(a)).zip(ds.row(c)) {
                    *s += sign * (xa - xc);
                }
            }
            total += acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        spec.lambda_cap * total
    };
    let per_draw = map_indexed(num_sigma_draws, draw);
    let mean = per_draw.iter().sum::<f64>() / num_sigma_draws as f64;
    Ok(mean / (p * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rademacher_upper_examples() {
        let v = rademacher_upper(100, 1.0, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(v, 0.1 + (20f64.ln() / 200.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.22239, epsilon = 1e-5);
        let zero = rademacher_upper(100, 1.0, 0.0, 0.1).unwrap();
        assert_abs_diff_eq!(zero, (20f64.ln() / 200.0).sqrt(), epsilon = 1e-15);
        assert!(rademacher_upper(200, 1.0, 1.0, 0.1).unwrap() < v);
        assert!(rademacher_upper(100, 1.0, 1.0, 1.0).is_err());
        assert!(rademacher_upper(100, 1.0, 1.0, 0.0).is_err());
        assert!(rademacher_upper(0, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn c_delta_plug_through() {
        // plugged through by hand (python float arithmetic):
        // 0.12848*0.22239 + 0.0949*0.22239
        //   + (0.12848*(2.5*sqrt(0.22239) + 1.25*sqrt(2))/10
        //      + 0.0949*(2.5*sqrt(0.22239) + 1.25*sqrt(2))/10) * sqrt(ln 20)
        let stats = GroupStats {
            y_bar_t: 0.0,
            y_bar_c: 0.0,
            lambda_t: 0.12848,
            lambda_c: 0.09490,
            gamma: 0.0,
            ate: 0.0,
        };
        let spec = FunctionClassSpec::new(1.0, 1.0).unwrap();
        let v = c_delta(0.22239, 0.22239, &stats, &spec, 100, 100, 0.1).unwrap();
        assert_abs_diff_eq!(v, 0.1636067, epsilon = 1e-6);
    }

    #[test]
    fn c_delta_degenerate_and_monotone() {
        let spec = FunctionClassSpec::new(1.0, 1.0).unwrap();
        let zero = GroupStats::from_means(0.0, 0.0);
        assert_eq!(c_delta(0.3, 0.3, &zero, &spec, 10, 10, 0.05).unwrap(), 0.0);
        let s = GroupStats::from_means(0.2, 0.1);
        let a = c_delta(0.2, 0.2, &s, &spec, 50, 50, 0.1).unwrap();
        let b = c_delta(0.2, 0.2, &s, &spec, 50, 50, 0.01).unwrap();
        assert!(b > a);
        assert!(c_delta(0.2, 0.2, &s, &spec, 50, 50, 1.5).is_err());
    }

    #[test]
    fn function_class_invariants() {
        let s = FunctionClassSpec::new(0.5, 3.0).unwrap();
        assert_eq!(s.variance_cap, 0.25 * 9.0);
        assert!(FunctionClassSpec::new(0.0, 1.0).is_err());
        assert!(FunctionClassSpec::new(1.0, 0.0).is_err());
    }

    #[test]
    fn tiny_sample_bound_is_vacuous() {
        // 10 treated positives, 10 control negatives, 10 of each other class
        let mut rows = Vec::new();
        let mut t = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            rows.push(vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]);
            t.push((i < 20) as u8);
            y.push((i % 2) as u8);
        }
        let ds = UpliftDataset::from_rows(&rows, t, y).unwrap();
        let scores: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let spec = FunctionClassSpec::for_dataset(&ds, 1.0).unwrap();
        let rep = auuc_lower_bound(&scores, &ds, &spec, 0.05).unwrap();
        assert_eq!((rep.n_pos_t, rep.n_neg_c), (10, 10));
        assert!(rep.lower_bound < -0.2, "{}", rep.lower_bound);
        assert!(rep.lower_bound <= rep.gamma);
        assert_abs_diff_eq!(rep.lower_bound, rep.recomputed_lower_bound(), epsilon = 1e-15);
    }

    #[test]
    fn bound_needs_both_classes() {
        let ds = UpliftDataset::from_rows(
            &[vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![1, 1, 0, 0],
            vec![1, 1, 0, 1],
        )
        .unwrap();
        let spec = FunctionClassSpec::new(1.0, 4.0).unwrap();
        assert!(matches!(
            auuc_lower_bound(&[0.0; 4], &ds, &spec, 0.05),
            Err(Error::MissingClass(_))
        ));
    }

    #[test]
    fn oracle_zero_class_and_determinism() {
        let ds = UpliftDataset::from_rows(
            &[
                vec![0.3, 1.0],
                vec![-0.2, 0.5],
                vec![1.1, -0.4],
                vec![0.7, 0.2],
                vec![-1.0, 0.1],
            ],
            vec![1; 5],
            vec![1, 1, 0, 0, 0],
        )
        .unwrap();
        let view = group_view(&ds, Group::Treatment, false).unwrap();
        let spec = FunctionClassSpec::new(1.0, ds.max_row_norm()).unwrap();
        let a = rademacher_mc_oracle(&view, &spec, 200, 17).unwrap();
        let b = rademacher_mc_oracle(&view, &spec, 200, 17).unwrap();
        assert!((a - b).abs() <= 1e-12);
        assert!(a > 0.0);
        // Λ = 0: the class is {0}
        let zero = FunctionClassSpec {
            lambda_cap: 0.0,
            ..spec
        };
        assert_eq!(rademacher_mc_oracle(&view, &zero, 10, 1).unwrap(), 0.0);
    }
}
