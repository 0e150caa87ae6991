//! Browser bindings for the demo page. Every export returns a JSON string.

use rand::Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

use uplift_rank::bound::{auuc_lower_bound, c_delta, rademacher_upper, tail_term, FunctionClassSpec};
use uplift_rank::dataset::{generate_synthetic, split, SplitSpec, SyntheticSpec, UpliftDataset};
use uplift_rank::metrics::{auuc, group_stats, uplift_curve, GroupStats};
use uplift_rank::models::{score, LinearScorer};
use uplift_rank::optimizer::{train_ranker, TrainConfig};
use uplift_rank::rng::seeded;
use uplift_rank::surrogates::Surrogate;

fn to_js(e: uplift_rank::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn parse_surrogate(kind: &str, mu: f64, p: u32) -> Result<Surrogate, JsValue> {
    let s = match kind {
        "log" => Surrogate::Log,
        "poly" => Surrogate::Poly { mu, p },
        other => return Err(JsValue::from_str(&format!("unknown surrogate {other}"))),
    };
    s.validate().map_err(to_js)?;
    Ok(s)
}

/// Surrogate values and derivatives on `points` evenly spaced margins in `[lo, hi]`.
#[wasm_bindgen]
pub fn surrogate_curve(kind: &str, mu: f64, p: u32, lo: f64, hi: f64, points: usize) -> Result<String, JsValue> {
    let s = parse_surrogate(kind, mu, p)?;
    if points < 2 || hi <= lo {
        return Err(JsValue::from_str("need at least 2 points and hi > lo"));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let z: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let value: Vec<f64> = z.iter().map(|&v| s.value(v)).collect();
    let grad: Vec<f64> = z.iter().map(|&v| s.derivative(v)).collect();
    Ok(json!({ "z": z, "value": value, "derivative": grad }).to_string())
}

fn curve_json(scores: &[f64], ds: &UpliftDataset) -> Result<serde_json::Value, JsValue> {
    let curve = uplift_curve(scores, ds).map_err(to_js)?;
    // thin to at most ~400 points for drawing
    let stride = (curve.points.len() / 400).max(1);
    let pts: Vec<[f64; 2]> = curve
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i + 1 == curve.points.len())
        .map(|(_, &(k, v))| [k as f64 / ds.len() as f64, v])
        .collect();
    Ok(json!({ "auuc": curve.area(), "points": pts }))
}

/// Generate a synthetic trial, train the bound-constrained ranker on 60% of
/// it (10% more for early stopping) and compare uplift curves on the held-out
/// 30% against the true ITE ordering and a random ordering.
#[wasm_bindgen]
pub fn train_synthetic(
    n: usize,
    uplift_strength: f64,
    lambda_cap: f64,
    epochs: usize,
    seed: u64,
) -> Result<String, JsValue> {
    let spec = SyntheticSpec::new(
        n,
        3,
        0.5,
        vec![0.5, -0.3, 0.2],
        vec![uplift_strength, 0.0, -0.5 * uplift_strength],
        seed,
    )
    .with_intercepts(-1.5, 0.2);
    let data = generate_synthetic(&spec).map_err(to_js)?;
    let ds = &data.dataset;
    let parts = split(ds, &SplitSpec::new(0.6, 0.1, seed)).map_err(to_js)?;
    let train = ds.subset(&parts.train).map_err(to_js)?;
    let val = ds.subset(&parts.validation).map_err(to_js)?;
    let test = ds.subset(&parts.test).map_err(to_js)?;

    let cfg = TrainConfig {
        lambda_cap,
        epochs,
        learning_rate: 0.01,
        batch_size: 256,
        seed,
        ..TrainConfig::default()
    };
    let (w, log) = train_ranker(&train, &val, &cfg).map_err(to_js)?;
    let model = LinearScorer::new(w.clone(), 0.0).map_err(to_js)?;
    let scores = score(&model, &test).map_err(to_js)?;

    let oracle: Vec<f64> = parts.test.iter().map(|&i| data.ite[i]).collect();
    let mut rng = seeded(seed);
    let random: Vec<f64> = (0..test.len()).map(|_| rng.random()).collect();

    let fspec = FunctionClassSpec::for_dataset(&train, lambda_cap).map_err(to_js)?;
    let train_scores = score(&model, &train).map_err(to_js)?;
    let bound = auuc_lower_bound(&train_scores, &train, &fspec, 0.05).map_err(to_js)?;

    Ok(json!({
        "weights": w,
        "epochs_run": log.records.len(),
        "ate": group_stats(&test).map_err(to_js)?.ate,
        "test_auuc": auuc(&scores, &test).map_err(to_js)?,
        "lower_bound": bound.lower_bound,
        "model": curve_json(&scores, &test)?,
        "oracle": curve_json(&oracle, &test)?,
        "random": curve_json(&random, &test)?,
    })
    .to_string())
}

/// Terms of the lower bound for given arm sizes and base rates, as the
/// training-set size grows by factors of two from `n_pos_t`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn bound_terms(
    n_pos_t: usize,
    n_neg_c: usize,
    y_bar_t: f64,
    y_bar_c: f64,
    lambda_cap: f64,
    radius: f64,
    delta: f64,
    doublings: usize,
) -> Result<String, JsValue> {
    let stats = GroupStats::from_means(y_bar_t, y_bar_c);
    let spec = FunctionClassSpec::new(lambda_cap, radius).map_err(to_js)?;
    let rows = (0..=doublings)
        .map(|k| {
            let (np, nn) = (n_pos_t << k, n_neg_c << k);
            let rad_t = rademacher_upper(np, radius, lambda_cap, delta)?;
            let rad_c = rademacher_upper(nn, radius, lambda_cap, delta)?;
            let c = c_delta(rad_t, rad_c, &stats, &spec, np, nn, delta)?;
            let tail = tail_term(&stats, np, nn, delta)?;
            Ok(json!({ "n_pos_t": np, "n_neg_c": nn, "rad_t": rad_t, "rad_c": rad_c, "c_delta": c, "tail": tail }))
        })
        .collect::<uplift_rank::Result<Vec<_>>>()
        .map_err(to_js)?;
    Ok(
        json!({ "gamma": stats.gamma, "lambda_t": stats.lambda_t, "lambda_c": stats.lambda_c, "rows": rows })
            .to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exports_produce_json() {
        let s: serde_json::Value =
            serde_json::from_str(&surrogate_curve("poly", 0.1, 3, -2.0, 2.0, 5).unwrap()).unwrap();
        assert_eq!(s["z"].as_array().unwrap().len(), 5);
        let t: serde_json::Value = serde_json::from_str(&train_synthetic(3000, 0.8, 1.0, 5, 1).unwrap()).unwrap();
        assert!(t["test_auuc"].as_f64().unwrap().abs() <= 1.0);
        let b: serde_json::Value =
            serde_json::from_str(&bound_terms(500, 2000, 0.15, 0.1, 1.0, 3.0, 0.05, 4).unwrap()).unwrap();
        let rows = b["rows"].as_array().unwrap();
        assert!(rows.last().unwrap()["c_delta"].as_f64() < rows[0]["c_delta"].as_f64());
    }
}
