//! Scorers: the linear ranker, plus Two-Models and class-variable-transform
//! baselines built on L2-regularized logistic regression.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::sigmoid;
use crate::dataset::UpliftDataset;
use crate::optimizer::{dot, early_stopping_loop, norm, Adam, AdamParams, StepDecay, TrainingLog};
use crate::rng::{derive_seed, seeded, streams};
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: &str = "1";

pub trait Scorer {
    fn dim(&self) -> usize;

    /// Score of one feature vector; `x.len()` must equal `dim()`.
    fn score_row(&self, x: &[f64]) -> f64;

    fn score(&self, ds: &UpliftDataset) -> Result<Vec<f64>> {
        check_dim(self.dim(), ds.dim())?;
        Ok((0..ds.len()).map(|i| self.score_row(ds.row(i))).collect())
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Scores of every row of `ds`.
pub fn score(scorer: &dyn Scorer, ds: &UpliftDataset) -> Result<Vec<f64>> {
    scorer.score(ds)
}

/// `w·x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearScorer {
    pub fn new(weights: Vec<f64>, intercept: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("a linear scorer needs at least one weight"));
        }
        if !intercept.is_finite() || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear scorer parameters".into()));
        }
        Ok(Self { weights, intercept })
    }

    pub fn norm(&self) -> f64 {
        norm(&self.weights)
    }
}

impl Scorer for LinearScorer {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.intercept
    }
}

/// `sigmoid(model_t(x)) - sigmoid(model_c(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoModelScorer {
    pub model_t: LinearScorer,
    pub model_c: LinearScorer,
}

impl TwoModelScorer {
    pub fn new(model_t: LinearScorer, model_c: LinearScorer) -> Result<Self> {
        check_dim(model_t.dim(), model_c.dim())?;
        Ok(Self { model_t, model_c })
    }
}

impl Scorer for TwoModelScorer {
    fn dim(&self) -> usize {
        self.model_t.dim()
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        sigmoid(self.model_t.score_row(x)) - sigmoid(self.model_c.score_row(x))
    }
}

/// `2 sigmoid(model_z(x)) - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvtScorer {
    pub model_z: LinearScorer,
}

impl Scorer for CvtScorer {
    fn dim(&self) -> usize {
        self.model_z.dim()
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        2.0 * sigmoid(self.model_z.score_row(x)) - 1.0
    }
}

pub fn predict_tm(m: &TwoModelScorer, x: &[f64]) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    Ok(m.score_row(x))
}

pub fn predict_cvt(m: &CvtScorer, x: &[f64]) -> Result<f64> {
    check_dim(m.dim(), x.len())?;
    Ok(m.score_row(x))
}

/// Transformed label `Z = Y T + (1 - T)(1 - Y)`.
pub fn cvt_label(treatment: u8, outcome: u8) -> u8 {
    outcome * treatment + (1 - treatment) * (1 - outcome)
}

/// Row-major design matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: Vec<f64>,
    pub dim: usize,
    pub y: Vec<u8>,
}

impl Design {
    /// Rows `rows` of `ds`, labelled by `label(row)`.
    pub fn from_dataset(
        ds: &UpliftDataset,
        rows: impl IntoIterator<Item = usize>,
        label: impl Fn(usize) -> u8,
    ) -> Self {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in rows {
            x.extend_from_slice(ds.row(i));
            y.push(label(i));
        }
        Self { x, dim: ds.dim(), y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub step_decay: StepDecay,
    pub adam: AdamParams,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 0.0,
            batch_size: 1000,
            epochs: 200,
            early_stop_patience: 10,
            seed: 0,
            step_decay: StepDecay::default(),
            adam: AdamParams::default(),
        }
    }
}

impl LogisticConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        Ok(())
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean cross-entropy of `params = [w, b]` on `rows` of `data`, and its
/// gradient when `grad` is given.
fn cross_entropy(params: &[f64], data: &Design, rows: &[usize], grad: Option<&mut [f64]>) -> f64 {
    let d = data.dim;
    let (w, b) = (&params[..d], params[d]);
    let inv = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    match grad {
        Some(g) => {
            g.iter_mut().for_each(|v| *v = 0.0);
            for &i in rows {
                let x = data.row(i);
                let z = dot(w, x) + b;
                let y = data.y[i] as f64;
                loss += softplus(z) - y * z;
                let r = (sigmoid(z) - y) * inv;
                for (gj, xj) in g[..d].iter_mut().zip(x) {
                    *gj += r * xj;
                }
                g[d] += r;
            }
        }
        None => {
            for &i in rows {
                let z = dot(w, data.row(i)) + b;
                loss += softplus(z) - data.y[i] as f64 * z;
            }
        }
    }
    loss * inv
}

fn require_both_labels(data: &Design, what: &'static str) -> Result<()> {
    let ones = data.y.iter().filter(|&&v| v == 1).count();
    if data.is_empty() {
        return Err(Error::EmptyGroup(what));
    }
    if ones == 0 || ones == data.len() {
        return Err(Error::MissingClass(what));
    }
    Ok(())
}

/// Minimize mean cross-entropy + `l2 ||w||² / 2` by minibatch Adam; the
/// intercept is not penalized. With a validation design, the parameters with
/// the lowest validation cross-entropy are kept; otherwise early stopping
/// tracks the full training objective.
pub fn fit_logistic(
    train: &Design,
    validation: Option<&Design>,
    cfg: &LogisticConfig,
) -> Result<(LinearScorer, TrainingLog)> {
    cfg.validate()?;
    require_both_labels(train, "logistic training labels")?;
    if let Some(v) = validation {
        check_dim(train.dim, v.dim)?;
        if v.is_empty() {
            return Err(Error::EmptyGroup("logistic validation"));
        }
    }
    let d = train.dim;
    let all: Vec<usize> = (0..train.len()).collect();
    let val_all: Vec<usize> = validation.map(|v| (0..v.len()).collect()).unwrap_or_default();
    let mut order = all.clone();
    let mut rng = seeded(cfg.seed);
    let mut adam = Adam::new(d + 1, cfg.adam);
    let mut grad = vec![0.0; d + 1];
    let mut params = vec![0.0; d + 1];
    let penalty = |p: &[f64]| 0.5 * cfg.l2 * p[..d].iter().map(|v| v * v).sum::<f64>();
    let log = early_stopping_loop(
        &mut params,
        cfg.epochs,
        cfg.early_stop_patience,
        cfg.learning_rate,
        &cfg.step_decay,
        |p, lr| {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                sum += cross_entropy(p, train, chunk, Some(&mut grad)) + penalty(p);
                for (g, w) in grad[..d].iter_mut().zip(&p[..d]) {
                    *g += cfg.l2 * w;
                }
                adam.step(p, &grad, lr);
                batches += 1;
            }
            Ok(sum / batches as f64)
        },
        |p| {
            Ok(match validation {
                Some(v) => cross_entropy(p, v, &val_all, None),
                None => cross_entropy(p, train, &all, None) + penalty(p),
            })
        },
        |p| norm(&p[..d]),
    )?;
    let intercept = params[d];
    params.truncate(d);
    Ok((LinearScorer::new(params, intercept)?, log))
}

fn arm_design(ds: &UpliftDataset, treated: bool) -> Design {
    Design::from_dataset(ds, (0..ds.len()).filter(|&i| ds.is_treated(i) == treated), |i| {
        ds.outcome()[i]
    })
}

fn cvt_design(ds: &UpliftDataset) -> Design {
    Design::from_dataset(ds, 0..ds.len(), |i| cvt_label(ds.treatment()[i], ds.outcome()[i]))
}

/// Two logistic models, one per arm; sub-model seeds are derived from `cfg.seed`.
pub fn fit_tm(
    train: &UpliftDataset,
    validation: Option<&UpliftDataset>,
    cfg: &LogisticConfig,
) -> Result<TwoModelScorer> {
    let mut members = Vec::with_capacity(2);
    for (k, treated) in [true, false].into_iter().enumerate() {
        let member_cfg = LogisticConfig {
            seed: derive_seed(cfg.seed, streams::MEMBER, k as u64),
            ..cfg.clone()
        };
        let tr = arm_design(train, treated);
        let va = validation.map(|v| arm_design(v, treated)).filter(|v| !v.is_empty());
        let what = if treated { "T" } else { "C" };
        if tr.is_empty() {
            return Err(Error::EmptyGroup(what));
        }
        require_both_labels(&tr, what)?;
        members.push(fit_logistic(&tr, va.as_ref(), &member_cfg)?.0);
    }
    let model_c = members.pop().expect("two members");
    let model_t = members.pop().expect("two members");
    TwoModelScorer::new(model_t, model_c)
}

pub fn fit_cvt(train: &UpliftDataset, validation: Option<&UpliftDataset>, cfg: &LogisticConfig) -> Result<CvtScorer> {
    let va = validation.map(cvt_design);
    let (model_z, _) = fit_logistic(&cvt_design(train), va.as_ref(), cfg)?;
    Ok(CvtScorer { model_z })
}

/// Hex SHA-256 over a configuration's JSON and the training data.
pub fn train_digest<C: Serialize>(config: &C, train: &UpliftDataset) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    h.update((train.len() as u64).to_le_bytes());
    h.update((train.dim() as u64).to_le_bytes());
    for v in train.features() {
        h.update(v.to_le_bytes());
    }
    h.update(train.treatment());
    h.update(train.outcome());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    AuucMax(LinearScorer),
    TwoModel(TwoModelScorer),
    Cvt(CvtScorer),
}

impl ModelKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            ModelKind::AuucMax(_) => "auuc_max",
            ModelKind::TwoModel(_) => "tm",
            ModelKind::Cvt(_) => "cvt",
        }
    }

    pub fn scorer(&self) -> &dyn Scorer {
        match self {
            ModelKind::AuucMax(m) => m,
            ModelKind::TwoModel(m) => m,
            ModelKind::Cvt(m) => m,
        }
    }
}

/// A fitted scorer with the metadata persisted alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub lambda_cap: Option<f64>,
    pub train_digest: String,
}

/// On-disk JSON layout. For `tm`, `weights`/`intercept` hold the treated-arm
/// model and `control_weights`/`control_intercept` the control-arm model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    version: String,
    #[serde(rename = "type")]
    kind: String,
    feature_names: Vec<String>,
    weights: Vec<f64>,
    intercept: f64,
    lambda_cap: Option<f64>,
    train_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control_intercept: Option<f64>,
}

impl Model {
    pub fn scorer(&self) -> &dyn Scorer {
        self.kind.scorer()
    }

    pub fn score(&self, ds: &UpliftDataset) -> Result<Vec<f64>> {
        self.scorer().score(ds)
    }

    pub fn to_json(&self) -> Result<String> {
        let (main, control) = match &self.kind {
            ModelKind::AuucMax(m) => (m, None),
            ModelKind::TwoModel(m) => (&m.model_t, Some(&m.model_c)),
            ModelKind::Cvt(m) => (&m.model_z, None),
        };
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION.to_string(),
            kind: self.kind.type_name().to_string(),
            feature_names: self.feature_names.clone(),
            weights: main.weights.clone(),
            intercept: main.intercept,
            lambda_cap: self.lambda_cap,
            train_digest: self.train_digest.clone(),
            control_weights: control.map(|c| c.weights.clone()),
            control_intercept: control.map(|c| c.intercept),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported model version {:?}", file.version)));
        }
        let main = LinearScorer::new(file.weights, file.intercept)?;
        check_dim(file.feature_names.len(), main.dim())?;
        let kind = match file.kind.as_str() {
            "auuc_max" => ModelKind::AuucMax(main),
            "cvt" => ModelKind::Cvt(CvtScorer { model_z: main }),
            "tm" => {
                let (Some(w), Some(b)) = (file.control_weights, file.control_intercept) else {
                    return Err(Error::invalid("tm model file lacks control_weights/control_intercept"));
                };
                ModelKind::TwoModel(TwoModelScorer::new(main, LinearScorer::new(w, b)?)?)
            }
            other => return Err(Error::invalid(format!("unknown model type {other:?}"))),
        };
        Ok(Self {
            kind,
            feature_names: file.feature_names,
            lambda_cap: file.lambda_cap,
            train_digest: file.train_digest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lin(w: &[f64], b: f64) -> LinearScorer {
        LinearScorer::new(w.to_vec(), b).unwrap()
    }

    #[test]
    fn linear_scores_by_hand() {
        let ds = UpliftDataset::from_rows(&[vec![1.0, 2.0], vec![-0.5, 4.0]], vec![1, 0], vec![1, 0]).unwrap();
        let s = lin(&[0.5, -1.0], 0.25).score(&ds).unwrap();
        assert_eq!(s, vec![0.5 - 2.0 + 0.25, -0.25 - 4.0 + 0.25]);
        assert_eq!(lin(&[0.0, 0.0], 0.0).score(&ds).unwrap(), vec![0.0, 0.0]);
        assert!(lin(&[1.0], 0.0).score(&ds).is_err());
    }

    #[test]
    fn tm_and_cvt_edge_cases() {
        let m = lin(&[0.3, -0.2], 0.1);
        let tm = TwoModelScorer::new(m.clone(), m.clone()).unwrap();
        assert_eq!(predict_tm(&tm, &[1.0, 2.0]).unwrap(), 0.0);
        let sat = TwoModelScorer::new(lin(&[0.0, 0.0], 50.0), lin(&[0.0, 0.0], -50.0)).unwrap();
        assert_abs_diff_eq!(predict_tm(&sat, &[0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-12);
        let cvt = CvtScorer {
            model_z: lin(&[0.0, 0.0], 0.0),
        };
        assert_eq!(predict_cvt(&cvt, &[3.0, 1.0]).unwrap(), 0.0);
        assert!(predict_cvt(&cvt, &[3.0]).is_err());
    }

    #[test]
    fn cvt_label_table() {
        assert_eq!(cvt_label(1, 1), 1);
        assert_eq!(cvt_label(1, 0), 0);
        assert_eq!(cvt_label(0, 1), 0);
        assert_eq!(cvt_label(0, 0), 1);
    }

    #[test]
    fn no_signal_logistic_recovers_base_rate() {
        let n = 400;
        let data = Design {
            x: vec![1.0; n],
            dim: 1,
            y: (0..n).map(|i| (i % 4 == 0) as u8).collect(),
        };
        let cfg = LogisticConfig {
            batch_size: n,
            epochs: 400,
            early_stop_patience: 0,
            l2: 1.0,
            ..LogisticConfig::default()
        };
        let (m, _) = fit_logistic(&data, None, &cfg).unwrap();
        // constant feature with a penalty: the unpenalized intercept carries the rate
        assert!(m.weights[0].abs() < 1e-2, "{m:?}");
        assert_abs_diff_eq!(m.intercept, (0.25f64 / 0.75).ln(), epsilon = 1e-2);
    }

    #[test]
    fn separable_logistic_fits_training_set() {
        let pts: Vec<[f64; 2]> = (0..60)
            .map(|i| {
                let t = i as f64 * 0.37;
                [t.sin() * 2.0, t.cos() * 2.0]
            })
            .collect();
        let data = Design {
            x: pts.iter().flatten().copied().collect(),
            dim: 2,
            y: pts.iter().map(|p| (p[0] + 0.5 * p[1] > 0.1) as u8).collect(),
        };
        let cfg = LogisticConfig {
            l2: 1e-4,
            batch_size: 16,
            epochs: 300,
            early_stop_patience: 0,
            ..LogisticConfig::default()
        };
        let (m, _) = fit_logistic(&data, None, &cfg).unwrap();
        let correct = (0..data.len())
            .filter(|&i| (m.score_row(data.row(i)) > 0.0) == (data.y[i] == 1))
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn single_class_is_rejected() {
        let data = Design {
            x: vec![0.0, 1.0],
            dim: 1,
            y: vec![1, 1],
        };
        assert!(matches!(
            fit_logistic(&data, None, &LogisticConfig::default()),
            Err(Error::MissingClass(_))
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let names = vec!["a".to_string(), "b".to_string()];
        for kind in [
            ModelKind::AuucMax(lin(&[0.6, 0.8], 0.0)),
            ModelKind::TwoModel(TwoModelScorer::new(lin(&[1.0, 2.0], 0.5), lin(&[-1.0, 0.0], -0.5)).unwrap()),
            ModelKind::Cvt(CvtScorer {
                model_z: lin(&[0.1, 0.2], 0.3),
            }),
        ] {
            let model = Model {
                kind,
                feature_names: names.clone(),
                lambda_cap: Some(1.0),
                train_digest: "abc".into(),
            };
            let text = model.to_json().unwrap();
            assert!(text.contains("\"version\": \"1\""));
            assert_eq!(Model::from_json(&text).unwrap(), model);
        }
        assert!(Model::from_json(r#"{"version":"2","type":"cvt","feature_names":["a"],"weights":[1.0],"intercept":0.0,"lambda_cap":null,"train_digest":""}"#).is_err());
    }

    #[test]
    fn digest_changes_with_config() {
        let ds = UpliftDataset::from_rows(&[vec![1.0], vec![2.0]], vec![1, 0], vec![1, 0]).unwrap();
        let a = train_digest(&LogisticConfig::default(), &ds).unwrap();
        let b = train_digest(
            &LogisticConfig {
                l2: 1.0,
                ..LogisticConfig::default()
            },
            &ds,
        )
        .unwrap();
        assert_eq!(a.len(), 64);
        assert_ne!(a, b);
        assert_eq!(a, train_digest(&LogisticConfig::default(), &ds).unwrap());
    }
}
