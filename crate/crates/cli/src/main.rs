//! `uplift-rank` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 every split failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uplift_rank::bound::{auuc_lower_bound, FunctionClassSpec};
use uplift_rank::dataset::{
    fit_encode, generate_synthetic, hillstrom_rules, load_hillstrom, load_raw_trial, split, ColumnKind, ColumnRule,
    SplitSpec, SyntheticSpec, UpliftDataset,
};
use uplift_rank::experiment::{bound_gap, configure_threads, fit_method, run_splits, verify, ExperimentConfig, Method};
use uplift_rank::io::{read_to_string, two_column_csv, write_atomic, write_json};
use uplift_rank::metrics::{auuc, decile_ratios, group_stats, policy_risk_csv, policy_risk_curve, uplift_curve};
use uplift_rank::models::{Model, ModelKind};
use uplift_rank::surrogates::Surrogate;
use uplift_rank::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "uplift-rank",
    version,
    about = "Uplift ranking by AUUC lower-bound maximization"
)]
struct Cli {
    /// Worker threads (defaults to every core).
    #[arg(long, global = true, env = "UPLIFT_RANK_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a raw trial CSV into the numeric `f0..,treatment,outcome` format.
    Prepare(PrepareArgs),
    /// Draw a synthetic trial with known treatment effect.
    Generate(GenerateArgs),
    /// Select and fit a model on one train/validation split.
    Train(TrainArgs),
    /// AUUC, uplift curve and policy-risk table of a model on a dataset.
    Evaluate(EvaluateArgs),
    /// AUUC lower bound of a ranker on its training set.
    Bound(BoundArgs),
    /// Repeated random-split protocols.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Check that an experiment's aggregate matches its per-split rows.
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Test AUUC, bound and policy risk per split and method.
    Splits(ExperimentArgs),
    /// Distribution of the gap between expected AUUC and the lower bound.
    BoundGap(BoundGapArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RawFormat {
    Hillstrom,
    Generic,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "hillstrom")]
    format: RawFormat,
    /// Outcome column (`visit` or `conversion` for Hillstrom).
    #[arg(long, default_value = "visit")]
    outcome: String,
    /// Hillstrom arm kept as treatment; the other e-mail arm is dropped.
    #[arg(long, default_value = "Womens E-Mail")]
    treatment_arm: String,
    /// Keep `history` unscaled instead of min-max scaling it.
    #[arg(long)]
    no_scale: bool,
    /// Generic format: treatment column (0/1).
    #[arg(long, default_value = "treatment")]
    treatment_column: String,
    /// Generic format: covariates as `name:numeric|scaled|categorical`.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    /// Where to write the fitted encoding schema (JSON).
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON synthetic spec; flags below are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    /// Optional per-row true ITE output.
    #[arg(long)]
    ite_output: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    treat_prob: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5,-0.3,0.2")]
    coef_base: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.0,-0.4")]
    coef_uplift: Vec<f64>,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    base_intercept: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    uplift_intercept: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SurrogateKind {
    Log,
    Poly,
}

#[derive(Args, Clone)]
struct SurrogateArgs {
    #[arg(long, value_enum)]
    surrogate: Option<SurrogateKind>,
    #[arg(long, allow_hyphen_values = true)]
    poly_mu: Option<f64>,
    #[arg(long)]
    poly_p: Option<u32>,
}

impl SurrogateArgs {
    /// Surrogate after applying the flags to `base`.
    fn apply(&self, base: Surrogate) -> Surrogate {
        let (mu0, p0) = match base {
            Surrogate::Poly { mu, p } => (mu, p),
            Surrogate::Log => match Surrogate::poly_default() {
                Surrogate::Poly { mu, p } => (mu, p),
                Surrogate::Log => unreachable!(),
            },
        };
        let poly = Surrogate::Poly {
            mu: self.poly_mu.unwrap_or(mu0),
            p: self.poly_p.unwrap_or(p0),
        };
        match self.surrogate {
            Some(SurrogateKind::Log) => Surrogate::Log,
            Some(SurrogateKind::Poly) => poly,
            None if self.poly_mu.is_some() || self.poly_p.is_some() => poly,
            None => base,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Encoded dataset (`f0..,treatment,outcome`).
    #[arg(long)]
    data: PathBuf,
    /// Separate validation set; otherwise carved from `--data`.
    #[arg(long)]
    validation_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0.125)]
    validation_fraction: f64,
    #[arg(long, default_value = "auuc-max")]
    method: String,
    /// Experiment-style JSON config supplying grids, δ and folds.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    l2: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    surrogate: SurrogateArgs,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training set of the model.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Λ of the class; defaults to the model's cap.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    num_splits: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    delta: Option<f64>,
    #[command(flatten)]
    surrogate: SurrogateArgs,
}

#[derive(Args)]
struct BoundGapArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long)]
    num_splits_for_mean: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    dir: PathBuf,
}

type CliResult = Result<(), Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = configure_threads(j) {
            return fail(&e);
        }
    }
    let outcome = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bound(a) => bound(a),
        Command::Experiment(ExperimentCommand::Splits(a)) => experiment_splits(a, cli.jobs),
        Command::Experiment(ExperimentCommand::BoundGap(a)) => experiment_bound_gap(a, cli.jobs),
        Command::Verify(a) => verify_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match (e, e.kind()) {
        (Error::AllFailed(_), _) => 4,
        (_, ErrorKind::Config) => 2,
        _ => 3,
    })
}

fn parse_rule(spec: &str) -> Result<ColumnRule, Error> {
    let (name, kind) = spec
        .split_once(':')
        .ok_or_else(|| Error::InvalidArgument(format!("column rule {spec:?} is not name:kind")))?;
    let kind = match kind {
        "numeric" => ColumnKind::Numeric,
        "scaled" => ColumnKind::ScaledNumeric,
        "categorical" => ColumnKind::Categorical,
        other => return Err(Error::InvalidArgument(format!("unknown column kind {other:?}"))),
    };
    Ok(ColumnRule::new(name, kind))
}

fn prepare(a: PrepareArgs) -> CliResult {
    let (raw, rules) = match a.format {
        RawFormat::Hillstrom => (
            load_hillstrom(&a.input, &a.treatment_arm, &a.outcome)?,
            hillstrom_rules(!a.no_scale),
        ),
        RawFormat::Generic => {
            if a.columns.is_empty() {
                return Err(Error::InvalidArgument(
                    "--columns is required for the generic format".into(),
                ));
            }
            let rules = a.columns.iter().map(|c| parse_rule(c)).collect::<Result<Vec<_>, _>>()?;
            (load_raw_trial(&a.input, &a.treatment_column, &a.outcome)?, rules)
        }
    };
    let (schema, ds) = fit_encode(&raw, &rules)?;
    ds.write_csv(&a.output)?;
    if let Some(path) = a.schema {
        write_json(&path, &schema)?;
    }
    println!(
        "wrote {} rows x {} features to {}",
        ds.len(),
        ds.dim(),
        a.output.display()
    );
    Ok(())
}

fn generate(a: GenerateArgs) -> CliResult {
    let spec: SyntheticSpec = match &a.config {
        Some(p) => serde_json::from_str(&read_to_string(p)?)?,
        None => {
            if a.coef_base.len() != a.coef_uplift.len() {
                return Err(Error::InvalidArgument(
                    "--coef-base and --coef-uplift differ in length".into(),
                ));
            }
            SyntheticSpec::new(a.n, a.coef_base.len(), a.treat_prob, a.coef_base, a.coef_uplift, a.seed)
                .with_intercepts(a.base_intercept, a.uplift_intercept)
        }
    };
    let data = generate_synthetic(&spec)?;
    data.dataset.write_csv(&a.output)?;
    if let Some(p) = a.ite_output {
        let mut text = String::from("row,ite\n");
        for (i, v) in data.ite.iter().enumerate() {
            text.push_str(&format!("{i},{v}\n"));
        }
        write_atomic(&p, text.as_bytes())?;
    }
    println!("wrote {} rows to {}", data.dataset.len(), a.output.display());
    Ok(())
}

/// Config used by `train`: the experiment config when given, else defaults.
fn train_config(a: &TrainArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json(&read_to_string(p)?)?,
        None => ExperimentConfig::from_json(&format!(
            "{{\"data\":{{\"kind\":\"csv\",\"path\":{}}},\"output_dir\":{}}}",
            serde_json::to_string(&a.data)?,
            serde_json::to_string(&a.output_dir)?
        ))?,
    };
    if let Some(v) = &a.lambda {
        cfg.ranker_grid.lambda_grid = v.clone();
    }
    if let Some(v) = &a.lr {
        cfg.ranker_grid.lr_grid = v.clone();
        cfg.tm_grid.lr_grid = v.clone();
        cfg.cvt_grid.lr_grid = v.clone();
    }
    if let Some(v) = &a.l2 {
        cfg.tm_grid.l2_grid = v.clone();
        cfg.cvt_grid.l2_grid = v.clone();
    }
    if let Some(e) = a.epochs {
        cfg.ranker_grid.template.epochs = e;
        cfg.tm_grid.template.epochs = e;
        cfg.cvt_grid.template.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.ranker_grid.template.batch_size = b;
        cfg.tm_grid.template.batch_size = b;
        cfg.cvt_grid.template.batch_size = b;
    }
    if let Some(d) = a.delta {
        cfg.delta = d;
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    cfg.ranker_grid.template.surrogate = a.surrogate.apply(cfg.ranker_grid.template.surrogate);
    Ok(cfg)
}

fn train(a: TrainArgs) -> CliResult {
    let method: Method = a.method.parse()?;
    let cfg = train_config(&a)?;
    let data = UpliftDataset::read_csv(&a.data)?;
    let (train_set, validation) = match &a.validation_data {
        Some(p) => (data, UpliftDataset::read_csv(p)?),
        None => {
            let spec = SplitSpec::new(1.0 - a.validation_fraction, 0.0, cfg.master_seed);
            let s = split(&data, &spec)?;
            (s.train_set(&data)?, s.test_set(&data)?)
        }
    };
    let sel = fit_method(method, &cfg, 0, &train_set, &validation)?;
    let dir = &a.output_dir;
    write_atomic(&dir.join("model.json"), sel.model.to_json()?.as_bytes())?;
    write_json(&dir.join("selection.json"), &sel)?;
    write_atomic(&dir.join("grid.csv"), sel.records_csv().as_bytes())?;
    write_atomic(&dir.join("timings.csv"), sel.timings_csv().as_bytes())?;
    if let Some(log) = &sel.training_log {
        write_atomic(&dir.join("training_log.csv"), log.to_csv().as_bytes())?;
    }
    train_set.write_csv(&dir.join("train.csv"))?;
    println!(
        "{method}: selected grid point {} ({:?} = {}) -> {}",
        sel.best_index,
        sel.criterion,
        sel.best_value,
        dir.join("model.json").display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Error> {
    // a malformed model file is bad input, not a bad config
    Model::from_json(&read_to_string(path)?).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            row: j.line(),
            message: format!("{}: {j}", path.display()),
        },
        other => other,
    })
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let ds = UpliftDataset::read_csv(&a.data)?;
    let scores = model.score(&ds)?;
    let value = auuc(&scores, &ds)?;
    let stats = group_stats(&ds)?;
    let curve = uplift_curve(&scores, &ds)?;
    let policy = policy_risk_curve(&scores, &ds, &decile_ratios())?;
    let dir = &a.output_dir;
    write_json(
        &dir.join("metrics.json"),
        &serde_json::json!({
            "auuc": value,
            "ate": stats.ate,
            "n": ds.len(),
            "model_type": model.kind.type_name(),
            "policy_risk": policy,
        }),
    )?;
    write_atomic(&dir.join("uplift_curve.csv"), curve.to_csv().as_bytes())?;
    write_atomic(&dir.join("policy_risk.csv"), policy_risk_csv(&policy).as_bytes())?;
    write_atomic(
        &dir.join("scores.csv"),
        two_column_csv(("row", "score"), scores.iter().enumerate().map(|(i, &s)| (i as f64, s))).as_bytes(),
    )?;
    println!("auuc = {value}");
    Ok(())
}

fn bound(a: BoundArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let ds = UpliftDataset::read_csv(&a.data)?;
    let ModelKind::AuucMax(linear) = &model.kind else {
        return Err(Error::InvalidArgument(
            "the bound applies to linear rankers (auuc_max models)".into(),
        ));
    };
    let lambda = match (a.lambda, model.lambda_cap) {
        (Some(l), _) | (None, Some(l)) => l,
        (None, None) => return Err(Error::InvalidArgument("model has no Λ; pass --lambda".into())),
    };
    if linear.norm() > lambda * (1.0 + 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "model weights have norm {} above Λ = {lambda}",
            linear.norm()
        )));
    }
    let spec = FunctionClassSpec::for_dataset(&ds, lambda)?;
    let report = auuc_lower_bound(&model.score(&ds)?, &ds, &spec, a.delta)?;
    match &a.output {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn experiment_config(a: &ExperimentArgs, jobs: Option<usize>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_json(&read_to_string(&a.config)?)?;
    if let Some(n) = a.num_splits {
        cfg.num_splits = n;
    }
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(ms) = &a.methods {
        cfg.methods = ms.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    }
    if let Some(d) = a.delta {
        cfg.delta = d;
    }
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    cfg.ranker_grid.template.surrogate = a.surrogate.apply(cfg.ranker_grid.template.surrogate);
    Ok(cfg)
}

fn experiment_splits(a: ExperimentArgs, jobs: Option<usize>) -> CliResult {
    let cfg = experiment_config(&a, jobs)?;
    let res = run_splits(&cfg)?;
    for m in &res.aggregate.methods {
        println!(
            "{:<12} test AUUC {:.5} ± {:.5} ({} ok, {} failed)",
            m.method.name(),
            m.mean_test_auuc,
            m.two_sigma,
            m.n_ok,
            m.n_failed
        );
    }
    Ok(())
}

fn experiment_bound_gap(a: BoundGapArgs, jobs: Option<usize>) -> CliResult {
    let mut cfg = experiment_config(&a.common, jobs)?;
    if let Some(n) = a.num_splits_for_mean {
        cfg.bound_gap.num_splits_for_mean = n;
    }
    let res = bound_gap(&cfg)?;
    let s = &res.summary;
    println!(
        "mean gap {:.5} to test AUUC, {:.5} to E[AUUC]; bound below test AUUC in {:.1}% of {} splits",
        s.mean_test_gap,
        s.mean_gap,
        100.0 * s.bound_holds_fraction,
        s.n_ok
    );
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> CliResult {
    let report = verify(&a.dir)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.consistent {
        Ok(())
    } else {
        Err(Error::Parse {
            row: 0,
            message: format!("aggregate disagrees with rows: {}", report.mismatches.join("; ")),
        })
    }
}
