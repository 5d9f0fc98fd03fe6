//! `covadj`: covariate-adjusted log-rank tests and unconditional
//! hazard-ratio estimation with externally trained prognostic scores.
//!
//! Subcommands: `train` a prognostic model on external control data,
//! `score` trial subjects with it, `fit`/`test` the adjusted analysis,
//! `design` event-count planning, and `simulate` Monte Carlo operating
//! characteristics. Every output file gets a sibling manifest recording
//! inputs, hashes, seeds, and the resolved configuration.

mod io;
mod manifest;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use covadj_core::adjust::{
    adjusted_logrank_test, fit_adjusted_hr, fit_unadjusted_hr, unadjusted_logrank_test,
};
use covadj_core::data::CovariateMatrix;
use covadj_core::design::{events_required, events_required_stratified, DesignInput};
use covadj_core::forest::ForestParams;
use covadj_core::prognostic::{
    default_survival_time, estimate_rho, score, train, PrognosticModel, TargetKind,
};
use covadj_core::sim::{run_scenario, Case, Effect, ScenarioConfig, Strategy};
use covadj_core::stratified::{
    fit_stratified_hr, fit_stratified_unadjusted_hr, stratified_logrank_test, stratum_summaries,
};
use covadj_core::TrialDataset;

use output::{emit, Format};

/// Validation problems exit with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<covadj_core::Error> for CliError {
    fn from(e: covadj_core::Error) -> CliError {
        use covadj_core::Error::*;
        match e {
            EmptyRiskSet | NoEvents | Invalid(_) | InvalidTime(_) | FeatureMismatch(_)
            | InvalidModel(_) | OutOfRange(_) => CliError::Validation(e.to_string()),
            DegenerateInformation | NoRootInBracket { .. } | SingularDesign { .. }
            | StratumDegenerate(_) => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "covadj", version, about = "Covariate-adjusted survival analysis with prognostic scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the unconditional log hazard ratio, optionally adjusted.
    Fit(FitArgs),
    /// Covariate-adjusted (or classical) log-rank test.
    Test(TestArgs),
    /// Train a prognostic model on external control data.
    Train(TrainArgs),
    /// Score trial subjects with a trained model.
    Score(ScoreArgs),
    /// Event-count planning with an anticipated score correlation.
    Design(DesignArgs),
    /// Monte Carlo operating characteristics for a scenario.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AdjustChoice {
    /// No covariates: classical analysis.
    None,
    /// Adjust for the score column only.
    Score,
    /// Adjust for the data file's covariate columns only.
    Covariates,
    /// Adjust for covariates plus the score column.
    ScoreCovariates,
}

#[derive(Args)]
struct AnalysisInputs {
    /// Trial CSV: time, event, arm, optional stratum, covariates.
    #[arg(long)]
    data: PathBuf,
    /// Analysis horizon; defaults to the maximum observed time.
    #[arg(long)]
    tau: Option<f64>,
    /// Target allocation; defaults to the observed treated fraction.
    #[arg(long)]
    pi: Option<f64>,
    /// Per-subject scores aligned with the data rows (column `score`).
    #[arg(long = "score", alias = "score-file", conflicts_with = "model")]
    score_file: Option<PathBuf>,
    /// Trained model file; scores are computed in-process.
    #[arg(long)]
    model: Option<PathBuf>,
    /// What to adjust for. Default: score when one is supplied, otherwise
    /// the data file's covariates.
    #[arg(long, value_enum)]
    adjust: Option<AdjustChoice>,
    /// Stratified analysis (requires a stratum column).
    #[arg(long)]
    stratified: bool,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    inputs: AnalysisInputs,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Write the JSON report here (a manifest is written next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    inputs: AnalysisInputs,
    /// Headline the lower-tail p-value (treatment benefit).
    #[arg(long)]
    one_sided: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetChoice {
    Martingale,
    Survival,
}

#[derive(Args)]
struct TrainArgs {
    /// External control CSV: time, event, covariates.
    #[arg(long)]
    external: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum, default_value = "martingale")]
    target: TargetChoice,
    /// Horizon of the survival-probability target; defaults to the median
    /// observed follow-up.
    #[arg(long)]
    at_time: Option<f64>,
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 5)]
    min_leaf: usize,
    /// Features per split; defaults to ceil(p/3).
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Scores CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args)]
struct DesignArgs {
    /// Anticipated score/residual correlation (within-stratum version
    /// under --stratified).
    #[arg(long)]
    rho: f64,
    /// Planned events of the unadjusted design; derived from alpha, power,
    /// and the design log-HR when omitted.
    #[arg(long)]
    events: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    power: f64,
    /// Design log hazard ratio.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "hr")]
    log_hr: Option<f64>,
    /// Design hazard ratio (converted to the log scale).
    #[arg(long)]
    hr: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pi: f64,
    #[arg(long)]
    stratified: bool,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_case)]
    case: Option<Case>,
    #[arg(long)]
    effect: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    n_external: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    stratified: bool,
    #[arg(long)]
    n_strata: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    /// Fixed analysis horizon; default lets each replicate use its
    /// maximum observed time.
    #[arg(long)]
    fixed_tau: Option<f64>,
    /// Worker threads (also COVADJ_WORKERS); 1 means strictly sequential.
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated hazard ratios: sweep the generator effect and
    /// report power per point instead of a single scenario row.
    #[arg(long)]
    hr_grid: Option<String>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_case(s: &str) -> Result<Case, String> {
    s.parse().map_err(|e: covadj_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Test(args) => cmd_test(args),
        Command::Train(args) => cmd_train(args),
        Command::Score(args) => cmd_score(args),
        Command::Design(args) => cmd_design(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

struct ResolvedAnalysis {
    data: TrialDataset,
    x: CovariateMatrix,
    scores: Option<Vec<f64>>,
    model_id: Option<String>,
    warnings: Vec<String>,
    adjusted: bool,
    input_rows: usize,
    imputed_cells: usize,
}

fn resolve_analysis(inputs: &AnalysisInputs) -> Result<ResolvedAnalysis, CliError> {
    let (data, diag) = io::load_trial(&inputs.data, inputs.tau, inputs.pi)?;
    let mut warnings = diag.warnings;

    let mut model_id = None;
    let scores = if let Some(model_path) = &inputs.model {
        let body = std::fs::read_to_string(model_path).map_err(|e| {
            CliError::Validation(format!("cannot read {}: {e}", model_path.display()))
        })?;
        let model = PrognosticModel::from_json(&body)?;
        model_id = Some(model.model_id.clone());
        Some(score(&model, &data)?)
    } else if let Some(score_path) = &inputs.score_file {
        let s = io::load_scores(score_path)?;
        if s.len() != data.n() {
            return Err(CliError::Validation(format!(
                "score file has {} rows but the data has {}",
                s.len(),
                data.n()
            )));
        }
        Some(s)
    } else {
        None
    };

    let choice = inputs.adjust.unwrap_or(if scores.is_some() {
        AdjustChoice::Score
    } else {
        AdjustChoice::Covariates
    });
    let needs_score =
        matches!(choice, AdjustChoice::Score | AdjustChoice::ScoreCovariates);
    if needs_score && scores.is_none() {
        return Err(CliError::Validation(
            "--adjust score needs --score or --model".into(),
        ));
    }

    let x = match choice {
        AdjustChoice::None => CovariateMatrix::empty(data.n()),
        AdjustChoice::Score => {
            CovariateMatrix::from_columns(std::slice::from_ref(scores.as_ref().unwrap()))?
        }
        AdjustChoice::Covariates => CovariateMatrix::from_dataset(&data),
        AdjustChoice::ScoreCovariates => {
            CovariateMatrix::from_dataset(&data).with_column(scores.as_ref().unwrap())?
        }
    };
    if choice == AdjustChoice::Covariates && data.p() == 0 {
        warnings.push("no covariate columns; analysis is unadjusted".into());
    }
    if inputs.stratified && !data.has_strata() {
        return Err(CliError::Validation(
            "--stratified requires a stratum column in the data".into(),
        ));
    }
    for z in covadj_core::stratified::small_strata(&data, 10) {
        if inputs.stratified {
            warnings.push(format!("stratum {z} has fewer than 10 subjects"));
        }
    }
    Ok(ResolvedAnalysis {
        data,
        x,
        scores,
        model_id,
        warnings,
        adjusted: choice != AdjustChoice::None,
        input_rows: diag.n_rows,
        imputed_cells: diag.imputed_cells,
    })
}

fn analysis_manifest(
    subcommand: &str,
    inputs: &AnalysisInputs,
    resolved: &ResolvedAnalysis,
    config: serde_json::Value,
) -> Result<manifest::RunManifest, CliError> {
    let mut m = manifest::RunManifest::new(subcommand, config).with_input(&inputs.data)?;
    if let Some(p) = &inputs.score_file {
        m = m.with_input(p)?;
    }
    if let Some(p) = &inputs.model {
        m = m.with_input(p)?;
    }
    if let Some(id) = &resolved.model_id {
        m = m.with_model_id(id);
    }
    Ok(m)
}

fn rho_json(
    resolved: &ResolvedAnalysis,
) -> Result<(Option<f64>, serde_json::Value), CliError> {
    match &resolved.scores {
        Some(s) => {
            let est = estimate_rho(&resolved.data, s)?;
            let headline = if resolved.data.has_strata() { est.rho_strat } else { None };
            let value = serde_json::to_value(&est).map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok((headline.or(Some(est.rho)), value))
        }
        None => Ok((None, serde_json::Value::Null)),
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let resolved = resolve_analysis(&args.inputs)?;
    let fit = match (args.inputs.stratified, resolved.adjusted) {
        (false, true) => fit_adjusted_hr(&resolved.data, &resolved.x, args.inputs.alpha)?,
        (false, false) => fit_unadjusted_hr(&resolved.data, args.inputs.alpha)?,
        (true, true) => fit_stratified_hr(&resolved.data, &resolved.x, args.inputs.alpha)?,
        (true, false) => fit_stratified_unadjusted_hr(&resolved.data, args.inputs.alpha)?,
    };
    let (rho_headline, rho_value) = rho_json(&resolved)?;
    let strata = if args.inputs.stratified {
        serde_json::to_value(stratum_summaries(&resolved.data))
            .map_err(|e| CliError::Runtime(e.to_string()))?
    } else {
        serde_json::Value::Null
    };
    let envelope = json!({
        "schema": "covadj.fit/v1",
        "fit": fit,
        "rho": rho_value,
        "strata": strata,
        "input": {"rows": resolved.input_rows, "imputed_cells": resolved.imputed_cells},
        "warnings": resolved.warnings,
    });
    let table = output::fit_table(&fit, rho_headline);
    emit(&envelope, table, args.format, args.out.as_deref())?;
    if let Some(out) = &args.out {
        analysis_manifest("fit", &args.inputs, &resolved, json!({"alpha": args.inputs.alpha}))?
            .write_next_to(out)?;
    }
    Ok(())
}

fn cmd_test(args: TestArgs) -> Result<(), CliError> {
    let resolved = resolve_analysis(&args.inputs)?;
    let test = match (args.inputs.stratified, resolved.adjusted) {
        (false, true) => adjusted_logrank_test(&resolved.data, &resolved.x)?,
        (false, false) => unadjusted_logrank_test(&resolved.data)?,
        (true, _) => stratified_logrank_test(&resolved.data, &resolved.x)?,
    };
    let (_, rho_value) = rho_json(&resolved)?;
    let envelope = json!({
        "schema": "covadj.test/v1",
        "test": test,
        "one_sided": args.one_sided,
        "rho": rho_value,
        "input": {"rows": resolved.input_rows, "imputed_cells": resolved.imputed_cells},
        "warnings": resolved.warnings,
    });
    let table = output::test_table(&test, args.one_sided);
    emit(&envelope, table, args.format, args.out.as_deref())?;
    if let Some(out) = &args.out {
        analysis_manifest("test", &args.inputs, &resolved, json!({"one_sided": args.one_sided}))?
            .write_next_to(out)?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (ext, diag) = io::load_external(&args.external, args.tau)?;
    let seed = args.seed.unwrap_or(0);
    if args.seed.is_none() {
        eprintln!("seed: 0 (default)");
    }
    let target = match args.target {
        TargetChoice::Martingale => TargetKind::MartingaleResidual,
        TargetChoice::Survival => TargetKind::SurvivalProbability {
            at_time: args.at_time.unwrap_or_else(|| default_survival_time(&ext)),
        },
    };
    let params = ForestParams {
        n_trees: args.trees,
        max_depth: args.depth,
        min_leaf: args.min_leaf,
        mtry: args.mtry,
        seed,
    };
    let model = train(&ext, target, params)?;
    std::fs::write(&args.out, model.to_json())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.out.display())))?;

    let envelope = json!({
        "schema": "covadj.train/v1",
        "model_id": model.model_id,
        "model_file": args.out.display().to_string(),
        "target_kind": model.target_kind,
        "params": model.params,
        "feature_names": model.feature_names,
        "training_summary": model.training_summary,
        "warnings": diag.warnings,
    });
    let table = output::kv_table(&[
        ("model file", args.out.display().to_string()),
        ("model id", model.model_id.clone()),
        ("rows / events", format!("{} / {}", model.training_summary.n, model.training_summary.events)),
        (
            "out-of-bag R2",
            model
                .training_summary
                .oob_r2
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into()),
        ),
        ("features", model.feature_names.join(", ")),
    ]);
    emit(&envelope, table, args.format, None)?;
    manifest::RunManifest::new("train", serde_json::to_value(&params).unwrap_or_default())
        .with_input(&args.external)?
        .with_seed(seed)
        .with_model_id(&model.model_id)
        .write_next_to(&args.out)?;
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let body = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", args.model.display())))?;
    let model = PrognosticModel::from_json(&body)?;
    let (data, diag) = io::load_trial(&args.data, None, None)?;
    let scores = score(&model, &data)?;
    io::write_scores(&args.out, &scores)?;

    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let envelope = json!({
        "schema": "covadj.score/v1",
        "model_id": model.model_id,
        "scores_file": args.out.display().to_string(),
        "n": scores.len(),
        "mean": mean,
        "sd": sd,
        "warnings": diag.warnings,
    });
    let table = output::kv_table(&[
        ("scores file", args.out.display().to_string()),
        ("n", format!("{}", scores.len())),
        ("mean", format!("{mean:.4}")),
        ("sd", format!("{sd:.4}")),
    ]);
    emit(&envelope, table, args.format, None)?;
    manifest::RunManifest::new("score", serde_json::Value::Null)
        .with_input(&args.model)?
        .with_input(&args.data)?
        .with_model_id(&model.model_id)
        .write_next_to(&args.out)?;
    Ok(())
}

fn cmd_design(args: DesignArgs) -> Result<(), CliError> {
    let theta_alt = match (args.log_hr, args.hr) {
        (Some(t), _) => t,
        (None, Some(hr)) => {
            if hr <= 0.0 {
                return Err(CliError::Validation("--hr must be positive".into()));
            }
            hr.ln()
        }
        (None, None) => (0.6f64).ln(),
    };
    let input = DesignInput {
        rho: args.rho,
        d_unadj: args.events,
        alpha: args.alpha,
        power: args.power,
        theta_alt,
        pi: args.pi,
    };
    let out = if args.stratified {
        events_required_stratified(&input)?
    } else {
        events_required(&input)?
    };
    let envelope = json!({
        "schema": "covadj.design/v1",
        "input": input,
        "output": out,
    });
    let table = output::kv_table(&[
        ("rho", format!("{:.4}", args.rho)),
        ("variance ratio", format!("{:.4}", out.variance_ratio)),
        ("events (unadjusted)", out.d_unadj.to_string()),
        ("events (adjusted)", out.d_adj.to_string()),
        ("events saved", out.events_saved.to_string()),
        ("power at unadjusted events", format!("{:.4}", out.power_at_fixed_events)),
        ("stratified", out.stratified.to_string()),
    ]);
    emit(&envelope, table, args.format, args.out.as_deref())?;
    if let Some(path) = &args.out {
        manifest::RunManifest::new(
            "design",
            serde_json::to_value(input).unwrap_or_default(),
        )
        .write_next_to(path)?;
    }
    Ok(())
}

fn resolve_scenario(args: &SimulateArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            serde_json::from_str(&body)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(c) = args.case {
        cfg.case = c;
    }
    if let Some(e) = &args.effect {
        cfg.effect = e.parse::<Effect>().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if let Some(n) = args.n {
        cfg.n_trial = n;
    }
    if let Some(r) = args.reps {
        cfg.n_replicates = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse::<Strategy>().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    if let Some(n) = args.n_external {
        cfg.n_external = n;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(p) = args.pi {
        cfg.pi = p;
    }
    if args.stratified || args.n_strata.is_some() || args.block_size.is_some() {
        let mut d = cfg.stratified.unwrap_or_default();
        if let Some(k) = args.n_strata {
            d.n_strata = k;
        }
        if let Some(b) = args.block_size {
            d.block_size = b;
        }
        cfg.stratified = Some(d);
    }
    if let Some(t) = args.trees {
        cfg.forest.n_trees = t;
    }
    if args.fixed_tau.is_some() {
        cfg.fixed_tau = args.fixed_tau;
    }
    cfg.workers = args
        .workers
        .or_else(|| std::env::var("COVADJ_WORKERS").ok().and_then(|v| v.parse().ok()))
        .or(cfg.workers);
    Ok(cfg)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = resolve_scenario(&args)?;
    eprintln!("seed: {}{}", cfg.seed, if args.seed.is_none() { " (default)" } else { "" });

    if let Some(grid) = &args.hr_grid {
        return simulate_power_curve(&args, &cfg, grid);
    }

    let report = run_scenario(&cfg)?;
    let envelope = json!({
        "schema": "covadj.simulate/v1",
        "config": cfg,
        "report": report,
    });
    if args.format == Format::Csv {
        let mut w = csv::Writer::from_writer(std::io::stdout());
        w.write_record(output::REPORT_CSV_HEADER)
            .and_then(|_| w.write_record(output::report_csv_row(&report)))
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        if let Some(path) = &args.out {
            let body = serde_json::to_string_pretty(&envelope)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            std::fs::write(path, body)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        }
    } else {
        emit(&envelope, output::report_table(&report), args.format, args.out.as_deref())?;
    }
    if let Some(path) = &args.out {
        let mut m = manifest::RunManifest::new(
            "simulate",
            serde_json::to_value(&cfg).unwrap_or_default(),
        )
        .with_seed(cfg.seed);
        if let Some(c) = &args.config {
            m = m.with_input(c)?;
        }
        m.write_next_to(path)?;
    }
    Ok(())
}

/// Sweep the generator's conditional log-HR over a hazard-ratio grid and
/// report power per point.
fn simulate_power_curve(
    args: &SimulateArgs,
    base: &ScenarioConfig,
    grid: &str,
) -> Result<(), CliError> {
    let hrs: Vec<f64> = grid
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Validation(format!("bad hazard ratio '{s}' in --hr-grid")))
        })
        .collect::<Result<_, _>>()?;
    if hrs.iter().any(|h| *h <= 0.0) {
        return Err(CliError::Validation("--hr-grid ratios must be positive".into()));
    }

    let mut points = Vec::with_capacity(hrs.len());
    for hr in &hrs {
        let mut cfg = base.clone();
        cfg.conditional_theta = Some(hr.ln());
        cfg.effect = if *hr == 1.0 { Effect::Null } else { Effect::Efficacy };
        let report = run_scenario(&cfg)?;
        points.push(json!({
            "hr": hr,
            "power_unadjusted": report.reject_rate_unadj,
            "power_adjusted": report.reject_rate_adj,
            "mean_rho": report.mean_rho,
            "var_ratio": report.var_ratio,
        }));
    }
    let envelope = json!({
        "schema": "covadj.powercurve/v1",
        "config": base,
        "points": points,
    });

    match args.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(["hr", "power_unadjusted", "power_adjusted"])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            for p in &points {
                w.write_record([
                    p["hr"].to_string(),
                    p["power_unadjusted"].to_string(),
                    p["power_adjusted"].to_string(),
                ])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        _ => {
            let rows: Vec<(String, String)> = points
                .iter()
                .map(|p| {
                    (
                        format!("hr {}", p["hr"]),
                        format!(
                            "power {} -> {}",
                            p["power_unadjusted"], p["power_adjusted"]
                        ),
                    )
                })
                .collect();
            let refs: Vec<(&str, String)> =
                rows.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            emit(&envelope, output::kv_table(&refs), args.format, args.out.as_deref())?;
        }
    }
    if args.format == Format::Csv {
        if let Some(path) = &args.out {
            let body = serde_json::to_string_pretty(&envelope)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            std::fs::write(path, body)
                .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    if let Some(path) = &args.out {
        manifest::RunManifest::new("simulate", serde_json::to_value(base).unwrap_or_default())
            .with_seed(base.seed)
            .write_next_to(path)?;
    }
    Ok(())
}
