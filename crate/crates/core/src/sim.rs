//! Scenario generators and the Monte Carlo engine.
//!
//! Seven external-data scenarios probe the method from ideal external
//! cohorts to useless or misspecified ones. Each replicate draws from its
//! own RNG stream keyed by (seed, case, effect, n, replicate), and the
//! external cohort is generated once per scenario and held fixed, so a
//! scenario report is bit-identical across runs and worker counts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::adjust::{
    adjusted_logrank_test, fit_adjusted_hr, fit_unadjusted_hr, z_quantile, AdjustedFit,
};
use crate::data::{Arm, CovariateMatrix, Subject, TrialDataset};
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::prognostic::{
    default_survival_time, estimate_rho, score, train, ExternalControls, PrognosticModel,
    TargetKind,
};
use crate::rng;
use crate::stratified::{fit_stratified_hr, fit_stratified_unadjusted_hr, stratified_logrank_test};

const BASE_HAZARD: f64 = 0.08;
const LOG_RATE_INTERCEPT: f64 = 0.8;
const CENSOR_RATE: f64 = 0.02;
const CHANGE_POINT: f64 = 5.0;
const PIECE_TREATMENT: [f64; 2] = [0.8, 1.2];
const PIECE_INTERACTION: [f64; 2] = [0.8, 1.2];
const PIECE_QUADRATIC: [f64; 2] = [1.2, 0.8];
const AFT_NOISE_TRIAL: f64 = 0.5;
const AFT_NOISE_EXTERNAL: f64 = 0.7;

fn beta1() -> f64 {
    (1.8f64).ln()
}

fn beta2() -> f64 {
    (3.0f64).ln()
}

fn theta_efficacy() -> f64 {
    (0.6f64).ln()
}

const STREAM_EXTERNAL: u64 = 1;
const STREAM_FOREST: u64 = 2;
const STREAM_TRIAL: u64 = 3;

/// External-data scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    /// External controls drawn from the trial's control law.
    I,
    /// Different baseline hazard and covariate structure.
    II,
    /// Key covariate missing from the external dataset.
    III,
    /// Covariate-free external hazard: nothing to learn.
    IV,
    /// Log-normal AFT external data, similar covariate structure.
    V,
    /// Log-normal AFT for both trial and external data.
    VI,
    /// Two-piece trial hazard with time-varying effects.
    VII,
}

impl Case {
    pub fn all() -> [Case; 7] {
        [Case::I, Case::II, Case::III, Case::IV, Case::V, Case::VI, Case::VII]
    }

    fn id(self) -> u64 {
        match self {
            Case::I => 1,
            Case::II => 2,
            Case::III => 3,
            Case::IV => 4,
            Case::V => 5,
            Case::VI => 6,
            Case::VII => 7,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
            Case::IV => "IV",
            Case::V => "V",
            Case::VI => "VI",
            Case::VII => "VII",
        }
    }
}

impl std::str::FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Case> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "III" | "3" => Ok(Case::III),
            "IV" | "4" => Ok(Case::IV),
            "V" | "5" => Ok(Case::V),
            "VI" | "6" => Ok(Case::VI),
            "VII" | "7" => Ok(Case::VII),
            other => Err(Error::OutOfRange(format!("unknown case '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Effect {
    Null,
    Efficacy,
}

impl Effect {
    fn id(self) -> u64 {
        match self {
            Effect::Null => 0,
            Effect::Efficacy => 1,
        }
    }

    /// Conditional treatment log-HR fed to the generator.
    pub fn conditional_theta(self) -> f64 {
        match self {
            Effect::Null => 0.0,
            Effect::Efficacy => theta_efficacy(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Effect::Null => "null",
            Effect::Efficacy => "efficacy",
        }
    }
}

impl std::str::FromStr for Effect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Effect> {
        match s.to_ascii_lowercase().as_str() {
            "null" => Ok(Effect::Null),
            "efficacy" => Ok(Effect::Efficacy),
            other => Err(Error::OutOfRange(format!("unknown effect '{other}'"))),
        }
    }
}

/// Analysis strategy applied to each replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Unadjusted,
    /// Adjust for the martingale-target score alone.
    ScoreOnlyMartingale,
    /// Adjust for the martingale-target score plus raw covariates.
    ScorePlusCovariatesMartingale,
    /// Adjust for the survival-target score alone.
    ScoreOnlySurvival,
    /// Adjust for the survival-target score plus raw covariates.
    ScorePlusCovariatesSurvival,
}

impl Strategy {
    pub fn uses_score(self) -> bool {
        !matches!(self, Strategy::Unadjusted)
    }

    pub fn includes_raw_covariates(self) -> bool {
        matches!(
            self,
            Strategy::ScorePlusCovariatesMartingale | Strategy::ScorePlusCovariatesSurvival
        )
    }

    fn survival_target(self) -> bool {
        matches!(self, Strategy::ScoreOnlySurvival | Strategy::ScorePlusCovariatesSurvival)
    }

    fn target_id(self) -> u64 {
        if self.survival_target() {
            2
        } else {
            1
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Unadjusted => "unadjusted",
            Strategy::ScoreOnlyMartingale => "score-m",
            Strategy::ScorePlusCovariatesMartingale => "score-covariates-m",
            Strategy::ScoreOnlySurvival => "score-s",
            Strategy::ScorePlusCovariatesSurvival => "score-covariates-s",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Strategy> {
        match s.to_ascii_lowercase().as_str() {
            "unadjusted" => Ok(Strategy::Unadjusted),
            "score-m" | "score" => Ok(Strategy::ScoreOnlyMartingale),
            "score-covariates-m" | "score-covariates" => {
                Ok(Strategy::ScorePlusCovariatesMartingale)
            }
            "score-s" => Ok(Strategy::ScoreOnlySurvival),
            "score-covariates-s" => Ok(Strategy::ScorePlusCovariatesSurvival),
            other => Err(Error::OutOfRange(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Stratified-randomization layout for generated trials: independent
/// uniform stratum labels with permuted-block assignment within strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedDesign {
    pub n_strata: usize,
    pub block_size: usize,
}

impl Default for StratifiedDesign {
    fn default() -> StratifiedDesign {
        StratifiedDesign { n_strata: 2, block_size: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub case: Case,
    pub effect: Effect,
    pub n_trial: usize,
    pub n_external: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub pi: f64,
    pub strategy: Strategy,
    pub stratified: Option<StratifiedDesign>,
    /// Fixed analysis horizon; by default each replicate uses its maximum
    /// observed time so every event counts.
    pub fixed_tau: Option<f64>,
    /// Generator override of the conditional treatment log-HR (power
    /// curves sweep this).
    pub conditional_theta: Option<f64>,
    pub forest: ForestParams,
    /// Replicate-loop workers. `None` uses the rayon default pool,
    /// `Some(1)` runs strictly sequentially.
    pub workers: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> ScenarioConfig {
        ScenarioConfig {
            case: Case::I,
            effect: Effect::Null,
            n_trial: 400,
            n_external: 300,
            n_replicates: 10_000,
            seed: 0,
            alpha: 0.05,
            pi: 0.5,
            strategy: Strategy::ScoreOnlyMartingale,
            stratified: None,
            fixed_tau: None,
            conditional_theta: None,
            forest: ForestParams::default(),
            workers: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trial < 10 {
            return Err(Error::OutOfRange("n_trial must be at least 10".into()));
        }
        if self.n_external < 2 {
            return Err(Error::OutOfRange("n_external must be at least 2".into()));
        }
        if self.n_replicates == 0 {
            return Err(Error::OutOfRange("n_replicates must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::OutOfRange("alpha must lie in (0, 1)".into()));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::OutOfRange("pi must lie in (0, 1)".into()));
        }
        if let Some(s) = self.stratified {
            if s.n_strata == 0 || s.block_size < 2 {
                return Err(Error::OutOfRange(
                    "stratified design needs n_strata >= 1 and block_size >= 2".into(),
                ));
            }
        }
        if let Some(t) = self.fixed_tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::OutOfRange("fixed_tau must be positive and finite".into()));
            }
        }
        Ok(())
    }

    fn generator_theta(&self) -> f64 {
        self.conditional_theta.unwrap_or_else(|| self.effect.conditional_theta())
    }
}

fn draw_covariates(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let x1 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    let x2: f64 = rng.sample(StandardNormal);
    let x3: f64 = rng.sample(StandardNormal);
    [x1, x2, x3]
}

/// Log relative rate of the shared Cox generator, excluding the base
/// hazard factor.
fn cox_log_rate(theta_term: f64, x: &[f64; 3]) -> f64 {
    LOG_RATE_INTERCEPT + theta_term + beta1() * x[0] * x[1].abs()
        - beta2() * (x[1] - 0.5).powi(2)
}

/// Invert the two-piece cumulative hazard at a standard-exponential draw.
fn piecewise_time(rate_early: f64, rate_late: f64, e: f64) -> f64 {
    let knee = CHANGE_POINT * rate_early;
    if e <= knee {
        e / rate_early
    } else {
        CHANGE_POINT + (e - knee) / rate_late
    }
}

pub(crate) fn trial_event_time(
    case: Case,
    theta_j: f64,
    x: &[f64; 3],
    rng: &mut ChaCha8Rng,
) -> f64 {
    match case {
        Case::I | Case::II | Case::III | Case::IV | Case::V => {
            let rate = BASE_HAZARD * cox_log_rate(theta_j, x).exp();
            let e: f64 = rng.sample(Exp1);
            e / rate
        }
        Case::VI => {
            let eps: f64 = rng.sample(StandardNormal);
            let log_t = 1.0 - theta_j - beta1() * x[0] * x[1].abs()
                + beta2() * (x[1] - x[0]).powi(2)
                + AFT_NOISE_TRIAL * eps;
            log_t.exp()
        }
        Case::VII => {
            let rate_at = |k: usize| {
                BASE_HAZARD
                    * (LOG_RATE_INTERCEPT
                        + PIECE_TREATMENT[k] * theta_j
                        + PIECE_INTERACTION[k] * beta1() * x[0] * x[1].abs()
                        - PIECE_QUADRATIC[k] * beta2() * (x[1] - 0.5).powi(2))
                    .exp()
            };
            let e: f64 = rng.sample(Exp1);
            piecewise_time(rate_at(0), rate_at(1), e)
        }
    }
}

fn external_event_time(case: Case, x: &[f64; 3], rng: &mut ChaCha8Rng) -> f64 {
    match case {
        // Same control law as the trial (Case III only hides a covariate
        // from training, Case VII changes the trial side only).
        Case::I | Case::III | Case::VII => {
            let rate = BASE_HAZARD * cox_log_rate(0.0, x).exp();
            let e: f64 = rng.sample(Exp1);
            e / rate
        }
        Case::II => {
            let rate = 0.05 * (LOG_RATE_INTERCEPT + 0.2 * x[1]).exp();
            let e: f64 = rng.sample(Exp1);
            e / rate
        }
        Case::IV => {
            let rate = BASE_HAZARD * LOG_RATE_INTERCEPT.exp();
            let e: f64 = rng.sample(Exp1);
            e / rate
        }
        Case::V => {
            let eps: f64 = rng.sample(StandardNormal);
            let log_t = 1.0 + beta1() * x[0] * x[1]
                + beta2() * (x[1] - x[0]).powi(2)
                + AFT_NOISE_EXTERNAL * eps;
            log_t.exp()
        }
        Case::VI => {
            let eps: f64 = rng.sample(StandardNormal);
            let log_t = 1.0 - beta1() * x[0] * x[1].abs()
                + beta2() * (x[1] - x[0]).powi(2)
                + AFT_NOISE_EXTERNAL * eps;
            log_t.exp()
        }
    }
}

fn censoring_time(rng: &mut ChaCha8Rng) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / CENSOR_RATE
}

/// Block assignments honoring the allocation within each block.
fn permuted_block(pi: f64, block_size: usize, rng: &mut ChaCha8Rng) -> Vec<Arm> {
    let n_treat = ((block_size as f64) * pi).round() as usize;
    let mut block: Vec<Arm> = (0..block_size)
        .map(|i| if i < n_treat { Arm::Treatment } else { Arm::Control })
        .collect();
    for k in (1..block.len()).rev() {
        let j = rng.random_range(0..=k);
        block.swap(k, j);
    }
    block
}

fn generate_trial_impl(
    case: Case,
    theta: f64,
    n: usize,
    pi: f64,
    stratified: Option<StratifiedDesign>,
    fixed_tau: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> TrialDataset {
    let mut covs = Vec::with_capacity(n);
    let mut strata = Vec::with_capacity(n);
    for _ in 0..n {
        covs.push(draw_covariates(rng));
        match stratified {
            Some(d) => strata.push(Some(rng.random_range(0..d.n_strata) as u32)),
            None => strata.push(None),
        }
    }

    let arms: Vec<Arm> = match stratified {
        None => (0..n)
            .map(|_| if rng.random_bool(pi) { Arm::Treatment } else { Arm::Control })
            .collect(),
        Some(d) => {
            let mut arms = vec![Arm::Control; n];
            for z in 0..d.n_strata as u32 {
                let members: Vec<usize> =
                    (0..n).filter(|&i| strata[i] == Some(z)).collect();
                let mut assigned = Vec::with_capacity(members.len());
                while assigned.len() < members.len() {
                    assigned.extend(permuted_block(pi, d.block_size, rng));
                }
                for (&i, &arm) in members.iter().zip(&assigned) {
                    arms[i] = arm;
                }
            }
            arms
        }
    };

    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let theta_j = if arms[i].is_treatment() { theta } else { 0.0 };
        let event_time = trial_event_time(case, theta_j, &covs[i], rng);
        let censor = censoring_time(rng);
        let (time, event) = if event_time <= censor { (event_time, true) } else { (censor, false) };
        let mut s = Subject::new(time, event, arms[i]).with_covariates(covs[i].to_vec());
        s.stratum = strata[i];
        subjects.push(s);
    }
    TrialDataset::new(subjects, fixed_tau, Some(pi))
        .expect("generated trial data always validates")
}

/// One simulated trial under simple randomization, horizon at the maximum
/// observed time.
pub fn generate_trial(
    case: Case,
    effect: Effect,
    n: usize,
    pi: f64,
    rng: &mut ChaCha8Rng,
) -> TrialDataset {
    generate_trial_impl(case, effect.conditional_theta(), n, pi, None, None, rng)
}

/// One external control cohort for the case. Case III hides x2 from the
/// training features.
pub fn generate_external(case: Case, n_ext: usize, rng: &mut ChaCha8Rng) -> ExternalControls {
    let mut times = Vec::with_capacity(n_ext);
    let mut events = Vec::with_capacity(n_ext);
    let mut rows = Vec::with_capacity(n_ext);
    for _ in 0..n_ext {
        let x = draw_covariates(rng);
        let event_time = external_event_time(case, &x, rng);
        let censor = censoring_time(rng);
        let (time, event) = if event_time <= censor { (event_time, true) } else { (censor, false) };
        times.push(time);
        events.push(event);
        rows.push(x);
    }
    let (feature_names, covariates): (Vec<String>, Vec<Vec<f64>>) = if case == Case::III {
        (
            vec!["x1".into(), "x3".into()],
            rows.iter().map(|x| vec![x[0], x[2]]).collect(),
        )
    } else {
        (
            vec!["x1".into(), "x2".into(), "x3".into()],
            rows.iter().map(|x| x.to_vec()).collect(),
        )
    };
    ExternalControls::new(times, events, covariates, feature_names, None)
        .expect("generated external data always validates")
}

/// Per-replicate outcomes feeding the report aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub theta_unadj: f64,
    pub theta_adj: f64,
    pub se_unadj: f64,
    pub se_adj: f64,
    pub reject_unadj: bool,
    pub reject_adj: bool,
    pub rho_hat: f64,
}

/// Aggregated operating characteristics of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub case: Case,
    pub effect: Effect,
    pub n: usize,
    pub n_replicates: usize,
    /// Replicates that failed to fit (counted, excluded from aggregates).
    pub n_degenerate: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub stratified: bool,
    /// |mean adjusted log-HR - mean unadjusted log-HR|.
    pub bias: f64,
    pub reject_rate_unadj: f64,
    pub reject_rate_adj: f64,
    /// Mean of the estimated standard errors of the adjusted estimate.
    pub mean_se_adj: f64,
    /// Monte Carlo standard deviation of the adjusted estimate.
    pub mc_sd_adj: f64,
    pub mc_sd_unadj: f64,
    /// Empirical Var(adjusted) / Var(unadjusted).
    pub var_ratio: f64,
    pub mean_rho: f64,
    pub mean_one_minus_rho_sq: f64,
    pub mean_theta_unadj: f64,
    pub mean_theta_adj: f64,
}

fn replicate(
    cfg: &ScenarioConfig,
    model: Option<&PrognosticModel>,
    r: u64,
) -> Result<ReplicateResult> {
    let mut rng = rng::stream(
        cfg.seed,
        &[STREAM_TRIAL, cfg.case.id(), cfg.effect.id(), cfg.n_trial as u64, r],
    );
    let data = generate_trial_impl(
        cfg.case,
        cfg.generator_theta(),
        cfg.n_trial,
        cfg.pi,
        cfg.stratified,
        cfg.fixed_tau,
        &mut rng,
    );

    let scores: Option<Vec<f64>> = match model {
        Some(m) => Some(score(m, &data)?),
        None => None,
    };
    let z_crit = z_quantile(cfg.alpha);
    let stratified = cfg.stratified.is_some();

    let unadj: AdjustedFit = if stratified {
        fit_stratified_unadjusted_hr(&data, cfg.alpha)?
    } else {
        fit_unadjusted_hr(&data, cfg.alpha)?
    };
    let reject_unadj = unadj.z_stat.abs() > z_crit;

    if !cfg.strategy.uses_score() {
        return Ok(ReplicateResult {
            theta_unadj: unadj.theta_hat,
            theta_adj: unadj.theta_hat,
            se_unadj: unadj.se,
            se_adj: unadj.se,
            reject_unadj,
            reject_adj: reject_unadj,
            rho_hat: 0.0,
        });
    }

    let scores = scores.expect("score-based strategy trained a model");
    let x = if cfg.strategy.includes_raw_covariates() {
        CovariateMatrix::from_dataset(&data).with_column(&scores)?
    } else {
        CovariateMatrix::from_columns(std::slice::from_ref(&scores))?
    };

    let (test_stat, fit) = if stratified {
        (
            stratified_logrank_test(&data, &x)?.statistic,
            fit_stratified_hr(&data, &x, cfg.alpha)?,
        )
    } else {
        (adjusted_logrank_test(&data, &x)?.statistic, fit_adjusted_hr(&data, &x, cfg.alpha)?)
    };

    let est = estimate_rho(&data, &scores)?;
    let rho_hat = if stratified { est.rho_strat.unwrap_or(est.rho) } else { est.rho };

    Ok(ReplicateResult {
        theta_unadj: unadj.theta_hat,
        theta_adj: fit.theta_hat,
        se_unadj: unadj.se,
        se_adj: fit.se,
        reject_unadj,
        reject_adj: test_stat.abs() > z_crit,
        rho_hat,
    })
}

/// Train the scenario's prognostic model on its fixed external cohort.
fn scenario_model(cfg: &ScenarioConfig) -> Result<Option<PrognosticModel>> {
    if !cfg.strategy.uses_score() {
        return Ok(None);
    }
    let mut ext_rng = rng::stream(cfg.seed, &[STREAM_EXTERNAL, cfg.case.id()]);
    let ext = generate_external(cfg.case, cfg.n_external, &mut ext_rng);
    let target = if cfg.strategy.survival_target() {
        TargetKind::SurvivalProbability { at_time: default_survival_time(&ext) }
    } else {
        TargetKind::MartingaleResidual
    };
    let params = ForestParams {
        seed: rng::stream_key(
            cfg.seed,
            &[STREAM_FOREST, cfg.case.id(), cfg.strategy.target_id(), cfg.forest.seed],
        ),
        ..cfg.forest
    };
    Ok(Some(train(&ext, target, params)?))
}

fn run_replicates(
    cfg: &ScenarioConfig,
    model: Option<&PrognosticModel>,
) -> Vec<Option<ReplicateResult>> {
    let total = cfg.n_replicates as u64;
    let run_one = |r: u64| replicate(cfg, model, r).ok();

    #[cfg(feature = "parallel")]
    {
        match cfg.workers {
            Some(1) => (0..total).map(run_one).collect(),
            Some(k) => rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .expect("worker pool")
                .install(|| (0..total).into_par_iter().map(run_one).collect()),
            None => (0..total).into_par_iter().map(run_one).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..total).map(run_one).collect()
    }
}

fn mean(values: impl Iterator<Item = f64>, m: f64) -> f64 {
    values.sum::<f64>() / m
}

fn sample_variance(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    let mu = values.iter().sum::<f64>() / m;
    values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (m - 1.0)
}

/// Run a full scenario: fixed external cohort, trained model, replicate
/// loop, ordered aggregation. Deterministic for a fixed (config, seed)
/// regardless of worker count.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let model = scenario_model(cfg)?;
    let outcomes = run_replicates(cfg, model.as_ref());

    let kept: Vec<ReplicateResult> = outcomes.iter().flatten().copied().collect();
    let n_degenerate = outcomes.len() - kept.len();
    if kept.len() < 2 {
        return Err(Error::OutOfRange(format!(
            "only {} usable replicates ({} degenerate)",
            kept.len(),
            n_degenerate
        )));
    }
    let m = kept.len() as f64;

    let theta_adj: Vec<f64> = kept.iter().map(|r| r.theta_adj).collect();
    let theta_unadj: Vec<f64> = kept.iter().map(|r| r.theta_unadj).collect();
    let mean_theta_adj = mean(theta_adj.iter().copied(), m);
    let mean_theta_unadj = mean(theta_unadj.iter().copied(), m);
    let var_adj = sample_variance(&theta_adj);
    let var_unadj = sample_variance(&theta_unadj);

    Ok(ScenarioReport {
        case: cfg.case,
        effect: cfg.effect,
        n: cfg.n_trial,
        n_replicates: cfg.n_replicates,
        n_degenerate,
        seed: cfg.seed,
        strategy: cfg.strategy,
        stratified: cfg.stratified.is_some(),
        bias: (mean_theta_adj - mean_theta_unadj).abs(),
        reject_rate_unadj: kept.iter().filter(|r| r.reject_unadj).count() as f64 / m,
        reject_rate_adj: kept.iter().filter(|r| r.reject_adj).count() as f64 / m,
        mean_se_adj: mean(kept.iter().map(|r| r.se_adj), m),
        mc_sd_adj: var_adj.sqrt(),
        mc_sd_unadj: var_unadj.sqrt(),
        var_ratio: var_adj / var_unadj,
        mean_rho: mean(kept.iter().map(|r| r.rho_hat), m),
        mean_one_minus_rho_sq: mean(kept.iter().map(|r| 1.0 - r.rho_hat * r.rho_hat), m),
        mean_theta_unadj,
        mean_theta_adj,
    })
}
