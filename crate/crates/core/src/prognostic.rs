//! Prognostic scores trained on external control data.
//!
//! The training target is either the martingale residual of the external
//! cohort under its own Nelson-Aalen baseline, or a survival-probability
//! transform of the same baseline. A built-in regression random forest
//! (or any injected [`Predictor`]) maps baseline covariates to the target;
//! the fitted score enters the trial analysis purely as one more baseline
//! covariate, so a useless score costs nothing.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestParams};
use crate::survival::{
    martingale_residuals, nelson_aalen, nelson_aalen_from_records, RiskScope,
};

/// External (historical) control cohort: follow-up, event flags, and
/// baseline covariates. Arm labels are irrelevant here.
#[derive(Debug, Clone)]
pub struct ExternalControls {
    times: Vec<f64>,
    events: Vec<bool>,
    covariates: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    tau_ext: f64,
}

impl ExternalControls {
    /// Validate and build. `tau` defaults to the maximum observed time.
    /// Covariates must be complete; impute first (see
    /// [`crate::data::impute_column_means`]).
    pub fn new(
        times: Vec<f64>,
        events: Vec<bool>,
        covariates: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        tau: Option<f64>,
    ) -> Result<ExternalControls> {
        let n = times.len();
        if n == 0 {
            return Err(Error::EmptyRiskSet);
        }
        if events.len() != n || covariates.len() != n {
            return Err(Error::Invalid("times, events, covariates lengths differ".into()));
        }
        let p = feature_names.len();
        if covariates.iter().any(|r| r.len() != p) {
            return Err(Error::Invalid("covariate rows do not match feature names".into()));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Invalid("times must be finite and nonnegative".into()));
        }
        if covariates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("nonfinite covariate; impute missing values first".into()));
        }
        let max_time = times.iter().cloned().fold(0.0, f64::max);
        let tau_ext = tau.unwrap_or(max_time);
        if !tau_ext.is_finite() || tau_ext <= 0.0 {
            return Err(Error::Invalid(format!("tau must be positive and finite, got {tau_ext}")));
        }
        Ok(ExternalControls { times, events, covariates, feature_names, tau_ext })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn n_events(&self) -> usize {
        self.times
            .iter()
            .zip(&self.events)
            .filter(|(t, ev)| **ev && **t <= self.tau_ext)
            .count()
    }

    pub fn tau_ext(&self) -> f64 {
        self.tau_ext
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn covariate_rows(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    /// Cohorts this small make fragile training sets.
    pub fn is_small(&self) -> bool {
        self.n() < 20
    }
}

/// What the regressor is trained to predict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Event indicator minus the external baseline cumulative hazard at
    /// the follow-up time.
    MartingaleResidual,
    /// exp(-cumulative hazard at min(follow-up, at_time)).
    SurvivalProbability { at_time: f64 },
}

/// Martingale-residual training target from the external cohort.
pub fn external_martingale_target(ext: &ExternalControls) -> Result<Vec<f64>> {
    let hazard = nelson_aalen_from_records(&ext.times, &ext.events, ext.tau_ext)?;
    if hazard.is_zero() {
        return Err(Error::NoEvents);
    }
    let tau = ext.tau_ext;
    Ok(ext
        .times
        .iter()
        .zip(&ext.events)
        .map(|(&t, &ev)| {
            let observed = if ev && t <= tau { 1.0 } else { 0.0 };
            observed - hazard.value(t.min(tau))
        })
        .collect())
}

/// Survival-probability training target: the cumulative-hazard transform
/// exp(-Lambda(min(follow-up, at_time))) under the external baseline.
pub fn external_survival_target(ext: &ExternalControls, at_time: f64) -> Result<Vec<f64>> {
    if !(at_time > 0.0 && at_time <= ext.tau_ext && at_time.is_finite()) {
        return Err(Error::InvalidTime(at_time));
    }
    let hazard = nelson_aalen_from_records(&ext.times, &ext.events, ext.tau_ext)?;
    Ok(ext.times.iter().map(|&t| (-hazard.value(t.min(at_time))).exp()).collect())
}

/// Default horizon for the survival-probability target: the median
/// observed follow-up (the external horizon when that median is zero).
pub fn default_survival_time(ext: &ExternalControls) -> f64 {
    let mut ts = ext.times.clone();
    ts.sort_by(f64::total_cmp);
    let n = ts.len();
    let median = if n % 2 == 1 { ts[n / 2] } else { 0.5 * (ts[n / 2 - 1] + ts[n / 2]) };
    if median > 0.0 {
        median.min(ext.tau_ext)
    } else {
        ext.tau_ext
    }
}

/// Anything that maps a covariate row to a scalar score. The built-in
/// forest implements it; callers may inject their own regressor.
pub trait Predictor {
    fn predict(&self, row: &[f64]) -> f64;
}

impl Predictor for Forest {
    fn predict(&self, row: &[f64]) -> f64 {
        self.predict_row(row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub n: usize,
    pub events: usize,
    pub oob_r2: Option<f64>,
    pub degenerate_target: bool,
}

/// A fitted covariate-to-score regressor with its training metadata and a
/// content hash identifying it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrognosticModel {
    pub target_kind: TargetKind,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub training_summary: TrainingSummary,
    pub model_id: String,
    forest: Forest,
}

impl Predictor for PrognosticModel {
    fn predict(&self, row: &[f64]) -> f64 {
        self.forest.predict_row(row)
    }
}

const MODEL_FORMAT: &str = "covadj-prognostic-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelContainer {
    format: String,
    version: u32,
    target_kind: TargetKind,
    params: ForestParams,
    feature_names: Vec<String>,
    training_summary: TrainingSummary,
    forest: Forest,
    model_id: String,
}

fn content_hash(
    target_kind: &TargetKind,
    params: &ForestParams,
    feature_names: &[String],
    forest: &Forest,
) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        version: u32,
        target_kind: &'a TargetKind,
        params: &'a ForestParams,
        feature_names: &'a [String],
        forest: &'a Forest,
    }
    let bytes = serde_json::to_vec(&Hashed {
        version: MODEL_VERSION,
        target_kind,
        params,
        feature_names,
        forest,
    })
    .expect("model content serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl PrognosticModel {
    pub fn to_json(&self) -> String {
        let container = ModelContainer {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            target_kind: self.target_kind,
            params: self.params,
            feature_names: self.feature_names.clone(),
            training_summary: self.training_summary,
            forest: self.forest.clone(),
            model_id: self.model_id.clone(),
        };
        serde_json::to_string(&container).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<PrognosticModel> {
        let c: ModelContainer =
            serde_json::from_str(s).map_err(|e| Error::InvalidModel(e.to_string()))?;
        if c.format != MODEL_FORMAT {
            return Err(Error::InvalidModel(format!("unknown format '{}'", c.format)));
        }
        if c.version != MODEL_VERSION {
            return Err(Error::InvalidModel(format!("unsupported version {}", c.version)));
        }
        let recomputed = content_hash(&c.target_kind, &c.params, &c.feature_names, &c.forest);
        if recomputed != c.model_id {
            return Err(Error::InvalidModel("model_id does not match content".into()));
        }
        Ok(PrognosticModel {
            target_kind: c.target_kind,
            params: c.params,
            feature_names: c.feature_names,
            training_summary: c.training_summary,
            model_id: c.model_id,
            forest: c.forest,
        })
    }
}

/// Train the built-in forest on the external cohort. A zero-variance
/// target produces a constant model (flagged in the summary), never an
/// error.
pub fn train(
    ext: &ExternalControls,
    target_kind: TargetKind,
    params: ForestParams,
) -> Result<PrognosticModel> {
    let targets = match target_kind {
        TargetKind::MartingaleResidual => external_martingale_target(ext)?,
        TargetKind::SurvivalProbability { at_time } => external_survival_target(ext, at_time)?,
    };
    let (forest, oob) = Forest::fit(&ext.covariates, &targets, params)?;
    let training_summary = TrainingSummary {
        n: ext.n(),
        events: ext.n_events(),
        oob_r2: oob.r2,
        degenerate_target: oob.degenerate_target,
    };
    let model_id = content_hash(&target_kind, &params, &ext.feature_names, &forest);
    Ok(PrognosticModel {
        target_kind,
        params,
        feature_names: ext.feature_names.clone(),
        training_summary,
        model_id,
        forest,
    })
}

/// Score each trial subject, matching covariates to the model's features
/// by name.
pub fn score(model: &PrognosticModel, data: &TrialDataset) -> Result<Vec<f64>> {
    let available = data.feature_names();
    let mut index = Vec::with_capacity(model.feature_names.len());
    let mut missing = Vec::new();
    for name in &model.feature_names {
        match available.iter().position(|a| a == name) {
            Some(k) => index.push(k),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch(missing));
    }
    let mut row = vec![0.0; index.len()];
    Ok(data
        .subjects()
        .iter()
        .map(|s| {
            for (slot, &k) in row.iter_mut().zip(&index) {
                *slot = s.covariates[k];
            }
            model.forest.predict_row(&row)
        })
        .collect())
}

/// Score with an injected regressor, feeding each subject's covariate row
/// as-is. The caller is responsible for column order.
pub fn score_with<P: Predictor + ?Sized>(predictor: &P, data: &TrialDataset) -> Vec<f64> {
    data.subjects().iter().map(|s| predictor.predict(&s.covariates)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TargetProxy {
    TrialMartingale,
}

/// Correlation between a score column and the trial's martingale
/// residuals, the quantity that drives variance reduction.
#[derive(Debug, Clone, Serialize)]
pub struct RhoEstimate {
    pub rho: f64,
    /// Pooled within-stratum correlation, present when the data carry
    /// strata: stratum-centered score and residual, pooled covariance over
    /// pooled standard deviations, residuals under stratum-local baselines.
    pub rho_strat: Option<f64>,
    pub n_used: usize,
    pub target_proxy: TargetProxy,
    /// Set when either column had zero variance; rho is reported as 0.
    pub zero_variance: bool,
}

fn centered_moments(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    (cov, va, vb)
}

/// Pearson correlation of scores with pooled Nelson-Aalen martingale
/// residuals (and the stratified analogue when strata are present).
pub fn estimate_rho(data: &TrialDataset, scores: &[f64]) -> Result<RhoEstimate> {
    if data.n() < 3 {
        return Err(Error::OutOfRange("rho estimation needs at least 3 subjects".into()));
    }
    if scores.len() != data.n() {
        return Err(Error::Invalid("score column length does not match dataset".into()));
    }
    let hazard = nelson_aalen(data, RiskScope::Pooled)?;
    let residuals = martingale_residuals(data, &hazard);

    let (cov, vs, vr) = centered_moments(scores, &residuals);
    let mut zero_variance = false;
    let rho = if vs <= 0.0 || vr <= 0.0 {
        zero_variance = true;
        0.0
    } else {
        cov / (vs.sqrt() * vr.sqrt())
    };

    let rho_strat = if data.has_strata() {
        let mut cov_w = 0.0;
        let mut vs_w = 0.0;
        let mut vr_w = 0.0;
        for z in data.stratum_labels() {
            let idx: Vec<usize> =
                (0..data.n()).filter(|&i| data.subjects()[i].stratum == Some(z)).collect();
            let times: Vec<f64> = idx.iter().map(|&i| data.subjects()[i].time).collect();
            let events: Vec<bool> = idx.iter().map(|&i| data.subjects()[i].event).collect();
            let local = nelson_aalen_from_records(&times, &events, data.tau())?;
            let tau = data.tau();
            let res_z: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    let s = &data.subjects()[i];
                    let observed = if s.event && s.time <= tau { 1.0 } else { 0.0 };
                    observed - local.value(s.time.min(tau))
                })
                .collect();
            let s_z: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let (c, a, b) = centered_moments(&s_z, &res_z);
            cov_w += c;
            vs_w += a;
            vr_w += b;
        }
        if vs_w <= 0.0 || vr_w <= 0.0 {
            zero_variance = true;
            Some(0.0)
        } else {
            Some(cov_w / (vs_w.sqrt() * vr_w.sqrt()))
        }
    } else {
        None
    };

    Ok(RhoEstimate {
        rho,
        rho_strat,
        n_used: data.n(),
        target_proxy: TargetProxy::TrialMartingale,
        zero_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, Subject};

    fn three_subject_external() -> ExternalControls {
        ExternalControls::new(
            vec![1.0, 2.0, 3.0],
            vec![true, false, true],
            vec![vec![0.1], vec![0.2], vec![0.3]],
            vec!["x1".into()],
            Some(3.0),
        )
        .unwrap()
    }

    #[test]
    fn martingale_target_hand_values() {
        let ext = three_subject_external();
        let t = external_martingale_target(&ext).unwrap();
        assert!((t[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!((t[2] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn martingale_target_requires_events() {
        let ext = ExternalControls::new(
            vec![1.0, 2.0],
            vec![false, false],
            vec![vec![0.0], vec![0.0]],
            vec!["x1".into()],
            None,
        )
        .unwrap();
        assert!(matches!(external_martingale_target(&ext), Err(Error::NoEvents)));
    }

    #[test]
    fn martingale_target_all_events_sums_to_zero() {
        let ext = ExternalControls::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true; 4],
            vec![vec![0.0]; 4],
            vec!["x1".into()],
            None,
        )
        .unwrap();
        let t = external_martingale_target(&ext).unwrap();
        assert!(t.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn survival_target_hand_values() {
        let ext = three_subject_external();
        let t = external_survival_target(&ext, 3.0).unwrap();
        let expected = [(-1.0f64 / 3.0).exp(), (-1.0f64 / 3.0).exp(), (-4.0f64 / 3.0).exp()];
        for (a, b) in t.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        // Nonincreasing in the subject's cumulative hazard.
        assert!(t[0] >= t[2]);
    }

    #[test]
    fn survival_target_before_first_event_is_one() {
        let ext = three_subject_external();
        let t = external_survival_target(&ext, 0.5).unwrap();
        assert_eq!(t, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn survival_target_rejects_bad_time() {
        let ext = three_subject_external();
        assert!(matches!(external_survival_target(&ext, 0.0), Err(Error::InvalidTime(_))));
        assert!(matches!(external_survival_target(&ext, 4.0), Err(Error::InvalidTime(_))));
    }

    fn bigger_external(n: usize) -> ExternalControls {
        let mut rng = crate::rng::stream(3, &[1]);
        use rand::Rng;
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let covs: Vec<Vec<f64>> =
            times.iter().map(|t| vec![*t + rng.random_range(-0.5..0.5)]).collect();
        ExternalControls::new(times, events, covs, vec!["x1".into()], None).unwrap()
    }

    #[test]
    fn train_score_roundtrip() {
        let ext = bigger_external(60);
        let params = ForestParams { n_trees: 30, ..Default::default() };
        let model = train(&ext, TargetKind::MartingaleResidual, params).unwrap();
        assert_eq!(model.feature_names, vec!["x1".to_string()]);
        assert_eq!(model.model_id.len(), 64);

        let json = model.to_json();
        let back = PrognosticModel::from_json(&json).unwrap();
        assert_eq!(model, back);

        let mut tampered = json.replace("\"version\":1", "\"version\":1");
        tampered = tampered.replacen("\"model_id\":\"", "\"model_id\":\"0", 1);
        assert!(PrognosticModel::from_json(&tampered).is_err());
    }

    #[test]
    fn training_is_deterministic_in_model_id() {
        let ext = bigger_external(50);
        let params = ForestParams { n_trees: 20, ..Default::default() };
        let a = train(&ext, TargetKind::MartingaleResidual, params).unwrap();
        let b = train(&ext, TargetKind::MartingaleResidual, params).unwrap();
        assert_eq!(a.model_id, b.model_id);
        let c =
            train(&ext, TargetKind::MartingaleResidual, ForestParams { seed: 9, ..params })
                .unwrap();
        assert_ne!(a.model_id, c.model_id);
    }

    fn trial_for_scoring() -> TrialDataset {
        TrialDataset::new(
            vec![
                Subject::new(1.0, true, Arm::Treatment).with_covariates(vec![0.5, 9.0]),
                Subject::new(2.0, false, Arm::Treatment).with_covariates(vec![1.5, 9.0]),
                Subject::new(1.5, true, Arm::Control).with_covariates(vec![2.5, 9.0]),
                Subject::new(3.0, false, Arm::Control).with_covariates(vec![3.5, 9.0]),
            ],
            None,
            None,
        )
        .unwrap()
        .with_feature_names(vec!["x1".into(), "noise".into()])
        .unwrap()
    }

    #[test]
    fn score_matches_by_name_and_detects_missing() {
        let ext = bigger_external(50);
        let params = ForestParams { n_trees: 20, ..Default::default() };
        let model = train(&ext, TargetKind::MartingaleResidual, params).unwrap();
        let data = trial_for_scoring();
        let s1 = score(&model, &data).unwrap();
        let s2 = score(&model, &data).unwrap();
        assert_eq!(s1, s2);

        let renamed = data
            .clone()
            .with_feature_names(vec!["z".into(), "noise".into()])
            .unwrap();
        match score(&model, &renamed) {
            Err(Error::FeatureMismatch(missing)) => assert_eq!(missing, vec!["x1".to_string()]),
            other => panic!("expected FeatureMismatch, got {other:?}"),
        }
    }

    #[test]
    fn rho_is_one_when_scores_equal_residuals() {
        let data = trial_for_scoring();
        let hazard = nelson_aalen(&data, RiskScope::Pooled).unwrap();
        let res = martingale_residuals(&data, &hazard);
        let est = estimate_rho(&data, &res).unwrap();
        assert!((est.rho - 1.0).abs() < 1e-12);
        assert!(!est.zero_variance);
        assert!(est.rho_strat.is_none());
    }

    #[test]
    fn rho_affine_invariant_and_zero_variance_flagged() {
        let data = trial_for_scoring();
        let hazard = nelson_aalen(&data, RiskScope::Pooled).unwrap();
        let res = martingale_residuals(&data, &hazard);
        let shifted: Vec<f64> = res.iter().map(|v| 3.5 * v - 2.0).collect();
        let a = estimate_rho(&data, &res).unwrap();
        let b = estimate_rho(&data, &shifted).unwrap();
        assert!((a.rho - b.rho).abs() < 1e-12);

        let flat = estimate_rho(&data, &vec![1.0; data.n()]).unwrap();
        assert_eq!(flat.rho, 0.0);
        assert!(flat.zero_variance);
    }
}
