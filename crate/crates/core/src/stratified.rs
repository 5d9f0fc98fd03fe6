//! Stratified-randomization variants: stratum-local score and
//! pseudo-outcomes, pooled within-stratum regression coefficients, and the
//! stratified covariate-adjusted test and log-HR estimator.
//!
//! With a single stratum every quantity here collapses to its unstratified
//! counterpart through the same arithmetic, so results agree bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::adjust::{
    assemble_test, build_fit, pseudo_values_from_table, signed_mean, validate_alpha, AdjustedFit,
    AdjustedTest, Method, PseudoOutcomes,
};
use crate::data::{Arm, CovariateMatrix, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::{quad_form, sym_pinv_solve};
use crate::solver::root_nonincreasing;
use crate::survival::{score_from_table, EventTable, ScoreEvaluation};
use crate::survival::{ROOT_TOL, THETA_BRACKET};

/// Per-stratum description: membership, share, and the observed
/// treatment imbalance sum(I_i - pi), a randomization diagnostic.
#[derive(Debug, Clone, Serialize)]
pub struct StratumSummary {
    pub label: u32,
    pub n: usize,
    pub n_treatment: usize,
    pub n_control: usize,
    pub events: usize,
    pub share: f64,
    pub imbalance: f64,
}

/// Summaries in ascending label order. Unstratified data is reported as a
/// single stratum with label 0.
pub fn stratum_summaries(data: &TrialDataset) -> Vec<StratumSummary> {
    let pi = data.pi();
    let labels = if data.has_strata() { data.stratum_labels() } else { vec![0] };
    labels
        .iter()
        .map(|&z| {
            let members: Vec<&crate::data::Subject> = data
                .subjects()
                .iter()
                .filter(|s| s.stratum.unwrap_or(0) == z)
                .collect();
            let n1 = members.iter().filter(|s| s.arm.is_treatment()).count();
            let events =
                members.iter().filter(|s| s.event && s.time <= data.tau()).count();
            StratumSummary {
                label: z,
                n: members.len(),
                n_treatment: n1,
                n_control: members.len() - n1,
                events,
                share: members.len() as f64 / data.n() as f64,
                imbalance: n1 as f64 - pi * members.len() as f64,
            }
        })
        .collect()
}

/// Strata smaller than `min` subjects, for caller-side warnings.
pub fn small_strata(data: &TrialDataset, min: usize) -> Vec<u32> {
    stratum_summaries(data).into_iter().filter(|s| s.n < min).map(|s| s.label).collect()
}

struct StratumData {
    indices: Vec<usize>,
    records: Vec<(f64, bool, bool)>,
    table: EventTable,
}

/// Split by stratum label. `require_both_arms` rejects strata that
/// contribute events with only one arm present; estimation of the log-HR
/// needs that, while pseudo-outcome evaluation stays well defined (a
/// comparator-free stratum contributes zeros).
fn split_strata(data: &TrialDataset, require_both_arms: bool) -> Result<Vec<StratumData>> {
    let labels = if data.has_strata() { data.stratum_labels() } else { vec![0] };
    let n_total = data.n() as f64;
    let mut out = Vec::with_capacity(labels.len());
    for z in labels {
        let indices: Vec<usize> = (0..data.n())
            .filter(|&i| data.subjects()[i].stratum.unwrap_or(0) == z)
            .collect();
        let records: Vec<(f64, bool, bool)> = indices
            .iter()
            .map(|&i| {
                let s = &data.subjects()[i];
                (s.time, s.event, s.arm.is_treatment())
            })
            .collect();
        let has_events = records.iter().any(|r| r.1 && r.0 <= data.tau());
        let arms1 = records.iter().filter(|r| r.2).count();
        if require_both_arms && has_events && (arms1 == 0 || arms1 == records.len()) {
            return Err(Error::StratumDegenerate(z));
        }
        let table = EventTable::from_records(&records, data.tau(), n_total);
        out.push(StratumData { indices, records, table });
    }
    Ok(out)
}

fn stratified_evaluation(strata: &[StratumData], theta: f64) -> ScoreEvaluation {
    let mut value = 0.0;
    let mut info = 0.0;
    for s in strata {
        let e = score_from_table(&s.table, theta);
        value += e.value;
        info += e.neg_derivative;
    }
    ScoreEvaluation { value, neg_derivative: info }
}

fn any_identified(strata: &[StratumData]) -> bool {
    strata.iter().any(|s| s.table.identified())
}

fn solve_stratified(strata: &[StratumData], offset: f64) -> Result<f64> {
    root_nonincreasing(
        |theta| stratified_evaluation(strata, theta).value - offset,
        -THETA_BRACKET,
        THETA_BRACKET,
        ROOT_TOL,
    )
}

/// Stratified treatment-only score: the sum of stratum-local scores, with
/// the stratified observed information as the negated derivative.
pub fn stratified_score(data: &TrialDataset, theta: f64) -> Result<ScoreEvaluation> {
    let strata = split_strata(data, true)?;
    if !any_identified(&strata) {
        return Err(Error::DegenerateInformation);
    }
    Ok(stratified_evaluation(&strata, theta))
}

/// Stratum-local pseudo-outcomes at log-HR `theta`. Each subject's
/// compensator runs over their own stratum's event times only.
pub fn stratified_pseudo_outcomes(data: &TrialDataset, theta: f64) -> Result<PseudoOutcomes> {
    let strata = split_strata(data, false)?;
    let mut values = vec![0.0; data.n()];
    for s in &strata {
        let vs = pseudo_values_from_table(&s.table, &s.records, theta);
        for (&i, v) in s.indices.iter().zip(vs) {
            values[i] = v;
        }
    }

    let records: Vec<(f64, bool, bool)> =
        data.subjects().iter().map(|s| (s.time, s.event, s.arm.is_treatment())).collect();
    let identity_gap = (signed_mean(&values, &records, data.n() as f64)
        - stratified_evaluation(&strata, theta).value)
        .abs();
    debug_assert!(identity_gap < 1e-10, "stratified pseudo-outcome identity gap {identity_gap}");

    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (v, s) in values.iter().zip(data.subjects()) {
        sums[s.arm.index()] += v;
        counts[s.arm.index()] += 1;
    }
    let arm_means = [sums[0] / counts[0].max(1) as f64, sums[1] / counts[1].max(1) as f64];
    Ok(PseudoOutcomes { theta, values, arm_means })
}

/// Pooled within-stratum regression coefficients and the pooled
/// within-stratum covariate covariance.
#[derive(Debug, Clone)]
pub struct StratifiedCoefficients {
    pub gamma1: Vec<f64>,
    pub gamma0: Vec<f64>,
    /// Pooled within-stratum covariance of the covariates, stratum means
    /// over both arms, divisor n - (number of strata).
    pub pooled_within_cov: DMatrix<f64>,
    pub theta_at: f64,
    pub pi_hat: f64,
    pub dropped_directions: usize,
}

impl StratifiedCoefficients {
    pub(crate) fn variance_reduction(&self) -> f64 {
        if self.gamma1.is_empty() {
            return 0.0;
        }
        let sum = DVector::from_iterator(
            self.gamma1.len(),
            self.gamma1.iter().zip(&self.gamma0).map(|(a, b)| a + b),
        );
        self.pi_hat * (1.0 - self.pi_hat) * quad_form(&sum, &self.pooled_within_cov)
    }
}

/// Fit the within-stratum arm-specific regressions of pseudo-outcomes on
/// covariates, pooling sums across strata. Centering in the regression is
/// at arm-within-stratum means so a single stratum reproduces the
/// unstratified arm coefficients exactly.
pub fn fit_stratified_betas(
    data: &TrialDataset,
    po: &PseudoOutcomes,
    x: &CovariateMatrix,
) -> Result<StratifiedCoefficients> {
    let n = data.n();
    if x.n() != n || po.values.len() != n {
        return Err(Error::Invalid("covariate/pseudo-outcome rows do not match dataset".into()));
    }
    let p = x.p();
    let pi_hat = data.treated_fraction();
    if p == 0 {
        return Ok(StratifiedCoefficients {
            gamma1: Vec::new(),
            gamma0: Vec::new(),
            pooled_within_cov: DMatrix::zeros(0, 0),
            theta_at: po.theta,
            pi_hat,
            dropped_directions: 0,
        });
    }
    let strata = split_strata(data, false)?;

    let mut dropped = 0usize;
    let mut gammas: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for arm in [Arm::Control, Arm::Treatment] {
        let total: usize = strata
            .iter()
            .map(|s| s.indices.iter().filter(|&&i| data.subjects()[i].arm == arm).count())
            .sum();
        if total < 2 {
            return Err(Error::SingularDesign { arm: arm.index() as u8, n: total, p });
        }
        let mut gram = DMatrix::zeros(p, p);
        let mut cross = DVector::zeros(p);
        for s in &strata {
            let idx: Vec<usize> = s
                .indices
                .iter()
                .copied()
                .filter(|&i| data.subjects()[i].arm == arm)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; p];
            for &i in &idx {
                for (k, v) in x.row(i).iter().enumerate() {
                    mean[k] += v;
                }
            }
            for m in &mut mean {
                *m /= idx.len() as f64;
            }
            for &i in &idx {
                let r = x.row(i);
                let o = po.values[i];
                for a in 0..p {
                    let da = r[a] - mean[a];
                    cross[a] += da * o;
                    for b in a..p {
                        gram[(a, b)] += da * (r[b] - mean[b]);
                    }
                }
            }
        }
        for a in 0..p {
            for b in (a + 1)..p {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let (gamma, d) = sym_pinv_solve(&gram, &cross);
        dropped += d;
        gammas[arm.index()] = gamma.iter().copied().collect();
    }

    let pooled_within_cov = pooled_within_covariance(data, x, &strata);
    Ok(StratifiedCoefficients {
        gamma1: gammas[Arm::Treatment.index()].clone(),
        gamma0: gammas[Arm::Control.index()].clone(),
        pooled_within_cov,
        theta_at: po.theta,
        pi_hat,
        dropped_directions: dropped,
    })
}

fn stratum_means(x: &CovariateMatrix, strata: &[StratumData]) -> Vec<Vec<f64>> {
    let p = x.p();
    strata
        .iter()
        .map(|s| {
            let mut mean = vec![0.0; p];
            for &i in &s.indices {
                for (k, v) in x.row(i).iter().enumerate() {
                    mean[k] += v;
                }
            }
            for m in &mut mean {
                *m /= s.indices.len() as f64;
            }
            mean
        })
        .collect()
}

fn pooled_within_covariance(
    data: &TrialDataset,
    x: &CovariateMatrix,
    strata: &[StratumData],
) -> DMatrix<f64> {
    let p = x.p();
    let means = stratum_means(x, strata);
    let mut cov = DMatrix::zeros(p, p);
    for (s, mean) in strata.iter().zip(&means) {
        for &i in &s.indices {
            let r = x.row(i);
            for a in 0..p {
                let da = r[a] - mean[a];
                for b in a..p {
                    cov[(a, b)] += da * (r[b] - mean[b]);
                }
            }
        }
    }
    let denom = (data.n() as f64 - strata.len() as f64).max(1.0);
    for a in 0..p {
        for b in a..p {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Mean augmentation with stratum-centered covariates (stratum means over
/// both arms).
fn stratified_augmentation(
    data: &TrialDataset,
    x: &CovariateMatrix,
    strata: &[StratumData],
    gamma1: &[f64],
    gamma0: &[f64],
) -> f64 {
    if x.p() == 0 {
        return 0.0;
    }
    let means = stratum_means(x, strata);
    let mut stratum_of = vec![0usize; data.n()];
    for (zi, s) in strata.iter().enumerate() {
        for &i in &s.indices {
            stratum_of[i] = zi;
        }
    }
    let mut acc = 0.0;
    for (i, s) in data.subjects().iter().enumerate() {
        let r = x.row(i);
        let mean = &means[stratum_of[i]];
        let gamma = if s.arm.is_treatment() { gamma1 } else { gamma0 };
        let proj: f64 = r.iter().zip(mean).zip(gamma).map(|((v, m), g)| (v - m) * g).sum();
        acc += if s.arm.is_treatment() { proj } else { -proj };
    }
    acc / data.n() as f64
}

/// Stratified covariate-adjusted log-rank test at log-HR zero.
pub fn stratified_logrank_test(data: &TrialDataset, x: &CovariateMatrix) -> Result<AdjustedTest> {
    let strata = split_strata(data, true)?;
    if !any_identified(&strata) {
        return Err(Error::DegenerateInformation);
    }
    let at_zero = stratified_evaluation(&strata, 0.0);
    let (aug, reduction) = if x.p() == 0 {
        (0.0, 0.0)
    } else {
        let po = stratified_pseudo_outcomes(data, 0.0)?;
        let coef = fit_stratified_betas(data, &po, x)?;
        (
            stratified_augmentation(data, x, &strata, &coef.gamma1, &coef.gamma0),
            coef.variance_reduction(),
        )
    };
    Ok(assemble_test(at_zero, aug, reduction, data.n()))
}

fn fit_stratified_impl(
    data: &TrialDataset,
    x: &CovariateMatrix,
    alpha: f64,
    adjusted: bool,
) -> Result<AdjustedFit> {
    validate_alpha(alpha)?;
    let strata = split_strata(data, true)?;
    if !any_identified(&strata) {
        return Err(Error::DegenerateInformation);
    }
    let theta_sl = solve_stratified(&strata, 0.0)?;
    let (aug, reduction, dropped) = if !adjusted || x.p() == 0 {
        (0.0, 0.0, 0)
    } else {
        let po = stratified_pseudo_outcomes(data, theta_sl)?;
        let coef = fit_stratified_betas(data, &po, x)?;
        (
            stratified_augmentation(data, x, &strata, &coef.gamma1, &coef.gamma0),
            coef.variance_reduction(),
            coef.dropped_directions,
        )
    };
    let theta_hat = if aug == 0.0 { theta_sl } else { solve_stratified(&strata, aug)? };
    let info = stratified_evaluation(&strata, theta_hat).neg_derivative;
    let method = if adjusted {
        Method::StratifiedCovariateAdjusted
    } else {
        Method::StratifiedUnadjusted
    };
    Ok(build_fit(
        method,
        theta_hat,
        theta_sl,
        info,
        reduction,
        alpha,
        data.n(),
        data.n_events(),
        dropped,
    ))
}

/// Stratified covariate-adjusted estimate of the unconditional log-HR.
/// The augmentation constant is evaluated at the stratified unadjusted
/// MPLE, mirroring the unstratified estimator.
pub fn fit_stratified_hr(
    data: &TrialDataset,
    x: &CovariateMatrix,
    alpha: f64,
) -> Result<AdjustedFit> {
    fit_stratified_impl(data, x, alpha, true)
}

/// Stratified unadjusted log-HR fit.
pub fn fit_stratified_unadjusted_hr(data: &TrialDataset, alpha: f64) -> Result<AdjustedFit> {
    fit_stratified_impl(data, &CovariateMatrix::empty(data.n()), alpha, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjust::{fit_adjusted_hr, pseudo_outcomes};
    use crate::data::Subject;
    use crate::survival::cox_score;

    fn subj(time: f64, event: bool, arm: Arm, x: f64, z: u32) -> Subject {
        Subject::new(time, event, arm).with_covariates(vec![x]).with_stratum(z)
    }

    fn two_strata_dataset() -> TrialDataset {
        TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment, 0.4, 0),
                subj(3.0, false, Arm::Treatment, -0.2, 0),
                subj(2.0, true, Arm::Control, 1.0, 0),
                subj(4.0, true, Arm::Control, 0.3, 0),
                subj(1.5, true, Arm::Treatment, -0.8, 1),
                subj(2.5, true, Arm::Treatment, 0.9, 1),
                subj(3.5, false, Arm::Control, 0.2, 1),
                subj(5.0, true, Arm::Control, -0.5, 1),
            ],
            None,
            None,
        )
        .unwrap()
    }

    fn single_stratum_copy(data: &TrialDataset) -> TrialDataset {
        let subjects: Vec<Subject> = data
            .subjects()
            .iter()
            .map(|s| Subject { stratum: None, ..s.clone() })
            .collect();
        TrialDataset::new(subjects, Some(data.tau()), Some(data.pi())).unwrap()
    }

    #[test]
    fn one_stratum_score_equals_cox_score() {
        let data = single_stratum_copy(&two_strata_dataset());
        for theta in [-0.7, 0.0, 1.3] {
            let a = stratified_score(&data, theta).unwrap();
            let b = cox_score(&data, theta).unwrap();
            assert_eq!(a.value, b.value);
            assert_eq!(a.neg_derivative, b.neg_derivative);
        }
    }

    #[test]
    fn one_stratum_pseudo_outcomes_collapse() {
        let data = single_stratum_copy(&two_strata_dataset());
        for theta in [-0.5, 0.0, 0.5] {
            let a = stratified_pseudo_outcomes(&data, theta).unwrap();
            let b = pseudo_outcomes(&data, theta).unwrap();
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn one_stratum_fit_collapses_to_unstratified() {
        let data = single_stratum_copy(&two_strata_dataset());
        let x = CovariateMatrix::from_dataset(&data);
        let strat = fit_stratified_hr(&data, &x, 0.05).unwrap();
        let plain = fit_adjusted_hr(&data, &x, 0.05).unwrap();
        assert!((strat.theta_hat - plain.theta_hat).abs() < 1e-12);
        assert!((strat.se - plain.se).abs() < 1e-12);
        assert!((strat.sigma2_cl - plain.sigma2_cl).abs() < 1e-15);
    }

    #[test]
    fn identity_holds_on_two_strata() {
        let data = two_strata_dataset();
        for theta in [-0.5, 0.0, 0.5] {
            let po = stratified_pseudo_outcomes(&data, theta).unwrap();
            let records: Vec<(f64, bool, bool)> = data
                .subjects()
                .iter()
                .map(|s| (s.time, s.event, s.arm.is_treatment()))
                .collect();
            let lhs = signed_mean(&po.values, &records, data.n() as f64);
            let rhs = stratified_score(&data, theta).unwrap().value;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn two_symmetric_strata_score_zero() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment, 0.0, 0),
                subj(1.0, true, Arm::Control, 0.0, 0),
                subj(2.0, false, Arm::Treatment, 0.0, 0),
                subj(2.0, false, Arm::Control, 0.0, 0),
                subj(1.5, true, Arm::Treatment, 0.0, 1),
                subj(1.5, true, Arm::Control, 0.0, 1),
            ],
            None,
            None,
        )
        .unwrap();
        let s = stratified_score(&data, 0.0).unwrap();
        assert!(s.value.abs() < 1e-15);
    }

    #[test]
    fn stratum_with_events_single_arm_errors() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment, 0.0, 0),
                subj(2.0, true, Arm::Control, 0.0, 0),
                subj(1.5, true, Arm::Treatment, 0.0, 1),
                subj(2.5, false, Arm::Treatment, 0.0, 1),
            ],
            None,
            None,
        )
        .unwrap();
        assert!(matches!(stratified_score(&data, 0.0), Err(Error::StratumDegenerate(1))));
    }

    #[test]
    fn constant_within_stratum_covariate_collapses_to_unadjusted() {
        // Covariate is a function of the stratum label only.
        let subjects: Vec<Subject> = two_strata_dataset()
            .subjects()
            .iter()
            .map(|s| Subject {
                covariates: vec![s.stratum.unwrap() as f64 * 10.0],
                ..s.clone()
            })
            .collect();
        let data = TrialDataset::new(subjects, None, None).unwrap();
        let x = CovariateMatrix::from_dataset(&data);
        let adj = fit_stratified_hr(&data, &x, 0.05).unwrap();
        let un = fit_stratified_unadjusted_hr(&data, 0.05).unwrap();
        assert_eq!(adj.theta_hat, un.theta_hat);
        assert_eq!(adj.se, un.se);
    }

    #[test]
    fn summaries_report_imbalance() {
        let data = two_strata_dataset();
        let sums = stratum_summaries(&data);
        assert_eq!(sums.len(), 2);
        assert_eq!(sums[0].n, 4);
        assert!((sums[0].share - 0.5).abs() < 1e-15);
        assert_eq!(sums[0].n_treatment, 2);
        assert!((sums[0].imbalance - 0.0).abs() < 1e-12);
        assert_eq!(small_strata(&data, 10), vec![0, 1]);
    }
}
