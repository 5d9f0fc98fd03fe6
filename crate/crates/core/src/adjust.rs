//! Covariate adjustment of the log-rank score and the log-HR estimator.
//!
//! The score is linearized into per-subject pseudo-outcomes, arm-specific
//! least squares projects them onto baseline covariates, and the projection
//! is subtracted from the score. The augmentation term is a constant in the
//! log-HR argument (coefficients are frozen at the unadjusted MPLE), so the
//! adjusted estimator reuses the same monotone root solve as the
//! unadjusted one. Randomization alone guarantees the adjusted test and
//! estimator are valid no matter how the covariates relate to outcome.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Arm, CovariateMatrix, TrialDataset};
use crate::error::{Error, Result};
use crate::linalg::{quad_form, sample_covariance, sym_pinv_solve};
use crate::survival::ScoreEvaluation;
use crate::survival::{score_from_table, solve_score_equation, EventTable};

/// Floor applied to the adjusted variance when finite-sample noise drives
/// the quadratic-form reduction past the unadjusted variance.
pub(crate) const VARIANCE_FLOOR: f64 = 1e-12;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub(crate) fn z_quantile(alpha_two_sided: f64) -> f64 {
    std_normal().inverse_cdf(1.0 - alpha_two_sided / 2.0)
}

pub(crate) fn two_sided_p(z: f64) -> f64 {
    2.0 * std_normal().cdf(-z.abs())
}

pub(crate) fn lower_tail_p(z: f64) -> f64 {
    std_normal().cdf(z)
}

/// Per-subject linearization of the Cox score at a fixed log-HR.
///
/// `values[i]` is the pseudo-outcome of subject i for their own arm; the
/// opposite-arm pseudo-outcome is identically zero. `arm_means` is indexed
/// by [`Arm::index`].
#[derive(Debug, Clone)]
pub struct PseudoOutcomes {
    pub theta: f64,
    pub values: Vec<f64>,
    pub arm_means: [f64; 2],
}

/// Own-arm pseudo-outcome per record, evaluated against an event table
/// built from the same records (or a superset sharing the horizon).
pub(crate) fn pseudo_values_from_table(
    table: &EventTable,
    records: &[(f64, bool, bool)],
    theta: f64,
) -> Vec<f64> {
    let e = theta.exp();
    let m = table.times.len();
    let mut own1 = vec![0.0; m];
    let mut own0 = vec![0.0; m];
    let mut comp1 = vec![0.0; m];
    let mut comp0 = vec![0.0; m];
    let (mut acc1, mut acc0) = (0.0, 0.0);
    for k in 0..m {
        let d = table.d1[k] + table.d0[k];
        let denom = e * table.r1[k] + table.r0[k];
        let w1 = table.r0[k] / denom;
        let w0 = e * table.r1[k] / denom;
        own1[k] = w1;
        own0[k] = w0;
        acc1 += w1 * e * d / denom;
        acc0 += w0 * d / denom;
        comp1[k] = acc1;
        comp0[k] = acc0;
    }
    records
        .iter()
        .map(|&(t, ev, treated)| {
            let kmax = table.times.partition_point(|&tk| tk <= t);
            let own = if ev && kmax > 0 && table.times[kmax - 1] == t {
                if treated {
                    own1[kmax - 1]
                } else {
                    own0[kmax - 1]
                }
            } else {
                0.0
            };
            let comp = if kmax > 0 {
                if treated {
                    comp1[kmax - 1]
                } else {
                    comp0[kmax - 1]
                }
            } else {
                0.0
            };
            own - comp
        })
        .collect()
}

/// Signed average of own-arm pseudo-outcomes; algebraically identical to
/// the score value. Kept as a runtime consistency check.
pub(crate) fn signed_mean(values: &[f64], records: &[(f64, bool, bool)], n: f64) -> f64 {
    values
        .iter()
        .zip(records)
        .map(|(v, r)| if r.2 { *v } else { -*v })
        .sum::<f64>()
        / n
}

fn dataset_records(data: &TrialDataset) -> Vec<(f64, bool, bool)> {
    data.subjects().iter().map(|s| (s.time, s.event, s.arm.is_treatment())).collect()
}

/// Pseudo-outcomes at log-HR `theta`, one per subject.
pub fn pseudo_outcomes(data: &TrialDataset, theta: f64) -> Result<PseudoOutcomes> {
    let records = dataset_records(data);
    let table = EventTable::build(data);
    let values = pseudo_values_from_table(&table, &records, theta);

    let score = score_from_table(&table, theta).value;
    let identity_gap = (signed_mean(&values, &records, table.n) - score).abs();
    debug_assert!(identity_gap < 1e-10, "pseudo-outcome identity violated: gap {identity_gap}");

    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (v, s) in values.iter().zip(data.subjects()) {
        sums[s.arm.index()] += v;
        counts[s.arm.index()] += 1;
    }
    let arm_means = [sums[0] / counts[0].max(1) as f64, sums[1] / counts[1].max(1) as f64];
    Ok(PseudoOutcomes { theta, values, arm_means })
}

/// Arm-specific least-squares coefficients of pseudo-outcomes on centered
/// covariates, plus the pooled covariate covariance used by the variance
/// estimator.
#[derive(Debug, Clone)]
pub struct AdjustmentCoefficients {
    pub beta1: Vec<f64>,
    pub beta0: Vec<f64>,
    /// Log-HR at which the pseudo-outcomes were evaluated.
    pub theta_at: f64,
    /// Pooled sample covariance of the covariates (divisor n - 1).
    pub sigma_x: DMatrix<f64>,
    /// Observed treated fraction n1/n.
    pub pi_hat: f64,
    /// Covariate directions dropped as degenerate (constant or collinear).
    pub dropped_directions: usize,
}

impl AdjustmentCoefficients {
    pub(crate) fn beta_sum(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.beta1.len(),
            self.beta1.iter().zip(&self.beta0).map(|(a, b)| a + b),
        )
    }

    /// pi_hat (1 - pi_hat) (b1 + b0)' Sigma_X (b1 + b0), the variance
    /// reduction attributed to the covariates.
    pub(crate) fn variance_reduction(&self) -> f64 {
        if self.beta1.is_empty() {
            return 0.0;
        }
        self.pi_hat * (1.0 - self.pi_hat) * quad_form(&self.beta_sum(), &self.sigma_x)
    }
}

/// Fit the arm-specific regressions of pseudo-outcomes on covariates.
/// Degenerate covariate directions are dropped rather than failing, so an
/// uninformative (even constant) covariate yields zero coefficients.
pub fn fit_betas(
    data: &TrialDataset,
    po: &PseudoOutcomes,
    x: &CovariateMatrix,
) -> Result<AdjustmentCoefficients> {
    let n = data.n();
    if x.n() != n || po.values.len() != n {
        return Err(Error::Invalid("covariate/pseudo-outcome rows do not match dataset".into()));
    }
    let p = x.p();
    let pi_hat = data.treated_fraction();
    if p == 0 {
        return Ok(AdjustmentCoefficients {
            beta1: Vec::new(),
            beta0: Vec::new(),
            theta_at: po.theta,
            sigma_x: DMatrix::zeros(0, 0),
            pi_hat,
            dropped_directions: 0,
        });
    }

    let mut dropped = 0usize;
    let mut betas: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for arm in [Arm::Control, Arm::Treatment] {
        let idx: Vec<usize> = (0..n).filter(|&i| data.subjects()[i].arm == arm).collect();
        if idx.len() < 2 {
            return Err(Error::SingularDesign { arm: arm.index() as u8, n: idx.len(), p });
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
        let mut gram = DMatrix::zeros(p, p);
        let mut cross = DVector::zeros(p);
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
        for a in 0..p {
            for b in (a + 1)..p {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let (beta, d) = sym_pinv_solve(&gram, &cross);
        dropped += d;
        betas[arm.index()] = beta.iter().copied().collect();
    }

    let sigma_x = sample_covariance(|i| x.row(i), n, p);
    Ok(AdjustmentCoefficients {
        beta1: betas[Arm::Treatment.index()].clone(),
        beta0: betas[Arm::Control.index()].clone(),
        theta_at: po.theta,
        sigma_x,
        pi_hat,
        dropped_directions: dropped,
    })
}

/// Mean augmentation term: average over subjects of the signed projection
/// of centered covariates on the arm coefficients. Centering uses the
/// pooled covariate mean. The adjusted score at any log-HR is the
/// unadjusted score minus this constant.
pub fn augmentation_constant(
    data: &TrialDataset,
    x: &CovariateMatrix,
    coef: &AdjustmentCoefficients,
) -> f64 {
    augmentation(data, x, &coef.beta1, &coef.beta0)
}

pub(crate) fn augmentation(
    data: &TrialDataset,
    x: &CovariateMatrix,
    beta1: &[f64],
    beta0: &[f64],
) -> f64 {
    let n = data.n();
    let p = x.p();
    if p == 0 {
        return 0.0;
    }
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for (k, v) in x.row(i).iter().enumerate() {
            mean[k] += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut acc = 0.0;
    for (i, s) in data.subjects().iter().enumerate() {
        let r = x.row(i);
        let beta = if s.arm.is_treatment() { beta1 } else { beta0 };
        let proj: f64 = r.iter().zip(&mean).zip(beta).map(|((v, m), b)| (v - m) * b).sum();
        acc += if s.arm.is_treatment() { proj } else { -proj };
    }
    acc / n as f64
}

/// Which analysis produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Unadjusted,
    CovariateAdjusted,
    StratifiedUnadjusted,
    StratifiedCovariateAdjusted,
}

/// Covariate-adjusted log-rank test at log-HR zero.
#[derive(Debug, Clone, Serialize)]
pub struct AdjustedTest {
    /// Adjusted score at zero.
    pub u_cl: f64,
    /// Adjusted standard deviation of the score.
    pub sigma_cl: f64,
    /// sqrt(n) * u_cl / sigma_cl, standard normal under the null.
    pub statistic: f64,
    /// Two-sided normal p-value.
    pub p_value: f64,
    /// Lower-tail p-value (treatment benefit corresponds to a negative
    /// statistic).
    pub p_value_one_sided: f64,
    /// Unadjusted score variance at zero.
    pub sigma2_l: f64,
    /// True when the adjusted variance hit the small-sample floor.
    pub variance_clamped: bool,
    pub n: usize,
}

/// Assemble a score test from the score at zero, the augmentation
/// constant, and the quadratic-form variance reduction.
pub(crate) fn assemble_test(
    at_zero: ScoreEvaluation,
    aug: f64,
    reduction: f64,
    n: usize,
) -> AdjustedTest {
    let u_cl = at_zero.value - aug;
    let raw = at_zero.neg_derivative - reduction;
    let variance_clamped = raw <= VARIANCE_FLOOR;
    let sigma2_cl = raw.max(VARIANCE_FLOOR);
    let sigma_cl = sigma2_cl.sqrt();
    let statistic = (n as f64).sqrt() * u_cl / sigma_cl;
    AdjustedTest {
        u_cl,
        sigma_cl,
        statistic,
        p_value: two_sided_p(statistic),
        p_value_one_sided: lower_tail_p(statistic),
        sigma2_l: at_zero.neg_derivative,
        variance_clamped,
        n,
    }
}

fn logrank_test_impl(data: &TrialDataset, x: &CovariateMatrix) -> Result<AdjustedTest> {
    let table = EventTable::build(data);
    if !table.identified() {
        return Err(Error::DegenerateInformation);
    }
    let at_zero = score_from_table(&table, 0.0);
    let (aug, reduction) = if x.p() == 0 {
        (0.0, 0.0)
    } else {
        let po = pseudo_outcomes(data, 0.0)?;
        let coef = fit_betas(data, &po, x)?;
        (augmentation(data, x, &coef.beta1, &coef.beta0), coef.variance_reduction())
    };
    Ok(assemble_test(at_zero, aug, reduction, data.n()))
}

/// Covariate-adjusted log-rank test. With zero covariate columns this is
/// exactly the classical log-rank test.
pub fn adjusted_logrank_test(data: &TrialDataset, x: &CovariateMatrix) -> Result<AdjustedTest> {
    logrank_test_impl(data, x)
}

/// Classical (unadjusted) log-rank test.
pub fn unadjusted_logrank_test(data: &TrialDataset) -> Result<AdjustedTest> {
    logrank_test_impl(data, &CovariateMatrix::empty(data.n()))
}

/// A fitted log-HR with variance, confidence interval, and diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct AdjustedFit {
    pub method: Method,
    /// Estimated log-HR.
    pub theta_hat: f64,
    /// exp(theta_hat).
    pub hr: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hr_ci_low: f64,
    pub hr_ci_high: f64,
    pub z_stat: f64,
    pub p_value_two_sided: f64,
    /// Observed information (unadjusted score variance) at theta_hat.
    pub sigma2_l: f64,
    /// Adjusted score variance at theta_hat.
    pub sigma2_cl: f64,
    /// sigma2_cl / sigma2_l, at most 1.
    pub variance_reduction_ratio: f64,
    pub alpha: f64,
    pub n: usize,
    pub n_events: usize,
    /// The unadjusted MPLE, for side-by-side reporting.
    pub theta_unadjusted: f64,
    pub variance_clamped: bool,
    pub dropped_covariate_directions: usize,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn build_fit(
    method: Method,
    theta_hat: f64,
    theta_unadjusted: f64,
    sigma2_l: f64,
    reduction: f64,
    alpha: f64,
    n: usize,
    n_events: usize,
    dropped: usize,
) -> AdjustedFit {
    let raw = sigma2_l - reduction;
    let variance_clamped = raw <= VARIANCE_FLOOR;
    let sigma2_cl = raw.max(VARIANCE_FLOOR);
    let se = (sigma2_cl / (n as f64 * sigma2_l * sigma2_l)).sqrt();
    let z = z_quantile(alpha);
    let ci_low = theta_hat - z * se;
    let ci_high = theta_hat + z * se;
    let z_stat = theta_hat / se;
    AdjustedFit {
        method,
        theta_hat,
        hr: theta_hat.exp(),
        se,
        ci_low,
        ci_high,
        hr_ci_low: ci_low.exp(),
        hr_ci_high: ci_high.exp(),
        z_stat,
        p_value_two_sided: two_sided_p(z_stat),
        sigma2_l,
        sigma2_cl,
        variance_reduction_ratio: sigma2_cl / sigma2_l,
        alpha,
        n,
        n_events,
        theta_unadjusted,
        variance_clamped,
        dropped_covariate_directions: dropped,
    }
}

/// Covariate-adjusted estimate of the unconditional log-HR.
///
/// The augmentation constant is evaluated with coefficients fitted at the
/// unadjusted MPLE, so the adjusted score differs from the unadjusted one
/// by a constant and the same bracketed root solve applies.
pub fn fit_adjusted_hr(
    data: &TrialDataset,
    x: &CovariateMatrix,
    alpha: f64,
) -> Result<AdjustedFit> {
    validate_alpha(alpha)?;
    let table = EventTable::build(data);
    if !table.identified() {
        return Err(Error::DegenerateInformation);
    }
    let theta_l = solve_score_equation(&table, 0.0)?;
    let (aug, reduction, dropped) = if x.p() == 0 {
        (0.0, 0.0, 0)
    } else {
        let po = pseudo_outcomes(data, theta_l)?;
        let coef = fit_betas(data, &po, x)?;
        (
            augmentation(data, x, &coef.beta1, &coef.beta0),
            coef.variance_reduction(),
            coef.dropped_directions,
        )
    };
    let theta_cl = solve_score_equation(&table, aug)?;
    let info: ScoreEvaluation = score_from_table(&table, theta_cl);
    Ok(build_fit(
        Method::CovariateAdjusted,
        theta_cl,
        theta_l,
        info.neg_derivative,
        reduction,
        alpha,
        data.n(),
        data.n_events(),
        dropped,
    ))
}

/// Unadjusted maximum partial likelihood fit of the log-HR.
pub fn fit_unadjusted_hr(data: &TrialDataset, alpha: f64) -> Result<AdjustedFit> {
    validate_alpha(alpha)?;
    let table = EventTable::build(data);
    if !table.identified() {
        return Err(Error::DegenerateInformation);
    }
    let theta_l = solve_score_equation(&table, 0.0)?;
    let info = score_from_table(&table, theta_l);
    Ok(build_fit(
        Method::Unadjusted,
        theta_l,
        theta_l,
        info.neg_derivative,
        0.0,
        alpha,
        data.n(),
        data.n_events(),
        0,
    ))
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}
