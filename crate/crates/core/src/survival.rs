//! Counting-process primitives: risk-set curves, the Nelson-Aalen
//! estimator, the treatment-only Cox partial-likelihood score with its
//! observed information, the maximum partial likelihood estimator, and
//! martingale residuals.
//!
//! Conventions used throughout:
//! - a subject with follow-up time equal to t is at risk at t (>= in the
//!   at-risk indicator), including subjects censored exactly at t;
//! - tied event times are pooled into a single jump with increment d/Y;
//! - events exactly at the horizon tau are included.

use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::solver::root_nonincreasing;

/// Search bracket for the log-HR root and the solver tolerance.
pub(crate) const THETA_BRACKET: f64 = 20.0;
pub(crate) const ROOT_TOL: f64 = 1e-10;

/// Right-continuous step function over a time axis.
///
/// `value(t)` is the sum of increments at jump times <= t, so evaluation
/// before the first jump is zero. With nonnegative increments this is a
/// nondecreasing cumulative-hazard-style curve.
#[derive(Debug, Clone, PartialEq)]
pub struct StepHazard {
    jump_times: Vec<f64>,
    increments: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepHazard {
    pub fn new(jump_times: Vec<f64>, increments: Vec<f64>) -> Result<StepHazard> {
        if jump_times.len() != increments.len() {
            return Err(Error::Invalid("jump_times and increments lengths differ".into()));
        }
        if jump_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("jump times must be strictly increasing".into()));
        }
        if jump_times.iter().chain(increments.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("nonfinite jump time or increment".into()));
        }
        let mut cumulative = Vec::with_capacity(increments.len());
        let mut acc = 0.0;
        for inc in &increments {
            acc += inc;
            cumulative.push(acc);
        }
        Ok(StepHazard { jump_times, increments, cumulative })
    }

    /// The all-zero function (no jumps). Doubles as the "no events"
    /// warning flag: see [`StepHazard::is_zero`].
    pub fn zero() -> StepHazard {
        StepHazard { jump_times: Vec::new(), increments: Vec::new(), cumulative: Vec::new() }
    }

    /// Sum of increments at jump times <= t.
    pub fn value(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&jt| jt <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Sum of increments at jump times strictly before t.
    pub fn value_before(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&jt| jt < t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// True when the curve has no jumps, i.e. no events contributed.
    pub fn is_zero(&self) -> bool {
        self.jump_times.is_empty()
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }
}

/// Which risk set to use for Nelson-Aalen estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskScope {
    Pooled,
    Arm(Arm),
}

/// Pooled per-event-time summary of a dataset: distinct event times on
/// [0, tau] with per-arm event and at-risk counts. All score and
/// pseudo-outcome sums run over this table.
#[derive(Debug, Clone)]
pub(crate) struct EventTable {
    pub times: Vec<f64>,
    pub d1: Vec<f64>,
    pub d0: Vec<f64>,
    pub r1: Vec<f64>,
    pub r0: Vec<f64>,
    /// Normalizing sample size (the full n even for stratum-local tables).
    pub n: f64,
}

impl EventTable {
    pub fn build(data: &TrialDataset) -> EventTable {
        let records: Vec<(f64, bool, bool)> = data
            .subjects()
            .iter()
            .map(|s| (s.time, s.event, s.arm.is_treatment()))
            .collect();
        EventTable::from_records(&records, data.tau(), data.n() as f64)
    }

    /// `n_total` is the divisor for score averages, which may exceed the
    /// number of records when the records are one stratum of a larger
    /// dataset.
    pub fn from_records(records: &[(f64, bool, bool)], tau: f64, n_total: f64) -> EventTable {
        let mut event_rows: Vec<(f64, bool)> = records
            .iter()
            .filter(|(t, ev, _)| *ev && *t <= tau)
            .map(|(t, _, trt)| (*t, *trt))
            .collect();
        event_rows.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut times = Vec::new();
        let mut d1 = Vec::new();
        let mut d0 = Vec::new();
        for (t, trt) in event_rows {
            if times.last() == Some(&t) {
                let k = times.len() - 1;
                if trt {
                    d1[k] += 1.0;
                } else {
                    d0[k] += 1.0;
                }
            } else {
                times.push(t);
                d1.push(if trt { 1.0 } else { 0.0 });
                d0.push(if trt { 0.0 } else { 1.0 });
            }
        }

        let mut t1: Vec<f64> = records.iter().filter(|r| r.2).map(|r| r.0).collect();
        let mut t0: Vec<f64> = records.iter().filter(|r| !r.2).map(|r| r.0).collect();
        t1.sort_by(f64::total_cmp);
        t0.sort_by(f64::total_cmp);
        let at_risk = |sorted: &[f64], t: f64| (sorted.len() - sorted.partition_point(|&x| x < t)) as f64;
        let r1: Vec<f64> = times.iter().map(|&t| at_risk(&t1, t)).collect();
        let r0: Vec<f64> = times.iter().map(|&t| at_risk(&t0, t)).collect();

        EventTable { times, d1, d0, r1, r0, n: n_total }
    }

    /// True when at least one event time has both arms at risk, i.e. the
    /// observed information is strictly positive for every finite theta.
    pub fn identified(&self) -> bool {
        (0..self.times.len()).any(|k| self.r1[k] > 0.0 && self.r0[k] > 0.0)
    }
}

/// Value and negated derivative of the treatment-only Cox score at a
/// given log-HR. The negated derivative is the observed information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreEvaluation {
    pub value: f64,
    pub neg_derivative: f64,
}

pub(crate) fn score_from_table(table: &EventTable, theta: f64) -> ScoreEvaluation {
    let e = theta.exp();
    let mut value = 0.0;
    let mut info = 0.0;
    for k in 0..table.times.len() {
        let (d1, d0, r1, r0) = (table.d1[k], table.d0[k], table.r1[k], table.r0[k]);
        let d = d1 + d0;
        let denom = e * r1 + r0;
        value += d1 - d * e * r1 / denom;
        info += d * e * r1 * r0 / (denom * denom);
    }
    ScoreEvaluation { value: value / table.n, neg_derivative: info / table.n }
}

/// Root of `score(theta) = offset` on the standard bracket. The score is
/// nonincreasing, so the shifted function is too.
pub(crate) fn solve_score_equation(table: &EventTable, offset: f64) -> Result<f64> {
    root_nonincreasing(
        |theta| score_from_table(table, theta).value - offset,
        -THETA_BRACKET,
        THETA_BRACKET,
        ROOT_TOL,
    )
}

/// Nelson-Aalen cumulative hazard from raw records: one jump per distinct
/// event time on [0, tau] with increment (events at t) / (at risk at t).
/// Returns the zero curve when there are no events (callers treat
/// [`StepHazard::is_zero`] as the warning flag).
pub fn nelson_aalen_from_records(times: &[f64], events: &[bool], tau: f64) -> Result<StepHazard> {
    if times.is_empty() {
        return Err(Error::EmptyRiskSet);
    }
    if times.len() != events.len() {
        return Err(Error::Invalid("times and events lengths differ".into()));
    }
    let mut sorted_times: Vec<f64> = times.to_vec();
    sorted_times.sort_by(f64::total_cmp);

    let mut event_times: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(t, ev)| **ev && **t <= tau)
        .map(|(t, _)| *t)
        .collect();
    event_times.sort_by(f64::total_cmp);

    let mut jump_times = Vec::new();
    let mut increments = Vec::new();
    let mut k = 0;
    while k < event_times.len() {
        let t = event_times[k];
        let mut d = 0usize;
        while k < event_times.len() && event_times[k] == t {
            d += 1;
            k += 1;
        }
        let at_risk = sorted_times.len() - sorted_times.partition_point(|&x| x < t);
        jump_times.push(t);
        increments.push(d as f64 / at_risk as f64);
    }
    StepHazard::new(jump_times, increments)
}

/// Nelson-Aalen estimator on the pooled sample or a single arm.
pub fn nelson_aalen(data: &TrialDataset, scope: RiskScope) -> Result<StepHazard> {
    let select = |s: &crate::data::Subject| match scope {
        RiskScope::Pooled => true,
        RiskScope::Arm(a) => s.arm == a,
    };
    let times: Vec<f64> = data.subjects().iter().filter(|s| select(s)).map(|s| s.time).collect();
    let events: Vec<bool> = data.subjects().iter().filter(|s| select(s)).map(|s| s.event).collect();
    nelson_aalen_from_records(&times, &events, data.tau())
}

/// Sample-average at-risk and event curves.
///
/// At-risk evaluation is inclusive at the query time: subjects with
/// follow-up exactly t count as at risk at t, so the drop takes effect
/// just after t. The event curve counts events through t, truncated at tau.
#[derive(Debug, Clone)]
pub struct RiskCurves {
    y1_initial: f64,
    y0_initial: f64,
    y1_drops: StepHazard,
    y0_drops: StepHazard,
    events: StepHazard,
}

impl RiskCurves {
    /// Treated at-risk fraction Y1(t).
    pub fn at_risk_treatment(&self, t: f64) -> f64 {
        self.y1_initial + self.y1_drops.value_before(t)
    }

    /// Control at-risk fraction Y0(t).
    pub fn at_risk_control(&self, t: f64) -> f64 {
        self.y0_initial + self.y0_drops.value_before(t)
    }

    pub fn at_risk_total(&self, t: f64) -> f64 {
        self.at_risk_treatment(t) + self.at_risk_control(t)
    }

    /// Pooled event fraction N(t): events on [0, min(t, tau)] over n.
    pub fn events_through(&self, t: f64) -> f64 {
        self.events.value(t)
    }

    pub fn event_curve(&self) -> &StepHazard {
        &self.events
    }
}

pub fn risk_curves(data: &TrialDataset) -> RiskCurves {
    let n = data.n() as f64;
    let drops_for = |arm: Arm| {
        let mut ts: Vec<f64> =
            data.subjects().iter().filter(|s| s.arm == arm).map(|s| s.time).collect();
        ts.sort_by(f64::total_cmp);
        let mut jump_times = Vec::new();
        let mut increments = Vec::new();
        let mut k = 0;
        while k < ts.len() {
            let t = ts[k];
            let mut c = 0usize;
            while k < ts.len() && ts[k] == t {
                c += 1;
                k += 1;
            }
            jump_times.push(t);
            increments.push(-(c as f64) / n);
        }
        StepHazard::new(jump_times, increments).expect("sorted dedup times")
    };

    let table = EventTable::build(data);
    let event_increments: Vec<f64> =
        (0..table.times.len()).map(|k| (table.d1[k] + table.d0[k]) / n).collect();
    let events = StepHazard::new(table.times.clone(), event_increments).expect("sorted event times");

    RiskCurves {
        y1_initial: data.n_arm(Arm::Treatment) as f64 / n,
        y0_initial: data.n_arm(Arm::Control) as f64 / n,
        y1_drops: drops_for(Arm::Treatment),
        y0_drops: drops_for(Arm::Control),
        events,
    }
}

/// Treatment-only Cox partial-likelihood score and observed information
/// at log-HR `theta`, as averages over the sample.
pub fn cox_score(data: &TrialDataset, theta: f64) -> Result<ScoreEvaluation> {
    let table = EventTable::build(data);
    if !table.identified() {
        return Err(Error::DegenerateInformation);
    }
    Ok(score_from_table(&table, theta))
}

/// Maximum partial likelihood estimate of the log-HR: the root of the
/// treatment-only Cox score on [-20, 20], to absolute tolerance 1e-10.
pub fn cox_mple(data: &TrialDataset) -> Result<f64> {
    let table = EventTable::build(data);
    if !table.identified() {
        return Err(Error::DegenerateInformation);
    }
    solve_score_equation(&table, 0.0)
}

/// Martingale residuals at the horizon: event indicator on [0, tau] minus
/// the cumulative hazard at the (truncated) follow-up time.
pub fn martingale_residuals(data: &TrialDataset, hazard: &StepHazard) -> Vec<f64> {
    let tau = data.tau();
    data.subjects()
        .iter()
        .map(|s| {
            let observed = if s.event && s.time <= tau { 1.0 } else { 0.0 };
            observed - hazard.value(s.time.min(tau))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;

    fn subj(time: f64, event: bool, arm: Arm) -> Subject {
        Subject::new(time, event, arm)
    }

    fn three_subject_single_armish() -> TrialDataset {
        // Validation needs both arms; put the control subject where it does
        // not disturb the pooled Nelson-Aalen hand values.
        TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(2.0, false, Arm::Treatment),
                subj(3.0, true, Arm::Control),
            ],
            Some(3.0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn nelson_aalen_hand_values() {
        let data = three_subject_single_armish();
        let na = nelson_aalen(&data, RiskScope::Pooled).unwrap();
        assert_eq!(na.jump_times(), &[1.0, 3.0]);
        assert!((na.increments()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((na.increments()[1] - 1.0).abs() < 1e-15);
        assert!((na.value(3.0) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(na.value(0.5), 0.0);
    }

    #[test]
    fn nelson_aalen_pools_ties() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(1.0, true, Arm::Control),
                subj(2.0, false, Arm::Treatment),
                subj(3.0, false, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap();
        let na = nelson_aalen(&data, RiskScope::Pooled).unwrap();
        assert_eq!(na.len(), 1);
        assert!((na.increments()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nelson_aalen_no_events_is_zero_flag() {
        let times = [1.0, 2.0];
        let events = [false, false];
        let na = nelson_aalen_from_records(&times, &events, 5.0).unwrap();
        assert!(na.is_zero());
    }

    #[test]
    fn risk_curves_conventions() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(2.0, false, Arm::Treatment),
                subj(3.0, false, Arm::Control),
                subj(4.0, false, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap();
        let rc = risk_curves(&data);
        // Full risk set at the first event time, inclusive convention.
        assert_eq!(rc.at_risk_total(1.0), 1.0);
        assert_eq!(rc.at_risk_treatment(1.0), 0.5);
        // Drop takes effect just after the event time.
        assert_eq!(rc.at_risk_treatment(1.0 + 1e-9), 0.25);
        assert_eq!(rc.events_through(1.0), 0.25);
        assert_eq!(rc.events_through(0.5), 0.0);
        // Beyond the last follow-up everyone has left the risk set.
        assert_eq!(rc.at_risk_total(10.0), 0.0);
    }

    #[test]
    fn cox_score_zero_under_symmetry() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(2.0, false, Arm::Treatment),
                subj(1.0, true, Arm::Control),
                subj(2.0, false, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap();
        let s = cox_score(&data, 0.0).unwrap();
        assert!(s.value.abs() < 1e-15);
        assert!(s.neg_derivative > 0.0);
    }

    #[test]
    fn cox_score_hand_value_four_subjects() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(4.0, false, Arm::Treatment),
                subj(2.0, true, Arm::Control),
                subj(3.0, false, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap();
        let s = cox_score(&data, 0.0).unwrap();
        // Event at t=1: 1 - 2/4; event at t=2: 0 - 1/3; average over n=4.
        assert!((s.value - (0.5 - 1.0 / 3.0) / 4.0).abs() < 1e-15);
        let expected_info = (0.25 + 2.0 / 9.0) / 4.0;
        assert!((s.neg_derivative - expected_info).abs() < 1e-15);
    }

    #[test]
    fn cox_score_large_theta_limit() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(5.0, false, Arm::Treatment),
                subj(2.0, true, Arm::Control),
                subj(3.0, true, Arm::Control),
                subj(6.0, false, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap();
        // As theta grows the score tends to -(control events)/n when the
        // treated arm stays at risk through every event time.
        let s = cox_score(&data, 20.0).unwrap();
        assert!((s.value - (-2.0 / 5.0)).abs() < 1e-6);
        // Nonincreasing in theta.
        let grid = [-3.0, -1.0, 0.0, 1.0, 3.0, 20.0];
        let mut prev = f64::INFINITY;
        for &th in &grid {
            let v = cox_score(&data, th).unwrap().value;
            assert!(v <= prev + 1e-14);
            prev = v;
        }
    }

    #[test]
    fn mple_zero_under_symmetry() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(2.0, true, Arm::Treatment),
                subj(3.0, false, Arm::Treatment),
                subj(1.0, true, Arm::Control),
                subj(2.0, true, Arm::Control),
                subj(3.0, false, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap();
        let theta = cox_mple(&data).unwrap();
        assert!(theta.abs() < 1e-9);
    }

    #[test]
    fn mple_no_root_when_events_single_arm() {
        let data = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment),
                subj(2.0, true, Arm::Treatment),
                subj(3.0, false, Arm::Control),
                subj(4.0, false, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap();
        assert!(matches!(cox_mple(&data), Err(Error::NoRootInBracket { .. })));
    }

    #[test]
    fn mple_scale_invariant() {
        let base = vec![
            subj(1.0, true, Arm::Treatment),
            subj(3.0, true, Arm::Treatment),
            subj(5.0, false, Arm::Treatment),
            subj(2.0, true, Arm::Control),
            subj(4.0, true, Arm::Control),
            subj(6.0, false, Arm::Control),
        ];
        let d1 = TrialDataset::new(base.clone(), None, None).unwrap();
        let scaled: Vec<Subject> = base
            .iter()
            .map(|s| Subject { time: s.time * 17.5, ..s.clone() })
            .collect();
        let d2 = TrialDataset::new(scaled, None, None).unwrap();
        let t1 = cox_mple(&d1).unwrap();
        let t2 = cox_mple(&d2).unwrap();
        assert!((t1 - t2).abs() < 1e-9);
    }

    #[test]
    fn martingale_residuals_hand_values() {
        let data = three_subject_single_armish();
        let na = nelson_aalen(&data, RiskScope::Pooled).unwrap();
        let res = martingale_residuals(&data, &na);
        assert!((res[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((res[1] + 1.0 / 3.0).abs() < 1e-15);
        assert!((res[2] + 1.0 / 3.0).abs() < 1e-15);
        let sum: f64 = res.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn martingale_residual_zero_hazard_is_event_flag() {
        let data = three_subject_single_armish();
        let res = martingale_residuals(&data, &StepHazard::zero());
        assert_eq!(res, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn martingale_residual_censored_before_first_jump() {
        let data = three_subject_single_armish();
        let na = nelson_aalen(&data, RiskScope::Pooled).unwrap();
        let extended = TrialDataset::new(
            vec![
                subj(0.5, false, Arm::Treatment),
                subj(1.0, true, Arm::Treatment),
                subj(3.0, true, Arm::Control),
            ],
            Some(3.0),
            None,
        )
        .unwrap();
        let res = martingale_residuals(&extended, &na);
        assert_eq!(res[0], 0.0);
    }
}
