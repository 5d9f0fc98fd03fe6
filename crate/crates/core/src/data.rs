//! Trial data containers and validation.

use crate::error::{Error, Result};

/// Randomized arm assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Arm {
    Control = 0,
    Treatment = 1,
}

impl Arm {
    pub fn from_index(v: u8) -> Option<Arm> {
        match v {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treatment),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    pub fn is_treatment(self) -> bool {
        matches!(self, Arm::Treatment)
    }
}

/// One observed trial record: follow-up time, event flag, arm, optional
/// stratum label, baseline covariates.
#[derive(Debug, Clone)]
pub struct Subject {
    pub time: f64,
    pub event: bool,
    pub arm: Arm,
    pub stratum: Option<u32>,
    pub covariates: Vec<f64>,
}

impl Subject {
    pub fn new(time: f64, event: bool, arm: Arm) -> Subject {
        Subject { time, event, arm, stratum: None, covariates: Vec::new() }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Subject {
        self.covariates = covariates;
        self
    }

    pub fn with_stratum(mut self, stratum: u32) -> Subject {
        self.stratum = Some(stratum);
        self
    }
}

/// Validated two-arm dataset with analysis horizon `tau` and target
/// allocation `pi`.
///
/// All analysis integrals truncate at `tau`; events strictly after `tau` do
/// not contribute, but their subjects remain at risk through `tau`.
#[derive(Debug, Clone)]
pub struct TrialDataset {
    subjects: Vec<Subject>,
    tau: f64,
    pi: f64,
    feature_names: Vec<String>,
}

impl TrialDataset {
    /// Build and validate a dataset. `tau` defaults to the maximum observed
    /// time and `pi` to the observed treated fraction.
    pub fn new(subjects: Vec<Subject>, tau: Option<f64>, pi: Option<f64>) -> Result<TrialDataset> {
        if subjects.is_empty() {
            return Err(Error::EmptyRiskSet);
        }
        let p = subjects[0].covariates.len();
        let strata_present = subjects[0].stratum.is_some();
        let mut max_time: f64 = 0.0;
        let mut n1 = 0usize;
        let mut n0 = 0usize;
        for (i, s) in subjects.iter().enumerate() {
            if !s.time.is_finite() || s.time < 0.0 {
                return Err(Error::Invalid(format!(
                    "subject {i}: time must be finite and nonnegative, got {}",
                    s.time
                )));
            }
            if s.covariates.len() != p {
                return Err(Error::Invalid(format!(
                    "subject {i}: expected {p} covariates, got {}",
                    s.covariates.len()
                )));
            }
            if s.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("subject {i}: nonfinite covariate value")));
            }
            if s.stratum.is_some() != strata_present {
                return Err(Error::Invalid(
                    "stratum must be present for all subjects or for none".into(),
                ));
            }
            match s.arm {
                Arm::Treatment => n1 += 1,
                Arm::Control => n0 += 1,
            }
            max_time = max_time.max(s.time);
        }
        if n1 == 0 || n0 == 0 {
            return Err(Error::Invalid("both arms must be represented".into()));
        }
        let tau = tau.unwrap_or(max_time);
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Invalid(format!("tau must be positive and finite, got {tau}")));
        }
        if !subjects.iter().any(|s| s.event && s.time <= tau) {
            return Err(Error::NoEvents);
        }
        let n = subjects.len();
        let pi = pi.unwrap_or(n1 as f64 / n as f64);
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Invalid(format!("pi must lie in (0, 1), got {pi}")));
        }
        let feature_names = (1..=p).map(|k| format!("x{k}")).collect();
        Ok(TrialDataset { subjects, tau, pi, feature_names })
    }

    /// Replace the default x1..xp covariate names.
    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<TrialDataset> {
        if names.len() != self.p() {
            return Err(Error::Invalid(format!(
                "expected {} feature names, got {}",
                self.p(),
                names.len()
            )));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    /// Number of covariate columns carried by each subject.
    pub fn p(&self) -> usize {
        self.subjects[0].covariates.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_arm(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    /// Observed treated fraction n1/n.
    pub fn treated_fraction(&self) -> f64 {
        self.n_arm(Arm::Treatment) as f64 / self.n() as f64
    }

    /// Number of events on [0, tau].
    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event && s.time <= self.tau).count()
    }

    pub fn has_strata(&self) -> bool {
        self.subjects[0].stratum.is_some()
    }

    /// Distinct stratum labels in ascending order; empty when unstratified.
    pub fn stratum_labels(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.subjects.iter().filter_map(|s| s.stratum).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    pub fn covariate_column(&self, k: usize) -> Vec<f64> {
        self.subjects.iter().map(|s| s.covariates[k]).collect()
    }
}

/// Row-major matrix of adjustment covariates, one row per subject.
///
/// The adjustment operations take covariates through this view so callers
/// can adjust for raw columns, an externally trained score, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    data: Vec<f64>,
    n: usize,
    p: usize,
}

impl CovariateMatrix {
    /// A view with zero columns; adjustment with it reduces to the
    /// unadjusted analysis.
    pub fn empty(n: usize) -> CovariateMatrix {
        CovariateMatrix { data: Vec::new(), n, p: 0 }
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<CovariateMatrix> {
        if columns.is_empty() {
            return Err(Error::Invalid("from_columns requires at least one column".into()));
        }
        let n = columns[0].len();
        for (k, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Invalid(format!(
                    "column {k} has length {}, expected {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("column {k} contains a nonfinite value")));
            }
        }
        let p = columns.len();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for col in columns {
                data.push(col[i]);
            }
        }
        Ok(CovariateMatrix { data, n, p })
    }

    /// All covariate columns of the dataset, in order.
    pub fn from_dataset(data: &TrialDataset) -> CovariateMatrix {
        let n = data.n();
        let p = data.p();
        let mut out = Vec::with_capacity(n * p);
        for s in data.subjects() {
            out.extend_from_slice(&s.covariates);
        }
        CovariateMatrix { data: out, n, p }
    }

    /// Append one column (for example a prognostic score).
    pub fn with_column(mut self, col: &[f64]) -> Result<CovariateMatrix> {
        if col.len() != self.n {
            return Err(Error::Invalid(format!(
                "appended column has length {}, expected {}",
                col.len(),
                self.n
            )));
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("appended column contains a nonfinite value".into()));
        }
        let mut data = Vec::with_capacity(self.n * (self.p + 1));
        for i in 0..self.n {
            data.extend_from_slice(self.row(i));
            data.push(col[i]);
        }
        self.data = data;
        self.p += 1;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// Replace NaN entries by per-column means, in place. Returns the number of
/// imputed cells. Errors when a column has no observed value at all.
pub fn impute_column_means(rows: &mut [Vec<f64>]) -> Result<usize> {
    if rows.is_empty() {
        return Ok(0);
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Invalid("ragged covariate rows".into()));
    }
    let mut imputed = 0usize;
    for k in 0..p {
        let mut sum = 0.0;
        let mut m = 0usize;
        for r in rows.iter() {
            if r[k].is_finite() {
                sum += r[k];
                m += 1;
            }
        }
        if m == 0 {
            return Err(Error::Invalid(format!("covariate column {k} has no observed values")));
        }
        let mean = sum / m as f64;
        for r in rows.iter_mut() {
            if !r[k].is_finite() {
                r[k] = mean;
                imputed += 1;
            }
        }
    }
    Ok(imputed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subj(time: f64, event: bool, arm: Arm) -> Subject {
        Subject::new(time, event, arm)
    }

    #[test]
    fn defaults_tau_and_pi() {
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
        assert_eq!(data.tau(), 4.0);
        assert_eq!(data.pi(), 0.5);
        assert_eq!(data.n_events(), 2);
    }

    #[test]
    fn rejects_single_arm() {
        let err = TrialDataset::new(
            vec![subj(1.0, true, Arm::Treatment), subj(2.0, true, Arm::Treatment)],
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn rejects_no_events_before_tau() {
        let err = TrialDataset::new(
            vec![subj(5.0, true, Arm::Treatment), subj(2.0, false, Arm::Control)],
            Some(4.0),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoEvents));
    }

    #[test]
    fn rejects_mixed_stratum_presence() {
        let err = TrialDataset::new(
            vec![
                subj(1.0, true, Arm::Treatment).with_stratum(0),
                subj(2.0, true, Arm::Control),
            ],
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }

    #[test]
    fn covariate_matrix_roundtrip() {
        let m = CovariateMatrix::from_columns(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.row(0), &[1.0, 3.0]);
        assert_eq!(m.row(1), &[2.0, 4.0]);
        let m = m.with_column(&[5.0, 6.0]).unwrap();
        assert_eq!(m.row(1), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn imputes_missing_with_column_mean() {
        let mut rows = vec![vec![1.0, f64::NAN], vec![3.0, 4.0], vec![f64::NAN, 6.0]];
        let k = impute_column_means(&mut rows).unwrap();
        assert_eq!(k, 2);
        assert_eq!(rows[2][0], 2.0);
        assert_eq!(rows[0][1], 5.0);
    }
}
