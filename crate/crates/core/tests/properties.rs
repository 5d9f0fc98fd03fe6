//! Property-based invariants of the estimators.

use proptest::prelude::*;

use covadj_core::adjust::{fit_adjusted_hr, pseudo_outcomes};
use covadj_core::data::{Arm, CovariateMatrix, Subject, TrialDataset};
use covadj_core::survival::{
    cox_mple, cox_score, martingale_residuals, nelson_aalen, RiskScope, StepHazard,
};

#[derive(Debug, Clone)]
struct RawSubject {
    time: f64,
    event: bool,
    covariate: f64,
}

fn raw_subject() -> impl Strategy<Value = RawSubject> {
    (0.05f64..15.0, any::<bool>(), -3.0f64..3.0)
        .prop_map(|(time, event, covariate)| RawSubject { time, event, covariate })
}

/// Alternating-arm datasets with at least one event per arm, so the score
/// always has a root.
fn dataset() -> impl Strategy<Value = TrialDataset> {
    proptest::collection::vec(raw_subject(), 8..28)
        .prop_map(|mut raw| {
            raw[0].event = true;
            raw[1].event = true;
            let subjects: Vec<Subject> = raw
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let arm = if i % 2 == 0 { Arm::Treatment } else { Arm::Control };
                    Subject::new(r.time, r.event, arm).with_covariates(vec![r.covariate])
                })
                .collect();
            TrialDataset::new(subjects, None, None).expect("constructed valid")
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pooled_martingale_residuals_sum_to_zero(data in dataset()) {
        let hazard = nelson_aalen(&data, RiskScope::Pooled).unwrap();
        let residuals = martingale_residuals(&data, &hazard);
        let sum: f64 = residuals.iter().sum();
        prop_assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn score_is_nonincreasing_with_nonnegative_information(data in dataset()) {
        let grid = [-3.0, -1.5, -0.5, 0.0, 0.5, 1.5, 3.0];
        let mut prev = f64::INFINITY;
        for theta in grid {
            let s = cox_score(&data, theta).unwrap();
            prop_assert!(s.neg_derivative >= 0.0);
            prop_assert!(s.value <= prev + 1e-12);
            prev = s.value;
        }
    }

    #[test]
    fn mple_invariant_under_time_scaling(data in dataset(), scale in 0.01f64..100.0) {
        let scaled: Vec<Subject> = data
            .subjects()
            .iter()
            .map(|s| Subject { time: s.time * scale, ..s.clone() })
            .collect();
        let scaled = TrialDataset::new(scaled, None, None).unwrap();
        match (cox_mple(&data), cox_mple(&scaled)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "solver disagreement: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn swapping_arms_flips_the_sign(data in dataset()) {
        let swapped: Vec<Subject> = data
            .subjects()
            .iter()
            .map(|s| Subject {
                arm: if s.arm.is_treatment() { Arm::Control } else { Arm::Treatment },
                ..s.clone()
            })
            .collect();
        let swapped = TrialDataset::new(swapped, None, None).unwrap();
        if let (Ok(a), Ok(b)) = (cox_mple(&data), cox_mple(&swapped)) {
            prop_assert!((a + b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn pseudo_outcome_identity(data in dataset(), theta in -2.0f64..2.0) {
        let po = pseudo_outcomes(&data, theta).unwrap();
        let signed: f64 = po
            .values
            .iter()
            .zip(data.subjects())
            .map(|(v, s)| if s.arm.is_treatment() { *v } else { -*v })
            .sum::<f64>() / data.n() as f64;
        let score = cox_score(&data, theta).unwrap().value;
        prop_assert!((signed - score).abs() < 1e-11);
    }

    #[test]
    fn adjustment_never_inflates_the_variance_estimate(data in dataset()) {
        let x = CovariateMatrix::from_dataset(&data);
        if let Ok(fit) = fit_adjusted_hr(&data, &x, 0.05) {
            prop_assert!(fit.sigma2_cl <= fit.sigma2_l + 1e-15);
            prop_assert!(fit.variance_reduction_ratio <= 1.0 + 1e-12);
            prop_assert!(fit.se > 0.0);
            prop_assert!(fit.ci_low < fit.ci_high);
        }
    }

    #[test]
    fn step_hazard_is_right_continuous_and_monotone(
        times in proptest::collection::vec(0.01f64..100.0, 1..20),
        query in 0.0f64..120.0,
    ) {
        let mut jump_times: Vec<f64> = times;
        jump_times.sort_by(f64::total_cmp);
        jump_times.dedup();
        let increments = vec![0.25; jump_times.len()];
        let hazard = StepHazard::new(jump_times.clone(), increments).unwrap();
        // Monotone.
        prop_assert!(hazard.value(query) <= hazard.value(query + 1.0) + 1e-15);
        // Right-continuous at jumps: the jump is included at its own time.
        for &t in &jump_times {
            prop_assert!(hazard.value(t) > hazard.value_before(t));
        }
        // Zero before the first jump.
        prop_assert_eq!(hazard.value(jump_times[0] - 1e-9), 0.0);
    }
}
