//! Output rendering: JSON envelopes and aligned key/value tables.

use std::path::Path;

use covadj_core::adjust::{AdjustedFit, AdjustedTest, Method};
use covadj_core::sim::ScenarioReport;

use crate::CliError;

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

pub fn kv_table(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn method_label(m: Method) -> &'static str {
    match m {
        Method::Unadjusted => "unadjusted",
        Method::CovariateAdjusted => "covariate-adjusted",
        Method::StratifiedUnadjusted => "stratified unadjusted",
        Method::StratifiedCovariateAdjusted => "stratified covariate-adjusted",
    }
}

pub fn fit_table(fit: &AdjustedFit, rho: Option<f64>) -> String {
    let level = 100.0 * (1.0 - fit.alpha);
    let mut rows = vec![
        ("method", method_label(fit.method).to_string()),
        ("n / events", format!("{} / {}", fit.n, fit.n_events)),
        ("log-HR", format!("{:.4}", fit.theta_hat)),
        ("HR", format!("{:.4}", fit.hr)),
        ("SE (log-HR)", format!("{:.4}", fit.se)),
        (
            "CI (log-HR)",
            format!("{level:.0}% [{:.4}, {:.4}]", fit.ci_low, fit.ci_high),
        ),
        ("CI (HR)", format!("{level:.0}% [{:.4}, {:.4}]", fit.hr_ci_low, fit.hr_ci_high)),
        ("z", format!("{:.4}", fit.z_stat)),
        ("p (two-sided)", format!("{:.4e}", fit.p_value_two_sided)),
        ("unadjusted log-HR", format!("{:.4}", fit.theta_unadjusted)),
        ("variance ratio", format!("{:.4}", fit.variance_reduction_ratio)),
    ];
    if let Some(r) = rho {
        rows.push(("rho (score, residual)", format!("{r:.4}")));
    }
    if fit.variance_clamped {
        rows.push(("warning", "adjusted variance clamped at the floor".into()));
    }
    if fit.dropped_covariate_directions > 0 {
        rows.push((
            "warning",
            format!("{} degenerate covariate directions dropped", fit.dropped_covariate_directions),
        ));
    }
    kv_table(&rows)
}

pub fn test_table(test: &AdjustedTest, one_sided: bool) -> String {
    let mut rows = vec![
        ("n", format!("{}", test.n)),
        ("adjusted score U", format!("{:.6}", test.u_cl)),
        ("sigma", format!("{:.6}", test.sigma_cl)),
        ("statistic", format!("{:.4}", test.statistic)),
    ];
    if one_sided {
        rows.push(("p (one-sided, lower)", format!("{:.4e}", test.p_value_one_sided)));
    } else {
        rows.push(("p (two-sided)", format!("{:.4e}", test.p_value)));
    }
    if test.variance_clamped {
        rows.push(("warning", "adjusted variance clamped at the floor".into()));
    }
    kv_table(&rows)
}

pub fn report_table(r: &ScenarioReport) -> String {
    kv_table(&[
        (
            "scenario",
            format!(
                "case {} / {} / n {} / {} replicates ({} degenerate)",
                r.case.label(),
                r.effect.label(),
                r.n,
                r.n_replicates,
                r.n_degenerate
            ),
        ),
        ("strategy", r.strategy.label().to_string()),
        ("stratified", r.stratified.to_string()),
        ("seed", r.seed.to_string()),
        ("bias |adj - unadj|", format!("{:.4}", r.bias)),
        ("reject rate (cox)", format!("{:.4}", r.reject_rate_unadj)),
        ("reject rate (cov-adj)", format!("{:.4}", r.reject_rate_adj)),
        ("mean SE (adj)", format!("{:.4}", r.mean_se_adj)),
        ("MC SD (adj)", format!("{:.4}", r.mc_sd_adj)),
        ("var ratio (adj/unadj)", format!("{:.4}", r.var_ratio)),
        ("mean rho", format!("{:.4}", r.mean_rho)),
        ("mean 1-rho^2", format!("{:.4}", r.mean_one_minus_rho_sq)),
    ])
}

pub const REPORT_CSV_HEADER: &[&str] = &[
    "case",
    "effect",
    "n",
    "replicates",
    "degenerate",
    "strategy",
    "stratified",
    "seed",
    "bias",
    "pr_reject_h0_cox",
    "pr_reject_h0_cov_adj",
    "mean_se",
    "mc_sd",
    "var_ratio",
    "mean_rho",
    "mean_one_minus_rho_sq",
];

pub fn report_csv_row(r: &ScenarioReport) -> Vec<String> {
    vec![
        r.case.label().to_string(),
        r.effect.label().to_string(),
        r.n.to_string(),
        r.n_replicates.to_string(),
        r.n_degenerate.to_string(),
        r.strategy.label().to_string(),
        r.stratified.to_string(),
        r.seed.to_string(),
        format!("{}", r.bias),
        format!("{}", r.reject_rate_unadj),
        format!("{}", r.reject_rate_adj),
        format!("{}", r.mean_se_adj),
        format!("{}", r.mc_sd_adj),
        format!("{}", r.var_ratio),
        format!("{}", r.mean_rho),
        format!("{}", r.mean_one_minus_rho_sq),
    ]
}

/// Print the envelope per format and optionally write it as JSON to a file.
pub fn emit(
    envelope: &serde_json::Value,
    table: String,
    format: Format,
    out: Option<&Path>,
) -> Result<(), CliError> {
    match format {
        Format::Table => println!("{table}"),
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(envelope).map_err(|e| CliError::Runtime(e.to_string()))?
        ),
        Format::Csv => {
            return Err(CliError::Validation(
                "--format csv is only available for simulate".into(),
            ))
        }
    }
    if let Some(path) = out {
        let body = serde_json::to_string_pretty(envelope)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(path, body)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
