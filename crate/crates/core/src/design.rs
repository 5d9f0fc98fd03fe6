//! Trial-planning arithmetic: variance-reduction ratio, required event
//! counts with and without score adjustment, and event savings.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Planning inputs. `d_unadj` may be supplied directly; otherwise it is
/// derived from (alpha, power, theta_alt, pi) by the Schoenfeld formula.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DesignInput {
    /// Anticipated correlation between the prognostic score and the trial
    /// martingale residual (the pooled within-stratum version for
    /// stratified designs).
    pub rho: f64,
    pub d_unadj: Option<u64>,
    pub alpha: f64,
    pub power: f64,
    /// Design log-HR.
    pub theta_alt: f64,
    pub pi: f64,
}

impl Default for DesignInput {
    fn default() -> DesignInput {
        DesignInput {
            rho: 0.0,
            d_unadj: None,
            alpha: 0.05,
            power: 0.8,
            theta_alt: (0.6f64).ln(),
            pi: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DesignOutput {
    /// 1 - rho^2.
    pub variance_ratio: f64,
    pub d_unadj: u64,
    /// ceil(variance_ratio * d_unadj).
    pub d_adj: u64,
    pub events_saved: u64,
    /// Normal-approximation power of the adjusted test with d_unadj events.
    pub power_at_fixed_events: f64,
    pub stratified: bool,
}

/// 1 - rho^2: the adjusted-to-unadjusted variance ratio implied by a score
/// with correlation `rho`.
pub fn variance_ratio(rho: f64) -> Result<f64> {
    if !rho.is_finite() || rho.abs() > 1.0 {
        return Err(Error::OutOfRange(format!("rho must lie in [-1, 1], got {rho}")));
    }
    Ok(1.0 - rho * rho)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn validate_common(alpha: f64, power: f64, pi: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(power > alpha && power < 1.0) {
        return Err(Error::OutOfRange(format!("power must lie in (alpha, 1), got {power}")));
    }
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::OutOfRange(format!("pi must lie in (0, 1), got {pi}")));
    }
    Ok(())
}

/// Ceiling with a small absolute tolerance so counts that are integers up
/// to floating-point noise do not round up.
fn ceil_events(x: f64) -> u64 {
    (x - 1e-9).ceil().max(0.0) as u64
}

/// Required events for a two-sided level-alpha log-rank test at the given
/// power and design log-HR: (z_{a/2} + z_b)^2 / (pi (1 - pi) theta^2).
pub fn schoenfeld_events(alpha: f64, power: f64, theta_alt: f64, pi: f64) -> Result<u64> {
    validate_common(alpha, power, pi)?;
    if !theta_alt.is_finite() || theta_alt == 0.0 {
        return Err(Error::OutOfRange("theta_alt must be nonzero".into()));
    }
    let n = std_normal();
    let za = n.inverse_cdf(1.0 - alpha / 2.0);
    let zb = n.inverse_cdf(power);
    let d = (za + zb).powi(2) / (pi * (1.0 - pi) * theta_alt * theta_alt);
    Ok(ceil_events(d).max(1))
}

/// Power of the adjusted test at a fixed event count: the score's variance
/// reduction inflates the noncentrality by 1/sqrt(1 - rho^2).
fn power_with_events(d: u64, rho: f64, alpha: f64, theta_alt: f64, pi: f64) -> f64 {
    let ratio = 1.0 - rho * rho;
    if ratio <= 0.0 {
        return 1.0;
    }
    let n = std_normal();
    let za = n.inverse_cdf(1.0 - alpha / 2.0);
    let ncp = theta_alt.abs() * (d as f64 * pi * (1.0 - pi) / ratio).sqrt();
    n.cdf(ncp - za)
}

fn events_required_impl(input: &DesignInput, stratified: bool) -> Result<DesignOutput> {
    let ratio = variance_ratio(input.rho)?;
    validate_common(input.alpha, input.power, input.pi)?;
    let d_unadj = match input.d_unadj {
        Some(d) => {
            if d == 0 {
                return Err(Error::OutOfRange("d_unadj must be at least 1".into()));
            }
            d
        }
        None => schoenfeld_events(input.alpha, input.power, input.theta_alt, input.pi)?,
    };
    let d_adj = ceil_events(ratio * d_unadj as f64).min(d_unadj);
    Ok(DesignOutput {
        variance_ratio: ratio,
        d_unadj,
        d_adj,
        events_saved: d_unadj - d_adj,
        power_at_fixed_events: power_with_events(
            d_unadj,
            input.rho,
            input.alpha,
            input.theta_alt,
            input.pi,
        ),
        stratified,
    })
}

/// Required events with and without score adjustment under simple
/// randomization.
pub fn events_required(input: &DesignInput) -> Result<DesignOutput> {
    events_required_impl(input, false)
}

/// Stratified analogue: identical arithmetic with `rho` read as the pooled
/// within-stratum correlation, which in general is no larger than the
/// marginal one.
pub fn events_required_stratified(input: &DesignInput) -> Result<DesignOutput> {
    events_required_impl(input, true)
}
