//! Sweep every (case, effect, n) scenario and print one operating-
//! characteristics row per run.
//!
//!     cargo run --release --example table_sweep -- [replicates] [seed]

use covadj_core::sim::{run_scenario, Case, Effect, ScenarioConfig, Strategy};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    println!(
        "{:>4} {:<8} {:>4} {:>6} {:>6} {:>7} {:>7} {:>7} {:>7} {:>6} {:>7}",
        "case", "effect", "n", "rej_u", "rej_a", "bias", "mean_se", "mc_sd", "ratio", "rho", "1-rho2"
    );
    for case in Case::all() {
        for effect in [Effect::Null, Effect::Efficacy] {
            for n in [200usize, 400] {
                let cfg = ScenarioConfig {
                    case,
                    effect,
                    n_trial: n,
                    n_replicates: reps,
                    seed,
                    strategy: Strategy::ScoreOnlyMartingale,
                    ..Default::default()
                };
                let r = run_scenario(&cfg).expect("scenario runs");
                println!(
                    "{:>4} {:<8} {:>4} {:>6.3} {:>6.3} {:>7.4} {:>7.4} {:>7.4} {:>7.3} {:>6.3} {:>7.3}",
                    case.label(),
                    effect.label(),
                    n,
                    r.reject_rate_unadj,
                    r.reject_rate_adj,
                    r.bias,
                    r.mean_se_adj,
                    r.mc_sd_adj,
                    r.var_ratio,
                    r.mean_rho,
                    r.mean_one_minus_rho_sq
                );
            }
        }
    }
}
