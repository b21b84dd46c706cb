//! `lab assumptions`: data-assumption validators (boundedness, full rank,
//! pair-similarity tail, covariance minimum eigenvalue).

use super::{CommandResult, RunOutcome};
use crate::config::AssumptionsConfig;
use crate::out::{g17, OutDir};
use attnlab::data::{
    assumption_report, covariance_population_value, gen_synthetic, pair_similarities,
};

pub fn run(cfg: &AssumptionsConfig, out: &mut OutDir) -> CommandResult {
    let mut dataset = gen_synthetic(cfg.n, cfg.d_s, cfg.d, cfg.c_x, cfg.seed);
    if cfg.plant_duplicate && cfg.d_s >= 2 {
        let row = dataset.inputs[0].row(0).to_vec();
        dataset.inputs[0].row_mut(1).copy_from_slice(&row);
    }
    dataset.check_bound().map_err(anyhow::Error::from)?;

    // Threshold grid: configured, or quantiles of the observed similarities.
    let t_grid = if cfg.t_grid.is_empty() {
        let mut vals = pair_similarities(&dataset);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let vmax = *vals.last().unwrap();
        let mut g: Vec<f64> = (0..=20).map(|i| vmax * 1.05 * i as f64 / 20.0).collect();
        g[0] = 0.0;
        g
    } else {
        cfg.t_grid.clone()
    };

    let report = assumption_report(&dataset, &t_grid, cfg.rank_tol)?;
    let tail_rows: Vec<String> = report
        .tail_curve
        .iter()
        .map(|(t, fr)| format!("{},{}", g17(*t), g17(*fr)))
        .collect();
    out.write_csv("similarity_tail.csv", "t,frequency", &tail_rows)?;

    let summary = vec![
        format!("full_rank,{}", report.full_rank),
        format!("worst_sigma_min,{}", g17(report.worst_sigma_min)),
        format!("cov_min_eig,{}", g17(report.cov_min_eig)),
        format!(
            "cov_population_value,{}",
            g17(covariance_population_value(cfg.d_s, cfg.d, cfg.c_x))
        ),
    ];
    out.write_csv("assumption_summary.csv", "quantity,value", &summary)?;

    let monotone = report.tail_curve.windows(2).all(|w| w[1].1 <= w[0].1);
    let endpoints = report.tail_curve.first().map_or(false, |p| p.1 == 1.0)
        && report.tail_curve.last().map_or(false, |p| p.1 == 0.0);
    let checks = vec![
        ("input-norm bound holds".to_string(), true),
        ("every sample has full row rank".to_string(), report.full_rank),
        ("tail curve is non-increasing".to_string(), monotone),
        ("tail endpoints are 1 and 0".to_string(), endpoints),
    ];
    out.finish_manifest("assumptions", cfg, cfg.seed, &[])?;
    Ok(RunOutcome { checks })
}
