//! `lab hessian`: Hessian spectral norm against width with a log-log slope
//! footer, the scalar-token single-input setting.

use super::{CommandResult, RunOutcome};
use crate::config::HessianConfig;
use crate::out::{g17, OutDir};
use attnlab::bounds::{fit_loglog_slope, hessian_width_slope, WidthSweep};

pub fn run(cfg: &HessianConfig, out: &mut OutDir) -> CommandResult {
    let mut checks = vec![];
    let mut rows = vec![];
    let footer;
    if cfg.widths.len() < 2 {
        // Single width: norms are still reported, the slope is undefined.
        let sweep = WidthSweep {
            widths: vec![cfg.widths[0], cfg.widths[0]],
            d_s: cfg.d_s,
            c_x: cfg.c_x,
            init: cfg.init.kind(),
            tau0_rule: cfg.tau0.rule(),
            seeds: cfg.seeds.clone(),
            hvp_step: cfg.hvp_step,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        };
        let res = hessian_width_slope(&sweep)?;
        for (s, per_width) in res.norms.iter().enumerate() {
            let e = &per_width[0];
            rows.push(format!(
                "{},{},{},{}",
                e.width,
                cfg.seeds[s],
                g17(e.spectral_norm),
                e.iterations
            ));
        }
        footer = "# fitted_slope NA (single width)".to_string();
        checks.push(("hessian sweep completed".into(), true));
    } else {
        let sweep = WidthSweep {
            widths: cfg.widths.clone(),
            d_s: cfg.d_s,
            c_x: cfg.c_x,
            init: cfg.init.kind(),
            tau0_rule: cfg.tau0.rule(),
            seeds: cfg.seeds.clone(),
            hvp_step: cfg.hvp_step,
            tol: cfg.tol,
            max_iter: cfg.max_iter,
        };
        let res = hessian_width_slope(&sweep)?;
        for (s, per_width) in res.norms.iter().enumerate() {
            for e in per_width {
                rows.push(format!(
                    "{},{},{},{}",
                    e.width,
                    cfg.seeds[s],
                    g17(e.spectral_norm),
                    e.iterations
                ));
            }
        }
        footer = format!("# fitted_slope {}", g17(res.mean_slope));
        checks.push(("hessian sweep completed".into(), true));

        // Slope-fit sanity against a synthetic exact d_m^{-1/2} series.
        let xs: Vec<f64> = cfg.widths.iter().map(|&w| (w as f64).ln()).collect();
        let ys: Vec<f64> = cfg.widths.iter().map(|&w| (w as f64).powf(-0.5).ln()).collect();
        let s = fit_loglog_slope(&xs, &ys)?;
        checks.push(("slope fit recovers exact -1/2 on synthetic series".into(), (s + 0.5).abs() < 1e-10));

        let per_seed: Vec<String> = cfg
            .seeds
            .iter()
            .zip(&res.slopes)
            .map(|(s, sl)| format!("{s},{}", g17(*sl)))
            .collect();
        out.write_csv_with_footer(
            "hessian_slopes.csv",
            "seed,slope",
            &per_seed,
            Some(&format!("# mean_slope {}", g17(res.mean_slope))),
        )?;
    }
    out.write_csv_with_footer("hessian.csv", "d_m,seed,norm,iterations", &rows, Some(&footer))?;
    out.finish_manifest("hessian", cfg, *cfg.seeds.first().unwrap_or(&0), &[])?;
    Ok(RunOutcome { checks })
}
