//! `lab limit`: closed-form limiting kernel versus its Monte-Carlo estimate,
//! plus the empirical kernel's approach to the limit across widths.

use super::{CommandResult, RunOutcome};
use crate::config::LimitConfig;
use crate::out::{g17, OutDir};
use attnlab::data::gen_synthetic;
use attnlab::kernel::{empirical_ntk, limiting_ntk_closed, limiting_ntk_mc};
use attnlab::model::{init_params, tau0_inv, Dims, InitScheme, Pooling, ScalingScheme};
use attnlab::numerics::Rng;

pub fn run(cfg: &LimitConfig, out: &mut OutDir) -> CommandResult {
    let dataset = gen_synthetic(cfg.n, cfg.d_s, cfg.d, cfg.c_x, cfg.seed);
    let (closed, zero_rows) = limiting_ntk_closed(&dataset);
    let mut notes = vec![];
    if !zero_rows.is_empty() {
        notes.push(format!("zero token-average rows (entries set by limit): {zero_rows:?}"));
    }
    let (mc, stderr) = limiting_ntk_mc(&dataset, cfg.mc_samples, &mut Rng::new(cfg.seed ^ 0x6d63))?;

    let mut rows = vec![];
    let mut max_abs_z = 0.0f64;
    for i in 0..cfg.n {
        for j in i..cfg.n {
            let c = closed.matrix[(i, j)];
            let m = mc.matrix[(i, j)];
            let se = stderr[(i, j)];
            let z = if se > 0.0 { (m - c) / se } else { 0.0 };
            max_abs_z = max_abs_z.max(z.abs());
            rows.push(format!("{i},{j},{},{},{},{}", g17(c), g17(m), g17(se), g17(z)));
        }
    }
    out.write_csv("limit_vs_mc.csv", "i,j,closed,mc_mean,mc_stderr,z", &rows)?;

    // Empirical kernel at initialization, NTK init with tau0 = 1/d_m.
    let mut width_rows = vec![];
    for &d_m in &cfg.widths {
        let dims = Dims { n: cfg.n, d_s: cfg.d_s, d: cfg.d, d_m };
        let scheme = InitScheme::ntk();
        let scaling = ScalingScheme::new(tau0_inv(d_m), scheme.tau1(d_m), Pooling::Sum);
        let params = init_params(dims, &scheme, &mut Rng::new(cfg.seed.wrapping_add(1)));
        let emp = empirical_ntk(&dataset, &params, &scaling, cfg.block_size)?;
        let rel = emp.matrix.sub(&closed.matrix).frobenius_norm() / closed.matrix.frobenius_norm();
        width_rows.push(format!("{d_m},{}", g17(rel)));
    }
    out.write_csv("empirical_vs_limit.csv", "d_m,rel_frobenius_error", &width_rows)?;

    let checks = vec![(format!("max |z| = {max_abs_z:.2} <= 4"), max_abs_z <= 4.0)];
    out.finish_manifest("limit", cfg, cfg.seed, &notes)?;
    Ok(RunOutcome { checks })
}
