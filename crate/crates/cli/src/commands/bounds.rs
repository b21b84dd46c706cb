//! `lab bounds`: the full diagnostic report for one configuration —
//! lambda-bars, rho/z, Lipschitz constants, both convergence conditions,
//! the step-size cap, gradient-norm caps, and the Gershgorin bound.

use super::{CommandResult, RunOutcome};
use crate::config::BoundsConfig;
use crate::out::{g17, OutDir};
use attnlab::bounds::{
    alpha, build_phi, check_conditions, gershgorin_lambda_min_lower, gradient_norm_report,
    lambda0_lower_bound, theory_constants, CRadii,
};
use attnlab::data::gen_synthetic;
use attnlab::model::{batch_features, batch_forward, init_params, loss, Dims};
use attnlab::numerics::{sym_min_eigen, Rng};

pub fn run(cfg: &BoundsConfig, out: &mut OutDir) -> CommandResult {
    let mut dataset = gen_synthetic(cfg.n, cfg.d_s, cfg.d, cfg.c_x, cfg.seed);
    let dims = Dims { n: cfg.n, d_s: cfg.d_s, d: cfg.d, d_m: cfg.d_m };
    let (scheme, scaling) = cfg.model.scaling(cfg.d, cfg.d_m);
    let params0 = init_params(dims, &scheme, &mut Rng::new(cfg.seed.wrapping_add(1)));

    if cfg.target_eps > 0.0 {
        // Near-interpolating targets: y = f(theta0) + eps * g.
        let f0 = batch_forward(&dataset, &params0, &scaling)?;
        let mut rng = Rng::new(cfg.seed ^ 0x7a67);
        dataset.targets = f0.iter().map(|f| f + cfg.target_eps * rng.next_normal()).collect();
    }

    let loss0 = loss(&dataset, &params0, &scaling)?;
    let consts = theory_constants(&params0, &scaling, CRadii::default(), cfg.c_x, cfg.n, loss0)?;
    let f_pre0 = batch_features(&dataset, &params0, &scaling)?;
    let a0 = alpha(&f_pre0)?;
    let report = check_conditions(&consts, a0, loss0);
    let gnorm = gradient_norm_report(&dataset, &params0, &scaling, &consts)?;
    let phi = build_phi(&dataset, &params0, scaling.tau0)?;
    let gersh = gershgorin_lambda_min_lower(&phi);
    let exact_phi_min = sym_min_eigen(&phi.gram_nt())?;
    let lambda0 = lambda0_lower_bound(scheme.eta_v, gersh.max(0.0));

    let mut rows = vec![
        format!("loss0,{}", g17(loss0)),
        format!("lambda_q,{}", g17(consts.lambda_q)),
        format!("lambda_k,{}", g17(consts.lambda_k)),
        format!("lambda_v,{}", g17(consts.lambda_v)),
        format!("lambda_o,{}", g17(consts.lambda_o)),
        format!("rho,{}", g17(consts.rho)),
        format!("z,{}", g17(consts.z)),
        format!("c1,{}", g17(consts.c1)),
        format!("c2,{}", g17(consts.c2)),
        format!("c3,{}", g17(consts.c3)),
        format!("c_step,{}", g17(consts.c_step)),
        format!("gamma_max,{}", g17(report.gamma_max)),
        format!("alpha,{}", g17(report.alpha)),
        format!("lhs_condition_1,{}", g17(report.lhs1)),
        format!("rhs_condition_1,{}", g17(report.rhs1)),
        format!("pass_condition_1,{}", report.pass1),
        format!("lhs_condition_2,{}", g17(report.lhs2)),
        format!("rhs_condition_2,{}", g17(report.rhs2)),
        format!("pass_condition_2,{}", report.pass2),
        format!("pass,{}", report.pass),
        format!("gershgorin_lower,{}", g17(gersh)),
        format!("phi_gram_min_eig,{}", g17(exact_phi_min)),
        format!("lambda0_lower_diag,{}", g17(lambda0)),
        format!("grad_caps_applicable,{}", gnorm.applicable),
        format!("residual_norm,{}", g17(gnorm.residual_norm)),
    ];
    for r in &gnorm.rows {
        rows.push(format!("grad_norm_actual_{},{}", r.group, g17(r.actual)));
        rows.push(format!("grad_norm_bound_{},{}", r.group, g17(r.bound)));
        rows.push(format!("grad_norm_slack_{},{}", r.group, g17(r.slack)));
    }
    out.write_csv("bounds.csv", "quantity,value", &rows)?;

    let mut text = String::new();
    text.push_str(&format!(
        "Convergence-condition report (N={}, d_s={}, d={}, d_m={})\n",
        cfg.n, cfg.d_s, cfg.d, cfg.d_m
    ));
    text.push_str(&format!("  initial loss      : {loss0:.6e}\n"));
    text.push_str(&format!("  alpha             : {:.6e}\n", report.alpha));
    text.push_str(&format!(
        "  condition 1       : {:.6e} >= {:.6e}  -> {}\n",
        report.lhs1,
        report.rhs1,
        if report.pass1 { "PASS" } else { "FAIL" }
    ));
    text.push_str(&format!(
        "  condition 2       : {:.6e} >= {:.6e}  -> {}\n",
        report.lhs2,
        report.rhs2,
        if report.pass2 { "PASS" } else { "FAIL" }
    ));
    text.push_str(&format!("  admissible gamma  : <= {:.6e}\n", report.gamma_max));
    text.push_str(&format!(
        "  Gershgorin bound  : {gersh:.6e} (exact min eig {exact_phi_min:.6e})\n"
    ));
    text.push_str(&format!(
        "  gradient caps     : {}\n",
        if gnorm.applicable { "applicable, all slacks reported" } else { "NOT APPLICABLE (lambda caps violated)" }
    ));
    out.write_text("bounds.txt", &text)?;

    let mut checks = vec![("Gershgorin bound below exact minimum eigenvalue".to_string(),
        gersh <= exact_phi_min + 1e-10 * exact_phi_min.abs().max(1.0))];
    if gnorm.applicable {
        checks.push((
            "gradient-norm caps hold with non-negative slack".to_string(),
            gnorm.rows.iter().all(|r| r.slack >= 0.0),
        ));
    }
    out.finish_manifest("bounds", cfg, cfg.seed, &[])?;
    Ok(RunOutcome { checks })
}
