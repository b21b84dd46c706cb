//! `lab train`: gradient-descent (or SGD) runs over a width list, one trace
//! CSV per width plus the convergence-condition report.

use super::{CommandResult, RunOutcome};
use crate::config::TrainConfig;
use crate::out::{g17, g17_opt, OutDir};
use anyhow::{bail, Context};
use attnlab::bounds::{alpha, check_conditions, theory_constants, CRadii};
use attnlab::data::gen_synthetic;
use attnlab::model::{batch_features, init_params, loss, Dims};
use attnlab::numerics::Rng;
use attnlab::trainer::{gd_train, sgd_train, HyperParams, TrainMode, TrainTrace};
use attnlab::Error;

pub const TRACE_HEADER: &str = "epoch,loss,move_q,move_k,move_v,move_o,alpha_t,envelope";

pub fn trace_rows(trace: &TrainTrace) -> Vec<String> {
    trace
        .records
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                g17(r.loss),
                g17(r.move_q),
                g17(r.move_k),
                g17(r.move_v),
                g17(r.move_o),
                g17_opt(r.alpha_t),
                g17_opt(r.envelope),
            )
        })
        .collect()
}

pub fn run(cfg: &TrainConfig, out: &mut OutDir) -> CommandResult {
    crate::config::validate_positive("c_x", cfg.c_x)?;
    if cfg.gamma < 0.0 || !cfg.gamma.is_finite() {
        bail!("gamma must be finite and non-negative");
    }
    let dataset = gen_synthetic(cfg.n, cfg.d_s, cfg.d, cfg.c_x, cfg.seed);
    let mut checks = vec![];
    let mut notes = vec![];
    if cfg.init_from.is_some() && cfg.widths.len() != 1 {
        bail!("init_from requires a single-width run");
    }

    for &d_m in &cfg.widths {
        let dims = Dims { n: cfg.n, d_s: cfg.d_s, d: cfg.d, d_m };
        let (scheme, scaling) = cfg.model.scaling(cfg.d, d_m);
        let params0 = match &cfg.init_from {
            Some(path) => {
                let p = crate::checkpoint::load_params(std::path::Path::new(path))?;
                if p.dims.d_m != d_m || p.dims.d != cfg.d || p.dims.d_s != cfg.d_s {
                    bail!("checkpoint dims do not match the configured run");
                }
                p
            }
            None => init_params(dims, &scheme, &mut Rng::new(cfg.seed.wrapping_add(1))),
        };

        let mut hyper = HyperParams {
            gamma: cfg.gamma,
            epochs: cfg.epochs,
            mode: if cfg.mode == "sgd" { TrainMode::Sgd } else { TrainMode::Gd },
            kernel_checkpoint_every: 0,
            kernel_block_size: 8,
            alpha_track: (cfg.alpha_track_every > 0).then_some(cfg.alpha_track_every),
        };

        // Condition report at initialization.
        let loss0 = loss(&dataset, &params0, &scaling).context("initial loss")?;
        let f_pre0 = batch_features(&dataset, &params0, &scaling)?;
        let a0 = alpha(&f_pre0)?;
        let consts = theory_constants(&params0, &scaling, CRadii::default(), cfg.c_x, cfg.n, loss0)?;
        let report = check_conditions(&consts, a0, loss0);
        let cond_rows = vec![
            format!("alpha,{}", g17(report.alpha)),
            format!("lhs_condition_1,{}", g17(report.lhs1)),
            format!("rhs_condition_1,{}", g17(report.rhs1)),
            format!("pass_condition_1,{}", report.pass1),
            format!("lhs_condition_2,{}", g17(report.lhs2)),
            format!("rhs_condition_2,{}", g17(report.rhs2)),
            format!("pass_condition_2,{}", report.pass2),
            format!("pass,{}", report.pass),
            format!("gamma_max,{}", g17(report.gamma_max)),
        ];
        out.write_csv(&format!("conditions_dm{d_m}.csv"), "quantity,value", &cond_rows)?;

        let result = match hyper.mode {
            TrainMode::Gd => gd_train(&dataset, &params0, &scaling, &hyper),
            TrainMode::Sgd => {
                hyper.mode = TrainMode::Sgd;
                sgd_train(&dataset, &params0, &scaling, &hyper, &mut Rng::new(cfg.seed ^ 0x5eed))
                    .map(|(t, _hat)| t)
            }
        };
        match result {
            Ok(trace) => {
                out.write_csv(&format!("trace_dm{d_m}.csv"), TRACE_HEADER, &trace_rows(&trace))?;
                if cfg.save_params {
                    let p = out.dir.join(format!("params_dm{d_m}.txt"));
                    crate::checkpoint::save_params(&trace.final_params, &p)?;
                    out.register(p);
                }
                checks.push((format!("train dm={d_m} completed without divergence"), true));
            }
            Err(Error::Diverged { epoch, trace }) => {
                out.write_csv(&format!("trace_dm{d_m}.csv"), TRACE_HEADER, &trace_rows(&trace))?;
                notes.push(format!("trace_dm{d_m}.csv is PARTIAL: diverged at epoch {epoch}"));
                checks.push((format!("train dm={d_m} completed without divergence"), false));
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.finish_manifest("train", cfg, cfg.seed, &notes)?;
    Ok(RunOutcome { checks })
}
