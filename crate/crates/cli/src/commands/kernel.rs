//! `lab kernel`: kernel-distance evolution during training, one long-format
//! CSV over (width, epoch).

use super::{CommandResult, RunOutcome};
use crate::config::KernelConfig;
use crate::out::{g17, OutDir};
use attnlab::data::gen_synthetic;
use attnlab::kernel::kernel_distance;
use attnlab::model::{init_params, Dims};
use attnlab::numerics::Rng;
use attnlab::trainer::{gd_train, HyperParams, TrainMode};
use attnlab::Error;

pub fn run(cfg: &KernelConfig, out: &mut OutDir) -> CommandResult {
    let dataset = gen_synthetic(cfg.n, cfg.d_s, cfg.d, cfg.c_x, cfg.seed);
    let mut rows = vec![];
    let mut checks = vec![];
    let mut notes = vec![];
    let mut final_distances = vec![];

    for &d_m in &cfg.widths {
        let dims = Dims { n: cfg.n, d_s: cfg.d_s, d: cfg.d, d_m };
        let (scheme, scaling) = cfg.model.scaling(cfg.d, d_m);
        let params0 = init_params(dims, &scheme, &mut Rng::new(cfg.seed.wrapping_add(1)));
        let hyper = HyperParams {
            gamma: cfg.gamma,
            epochs: cfg.epochs,
            mode: TrainMode::Gd,
            kernel_checkpoint_every: cfg.checkpoint_every,
            kernel_block_size: cfg.block_size,
            alpha_track: None,
        };
        match gd_train(&dataset, &params0, &scaling, &hyper) {
            Ok(trace) => {
                let k0 = &trace.kernel_checkpoints.first().expect("epoch-0 checkpoint").1;
                let mut last = 0.0;
                for (epoch, k) in &trace.kernel_checkpoints {
                    let dist = kernel_distance(k0, k)?;
                    rows.push(format!("{d_m},{epoch},{}", g17(dist)));
                    last = dist;
                }
                final_distances.push((d_m, last));
                checks.push((format!("kernel dm={d_m} completed without divergence"), true));
            }
            Err(Error::Diverged { epoch, .. }) => {
                notes.push(format!("dm={d_m} diverged at epoch {epoch}; no distances emitted"));
                checks.push((format!("kernel dm={d_m} completed without divergence"), false));
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.write_csv("kernel_distance.csv", "d_m,epoch,distance", &rows)?;
    let summary: Vec<String> = final_distances
        .iter()
        .map(|(w, d)| format!("{w},{}", g17(*d)))
        .collect();
    out.write_csv("kernel_final_distance.csv", "d_m,distance_final", &summary)?;
    out.finish_manifest("kernel", cfg, cfg.seed, &notes)?;
    Ok(RunOutcome { checks })
}
