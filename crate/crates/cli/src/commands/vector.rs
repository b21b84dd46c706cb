//! `lab vector`: the same source vectors fed both ways (one token of
//! dimension d versus d scalar tokens), trained side by side.

use super::{CommandResult, RunOutcome};
use crate::commands::train::{trace_rows, TRACE_HEADER};
use crate::config::VectorConfig;
use crate::out::OutDir;
use attnlab::data::{vectorize_mode, VectorMode};
use attnlab::model::{init_params, tau0_inv, Dims, InitScheme, Pooling, ScalingScheme};
use attnlab::numerics::{gaussian_matrix, Rng};
use attnlab::trainer::{gd_train, HyperParams};
use attnlab::Error;

pub fn run(cfg: &VectorConfig, out: &mut OutDir) -> CommandResult {
    // One vector draw shared by both modes.
    let mut rng = Rng::new(cfg.seed);
    let vectors = gaussian_matrix(cfg.n, cfg.d_tilde, 1.0, &mut rng);
    let targets: Vec<f64> = (0..cfg.n).map(|_| rng.next_normal()).collect();

    let mut checks = vec![];
    let mut notes = vec![];
    for (mode, name) in [(VectorMode::Embedding, "embedding"), (VectorMode::Sequence, "sequence")] {
        let dataset = vectorize_mode(&vectors, &targets, mode)?;
        let (d_s, d) = (dataset.seq_len(), dataset.token_dim());
        let dims = Dims { n: cfg.n, d_s, d, d_m: cfg.d_m };
        let scheme = InitScheme::lecun(d, cfg.d_m);
        let scaling = ScalingScheme::new(tau0_inv(cfg.d_m), scheme.tau1(cfg.d_m), Pooling::Average);
        let params0 = init_params(dims, &scheme, &mut Rng::new(cfg.seed.wrapping_add(1)));
        let hyper = HyperParams::gd(cfg.gamma, cfg.epochs);
        match gd_train(&dataset, &params0, &scaling, &hyper) {
            Ok(trace) => {
                out.write_csv(&format!("vector_{name}.csv"), TRACE_HEADER, &trace_rows(&trace))?;
                checks.push((format!("{name} mode completed without divergence"), true));
            }
            Err(Error::Diverged { epoch, trace }) => {
                out.write_csv(&format!("vector_{name}.csv"), TRACE_HEADER, &trace_rows(&trace))?;
                notes.push(format!("vector_{name}.csv is PARTIAL: diverged at epoch {epoch}"));
                checks.push((format!("{name} mode completed without divergence"), false));
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.finish_manifest("vector", cfg, cfg.seed, &notes)?;
    Ok(RunOutcome { checks })
}
