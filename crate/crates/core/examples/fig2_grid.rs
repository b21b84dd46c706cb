// Scratch sweep used to pin the synthetic-experiment defaults (data scale,
// convergence ratios). Not part of the library surface.
use attnlab::data::gen_synthetic;
use attnlab::model::{init_params, tau0_inv_sqrt, Dims, InitScheme, Pooling, ScalingScheme};
use attnlab::numerics::Rng;
use attnlab::trainer::{gd_train, HyperParams};
use std::time::Instant;

fn main() {
    let (n, d_s, d) = (100usize, 10usize, 100usize);
    let args: Vec<String> = std::env::args().collect();
    let cxs: Vec<f64> = if args.len() > 1 {
        args[1..].iter().map(|s| s.parse().unwrap()).collect()
    } else {
        vec![0.1, 0.141, 0.2]
    };
    for &c_x in &cxs {
        println!("== C_x = {c_x} (avg pooling, lecun, tau0=dm^-1/2) ==");
        let seed: u64 = std::env::var("GRID_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
        let ds = gen_synthetic(n, d_s, d, c_x, seed);
        for &d_m in &[10usize, 1000, 4000] {
            let t0 = Instant::now();
            let dims = Dims { n, d_s, d, d_m };
            let scheme = InitScheme::lecun(d, d_m);
            let params = init_params(dims, &scheme, &mut Rng::new(seed + 1));
            let scaling = ScalingScheme::new(tau0_inv_sqrt(d_m), scheme.tau1(d_m), Pooling::Average);
            let gamma: f64 = std::env::var("GRID_GAMMA").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
            let hyper = HyperParams::gd(gamma, std::env::var("GRID_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(400));
            match gd_train(&ds, &params, &scaling, &hyper) {
                Ok(trace) => {
                    let l0 = trace.initial_loss();
                    let ratio = trace.final_loss() / l0;
                    let mono = trace.records.windows(2).all(|w| w[1].loss <= w[0].loss + 1e-12 * l0);
                    let mut msg = format!(
                        "  dm={d_m}: l0={l0:.2} ratio={ratio:.3e} mono={mono} ({:.0?})",
                        t0.elapsed()
                    );
                    if d_m >= 1000 {
                        let mv = attnlab::trainer::weight_movement(&trace);
                        let names = ["Q", "K", "V", "O"];
                        for g in 0..4 {
                            let inc1 = (mv[1][g] - mv[0][g]).abs();
                            let mut worst: f64 = 0.0;
                            let mut argmax = 0;
                            for t in 51..mv.len() {
                                let inc = (mv[t][g] - mv[t - 1][g]).abs();
                                if inc / inc1 > worst { worst = inc / inc1; argmax = t; }
                            }
                            msg += &format!(" {}:{:.3}@{}", names[g], worst, argmax);
                        }
                    }
                    println!("{msg}");
                }
                Err(e) => println!("  dm={d_m}: {e} ({:.0?})", t0.elapsed()),
            }
        }
    }
}
