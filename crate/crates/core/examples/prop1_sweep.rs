// Scratch: verifies that the near-interpolation sweep produces a healthy
// passing subset and zero envelope/alpha violations before the thresholds
// are frozen into the acceptance suite.
use attnlab::bounds::{alpha, check_conditions, convergence_envelope, theory_constants, CRadii};
use attnlab::data::gen_synthetic;
use attnlab::model::{batch_features, batch_forward, init_params, loss, tau0_inv_sqrt, Dims, InitScheme, Pooling, ScalingScheme};
use attnlab::numerics::Rng;
use attnlab::trainer::{gd_train, HyperParams};

fn main() {
    let mut tried = 0;
    let mut passed = 0;
    let mut violations = 0;
    for &n in &[2usize, 3] {
        for &d in &[4usize, 8] {
            for &d_m in &[1024usize, 4096] {
                for scheme_id in 0..2 {
                    for &eps in &[0.002f64, 0.02, 0.3] {
                        tried += 1;
                        let seed = 1000 + tried as u64;
                        let d_s = 1;
                        let mut ds = gen_synthetic(n, d_s, d, 1.0, seed);
                        let dims = Dims { n, d_s, d, d_m };
                        let scheme = if scheme_id == 0 { InitScheme::lecun(d, d_m) } else { InitScheme::ntk() };
                        let scaling = ScalingScheme::new(tau0_inv_sqrt(d_m), scheme.tau1(d_m), Pooling::Sum);
                        let params = init_params(dims, &scheme, &mut Rng::new(seed + 7));
                        let f0 = batch_forward(&ds, &params, &scaling).unwrap();
                        let mut rng = Rng::new(seed + 13);
                        ds.targets = f0.iter().map(|f| f + eps * rng.next_normal()).collect();
                        let loss0 = loss(&ds, &params, &scaling).unwrap();
                        let consts = theory_constants(&params, &scaling, CRadii::default(), 1.0, n, loss0).unwrap();
                        let fp = batch_features(&ds, &params, &scaling).unwrap();
                        let a0 = alpha(&fp).unwrap();
                        let rep = check_conditions(&consts, a0, loss0);
                        if !rep.pass {
                            continue;
                        }
                        passed += 1;
                        let mut hyper = HyperParams::gd(rep.gamma_max, 200);
                        hyper.alpha_track = Some(10);
                        let trace = match gd_train(&ds, &params, &scaling, &hyper) {
                            Ok(t) => t,
                            Err(e) => {
                                println!("PASS config diverged?! {e}");
                                violations += 1;
                                continue;
                            }
                        };
                        let env = convergence_envelope(&trace, a0, rep.gamma_max);
                        let alpha_ok = trace
                            .records
                            .iter()
                            .filter_map(|r| r.alpha_t)
                            .all(|at| at >= a0 / 2.0);
                        if !(env.dominated && alpha_ok) {
                            violations += 1;
                            println!(
                                "VIOLATION n={n} d={d} dm={d_m} scheme={scheme_id} eps={eps}: dominated={} alpha_ok={alpha_ok}",
                                env.dominated
                            );
                        }
                    }
                }
            }
        }
    }
    println!("tried={tried} passed={passed} violations={violations}");
}
