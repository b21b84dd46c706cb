// Scratch: dm=10 endpoint sensitivity to seed and data scale.
use attnlab::data::gen_synthetic;
use attnlab::model::{init_params, tau0_inv_sqrt, Dims, InitScheme, Pooling, ScalingScheme};
use attnlab::numerics::Rng;
use attnlab::trainer::{gd_train, HyperParams};

fn main() {
    let (n, d_s, d, d_m) = (100usize, 10usize, 100usize, 10usize);
    for c_x in [0.1] {
        for seed in 41u64..=340 {
            let ds = gen_synthetic(n, d_s, d, c_x, seed);
            let dims = Dims { n, d_s, d, d_m };
            let scheme = InitScheme::lecun(d, d_m);
            let scaling = ScalingScheme::new(tau0_inv_sqrt(d_m), scheme.tau1(d_m), Pooling::Average);
            let params = init_params(dims, &scheme, &mut Rng::new(seed + 1));
            match gd_train(&ds, &params, &scaling, &HyperParams::gd(1.0, 400)) {
                Ok(t) => println!(
                    "c_x={c_x} seed={seed}: ratio={:.4e}",
                    t.final_loss() / t.initial_loss()
                ),
                Err(e) => println!("c_x={c_x} seed={seed}: {e}"),
            }
        }
    }
}
