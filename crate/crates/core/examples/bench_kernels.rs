#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

// Scratch micro-benchmark for the hot matmul shapes and grad_sample.
use attnlab::numerics::{gaussian_matrix, Matrix, Rng};
use std::time::Instant;

fn time<F: FnMut() -> Matrix>(name: &str, flops: f64, reps: usize, mut f: F) {
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        sink += f().data()[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("{name}: {:.2} Gflop/s (sink {sink:.3e})", flops * reps as f64 / dt / 1e9);
}

fn grad_probe() {
    use attnlab::data::gen_synthetic;
    use attnlab::grad::grad_sample;
    use attnlab::model::{init_params, tau0_inv_sqrt, Dims, InitScheme, Pooling, ScalingScheme};
    let d_m = 4000;
    let dims = Dims { n: 1, d_s: 10, d: 100, d_m };
    let ds = gen_synthetic(1, 10, 100, 1.0, 3);
    let scheme = InitScheme::lecun(100, d_m);
    let params = init_params(dims, &scheme, &mut Rng::new(4));
    let scaling = ScalingScheme::new(tau0_inv_sqrt(d_m), 1.0, Pooling::Average);
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..100 {
        sink += grad_sample(&ds.inputs[0], &params, &scaling).unwrap().g_wo[0];
    }
    println!(
        "grad_sample dm=4000: {:.1} ms each (sink {sink:.3e})",
        t0.elapsed().as_secs_f64() * 10.0
    );
}

fn main() {
    let mut rng = Rng::new(1);
    let x = gaussian_matrix(10, 100, 1.0, &mut rng);
    let w = gaussian_matrix(4000, 100, 1.0, &mut rng);
    let g = gaussian_matrix(10, 4000, 1.0, &mut rng);
    let bx = gaussian_matrix(10, 100, 1.0, &mut rng);
    let beta = gaussian_matrix(10, 10, 1.0, &mut rng);
    let v = gaussian_matrix(10, 4000, 1.0, &mut rng);

    time("x*W^T (10x100 . 4000x100)", 2.0 * 10.0 * 100.0 * 4000.0, 200, || x.matmul_nt(&w));
    time("G^T*BX (10x4000 ^T 10x100)", 2.0 * 10.0 * 4000.0 * 100.0, 200, || g.matmul_tn(&bx));
    time("beta*V (10x10 . 10x4000)", 2.0 * 10.0 * 10.0 * 4000.0, 2000, || beta.matmul(&v));
    time("V*G^T (10x4000 . 10x4000)", 2.0 * 10.0 * 10.0 * 4000.0, 2000, || v.matmul_nt(&g));
    grad_probe();
}
