//! Closed-form gradients of the network output and the squared loss with
//! respect to all four weight groups, plus the finite-difference oracle that
//! owns their correctness.

use crate::data::Dataset;
use crate::model::{forward_trace, Dims, ModelParams, ScalingScheme};
use crate::numerics::Matrix;
use crate::{Error, Result};
use rayon::prelude::*;

/// Fixed chunk size for parallel per-sample reductions. Chunk boundaries and
/// the merge order do not depend on the thread count, so results are
/// bit-identical for any scheduling.
pub(crate) const REDUCE_CHUNK: usize = 8;

#[derive(Debug, Clone)]
pub struct ParamGrad {
    pub g_wq: Matrix,
    pub g_wk: Matrix,
    pub g_wv: Matrix,
    pub g_wo: Vec<f64>,
    pub dims: Dims,
}

impl ParamGrad {
    pub fn zeros(dims: Dims) -> Self {
        ParamGrad {
            g_wq: Matrix::zeros(dims.d_m, dims.d),
            g_wk: Matrix::zeros(dims.d_m, dims.d),
            g_wv: Matrix::zeros(dims.d_m, dims.d),
            g_wo: vec![0.0; dims.d_m],
            dims,
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, s: f64) {
        self.g_wq.add_scaled(&other.g_wq, s);
        self.g_wk.add_scaled(&other.g_wk, s);
        self.g_wv.add_scaled(&other.g_wv, s);
        for (a, b) in self.g_wo.iter_mut().zip(&other.g_wo) {
            *a += s * b;
        }
    }

    /// Frobenius norms per group, in (Q, K, V, O) order.
    pub fn group_norms(&self) -> [f64; 4] {
        [
            self.g_wq.frobenius_norm(),
            self.g_wk.frobenius_norm(),
            self.g_wv.frobenius_norm(),
            crate::numerics::norm2(&self.g_wo),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.g_wq.is_finite()
            && self.g_wk.is_finite()
            && self.g_wv.is_finite()
            && self.g_wo.iter().all(|v| v.is_finite())
    }
}

impl ModelParams {
    /// In-place theta += s * grad, all four groups simultaneously.
    pub fn add_scaled_grad(&mut self, g: &ParamGrad, s: f64) {
        self.w_q.add_scaled(&g.g_wq, s);
        self.w_k.add_scaled(&g.g_wk, s);
        self.w_v.add_scaled(&g.g_wv, s);
        for (a, b) in self.w_o.iter_mut().zip(&g.g_wo) {
            *a += s * b;
        }
    }
}

/// Analytic gradient of f(X; theta) for one sample.
///
/// With beta_i the attention rows, g_i = w_O .* relu'(W_V X^T beta_i) and
/// s_i = (diag(beta_i) - beta_i beta_i^T) X W_V^T g_i:
///   d f / d w_O = f_pre
///   d f / d W_V = s1 * sum_i g_i (beta_i^T X)
///   d f / d W_Q = tau0 * s1 * W_K X^T (sum_i s_i x_i^T)
///   d f / d W_K = tau0 * s1 * W_Q (sum_i x_i s_i^T) X
/// where s1 is tau1 (sum pooling) or tau1/d_s (average pooling).
pub fn grad_sample(x: &Matrix, params: &ModelParams, scaling: &ScalingScheme) -> Result<ParamGrad> {
    Ok(grad_sample_with_output(x, params, scaling)?.0)
}

/// grad_sample plus the forward value from the same pass.
pub fn grad_sample_with_output(
    x: &Matrix,
    params: &ModelParams,
    scaling: &ScalingScheme,
) -> Result<(ParamGrad, f64)> {
    let d_s = x.rows();
    let trace = forward_trace(x, params, scaling)?;
    let scale = scaling.feature_scale(d_s);
    let d_m = params.dims.d_m;

    // G rows: g_i = w_O .* relu'(preact_i); relu'(0) = 0.
    let mut g = Matrix::zeros(d_s, d_m);
    for i in 0..d_s {
        let pre = trace.preact.row(i);
        let grow = g.row_mut(i);
        for k in 0..d_m {
            if pre[k] > 0.0 {
                grow[k] = params.w_o[k];
            }
        }
    }

    // d f / d w_O = f_pre (exactly the features).
    let g_wo = trace.f_pre.clone();

    // d f / d W_V = scale * G^T (beta X).
    let bx = trace.beta.matmul(x); // d_s x d
    let g_wv = g.matmul_tn(&bx).scaled(scale);

    // u_i = X W_V^T g_i: columns of V G^T with V = X W_V^T.
    let v = x.matmul_nt(&params.w_v); // d_s x d_m
    let u = v.matmul_nt(&g); // d_s x d_s, u[(j, i)] = (X W_V^T g_i)_j

    // s_i = beta_i .* u_i - beta_i (beta_i . u_i), stored as rows of S.
    let mut s = Matrix::zeros(d_s, d_s);
    for i in 0..d_s {
        let beta_i = trace.beta.row(i);
        let mut bu = 0.0;
        for j in 0..d_s {
            bu += beta_i[j] * u[(j, i)];
        }
        let srow = s.row_mut(i);
        for j in 0..d_s {
            srow[j] = beta_i[j] * (u[(j, i)] - bu);
        }
    }

    let k_mat = x.matmul_nt(&params.w_k); // d_s x d_m
    let q_mat = x.matmul_nt(&params.w_q); // d_s x d_m
    let ts = scaling.tau0 * scale;
    // W_Q: K^T (S^T X) ; W_K: Q^T (S X).
    let g_wq = k_mat.matmul_tn(&s.matmul_tn(x)).scaled(ts);
    let g_wk = q_mat.matmul_tn(&s.matmul(x)).scaled(ts);

    Ok((ParamGrad { g_wq, g_wk, g_wv, g_wo, dims: params.dims }, trace.f))
}


/// Gradient of the squared loss: sum_n (f_n - y_n) grad_sample(X_n).
pub fn grad_loss(dataset: &Dataset, params: &ModelParams, scaling: &ScalingScheme) -> Result<ParamGrad> {
    Ok(loss_and_grad(dataset, params, scaling)?.1)
}

/// Loss, its gradient, and the per-sample outputs in one pass.
/// Samples are processed in fixed chunks; partial sums merge in chunk order.
pub fn loss_and_grad(
    dataset: &Dataset,
    params: &ModelParams,
    scaling: &ScalingScheme,
) -> Result<(f64, ParamGrad, Vec<f64>)> {
    let n = dataset.len();
    let idx: Vec<usize> = (0..n).collect();
    let partials: Result<Vec<(ParamGrad, f64, Vec<f64>)>> = idx
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut acc = ParamGrad::zeros(params.dims);
            let mut loss = 0.0;
            let mut fs = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (gi, f_i) = grad_sample_with_output(&dataset.inputs[i], params, scaling)?;
                let r = f_i - dataset.targets[i];
                loss += 0.5 * r * r;
                acc.add_scaled(&gi, r);
                fs.push(f_i);
            }
            Ok((acc, loss, fs))
        })
        .collect();
    let mut total = ParamGrad::zeros(params.dims);
    let mut loss = 0.0;
    let mut f = Vec::with_capacity(n);
    for (g, l, fs) in partials? {
        total.add_scaled(&g, 1.0);
        loss += l;
        f.extend(fs);
    }
    Ok((loss, total, f))
}

// ---------------------------------------------------------------------------
// Flatten / unflatten: W_Q rows, W_K rows, W_V rows, w_O.
// ---------------------------------------------------------------------------

pub fn flatten_len(dims: Dims) -> usize {
    3 * dims.d_m * dims.d + dims.d_m
}

pub fn flatten_params(p: &ModelParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(flatten_len(p.dims));
    v.extend_from_slice(p.w_q.data());
    v.extend_from_slice(p.w_k.data());
    v.extend_from_slice(p.w_v.data());
    v.extend_from_slice(&p.w_o);
    v
}

pub fn flatten_grad(g: &ParamGrad) -> Vec<f64> {
    let mut v = Vec::with_capacity(flatten_len(g.dims));
    v.extend_from_slice(g.g_wq.data());
    v.extend_from_slice(g.g_wk.data());
    v.extend_from_slice(g.g_wv.data());
    v.extend_from_slice(&g.g_wo);
    v
}

pub fn unflatten_params(v: &[f64], dims: Dims) -> Result<ModelParams> {
    let want = flatten_len(dims);
    if v.len() != want {
        return Err(Error::LengthMismatch { expected: want, got: v.len() });
    }
    let block = dims.d_m * dims.d;
    Ok(ModelParams {
        w_q: Matrix::from_vec(dims.d_m, dims.d, v[0..block].to_vec())?,
        w_k: Matrix::from_vec(dims.d_m, dims.d, v[block..2 * block].to_vec())?,
        w_v: Matrix::from_vec(dims.d_m, dims.d, v[2 * block..3 * block].to_vec())?,
        w_o: v[3 * block..].to_vec(),
        dims,
    })
}

/// Central-difference gradient of an arbitrary scalar function of the
/// parameters, step h_j = step * (1 + |theta_j|) per coordinate. Test oracle;
/// cost is two function evaluations per parameter.
pub fn fd_grad_oracle<F>(f: F, params: &ModelParams, step: f64) -> ParamGrad
where
    F: Fn(&ModelParams) -> f64,
{
    assert!(step > 0.0, "fd step must be positive");
    let theta = flatten_params(params);
    let mut g = vec![0.0; theta.len()];
    let mut work = theta.clone();
    for j in 0..theta.len() {
        let h = step * (1.0 + theta[j].abs());
        work[j] = theta[j] + h;
        let fp = f(&unflatten_params(&work, params.dims).unwrap());
        work[j] = theta[j] - h;
        let fm = f(&unflatten_params(&work, params.dims).unwrap());
        work[j] = theta[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    let block = params.dims.d_m * params.dims.d;
    ParamGrad {
        g_wq: Matrix::from_vec(params.dims.d_m, params.dims.d, g[0..block].to_vec()).unwrap(),
        g_wk: Matrix::from_vec(params.dims.d_m, params.dims.d, g[block..2 * block].to_vec()).unwrap(),
        g_wv: Matrix::from_vec(params.dims.d_m, params.dims.d, g[2 * block..3 * block].to_vec()).unwrap(),
        g_wo: g[3 * block..].to_vec(),
        dims: params.dims,
    }
}

/// Per-coordinate relative agreement between an analytic and an FD gradient
/// block, skipping coordinates whose perturbation straddles a ReLU kink and
/// coordinates too small for central differences to resolve.
pub fn max_rel_error_excluding_kinks<F>(analytic: &[f64], fd: &[f64], kink: F) -> f64
where
    F: Fn(usize) -> bool,
{
    max_rel_error_with_floor(analytic, fd, 1e-7, kink)
}

/// As above with an explicit resolution floor: coordinates where both values
/// sit below `floor` are invisible to central differences and are skipped.
pub fn max_rel_error_with_floor<F>(analytic: &[f64], fd: &[f64], floor: f64, kink: F) -> f64
where
    F: Fn(usize) -> bool,
{
    let mut worst = 0.0f64;
    for j in 0..analytic.len() {
        if kink(j) {
            continue;
        }
        let denom = analytic[j].abs().max(fd[j].abs());
        if denom < floor {
            continue; // below FD resolution
        }
        worst = worst.max((analytic[j] - fd[j]).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;
    use crate::data::gen_synthetic;
    use crate::model::{
        batch_features, forward, init_params, loss, tau0_inv, tau0_inv_sqrt, InitScheme, Pooling,
    };
    use crate::numerics::Rng;

    fn setup(seed: u64, d_s: usize, d: usize, d_m: usize) -> (Dataset, ModelParams, ScalingScheme) {
        let dims = Dims { n: 3, d_s, d, d_m };
        let ds = gen_synthetic(dims.n, d_s, d, 1.0, seed);
        let scheme = InitScheme::lecun(d, d_m);
        let params = init_params(dims, &scheme, &mut Rng::new(seed + 100));
        let scaling = ScalingScheme::new(tau0_inv_sqrt(d_m), scheme.tau1(d_m), Pooling::Sum);
        (ds, params, scaling)
    }

    #[test]
    fn readout_grad_equals_features() {
        let (ds, params, scaling) = setup(1, 3, 4, 6);
        let g = grad_sample(&ds.inputs[0], &params, &scaling).unwrap();
        let f_pre = crate::model::features(&ds.inputs[0], &params, &scaling).unwrap();
        assert_eq!(g.g_wo, f_pre);
    }

    #[test]
    fn zero_value_weights_kill_gradients() {
        let (ds, mut params, scaling) = setup(2, 3, 4, 6);
        params.w_v.scale(0.0);
        let g = grad_sample(&ds.inputs[0], &params, &scaling).unwrap();
        assert!(g.g_wo.iter().all(|&x| x == 0.0));
        assert!(g.g_wq.data().iter().all(|&x| x == 0.0));
        assert!(g.g_wk.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn grad_sample_matches_fd_over_random_configs() {
        // Small dims so the full per-coordinate FD is cheap; the acceptance
        // suite covers the large randomized grid.
        for seed in 0..25u64 {
            let d_s = [1, 2, 4][(seed % 3) as usize];
            let d = [1, 3, 5][(seed % 3) as usize];
            let d_m = [2, 5, 8][((seed / 3) % 3) as usize];
            let dims = Dims { n: 1, d_s, d, d_m };
            let ds = gen_synthetic(1, d_s, d, 1.0, seed);
            let scheme = match seed % 3 {
                0 => InitScheme::lecun(d, d_m),
                1 => InitScheme::he(d, d_m),
                _ => InitScheme::ntk(),
            };
            let params = init_params(dims, &scheme, &mut Rng::new(seed + 50));
            let tau0 = if seed % 2 == 0 { tau0_inv_sqrt(d_m) } else { tau0_inv(d_m) };
            let pooling = if seed % 2 == 0 { Pooling::Sum } else { Pooling::Average };
            let scaling = ScalingScheme::new(tau0, scheme.tau1(d_m), pooling);
            let x = &ds.inputs[0];

            let analytic = grad_sample(x, &params, &scaling).unwrap();
            let step = 1e-5;
            let fd = fd_grad_oracle(|p| forward(x, p, &scaling).unwrap(), &params, step);

            // Kink exclusion: a coordinate is tainted if the +/- perturbed
            // pre-activations disagree in sign anywhere.
            let theta = flatten_params(&params);
            let kink = |j: usize| {
                let mut tp = theta.clone();
                let h = step * (1.0 + theta[j].abs());
                tp[j] += h;
                let pp = unflatten_params(&tp, dims).unwrap();
                tp[j] = theta[j] - h;
                let pm = unflatten_params(&tp, dims).unwrap();
                let a = forward_trace(x, &pp, &scaling).unwrap().preact;
                let b = forward_trace(x, &pm, &scaling).unwrap().preact;
                a.data()
                    .iter()
                    .zip(b.data())
                    .any(|(&u, &v)| (u > 0.0) != (v > 0.0))
            };

            let blocks = [
                (analytic.g_wq.data(), fd.g_wq.data(), 0usize),
                (analytic.g_wk.data(), fd.g_wk.data(), d_m * d),
                (analytic.g_wv.data(), fd.g_wv.data(), 2 * d_m * d),
                (&analytic.g_wo[..], &fd.g_wo[..], 3 * d_m * d),
            ];
            for (an, fdb, offset) in blocks {
                let worst = max_rel_error_excluding_kinks(an, fdb, |j| kink(offset + j));
                assert!(worst <= 1e-6, "seed {seed}: rel err {worst:.3e}");
            }
        }
    }

    #[test]
    fn grad_loss_zero_at_fit_and_single_sample_form() {
        let (mut ds, params, scaling) = setup(3, 2, 3, 5);
        let f = crate::model::batch_forward(&ds, &params, &scaling).unwrap();
        ds.targets = f;
        let g = grad_loss(&ds, &params, &scaling).unwrap();
        assert!(g.group_norms().iter().all(|&n| n == 0.0));

        // Single sample: (f - y) * grad_sample.
        let one = Dataset {
            inputs: vec![ds.inputs[0].clone()],
            targets: vec![ds.targets[0] + 2.0],
            c_x: ds.c_x,
            seed: 0,
        };
        let g1 = grad_loss(&one, &params, &scaling).unwrap();
        let gs = grad_sample(&one.inputs[0], &params, &scaling).unwrap();
        let r = forward(&one.inputs[0], &params, &scaling).unwrap() - one.targets[0];
        for (a, b) in g1.g_wo.iter().zip(&gs.g_wo) {
            assert!((a - r * b).abs() <= 1e-14 * b.abs().max(1.0));
        }
        for (a, b) in g1.g_wq.data().iter().zip(gs.g_wq.data()) {
            assert!((a - r * b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn grad_loss_matches_fd_of_loss() {
        let (ds, params, scaling) = setup(5, 3, 4, 6);
        let analytic = grad_loss(&ds, &params, &scaling).unwrap();
        let fd = fd_grad_oracle(|p| loss(&ds, p, &scaling).unwrap(), &params, 1e-5);
        let a = flatten_grad(&analytic);
        let b = flatten_grad(&fd);
        let worst = max_rel_error_excluding_kinks(&a, &b, |_| false);
        assert!(worst <= 1e-5, "rel err {worst:.3e}");
    }

    #[test]
    fn fd_oracle_on_known_functions() {
        let (_, params, _) = setup(6, 2, 3, 4);
        // Sum of readout entries: all-ones g_wo, zero elsewhere.
        let g = fd_grad_oracle(|p| p.w_o.iter().sum(), &params, 1e-6);
        assert!(g.g_wo.iter().all(|&x| (x - 1.0).abs() <= 1e-9));
        assert!(g.g_wq.data().iter().all(|&x| x.abs() <= 1e-9));
        // Constant function: zero gradient.
        let g0 = fd_grad_oracle(|_| 4.25, &params, 1e-6);
        assert!(flatten_grad(&g0).iter().all(|&x| x == 0.0));
        // Quadratic 0.5 ||theta||^2: gradient = theta.
        let gq = fd_grad_oracle(
            |p| 0.5 * flatten_params(p).iter().map(|x| x * x).sum::<f64>(),
            &params,
            1e-6,
        );
        let th = flatten_params(&params);
        for (a, b) in flatten_grad(&gq).iter().zip(&th) {
            assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn directional_derivative_second_order_decay() {
        let (ds, params, scaling) = setup(8, 3, 4, 6);
        let g = grad_loss(&ds, &params, &scaling).unwrap();
        let gv = flatten_grad(&g);
        let mut rng = Rng::new(77);
        let v = crate::numerics::gaussian_vector(gv.len(), 1.0, &mut rng);
        let vn = crate::numerics::norm2(&v);
        let v: Vec<f64> = v.iter().map(|x| x / vn).collect();
        let dir = dot(&gv, &v);
        let theta = flatten_params(&params);
        let eval = |eps: f64| {
            let tp: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t + eps * d).collect();
            let tm: Vec<f64> = theta.iter().zip(&v).map(|(t, d)| t - eps * d).collect();
            let lp = loss(&ds, &unflatten_params(&tp, params.dims).unwrap(), &scaling).unwrap();
            let lm = loss(&ds, &unflatten_params(&tm, params.dims).unwrap(), &scaling).unwrap();
            ((lp - lm) / (2.0 * eps) - dir).abs()
        };
        let e1 = eval(1e-2);
        let e2 = eval(5e-3);
        let e3 = eval(2.5e-3);
        // Quartering the step should roughly quarter the error.
        assert!(e2 <= e1 / 2.0 + 1e-14, "e1={e1:.3e} e2={e2:.3e}");
        assert!(e3 <= e2 / 2.0 + 1e-14, "e2={e2:.3e} e3={e3:.3e}");
    }

    #[test]
    fn flatten_roundtrip_and_length() {
        let (_, params, _) = setup(9, 2, 3, 5);
        let dims = params.dims;
        assert_eq!(flatten_len(dims), 3 * 5 * 3 + 5);
        let v = flatten_params(&params);
        assert_eq!(v.len(), flatten_len(dims));
        let back = unflatten_params(&v, dims).unwrap();
        assert_eq!(back.w_q.data(), params.w_q.data());
        assert_eq!(back.w_k.data(), params.w_k.data());
        assert_eq!(back.w_v.data(), params.w_v.data());
        assert_eq!(back.w_o, params.w_o);
        assert!(unflatten_params(&v[1..], dims).is_err());
        // Ordering is stable: W_Q block first.
        assert_eq!(v[0], params.w_q[(0, 0)]);
        assert_eq!(v[3 * 5 * 3], params.w_o[0]);
    }

    #[test]
    fn batch_features_consistent_with_grads() {
        // sigma_min input used by the bounds module: rows must be the
        // per-sample feature vectors.
        let (ds, params, scaling) = setup(10, 2, 3, 5);
        let fp = batch_features(&ds, &params, &scaling).unwrap();
        for n in 0..ds.len() {
            let g = grad_sample(&ds.inputs[n], &params, &scaling).unwrap();
            assert_eq!(fp.row(n), &g.g_wo[..]);
        }
    }
}
