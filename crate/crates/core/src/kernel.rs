//! Tangent kernels: the empirical Gram of per-sample parameter gradients,
//! the trace-based kernel distance, and the width limit with both a
//! closed-form (ReLU Gaussian expectations) and a Monte-Carlo evaluation.

use crate::data::Dataset;
use crate::grad::{flatten_grad, flatten_len, grad_sample};
use crate::model::{ModelParams, ScalingScheme};
use crate::numerics::{dot, norm2, Matrix, Rng};
use crate::{Error, Result};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Peak kernel working memory: block_size * param_count floats must fit here.
const MEMORY_BUDGET_BYTES: usize = 2 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Empirical { epoch: usize },
    LimitingClosed,
    LimitingMc { samples: usize },
}

/// N x N symmetric PSD Gram matrix with its origin tag.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub matrix: Matrix,
    pub provenance: Provenance,
}

/// N x d matrix whose row n is the token average of sample n.
#[derive(Debug, Clone)]
pub struct PhiStar {
    pub matrix: Matrix,
}

/// Empirical kernel at the given parameters: K_nm is the inner product of
/// the flattened per-sample output gradients. Computed over sample blocks so
/// at most 2 * block_size gradients are alive at once.
pub fn empirical_ntk(
    dataset: &Dataset,
    params: &ModelParams,
    scaling: &ScalingScheme,
    block_size: usize,
) -> Result<KernelMatrix> {
    empirical_ntk_at(dataset, params, scaling, block_size, 0)
}

pub fn empirical_ntk_at(
    dataset: &Dataset,
    params: &ModelParams,
    scaling: &ScalingScheme,
    block_size: usize,
    epoch: usize,
) -> Result<KernelMatrix> {
    if block_size < 1 {
        return Err(Error::Config("kernel block_size must be at least 1".into()));
    }
    let p = flatten_len(params.dims);
    let bytes = 2usize.saturating_mul(block_size).saturating_mul(p).saturating_mul(8);
    if bytes > MEMORY_BUDGET_BYTES {
        return Err(Error::Config(format!(
            "kernel memory budget exceeded: 2 * {block_size} * {p} * 8 = {bytes} bytes"
        )));
    }
    let n = dataset.len();
    let mut k = Matrix::zeros(n, n);

    let block_grads = |lo: usize, hi: usize| -> Result<Vec<Vec<f64>>> {
        (lo..hi)
            .into_par_iter()
            .map(|i| Ok(flatten_grad(&grad_sample(&dataset.inputs[i], params, scaling)?)))
            .collect()
    };

    let mut bi = 0;
    while bi < n {
        let bi_hi = (bi + block_size).min(n);
        let gi = block_grads(bi, bi_hi)?;
        // Diagonal tile.
        for a in 0..gi.len() {
            for b in a..gi.len() {
                let v = dot(&gi[a], &gi[b]);
                k[(bi + a, bi + b)] = v;
                k[(bi + b, bi + a)] = v;
            }
        }
        let mut bj = bi_hi;
        while bj < n {
            let bj_hi = (bj + block_size).min(n);
            let gj = block_grads(bj, bj_hi)?;
            for a in 0..gi.len() {
                for b in 0..gj.len() {
                    let v = dot(&gi[a], &gj[b]);
                    k[(bi + a, bj + b)] = v;
                    k[(bj + b, bi + a)] = v;
                }
            }
            bj = bj_hi;
        }
        bi = bi_hi;
    }
    Ok(KernelMatrix { matrix: k, provenance: Provenance::Empirical { epoch } })
}

/// 1 - Tr(K Kt^T) / (sqrt(Tr(K K^T)) sqrt(Tr(Kt Kt^T))): the relative
/// rotation between two kernels. Zero on equal or positively rescaled pairs.
pub fn kernel_distance(k: &KernelMatrix, kt: &KernelMatrix) -> Result<f64> {
    let a = &k.matrix;
    let b = &kt.matrix;
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::InvalidInput("kernel_distance: size mismatch".into()));
    }
    let na = a.dot(a);
    let nb = b.dot(b);
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::InvalidInput("kernel_distance: zero-trace kernel".into()));
    }
    Ok(1.0 - a.dot(b) / (na.sqrt() * nb.sqrt()))
}

/// Token averages (1/d_s) X_n^T 1 stacked as rows.
pub fn limiting_phi_star(dataset: &Dataset) -> PhiStar {
    let n = dataset.len();
    let d = dataset.token_dim();
    let mut m = Matrix::zeros(n, d);
    for (i, x) in dataset.inputs.iter().enumerate() {
        let d_s = x.rows();
        let row = m.row_mut(i);
        for t in 0..d_s {
            for (acc, v) in row.iter_mut().zip(x.row(t)) {
                *acc += v;
            }
        }
        for acc in row.iter_mut() {
            *acc /= d_s as f64;
        }
    }
    PhiStar { matrix: m }
}

/// ReLU arc-cosine expectations for unit Gaussian weights:
///   E[relu(a.w) relu(b.w)]  = ||a|| ||b|| (sin t + (pi - t) cos t) / (2 pi)
///   E[relu'(a.w) relu'(b.w)] = (pi - t) / (2 pi)
/// with t the angle between a and b.
fn arc_cosine_terms(a: &[f64], b: &[f64]) -> (f64, f64) {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return (0.0, 0.0); // limiting value; the dot-product factor is 0 too
    }
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    let t = cos.acos();
    let e_act = na * nb / (2.0 * PI) * (t.sin() + (PI - t) * cos);
    let e_der = (PI - t) / (2.0 * PI);
    (e_act, e_der)
}

/// Closed-form limiting kernel
///   K = d_s^2 E[relu(Phi* w) relu(Phi* w)^T]
///     + d_s^2 E[relu'(Phi* w) relu'(Phi* w)^T] .* (Phi* Phi*^T),
/// the second term entrywise. Returns the indices of zero Phi* rows, whose
/// entries are set by the limit (both terms vanish).
pub fn limiting_ntk_closed(dataset: &Dataset) -> (KernelMatrix, Vec<usize>) {
    let phi = limiting_phi_star(dataset);
    let n = phi.matrix.rows();
    let ds2 = (dataset.seq_len() as f64).powi(2);
    let mut k = Matrix::zeros(n, n);
    let mut zero_rows = vec![];
    for i in 0..n {
        if norm2(phi.matrix.row(i)) == 0.0 {
            zero_rows.push(i);
        }
        for j in i..n {
            let a = phi.matrix.row(i);
            let b = phi.matrix.row(j);
            let (e_act, e_der) = arc_cosine_terms(a, b);
            let v = ds2 * (e_act + e_der * dot(a, b));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    (KernelMatrix { matrix: k, provenance: Provenance::LimitingClosed }, zero_rows)
}

/// Monte-Carlo estimate of the limiting kernel plus the per-entry standard
/// error of the mean. Deterministic per rng seed.
pub fn limiting_ntk_mc(
    dataset: &Dataset,
    samples: usize,
    rng: &mut Rng,
) -> Result<(KernelMatrix, Matrix)> {
    if samples < 1 {
        return Err(Error::InvalidInput("limiting_ntk_mc needs at least one sample".into()));
    }
    let phi = limiting_phi_star(dataset);
    let n = phi.matrix.rows();
    let d = phi.matrix.cols();
    let ds2 = (dataset.seq_len() as f64).powi(2);
    let gram = phi.matrix.gram_nt();

    let mut sum = Matrix::zeros(n, n);
    let mut sumsq = Matrix::zeros(n, n);
    let mut act = vec![0.0; n];
    let mut der = vec![0.0; n];
    for _ in 0..samples {
        let w: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        for i in 0..n {
            let z = dot(phi.matrix.row(i), &w);
            act[i] = z.max(0.0);
            der[i] = if z > 0.0 { 1.0 } else { 0.0 };
        }
        for i in 0..n {
            for j in i..n {
                let v = ds2 * (act[i] * act[j] + der[i] * der[j] * gram[(i, j)]);
                sum[(i, j)] += v;
                sumsq[(i, j)] += v * v;
            }
        }
    }
    let s = samples as f64;
    let mut mean = Matrix::zeros(n, n);
    let mut stderr = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let m = sum[(i, j)] / s;
            let var = if samples > 1 { (sumsq[(i, j)] / s - m * m).max(0.0) * s / (s - 1.0) } else { 0.0 };
            let se = (var / s).sqrt();
            mean[(i, j)] = m;
            mean[(j, i)] = m;
            stderr[(i, j)] = se;
            stderr[(j, i)] = se;
        }
    }
    Ok((KernelMatrix { matrix: mean, provenance: Provenance::LimitingMc { samples } }, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::model::{init_params, tau0_inv, Dims, InitScheme, Pooling};
    use crate::numerics::sym_min_eigen;

    fn setup(seed: u64, n: usize) -> (Dataset, ModelParams, ScalingScheme) {
        let dims = Dims { n, d_s: 3, d: 5, d_m: 8 };
        let ds = gen_synthetic(n, dims.d_s, dims.d, 1.0, seed);
        let scheme = InitScheme::ntk();
        let params = init_params(dims, &scheme, &mut Rng::new(seed + 1));
        let scaling = ScalingScheme::new(tau0_inv(dims.d_m), scheme.tau1(dims.d_m), Pooling::Sum);
        (ds, params, scaling)
    }

    #[test]
    fn single_sample_kernel_is_grad_norm_squared() {
        let (ds, params, scaling) = setup(1, 1);
        let k = empirical_ntk(&ds, &params, &scaling, 4).unwrap();
        let g = flatten_grad(&grad_sample(&ds.inputs[0], &params, &scaling).unwrap());
        let want = dot(&g, &g);
        assert!((k.matrix[(0, 0)] - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn block_size_does_not_change_result() {
        let (ds, params, scaling) = setup(2, 7);
        let k1 = empirical_ntk(&ds, &params, &scaling, 1).unwrap();
        let kn = empirical_ntk(&ds, &params, &scaling, 7).unwrap();
        let k3 = empirical_ntk(&ds, &params, &scaling, 3).unwrap();
        for (a, b) in k1.matrix.data().iter().zip(kn.matrix.data()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        for (a, b) in k1.matrix.data().iter().zip(k3.matrix.data()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn empirical_kernel_is_symmetric_psd() {
        let (ds, params, scaling) = setup(3, 6);
        let k = empirical_ntk(&ds, &params, &scaling, 4).unwrap();
        let lam = sym_min_eigen(&k.matrix).unwrap();
        assert!(lam >= -1e-8 * k.matrix.trace(), "min eig {lam}");
    }

    #[test]
    fn block_size_zero_and_memory_budget_rejected() {
        let (ds, params, scaling) = setup(4, 3);
        assert!(matches!(
            empirical_ntk(&ds, &params, &scaling, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            empirical_ntk(&ds, &params, &scaling, usize::MAX / 16),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kernel_distance_identities() {
        let (ds, params, scaling) = setup(5, 5);
        let k = empirical_ntk(&ds, &params, &scaling, 5).unwrap();
        assert!(kernel_distance(&k, &k).unwrap().abs() <= 1e-12);
        let mut k3 = k.clone();
        k3.matrix.scale(3.0);
        assert!(kernel_distance(&k, &k3).unwrap().abs() <= 1e-12);
        let a = KernelMatrix {
            matrix: Matrix::diag(&[1.0, 0.0]),
            provenance: Provenance::LimitingClosed,
        };
        let b = KernelMatrix {
            matrix: Matrix::diag(&[0.0, 1.0]),
            provenance: Provenance::LimitingClosed,
        };
        assert!((kernel_distance(&a, &b).unwrap() - 1.0).abs() <= 1e-15);
        let z = KernelMatrix { matrix: Matrix::zeros(2, 2), provenance: Provenance::LimitingClosed };
        assert!(kernel_distance(&a, &z).is_err());
    }

    proptest::proptest! {
        #[test]
        fn kernel_distance_in_unit_interval(seed in 0u64..60) {
            let (ds, params, scaling) = setup(seed, 4);
            let k = empirical_ntk(&ds, &params, &scaling, 2).unwrap();
            let (kl, _) = limiting_ntk_closed(&ds);
            let d = kernel_distance(&k, &kl).unwrap();
            proptest::prop_assert!((-1e-12..=1.0 + 1e-12).contains(&d));
        }
    }

    #[test]
    fn phi_star_single_token_and_identical_tokens() {
        let ds = gen_synthetic(3, 1, 4, 1.0, 7);
        let phi = limiting_phi_star(&ds);
        for n in 0..3 {
            assert_eq!(phi.matrix.row(n), ds.inputs[n].data());
        }
        // Identical tokens: the row equals that token.
        let mut ds2 = gen_synthetic(1, 3, 4, 1.0, 8);
        let row = ds2.inputs[0].row(0).to_vec();
        for i in 1..3 {
            ds2.inputs[0].row_mut(i).copy_from_slice(&row);
        }
        let phi2 = limiting_phi_star(&ds2);
        for (a, b) in phi2.matrix.row(0).iter().zip(&row) {
            assert!((a - b).abs() <= 1e-15);
        }
        // Loop oracle over tokens.
        let ds3 = gen_synthetic(2, 3, 4, 1.0, 9);
        let phi3 = limiting_phi_star(&ds3);
        for n in 0..2 {
            for c in 0..4 {
                let mut acc = 0.0;
                for t in 0..3 {
                    acc += ds3.inputs[n][(t, c)];
                }
                assert!((phi3.matrix[(n, c)] - acc / 3.0).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn closed_form_diagonal_and_orthogonal_values() {
        let ds = gen_synthetic(4, 3, 6, 1.0, 11);
        let (k, zero_rows) = limiting_ntk_closed(&ds);
        assert!(zero_rows.is_empty());
        let phi = limiting_phi_star(&ds);
        let ds2 = 9.0;
        for n in 0..4 {
            let nn = dot(phi.matrix.row(n), phi.matrix.row(n));
            // First term at zero angle is ||phi||^2 / 2; derivative term 1/2.
            let want = ds2 * (nn / 2.0 + 0.5 * nn);
            assert!((k.matrix[(n, n)] - want).abs() <= 1e-12 * want);
        }
        // Orthogonal pair: derivative expectation is exactly 1/4.
        let (_, e_der) = arc_cosine_terms(&[1.0, 0.0], &[0.0, 2.0]);
        assert!((e_der - 0.25).abs() <= 1e-15);
    }

    #[test]
    fn mc_single_sample_equals_direct_formula() {
        let ds = gen_synthetic(3, 2, 4, 1.0, 13);
        let (kmc, _se) = limiting_ntk_mc(&ds, 1, &mut Rng::new(5)).unwrap();
        // Recompute with the same single weight draw.
        let mut rng = Rng::new(5);
        let phi = limiting_phi_star(&ds);
        let w: Vec<f64> = (0..4).map(|_| rng.next_normal()).collect();
        let gram = phi.matrix.gram_nt();
        for i in 0..3 {
            for j in 0..3 {
                let zi = dot(phi.matrix.row(i), &w);
                let zj = dot(phi.matrix.row(j), &w);
                let want = 4.0 * (zi.max(0.0) * zj.max(0.0)
                    + if zi > 0.0 && zj > 0.0 { gram[(i, j)] } else { 0.0 });
                assert!((kmc.matrix[(i, j)] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mc_converges_to_closed_form() {
        let ds = gen_synthetic(4, 3, 5, 1.0, 17);
        let (kc, _) = limiting_ntk_closed(&ds);
        let err = |s: usize, seed: u64| {
            let (kmc, _) = limiting_ntk_mc(&ds, s, &mut Rng::new(seed)).unwrap();
            kmc.matrix.sub(&kc.matrix).frobenius_norm() / kc.matrix.frobenius_norm()
        };
        // Error roughly halves when samples quadruple; average a few seeds
        // to keep the check stable.
        let e1: f64 = (0..4).map(|s| err(2_000, s)).sum::<f64>() / 4.0;
        let e2: f64 = (0..4).map(|s| err(32_000, s)).sum::<f64>() / 4.0;
        assert!(e2 < e1 / 2.0, "MC error must shrink: {e1:.4e} -> {e2:.4e}");
        // Determinism per seed.
        let (a, _) = limiting_ntk_mc(&ds, 100, &mut Rng::new(3)).unwrap();
        let (b, _) = limiting_ntk_mc(&ds, 100, &mut Rng::new(3)).unwrap();
        assert_eq!(a.matrix.data(), b.matrix.data());
    }

    #[test]
    fn readout_block_kernel_equals_feature_gram() {
        // The w_O block of the empirical kernel is F_pre F_pre^T exactly.
        let (ds, params, scaling) = setup(19, 5);
        let fp = crate::model::batch_features(&ds, &params, &scaling).unwrap();
        let want = fp.gram_nt();
        let grads: Vec<Vec<f64>> = ds
            .inputs
            .iter()
            .map(|x| grad_sample(x, &params, &scaling).unwrap().g_wo)
            .collect();
        for i in 0..5 {
            for j in 0..5 {
                let got = dot(&grads[i], &grads[j]);
                assert!((got - want[(i, j)]).abs() <= 1e-12 * want[(i, j)].abs().max(1.0));
            }
        }
    }
}
