//! Shallow encoder: row-wise softmax self-attention with scaling tau0,
//! a ReLU layer folded into the value weights, token pooling scaled by tau1,
//! and a linear readout. Weights are W_Q, W_K, W_V (width x token dim) and a
//! readout vector w_O.

use crate::data::Dataset;
use crate::numerics::{dot, gaussian_matrix, gaussian_vector, stable_softmax, Matrix, Rng};
use crate::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// sample count
    pub n: usize,
    /// sequence length
    pub d_s: usize,
    /// token dimension
    pub d: usize,
    /// width
    pub d_m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Token features are summed; the form all quantitative bounds use.
    Sum,
    /// Column-wise average (sum divided by d_s).
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingScheme {
    pub tau0: f64,
    pub tau1: f64,
    pub pooling: Pooling,
}

impl ScalingScheme {
    pub fn new(tau0: f64, tau1: f64, pooling: Pooling) -> Self {
        assert!(tau0 > 0.0 && tau1 > 0.0, "scaling factors must be positive");
        ScalingScheme { tau0, tau1, pooling }
    }

    /// Output scale applied to the pooled features.
    pub(crate) fn feature_scale(&self, d_s: usize) -> f64 {
        match self.pooling {
            Pooling::Sum => self.tau1,
            Pooling::Average => self.tau1 / d_s as f64,
        }
    }
}

/// tau0 = d_m^{-1/2}: keeps the logit variance O(1).
pub fn tau0_inv_sqrt(d_m: usize) -> f64 {
    (d_m as f64).powf(-0.5)
}

/// tau0 = d_m^{-1}: drives logits to zero as the width grows.
pub fn tau0_inv(d_m: usize) -> f64 {
    1.0 / d_m as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    LeCun,
    He,
    Ntk,
    Custom,
}

/// Gaussian initialization variances for the four weight groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitScheme {
    pub kind: InitKind,
    pub eta_q: f64,
    pub eta_k: f64,
    pub eta_v: f64,
    pub eta_o: f64,
}

impl InitScheme {
    pub fn lecun(d: usize, d_m: usize) -> Self {
        let fan = 1.0 / d as f64;
        InitScheme { kind: InitKind::LeCun, eta_q: fan, eta_k: fan, eta_v: fan, eta_o: 1.0 / d_m as f64 }
    }

    pub fn he(d: usize, d_m: usize) -> Self {
        let fan = 2.0 / d as f64;
        InitScheme { kind: InitKind::He, eta_q: fan, eta_k: fan, eta_v: fan, eta_o: 2.0 / d_m as f64 }
    }

    pub fn ntk() -> Self {
        InitScheme { kind: InitKind::Ntk, eta_q: 1.0, eta_k: 1.0, eta_v: 1.0, eta_o: 1.0 }
    }

    pub fn custom(eta_q: f64, eta_k: f64, eta_v: f64, eta_o: f64) -> Self {
        InitScheme { kind: InitKind::Custom, eta_q, eta_k, eta_v, eta_o }
    }

    /// The tau1 each named scheme pairs with (NTK uses d_m^{-1/2}, others 1).
    pub fn tau1(&self, d_m: usize) -> f64 {
        match self.kind {
            InitKind::Ntk => (d_m as f64).powf(-0.5),
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Vec<f64>,
    pub dims: Dims,
}

impl ModelParams {
    pub fn param_count(&self) -> usize {
        3 * self.dims.d_m * self.dims.d + self.dims.d_m
    }
}

/// One forward pass, with the intermediates the diagnostics need.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// d_s x d_s; row i is the attention row beta_i (on the simplex).
    pub beta: Matrix,
    /// d_s x d_m; row i is the ReLU pre-activation W_V X^T beta_i.
    pub preact: Matrix,
    /// d_m pooled feature vector.
    pub f_pre: Vec<f64>,
    /// scalar output.
    pub f: f64,
}

/// i.i.d. Gaussian weights with the scheme's variances; draw order is
/// W_Q, W_K, W_V (row-major), then w_O, so a seed pins every entry.
pub fn init_params(dims: Dims, scheme: &InitScheme, rng: &mut Rng) -> ModelParams {
    let w_q = gaussian_matrix(dims.d_m, dims.d, scheme.eta_q.sqrt(), rng);
    let w_k = gaussian_matrix(dims.d_m, dims.d, scheme.eta_k.sqrt(), rng);
    let w_v = gaussian_matrix(dims.d_m, dims.d, scheme.eta_v.sqrt(), rng);
    let w_o = gaussian_vector(dims.d_m, scheme.eta_o.sqrt(), rng);
    ModelParams { w_q, w_k, w_v, w_o, dims }
}

/// Attention matrix: row i = softmax(tau0 * x_i^T W_Q^T W_K X^T).
pub fn attention_rows(x: &Matrix, params: &ModelParams, tau0: f64) -> Result<Matrix> {
    let q = x.matmul_nt(&params.w_q); // d_s x d_m
    let k = x.matmul_nt(&params.w_k); // d_s x d_m
    let mut logits = q.matmul_nt(&k); // d_s x d_s
    logits.scale(tau0);
    if !logits.is_finite() {
        return Err(Error::InvalidInput("attention logits are non-finite".into()));
    }
    let d_s = x.rows();
    let mut beta = Matrix::zeros(d_s, d_s);
    for i in 0..d_s {
        let row = stable_softmax(logits.row(i))?;
        beta.row_mut(i).copy_from_slice(&row);
    }
    Ok(beta)
}

pub fn forward_trace(x: &Matrix, params: &ModelParams, scaling: &ScalingScheme) -> Result<ForwardTrace> {
    let d_s = x.rows();
    let beta = attention_rows(x, params, scaling.tau0)?;
    let v = x.matmul_nt(&params.w_v); // d_s x d_m, row j = (W_V x_j)^T
    let preact = beta.matmul(&v); // d_s x d_m, row i = (W_V X^T beta_i)^T
    let scale = scaling.feature_scale(d_s);
    let mut f_pre = vec![0.0; params.dims.d_m];
    for i in 0..d_s {
        for (acc, &p) in f_pre.iter_mut().zip(preact.row(i)) {
            if p > 0.0 {
                *acc += p;
            }
        }
    }
    for acc in &mut f_pre {
        *acc *= scale;
    }
    let f = dot(&f_pre, &params.w_o);
    Ok(ForwardTrace { beta, preact, f_pre, f })
}

/// Pooled feature vector f_pre (the readout's input).
pub fn features(x: &Matrix, params: &ModelParams, scaling: &ScalingScheme) -> Result<Vec<f64>> {
    Ok(forward_trace(x, params, scaling)?.f_pre)
}

/// Scalar network output f(X) = f_pre . w_O.
pub fn forward(x: &Matrix, params: &ModelParams, scaling: &ScalingScheme) -> Result<f64> {
    Ok(forward_trace(x, params, scaling)?.f)
}

/// N x d_m matrix whose row n is features(X_n); row order follows the dataset.
pub fn batch_features(dataset: &Dataset, params: &ModelParams, scaling: &ScalingScheme) -> Result<Matrix> {
    let rows: Result<Vec<Vec<f64>>> = dataset
        .inputs
        .par_iter()
        .map(|x| features(x, params, scaling))
        .collect();
    Matrix::from_rows(&rows?)
}

/// Network outputs over the dataset, in dataset order.
pub fn batch_forward(dataset: &Dataset, params: &ModelParams, scaling: &ScalingScheme) -> Result<Vec<f64>> {
    dataset.inputs.par_iter().map(|x| forward(x, params, scaling)).collect()
}

/// Squared loss 0.5 * sum_n (f(X_n) - y_n)^2.
pub fn loss(dataset: &Dataset, params: &ModelParams, scaling: &ScalingScheme) -> Result<f64> {
    let f = batch_forward(dataset, params, scaling)?;
    Ok(residual_loss(&f, &dataset.targets))
}

pub(crate) fn residual_loss(f: &[f64], y: &[f64]) -> f64 {
    0.5 * f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}
