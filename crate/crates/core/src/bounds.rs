//! Constants and conditions of the convergence guarantee, gradient-norm
//! caps, the Gershgorin eigenvalue lower bound, and Hessian spectral-norm
//! estimation against the width.

use crate::data::{gen_synthetic, Dataset};
use crate::grad::{flatten_grad, flatten_params, grad_loss, grad_sample, unflatten_params};
use crate::model::{
    attention_rows, init_params, tau0_inv, tau0_inv_sqrt, Dims, InitKind, InitScheme, ModelParams,
    Pooling, ScalingScheme,
};
use crate::numerics::{min_singular_value, norm2, power_iter_counted, spectral_norm, Matrix, Rng};
use crate::trainer::TrainTrace;
use crate::{Error, Result};
use rayon::prelude::*;

/// Radii around the initial weights; the guarantee keeps every group within
/// its radius. The proofs' choice is all ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CRadii {
    pub c_q: f64,
    pub c_k: f64,
    pub c_v: f64,
    pub c_o: f64,
}

impl Default for CRadii {
    fn default() -> Self {
        CRadii { c_q: 1.0, c_k: 1.0, c_v: 1.0, c_o: 1.0 }
    }
}

/// Every scalar the convergence conditions need, computed at initialization.
#[derive(Debug, Clone)]
pub struct TheoryConstants {
    pub radii: CRadii,
    /// lambda-bar per group: spectral norm of the initial weights plus the radius.
    pub lambda_q: f64,
    pub lambda_k: f64,
    pub lambda_v: f64,
    pub lambda_o: f64,
    /// rho = sqrt(N) d_s^{3/2} tau1 C_x.
    pub rho: f64,
    /// z = lambda_O^2 (1 + 4 tau0^2 C_x^4 d_s^2 lambda_V^2 (lambda_Q^2 + lambda_K^2)).
    pub z: f64,
    /// Softmax-row Lipschitz factor 2 tau0 C_x^2 d_s (lambda_Q + lambda_K).
    pub z_lip: f64,
    /// Lipschitz constants of the output, its gradient norm, and the
    /// gradient's Lipschitz modulus.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Step-size constant: C = c1 c2 + 2 c3 loss0; admissible gamma <= 1/C.
    pub c_step: f64,
    // Inputs echoed for downstream checks.
    pub tau0: f64,
    pub tau1: f64,
    pub c_x: f64,
    pub d_s: usize,
    pub n: usize,
    pub loss0: f64,
}

/// Evaluation of the two displayed conditions plus the step-size cap.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub alpha: f64,
    pub lhs1: f64,
    pub rhs1: f64,
    pub pass1: bool,
    pub lhs2: f64,
    pub rhs2: f64,
    pub pass2: bool,
    pub pass: bool,
    pub gamma_max: f64,
}

#[derive(Debug, Clone)]
pub struct HessianEstimate {
    pub width: usize,
    pub spectral_norm: f64,
    pub iterations: usize,
    pub hvp_step: f64,
}

/// z as a standalone formula (collapses to lambda_O^2 at tau0 = 0).
pub fn z_value(lambda_o: f64, lambda_v: f64, lambda_q: f64, lambda_k: f64, tau0: f64, c_x: f64, d_s: usize) -> f64 {
    let ds = d_s as f64;
    lambda_o * lambda_o
        * (1.0
            + 4.0 * tau0 * tau0 * c_x.powi(4) * ds * ds * lambda_v * lambda_v
                * (lambda_q * lambda_q + lambda_k * lambda_k))
}

pub fn theory_constants(
    params0: &ModelParams,
    scaling: &ScalingScheme,
    radii: CRadii,
    c_x: f64,
    n: usize,
    loss0: f64,
) -> Result<TheoryConstants> {
    let d_s = params0.dims.d_s;
    let ds = d_s as f64;
    let lambda_q = spectral_norm(&params0.w_q)? + radii.c_q;
    let lambda_k = spectral_norm(&params0.w_k)? + radii.c_k;
    let lambda_v = spectral_norm(&params0.w_v)? + radii.c_v;
    let lambda_o = norm2(&params0.w_o) + radii.c_o;
    let (tau0, tau1) = (scaling.tau0, scaling.tau1);

    let rho = (n as f64).sqrt() * ds.powf(1.5) * tau1 * c_x;
    let z = z_value(lambda_o, lambda_v, lambda_q, lambda_k, tau0, c_x, d_s);
    let z_lip = 2.0 * tau0 * c_x * c_x * ds * (lambda_q + lambda_k);

    let c1 = rho * (lambda_v + lambda_o + lambda_v * z_lip);
    let qk_q = 2.0 * tau0 * lambda_k * lambda_v * lambda_o * ds * c_x * c_x;
    let qk_k = 2.0 * tau0 * lambda_q * lambda_v * lambda_o * ds * c_x * c_x;
    let c2 = rho
        * (lambda_o * lambda_o + lambda_v * lambda_v + qk_q * qk_q + qk_k * qk_k).sqrt();

    // The four squared terms of the gradient-Lipschitz constant.
    let nf = n as f64;
    let base = tau1 * c_x * ds.powf(1.5);
    let t1 = nf * (base * (1.0 + lambda_v * z_lip)).powi(2);
    let inner = lambda_o * c_x * ds.sqrt() * (1.0 + lambda_v * z_lip) + 1.0;
    let t2 = nf * (base * (lambda_o * z_lip + inner)).powi(2);
    let core = lambda_v * inner + lambda_o;
    let tail = lambda_v * lambda_o * (c_x * c_x * ds + 3.0 * lambda_k * z_lip);
    let t3 = nf
        * (tau0 * tau1 * c_x * ds * (2.0 * lambda_k * ds * c_x * c_x * core + tail)).powi(2);
    let t4 = nf
        * (tau0 * tau1 * c_x * ds * (2.0 * lambda_q * ds * c_x * c_x * core + tail)).powi(2);
    let c3 = (t1 + t2 + t3 + t4).sqrt();

    let c_step = c1 * c2 + 2.0 * c3 * loss0;

    Ok(TheoryConstants {
        radii,
        lambda_q,
        lambda_k,
        lambda_v,
        lambda_o,
        rho,
        z,
        z_lip,
        c1,
        c2,
        c3,
        c_step,
        tau0,
        tau1,
        c_x,
        d_s,
        n,
        loss0,
    })
}

/// alpha = sigma_min of the initial feature matrix.
pub fn alpha(f_pre0: &Matrix) -> Result<f64> {
    min_singular_value(f_pre0)
}

/// Evaluates the two convergence conditions exactly as displayed:
///   alpha^2 >= 8 rho max(...) sqrt(2 loss0)
///   alpha^3 >= 32 rho^2 z sqrt(2 loss0) / lambda_O
pub fn check_conditions(k: &TheoryConstants, alpha: f64, loss0: f64) -> ConditionReport {
    let sq = (2.0 * loss0).sqrt();
    let qk = 2.0 * k.tau0 * k.c_x * k.c_x * k.d_s as f64;
    let max_term = (k.lambda_v / k.radii.c_o)
        .max(k.lambda_o / k.radii.c_v)
        .max(qk * k.lambda_k * k.lambda_v * k.lambda_o / k.radii.c_q)
        .max(qk * k.lambda_q * k.lambda_v * k.lambda_o / k.radii.c_k);
    let lhs1 = alpha * alpha;
    let rhs1 = 8.0 * k.rho * max_term * sq;
    let lhs2 = alpha.powi(3);
    let rhs2 = 32.0 * k.rho * k.rho * k.z * sq / k.lambda_o;
    let pass1 = lhs1 >= rhs1;
    let pass2 = lhs2 >= rhs2;
    ConditionReport {
        alpha,
        lhs1,
        rhs1,
        pass1,
        lhs2,
        rhs2,
        pass2,
        pass: pass1 && pass2,
        gamma_max: 1.0 / k.c_step,
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeReport {
    /// (1 - gamma alpha^2 / 2)^t * loss0 per recorded epoch.
    pub series: Vec<f64>,
    pub dominated: bool,
    /// gamma alpha^2 >= 2: the envelope is not a meaningful decay bound.
    pub degenerate: bool,
}

/// Envelope series for a trace and whether every recorded loss stays below it.
pub fn convergence_envelope(trace: &TrainTrace, alpha: f64, gamma: f64) -> EnvelopeReport {
    let loss0 = trace.initial_loss();
    let rate = 1.0 - gamma * alpha * alpha / 2.0;
    let degenerate = gamma * alpha * alpha >= 2.0;
    let series: Vec<f64> = trace
        .records
        .iter()
        .map(|r| rate.powi(r.epoch as i32) * loss0)
        .collect();
    let dominated = !degenerate
        && trace
            .records
            .iter()
            .zip(&series)
            .all(|(r, e)| r.loss <= e + 1e-12 * loss0.abs());
    EnvelopeReport { series, dominated, degenerate }
}

#[derive(Debug, Clone)]
pub struct GradNormRow {
    pub group: &'static str,
    pub actual: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct GradNormReport {
    /// False when the current weights exceed their lambda-bar caps, making
    /// the bounds inapplicable.
    pub applicable: bool,
    pub residual_norm: f64,
    pub rows: Vec<GradNormRow>,
}

/// Loss-gradient norm caps per group:
///   ||grad_Q|| <= 2 rho tau0 lK lV lO d_s C_x^2 ||f - y||
///   ||grad_K|| <= 2 rho tau0 lQ lV lO d_s C_x^2 ||f - y||
///   ||grad_V|| <= rho lO ||f - y||,   ||grad_O|| <= rho lV ||f - y||.
pub fn gradient_norm_report(
    dataset: &Dataset,
    params: &ModelParams,
    scaling: &ScalingScheme,
    k: &TheoryConstants,
) -> Result<GradNormReport> {
    let caps_hold = spectral_norm(&params.w_q)? <= k.lambda_q
        && spectral_norm(&params.w_k)? <= k.lambda_k
        && spectral_norm(&params.w_v)? <= k.lambda_v
        && norm2(&params.w_o) <= k.lambda_o;

    let f = crate::model::batch_forward(dataset, params, scaling)?;
    let resid: Vec<f64> = f.iter().zip(&dataset.targets).map(|(a, b)| a - b).collect();
    let r = norm2(&resid);
    let g = grad_loss(dataset, params, scaling)?;
    let norms = g.group_norms();
    let qk = 2.0 * k.rho * k.tau0 * k.d_s as f64 * k.c_x * k.c_x;
    let bounds = [
        qk * k.lambda_k * k.lambda_v * k.lambda_o * r,
        qk * k.lambda_q * k.lambda_v * k.lambda_o * r,
        k.rho * k.lambda_o * r,
        k.rho * k.lambda_v * r,
    ];
    let names = ["W_Q", "W_K", "W_V", "w_O"];
    let rows = names
        .iter()
        .zip(norms.iter().zip(bounds.iter()))
        .map(|(group, (&actual, &bound))| GradNormRow { group, actual, bound, slack: bound - actual })
        .collect();
    Ok(GradNormReport { applicable: caps_hold, residual_norm: r, rows })
}

// ---------------------------------------------------------------------------
// Gershgorin lower bound
// ---------------------------------------------------------------------------

/// Phi = [X_1^T beta_{1,1}, ..., X_N^T beta_{1,N}]^T from the first attention
/// row of every sample.
pub fn build_phi(dataset: &Dataset, params: &ModelParams, tau0: f64) -> Result<Matrix> {
    let n = dataset.len();
    let d = dataset.token_dim();
    let mut phi = Matrix::zeros(n, d);
    for (r, x) in dataset.inputs.iter().enumerate() {
        let beta = attention_rows(x, params, tau0)?;
        let mixed = x.matvec_t(beta.row(0));
        phi.row_mut(r).copy_from_slice(&mixed);
    }
    Ok(phi)
}

/// Gershgorin lower bound on lambda_min(Phi Phi^T):
/// min_k [ (Phi Phi^T)_kk - sum_{j != k} |(Phi Phi^T)_kj| ].
/// Never exceeds the exact minimum eigenvalue.
pub fn gershgorin_lambda_min_lower(phi: &Matrix) -> f64 {
    let g = phi.gram_nt();
    let n = g.rows();
    let mut best = f64::INFINITY;
    for k in 0..n {
        let mut v = g[(k, k)];
        for j in 0..n {
            if j != k {
                v -= g[(k, j)].abs();
            }
        }
        best = best.min(v);
    }
    best
}

/// Informational lower bound lambda_0 >= eta_V mu^2 lambda_min(Phi Phi^T)
/// with mu = 1/2, the first Hermite coefficient of ReLU.
pub fn lambda0_lower_bound(eta_v: f64, lambda_min_phi: f64) -> f64 {
    eta_v * 0.25 * lambda_min_phi
}

// ---------------------------------------------------------------------------
// Hessian spectral norm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianTarget {
    /// Hessian of the network output for one sample (the theorem's object).
    NetworkSingle { sample: usize },
    /// Hessian of the full squared loss.
    FullLoss,
}

/// Power iteration on Hessian-vector products; each product is a central
/// difference of the analytic gradient, one order better than differencing
/// the function twice.
pub fn hessian_norm(
    dataset: &Dataset,
    params: &ModelParams,
    scaling: &ScalingScheme,
    target: HessianTarget,
    hvp_step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<HessianEstimate> {
    if hvp_step <= 0.0 {
        return Err(Error::InvalidInput("hvp step must be positive".into()));
    }
    let dims = params.dims;
    let theta0 = flatten_params(params);
    let grad_at = |theta: &[f64]| -> Result<Vec<f64>> {
        let p = unflatten_params(theta, dims)?;
        let g = match target {
            HessianTarget::NetworkSingle { sample } => {
                grad_sample(&dataset.inputs[sample], &p, scaling)?
            }
            HessianTarget::FullLoss => grad_loss(dataset, &p, scaling)?,
        };
        Ok(flatten_grad(&g))
    };
    hessian_norm_of_grad_fn(move |th| grad_at(th), &theta0, hvp_step, tol, max_iter)
        .map(|(est, iters)| HessianEstimate {
            width: dims.d_m,
            spectral_norm: est,
            iterations: iters,
            hvp_step,
        })
}

/// Spectral norm of the Hessian of any scalar function given its gradient,
/// at the point theta0. Exposed so a quadratic surrogate can exercise the
/// whole HVP + power-iteration path.
pub fn hessian_norm_of_grad_fn<G>(
    grad: G,
    theta0: &[f64],
    hvp_step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize)>
where
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let dim = theta0.len();
    let hvp = |v: &[f64]| -> Result<Vec<f64>> {
        let nv = norm2(v);
        if nv == 0.0 {
            return Ok(vec![0.0; dim]);
        }
        let h = hvp_step / nv;
        let tp: Vec<f64> = theta0.iter().zip(v).map(|(t, d)| t + h * d).collect();
        let tm: Vec<f64> = theta0.iter().zip(v).map(|(t, d)| t - h * d).collect();
        let gp = grad(&tp)?;
        let gm = grad(&tm)?;
        Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    };
    // Errors inside the operator are latched and re-raised afterwards.
    let fail = std::cell::RefCell::new(None);
    let apply = |v: &[f64]| -> Vec<f64> {
        match hvp(v) {
            Ok(out) => out,
            Err(e) => {
                *fail.borrow_mut() = Some(e);
                vec![0.0; dim]
            }
        }
    };
    let res = power_iter_counted(apply, dim, tol, max_iter);
    if let Some(e) = fail.into_inner() {
        return Err(e);
    }
    res
}

/// One width sweep of the single-input network Hessian.
#[derive(Debug, Clone)]
pub struct WidthSweep {
    pub widths: Vec<usize>,
    pub d_s: usize,
    pub c_x: f64,
    pub init: InitKind,
    pub tau0_rule: Tau0Rule,
    pub seeds: Vec<u64>,
    pub hvp_step: f64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tau0Rule {
    InvSqrtWidth,
    InvWidth,
}

impl Tau0Rule {
    pub fn value(&self, d_m: usize) -> f64 {
        match self {
            Tau0Rule::InvSqrtWidth => tau0_inv_sqrt(d_m),
            Tau0Rule::InvWidth => tau0_inv(d_m),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// norms[s][w]: estimate for seed s at width w.
    pub norms: Vec<Vec<HessianEstimate>>,
    /// Per-seed least-squares slope of log norm vs log width.
    pub slopes: Vec<f64>,
    pub mean_slope: f64,
}

/// Hessian spectral norm vs width on a scalar-token input (d = 1), slope of
/// the log-log fit averaged over seeds. Widths run in parallel; the per-width
/// computation is sequential.
pub fn hessian_width_slope(cfg: &WidthSweep) -> Result<SweepResult> {
    if cfg.widths.len() < 2 {
        return Err(Error::Config("width sweep needs at least two widths".into()));
    }
    let mut norms = Vec::with_capacity(cfg.seeds.len());
    let mut slopes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let per_width: Result<Vec<HessianEstimate>> = cfg
            .widths
            .par_iter()
            .map(|&d_m| {
                let ds = gen_synthetic(1, cfg.d_s, 1, cfg.c_x, seed);
                let dims = Dims { n: 1, d_s: cfg.d_s, d: 1, d_m };
                let scheme = match cfg.init {
                    InitKind::LeCun => InitScheme::lecun(1, d_m),
                    InitKind::He => InitScheme::he(1, d_m),
                    _ => InitScheme::ntk(),
                };
                let params = init_params(dims, &scheme, &mut Rng::new(seed.wrapping_add(1)));
                let scaling = ScalingScheme::new(
                    cfg.tau0_rule.value(d_m),
                    scheme.tau1(d_m),
                    Pooling::Sum,
                );
                hessian_norm(
                    &ds,
                    &params,
                    &scaling,
                    HessianTarget::NetworkSingle { sample: 0 },
                    cfg.hvp_step,
                    cfg.tol,
                    cfg.max_iter,
                )
            })
            .collect();
        let per_width = per_width?;
        let xs: Vec<f64> = cfg.widths.iter().map(|&w| (w as f64).ln()).collect();
        let ys: Vec<f64> = per_width.iter().map(|e| e.spectral_norm.ln()).collect();
        slopes.push(fit_loglog_slope(&xs, &ys)?);
        norms.push(per_width);
    }
    let mean_slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
    Ok(SweepResult { norms, slopes, mean_slope })
}

/// Least-squares slope of y against x.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput("slope fit needs >= 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::InvalidInput("slope fit with constant x".into()));
    }
    Ok(num / den)
}
