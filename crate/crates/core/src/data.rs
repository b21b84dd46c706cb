//! Synthetic data generation, vector-input reshaping, and validators for the
//! boundedness / full-rank / pair-similarity / covariance assumptions.

use crate::numerics::{min_singular_value, sym_min_eigen, Matrix, Rng};
use crate::{Error, Result};
use rayon::prelude::*;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// N inputs of shape d_s x d with scalar targets. Inputs are normalized so
/// that ||X_n||_F = sqrt(d_s) * c_x (the boundedness assumption holds with
/// equality by construction).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Vec<Matrix>,
    pub targets: Vec<f64>,
    pub c_x: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.rows())
    }

    pub fn token_dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.cols())
    }

    /// Re-verifies the boundedness invariant ||X_n||_F <= sqrt(d_s) * c_x.
    pub fn check_bound(&self) -> Result<()> {
        let cap = (self.seq_len() as f64).sqrt() * self.c_x;
        for (n, x) in self.inputs.iter().enumerate() {
            if x.frobenius_norm() > cap * (1.0 + 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "sample {n} violates the norm bound: {} > {cap}",
                    x.frobenius_norm()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorMode {
    /// d_s = 1, d = d_tilde: the vector is one token.
    Embedding,
    /// d_s = d_tilde, d = 1: the vector is a sequence of scalar tokens.
    Sequence,
}

#[derive(Debug, Clone)]
pub struct RankReport {
    pub pass: bool,
    pub worst_sigma_min: f64,
}

/// Validators' summary for one dataset.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub full_rank: bool,
    pub worst_sigma_min: f64,
    /// (t, empirical frequency of |<X_n^T X_n, X_m^T X_m>| >= t over pairs).
    pub tail_curve: Vec<(f64, f64)>,
    pub cov_min_eig: f64,
}

/// Standard-Gaussian inputs rescaled to ||X_n||_F = sqrt(d_s) * c_x, with
/// standard-Gaussian scalar targets. Deterministic per seed.
pub fn gen_synthetic(n: usize, d_s: usize, d: usize, c_x: f64, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut inputs = Vec::with_capacity(n);
    let target_norm = (d_s as f64).sqrt() * c_x;
    for _ in 0..n {
        let mut x = crate::numerics::gaussian_matrix(d_s, d, 1.0, &mut rng);
        let nrm = x.frobenius_norm();
        if nrm > 0.0 {
            x.scale(target_norm / nrm);
        }
        inputs.push(x);
    }
    let targets = (0..n).map(|_| rng.next_normal()).collect();
    Dataset { inputs, targets, c_x, seed }
}

/// PASS iff every sample has sigma_min(X_n) > tol (full row rank).
pub fn rank_check(dataset: &Dataset, tol: f64) -> Result<RankReport> {
    let mut worst = f64::INFINITY;
    for x in &dataset.inputs {
        worst = worst.min(min_singular_value(x)?);
    }
    Ok(RankReport { pass: worst > tol, worst_sigma_min: worst })
}

/// Pair-similarity values |<X_n^T X_n, X_m^T X_m>| over n < m.
/// The trace inner product equals ||X_n X_m^T||_F^2.
pub fn pair_similarities(dataset: &Dataset) -> Vec<f64> {
    let n = dataset.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).collect();
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let cross = dataset.inputs[a].matmul_nt(&dataset.inputs[b]);
            let v: f64 = cross.data().iter().map(|x| x * x).sum();
            v.abs()
        })
        .collect()
}

/// Empirical tail frequencies over the given thresholds.
pub fn similarity_tail(dataset: &Dataset, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if dataset.len() < 2 {
        return Err(Error::InvalidInput("similarity_tail needs at least two samples".into()));
    }
    let vals = pair_similarities(dataset);
    let total = vals.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| (t, vals.iter().filter(|&&v| v >= t).count() as f64 / total))
        .collect())
}

/// lambda_min of the empirical covariance (1/N) sum_n x_n x_n^T with
/// x_n the token sum of sample n.
pub fn covariance_min_eig(dataset: &Dataset) -> Result<f64> {
    let d = dataset.token_dim();
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InvalidInput("covariance of empty dataset".into()));
    }
    let mut cov = Matrix::zeros(d, d);
    for x in &dataset.inputs {
        let mut tok_sum = vec![0.0; d];
        for i in 0..x.rows() {
            for (s, v) in tok_sum.iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += tok_sum[a] * tok_sum[b];
            }
        }
    }
    cov.scale(1.0 / n as f64);
    sym_min_eigen(&cov)
}

/// Population lambda_min of the covariance above for data produced by
/// `gen_synthetic`: the generator is isotropic, so E[x x^T] = (c_x^2 d_s / d) I.
pub fn covariance_population_value(d_s: usize, d: usize, c_x: f64) -> f64 {
    c_x * c_x * d_s as f64 / d as f64
}

/// Reshapes N row vectors into a dataset, one matrix per vector.
/// No rescaling happens here; c_x is derived from the vectors so the
/// boundedness invariant holds and flattening recovers the input exactly.
pub fn vectorize_mode(vectors: &Matrix, targets: &[f64], mode: VectorMode) -> Result<Dataset> {
    if vectors.rows() != targets.len() {
        return Err(Error::LengthMismatch { expected: vectors.rows(), got: targets.len() });
    }
    let d_tilde = vectors.cols();
    let (d_s, d) = match mode {
        VectorMode::Embedding => (1, d_tilde),
        VectorMode::Sequence => (d_tilde, 1),
    };
    let inputs: Vec<Matrix> = (0..vectors.rows())
        .map(|n| Matrix::from_vec(d_s, d, vectors.row(n).to_vec()).unwrap())
        .collect();
    let c_x = inputs
        .iter()
        .map(|x| x.frobenius_norm() / (d_s as f64).sqrt())
        .fold(0.0f64, f64::max);
    Ok(Dataset { inputs, targets: targets.to_vec(), c_x, seed: 0 })
}

pub fn assumption_report(
    dataset: &Dataset,
    t_grid: &[f64],
    rank_tol: f64,
) -> Result<AssumptionReport> {
    let rank = rank_check(dataset, rank_tol)?;
    let tail_curve = similarity_tail(dataset, t_grid)?;
    let cov_min_eig = covariance_min_eig(dataset)?;
    Ok(AssumptionReport {
        full_rank: rank.pass,
        worst_sigma_min: rank.worst_sigma_min,
        tail_curve,
        cov_min_eig,
    })
}

// ---------------------------------------------------------------------------
// Dataset file format: one header line "N d_s d C_x seed", then per sample
// d_s row-major input lines followed by one target line.
// ---------------------------------------------------------------------------

pub fn save_dataset(dataset: &Dataset, path: &Path) -> std::io::Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    writeln!(
        w,
        "{} {} {} {:.16e} {}",
        dataset.len(),
        dataset.seq_len(),
        dataset.token_dim(),
        dataset.c_x,
        dataset.seed
    )?;
    for (x, y) in dataset.inputs.iter().zip(&dataset.targets) {
        for i in 0..x.rows() {
            let line: Vec<String> = x.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "{y:.16e}")?;
    }
    w.flush()
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    let mut lines = std::io::BufReader::new(f).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty dataset file".into()))?
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 5 {
        return Err(Error::InvalidInput("dataset header must be: N d_s d C_x seed".into()));
    }
    let parse_err = |what: &str| Error::InvalidInput(format!("bad {what} in dataset header"));
    let n: usize = head[0].parse().map_err(|_| parse_err("N"))?;
    let d_s: usize = head[1].parse().map_err(|_| parse_err("d_s"))?;
    let d: usize = head[2].parse().map_err(|_| parse_err("d"))?;
    let c_x: f64 = head[3].parse().map_err(|_| parse_err("C_x"))?;
    let seed: u64 = head[4].parse().map_err(|_| parse_err("seed"))?;

    let mut next_numbers = |count: usize| -> Result<Vec<f64>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("dataset file truncated".into()))?
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let vals: Result<Vec<f64>> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number {t}"))))
            .collect();
        let vals = vals?;
        if vals.len() != count {
            return Err(Error::LengthMismatch { expected: count, got: vals.len() });
        }
        Ok(vals)
    };

    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = Vec::with_capacity(d_s * d);
        for _ in 0..d_s {
            data.extend(next_numbers(d)?);
        }
        inputs.push(Matrix::from_vec(d_s, d, data)?);
        targets.push(next_numbers(1)?[0]);
    }
    let ds = Dataset { inputs, targets, c_x, seed };
    ds.check_bound()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_shapes_norms_determinism() {
        let ds = gen_synthetic(4, 3, 5, 2.0, 9);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.seq_len(), 3);
        assert_eq!(ds.token_dim(), 5);
        for x in &ds.inputs {
            let want = (3.0f64).sqrt() * 2.0;
            assert!((x.frobenius_norm() - want).abs() <= 1e-12 * want);
        }
        let ds2 = gen_synthetic(4, 3, 5, 2.0, 9);
        for (a, b) in ds.inputs.iter().zip(&ds2.inputs) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(ds.targets, ds2.targets);
    }

    #[test]
    fn rank_check_duplicate_row_fails_gaussian_passes() {
        let mut ds = gen_synthetic(3, 4, 10, 1.0, 5);
        assert!(rank_check(&ds, 1e-8).unwrap().pass);
        // Plant a duplicated row in one sample.
        let row = ds.inputs[1].row(0).to_vec();
        ds.inputs[1].row_mut(2).copy_from_slice(&row);
        let rep = rank_check(&ds, 1e-8).unwrap();
        assert!(!rep.pass);
        assert!(rep.worst_sigma_min <= 1e-8);
        // Tolerance larger than every sigma_min also fails.
        let ds3 = gen_synthetic(3, 2, 6, 1.0, 6);
        let rep3 = rank_check(&ds3, 1e9).unwrap();
        assert!(!rep3.pass);
    }

    #[test]
    fn tail_endpoints_and_monotonicity() {
        let ds = gen_synthetic(12, 3, 8, 1.0, 17);
        let vals = pair_similarities(&ds);
        let vmax = vals.iter().cloned().fold(0.0f64, f64::max);
        let grid = [0.0, 0.5 * vmax, vmax * 1.0001, vmax * 2.0];
        let curve = similarity_tail(&ds, &grid).unwrap();
        assert_eq!(curve[0].1, 1.0);
        assert_eq!(curve.last().unwrap().1, 0.0);
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1, "tail curve not non-increasing");
        }
    }

    #[test]
    fn covariance_psd_and_rank_deficient_when_small_n() {
        let ds = gen_synthetic(30, 2, 6, 1.0, 3);
        assert!(covariance_min_eig(&ds).unwrap() >= 0.0);
        let small = gen_synthetic(3, 2, 6, 1.0, 4);
        let lam = covariance_min_eig(&small).unwrap();
        assert!(lam.abs() <= 1e-10, "N < d covariance must be singular, got {lam}");
    }

    #[test]
    fn vectorize_shapes_and_roundtrip() {
        let mut rng = Rng::new(2);
        let vecs = crate::numerics::gaussian_matrix(5, 7, 1.0, &mut rng);
        let ys = vec![0.0; 5];
        let emb = vectorize_mode(&vecs, &ys, VectorMode::Embedding).unwrap();
        assert_eq!((emb.seq_len(), emb.token_dim()), (1, 7));
        let seq = vectorize_mode(&vecs, &ys, VectorMode::Sequence).unwrap();
        assert_eq!((seq.seq_len(), seq.token_dim()), (7, 1));
        for n in 0..5 {
            assert_eq!(emb.inputs[n].data(), vecs.row(n));
            assert_eq!(seq.inputs[n].data(), vecs.row(n));
        }
        emb.check_bound().unwrap();
        seq.check_bound().unwrap();
    }

    #[test]
    fn dataset_file_roundtrip() {
        let ds = gen_synthetic(3, 2, 4, 1.5, 77);
        let dir = std::env::temp_dir().join("attnlab_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.txt");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.seed, 77);
        for (a, b) in ds.inputs.iter().zip(&back.inputs) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x, y, "17-significant-digit roundtrip must be exact");
            }
        }
        assert_eq!(ds.targets, back.targets);
    }
}
