//! Parameter checkpoint file: a dims header line followed by the four weight
//! groups as labeled 17-significant-digit text blocks, one matrix row per
//! line. Loading is exact (decimal round-trip).

use crate::out::g17;
use anyhow::{bail, Context, Result};
use attnlab::model::{Dims, ModelParams};
use attnlab::numerics::Matrix;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

const MAGIC: &str = "attnlab-params v1";

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    let d = params.dims;
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "n={} d_s={} d={} d_m={}", d.n, d.d_s, d.d, d.d_m)?;
    for (name, m) in [("W_Q", &params.w_q), ("W_K", &params.w_k), ("W_V", &params.w_v)] {
        writeln!(w, "{name}")?;
        for i in 0..m.rows() {
            let line: Vec<String> = m.row(i).iter().map(|v| g17(*v)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
    }
    writeln!(w, "w_O")?;
    for v in &params.w_o {
        writeln!(w, "{}", g17(*v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let f = std::fs::File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut lines = std::io::BufReader::new(f).lines();
    let mut next = || -> Result<String> {
        lines.next().context("checkpoint truncated")?.context("read error")
    };
    if next()? != MAGIC {
        bail!("not a parameter checkpoint (bad magic)");
    }
    let header = next()?;
    let mut dims = Dims { n: 0, d_s: 0, d: 0, d_m: 0 };
    for tok in header.split_whitespace() {
        let (k, v) = tok.split_once('=').context("malformed dims header")?;
        let v: usize = v.parse().context("malformed dims value")?;
        match k {
            "n" => dims.n = v,
            "d_s" => dims.d_s = v,
            "d" => dims.d = v,
            "d_m" => dims.d_m = v,
            other => bail!("unknown dims key {other}"),
        }
    }
    let read_matrix = |label: &str, next: &mut dyn FnMut() -> Result<String>| -> Result<Matrix> {
        if next()? != label {
            bail!("expected block {label}");
        }
        let mut data = Vec::with_capacity(dims.d_m * dims.d);
        for _ in 0..dims.d_m {
            let line = next()?;
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().context("bad weight value")?);
            }
        }
        Matrix::from_vec(dims.d_m, dims.d, data).map_err(|e| anyhow::anyhow!("{e}"))
    };
    let w_q = read_matrix("W_Q", &mut next)?;
    let w_k = read_matrix("W_K", &mut next)?;
    let w_v = read_matrix("W_V", &mut next)?;
    if next()? != "w_O" {
        bail!("expected block w_O");
    }
    let mut w_o = Vec::with_capacity(dims.d_m);
    for _ in 0..dims.d_m {
        w_o.push(next()?.trim().parse::<f64>().context("bad readout value")?);
    }
    Ok(ModelParams { w_q, w_k, w_v, w_o, dims })
}

#[cfg(test)]
mod tests {
    use super::*;
    use attnlab::model::{init_params, InitScheme};
    use attnlab::numerics::Rng;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dims = Dims { n: 3, d_s: 2, d: 5, d_m: 7 };
        let params = init_params(dims, &InitScheme::he(5, 7), &mut Rng::new(11));
        let dir = std::env::temp_dir().join("attnlab_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.txt");
        save_params(&params, &path).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(back.dims, dims);
        assert_eq!(back.w_q.data(), params.w_q.data());
        assert_eq!(back.w_k.data(), params.w_k.data());
        assert_eq!(back.w_v.data(), params.w_v.data());
        assert_eq!(back.w_o, params.w_o);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = std::env::temp_dir().join("attnlab_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("garbage.txt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(load_params(&path).is_err());
    }
}
