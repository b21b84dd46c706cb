//! Output helpers: 17-significant-digit CSV writing and the run manifest.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Decimal with 17 significant digits; round-trips f64 exactly.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn g17_opt(x: Option<f64>) -> String {
    x.map(g17).unwrap_or_default()
}

pub struct OutDir {
    pub dir: PathBuf,
    files: Vec<PathBuf>,
    started: Instant,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output dir {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), files: vec![], started: Instant::now() })
    }

    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
        self.write_csv_with_footer(name, header, rows, None)
    }

    pub fn write_csv_with_footer(
        &mut self,
        name: &str,
        header: &str,
        rows: &[String],
        footer: Option<&str>,
    ) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut body = String::with_capacity(rows.len() * 32 + header.len() + 2);
        body.push_str(header);
        body.push('\n');
        for r in rows {
            body.push_str(r);
            body.push('\n');
        }
        if let Some(f) = footer {
            body.push_str(f);
            body.push('\n');
        }
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path.clone());
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path.clone());
        Ok(path)
    }

    pub fn register(&mut self, path: PathBuf) {
        self.files.push(path);
    }

    /// Writes manifest.json atomically (temp file + rename) as the last act
    /// of a run: config echo, version, seed, wall clock, output digests.
    pub fn finish_manifest<C: Serialize>(
        &mut self,
        command: &str,
        config: &C,
        seed: u64,
        notes: &[String],
    ) -> Result<()> {
        #[derive(Serialize)]
        struct FileEntry {
            path: String,
            bytes: u64,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest<'a, C: Serialize> {
            command: &'a str,
            version: &'a str,
            seed: u64,
            wall_clock_seconds: f64,
            config: &'a C,
            notes: &'a [String],
            outputs: Vec<FileEntry>,
        }
        let mut outputs = vec![];
        for f in &self.files {
            let data = std::fs::read(f)?;
            let mut h = Sha256::new();
            h.update(&data);
            outputs.push(FileEntry {
                path: f.file_name().unwrap().to_string_lossy().into_owned(),
                bytes: data.len() as u64,
                sha256: format!("{:x}", h.finalize()),
            });
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            config,
            notes,
            outputs,
        };
        let tmp = self.dir.join(".manifest.json.tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, &manifest)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, self.dir.join("manifest.json"))?;
        Ok(())
    }
}
