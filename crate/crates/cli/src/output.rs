//! Artifact writers and the per-directory run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use econosim::config::SimConfig;
use econosim::error::{Error, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<SimConfig>,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
    pub version: String,
}

/// Output directory plus the list of files written into it.
pub struct OutDir {
    dir: PathBuf,
    artifacts: Vec<String>,
    started: Instant,
}

pub fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

impl OutDir {
    pub fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            dir,
            artifacts: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Opens `name` for writing and records it as an artifact.
    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes `manifest.json` listing every artifact.
    pub fn finish(self, command: &str, config: Option<SimConfig>, seed: Option<u64>) -> Result<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            config,
            seed,
            artifacts: self.artifacts.clone(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = self.dir.join("manifest.json");
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

/// Two-column CSV with full round-trip precision.
pub fn write_pairs<W: Write, A: std::fmt::Debug, B: std::fmt::Debug>(
    mut w: W,
    header: &str,
    rows: impl IntoIterator<Item = (A, B)>,
) -> Result<()> {
    writeln!(w, "{header}")?;
    for (a, b) in rows {
        writeln!(w, "{a:?},{b:?}")?;
    }
    w.flush()?;
    Ok(())
}

/// Last column of a headed CSV as numbers (`date,close` or `t,U_T`).
pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let field = line.rsplit(',').next().unwrap_or("").trim();
            field.parse::<f64>().map_err(|e| {
                Error::Parse(format!("{} line {}: {field:?}: {e}", path.display(), i + 2))
            })
        })
        .collect()
}
