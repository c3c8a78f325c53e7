//! Artifact writers: CSV with a provenance header block, JSON reports with
//! an embedded provenance object, and PGM masks. Every file carries the
//! config hash so `replay` can verify artifacts against their configuration.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::VERSION;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(scenario: &str, config_sha256: &str, seed: u64) -> Self {
        Self {
            version: VERSION.into(),
            scenario: scenario.into(),
            config_sha256: config_sha256.into(),
            seed,
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# blockcs {}\n# scenario: {}\n# config-sha256: {}\n# seed: {}\n",
            self.version, self.scenario, self.config_sha256, self.seed
        )
    }

    fn pgm_comment(&self) -> String {
        format!(
            "blockcs {}\nscenario: {}\nconfig-sha256: {}\nseed: {}",
            self.version, self.scenario, self.config_sha256, self.seed
        )
    }
}

/// Floats in CSV bodies carry 17 significant digits so replays are
/// byte-identical and round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.16e}")
}

pub struct CsvFile {
    lines: Vec<String>,
    provenance: Provenance,
}

impl CsvFile {
    pub fn new(provenance: &Provenance, columns: &[&str]) -> Self {
        Self {
            lines: vec![columns.join(",")],
            provenance: provenance.clone(),
        }
    }

    pub fn push_row(&mut self, fields: &[String]) {
        self.lines.push(fields.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = self.lines.join("\n");
        let content = format!("{}{}\n", self.provenance.csv_header(), body);
        std::fs::write(path, content).with_context(|| format!("cannot write {}", path.display()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, report: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Wrapper<'a, T: Serialize> {
        provenance: &'a Provenance,
        report: &'a T,
    }
    let text = serde_json::to_string_pretty(&Wrapper { provenance, report })?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_pgm_mask(
    path: &Path,
    provenance: &Provenance,
    mask: &[bool],
    sqrt_n: usize,
) -> Result<()> {
    let pgm = blockcs_core::sampling::write_pgm(mask, sqrt_n, Some(&provenance.pgm_comment()))?;
    std::fs::write(path, pgm).with_context(|| format!("cannot write {}", path.display()))
}

/// The artifact paths a scenario produced, for logging and replay.
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output dir {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }
}
