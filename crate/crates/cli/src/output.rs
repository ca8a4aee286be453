//! Artifacts and summaries: CSV tables with a provenance trailer,
//! plain-text dumps and `key=value` lines.

use std::path::{Path, PathBuf};

use crate::error::Result;

/// One verdict contributing to the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

/// Result of a subcommand: summary lines, verdicts and written files.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub lines: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
}

impl Report {
    pub fn line(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool) {
        self.checks.push(Check { name: name.into(), pass });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Fixed-width float formatting used in every artifact.
pub fn num(x: f64) -> String {
    format!("{x:.10e}")
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Where artifacts go. `--out` naming a file (with an extension) fixes the
/// main artifact's path; otherwise it is a directory.
#[derive(Debug, Clone)]
pub struct Output {
    dir: PathBuf,
    primary: Option<PathBuf>,
    hash: String,
}

impl Output {
    pub fn new(out: &str, hash: String) -> Self {
        let p = PathBuf::from(out);
        if p.extension().is_some() {
            let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            Self { dir, primary: Some(p), hash }
        } else {
            Self { dir: p, primary: None, hash }
        }
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Path of the main artifact.
    pub fn main(&self, default_name: &str) -> PathBuf {
        self.primary.clone().unwrap_or_else(|| self.dir.join(default_name))
    }

    /// Path of a secondary artifact, named after the main one when given.
    pub fn extra(&self, default_name: &str, suffix: &str) -> PathBuf {
        match &self.primary {
            Some(p) => {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let ext = Path::new(default_name).extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
                self.dir.join(format!("{stem}_{suffix}.{ext}"))
            }
            None => self.dir.join(default_name),
        }
    }

    fn trailer(&self) -> String {
        format!("# provenance: config_sha256={} terra={}\n", self.hash, env!("CARGO_PKG_VERSION"))
    }

    fn prepare(path: &Path) -> Result<()> {
        if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, report: &mut Report, path: PathBuf, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let mut bytes = w.into_inner().map_err(|e| e.into_error())?;
        bytes.extend_from_slice(self.trailer().as_bytes());
        Self::prepare(&path)?;
        std::fs::write(&path, bytes)?;
        report.line("artifact", path.display());
        report.artifacts.push(path);
        Ok(())
    }

    pub fn write_text(&self, report: &mut Report, path: PathBuf, body: &str) -> Result<()> {
        Self::prepare(&path)?;
        std::fs::write(&path, format!("{body}{}", self.trailer()))?;
        report.line("artifact", path.display());
        report.artifacts.push(path);
        Ok(())
    }
}
