//! Files written by a run: CSV tables, JSON reports and the manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::verification::{CheckReport, Evidence, Status};

/// Header of every plot series file.
pub const SERIES_HEADER: [&str; 3] = ["level", "value", "stderr"];
/// Header of the check summary table.
pub const SUMMARY_HEADER: [&str; 6] = ["check", "status", "provenance", "margin", "stderr", "constants"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub started: String,
    pub finished: String,
    /// SHA-256 of every output file, by file name.
    pub digests: BTreeMap<String, String>,
}

/// Collects the outputs of one run in a directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<OutputDir> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(File::create(self.root.join(name))?))
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.open(name)?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// A `level,value,stderr` series.
    pub fn series(&mut self, name: &str, points: &[(u32, f64, f64)]) -> Result<()> {
        let rows: Vec<Vec<String>> = points.iter().map(|(n, v, s)| vec![n.to_string(), num(*v), num(*s)]).collect();
        self.csv(name, &SERIES_HEADER, &rows)
    }

    pub fn evidence(&mut self, name: &str, e: &Evidence) -> Result<()> {
        let w = self.open(name)?;
        e.write_csv(w)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// reports.json, summary.csv and one evidence CSV per report.
    pub fn reports(&mut self, reports: &[CheckReport]) -> Result<()> {
        self.json("reports.json", reports)?;
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                let consts: Vec<String> = r.constants.iter().map(|(k, v)| format!("{}={}", k, num(*v))).collect();
                vec![
                    r.id.clone(),
                    r.status.as_str().to_string(),
                    serde_json::to_value(r.provenance).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    num(r.margin),
                    r.stderr.map(num).unwrap_or_default(),
                    consts.join(";"),
                ]
            })
            .collect();
        self.csv("summary.csv", &SUMMARY_HEADER, &rows)?;
        for r in reports {
            if !r.evidence.columns.is_empty() {
                self.evidence(&format!("{}.csv", r.id), &r.evidence)?;
            }
        }
        Ok(())
    }

    pub fn digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for f in &self.files {
            out.insert(f.clone(), sha256_file(&self.root.join(f))?);
        }
        Ok(out)
    }

    /// Writes manifest.json with digests of everything written so far.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.digests = self.digests()?;
        manifest.finished = now();
        let m = manifest.clone();
        self.json("manifest.json", &m)?;
        Ok(manifest)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{:02x}", b)).collect())
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Round-trip formatting of a float.
pub fn num(v: f64) -> String {
    format!("{:.17e}", v)
}

/// Counts of (pass, fail, inconclusive).
pub fn tally(reports: &[CheckReport]) -> (usize, usize, usize) {
    reports.iter().fold((0, 0, 0), |(p, f, i), r| match r.status {
        Status::Pass => (p + 1, f, i),
        Status::Fail => (p, f + 1, i),
        Status::Inconclusive => (p, f, i + 1),
    })
}
