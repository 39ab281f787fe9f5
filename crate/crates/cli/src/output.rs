use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use probgraph::criticism::PpcResult;

use crate::CliError;

/// Column written next to the iteration index in `trace.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    Loss,
    AcceptanceRate,
}

impl TraceKind {
    fn header(self) -> &'static str {
        match self {
            TraceKind::Loss => "loss",
            TraceKind::AcceptanceRate => "acceptance_rate",
        }
    }
}

/// Artifacts of one run, written under a single directory.
pub struct Output {
    dir: PathBuf,
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn csv(&self, name: &str, comment: Option<&str>, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut file = BufWriter::new(File::create(&path).map_err(|e| io(&path, e))?);
        if let Some(c) = comment {
            writeln!(file, "# {c}").map_err(|e| io(&path, e))?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(|e| io(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))
    }

    pub fn trace(&self, kind: TraceKind, rows: &[(usize, f64)]) -> Result<(), CliError> {
        let rows: Vec<Vec<String>> = rows.iter().map(|(i, v)| vec![i.to_string(), v.to_string()]).collect();
        self.csv("trace.csv", None, &["iteration", kind.header()], &rows)
    }

    pub fn posterior(&self, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        self.csv("posterior.csv", None, header, rows)
    }

    pub fn ppc(&self, result: &PpcResult) -> Result<(), CliError> {
        let comment = format!("t_obs={},p_value={}", result.t_obs, result.p_value);
        let rows: Vec<Vec<String>> = result
            .t_reps
            .iter()
            .enumerate()
            .map(|(i, t)| vec![i.to_string(), t.to_string()])
            .collect();
        self.csv("ppc.csv", Some(&comment), &["rep_index", "t_rep"], &rows)
    }

    pub fn metrics(&self, metrics: &BTreeMap<String, f64>) -> Result<(), CliError> {
        let path = self.dir.join("metrics.json");
        let mut text = serde_json::to_string_pretty(metrics).map_err(|e| io(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io(&path, e))
    }
}
