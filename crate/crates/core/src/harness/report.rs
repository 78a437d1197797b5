//! Report bundles: CSV tables, a `key = value` manifest, the pass/fail
//! ledger over the acceptance criteria, and a column README. Bundles are
//! written to a sibling temp directory and renamed into place.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const CRITERIA: std::ops::RangeInclusive<u8> = 1..=10;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    /// (column, description)
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[(&str, &str)]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|(c, d)| (c.to_string(), d.to_string())).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.iter().map(|c| c.0.as_str()).collect::<Vec<_>>().join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Fixed-width float formatting for tables; NaN and infinities spelled out.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else {
        v.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Not decided by this experiment.
    NotRun,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotRun => "NOT-RUN",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub status: Status,
    pub detail: String,
}

/// Every criterion id exactly once.
#[derive(Clone, Debug, PartialEq)]
pub struct Ledger {
    entries: BTreeMap<u8, Verdict>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self { entries: CRITERIA.map(|id| (id, Verdict { status: Status::NotRun, detail: String::new() })).collect() }
    }
}

impl Ledger {
    pub fn record(&mut self, id: u8, pass: bool, detail: impl Into<String>) {
        assert!(CRITERIA.contains(&id), "criterion {id} out of range");
        let status = if pass { Status::Pass } else { Status::Fail };
        self.entries.insert(id, Verdict { status, detail: detail.into() });
    }

    pub fn get(&self, id: u8) -> &Verdict {
        &self.entries[&id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, &Verdict)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn failures(&self) -> Vec<u8> {
        self.iter().filter(|(_, v)| v.status == Status::Fail).map(|(k, _)| k).collect()
    }

    pub fn all_pass(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("criterion,status,detail\n");
        for (id, v) in self.iter() {
            let _ = writeln!(s, "{id},{},\"{}\"", v.status.label(), v.detail.replace('"', "'"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub experiment: String,
    pub seed: u64,
    pub tables: Vec<Table>,
    pub summary: Vec<(String, String)>,
    pub ledger: Ledger,
}

impl ReportBundle {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self { experiment: experiment.into(), seed, tables: Vec::new(), summary: Vec::new(), ledger: Ledger::default() }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.into(), value.to_string()));
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn manifest(&self) -> String {
        let mut s = format!("experiment = {}\nseed = {}\n", self.experiment, self.seed);
        for (k, v) in &self.summary {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn readme(&self) -> String {
        let mut s = format!("# {} bundle\n\nSeed {}. Files:\n\n- manifest.txt: run summary\n- ledger.csv: criterion verdicts\n", self.experiment, self.seed);
        for t in &self.tables {
            let _ = write!(s, "\n## {}.csv\n\n| column | meaning |\n|---|---|\n", t.name);
            for (c, d) in &t.columns {
                let _ = writeln!(s, "| {c} | {d} |");
            }
        }
        s
    }

    /// 0 iff no criterion failed.
    pub fn exit_code(&self) -> i32 {
        if self.ledger.all_pass() {
            0
        } else {
            1
        }
    }
}

/// Writes the bundle to `out`, replacing any previous bundle there. The
/// directory appears complete or not at all.
pub fn emit_tables(bundle: &ReportBundle, out: &Path) -> Result<i32> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent)?;
    let name = out.file_name().ok_or_else(|| Error::Config(format!("output path {} has no final component", out.display())))?;
    let tmp = tempfile::Builder::new().prefix(&format!(".{}.", name.to_string_lossy())).tempdir_in(&parent)?;
    for t in &bundle.tables {
        std::fs::write(tmp.path().join(format!("{}.csv", t.name)), t.to_csv())?;
    }
    std::fs::write(tmp.path().join("manifest.txt"), bundle.manifest())?;
    std::fs::write(tmp.path().join("ledger.csv"), bundle.ledger.to_csv())?;
    std::fs::write(tmp.path().join("README.md"), bundle.readme())?;
    let staged = tmp.keep();
    if out.exists() {
        let old = tempfile::Builder::new().prefix(&format!(".{}.old.", name.to_string_lossy())).tempdir_in(&parent)?.keep();
        std::fs::rename(out, old.join("bundle"))?;
        std::fs::rename(&staged, out)?;
        std::fs::remove_dir_all(&old)?;
    } else {
        std::fs::rename(&staged, out)?;
    }
    Ok(bundle.exit_code())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bundle_passes() {
        let b = ReportBundle::new("x", 0);
        assert_eq!(b.exit_code(), 0);
        assert_eq!(b.ledger.iter().count(), 10);
    }

    #[test]
    fn failure_is_named() {
        let mut b = ReportBundle::new("x", 0);
        b.ledger.record(2, false, "slope off");
        assert_eq!(b.exit_code(), 1);
        assert_eq!(b.ledger.failures(), vec![2]);
        assert!(b.ledger.to_csv().contains("2,FAIL,\"slope off\""));
    }

    #[test]
    fn emit_replaces_previous_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("b");
        let mut b = ReportBundle::new("x", 1);
        let mut t = Table::new("t", &[("a", "first")]);
        t.push(vec!["1".into()]);
        b.tables.push(t);
        assert_eq!(emit_tables(&b, &out).unwrap(), 0);
        b.tables[0].rows[0][0] = "2".into();
        emit_tables(&b, &out).unwrap();
        assert_eq!(std::fs::read_to_string(out.join("t.csv")).unwrap(), "a\n2\n");
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1, "{names:?}");
    }
}
