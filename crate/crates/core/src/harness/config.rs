//! Experiment specs: `key = value` lines under `[section]` headers.
//!
//! ```text
//! [experiment]
//! name = kam-run
//! seed = 7
//! out = bundles/kam
//!
//! [kam]
//! t0 = auto
//! max_steps = 8
//! ```

use crate::error::{Error, Result};
use ini::Ini;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExperimentKind {
    ScalingLaws,
    Homotopy,
    Integrability,
    KamRun,
    FeasibilityMap,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::ScalingLaws,
        ExperimentKind::Homotopy,
        ExperimentKind::Integrability,
        ExperimentKind::KamRun,
        ExperimentKind::FeasibilityMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ScalingLaws => "scaling-laws",
            ExperimentKind::Homotopy => "homotopy",
            ExperimentKind::Integrability => "integrability",
            ExperimentKind::KamRun => "kam-run",
            ExperimentKind::FeasibilityMap => "feasibility-map",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{name}'; known: {}", Self::names().join(", "))))
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|k| k.name()).collect()
    }

    /// Library modules the experiment exercises.
    pub fn targets(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::ScalingLaws => &["lp", "znorm", "smooth"],
            ExperimentKind::Homotopy => &["dbar", "bm"],
            ExperimentKind::Integrability => &["acs"],
            ExperimentKind::KamRun => &["kam", "acs", "domain", "dbar", "smooth"],
            ExperimentKind::FeasibilityMap => &["kam"],
        }
    }

    /// Acceptance criteria the experiment decides.
    pub fn criteria(self) -> &'static [u8] {
        match self {
            ExperimentKind::ScalingLaws => &[1, 2, 3, 9],
            ExperimentKind::Homotopy => &[4],
            ExperimentKind::Integrability => &[5, 6],
            ExperimentKind::KamRun => &[8],
            ExperimentKind::FeasibilityMap => &[7],
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            ExperimentKind::ScalingLaws => "smoothing gain and remainder slopes, commutators, norm equivalence",
            ExperimentKind::Homotopy => "spectral and kernel homotopy identity residuals",
            ExperimentKind::Integrability => "integrability residuals and inverse maps",
            ExperimentKind::KamRun => "torus iteration against the generator oracle",
            ExperimentKind::FeasibilityMap => "p(d) and parameter-region areas over a d grid",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Grid shape override, e.g. `16x16x16x16`.
    pub grid: Option<Vec<usize>>,
    pub max_steps: Option<usize>,
    /// Remaining keys as `section.key`.
    pub params: BTreeMap<String, String>,
}

pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let shape = s
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad grid shape '{s}'"))))
        .collect::<Result<Vec<_>>>()?;
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Config(format!("bad grid shape '{s}'")));
    }
    Ok(shape)
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self { kind, seed, out: None, grid: None, max_steps: None, params: BTreeMap::new() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut params = BTreeMap::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("experiment");
            for (k, v) in props.iter() {
                let key = format!("{section}.{k}");
                if params.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(Error::Config(format!("duplicate key {key}")));
                }
            }
        }
        let name = params.remove("experiment.name").ok_or_else(|| Error::Config("missing experiment.name".into()))?;
        let kind = ExperimentKind::from_name(&name)?;
        let seed = match params.remove("experiment.seed") {
            Some(s) => s.parse().map_err(|_| Error::Config(format!("seed '{s}' is not a 64-bit integer")))?,
            None => 0,
        };
        let out = params.remove("experiment.out").map(PathBuf::from);
        let grid = params.remove("experiment.grid").map(|s| parse_shape(&s)).transpose()?;
        let max_steps = params
            .remove("experiment.max_steps")
            .map(|s| s.parse().map_err(|_| Error::Config(format!("max_steps '{s}' is not an integer"))))
            .transpose()?;
        Ok(Self { kind, seed, out, grid, max_steps, params })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn with_param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(|s| s.as_str())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| Error::Config(format!("{key} = '{s}' is not a number"))),
        }
    }

    /// `auto` or absent gives `None`.
    pub fn f64_auto(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None | Some("auto") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| Error::Config(format!("{key} = '{s}' is neither a number nor auto"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| Error::Config(format!("{key} = '{s}' is not a count"))),
        }
    }

    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split([',', ' '])
                .filter(|p| !p.is_empty())
                .map(|p| p.parse().map_err(|_| Error::Config(format!("{key}: '{p}' is not a number"))))
                .collect(),
        }
    }

    /// Keys that no experiment reads are most likely typos.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for k in self.params.keys() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k} for experiment {}", self.kind.name())));
            }
        }
        Ok(())
    }
}
