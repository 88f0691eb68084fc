//! Run configuration read from TOML.

use exitgrid::regularity::RegularityOptions;
use exitgrid::{Error, Result, SolveOptions};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Kept as raw TOML and handed to the problem parser.
    pub problem: Option<toml::Value>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub regularity: RegularityOptions,
    #[serde(default)]
    pub extremal: ExtremalSection,
    #[serde(default)]
    pub synthesize: SynthesizeSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtremalSection {
    /// Boundary points, or points that are projected onto the boundary.
    pub points: Vec<Vec<f64>>,
    pub duration: f64,
    pub step: f64,
    pub tie_break: Option<usize>,
}

impl Default for ExtremalSection {
    fn default() -> Self {
        ExtremalSection { points: vec![], duration: 1.0, step: 1e-3, tie_break: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesizeSection {
    pub points: Vec<Vec<f64>>,
    /// Euler step in units of the smallest grid spacing.
    pub step_cells: f64,
    pub max_steps: usize,
}

impl Default for SynthesizeSection {
    fn default() -> Self {
        SynthesizeSection { points: vec![], step_cells: 0.5, max_steps: 200_000 }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    pub points: Vec<Vec<f64>>,
    /// Extra seeded samples among converged nodes.
    pub samples: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_per_axis: usize,
    pub duration: f64,
    pub step: f64,
    pub tie_break: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { n_per_axis: 81, duration: 2.5, step: 1e-2, tie_break: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub names: Vec<String>,
    pub resolutions: Vec<Resolution>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub gnuplot: bool,
    /// Also write the field in the binary format.
    pub binary: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), gnuplot: true, binary: false }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Problem table re-serialized for the library parser.
    pub fn problem_text(&self) -> Result<String> {
        let p = self.problem.as_ref().ok_or_else(|| Error::MissingField("problem".into()))?;
        let mut t = toml::Table::new();
        t.insert("problem".into(), p.clone());
        toml::to_string(&t).map_err(|e| Error::Config(e.to_string()))
    }
}

pub fn expand_resolution(r: &Resolution, d: usize) -> Vec<usize> {
    match r {
        Resolution::Uniform(n) => vec![*n; d],
        Resolution::PerAxis(v) => v.clone(),
    }
}
