//! Experiment configuration documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use qgbc::dynamics::CoefficientSignal;
use qgbc::graph::{presets, GraphDocument, MetricGraph};
use qgbc::quadrature::Poly;

use crate::exit::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSource,
    #[serde(default)]
    pub boundary: BoundaryBlock,
    pub mesh: MeshBlock,
    #[serde(default)]
    pub scale: ScaleBlock,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub spectrum: Option<SpectrumBlock>,
    #[serde(default)]
    pub cayley: Option<CayleyBlock>,
    #[serde(default)]
    pub propagate: Option<PropagateBlock>,
    #[serde(default, rename = "stability-sweep")]
    pub stability_sweep: Option<SweepBlock>,
    #[serde(default, rename = "control-search")]
    pub control_search: Option<ControlBlock>,
    #[serde(default, rename = "check-assumptions")]
    pub check_assumptions: Option<AssumptionsBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Preset(Preset),
    File(PathBuf),
    Document(GraphDocument),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Preset {
    Interval { length: f64 },
    RobinInterval { length: f64 },
    GluedPair { lengths: [f64; 2] },
    Lasso,
}

/// Named quasi-δ parameters: `delta` by vertex, `chi` by `vertex/edge/endpoint`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryBlock {
    #[serde(default)]
    pub delta: BTreeMap<String, f64>,
    #[serde(default)]
    pub chi: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    pub h: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleBlock {
    /// Shift `m`; the sampled lower bound plus one when absent.
    #[serde(default)]
    pub m: Option<f64>,
    /// Reference time of the scale; the family start when absent.
    #[serde(default)]
    pub anchor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    pub count: usize,
    #[serde(default)]
    pub exact: Option<ExactLadder>,
}

/// Closed-form ladder `(nπ/ℓ)²` for Dirichlet-type circuits of total length ℓ.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExactLadder {
    Dirichlet { length: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CayleyBlock {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateBlock {
    pub duration: f64,
    pub dt: f64,
    /// Potential profile, one polynomial (coefficients in `x`) per edge.
    pub potential: Vec<Vec<f64>>,
    pub signal: SignalSpec,
    #[serde(default)]
    pub initial: Vec<usize>,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

fn default_probes() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<f64> },
    PiecewiseLinear { times: Vec<f64>, values: Vec<f64> },
    /// Local polynomial coefficients on each piece, in `t − t_k`.
    Polynomial { breaks: Vec<f64>, pieces: Vec<Vec<f64>> },
}

impl SignalSpec {
    pub fn build(&self) -> qgbc::Result<CoefficientSignal> {
        match self {
            SignalSpec::PiecewiseConstant { breaks, values } => CoefficientSignal::piecewise_constant(breaks.clone(), values),
            SignalSpec::PiecewiseLinear { times, values } => CoefficientSignal::linear_interpolant(times.clone(), values),
            SignalSpec::Polynomial { breaks, pieces } => {
                CoefficientSignal::new(breaks.clone(), pieces.iter().map(|p| Poly(p.clone())).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub chi_bar: BTreeMap<String, f64>,
    pub r: f64,
    pub u0: f64,
    pub v: SignalSpec,
    pub n: Vec<usize>,
    pub dt: f64,
    #[serde(default = "default_probes")]
    pub probes: usize,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ControlSystemKind {
    Boundary,
    Induction,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Eigenstate { index: usize },
    /// JSON array of `[re, im]` pairs in frame coordinates.
    Vector { file: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBlock {
    pub system: ControlSystemKind,
    pub chi_bar: BTreeMap<String, f64>,
    pub r: f64,
    pub u0: f64,
    pub u1: f64,
    #[serde(rename = "T")]
    pub duration: f64,
    pub pieces: usize,
    pub restarts: usize,
    pub target: TargetSpec,
    pub epsilon: f64,
    #[serde(default = "default_lift")]
    pub lift: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub positive_only: bool,
}

fn default_lift() -> usize {
    400
}

fn default_dt() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsBlock {
    pub chi_bar: BTreeMap<String, f64>,
    pub r: f64,
    /// Flux schedules `u(t)`; every one is checked as a member of one family.
    pub schedules: Vec<SignalSpec>,
    #[serde(default)]
    pub m_cap: Option<f64>,
    #[serde(default)]
    pub c_cap: Option<f64>,
}

/// Parses a configuration, reporting schema errors with their JSON path.
pub fn parse(text: &str) -> Result<ExperimentConfig, Failure> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Failure::ConfigInvalid { path, message: e.into_inner().to_string() }
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    parse(&text)
}

impl ExperimentConfig {
    pub fn graph(&self, base: &Path) -> Result<MetricGraph, Failure> {
        let lengths: Vec<f64> = match &self.graph {
            GraphSource::Preset(Preset::Interval { length } | Preset::RobinInterval { length }) => vec![*length],
            GraphSource::Preset(Preset::GluedPair { lengths }) => lengths.to_vec(),
            _ => Vec::new(),
        };
        if let Some(&length) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(qgbc::Error::NonpositiveLength { edge: "preset".into(), length }.into());
        }
        let g = match &self.graph {
            GraphSource::Preset(Preset::Interval { length }) => presets::interval(*length),
            GraphSource::Preset(Preset::RobinInterval { length }) => presets::robin_interval(*length),
            GraphSource::Preset(Preset::GluedPair { lengths }) => presets::glued_pair(lengths[0], lengths[1]),
            GraphSource::Preset(Preset::Lasso) => presets::lasso(),
            GraphSource::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Failure::io(&path, e))?;
                MetricGraph::from_json(&text)?
            }
            GraphSource::Document(doc) => MetricGraph::build(doc)?,
        };
        Ok(g)
    }

    /// Command block, or CONFIG_INVALID naming the missing key.
    pub fn block<'a, T>(&self, block: &'a Option<T>, key: &str) -> Result<&'a T, Failure> {
        block.as_ref().ok_or_else(|| Failure::ConfigInvalid { path: key.to_string(), message: format!("missing block `{key}`") })
    }
}
