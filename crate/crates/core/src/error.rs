use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // graph
    #[error("boundary point {edge}/{endpoint} is assigned more than once")]
    DuplicateAssignment { edge: String, endpoint: String },
    #[error("boundary point {edge}/{endpoint} is neither in a junction nor declared exterior")]
    DanglingEndpoint { edge: String, endpoint: String },
    #[error("edge {edge} has non-positive length {length}")]
    NonpositiveLength { edge: String, length: f64 },
    #[error("graph is not connected")]
    Disconnected,
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),
    #[error("junction {vertex} lists {edge}/{endpoint}, which is not incident to it")]
    IncidenceMismatch { vertex: String, edge: String, endpoint: String },
    #[error("junction {0} lists no boundary points")]
    EmptyJunction(String),
    #[error("invalid graph document: {0}")]
    InvalidDocument(String),

    // boundary
    #[error("boundary parameters do not match the layout: {0}")]
    ParamMismatch(String),
    #[error("delta {delta} at junction {vertex} is outside the admissible range |delta| <= pi - {margin}")]
    DeltaOutOfRange { vertex: String, delta: f64, margin: f64 },
    #[error("no spectral gap at -1: gap {gap} below threshold {threshold}")]
    NoGap { gap: f64, threshold: f64 },

    // assembly / linear algebra
    #[error("mesh and boundary data disagree: {0}")]
    MeshBcMismatch(String),
    #[error("eigensolver failure in {routine} (info = {info})")]
    EigensolveFail { routine: &'static str, info: i32 },

    // scales
    #[error("reference operator is not positive: smallest eigenvalue {lambda_min}")]
    NotPositive { lambda_min: f64 },

    // dynamics
    #[error("time {t} outside the signal domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("derivative requested at breakpoint {0}")]
    AtBreakpoint(f64),
    #[error("signal is not piecewise constant on [{start}, {end}]")]
    NotPiecewiseConstant { start: f64, end: f64 },
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // stability
    #[error("uniform lower bound violated: lambda_min = {lambda_min} at t = {t}")]
    A1Violation { lambda_min: f64, t: f64 },
    #[error("norm equivalence constant is unbounded (c = {0})")]
    A3Unbounded(f64),
    #[error("derivative budget diverges on piece {piece}: {detail}")]
    A4Divergent { piece: usize, detail: String },

    // control
    #[error("initial and target states have different norms ({0} vs {1})")]
    NormMismatch(f64, f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}
