//! Failure classes and their process exit codes.

use std::fmt;
use std::path::Path;

use qgbc::Error;

/// Exit code table printed in `--help`.
pub const EXIT_CODES: &str = "\
Exit codes:
   0  success
   2  usage error (unknown flag or subcommand)
   3  CONFIG_INVALID      config does not match the schema (path reported)
   4  IO_ERROR            file could not be read or written
   5  GRAPH_INVALID       graph document rejected
   6  PARAM_MISMATCH      boundary or flux parameters do not fit the graph
   7  DELTA_OUT_OF_RANGE  |delta| too close to pi
   8  NO_GAP              boundary unitary has no spectral gap at -1
   9  MESH_BC_MISMATCH    mesh and boundary data disagree
  10  EIGENSOLVE_FAIL     LAPACK reported a failure
  11  NOT_POSITIVE        reference operator of the Hilbert scale is not positive
  12  SIGNAL_INVALID      coefficient signal malformed or evaluated off its domain
  13  A1_VIOLATION        uniform lower bound exceeds the cap
  14  A3_UNBOUNDED        norm equivalence constant exceeds the cap
  15  A4_DIVERGENT        derivative budget diverges
  16  NORM_MISMATCH       initial and target states differ in norm
  17  SCHEDULE_INVALID    control schedule violates |u'| <= r or endpoint data
  18  ASSERTION_FAILED    run finished but a checked property failed (outputs written)";

#[derive(Debug)]
pub enum Failure {
    ConfigInvalid { path: String, message: String },
    Io { path: String, message: String },
    Library(Error),
    Assertion(String),
}

impl Failure {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Failure::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Failure::ConfigInvalid { .. } => "CONFIG_INVALID",
            Failure::Io { .. } => "IO_ERROR",
            Failure::Assertion(_) => "ASSERTION_FAILED",
            Failure::Library(e) => match e {
                Error::DuplicateAssignment { .. }
                | Error::DanglingEndpoint { .. }
                | Error::NonpositiveLength { .. }
                | Error::Disconnected
                | Error::UnknownEdge(_)
                | Error::DuplicateId(_)
                | Error::IncidenceMismatch { .. }
                | Error::EmptyJunction(_)
                | Error::InvalidDocument(_) => "GRAPH_INVALID",
                Error::UnknownVertex(_) | Error::ParamMismatch(_) => "PARAM_MISMATCH",
                Error::DeltaOutOfRange { .. } => "DELTA_OUT_OF_RANGE",
                Error::NoGap { .. } => "NO_GAP",
                Error::MeshBcMismatch(_) => "MESH_BC_MISMATCH",
                Error::EigensolveFail { .. } => "EIGENSOLVE_FAIL",
                Error::NotPositive { .. } => "NOT_POSITIVE",
                Error::OutOfDomain { .. }
                | Error::AtBreakpoint(_)
                | Error::NotPiecewiseConstant { .. }
                | Error::InvalidSignal(_)
                | Error::DimensionMismatch(_) => "SIGNAL_INVALID",
                Error::A1Violation { .. } => "A1_VIOLATION",
                Error::A3Unbounded(_) => "A3_UNBOUNDED",
                Error::A4Divergent { .. } => "A4_DIVERGENT",
                Error::NormMismatch(..) => "NORM_MISMATCH",
                Error::InvalidSchedule(_) => "SCHEDULE_INVALID",
            },
        }
    }

    pub fn code(&self) -> i32 {
        match self.tag() {
            "CONFIG_INVALID" => 3,
            "IO_ERROR" => 4,
            "GRAPH_INVALID" => 5,
            "PARAM_MISMATCH" => 6,
            "DELTA_OUT_OF_RANGE" => 7,
            "NO_GAP" => 8,
            "MESH_BC_MISMATCH" => 9,
            "EIGENSOLVE_FAIL" => 10,
            "NOT_POSITIVE" => 11,
            "SIGNAL_INVALID" => 12,
            "A1_VIOLATION" => 13,
            "A3_UNBOUNDED" => 14,
            "A4_DIVERGENT" => 15,
            "NORM_MISMATCH" => 16,
            "SCHEDULE_INVALID" => 17,
            _ => 18,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::ConfigInvalid { path, message } => write!(f, "at `{path}`: {message}"),
            Failure::Io { path, message } => write!(f, "{path}: {message}"),
            Failure::Library(e) => write!(f, "{e}"),
            Failure::Assertion(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}
