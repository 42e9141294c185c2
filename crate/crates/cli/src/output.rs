//! Artifact writers. Floats are printed in shortest round-trip form, so a
//! fixed config and seed reproduce every file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::exit::Failure;

pub const SPECTRUM_PLOT: &str = "plot_spectrum.csv";
pub const CONVERGENCE_PLOT: &str = "plot_convergence.csv";
pub const FIDELITY_PLOT: &str = "plot_fidelity.csv";

pub const SPECTRUM_PLOT_HEADER: [&str; 3] = ["series", "n", "lambda"];
pub const CONVERGENCE_PLOT_HEADER: [&str; 3] = ["series", "n", "value"];
pub const FIDELITY_PLOT_HEADER: [&str; 3] = ["series", "t", "fidelity"];

pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv<R: AsRef<[String]>>(&self, name: &str, header: &[&str], rows: &[R]) -> Result<(), Failure> {
        let path = self.path(name);
        let err = |e: csv::Error| Failure::io(&path, e);
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row.as_ref()).map_err(err)?;
        }
        w.flush().map_err(|e| Failure::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn text(&self, name: &str, body: &str) -> Result<(), Failure> {
        let path = self.path(name);
        fs::write(&path, body).map_err(|e| Failure::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    pub fn json(&self, name: &str, value: &Value) -> Result<(), Failure> {
        let mut body = serde_json::to_string_pretty(value).map_err(|e| Failure::io(&self.path(name), e))?;
        body.push('\n');
        self.text(name, &body)
    }
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Tidy `series, x, y` rows.
pub fn series<X: ToString>(name: &str, points: impl IntoIterator<Item = (X, f64)>) -> Vec<Vec<String>> {
    points.into_iter().map(|(x, y)| vec![name.to_string(), x.to_string(), num(y)]).collect()
}

/// JSON number, or null for non-finite values.
pub fn jnum(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}
