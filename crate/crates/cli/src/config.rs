//! Study configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use snaklat::model::Term;
use snaklat::{Error, Family, Nonlinearity, Result, Symmetry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Terms of a custom polynomial; only for `family: polynomial`.
    #[serde(default)]
    pub coefficients: Option<Vec<Term>>,
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    #[serde(default)]
    pub u_max: Option<f64>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<Nonlinearity> {
        match (self.family, &self.coefficients) {
            (Family::Polynomial, Some(terms)) => {
                Nonlinearity::polynomial(terms.clone(), self.window.unwrap_or((0.0, 1.0)), self.u_max.unwrap_or(4.0))
            }
            (Family::Polynomial, None) => Err(Error::InvalidArgument("polynomial model needs coefficients".into())),
            (family, None) if self.window.is_none() && self.u_max.is_none() => Nonlinearity::builtin(family),
            _ => Err(Error::InvalidArgument("coefficients, window and u_max apply to polynomial models only".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N_d")]
    pub n_d: usize,
    pub symmetry: Symmetry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), formats: default_formats() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    /// Subcommand parameters; validated by the subcommand.
    #[serde(default = "empty_object")]
    pub run: Value,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl StudyConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.n_d == 0 {
            return Err(Error::InvalidGrid("N_d must be positive".into()));
        }
        if !self.run.is_object() {
            return Err(Error::InvalidArgument("run must be an object".into()));
        }
        if self.output.formats.is_empty() {
            return Err(Error::InvalidArgument("output.formats is empty".into()));
        }
        self.model.build()?;
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    /// Parses `run` into `T` after filling `n_d` and `symmetry` from the grid section when `T`
    /// has such fields and the run object leaves them out.
    pub fn run_as<T: serde::de::DeserializeOwned>(&self, grid_keys: &[&str]) -> Result<T> {
        let mut run = self.run.clone();
        let obj = run.as_object_mut().expect("validated object");
        for key in grid_keys {
            if !obj.contains_key(*key) {
                let v = match *key {
                    "n_d" => Value::from(self.grid.n_d),
                    "symmetry" => serde_json::to_value(self.grid.symmetry)?,
                    _ => continue,
                };
                obj.insert((*key).to_string(), v);
            }
        }
        Ok(serde_json::from_value(run)?)
    }
}
