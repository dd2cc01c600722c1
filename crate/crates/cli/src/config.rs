//! Run configuration files.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use pairgen_core::bogoliubov_k::ScanAxis;
use pairgen_core::couplings::{Bias, ModelParams};
use pairgen_core::lattice::{Boundary, FillingMode, LatticeSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    pub params: ParamsSection,
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    #[serde(rename = "L")]
    pub size: usize,
    #[serde(rename = "a_Z")]
    pub layer_separation: f64,
    #[serde(default = "periodic")]
    pub boundary: Boundary,
}

fn periodic() -> Boundary {
    Boundary::Periodic
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    /// Dipole polar angle in radians.
    pub theta0: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_h: Option<f64>,
    #[serde(rename = "J", default = "unit")]
    pub exchange: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    BogoliubovK,
    BdgReal,
    Dtwa,
    Ed,
    Compare,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::BogoliubovK => "bogoliubov-k",
            Solver::BdgReal => "bdg-real",
            Solver::Dtwa => "dtwa",
            Solver::Ed => "ed",
            Solver::Compare => "compare",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub solver: Solver,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(default = "default_traj")]
    pub n_traj: usize,
    #[serde(default = "one")]
    pub n_realizations: usize,
    #[serde(default = "unit")]
    pub f: f64,
    #[serde(default)]
    pub filling_mode: FillingMode,
    #[serde(default)]
    pub seed: u64,
    /// Relative tolerance of the spin integrator.
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "yes")]
    pub correlations: bool,
}

fn default_traj() -> usize {
    10_000
}
fn one() -> usize {
    1
}
fn default_rtol() -> f64 {
    1e-9
}
fn default_batch() -> usize {
    128
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub param: ScanAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn spec(&self) -> Result<LatticeSpec, ConfigError> {
        LatticeSpec::new(self.lattice.size, self.lattice.layer_separation, self.lattice.boundary)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model(&self) -> Result<ModelParams, ConfigError> {
        let p = &self.params;
        let bias = match (p.bias_x, p.bias_h) {
            (Some(_), Some(_)) => return invalid("give at most one of bias_x and bias_h"),
            (Some(x), None) => Bias::BandwidthFraction(x),
            (None, Some(h)) => Bias::Field(h),
            (None, None) => Bias::None,
        };
        ModelParams::new(p.theta0, p.eta)
            .and_then(|m| m.with_bias(bias))
            .and_then(|m| m.with_exchange(p.exchange))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Uniform sample times `0, dt, ..., t_max`.
    pub fn times(&self) -> Option<Vec<f64>> {
        let (t_max, n) = (self.run.t_max?, self.run.n_t?);
        Some((0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect())
    }

    /// Full validation, run before anything touches the output directory.
    pub fn validate(&self, scanning: bool) -> Result<(), ConfigError> {
        let spec = self.spec()?;
        self.model()?;
        let r = &self.run;
        match (r.t_max, r.n_t) {
            (Some(t), Some(n)) => {
                if t.is_nan() || t <= 0.0 || !t.is_finite() {
                    return invalid(format!("t_max must be positive, got {t}"));
                }
                if n < 2 {
                    return invalid("n_t must be at least 2");
                }
            }
            (None, None) => {}
            _ => return invalid("t_max and n_t must be given together"),
        }
        if !(r.f > 0.0 && r.f <= 1.0) {
            return invalid(format!("filling f must lie in (0, 1], got {}", r.f));
        }
        if r.n_realizations == 0 || r.n_traj == 0 || r.batch_size == 0 {
            return invalid("n_traj, n_realizations and batch_size must be positive");
        }
        if !(r.rtol > 0.0 && r.rtol < 1.0) {
            return invalid("rtol must lie in (0, 1)");
        }
        let needs_times = !matches!(r.solver, Solver::BogoliubovK);
        if needs_times && r.t_max.is_none() {
            return invalid(format!("solver {} requires t_max and n_t", r.solver.as_str()));
        }
        if matches!(r.solver, Solver::BogoliubovK | Solver::Compare) {
            if spec.boundary != Boundary::Periodic {
                return invalid(format!("solver {} requires periodic boundaries", r.solver.as_str()));
            }
            if r.f != 1.0 {
                return invalid(format!("solver {} requires f = 1", r.solver.as_str()));
            }
        }
        match (scanning, &self.scan) {
            (true, None) => return invalid("scan requires a `scan` section"),
            (true, Some(s)) => {
                if r.solver != Solver::BogoliubovK {
                    return invalid("scan supports the bogoliubov-k solver only");
                }
                if s.values.is_empty() {
                    return invalid("scan grid is empty");
                }
                let up = s.values.windows(2).all(|w| w[1] > w[0]);
                let down = s.values.windows(2).all(|w| w[1] < w[0]);
                if !(up || down) || s.values.iter().any(|v| !v.is_finite()) {
                    return invalid("scan values must be finite and strictly monotone");
                }
                if s.param == ScanAxis::BiasX && self.params.bias_h.is_some()
                    || s.param == ScanAxis::BiasH && self.params.bias_x.is_some()
                {
                    return invalid("scan axis conflicts with the fixed bias");
                }
            }
            (false, Some(_)) => return invalid("`scan` section given to run; use the scan command"),
            (false, None) => {}
        }
        Ok(())
    }
}
