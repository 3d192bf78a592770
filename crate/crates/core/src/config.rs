//! Declarative experiment description, read from a versioned JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audit::AuditOptions;
use crate::cover::{compute_delta, PartitionOfUnity, MAX_BALLS};
use crate::deriv::{PhaseModel, SymbolModel};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::families::{self, Theta};
use crate::ibp::Cutoff;
use crate::lab::{geometric_grid, BoundVariant, SweepOptions};
use crate::quadrature::{DecompositionOptions, Method, QuadOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Default seed of every Monte Carlo step.
pub const DEFAULT_SEED: u64 = 42;

/// Cover size up to which `partition = "auto"` uses the lattice.
pub const AUTO_LATTICE_LIMIT: usize = 256;

/// A box given either by its corners or as `[-half_width, half_width]^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Corners { lo: Vec<f64>, hi: Vec<f64> },
    Cube { dim: usize, half_width: f64 },
}

impl DomainSpec {
    pub fn to_box(&self) -> Result<BoxDomain> {
        match self {
            DomainSpec::Corners { lo, hi } => BoxDomain::new(lo.clone(), hi.clone()),
            DomainSpec::Cube { dim, half_width } => {
                if !(*half_width > 0.0) || *dim == 0 {
                    return Err(Error::Config(format!(
                        "cube domain needs dim ≥ 1 and half_width > 0, got {dim} and {half_width}"
                    )));
                }
                Ok(BoxDomain::symmetric(*dim, *half_width))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub family: String,
    #[serde(default = "empty_object")]
    pub params: Value,
    pub domain: DomainSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    pub family: String,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

/// Geometric grid `start, …, stop` with `count` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        geometric_grid(self.start, self.stop, self.count)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            start: 64.0,
            stop: 16384.0,
            count: 9,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionChoice {
    /// Lattice of δ-balls when it has at most [`AUTO_LATTICE_LIMIT`] pieces,
    /// else the single-piece partition.
    #[default]
    Auto,
    Single,
    Lattice,
}

/// Values that replace the built-in defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    pub c_d: Option<f64>,
    pub c_prime_d: Option<f64>,
    /// Integrations by parts in the decomposition; default `d + 1`.
    pub ibp_order: Option<usize>,
    /// Upper bound on δ; default: the diameter of the symbol support.
    pub delta_cap: Option<f64>,
    pub ball_cap: Option<usize>,
    pub audit_grid_points: Option<usize>,
    pub injectivity_samples: Option<usize>,
    pub taylor_pairs: Option<usize>,
    pub degeneracy_threshold: Option<f64>,
    /// Fixed theorem constant; when absent it is calibrated on the identity
    /// quadratic with the same domain and symbol.
    pub calibration_c: Option<f64>,
    pub calibration_lambda: Option<f64>,
    pub partition: PartitionChoice,
    pub variant: Option<BoundVariant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersiveSpec {
    #[serde(default = "default_theta")]
    pub theta: Theta,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub t: GridSpec,
    #[serde(default)]
    pub fit_min_t: Option<f64>,
}

fn default_theta() -> Theta {
    Theta::Quadratic
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleSpec {
    pub lambda: f64,
    pub t: Vec<f64>,
}

impl Default for RescaleSpec {
    fn default() -> Self {
        RescaleSpec {
            lambda: 64.0,
            t: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaSpec {
    /// Highest `N` in the coefficient bounds; default `d + 1`.
    pub order: Option<usize>,
    pub max_order: usize,
    pub beta_max: usize,
    pub samples: usize,
    /// Sampling region; default: the symbol support.
    pub region: Option<DomainSpec>,
    /// Pairs for the local injectivity check.
    pub injectivity_pairs: usize,
}

impl Default for LemmaSpec {
    fn default() -> Self {
        LemmaSpec {
            order: None,
            max_order: 3,
            beta_max: 2,
            samples: 2000,
            region: None,
            injectivity_pairs: 10_000,
        }
    }
}

/// One experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub phase: PhaseSpec,
    pub symbol: SymbolSpec,
    #[serde(default)]
    pub lambda: GridSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub quadrature: QuadOptions,
    #[serde(default)]
    pub sweep: SweepOptions,
    #[serde(default)]
    pub dispersive: Option<DispersiveSpec>,
    #[serde(default)]
    pub rescale: RescaleSpec,
    #[serde(default)]
    pub lemmas: LemmaSpec,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Oracle]
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl ExperimentConfig {
    /// Parses and validates; parse errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical one-line JSON echo of every value, defaults included.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let phase = self.phase()?;
        let symbol = self.symbol()?;
        let d = phase.dim();
        if symbol.dim() != d {
            return Err(Error::Config(format!("symbol has dimension {} but V has {d}", symbol.dim())));
        }
        let g = &self.lambda;
        if !(g.start >= 1.0) || !(g.stop >= g.start) || g.count == 0 {
            return Err(Error::Config(format!(
                "λ grid needs 1 ≤ start ≤ stop and count ≥ 1, got {} .. {} × {}",
                g.start, g.stop, g.count
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if let Some(ds) = &self.dispersive {
            if ds.x.len() != d || ds.y.len() != d {
                return Err(Error::Config(format!("dispersive x and y need {d} entries")));
            }
            if !(ds.lambda >= 1.0) || !(ds.t.start > 0.0) || !(ds.t.stop >= ds.t.start) {
                return Err(Error::Config("dispersive needs λ ≥ 1 and 0 < t.start ≤ t.stop".into()));
            }
        }
        if self.rescale.t.iter().any(|t| !(*t > 0.0)) || !(self.rescale.lambda >= 1.0) {
            return Err(Error::Config("rescale needs λ ≥ 1 and every t > 0".into()));
        }
        for (name, v) in [
            ("c_d", self.overrides.c_d),
            ("c_prime_d", self.overrides.c_prime_d),
            ("delta_cap", self.overrides.delta_cap),
            ("calibration_c", self.overrides.calibration_c),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("override {name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        self.phase.domain.to_box()
    }

    pub fn phase(&self) -> Result<PhaseModel> {
        families::builtin_phase(&self.phase.family, &self.phase.params, self.domain()?)
    }

    /// The symbol, checked to lie strictly inside `V`.
    pub fn symbol(&self) -> Result<SymbolModel> {
        let v = self.domain()?;
        families::builtin_symbol(&self.symbol.family, &self.symbol.params, v.dim(), Some(&v))
    }

    pub fn audit_options(&self) -> AuditOptions {
        let o = &self.overrides;
        let base = AuditOptions::default();
        AuditOptions {
            c_d: o.c_d,
            c_prime_d: o.c_prime_d,
            grid_points: o.audit_grid_points.or(base.grid_points),
            degeneracy_threshold: o.degeneracy_threshold.unwrap_or(base.degeneracy_threshold),
            injectivity_samples: o.injectivity_samples.unwrap_or(base.injectivity_samples),
            taylor_pairs: o.taylor_pairs.unwrap_or(base.taylor_pairs),
            seed: self.seed,
        }
    }

    pub fn decomposition_options(&self) -> DecompositionOptions {
        DecompositionOptions {
            ibp_order: self.overrides.ibp_order,
            cutoff: Cutoff::default(),
            quad: self.quadrature.clone(),
        }
    }

    /// The partition of unity used by the decomposition, with δ from the
    /// audited constants. Returns the partition and a note on how it was
    /// chosen.
    pub fn partition(&self, symbol: &SymbolModel, a0: f64, m2: f64, m3: f64) -> Result<(PartitionOfUnity, String)> {
        let support = symbol.support();
        let d = support.dim();
        let opts = self.audit_options();
        let cap = self.overrides.delta_cap.unwrap_or_else(|| support.diameter());
        let delta = compute_delta(a0, m2, m3, d, opts.c_d(d), opts.c_prime_d(d), cap)?;
        let ball_cap = self.overrides.ball_cap.unwrap_or(MAX_BALLS);
        match self.overrides.partition {
            PartitionChoice::Single => Ok((PartitionOfUnity::single(support), format!("single (delta={delta})"))),
            PartitionChoice::Lattice => {
                let p = PartitionOfUnity::build(support, delta, ball_cap)?;
                let note = format!("lattice J={} (delta={delta})", p.len());
                Ok((p, note))
            }
            PartitionChoice::Auto => match PartitionOfUnity::build(support, delta, ball_cap.min(AUTO_LATTICE_LIMIT)) {
                Ok(p) => {
                    let note = format!("lattice J={} (delta={delta})", p.len());
                    Ok((p, note))
                }
                Err(Error::Resource { required, .. }) => Ok((
                    PartitionOfUnity::single(support),
                    format!("single: lattice would need {required} balls (delta={delta})"),
                )),
                Err(e) => Err(e),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "phase": {"family": "quadratic", "domain": {"dim": 1, "half_width": 2.0}},
        "symbol": {"family": "smooth_bump", "params": {"radius": 1.0}}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.methods, vec![Method::Oracle]);
        assert_eq!(c.lambda.start, 64.0);
        assert_eq!(c.overrides.partition, PartitionChoice::Auto);
        assert!(c.echo().contains("\"seed\":42"));
        let again = ExperimentConfig::from_json(&c.echo()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let bad = MINIMAL.replace("\"dim\": 1,", "\"dim\": 1,,");
        let e = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let typo = MINIMAL.replace("\"symbol\"", "\"symbl\"");
        assert!(ExperimentConfig::from_json(&typo).is_err());
    }

    #[test]
    fn validation_failures() {
        let unknown = MINIMAL.replace("\"quadratic\"", "\"no_such_family\"");
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(Error::UnknownFamily(_))));
        let low = MINIMAL.replace("\"schema_version\": 1,", "\"schema_version\": 1, \"lambda\": {\"start\": 0.5, \"stop\": 4, \"count\": 3},");
        assert!(matches!(ExperimentConfig::from_json(&low), Err(Error::Config(_))));
        let outside = MINIMAL.replace("\"radius\": 1.0", "\"radius\": 2.0");
        assert!(ExperimentConfig::from_json(&outside).is_err());
        let version = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(ExperimentConfig::from_json(&version).unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn auto_partition_falls_back_to_single() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let s = c.symbol().unwrap();
        // M_3 = 0: δ is the cap and one ball suffices
        let (p, note) = c.partition(&s, 1.0, 1.0, 0.0).unwrap();
        assert!(note.starts_with("lattice"), "{note}");
        assert!(p.len() <= 3);
        let (p, note) = c.partition(&s, 1e-3, 1.0, 10.0).unwrap();
        assert_eq!(p.len(), 1);
        assert!(note.starts_with("single"), "{note}");
    }
}
