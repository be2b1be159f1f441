//! Run configuration: a JSON document validated field by field before any
//! compute starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::forward::ForwardSettings;
use crate::greens::{KernelKind, SourcePoint, SourceSet};
use crate::grids::{Geometry, GridSpec};
use crate::inverse::RegSettings;
use crate::models::ModelSpec;

/// Source specification: the stock eight-source ring or explicit points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum SourceConfig {
    Default8,
    Custom { points: Vec<SourcePoint> },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Default8
    }
}

impl SourceConfig {
    pub fn build(&self) -> SourceSet {
        match self {
            SourceConfig::Default8 => SourceSet::default_eight(),
            SourceConfig::Custom { points } => SourceSet {
                points: points.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreensConfig {
    /// Relative damping of the frequency, regularizing waveguide
    /// resonances.
    pub eps: f64,
    /// Physical kernel backing the solver tables.
    pub kernel: KernelKind,
}

impl Default for GreensConfig {
    fn default() -> Self {
        GreensConfig {
            eps: 1e-6,
            kernel: KernelKind::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    pub out_dir: Option<String>,
}

/// Grid list for the scaling benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// `(nr, nphi, nz)` triples; `nrp = nr + 1`.
    pub grids: Vec<(usize, usize, usize)>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            grids: vec![(16, 32, 32), (16, 32, 64), (16, 64, 32)],
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub grid: GridSpec,
    pub omegas: Vec<f64>,
    pub sources: SourceConfig,
    pub model: ModelSpec,
    pub forward: ForwardSettings,
    pub regularization: RegSettings,
    pub greens: GreensConfig,
    pub io: IoConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: Geometry::default(),
            grid: GridSpec::default(),
            omegas: vec![3.0],
            sources: SourceConfig::default(),
            model: ModelSpec::default(),
            forward: ForwardSettings::default(),
            regularization: RegSettings::default(),
            greens: GreensConfig::default(),
            io: IoConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a JSON config file and validate every invariant.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CoreError::validation("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.grid.validate()?;
        if self.omegas.is_empty() {
            return Err(CoreError::validation("omegas", "at least one frequency"));
        }
        for (i, w) in self.omegas.iter().enumerate() {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(CoreError::validation(
                    format!("omegas[{i}]"),
                    "must be positive and finite",
                ));
            }
        }
        self.sources.build().validate()?;
        self.model.validate()?;
        self.forward.validate()?;
        self.regularization.validate()?;
        if !(self.greens.eps >= 0.0) {
            return Err(CoreError::validation("greens.eps", "must be >= 0"));
        }
        for (i, &(nr, nphi, nz)) in self.bench.grids.iter().enumerate() {
            let spec = GridSpec {
                nr,
                nrp: nr + 1,
                nphi,
                nz,
            };
            spec.validate().map_err(|e| {
                CoreError::validation(format!("bench.grids[{i}]"), e.to_string())
            })?;
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
