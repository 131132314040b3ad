use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cloudloc::dataset::DatasetConfig;
use cloudloc::matcher::GridConfig;
use cloudloc::pose::LocalizeConfig;

/// Every pipeline tunable. Missing fields take their defaults; unknown fields are errors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Pairing thresholds, occlusion filter, negative sampling and both detectors.
    pub dataset: DatasetConfig,
    pub grid: GridConfig,
    pub train_seed: u64,
    pub localize: LocalizeConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: Self = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.grid.validate()?;
        self.localize.mlesac.validate()?;
        let r = &self.localize.refine;
        if r.max_iterations == 0 || !(r.step_tolerance > 0.0) || !(r.inlier_threshold_px > 0.0) {
            bail!("refine: max_iterations, step_tolerance and inlier_threshold_px must be positive");
        }
        Ok(())
    }
}
