//! Run configuration.
//!
//! One JSON file drives a whole run: which catalog classes to fit, the
//! scale ladder, cover schedule, flow depth, seeds, and the acceptance
//! tolerances. Loading validates the slack discipline up front so a run
//! cannot quietly test below its own sampling noise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stratcone::cone::ConeSet;
use stratcone::cover::RadiusSchedule;
use stratcone::flow::FlowConfig;
use stratcone::metric::RegisterBudget;
use stratcone::strata::{ScaleLadder, StratifyConfig};

use crate::data::{load_cone, HarnessError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderSpec {
    pub top: f64,
    pub ratio: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Catalog class names, e.g. "t", "y_times_1", "plane2".
    pub catalog: Vec<String>,
    pub ambient_dim: usize,
    /// Sampling radius of the input cloud.
    pub sampling_radius: f64,
    pub ladder: LadderSpec,
    /// Per-type acceptance thresholds; measured defaults when absent.
    pub tau: Option<Vec<f64>>,
    pub persistence: usize,
    pub cover_c: f64,
    pub cover_gamma: f64,
    pub k_max: usize,
    pub seed: u64,
    pub tol_disp: f64,
    pub tol_cov: f64,
    /// Measured-constants file; measured and written here when missing.
    pub constants_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: vec!["t".into(), "y_times_1".into(), "plane2".into()],
            ambient_dim: 3,
            sampling_radius: 0.04,
            ladder: LadderSpec { top: 0.6, ratio: 0.6, count: 4 },
            tau: None,
            persistence: 3,
            // Top radii must sit far above the sampling radius or the
            // per-stratum floor empties the fine cover steps.
            cover_c: 1.0,
            cover_gamma: 0.85,
            k_max: 4,
            seed: 17,
            tol_disp: 0.3,
            tol_cov: 0.3,
            constants_path: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Slack discipline: every tolerance must clear the sampling slack of
    /// the scales it will be tested at.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let ladder = self.scale_ladder()?;
        let slack = ladder.slack(self.sampling_radius);
        if let Some(tau) = &self.tau {
            for (m, t) in tau.iter().enumerate() {
                if *t <= slack {
                    return Err(HarnessError::Parse(format!(
                        "tau[{m}] = {t} does not clear the sampling slack {slack:.4}"
                    )));
                }
            }
        }
        let disp_slack = 3.0 * self.sampling_radius;
        if self.tol_disp <= disp_slack || self.tol_cov <= disp_slack {
            return Err(HarnessError::Parse(format!(
                "tolerances ({}, {}) must exceed three sampling radii ({disp_slack})",
                self.tol_disp, self.tol_cov
            )));
        }
        if self.k_max == 0 || self.k_max > 8 {
            return Err(HarnessError::Parse(format!(
                "k_max = {} outside the supported 1..=8",
                self.k_max
            )));
        }
        Ok(())
    }

    pub fn catalog_cones(&self) -> Result<Vec<ConeSet>, HarnessError> {
        self.catalog.iter().map(|name| load_cone(name, self.ambient_dim)).collect()
    }

    pub fn scale_ladder(&self) -> Result<ScaleLadder, HarnessError> {
        ScaleLadder::geometric(self.ladder.top, self.ladder.ratio, self.ladder.count)
            .map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn stratify_config(&self, tau: Vec<f64>) -> StratifyConfig {
        let mut sc = StratifyConfig::with_tau(tau);
        sc.persistence = self.persistence;
        sc
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            k_max: self.k_max,
            schedule: RadiusSchedule { c: self.cover_c, gamma: self.cover_gamma },
            search: RegisterBudget {
                restarts: 3,
                simplex_evals: 50,
                search_res_frac: 1.0 / 8.0,
            },
            hard_monitors: false,
            min_ball_radius_h: 4.0,
            domain_tol_h: 3.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.catalog, cfg.catalog);
        assert_eq!(back.k_max, cfg.k_max);
        assert_eq!(back.seed, cfg.seed);
    }

    #[test]
    fn sub_slack_tolerances_are_refused() {
        let mut cfg = RunConfig::default();
        cfg.tol_disp = 0.05;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.tau = Some(vec![1e-6; 3]);
        assert!(cfg.validate().is_err());
    }
}
