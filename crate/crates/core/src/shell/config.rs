//! TOML run configuration. Every section is optional; unknown keys are an
//! error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acp::AcpConfig;
use crate::benchmark::BenchmarkConfig;
use crate::error::{AplError, Result};
use crate::evalsuite::EvalConfig;
use crate::icd::IcdConfig;
use crate::quality::ScoringConfig;
use crate::rng::mix;
use crate::selection::SelectionConfig;
use crate::simharness::{NoiseModel, WorldConfig};

pub const SEED_ENV: &str = "APL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub seeds: usize,
    pub base_seed: u64,
    pub fixed_tau_pos: f64,
    pub tau_icd_sweep: Vec<f64>,
    pub sigma_icd_sweep: Vec<f64>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        BenchmarkSection {
            seeds: b.seeds,
            base_seed: b.base_seed,
            fixed_tau_pos: b.fixed_tau_pos,
            tau_icd_sweep: b.tau_icd_sweep,
            sigma_icd_sweep: b.sigma_icd_sweep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub noise: NoiseModel,
    pub scoring: ScoringConfig,
    pub selection: SelectionConfig,
    pub icd: IcdConfig,
    pub acp: AcpConfig,
    pub eval: EvalConfig,
    pub benchmark: BenchmarkSection,
}

impl RunConfig {
    /// Defaults when `path` is `None`; `APL_SEED` is applied either way.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| AplError::io(p, e))?;
                Self::parse(&text).map_err(|e| match e {
                    AplError::Config(msg) => AplError::format(p, msg),
                    other => other,
                })?
            }
            None => RunConfig::default(),
        };
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse::<u64>()
                .map_err(|_| AplError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            cfg.set_seed(seed);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AplError::Config(e.to_string().trim_end().to_string()))
    }

    /// Derives every module seed from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.world.seed = mix(seed, 1);
        self.noise.seed = mix(seed, 2);
        self.icd.seed = mix(seed, 3);
        self.acp.seed = mix(seed, 5);
        self.benchmark.base_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.noise.validate()?;
        self.scoring.validate()?;
        self.selection.validate()?;
        self.icd.validate()?;
        self.acp.validate()?;
        self.eval.validate()?;
        let b = &self.benchmark;
        if b.seeds == 0 {
            return Err(AplError::Config("benchmark.seeds must be positive".into()));
        }
        if !(b.fixed_tau_pos > self.selection.tau_neg && b.fixed_tau_pos <= 1.0) {
            return Err(AplError::Config(
                "benchmark.fixed_tau_pos must lie in (selection.tau_neg, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            world: self.world.clone(),
            noise: self.noise.clone(),
            scoring: self.scoring,
            selection: self.selection,
            icd: self.icd,
            eval: self.eval.clone(),
            seeds: self.benchmark.seeds,
            base_seed: self.benchmark.base_seed,
            fixed_tau_pos: self.benchmark.fixed_tau_pos,
            tau_icd_sweep: self.benchmark.tau_icd_sweep.clone(),
            sigma_icd_sweep: self.benchmark.sigma_icd_sweep.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            "[selection]\ntau_neg = 0.2\n\n[icd]\ntau_icd = 0.25\n\n[world]\nn_videos = 20\nduration = [30.0, 40.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.selection.tau_neg, 0.2);
        assert_eq!(cfg.icd.tau_icd, 0.25);
        assert_eq!(cfg.icd.sigma_icd, IcdConfig::default().sigma_icd);
        assert_eq!(cfg.world.n_videos, 20);
        assert_eq!(cfg.world.duration, (30.0, 40.0));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_fatal() {
        for text in ["[icd]\ntau = 0.3\n", "[nope]\nx = 1\n", "seed = 3\n"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        let cfg = RunConfig::parse("[icd]\nsigma_icd = 0.4\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_derivation_touches_every_module() {
        let mut cfg = RunConfig::default();
        cfg.set_seed(99);
        let seeds = [cfg.world.seed, cfg.noise.seed, cfg.icd.seed, cfg.acp.seed];
        let distinct: std::collections::BTreeSet<_> = seeds.iter().collect();
        assert_eq!(distinct.len(), 4);
        assert_eq!(cfg.benchmark.base_seed, 99);
    }
}
