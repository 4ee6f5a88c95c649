//! Flat key=value run configuration covering every tunable hyperparameter,
//! with typed parsing and range validation delegated to the owning modules.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use season_field_core::net::NetworkConfig;
use season_field_core::radiance::ShadowParams;
use season_field_core::trainer::{AblationCase, TrainSettings};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub net: NetworkConfig,
    pub train: TrainSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetworkConfig::default(),
            train: TrainSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected so typos fail loudly.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut cfg = RunConfig::default();
        for (key, value) in map {
            cfg.apply(&key, &value)
                .with_context(|| format!("config key {key}"))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        RunConfig::parse(&text)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| anyhow!("bad value {v:?}: {e}"))
        }
        match key {
            "steps" => self.train.steps = num(value)?,
            "image_rays_per_step" => self.train.image_rays_per_step = num(value)?,
            "solar_rays_per_step" => self.train.solar_rays_per_step = num(value)?,
            "samples_per_ray" => self.train.samples_per_ray = num(value)?,
            "max_lr" => self.train.max_lr = num(value)?,
            "warmup_fraction" => self.train.warmup_fraction = num(value)?,
            "phase1_fraction" => self.train.phase1_fraction = num(value)?,
            "lambda_sc" => self.train.lambda_sc = num(value)?,
            "lambda_ds" => self.train.lambda_ds = num(value)?,
            "a_min" => self.train.a_min = num(value)?,
            "s_max" => self.train.s_max = num(value)?,
            "kappa" => {
                self.train.shadow = ShadowParams::new(num(value)?, self.train.shadow.mu)
                    .map_err(|e| anyhow!("{e}"))?
            }
            "mu" => {
                self.train.shadow = ShadowParams::new(self.train.shadow.kappa, num(value)?)
                    .map_err(|e| anyhow!("{e}"))?
            }
            "n_season_classes" => self.net.n_season_classes = num(value)?,
            "trunk_width" => self.net.trunk_width = num(value)?,
            "trunk_depth" => self.net.trunk_depth = num(value)?,
            "pe_levels_pos" => self.net.pe_levels_pos = num(value)?,
            "pe_levels_sun" => self.net.pe_levels_sun = num(value)?,
            "omega0" => self.net.omega0 = num(value)?,
            "batch_norm" => self.net.batch_norm = num::<bool>(value)?,
            "seed" => self.train.seed = num(value)?,
            "metrics_every" => self.train.metrics_every = num(value)?,
            "checkpoint_every" => self.train.checkpoint_every = num(value)?,
            "case" => {
                self.train.case = AblationCase::parse(value)
                    .ok_or_else(|| anyhow!("unknown case {value:?} (expected A..E)"))?
            }
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    /// Applies the ablation case and validates the combined configuration.
    pub fn finalize(mut self, case: Option<AblationCase>) -> Result<RunConfig> {
        if let Some(case) = case {
            self.train.case = case;
        }
        if self.train.case == AblationCase::E {
            if self.net.n_season_classes > 1 {
                // only a conflict when the user explicitly asked for more
                bail!("case E uses a single season class but n_season_classes = {} was requested",
                      self.net.n_season_classes);
            }
            self.net.n_season_classes = 1;
        }
        self.train
            .validate(&self.net)
            .map_err(|e| anyhow!("{e}"))?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let cfg = RunConfig::parse("steps = 100\nmax_lr = 3e-4\ncase = B\n# comment\n").unwrap();
        assert_eq!(cfg.train.steps, 100);
        assert!((cfg.train.max_lr - 3e-4).abs() < 1e-12);
        assert_eq!(cfg.train.case, AblationCase::B);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::parse("nope = 3\n").is_err());
    }

    #[test]
    fn case_e_with_explicit_classes_conflicts() {
        let mut cfg = RunConfig::default();
        cfg.net.n_season_classes = 4;
        cfg.train.case = AblationCase::E;
        assert!(cfg.finalize(None).is_err());
    }

    #[test]
    fn case_e_defaults_collapse_to_one_class() {
        let mut cfg = RunConfig::default();
        cfg.net.n_season_classes = 1;
        let done = cfg.finalize(Some(AblationCase::E)).unwrap();
        assert_eq!(done.net.n_season_classes, 1);
    }
}
