use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agents::{Hyperparams, Reparam, Variant};
use crate::error::{Error, Result};

/// A full sweep over the `variants × ng_values × seeds` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub ng_values: Vec<usize>,
    pub seeds: usize,
    pub episodes: usize,
    /// Moving-average width in episodes.
    pub window: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub hyperparams: Hyperparams,
    pub out: Option<PathBuf>,
    /// Fill the `ms` column with per-episode wall-clock time. Off by default
    /// so that `metrics.csv` is a pure function of the configuration.
    pub wall_clock: bool,
    pub dump_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            ng_values: vec![6, 8, 12, 18],
            seeds: 20,
            episodes: 5000,
            window: 100,
            base_seed: 0,
            workers: 1,
            hyperparams: Hyperparams::default(),
            out: None,
            wall_clock: false,
            dump_traces: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.variants.is_empty() {
            return bad("at least one variant is required");
        }
        if self.ng_values.is_empty() || self.ng_values.iter().any(|&n| n < 3) {
            return bad("ng_values must be non-empty and all >= 3");
        }
        if self.seeds == 0 {
            return bad("seeds must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        self.hyperparams.validate()
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let hp = &mut self.hyperparams;
        match key {
            "variants" => self.variants = parse_list(key, value)?,
            "ng_values" => self.ng_values = parse_list(key, value)?,
            "seeds" => self.seeds = parse(key, value)?,
            "episodes" | "episodes_per_run" => self.episodes = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "base_seed" => self.base_seed = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "wall_clock" => self.wall_clock = parse_bool(key, value)?,
            "dump_traces" => self.dump_traces = parse_bool(key, value)?,
            "alpha" => hp.alpha = parse(key, value)?,
            "gamma" => hp.gamma = parse(key, value)?,
            "tau_gumbel" => hp.tau_gumbel = parse(key, value)?,
            "learning_rate" => hp.learning_rate = parse(key, value)?,
            "batch_size" => hp.batch_size = parse(key, value)?,
            "buffer_capacity" => hp.buffer_capacity = parse(key, value)?,
            "updates_per_env_step" => hp.updates_per_env_step = parse(key, value)?,
            "controller_epsilon_start" => hp.controller_epsilon.start = parse(key, value)?,
            "controller_epsilon_end" => hp.controller_epsilon.end = parse(key, value)?,
            "controller_epsilon_decay_steps" => hp.controller_epsilon.decay_steps = parse(key, value)?,
            "meta_epsilon_start" => hp.meta_epsilon.start = parse(key, value)?,
            "meta_epsilon_end" => hp.meta_epsilon.end = parse(key, value)?,
            "meta_epsilon_decay_steps" => hp.meta_epsilon.decay_steps = parse(key, value)?,
            "hidden" => hp.hidden = parse_list(key, value)?,
            "dropout" => hp.dropout = parse(key, value)?,
            "reparam" => hp.reparam = parse::<Reparam>(key, value)?,
            "observe_visited" => hp.observe_visited = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("invalid configuration: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Every key with its resolved value; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let hp = &self.hyperparams;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("variants", join(&self.variants));
        kv("ng_values", join(&self.ng_values));
        kv("seeds", self.seeds.to_string());
        kv("episodes", self.episodes.to_string());
        kv("window", self.window.to_string());
        kv("base_seed", self.base_seed.to_string());
        kv("workers", self.workers.to_string());
        if let Some(out) = &self.out {
            kv("out", out.display().to_string());
        }
        kv("wall_clock", self.wall_clock.to_string());
        kv("dump_traces", self.dump_traces.to_string());
        kv("alpha", hp.alpha.to_string());
        kv("gamma", hp.gamma.to_string());
        kv("tau_gumbel", hp.tau_gumbel.to_string());
        kv("learning_rate", hp.learning_rate.to_string());
        kv("batch_size", hp.batch_size.to_string());
        kv("buffer_capacity", hp.buffer_capacity.to_string());
        kv("updates_per_env_step", hp.updates_per_env_step.to_string());
        kv("controller_epsilon_start", hp.controller_epsilon.start.to_string());
        kv("controller_epsilon_end", hp.controller_epsilon.end.to_string());
        kv("controller_epsilon_decay_steps", hp.controller_epsilon.decay_steps.to_string());
        kv("meta_epsilon_start", hp.meta_epsilon.start.to_string());
        kv("meta_epsilon_end", hp.meta_epsilon.end.to_string());
        kv("meta_epsilon_decay_steps", hp.meta_epsilon.decay_steps.to_string());
        kv("hidden", join(&hp.hidden));
        kv("dropout", hp.dropout.to_string());
        kv("reparam", hp.reparam.to_string());
        kv("observe_visited", hp.observe_visited.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.ng_values, vec![6, 8, 12, 18]);
        assert_eq!((c.seeds, c.episodes, c.window), (20, 5000, 100));
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = ExperimentConfig::parse_str(
            "# sweep\nvariants = hdqn, mi_sac\nng_values = 6,8\nseeds = 3 # few\nalpha = 1.0\nhidden = 32,32\nreparam = exact\nobserve_visited = true\n",
        )
        .unwrap();
        assert_eq!(c.variants, vec![Variant::Hdqn, Variant::MiSac]);
        assert_eq!(c.ng_values, vec![6, 8]);
        assert_eq!(c.seeds, 3);
        assert_eq!(c.hyperparams.alpha, 1.0);
        assert_eq!(c.hyperparams.hidden, vec![32, 32]);
        assert_eq!(c.hyperparams.reparam, Reparam::Exact);
        assert!(c.hyperparams.observe_visited);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse_str("temperature = 0.2").is_err());
        assert!(ExperimentConfig::parse_str("seeds = many").is_err());
        assert!(ExperimentConfig::parse_str("window = 0").is_err());
        assert!(ExperimentConfig::parse_str("ng_values = 2,6").is_err());
        assert!(ExperimentConfig::parse_str("just words").is_err());
        let err = ExperimentConfig::parse_str("\nfoo = 1").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn config_string_round_trips() {
        let mut c = ExperimentConfig::default();
        c.set("alpha", "0.05").unwrap();
        c.set("out", "/tmp/x").unwrap();
        c.set("variants", "adversarial_mi_sac").unwrap();
        assert_eq!(ExperimentConfig::parse_str(&c.to_config_string()).unwrap(), c);
    }
}
