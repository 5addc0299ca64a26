//! Flat, human-editable run configuration: `dotted.key = value` lines.
//!
//! Unknown keys are errors, not warnings, so a typo like `modulation.keta`
//! cannot silently train with the wrong hyperparameter. `--set key=value`
//! overrides reuse the same keys and apply after the file. [`echo_config`]
//! writes the fully resolved configuration in a canonical order; parsing an
//! echo reproduces the config exactly.
//!
//! ```text
//! env.preset = fork3x3        # expands kind, params, horizon, default zeta
//! seed_list = 0,1,2,3,4
//! iterations = 300
//! ablation = full
//! modulation.zeta = 0.1
//! ```

use thiserror::Error;

use crate::envs::{EnvKind, EnvSpec};
use crate::model::{Ablation, LrSchedule, RunConfig, UpdateRule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`, got `{1}`")]
    BadLine(usize, String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("{0}")]
    Conflicting(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Default)]
struct Builder {
    env_kind_name: Option<String>,
    env_n: Option<usize>,
    env_width: Option<usize>,
    env_height: Option<usize>,
    env_depth: Option<usize>,
    env_alias_width: Option<usize>,
    env_horizon: Option<usize>,
    seed_list: Option<Vec<u64>>,
    iterations: Option<usize>,
    tasks_per_batch: Option<usize>,
    group_size: Option<usize>,
    learning_rate: Option<f64>,
    gamma: Option<f64>,
    ablation: Option<Ablation>,
    update_rule_name: Option<String>,
    clip_low: Option<f64>,
    clip_high: Option<f64>,
    lr_schedule: Option<LrSchedule>,
    k: Option<f64>,
    k_prime: Option<f64>,
    zeta: Option<f64>,
    epsilon: Option<f64>,
    checkpoint_every: Option<usize>,
}

fn parse_as<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

impl Builder {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "env.preset" => {
                let spec = EnvSpec::preset(value).ok_or_else(|| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    expected: "one of chain8, keydoor5x5, fork3x3",
                })?;
                match spec.kind {
                    EnvKind::ChainMaze { n } => {
                        self.env_kind_name = Some("chain_maze".into());
                        self.env_n = Some(n);
                    }
                    EnvKind::KeyDoor { width, height } => {
                        self.env_kind_name = Some("key_door".into());
                        self.env_width = Some(width);
                        self.env_height = Some(height);
                    }
                    EnvKind::AmbiguityFork { depth, alias_width } => {
                        self.env_kind_name = Some("ambiguity_fork".into());
                        self.env_depth = Some(depth);
                        self.env_alias_width = Some(alias_width);
                    }
                }
                self.env_horizon = Some(spec.horizon);
            }
            "env.kind" => match value {
                "chain_maze" | "key_door" | "ambiguity_fork" => {
                    self.env_kind_name = Some(value.into())
                }
                _ => {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        expected: "chain_maze, key_door, or ambiguity_fork",
                    })
                }
            },
            "env.n" => self.env_n = Some(parse_as(key, value, "integer")?),
            "env.width" => self.env_width = Some(parse_as(key, value, "integer")?),
            "env.height" => self.env_height = Some(parse_as(key, value, "integer")?),
            "env.depth" => self.env_depth = Some(parse_as(key, value, "integer")?),
            "env.alias_width" => self.env_alias_width = Some(parse_as(key, value, "integer")?),
            "env.horizon" => self.env_horizon = Some(parse_as(key, value, "integer")?),
            "seed_list" => {
                let seeds = value
                    .split(',')
                    .map(|s| parse_as::<u64>(key, s, "comma-separated integers"))
                    .collect::<Result<Vec<u64>, _>>()?;
                self.seed_list = Some(seeds);
            }
            "iterations" => self.iterations = Some(parse_as(key, value, "integer")?),
            "tasks_per_batch" => self.tasks_per_batch = Some(parse_as(key, value, "integer")?),
            "group_size" => self.group_size = Some(parse_as(key, value, "integer")?),
            "learning_rate" => self.learning_rate = Some(parse_as(key, value, "number")?),
            "gamma" => self.gamma = Some(parse_as(key, value, "number")?),
            "ablation" => {
                self.ablation = Some(value.parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    expected: "baseline, scaling_only, bonus_only, or full",
                })?)
            }
            "update_rule" => match value {
                "vanilla" | "clipped" => self.update_rule_name = Some(value.into()),
                _ => {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        expected: "vanilla or clipped",
                    })
                }
            },
            "lr_schedule" => {
                self.lr_schedule = Some(value.parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    value: value.into(),
                    expected: "constant or linear_decay",
                })?)
            }
            "update.clip_low" => self.clip_low = Some(parse_as(key, value, "number")?),
            "update.clip_high" => self.clip_high = Some(parse_as(key, value, "number")?),
            "modulation.k" => self.k = Some(parse_as(key, value, "number")?),
            "modulation.k_prime" => self.k_prime = Some(parse_as(key, value, "number")?),
            "modulation.zeta" => self.zeta = Some(parse_as(key, value, "number")?),
            "modulation.epsilon" => self.epsilon = Some(parse_as(key, value, "number")?),
            "checkpoint_every" => self.checkpoint_every = Some(parse_as(key, value, "integer")?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn resolve(self) -> Result<RunConfig, ConfigError> {
        let kind_name = self
            .env_kind_name
            .ok_or(ConfigError::MissingKey("env.kind"))?;
        let kind = match kind_name.as_str() {
            "chain_maze" => EnvKind::ChainMaze {
                n: self.env_n.ok_or(ConfigError::MissingKey("env.n"))?,
            },
            "key_door" => EnvKind::KeyDoor {
                width: self.env_width.ok_or(ConfigError::MissingKey("env.width"))?,
                height: self
                    .env_height
                    .ok_or(ConfigError::MissingKey("env.height"))?,
            },
            _ => EnvKind::AmbiguityFork {
                depth: self.env_depth.ok_or(ConfigError::MissingKey("env.depth"))?,
                alias_width: self
                    .env_alias_width
                    .ok_or(ConfigError::MissingKey("env.alias_width"))?,
            },
        };
        let env_spec = EnvSpec {
            kind,
            horizon: self
                .env_horizon
                .ok_or(ConfigError::MissingKey("env.horizon"))?,
        };

        let update_rule = match self.update_rule_name.as_deref() {
            None | Some("vanilla") => {
                if self.clip_low.is_some() || self.clip_high.is_some() {
                    return Err(ConfigError::Conflicting(
                        "update.clip_low/clip_high require update_rule = clipped".into(),
                    ));
                }
                UpdateRule::Vanilla
            }
            Some(_) => UpdateRule::Clipped {
                clip_low: self.clip_low.unwrap_or(0.2),
                clip_high: self.clip_high.unwrap_or(0.28),
            },
        };

        let defaults = RunConfig::for_env(env_spec);
        let cfg = RunConfig {
            k: self.k.unwrap_or(defaults.k),
            k_prime: self.k_prime.unwrap_or(defaults.k_prime),
            zeta: self.zeta.unwrap_or(defaults.zeta),
            epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            group_size: self.group_size.unwrap_or(defaults.group_size),
            tasks_per_batch: self.tasks_per_batch.unwrap_or(defaults.tasks_per_batch),
            learning_rate: self.learning_rate.unwrap_or(defaults.learning_rate),
            horizon: env_spec.horizon,
            gamma: self.gamma.unwrap_or(1.0),
            ablation: self.ablation.unwrap_or(defaults.ablation),
            update_rule,
            lr_schedule: self.lr_schedule.unwrap_or(defaults.lr_schedule),
            env_spec,
            seed_list: self.seed_list.unwrap_or(defaults.seed_list),
            iterations: self.iterations.unwrap_or(defaults.iterations),
            checkpoint_every: self.checkpoint_every.unwrap_or(defaults.checkpoint_every),
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

fn key_values(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::BadLine(no + 1, raw.to_string()))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a config file body alone.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_overrides(text, &[])
}

/// Parses a config file body, then applies `key=value` overrides in order.
pub fn parse_config_with_overrides(
    text: &str,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let mut builder = Builder::default();
    for (key, value) in key_values(text)? {
        builder.apply(&key, &value)?;
    }
    for (key, value) in overrides {
        builder.apply(key, value)?;
    }
    builder.resolve()
}

/// Splits a `key=value` override argument.
pub fn parse_override(arg: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::BadLine(0, arg.to_string()))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Writes the fully resolved config in canonical key order. When
/// `seeds_override` is given it replaces the seed list (a run directory
/// echoes only the seed it ran). Parsing the result reproduces the config.
pub fn echo_config(cfg: &RunConfig, seeds_override: Option<&[u64]>) -> String {
    let mut out = String::new();
    match cfg.env_spec.kind {
        EnvKind::ChainMaze { n } => {
            out.push_str("env.kind = chain_maze\n");
            out.push_str(&format!("env.n = {n}\n"));
        }
        EnvKind::KeyDoor { width, height } => {
            out.push_str("env.kind = key_door\n");
            out.push_str(&format!("env.width = {width}\n"));
            out.push_str(&format!("env.height = {height}\n"));
        }
        EnvKind::AmbiguityFork { depth, alias_width } => {
            out.push_str("env.kind = ambiguity_fork\n");
            out.push_str(&format!("env.depth = {depth}\n"));
            out.push_str(&format!("env.alias_width = {alias_width}\n"));
        }
    }
    out.push_str(&format!("env.horizon = {}\n", cfg.env_spec.horizon));
    let seeds = seeds_override.unwrap_or(&cfg.seed_list);
    let seed_strs: Vec<String> = seeds.iter().map(u64::to_string).collect();
    out.push_str(&format!("seed_list = {}\n", seed_strs.join(",")));
    out.push_str(&format!("iterations = {}\n", cfg.iterations));
    out.push_str(&format!("tasks_per_batch = {}\n", cfg.tasks_per_batch));
    out.push_str(&format!("group_size = {}\n", cfg.group_size));
    out.push_str(&format!("learning_rate = {}\n", cfg.learning_rate));
    out.push_str(&format!("lr_schedule = {}\n", cfg.lr_schedule.name()));
    out.push_str(&format!("gamma = {}\n", cfg.gamma));
    out.push_str(&format!("ablation = {}\n", cfg.ablation.name()));
    match cfg.update_rule {
        UpdateRule::Vanilla => out.push_str("update_rule = vanilla\n"),
        UpdateRule::Clipped {
            clip_low,
            clip_high,
        } => {
            out.push_str("update_rule = clipped\n");
            out.push_str(&format!("update.clip_low = {clip_low}\n"));
            out.push_str(&format!("update.clip_high = {clip_high}\n"));
        }
    }
    out.push_str(&format!("modulation.k = {}\n", cfg.k));
    out.push_str(&format!("modulation.k_prime = {}\n", cfg.k_prime));
    out.push_str(&format!("modulation.zeta = {}\n", cfg.zeta));
    out.push_str(&format!("modulation.epsilon = {}\n", cfg.epsilon));
    out.push_str(&format!("checkpoint_every = {}\n", cfg.checkpoint_every));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_expands_with_family_defaults() {
        let cfg = parse_config("env.preset = fork3x3\n").unwrap();
        assert_eq!(
            cfg.env_spec.kind,
            EnvKind::AmbiguityFork {
                depth: 3,
                alias_width: 3
            }
        );
        assert_eq!(cfg.horizon, 12);
        assert_eq!(cfg.zeta, 0.1);
        assert_eq!((cfg.k, cfg.k_prime), (1.0, 1.0));

        let cfg = parse_config("env.preset = chain8\n").unwrap();
        assert_eq!(cfg.zeta, 0.05);
        assert_eq!(cfg.horizon, 16);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = parse_config("env.preset = chain8\nnonsense.key = 1\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("nonsense.key".into()));
    }

    #[test]
    fn overrides_apply_after_file() {
        let text = "env.preset = fork3x3\nmodulation.zeta = 0.3\n";
        let overrides = vec![
            ("modulation.zeta".to_string(), "0.05".to_string()),
            ("ablation".to_string(), "full".to_string()),
        ];
        let cfg = parse_config_with_overrides(text, &overrides).unwrap();
        assert_eq!(cfg.zeta, 0.05);
        assert_eq!(cfg.ablation, Ablation::Full);

        let bad = vec![("nonsense.key".to_string(), "1".to_string())];
        assert_eq!(
            parse_config_with_overrides(text, &bad).unwrap_err(),
            ConfigError::UnknownKey("nonsense.key".into())
        );
    }

    #[test]
    fn echo_round_trips_exactly() {
        let text = "\
env.preset = keydoor5x5
seed_list = 3,5,8
iterations = 77
learning_rate = 0.125
update_rule = clipped
update.clip_low = 0.2
update.clip_high = 0.28
modulation.epsilon = 1e-8
";
        let cfg = parse_config(text).unwrap();
        let echo = echo_config(&cfg, None);
        let cfg2 = parse_config(&echo).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(echo_config(&cfg2, None), echo);
    }

    #[test]
    fn gamma_must_be_one() {
        let err = parse_config("env.preset = chain8\ngamma = 0.99\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
    }

    #[test]
    fn clip_keys_require_clipped_rule() {
        let err = parse_config("env.preset = chain8\nupdate.clip_low = 0.2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Conflicting(_)));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# full line comment\n\nenv.preset = chain8  # trailing\n";
        assert!(parse_config(text).is_ok());
    }

    #[test]
    fn missing_env_is_reported() {
        assert_eq!(
            parse_config("iterations = 5\n").unwrap_err(),
            ConfigError::MissingKey("env.kind")
        );
        assert_eq!(
            parse_config("env.kind = chain_maze\nenv.n = 8\n").unwrap_err(),
            ConfigError::MissingKey("env.horizon")
        );
    }

    #[test]
    fn manual_kind_matches_preset() {
        let manual = parse_config("env.kind = chain_maze\nenv.n = 8\nenv.horizon = 16\n").unwrap();
        let preset = parse_config("env.preset = chain8\n").unwrap();
        assert_eq!(manual, preset);
    }
}
