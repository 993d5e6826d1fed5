//! Experiment configuration: flat dotted key-value files, JSON ingestion,
//! default hyperparameters, the standard comparison grid, and run naming.

use std::path::Path;

use serde::Deserialize;

use hypermarl_core::game::{GameConfig, GameKind};
use hypermarl_core::policy::{VariantKind, VariantSpec};
use hypermarl_core::train::TrainConfig;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ConfigError {
    #[error("config error: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

/// Hidden width used by the shared architectures at the standard agent
/// counts; independent policies use width 4 throughout. Chosen to keep
/// parameter counts controlled across architectures.
pub fn default_hidden_dim(kind: VariantKind, n_agents: usize) -> Option<usize> {
    if kind == VariantKind::NoPs {
        return Some(4);
    }
    match n_agents {
        2 => Some(8),
        4 => Some(16),
        8 => Some(32),
        16 => Some(64),
        _ => None,
    }
}

/// One named training configuration (the seed field is filled per run).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedConfig {
    pub key: String,
    pub train: TrainConfig,
}

/// Everything a config file can specify; all fields optional so it works
/// both as the flat key-value target and as a JSON override block.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub game: PartialGame,
    #[serde(default)]
    pub variant: PartialVariant,
    #[serde(default)]
    pub train: PartialTrain,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialGame {
    pub kind: Option<String>,
    pub n_agents: Option<usize>,
    pub n_actions: Option<usize>,
    pub horizon: Option<usize>,
    pub temporal: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialVariant {
    pub kind: Option<String>,
    pub hidden_dim: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hyper_hidden_dim: Option<usize>,
    pub reset_fan_init: Option<bool>,
    pub head_init_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialTrain {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub total_steps: Option<u64>,
    pub eval_interval: Option<u64>,
    pub eval_episodes: Option<usize>,
    pub gamma: Option<f64>,
    pub grad_window: Option<usize>,
    pub seed_list: Option<Vec<u64>>,
}

impl PartialConfig {
    /// Apply defaults and produce a concrete named config.
    pub fn resolve(&self) -> Result<(NamedConfig, Option<Vec<u64>>), ConfigError> {
        let kind_str = self
            .game
            .kind
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("game.kind is required".into()))?;
        let game_kind = match kind_str {
            "spec" | "specialisation" => GameKind::Specialisation,
            "sync" | "synchronisation" => GameKind::Synchronisation,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown game.kind `{other}` (expected spec|sync)"
                )))
            }
        };
        let n_agents = self
            .game
            .n_agents
            .ok_or_else(|| ConfigError::Invalid("game.n_agents is required".into()))?;
        let n_actions = self.game.n_actions.unwrap_or(n_agents);
        let horizon = self.game.horizon.unwrap_or(10);
        let temporal = self.game.temporal.unwrap_or(true);
        let game = GameConfig::with_options(game_kind, n_agents, n_actions, horizon, temporal)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let vkind_str = self
            .variant
            .kind
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("variant.kind is required".into()))?;
        let vkind = VariantKind::parse(vkind_str).ok_or_else(|| {
            ConfigError::Invalid(format!("unknown variant.kind `{vkind_str}`"))
        })?;
        let hidden_dim = match self.variant.hidden_dim {
            Some(h) => h,
            None => default_hidden_dim(vkind, n_agents).ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "variant.hidden_dim required: no default width for {n_agents} agents"
                ))
            })?,
        };
        let mut variant = match vkind {
            VariantKind::HyperLinear => VariantSpec::hyper_linear(hidden_dim, n_agents),
            VariantKind::HyperMlp | VariantKind::HyperMlpNoDecouple => {
                let embed = self.variant.embed_dim.unwrap_or(n_agents);
                let hyper_hidden = self.variant.hyper_hidden_dim.unwrap_or(16);
                if vkind == VariantKind::HyperMlp {
                    VariantSpec::hyper_mlp(hidden_dim, embed, hyper_hidden)
                } else {
                    VariantSpec::hyper_mlp_no_decouple(hidden_dim, embed, hyper_hidden)
                }
            }
            direct => VariantSpec::direct(direct, hidden_dim),
        };
        if let Some(rf) = self.variant.reset_fan_init {
            variant.reset_fan_init = rf;
        }
        if let Some(scale) = self.variant.head_init_scale {
            variant.head_init_scale = scale;
        }

        let mut train = TrainConfig::new(game, variant, 0);
        if let Some(v) = self.train.lr {
            train.lr = v;
        }
        if let Some(v) = self.train.batch_size {
            train.batch_size = v;
        }
        if let Some(v) = self.train.total_steps {
            train.total_steps = v;
        }
        if let Some(v) = self.train.eval_interval {
            train.eval_interval = v;
        }
        if let Some(v) = self.train.eval_episodes {
            train.eval_episodes = v;
        }
        if let Some(v) = self.train.gamma {
            train.gamma = v;
        }
        if let Some(v) = self.train.grad_window {
            train.grad_window = v;
        }
        train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let key = match &self.name {
            Some(name) => sanitise_key(name)?,
            None => config_key(&train),
        };
        Ok((NamedConfig { key, train }, self.train.seed_list.clone()))
    }
}

fn sanitise_key(name: &str) -> Result<String, ConfigError> {
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(ConfigError::Invalid(format!(
            "config name `{name}` must be non-empty [A-Za-z0-9_-]"
        )));
    }
    Ok(name.to_string())
}

/// Canonical run-directory key for a configuration. Non-default settings
/// are appended so distinct configs never collide.
pub fn config_key(train: &TrainConfig) -> String {
    let game = &train.game;
    let variant = &train.variant;
    let mut key = format!(
        "{}-n{}-{}-h{}",
        game.kind.as_str(),
        game.n_agents,
        variant.kind,
        variant.hidden_dim
    );
    if game.n_actions != game.n_agents {
        key.push_str(&format!("-a{}", game.n_actions));
    }
    if !game.temporal {
        key.push_str("-oneshot");
    } else if game.horizon != 10 {
        key.push_str(&format!("-t{}", game.horizon));
    }
    if variant.kind.is_hyper() {
        key.push_str(&format!("-e{}", variant.embed_dim));
        if variant.hyper_hidden_dim != 0 {
            key.push_str(&format!("-hh{}", variant.hyper_hidden_dim));
        }
        if !variant.reset_fan_init {
            key.push_str("-norf");
        }
    }
    if train.total_steps != 10_000 {
        key.push_str(&format!("-s{}", train.total_steps));
    }
    if train.lr != 0.01 {
        // Exponent form keeps extreme rates filesystem-friendly.
        key.push_str(&format!("-lr{:e}", train.lr));
    }
    key
}

/// Parse a flat dotted key-value file (one `section.key=value` per line,
/// `#` comments allowed).
pub fn parse_flat_kv(text: &str) -> Result<PartialConfig, ConfigError> {
    let mut cfg = PartialConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::Invalid(format!("line {}: expected key=value, got `{line}`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        set_key(&mut cfg, key, value)
            .map_err(|e| ConfigError::Invalid(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(cfg)
}

fn set_key(cfg: &mut PartialConfig, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("bad value `{value}` for {key}"))
    }
    match key {
        "name" => cfg.name = Some(value.to_string()),
        "game.kind" => cfg.game.kind = Some(value.to_string()),
        "game.n_agents" => cfg.game.n_agents = Some(parse(key, value)?),
        "game.n_actions" => cfg.game.n_actions = Some(parse(key, value)?),
        "game.horizon" => cfg.game.horizon = Some(parse(key, value)?),
        "game.temporal" => cfg.game.temporal = Some(parse(key, value)?),
        "variant.kind" => cfg.variant.kind = Some(value.to_string()),
        "variant.hidden_dim" => cfg.variant.hidden_dim = Some(parse(key, value)?),
        "variant.embed_dim" => cfg.variant.embed_dim = Some(parse(key, value)?),
        "variant.hyper_hidden_dim" => cfg.variant.hyper_hidden_dim = Some(parse(key, value)?),
        "variant.reset_fan_init" => cfg.variant.reset_fan_init = Some(parse(key, value)?),
        "variant.head_init_scale" => cfg.variant.head_init_scale = Some(parse(key, value)?),
        "train.lr" => cfg.train.lr = Some(parse(key, value)?),
        "train.batch_size" => cfg.train.batch_size = Some(parse(key, value)?),
        "train.total_steps" => cfg.train.total_steps = Some(parse(key, value)?),
        "train.eval_interval" => cfg.train.eval_interval = Some(parse(key, value)?),
        "train.eval_episodes" => cfg.train.eval_episodes = Some(parse(key, value)?),
        "train.gamma" => cfg.train.gamma = Some(parse(key, value)?),
        "train.grad_window" => cfg.train.grad_window = Some(parse(key, value)?),
        "train.seed_list" => {
            let seeds: Result<Vec<u64>, _> = value
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect();
            cfg.train.seed_list =
                Some(seeds.map_err(|_| format!("bad seed list `{value}`"))?);
        }
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

/// JSON ingestion: either a single config object or
/// `{"configs": [...], "seeds": [...]}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum JsonExperiment {
    Many {
        configs: Vec<PartialConfig>,
        #[serde(default)]
        seeds: Option<Vec<u64>>,
    },
    One(Box<PartialConfig>),
}

/// Parsed config file: one or more named configs plus an optional seed list.
#[derive(Debug, Clone)]
pub struct ParsedExperiment {
    pub configs: Vec<NamedConfig>,
    pub seeds: Option<Vec<u64>>,
}

pub fn parse_config_str(text: &str, json: bool) -> Result<ParsedExperiment, ConfigError> {
    if json {
        let parsed: JsonExperiment = serde_json::from_str(text)
            .map_err(|e| ConfigError::Invalid(format!("bad JSON config: {e}")))?;
        let (partials, seeds) = match parsed {
            JsonExperiment::Many { configs, seeds } => (configs, seeds),
            JsonExperiment::One(one) => (vec![*one], None),
        };
        let mut configs = Vec::new();
        let mut merged_seeds = seeds;
        for partial in &partials {
            let (named, per_config_seeds) = partial.resolve()?;
            if merged_seeds.is_none() {
                merged_seeds = per_config_seeds;
            }
            configs.push(named);
        }
        Ok(ParsedExperiment {
            configs,
            seeds: merged_seeds,
        })
    } else {
        let partial = parse_flat_kv(text)?;
        let (named, seeds) = partial.resolve()?;
        Ok(ParsedExperiment {
            configs: vec![named],
            seeds,
        })
    }
}

pub fn parse_config_file(path: &Path) -> Result<ParsedExperiment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let json = path.extension().is_some_and(|e| e == "json")
        || text.trim_start().starts_with('{');
    parse_config_str(&text, json)
}

/// The standard comparison grid: both games, n in {2, 4, 8, 16}, the three
/// baseline architectures at their standard widths, default training
/// protocol.
pub fn table1_grid() -> Vec<NamedConfig> {
    let mut configs = Vec::new();
    for game_kind in [GameKind::Specialisation, GameKind::Synchronisation] {
        for n in [2usize, 4, 8, 16] {
            for vkind in [VariantKind::NoPs, VariantKind::FuPs, VariantKind::FuPsId] {
                let hidden = default_hidden_dim(vkind, n).unwrap();
                let game = GameConfig::new(game_kind, n).unwrap();
                let train = TrainConfig::new(game, VariantSpec::direct(vkind, hidden), 0);
                configs.push(NamedConfig {
                    key: config_key(&train),
                    train,
                });
            }
        }
    }
    configs
}
