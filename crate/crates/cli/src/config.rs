//! Experiment configuration files.
//!
//! A configuration file is TOML. The grammar:
//!
//! ```toml
//! preset = "fig2-mnist-iid"   # required by `validate`, optional for `run`
//! seed = 0
//!
//! [training]
//! epochs = 30
//! learning_rate = 0.01
//! batch_size = 32
//! local_epochs = 1
//! eval_every = 1              # 0 = last epoch only
//! n_users = 20
//!
//! [data]
//! dir = "data"
//! mnist_images = "mnist/mnist-10k-images-idx3-ubyte.gz"
//! mnist_labels = "mnist/mnist-10k-labels-idx1-ubyte.gz"
//! pima_csv = "pima/pima-synthetic.csv"
//! train_size = 6000
//! val_size = 1000
//! partition = "iid"           # or "label"
//!
//! [attack]
//! adversaries = 2             # the highest user ids are adversarial
//! observation = "last_mover"  # or "previous_epoch"
//! fit_acceptance = true
//!
//! [aggregator]
//! delta = 1.0
//! deltas = [0.5, 1.0, 5.0]    # the delta sweep preset
//!
//! [games]
//! labels_degrees = [1, 2, 3]
//! iid_degrees = [0.1, 0.5, 1.0]
//! potential_steps = 300
//! ```
//!
//! Every key may be omitted and then takes the preset's default. Unknown
//! keys are rejected. Paths in `[data]` are relative to `data.dir`.

use std::fmt;
use std::path::Path;

use cmlsim::adversary::Observation;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::presets;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Syntax { origin: String, message: String },

    #[error("{}", Located(origin, *line, key, message))]
    Constraint {
        origin: String,
        line: Option<usize>,
        key: String,
        message: String,
    },

    #[error("unknown preset `{name}`; available presets: {}", presets::names().join(", "))]
    UnknownPreset { name: String },

    #[error("{origin}: {message}")]
    Missing { origin: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

struct Located<'a>(&'a str, Option<usize>, &'a str, &'a str);

impl fmt::Display for Located<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Located(origin, line, key, message) = *self;
        match line {
            Some(l) => write!(f, "{origin}, line {l}: {key}: {message}"),
            None => write!(f, "{origin}: {key}: {message}"),
        }
    }
}

/// How the training pool is split among users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    /// Label sharding: every user holds samples of a single class.
    Label,
}

/// The file as written: every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub aggregator: AggregatorSection,
    #[serde(default)]
    pub games: GamesSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_users: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_images: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_labels: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pima_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adversaries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_acceptance: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GamesSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels_degrees: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iid_degrees: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_steps: Option<usize>,
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub preset: String,
    pub seed: u64,
    pub training: Training,
    pub data: DataSettings,
    pub attack: AttackSettings,
    pub aggregator: AggregatorSettings,
    pub games: GameSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub eval_every: usize,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub dir: String,
    pub mnist_images: String,
    pub mnist_labels: String,
    pub pima_csv: String,
    pub train_size: usize,
    pub val_size: usize,
    pub partition: PartitionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub adversaries: usize,
    pub observation: Observation,
    pub fit_acceptance: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorSettings {
    pub delta: f64,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSettings {
    pub labels_degrees: Vec<f64>,
    pub iid_degrees: Vec<f64>,
    pub potential_steps: usize,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax {
            origin: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    /// Fills omitted keys from the preset defaults. `preset` and `seed`
    /// override the file's own values when given.
    pub fn resolve(&self, preset: Option<&str>, seed: Option<u64>) -> Result<Settings, ConfigError> {
        let name = match (preset, self.preset.as_deref()) {
            (Some(a), Some(b)) if a != b => {
                return Err(ConfigError::Constraint {
                    origin: "command line".into(),
                    line: None,
                    key: "preset".into(),
                    message: format!("the command names `{a}` but the file names `{b}`"),
                })
            }
            (Some(a), _) => a,
            (None, Some(b)) => b,
            (None, None) => {
                return Err(ConfigError::Missing {
                    origin: "config".into(),
                    message: "no preset given".into(),
                })
            }
        };
        let mut s = presets::defaults(name, seed.or(self.seed).unwrap_or(0))?;
        let t = &self.training;
        let d = &self.data;
        let a = &self.attack;
        let g = &self.aggregator;
        let k = &self.games;
        macro_rules! take {
            ($($dst:expr => $src:expr),* $(,)?) => {
                $(if let Some(v) = $src.clone() { $dst = v; })*
            };
        }
        take! {
            s.training.epochs => t.epochs,
            s.training.learning_rate => t.learning_rate,
            s.training.batch_size => t.batch_size,
            s.training.local_epochs => t.local_epochs,
            s.training.eval_every => t.eval_every,
            s.training.n_users => t.n_users,
            s.data.dir => d.dir,
            s.data.mnist_images => d.mnist_images,
            s.data.mnist_labels => d.mnist_labels,
            s.data.pima_csv => d.pima_csv,
            s.data.train_size => d.train_size,
            s.data.val_size => d.val_size,
            s.data.partition => d.partition,
            s.attack.adversaries => a.adversaries,
            s.attack.observation => a.observation,
            s.attack.fit_acceptance => a.fit_acceptance,
            s.aggregator.delta => g.delta,
            s.aggregator.deltas => g.deltas,
            s.games.labels_degrees => k.labels_degrees,
            s.games.iid_degrees => k.iid_degrees,
            s.games.potential_steps => k.potential_steps,
        }
        Ok(s)
    }
}

/// A constraint violation before it is tied to a file location.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub key: &'static str,
    pub message: String,
}

fn violation(key: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        key,
        message: message.into(),
    }
}

impl Settings {
    /// Checks value constraints that do not depend on the preset.
    pub fn check(&self) -> Result<(), Violation> {
        let t = &self.training;
        if self.seed > i64::MAX as u64 {
            return Err(violation("seed", format!("seed must be ≤ {}", i64::MAX)));
        }
        if t.epochs == 0 {
            return Err(violation("training.epochs", "epochs must be ≥ 1"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(violation("training.learning_rate", "learning_rate must be > 0"));
        }
        if t.batch_size == 0 {
            return Err(violation("training.batch_size", "batch_size must be ≥ 1"));
        }
        if t.local_epochs == 0 {
            return Err(violation("training.local_epochs", "local_epochs must be ≥ 1"));
        }
        if t.n_users < 2 {
            return Err(violation("training.n_users", "n_users must be ≥ 2"));
        }
        if self.data.train_size == 0 {
            return Err(violation("data.train_size", "train_size must be ≥ 1"));
        }
        if self.data.val_size == 0 {
            return Err(violation("data.val_size", "val_size must be ≥ 1"));
        }
        if self.attack.adversaries >= t.n_users {
            return Err(violation("attack.adversaries", "adversaries must be < n_users"));
        }
        if !(self.aggregator.delta >= 0.0 && self.aggregator.delta.is_finite()) {
            return Err(violation("aggregator.delta", "delta must be ≥ 0"));
        }
        if self.aggregator.deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(violation("aggregator.deltas", "every delta must be ≥ 0"));
        }
        let g = &self.games;
        if g.labels_degrees.iter().any(|d| d.fract() != 0.0 || !(1.0..=10.0).contains(d)) {
            return Err(violation(
                "games.labels_degrees",
                "labels degrees must be integers in [1, 10]",
            ));
        }
        if g.iid_degrees.iter().any(|d| !(*d > 0.0 && *d <= 1.0)) {
            return Err(violation("games.iid_degrees", "iid degrees must lie in (0, 1]"));
        }
        if g.potential_steps == 0 {
            return Err(violation("games.potential_steps", "potential_steps must be ≥ 1"));
        }
        presets::check(self)
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            preset: Some(self.preset.clone()),
            seed: Some(self.seed),
            training: TrainingSection {
                epochs: Some(self.training.epochs),
                learning_rate: Some(self.training.learning_rate),
                batch_size: Some(self.training.batch_size),
                local_epochs: Some(self.training.local_epochs),
                eval_every: Some(self.training.eval_every),
                n_users: Some(self.training.n_users),
            },
            data: DataSection {
                dir: Some(self.data.dir.clone()),
                mnist_images: Some(self.data.mnist_images.clone()),
                mnist_labels: Some(self.data.mnist_labels.clone()),
                pima_csv: Some(self.data.pima_csv.clone()),
                train_size: Some(self.data.train_size),
                val_size: Some(self.data.val_size),
                partition: Some(self.data.partition),
            },
            attack: AttackSection {
                adversaries: Some(self.attack.adversaries),
                observation: Some(self.attack.observation),
                fit_acceptance: Some(self.attack.fit_acceptance),
            },
            aggregator: AggregatorSection {
                delta: Some(self.aggregator.delta),
                deltas: Some(self.aggregator.deltas.clone()),
            },
            games: GamesSection {
                labels_degrees: Some(self.games.labels_degrees.clone()),
                iid_degrees: Some(self.games.iid_degrees.clone()),
                potential_steps: Some(self.games.potential_steps),
            },
        }
    }

    /// The resolved configuration as TOML, every key present.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("settings serialize to TOML")
    }
}

/// Line (1-based) where `key` (`section.name` or a top-level name) is set.
fn locate(text: &str, key: &str) -> Option<usize> {
    let (section, name) = match key.split_once('.') {
        Some((s, n)) => (s, n),
        None => ("", key),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            continue;
        }
        if current != section {
            continue;
        }
        if let Some((lhs, _)) = line.split_once('=') {
            if lhs.trim().trim_matches('"') == name {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Parses, resolves and checks configuration text.
pub fn parse_config_str(
    text: &str,
    origin: &str,
    preset: Option<&str>,
    seed: Option<u64>,
) -> Result<Settings, ConfigError> {
    let file = ConfigFile::parse(text, origin)?;
    let settings = file.resolve(preset, seed)?;
    settings.check().map_err(|v| ConfigError::Constraint {
        origin: origin.to_string(),
        line: locate(text, v.key),
        key: v.key.to_string(),
        message: v.message,
    })?;
    Ok(settings)
}

/// Reads and resolves a configuration file.
pub fn parse_config(path: &Path, preset: Option<&str>, seed: Option<u64>) -> Result<Settings, ConfigError> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: origin.clone(),
        source,
    })?;
    parse_config_str(&text, &origin, preset, seed)
}

/// Preset defaults for a run without a configuration file.
pub fn preset_settings(preset: &str, seed: u64) -> Result<Settings, ConfigError> {
    let settings = presets::defaults(preset, seed)?;
    settings.check().map_err(|v| ConfigError::Constraint {
        origin: "command line".into(),
        line: None,
        key: v.key.to_string(),
        message: v.message,
    })?;
    Ok(settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_preset_defaults() {
        let s = parse_config_str("preset = \"fig2-mnist-iid\"\n", "t", None, None).unwrap();
        assert_eq!(s, presets::defaults("fig2-mnist-iid", 0).unwrap());
    }

    #[test]
    fn negative_delta_names_key_and_line() {
        let text = "preset = \"fig3-scc-delta\"\n\n[aggregator]\ndelta = -1.0\n";
        let err = parse_config_str(text, "c.toml", None, None).unwrap_err();
        assert_eq!(err.to_string(), "c.toml, line 4: aggregator.delta: delta must be ≥ 0");
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let text = "preset = \"fig2-mnist-iid\"\n[training]\nepochz = 3\n";
        let msg = parse_config_str(text, "c.toml", None, None).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("epochz"), "{msg}");
    }

    #[test]
    fn type_mismatch_is_a_syntax_error() {
        let text = "preset = \"fig2-mnist-iid\"\n[training]\nepochs = \"many\"\n";
        let err = parse_config_str(text, "c.toml", None, None).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { .. }));
        assert!(err.to_string().contains("epochs"));
    }

    #[test]
    fn resolved_config_round_trips() {
        for name in presets::names() {
            let s = presets::defaults(name, 7).unwrap();
            let back = parse_config_str(&s.to_toml(), "rt", None, None).unwrap();
            assert_eq!(back, s, "{name}");
            assert_eq!(back.to_toml(), s.to_toml());
        }
    }

    #[test]
    fn overrides_apply_and_command_line_wins() {
        let text = "preset = \"baseline-mean-iid\"\nseed = 4\n[training]\nepochs = 3\n";
        let s = parse_config_str(text, "t", None, Some(9)).unwrap();
        assert_eq!(s.training.epochs, 3);
        assert_eq!(s.seed, 9);
        assert!(parse_config_str(text, "t", Some("fig5-dissensus"), None).is_err());
    }

    #[test]
    fn unknown_preset_lists_the_table() {
        let msg = parse_config_str("preset = \"fig4\"\n", "t", None, None).unwrap_err().to_string();
        assert!(msg.contains("fig2-mnist-iid") && msg.contains("fig8-health"), "{msg}");
    }

    #[test]
    fn locate_respects_sections() {
        let text = "delta = 1\n[aggregator]\n  delta = 2\n";
        assert_eq!(locate(text, "aggregator.delta"), Some(3));
        assert_eq!(locate(text, "delta"), Some(1));
        assert_eq!(locate(text, "games.delta"), None);
    }
}
