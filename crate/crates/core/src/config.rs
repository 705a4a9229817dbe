//! Scenario files: one TOML document with a section per subsystem.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::comms::CommsConfig;
use crate::error::{Error, Result};
use crate::experiment::{AggregationConfig, ExperimentConfig, SplittingConfig};
use crate::fusion::FusionConfig;
use crate::policy::DdpgConfig;
use crate::world::WorldConfig;

/// Keys that are valid but absent from a serialized default.
const OPTIONAL_KEYS: &[&str] = &["ddpg.reward.energy_unit"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub world: WorldConfig,
    pub ddpg: DdpgConfig,
    pub aggregation: AggregationConfig,
    pub splitting: SplittingConfig,
    pub fusion: FusionConfig,
    pub comms: CommsConfig,
    pub experiment: ExperimentConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.ddpg.validate()?;
        self.aggregation.validate()?;
        self.splitting.validate()?;
        self.fusion.validate()?;
        self.comms.validate()?;
        self.experiment.validate()
    }

    /// Parses and validates a scenario. Missing keys take their defaults;
    /// unknown keys are rejected with their dotted path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value =
            text.parse().map_err(|e: toml::de::Error| Error::config("", e.message().to_string()))?;
        let reference = toml::Value::try_from(Scenario::default()).expect("default scenario serializes");
        if let Some(key) = unknown_key(&value, &reference, "") {
            return Err(Error::config(key, "unknown key"));
        }
        let scenario: Scenario =
            value.try_into().map_err(|e: toml::de::Error| Error::config("", e.message().to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// First key of `value` that `reference` does not have, as a dotted path
/// down to the first leaf below it.
fn unknown_key(value: &toml::Value, reference: &toml::Value, prefix: &str) -> Option<String> {
    let (toml::Value::Table(t), toml::Value::Table(r)) = (value, reference) else {
        return None;
    };
    for (k, v) in t {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            Some(rv) => {
                if let Some(p) = unknown_key(v, rv, &path) {
                    return Some(p);
                }
            }
            None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
            None => return Some(first_leaf(v, path)),
        }
    }
    None
}

fn first_leaf(value: &toml::Value, path: String) -> String {
    match value {
        toml::Value::Table(t) => match t.iter().next() {
            Some((k, v)) => first_leaf(v, format!("{path}.{k}")),
            None => path,
        },
        _ => path,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match Scenario::from_toml_str(text) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_the_default_scenario() {
        assert_eq!(Scenario::from_toml_str("").unwrap(), Scenario::default());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let s = Scenario::default();
        assert_eq!(Scenario::from_toml_str(&s.to_toml_string()).unwrap(), s);
    }

    #[test]
    fn unknown_keys_are_named_by_path() {
        assert_eq!(key_of("[wrold]\nsize = 3\n"), "wrold.size");
        assert_eq!(key_of("[world]\nsize = 3\n"), "world.size");
        assert_eq!(key_of("[ddpg.reward]\ncoverag = 1.0\n"), "ddpg.reward.coverag");
        assert_eq!(key_of("[comms.edge]\nlatency = 1.0\n"), "comms.edge.latency");
    }

    #[test]
    fn optional_keys_and_invalid_values() {
        let s = Scenario::from_toml_str("[ddpg.reward]\nenergy_unit = 2.0\n").unwrap();
        assert_eq!(s.ddpg.reward.energy_unit, Some(2.0));
        assert_eq!(key_of("[world]\nn_targets = 0\n"), "world.n_targets");
        assert_eq!(key_of("[experiment]\nrobot_counts = []\n"), "experiment.robot_counts");
        assert_eq!(key_of("[aggregation]\ntemperature = -1.0\n"), "aggregation.temperature");
    }

    #[test]
    fn methods_parse_by_name() {
        let s = Scenario::from_toml_str("[experiment]\nmethods = [\"LSAI\", \"Distributed\"]\n").unwrap();
        assert_eq!(s.experiment.methods.len(), 2);
        assert!(Scenario::from_toml_str("[experiment]\nmethods = [\"Edge\"]\n").is_err());
    }
}
