//! Run configuration: a TOML file whose keys mirror `TrainConfig`, with
//! command-line overrides applied on top before validation.

use std::path::Path;

use air_core::env::EnvConfig;
use air_core::trainer::TrainConfig;
use toml::{Table, Value};

use crate::exit::{CliError, CliResult};

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub env: Option<String>,
    pub mixer: Option<String>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub air: Option<String>,
    pub workers: Option<usize>,
}

/// Short env names, or a path to a tabular spec file.
pub fn env_table(name: &str) -> CliResult<Table> {
    let env = match EnvConfig::from_name(name) {
        Some(e) => e,
        None if Path::new(name).is_file() => EnvConfig::Tabular { path: name.into() },
        None => {
            return Err(CliError::validation(format!(
                "env: unknown environment `{name}` (expected climb, penalty, spread or a tabular spec path)"
            )))
        }
    };
    match Value::try_from(env) {
        Ok(Value::Table(t)) => Ok(t),
        _ => Err(CliError::runtime("could not encode env config")),
    }
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<TrainConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::validation(format!("config {}: {e}", p.display())))?;
            text.parse::<Table>()
                .map_err(|e| CliError::validation(format!("config {}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    if let Some(env) = &overrides.env {
        table.insert("env".into(), Value::Table(env_table(env)?));
    }
    let mut set = |key: &str, v: Value| {
        table.insert(key.into(), v);
    };
    if let Some(m) = &overrides.mixer {
        set("mixer", Value::String(m.clone()));
    }
    if let Some(a) = &overrides.air {
        set("air", Value::String(a.clone()));
    }
    for (key, v) in [("total_steps", overrides.steps), ("seed", overrides.seed)] {
        if let Some(v) = v {
            let v = i64::try_from(v).map_err(|_| CliError::validation(format!("{key}: value too large")))?;
            set(key, Value::Integer(v));
        }
    }
    if let Some(w) = overrides.workers {
        set("workers", Value::Integer(w as i64));
    }
    if !table.contains_key("env") {
        return Err(CliError::validation(
            "env: missing required key `env` (set it in the config file or pass --env)",
        ));
    }
    let config: TrainConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::validation(format!("config: {}", e.message())))?;
    Ok(config)
}

pub fn to_toml(config: &TrainConfig) -> CliResult<String> {
    toml::to_string(config).map_err(|e| CliError::runtime(format!("could not serialise config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use air_core::trainer::AirMode;
    use air_core::value_decomposition::MixerKind;

    #[test]
    fn flags_alone_build_a_default_config() {
        let o = Overrides {
            env: Some("climb".into()),
            ..Default::default()
        };
        assert_eq!(load(None, &o).unwrap(), TrainConfig::new(EnvConfig::Climb));
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\nmixer = \"vdn\"\nlr = 0.001\n[env]\nkind = \"penalty\"\npenalty = -30.0\n").unwrap();
        let c = load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((c.seed, c.mixer, c.lr), (3, MixerKind::Vdn, 0.001));
        assert_eq!(c.env, EnvConfig::Penalty { penalty: -30.0 });
        let o = Overrides {
            seed: Some(9),
            mixer: Some("qmix".into()),
            air: Some("off".into()),
            steps: Some(500),
            ..Default::default()
        };
        let c = load(Some(&path), &o).unwrap();
        assert_eq!((c.seed, c.mixer, c.air, c.total_steps), (9, MixerKind::Qmix, AirMode::Off, 500));
    }

    #[test]
    fn missing_env_names_the_key() {
        let err = load(None, &Overrides::default()).unwrap_err();
        assert_eq!(err.code, crate::exit::VALIDATION);
        assert!(err.message.contains("env"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "learning_rate = 0.1\n[env]\nkind = \"climb\"\n").unwrap();
        let err = load(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.message.contains("learning_rate"), "{}", err.message);
    }

    #[test]
    fn config_round_trips_through_toml() {
        for env in [EnvConfig::Climb, EnvConfig::spread_default(), EnvConfig::Penalty { penalty: -5.0 }] {
            let c = TrainConfig::new(env);
            let back: TrainConfig = toml::from_str(&to_toml(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
    }
}
