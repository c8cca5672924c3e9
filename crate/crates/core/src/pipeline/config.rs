use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use super::PipelineError;

/// Environment variable that overrides the master seed.
pub const SEED_ENV: &str = "SKETCHMOL_SEED";

/// Flat `key = value` settings. `#` starts a comment; blank lines are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| PipelineError::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(PipelineError::Config(format!("line {}: empty key", n + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, PipelineError> {
        self.get_str(key)
            .map(|v| v.parse::<T>().map_err(|_| PipelineError::Config(format!("bad value for `{key}`: `{v}`"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, PipelineError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Master seed: the environment override when set, else `seed`, else `default`.
    pub fn seed(&self, default: u64) -> Result<u64, PipelineError> {
        match seed_override(std::env::var(SEED_ENV).ok().as_deref())? {
            Some(s) => Ok(s),
            None => self.get_or("seed", default),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn seed_override(value: Option<&str>) -> Result<Option<u64>, PipelineError> {
    value
        .map(|v| v.trim().parse::<u64>().map_err(|_| PipelineError::Config(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))))
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let c = Config::parse("# run\nseed = 7\n\nn_shapes=12 # inline\ntop_p = 0.95\n").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(c.get_or("n_shapes", 0usize).unwrap(), 12);
        assert_eq!(c.get::<f64>("top_p").unwrap(), Some(0.95));
        assert_eq!(c.get::<f64>("missing").unwrap(), None);
        assert!(c.get::<u64>("top_p").is_err());
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        assert!(Config::parse("novalue").is_err());
        assert!(Config::parse("= 3").is_err());
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(seed_override(Some("42")).unwrap(), Some(42));
        assert_eq!(seed_override(None).unwrap(), None);
        assert!(seed_override(Some("x")).is_err());
    }
}
