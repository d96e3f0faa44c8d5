//! Flat `key = value` configuration: defaults, then a config file, then
//! `LORENZ_ATLAS_*` environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

pub const ENV_PREFIX: &str = "LORENZ_ATLAS_";

/// Keys naming where results go; they never change the results and are left
/// out of the canonical text and the hash.
const DESTINATION_KEYS: [&str; 2] = ["out", "checkpoint"];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Keys are case-insensitive and `-` is the same as `_`.
pub fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('-', "_")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(format!("line {}: expected key = value", n + 1));
        };
        out.push((normalize_key(k), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Config {
    command: String,
    values: BTreeMap<String, String>,
}

impl Config {
    /// Resolves the configuration for `command` with the given schema of
    /// `(key, default)` pairs. Keys outside the schema are rejected.
    pub fn resolve<K: AsRef<str>, V: AsRef<str>>(
        command: &str,
        schema: &[(K, V)],
        file_text: Option<&str>,
        env: &[(String, String)],
        flags: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<String, String> = schema.iter().map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string())).collect();
        let mut set = |k: String, v: String, origin: &str| -> Result<(), ConfigError> {
            match values.get_mut(&k) {
                Some(slot) => {
                    *slot = v;
                    Ok(())
                }
                None => err(format!("unknown key '{k}' ({origin}) for '{command}'")),
            }
        };
        if let Some(text) = file_text {
            for (k, v) in parse_text(text)? {
                set(k, v, "config file")?;
            }
        }
        for (k, v) in env {
            if let Some(rest) = k.strip_prefix(ENV_PREFIX) {
                set(normalize_key(rest), v.clone(), "environment")?;
            }
        }
        for (k, v) in flags {
            set(normalize_key(k), v.clone(), "command line")?;
        }
        Ok(Config { command: command.to_string(), values })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key '{key}' missing from schema"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.raw(key);
        v.parse().or_else(|_| err(format!("cannot parse {key} = '{v}'")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let x: f64 = self.get(key)?;
        if !x.is_finite() {
            return err(format!("{key} must be finite"));
        }
        Ok(x)
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get(key)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.f64(key).map(Some),
        }
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.usize(key).map(Some),
        }
    }

    /// One of `choices`.
    pub fn choice(&self, key: &str, choices: &[&str]) -> Result<String, ConfigError> {
        let v = self.raw(key).to_ascii_lowercase();
        if choices.contains(&v.as_str()) {
            Ok(v)
        } else {
            err(format!("{key} must be one of {}, got '{v}'", choices.join("|")))
        }
    }

    /// Canonical text of the resolved configuration.
    pub fn canonical(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, v) in self.values.iter().filter(|(k, _)| !DESTINATION_KEYS.contains(&k.as_str())) {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Comment header that starts every output file.
    pub fn header(&self) -> String {
        let mut s = format!("# lorenz-atlas {}\n# config_hash {}\n", env!("CARGO_PKG_VERSION"), self.hash());
        for line in self.canonical().lines() {
            s.push_str(&format!("# {line}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[(&str, &str)] = &[("alpha", "0.4"), ("lambda", "0.9"), ("out", "-")];

    #[test]
    fn layers_apply_in_order() {
        let env = vec![("LORENZ_ATLAS_LAMBDA".to_string(), "0.8".to_string())];
        let flags = vec![("lambda".to_string(), "0.7".to_string())];
        let c = Config::resolve("x", SCHEMA, Some("alpha = 0.5 # c\nlambda=1.0"), &env, &flags).unwrap();
        assert_eq!(c.f64("alpha").unwrap(), 0.5);
        assert_eq!(c.f64("lambda").unwrap(), 0.7);
        let c = Config::resolve("x", SCHEMA, Some("lambda=1.0"), &env, &[]).unwrap();
        assert_eq!(c.f64("lambda").unwrap(), 0.8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::resolve("x", SCHEMA, Some("beta = 1"), &[], &[]).is_err());
        assert!(Config::resolve("x", SCHEMA, None, &[("LORENZ_ATLAS_BETA".into(), "1".into())], &[]).is_err());
        assert!(Config::resolve("x", SCHEMA, None, &[], &[("gamma".into(), "1".into())]).is_err());
        assert!(parse_text("no equals sign").is_err());
    }

    #[test]
    fn hash_tracks_values() {
        let a = Config::resolve("x", SCHEMA, None, &[], &[]).unwrap();
        let b = Config::resolve("x", SCHEMA, Some("alpha = 0.4"), &[], &[]).unwrap();
        let c = Config::resolve("x", SCHEMA, Some("alpha = 0.41"), &[], &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        let d = Config::resolve("x", SCHEMA, Some("out = elsewhere.csv"), &[], &[]).unwrap();
        assert_eq!(a.hash(), d.hash());
        assert!(a.header().starts_with("# lorenz-atlas "));
    }

    #[test]
    fn bad_numbers() {
        let c = Config::resolve("x", SCHEMA, Some("alpha = abc\nlambda = nan"), &[], &[]).unwrap();
        assert!(c.f64("alpha").is_err());
        assert!(c.f64("lambda").is_err());
    }
}
