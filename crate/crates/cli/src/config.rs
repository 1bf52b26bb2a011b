//! Flat `key = value` run configuration merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

pub const SEED_ENV: &str = "VIPR_SEED";

/// Resolution order per key: flag, config file, (for `seed`) the
/// `VIPR_SEED` environment variable, built-in default.
pub struct Resolver {
    stage: &'static str,
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

pub fn parse_config_text(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::usage(format!(
                "{}:{}: expected key = value, got {line:?}",
                origin.display(),
                i + 1
            )));
        };
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::usage(format!("{}:{}: duplicate key {key:?}", origin.display(), i + 1)));
        }
    }
    Ok(out)
}

impl Resolver {
    /// Loads `config` (if any) and rejects keys outside `allowed`.
    pub fn new(stage: &'static str, config: Option<&Path>, allowed: &[&str]) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
                parse_config_text(&text, p)?
            }
            None => BTreeMap::new(),
        };
        if let Some(bad) = file.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::usage(format!(
                "unknown config key {bad:?} for {stage}; accepted: {}",
                allowed.join(", ")
            )));
        }
        Ok(Self {
            stage,
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config key {key} = {v:?}: {e}"))),
            None => Ok(None),
        }
    }

    fn record<T: Display>(&mut self, key: &str, v: &T) {
        self.resolved.insert(key.to_string(), v.to_string());
    }

    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let p = match flag {
            Some(p) => Some(p),
            None => self.file.get(key).map(PathBuf::from),
        };
        let p = p.ok_or_else(|| {
            CliError::usage(format!("{}: missing required --{} (flag or config key {key})", self.stage, key.replace('_', "-")))
        })?;
        self.resolved.insert(key.to_string(), p.display().to_string());
        Ok(p)
    }

    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let v = match flag {
            Some(v) => v,
            None => match self.from_file("seed")? {
                Some(v) => v,
                None => match std::env::var(SEED_ENV) {
                    Ok(s) => s
                        .trim()
                        .parse()
                        .map_err(|e| CliError::usage(format!("{SEED_ENV}={s:?}: {e}")))?,
                    Err(_) => 0,
                },
            },
        };
        self.record("seed", &v);
        Ok(v)
    }

    /// The resolved configuration in config-file syntax.
    pub fn render(&self) -> String {
        let mut s = format!("# {} resolved configuration\n", self.stage);
        for (k, v) in &self.resolved {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Logs the resolved configuration to stderr.
    pub fn log(&self) {
        eprint!("{}", self.render());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_precedence() {
        let map = parse_config_text("# c\nstride = 10\nval-fraction=0.3\n", Path::new("x")).unwrap();
        assert_eq!(map["stride"], "10");
        assert_eq!(map["val_fraction"], "0.3");
        assert!(parse_config_text("stride 10", Path::new("x")).is_err());
        assert!(parse_config_text("a=1\na=2", Path::new("x")).is_err());

        let mut r = Resolver {
            stage: "t",
            file: map,
            resolved: BTreeMap::new(),
        };
        assert_eq!(r.value("stride", Some(5usize), 20).unwrap(), 5);
        assert_eq!(r.value("stride", None, 20usize).unwrap(), 10);
        assert_eq!(r.value("offset", None, 0usize).unwrap(), 0);
        assert!(r.render().contains("stride = 10"));
        assert!(r.path("missing", None).is_err());
    }
}
