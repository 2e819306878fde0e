//! Flat `key = value` run settings.
//!
//! Values resolve in the order defaults, then the config file, then
//! command-line overrides. Unknown keys are rejected. Keys starting with
//! `grid.` name a tunable key and hold a comma-separated list of values to
//! search over during `train`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    // paths
    ("input", ""),
    ("format", "auto"),
    ("data", ""),
    ("out", "out"),
    ("covariates", ""),
    ("locations", ""),
    ("checkpoint", ""),
    // ingest
    ("min_user_items", "1"),
    ("min_item_users", "1"),
    ("split_train", "0.7"),
    ("split_test", "0.2"),
    ("split_validation", "0.1"),
    ("n_clusters", "10"),
    // model
    ("variant", "expomf-peritem"),
    ("k", "100"),
    ("lambda_theta", "0.01"),
    ("lambda_beta", "0.01"),
    ("lambda_y", "1"),
    ("alpha1", "1"),
    ("alpha2", "1"),
    ("init_scale", "0.01"),
    ("fixed_mu", "0.1"),
    ("init_mu", "0.01"),
    ("c0", "0.01"),
    ("c1", "1"),
    ("step_size", "0.5"),
    ("batch_size", "10"),
    ("epochs", "10"),
    ("use_bias", "true"),
    // training
    ("max_iters", "50"),
    ("patience", "3"),
    ("stop_metric", "ndcg"),
    ("ndcg_k", "100"),
    ("log_objective", "false"),
    ("threads", "0"),
    ("seed", "0"),
    // evaluation
    ("rule", "auto"),
    ("recall_ks", "20,50"),
    ("map_k", "100"),
    // synthetic data
    ("synth.users", "200"),
    ("synth.items", "150"),
    ("synth.k", "5"),
    ("synth.lambda_theta", "1"),
    ("synth.lambda_beta", "1"),
    ("synth.lambda_y", "1"),
    ("synth.exposure", "popularity"),
    ("synth.mu", "0.3"),
    ("synth.alpha1", "1"),
    ("synth.alpha2", "5"),
    ("synth.regions", "10"),
    ("synth.home_mu", "0.5"),
    ("synth.away_mu", "0.01"),
    ("synth.observation", "binarized"),
    ("synth.density", "0.05"),
];

/// Keys that may carry a `grid.` list.
pub const GRID_KEYS: &[&str] = &[
    "k",
    "lambda_theta",
    "lambda_beta",
    "lambda_y",
    "alpha1",
    "alpha2",
    "fixed_mu",
    "init_mu",
    "c0",
    "c1",
    "step_size",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    grid: BTreeMap<String, Vec<String>>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            grid: BTreeMap::new(),
        }
    }
}

fn split_pair(raw: &str) -> Option<(&str, &str)> {
    let (k, v) = raw.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl Settings {
    /// Defaults, then `file`, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut s = Self::default();
        if let Some(path) = file {
            s.apply_file(path)?;
        }
        for (k, v) in overrides {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_pair(line).ok_or_else(|| Error::Parse {
                path: path.to_owned(),
                line: idx as u64 + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parse a `key=value` override.
    pub fn parse_override(raw: &str) -> Result<(String, String)> {
        split_pair(raw)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .ok_or_else(|| Error::config(raw, "overrides take the form key=value"))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(target) = key.strip_prefix("grid.") {
            if !GRID_KEYS.contains(&target) {
                return Err(Error::config(key, "this key cannot be grid-searched"));
            }
            let list: Vec<String> = value
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if list.is_empty() {
                return Err(Error::config(key, "grid list is empty"));
            }
            self.grid.insert(target.to_string(), list);
            return Ok(());
        }
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::config(key, "unknown setting")),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not a known setting"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::config(key, format!("cannot parse `{raw}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(Error::config(key, format!("expected a boolean, got `{other}`"))),
        }
    }

    /// A path setting, `None` when empty.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    /// A path setting that must be present and exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let path = self
            .path(key)
            .ok_or_else(|| Error::config(key, "required for this command"))?;
        if !path.exists() {
            return Err(Error::config(key, format!("{} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::config(key, format!("cannot parse list entry `{v}`")))
            })
            .collect()
    }

    pub fn grid(&self) -> &BTreeMap<String, Vec<String>> {
        &self.grid
    }

    /// One settings value per point of the grid, in lexicographic key order
    /// with the last key varying fastest. Without a grid this is `[self]`.
    pub fn expand_grid(&self) -> Result<Vec<Settings>> {
        let mut out = vec![Settings {
            values: self.values.clone(),
            grid: BTreeMap::new(),
        }];
        for (key, options) in &self.grid {
            let mut next = Vec::with_capacity(out.len() * options.len());
            for base in &out {
                for v in options {
                    let mut s = base.clone();
                    s.set(key, v)?;
                    next.push(s);
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// The resolved values as a map, for manifests.
    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// `key = value` lines that reload to the same settings.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in &self.grid {
            out.push_str(&format!("grid.{k} = {}\n", v.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nk = 20\nseed=4\n").unwrap();
        let s = Settings::resolve(Some(f.path()), &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(s.get::<usize>("k").unwrap(), 20);
        assert_eq!(s.get::<u64>("seed").unwrap(), 9);
        assert_eq!(s.get::<f64>("lambda_y").unwrap(), 1.0);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = Settings::resolve(None, &[("kk".into(), "1".into())]).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "kk"));
        assert_eq!(err.exit_code(), 2);
        assert!(Settings::default().set("grid.seed", "1,2").is_err());
    }

    #[test]
    fn bad_value_names_field() {
        let s = Settings::resolve(None, &[("k".into(), "ten".into())]).unwrap();
        assert!(matches!(s.get::<usize>("k"), Err(Error::Config { field, .. }) if field == "k"));
    }

    #[test]
    fn grid_expansion_order() {
        let mut s = Settings::default();
        s.set("grid.k", "5,10").unwrap();
        s.set("grid.lambda_theta", "0.1, 1").unwrap();
        let pts: Vec<(String, String)> = s
            .expand_grid()
            .unwrap()
            .iter()
            .map(|p| (p.raw("k").to_string(), p.raw("lambda_theta").to_string()))
            .collect();
        assert_eq!(
            pts,
            [("5", "0.1"), ("5", "1"), ("10", "0.1"), ("10", "1")]
                .map(|(a, b)| (a.to_string(), b.to_string()))
        );
    }

    #[test]
    fn file_text_round_trips() {
        let mut s = Settings::default();
        s.set("variant", "wmf").unwrap();
        s.set("grid.c0", "0.01,0.1").unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(s.to_file_text().as_bytes()).unwrap();
        assert_eq!(Settings::resolve(Some(f.path()), &[]).unwrap(), s);
    }
}
