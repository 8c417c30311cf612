//! Flat key-value experiment config files.
//!
//! The format mirrors every CLI flag: `key = value` lines, optional
//! `[section]` headers (cosmetic; keys stay flat), `#` comments, and
//! optional double quotes around values. Flags given on the command line
//! override file values.
//!
//! ```text
//! [experiment]
//! preset = mlp-tiny
//! m = 24,48,96
//! repeats = 20
//! seed = 7
//! estimator = hutchpp,rhutch
//! probes = rademacher
//! split = 0.3333
//! out = out/mlp-tiny
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{HarnessError, Result};

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config_str(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(HarnessError::Config(format!(
                    "line {}: unterminated section header `{line}`",
                    lineno + 1
                )));
            }
            continue; // sections are allowed but keys remain flat
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(HarnessError::Config(format!(
                "line {}: expected `key = value`, found `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let mut value = value.trim().to_string();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = value[1..value.len() - 1].to_string();
        }
        if key.is_empty() {
            return Err(HarnessError::Config(format!(
                "line {}: empty key",
                lineno + 1
            )));
        }
        map.insert(key, value);
    }
    Ok(map)
}

pub fn load_config(path: &Path) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Typed getters; CLI values win over file values via `or`.
pub fn get_usize(map: &ConfigMap, key: &str) -> Result<Option<usize>> {
    map.get(key)
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| HarnessError::Config(format!("key `{key}`: `{v}` is not an integer")))
        })
        .transpose()
}

pub fn get_u64(map: &ConfigMap, key: &str) -> Result<Option<u64>> {
    map.get(key)
        .map(|v| {
            v.parse::<u64>()
                .map_err(|_| HarnessError::Config(format!("key `{key}`: `{v}` is not a u64")))
        })
        .transpose()
}

pub fn get_f64(map: &ConfigMap, key: &str) -> Result<Option<f64>> {
    map.get(key)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| HarnessError::Config(format!("key `{key}`: `{v}` is not a number")))
        })
        .transpose()
}

pub fn get_bool(map: &ConfigMap, key: &str) -> Result<Option<bool>> {
    map.get(key)
        .map(|v| match v.as_str() {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(HarnessError::Config(format!(
                "key `{key}`: `{other}` is not a boolean"
            ))),
        })
        .transpose()
}

pub fn get_usize_list(map: &ConfigMap, key: &str) -> Result<Option<Vec<usize>>> {
    map.get(key)
        .map(|v| {
            v.split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|_| {
                        HarnessError::Config(format!("key `{key}`: `{tok}` is not an integer"))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()
}
