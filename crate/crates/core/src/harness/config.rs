use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::algos::TrainConfig;
use crate::error::{Error, Result};

/// Parses flat `key=value` text. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn apply_entries(cfg: &mut TrainConfig, entries: &[(String, String)]) -> Result<()> {
    for (k, v) in entries {
        cfg.set(k, v)?;
    }
    Ok(())
}

pub fn load_config_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    apply_entries(cfg, &parse_key_values(&text)?)
}

/// Everything needed to reproduce a run, plus when and with what build it started.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub started_at: u64,
    pub config: TrainConfig,
}

impl RunManifest {
    pub fn new(config: TrainConfig) -> Self {
        let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            config,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("version={}\nstarted_at={}\n", self.version, self.started_at);
        for (k, v) in self.config.entries() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut started_at = 0;
        let mut config = TrainConfig::default();
        for (k, v) in parse_key_values(text)? {
            match k.as_str() {
                "version" => version = Some(v),
                "started_at" => {
                    started_at = v.parse().map_err(|_| Error::Config(format!("bad started_at `{v}`")))?
                }
                _ => config.set(&k, &v)?,
            }
        }
        let version = version.ok_or_else(|| Error::Config("manifest has no version".into()))?;
        Ok(Self {
            version,
            started_at,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::Variant;

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let kv = parse_key_values("# header\n\nseed = 4 # trailing\nalgo=qmix\n").unwrap();
        assert_eq!(kv, vec![("seed".into(), "4".into()), ("algo".into(), "qmix".into())]);
        assert!(parse_key_values("seed 4").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(apply_entries(&mut cfg, &[("nonsense".into(), "1".into())]).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.set("algo", "mcsac").unwrap();
        cfg.set("seed", "17").unwrap();
        cfg.set("learning_rate", "0.00031").unwrap();
        let m = RunManifest::new(cfg);
        let back = RunManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config.algo, Variant::Mcsac);
    }
}
