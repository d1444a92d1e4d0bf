//! Plain-text parameter checkpoints.
//!
//! ```text
//! msac-checkpoint 1
//! meta <key>=<value>            (zero or more)
//! section <name> <n_entries>
//! entry <name> <rows> <cols>
//! <rows*cols whitespace-separated f64 values, row-major>
//! ...
//! end
//! ```
//!
//! Values use Rust's shortest round-trip formatting, so a write/read cycle is
//! bit-exact. Only parameter values are stored; gradients and optimizer
//! statistics are not.

use std::fs;
use std::path::Path;

use crate::autodiff::{ParamSet, RmsPropConfig, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "msac-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub sections: Vec<(String, ParamSet)>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Result<&ParamSet> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k}={v}\n"));
        }
        for (name, params) in &self.sections {
            out.push_str(&format!("section {name} {}\n", params.len()));
            for (i, entry) in params.names().iter().enumerate() {
                let t = params.value(i);
                out.push_str(&format!("entry {entry} {} {}\n", t.rows(), t.cols()));
                let line: Vec<String> = t.data().iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut hp = header.split_whitespace();
        if hp.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("bad header `{header}`")));
        }
        let version: u32 = hp
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }

        let mut ckpt = Checkpoint::default();
        let mut ended = false;
        while let Some(line) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let rest = line["meta".len()..].trim_start();
                    let (k, v) = rest
                        .split_once('=')
                        .ok_or_else(|| bad(format!("bad meta line `{line}`")))?;
                    ckpt.meta.push((k.to_string(), v.to_string()));
                }
                Some("section") => {
                    let name = parts.next().ok_or_else(|| bad("section without name".into()))?;
                    let count: usize = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(format!("bad section line `{line}`")))?;
                    let mut params = ParamSet::new(0.0, RmsPropConfig::default());
                    for _ in 0..count {
                        let head = lines.next().ok_or_else(|| bad("truncated section".into()))?;
                        let mut hp = head.split_whitespace();
                        if hp.next() != Some("entry") {
                            return Err(bad(format!("expected entry, got `{head}`")));
                        }
                        let entry = hp.next().ok_or_else(|| bad("entry without name".into()))?;
                        let dims: Vec<usize> = hp.map(|d| d.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad(format!("bad dims in `{head}`")))?;
                        let [rows, cols] = dims[..] else {
                            return Err(bad(format!("bad dims in `{head}`")));
                        };
                        let body = lines.next().ok_or_else(|| bad("missing values".into()))?;
                        let data: Vec<f64> = body
                            .split_whitespace()
                            .map(|v| v.parse())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad(format!("bad value in `{entry}`")))?;
                        if data.len() != rows * cols {
                            return Err(bad(format!("`{entry}` has {} values, expected {}", data.len(), rows * cols)));
                        }
                        params.insert(entry, Tensor::from_vec(rows, cols, data))?;
                    }
                    ckpt.sections.push((name.to_string(), params));
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                Some(other) => return Err(bad(format!("unexpected token `{other}`"))),
                None => {}
            }
        }
        if !ended {
            return Err(bad("missing `end`".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
