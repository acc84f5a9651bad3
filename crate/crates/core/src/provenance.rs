//! Provenance header written as the first line of every artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL: &str = "dualbook";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the resolved configuration serialized as JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash(config)?,
            seed,
        })
    }

    /// `# {json}` without a trailing newline.
    pub fn line(&self) -> String {
        format!("# {}", serde_json::to_string(self).expect("provenance serializes"))
    }

    pub fn parse(line: &str) -> Result<Self> {
        let body = line
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::invalid("provenance line must start with '#'"))?;
        let p: Provenance = serde_json::from_str(body.trim())?;
        if p.tool != TOOL {
            return Err(Error::invalid(format!("artifact written by '{}'", p.tool)));
        }
        Ok(p)
    }

    /// Provenance from the first line of an artifact's text.
    pub fn from_artifact(text: &str) -> Result<Self> {
        Self::parse(text.lines().next().unwrap_or(""))
    }
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    Ok(bytes_hash(&serde_json::to_vec(config)?))
}

/// Lowercase hex SHA-256.
pub fn bytes_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Prefixes `body` with the provenance line.
pub fn stamp(p: &Provenance, body: &[u8]) -> Vec<u8> {
    let mut out = p.line().into_bytes();
    out.push(b'\n');
    out.extend_from_slice(body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let p = Provenance::new("fit", &("a", 3), Some(7)).unwrap();
        let line = p.line();
        assert!(line.starts_with("# {\"tool\":\"dualbook\""));
        assert_eq!(Provenance::parse(&line).unwrap(), p);
        assert_eq!(p.config_hash.len(), 64);
    }

    #[test]
    fn hash_tracks_config() {
        assert_eq!(config_hash(&1).unwrap(), config_hash(&1).unwrap());
        assert_ne!(config_hash(&1).unwrap(), config_hash(&2).unwrap());
    }

    #[test]
    fn stamped_artifact_parses() {
        let p = Provenance::new("synth", &0, None).unwrap();
        let text = String::from_utf8(stamp(&p, b"x\n")).unwrap();
        assert_eq!(Provenance::from_artifact(&text).unwrap(), p);
    }
}
