//! `key = value` configuration files.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub const DEFAULT_PORT: u16 = 30000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Splits a `key = value` document into ordered pairs. `#` starts a comment
/// line; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            reason: "expected `key = value`".into(),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolConfig {
    pub listen_port: u16,
    pub target_hosts: Vec<String>,
    pub pool_size: usize,
    pub exact_duration_mode: bool,
    pub companion_commands: Vec<String>,
    pub results_dir: PathBuf,
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            listen_port: DEFAULT_PORT,
            target_hosts: Vec::new(),
            pool_size: 8,
            exact_duration_mode: false,
            companion_commands: Vec::new(),
            results_dir: PathBuf::from("results"),
        }
    }
}

impl ToolConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ToolConfig::default();
        for (_, key, value) in parse_pairs(text)? {
            let bad = |reason: &str| ConfigError::BadValue {
                key: key.clone(),
                reason: reason.to_string(),
            };
            match key.as_str() {
                "listen_port" => cfg.listen_port = value.parse().map_err(|_| bad("not a TCP port"))?,
                "target_hosts" => cfg.target_hosts = split_list(&value),
                "pool_size" => {
                    cfg.pool_size = value.parse().map_err(|_| bad("not a positive integer"))?;
                    if cfg.pool_size == 0 {
                        return Err(bad("must be at least 1"));
                    }
                }
                "exact_duration_mode" => {
                    cfg.exact_duration_mode = crate::task::parse_bool(&value).ok_or_else(|| bad("expected true or false"))?
                }
                "companion_commands" => cfg.companion_commands = split_list(&value),
                "results_dir" => cfg.results_dir = PathBuf::from(value),
                _ => return Err(ConfigError::UnknownKey(key)),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

/// Reads a hosts file: one `host:port` per line, `#` comments allowed.
pub fn parse_hosts(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let cfg = ToolConfig::parse(
            "# engine\nlisten_port = 31000\ntarget_hosts = a:1, b:2\npool_size=4\nexact_duration_mode = True\ncompanion_commands = ldmsd -x, echo hi\nresults_dir = /tmp/r\n",
        )
        .unwrap();
        assert_eq!(cfg.listen_port, 31000);
        assert_eq!(cfg.target_hosts, vec!["a:1", "b:2"]);
        assert_eq!(cfg.pool_size, 4);
        assert!(cfg.exact_duration_mode);
        assert_eq!(cfg.companion_commands, vec!["ldmsd -x", "echo hi"]);
        assert_eq!(cfg.results_dir, PathBuf::from("/tmp/r"));
    }

    #[test]
    fn defaults_and_errors() {
        assert_eq!(ToolConfig::parse("").unwrap(), ToolConfig::default());
        assert_eq!(
            ToolConfig::parse("colour = blue").unwrap_err(),
            ConfigError::UnknownKey("colour".into())
        );
        assert!(matches!(ToolConfig::parse("pool_size = 0"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(ToolConfig::parse("just text"), Err(ConfigError::Syntax { line: 1, .. })));
        let msg = ToolConfig::parse("\nfoo = 1").unwrap_err().to_string();
        assert!(msg.contains("foo"));
    }

    #[test]
    fn hosts_file() {
        assert_eq!(parse_hosts("# targets\nnode1:30000\n\n node2:30000 \n"), vec!["node1:30000", "node2:30000"]);
    }
}
