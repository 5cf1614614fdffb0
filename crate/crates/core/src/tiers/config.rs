//! Node configuration files: UTF-8, one `key = value` per line, `#`
//! comments, unknown keys rejected.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use super::TierIdentity;
use crate::store::{StoreConfig, DEFAULT_LEASE_MS, DEFAULT_MAX_ATTEMPTS};

pub const NODE_ID: &str = "node.id";
pub const GMT_ADDRESS: &str = "gmt.address";
pub const DST_LISTEN: &str = "dst.listen";
pub const TIERS_INITIAL: &str = "tiers.initial";
pub const WORKLOAD_FILE: &str = "workload.file";
pub const WORKER_STAGES: &str = "worker.stages";
pub const LEASE_MS: &str = "lease.ms";
pub const ATTEMPTS_MAX: &str = "attempts.max";
pub const MANAGE_LISTEN: &str = "manage.listen";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid property {key}: {reason}")]
    InvalidProperty { key: String, reason: String },
    #[error("missing property {0}")]
    MissingProperty(String),
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::InvalidProperty {
            key: key.to_owned(),
            reason: reason.into(),
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::InvalidProperty { key, .. } | ConfigError::MissingProperty(key) => Some(key),
            ConfigError::Unreadable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Text,
    Address,
    TierList,
    Path,
    StageList,
    DurationMs,
    Count,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertySpec {
    pub key: &'static str,
    pub kind: PropertyKind,
    pub description: &'static str,
    pub default: Option<&'static str>,
    /// Tiers this property matters to.
    pub tiers: &'static [TierIdentity],
    /// Tiers that cannot start without it.
    pub required_for: &'static [TierIdentity],
}

use TierIdentity::{DGT, DST, DWT, GMT};

pub const SCHEMA: &[PropertySpec] = &[
    PropertySpec {
        key: NODE_ID,
        kind: PropertyKind::Text,
        description: "Unique node name; letters, digits, '.', '_' and '-'",
        default: None,
        tiers: &[DGT, DWT, DST, GMT],
        required_for: &[DGT, DWT, DST, GMT],
    },
    PropertySpec {
        key: GMT_ADDRESS,
        kind: PropertyKind::Address,
        description: "host:port of the GMT management API",
        default: None,
        tiers: &[DGT, DWT, DST],
        required_for: &[DGT, DWT, DST],
    },
    PropertySpec {
        key: DST_LISTEN,
        kind: PropertyKind::Address,
        description: "Listen address of the demand store",
        default: None,
        tiers: &[DST, GMT],
        required_for: &[DST, GMT],
    },
    PropertySpec {
        key: TIERS_INITIAL,
        kind: PropertyKind::TierList,
        description: "Comma-separated tiers started at bootstrap; repeat an identity for several instances",
        default: Some(""),
        tiers: &[DGT, DWT, DST, GMT],
        required_for: &[],
    },
    PropertySpec {
        key: WORKLOAD_FILE,
        kind: PropertyKind::Path,
        description: "TOML workload definition registered with the store",
        default: None,
        tiers: &[DGT, DWT, GMT],
        required_for: &[],
    },
    PropertySpec {
        key: WORKER_STAGES,
        kind: PropertyKind::StageList,
        description: "Comma-separated workload or workload/stage entries a worker serves; empty serves all",
        default: Some(""),
        tiers: &[DWT],
        required_for: &[],
    },
    PropertySpec {
        key: LEASE_MS,
        kind: PropertyKind::DurationMs,
        description: "Lease granted to a withdrawn demand, in milliseconds",
        default: Some("5000"),
        tiers: &[DST, GMT],
        required_for: &[],
    },
    PropertySpec {
        key: ATTEMPTS_MAX,
        kind: PropertyKind::Count,
        description: "Withdrawals allowed before a demand fails",
        default: Some("3"),
        tiers: &[DST, GMT],
        required_for: &[],
    },
    PropertySpec {
        key: MANAGE_LISTEN,
        kind: PropertyKind::Address,
        description: "Listen address of the management API",
        default: None,
        tiers: &[DGT, DWT, DST, GMT],
        required_for: &[GMT],
    },
];

/// Properties relevant to one tier.
pub fn schema_for(tier: TierIdentity) -> Vec<&'static PropertySpec> {
    SCHEMA.iter().filter(|p| p.tiers.contains(&tier)).collect()
}

/// A validated node configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfiguration {
    properties: IndexMap<String, String>,
}

impl NodeConfiguration {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut properties = IndexMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ConfigError::invalid(&format!("line {}", n + 1), "expected `key = value`")
            })?;
            let key = k.trim();
            if properties.insert(key.to_owned(), v.trim().to_owned()).is_some() {
                return Err(ConfigError::invalid(key, "given more than once"));
            }
        }
        Self::from_map(properties)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, ConfigError> {
        Self::from_map(pairs.into_iter().map(|(k, v)| (k.to_owned(), v.to_owned())).collect())
    }

    fn from_map(properties: IndexMap<String, String>) -> Result<Self, ConfigError> {
        let cfg = NodeConfiguration { properties };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every property against the schema, then the cross-key rules.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, value) in &self.properties {
            let spec = SCHEMA
                .iter()
                .find(|s| s.key == key)
                .ok_or_else(|| ConfigError::invalid(key, "unknown property"))?;
            check_value(spec, value)?;
        }
        if self.get(NODE_ID).is_none() {
            return Err(ConfigError::MissingProperty(NODE_ID.into()));
        }
        let tiers = self.initial_tiers();
        for spec in SCHEMA {
            let needed = if tiers.contains(&GMT) {
                spec.required_for.contains(&GMT)
            } else {
                tiers.iter().any(|t| spec.required_for.contains(t)) || spec.key == GMT_ADDRESS
            };
            if needed && self.get(spec.key).is_none() {
                return Err(ConfigError::MissingProperty(spec.key.into()));
            }
        }
        if let Some(path) = self.get(WORKLOAD_FILE) {
            super::workload::WorkloadDefinition::load(Path::new(path))
                .map_err(|e| ConfigError::invalid(WORKLOAD_FILE, e.to_string()))?;
        }
        Ok(())
    }

    /// The raw value, `None` when absent or empty.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.properties.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn properties(&self) -> impl Iterator<Item = (&str, &str)> {
        self.properties.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn node_id(&self) -> &str {
        self.get(NODE_ID).expect("validated")
    }

    pub fn initial_tiers(&self) -> Vec<TierIdentity> {
        list(self.get(TIERS_INITIAL).unwrap_or(""))
            .map(|t| t.parse().expect("validated"))
            .collect()
    }

    pub fn is_gmt(&self) -> bool {
        self.initial_tiers().contains(&GMT)
    }

    pub fn gmt_address(&self) -> Option<&str> {
        self.get(GMT_ADDRESS)
    }

    pub fn dst_listen(&self) -> Option<&str> {
        self.get(DST_LISTEN)
    }

    pub fn manage_listen(&self) -> Option<&str> {
        self.get(MANAGE_LISTEN)
    }

    pub fn workload_file(&self) -> Option<PathBuf> {
        self.get(WORKLOAD_FILE).map(PathBuf::from)
    }

    pub fn worker_stages(&self) -> Vec<String> {
        list(self.get(WORKER_STAGES).unwrap_or("")).map(str::to_owned).collect()
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            lease_ms: self.get(LEASE_MS).map_or(DEFAULT_LEASE_MS, |v| v.parse().expect("validated")),
            max_attempts: self
                .get(ATTEMPTS_MAX)
                .map_or(DEFAULT_MAX_ATTEMPTS, |v| v.parse().expect("validated")),
        }
    }
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

fn check_value(spec: &PropertySpec, value: &str) -> Result<(), ConfigError> {
    let key = spec.key;
    if value.is_empty() {
        return if spec.default.is_some() || spec.required_for.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::invalid(key, "empty value"))
        };
    }
    match spec.kind {
        PropertyKind::Text => {
            if !value.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-')) {
                return Err(ConfigError::invalid(key, "only letters, digits, '.', '_' and '-' allowed"));
            }
        }
        PropertyKind::Address => check_address(value).map_err(|r| ConfigError::invalid(key, r))?,
        PropertyKind::TierList => {
            for t in list(value) {
                t.parse::<TierIdentity>().map_err(|r| ConfigError::invalid(key, r))?;
            }
        }
        PropertyKind::Path => {}
        PropertyKind::StageList => {
            for entry in list(value) {
                let ok = match entry.split_once('/') {
                    Some((w, s)) => !w.is_empty() && !s.is_empty() && !s.contains('/'),
                    None => true,
                };
                if !ok {
                    return Err(ConfigError::invalid(key, format!("bad entry {entry:?}")));
                }
            }
        }
        PropertyKind::DurationMs => match value.parse::<u64>() {
            Ok(v) if v > 0 => {}
            _ => return Err(ConfigError::invalid(key, "not-a-duration (positive milliseconds expected)")),
        },
        PropertyKind::Count => match value.parse::<u32>() {
            Ok(v) if v > 0 => {}
            _ => return Err(ConfigError::invalid(key, "not-a-count (positive integer expected)")),
        },
    }
    Ok(())
}

/// Accepts `ip:port` or `hostname:port`.
fn check_address(value: &str) -> Result<(), String> {
    if value.parse::<SocketAddr>().is_ok() {
        return Ok(());
    }
    let (host, port) = value.rsplit_once(':').ok_or("expected host:port")?;
    port.parse::<u16>().map_err(|_| format!("bad port {port:?}"))?;
    if host.is_empty() || !host.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-')) {
        return Err(format!("bad host {host:?}"));
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<NodeConfiguration, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    NodeConfiguration::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GMT_CFG: &str = "# management node\n\
        node.id = gmt\n\
        tiers.initial = GMT, DGT\n\
        dst.listen = 127.0.0.1:7700\n\
        manage.listen = 127.0.0.1:7800\n";

    #[test]
    fn parses_gmt_config() {
        let c = NodeConfiguration::parse(GMT_CFG).unwrap();
        assert!(c.is_gmt());
        assert_eq!(c.node_id(), "gmt");
        assert_eq!(c.initial_tiers(), vec![GMT, DGT]);
        assert_eq!(c.store_config(), StoreConfig::default());
    }

    #[test]
    fn bad_lease_names_the_key() {
        let err = NodeConfiguration::parse(&format!("{GMT_CFG}lease.ms = banana\n")).unwrap_err();
        assert_eq!(err.key(), Some("lease.ms"));
        assert!(err.to_string().contains("not-a-duration"));
    }

    #[test]
    fn missing_node_id() {
        let err = NodeConfiguration::parse("tiers.initial = DWT\ngmt.address = 127.0.0.1:1\n").unwrap_err();
        assert_eq!(err, ConfigError::MissingProperty("node.id".into()));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = NodeConfiguration::parse(&format!("{GMT_CFG}colour = blue\n")).unwrap_err();
        assert_eq!(err.key(), Some("colour"));
    }

    #[test]
    fn worker_needs_gmt_address() {
        let err = NodeConfiguration::parse("node.id = w1\ntiers.initial = DWT\n").unwrap_err();
        assert_eq!(err, ConfigError::MissingProperty("gmt.address".into()));
    }

    #[test]
    fn gmt_needs_listeners() {
        let err = NodeConfiguration::parse("node.id = g\ntiers.initial = GMT\nmanage.listen = 127.0.0.1:1\n").unwrap_err();
        assert_eq!(err, ConfigError::MissingProperty("dst.listen".into()));
    }

    #[test]
    fn value_checks() {
        for (k, v) in [
            ("attempts.max", "0"),
            ("tiers.initial", "DGT,XYZ"),
            ("dst.listen", "nope"),
            ("worker.stages", "a/b/c"),
            ("node.id", "has space"),
        ] {
            let text = format!("node.id = g\ntiers.initial = GMT\ndst.listen = 127.0.0.1:1\nmanage.listen = 127.0.0.1:2\n{k} = {v}\n");
            let text = text.replacen("node.id = g\n", if k == "node.id" { "" } else { "node.id = g\n" }, 1);
            let err = NodeConfiguration::parse(&text).unwrap_err();
            assert_eq!(err.key(), Some(k), "{k} = {v}");
        }
    }

    #[test]
    fn schema_subsets() {
        let dwt: Vec<_> = schema_for(DWT).iter().map(|p| p.key).collect();
        assert!(dwt.contains(&WORKER_STAGES));
        assert!(!dwt.contains(&DST_LISTEN));
        assert!(schema_for(GMT).iter().any(|p| p.key == MANAGE_LISTEN));
    }
}
