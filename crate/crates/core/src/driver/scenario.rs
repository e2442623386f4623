use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::{builtin_manifest, AppManifest};
use crate::dhcpd::AddressPool;
use crate::router_dpi::{AnomalyConfig, PolicyTable, RouterConfig, SignatureSet, DEFAULT_MAX_INSPECT};

fn default_intent_delay() -> u64 {
    5000
}
fn default_poll_interval() -> u64 {
    1000
}
fn default_max_inspect() -> u32 {
    DEFAULT_MAX_INSPECT
}
fn default_link_latency() -> u64 {
    1
}
fn default_boot_stagger() -> u64 {
    100
}

/// Extra traffic-model parameters for one device, keyed like
/// [`Scenario::model_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceOverride {
    /// 1-based device index.
    pub device: u32,
    pub model_params: BTreeMap<String, serde_json::Value>,
}

/// A declarative test plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub device_count: u32,
    /// Shipped manifest names (`skype`, `facebook`, `twitter`, `angrybirds`,
    /// `unknown`) or paths to manifest files.
    pub apps: Vec<String>,
    pub duration_ms: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_intent_delay")]
    pub intent_delay_ms: u64,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_ms: u64,
    #[serde(default)]
    pub pool: AddressPool,
    /// Signature rule file; the shipped rules when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signatures: Option<PathBuf>,
    /// Policy file; allow-everything when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<PathBuf>,
    #[serde(default)]
    pub anomaly: AnomalyConfig,
    #[serde(default = "default_max_inspect")]
    pub max_inspect: u32,
    /// Per-app parameter overrides merged over the manifest's own, keyed by
    /// the entry in `apps`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub model_params: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub device_overrides: Vec<DeviceOverride>,
    #[serde(default = "default_link_latency")]
    pub link_latency_ms: u64,
    #[serde(default = "default_boot_stagger")]
    pub boot_stagger_ms: u64,
    /// Where the DHCP server keeps its leases; a private temporary file
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leases_path: Option<PathBuf>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    /// `field` is the dotted path of the offending value.
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.into(), message: message.into() }
    }

    /// The offending field path, when the error is about one.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            ConfigError::Field { field, .. } => Some(field),
            ConfigError::Io { .. } => None,
        }
    }
}

impl Scenario {
    /// A scenario with every optional field at its default.
    pub fn new(device_count: u32, apps: &[&str], duration_ms: u64) -> Self {
        let json = serde_json::json!({ "device_count": device_count, "apps": apps, "duration_ms": duration_ms });
        serde_json::from_value(json).expect("minimal scenario deserializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "scenario".to_string() } else { path };
            ConfigError::field(field, e.into_inner().to_string())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let mut scenario = Self::from_json_str(&text)?;
        scenario.base_dir = path.parent().map(Path::to_path_buf);
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Invariant checks that need no file access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.device_count == 0 {
            return Err(ConfigError::field("device_count", "must be at least 1"));
        }
        if self.device_count > u32::from(u16::MAX) {
            return Err(ConfigError::field("device_count", "must be at most 65535"));
        }
        if self.poll_interval_ms == 0 {
            return Err(ConfigError::field("poll_interval_ms", "must be positive"));
        }
        if !self.apps.is_empty() && self.intent_delay_ms == 0 {
            return Err(ConfigError::field("intent_delay_ms", "must be positive"));
        }
        let cycle = self.apps.len() as u64 * self.intent_delay_ms;
        if self.duration_ms == 0 || self.duration_ms < cycle {
            return Err(ConfigError::field(
                "duration_ms",
                format!("{} ms is shorter than one app cycle ({} apps x {} ms)", self.duration_ms, self.apps.len(), self.intent_delay_ms),
            ));
        }
        if self.max_inspect == 0 {
            return Err(ConfigError::field("max_inspect", "must be at least 1"));
        }
        if self.anomaly.window_ms == 0 {
            return Err(ConfigError::field("anomaly.window_ms", "must be positive"));
        }
        self.pool.validate().map_err(|e| ConfigError::field("pool", e.to_string()))?;
        for key in self.model_params.keys() {
            if !self.apps.contains(key) {
                return Err(ConfigError::field(format!("model_params.{key}"), "not an entry of `apps`"));
            }
        }
        for (i, o) in self.device_overrides.iter().enumerate() {
            if o.device == 0 || o.device > self.device_count {
                return Err(ConfigError::field(format!("device_overrides[{i}].device"), "no such device"));
            }
            if let Some(key) = o.model_params.keys().find(|k| !self.apps.contains(k)) {
                return Err(ConfigError::field(
                    format!("device_overrides[{i}].model_params.{key}"),
                    "not an entry of `apps`",
                ));
            }
        }
        Ok(())
    }

    fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Loads every referenced file and produces the ready-to-run plan.
    pub fn resolve(&self) -> Result<Plan, ConfigError> {
        self.validate()?;
        let mut apps = Vec::new();
        for (i, reference) in self.apps.iter().enumerate() {
            let field = format!("apps[{i}]");
            let manifest = match builtin_manifest(reference) {
                Some(m) => m,
                None => {
                    let text = read(&self.resolve_path(Path::new(reference)))
                        .map_err(|e| ConfigError::field(&field, e.to_string()))?;
                    AppManifest::from_json(&text).map_err(|e| ConfigError::field(&field, e.to_string()))?
                }
            };
            let manifest = match self.model_params.get(reference) {
                Some(extra) => merge_params(&manifest, extra)
                    .map_err(|m| ConfigError::field(format!("model_params.{reference}"), m))?,
                None => manifest,
            };
            if apps.iter().any(|a: &AppManifest| a.package == manifest.package) {
                return Err(ConfigError::field(field, format!("package {} listed twice", manifest.package)));
            }
            apps.push(manifest);
        }

        let mut per_device = BTreeMap::new();
        for (i, o) in self.device_overrides.iter().enumerate() {
            let mut set = apps.clone();
            for (reference, extra) in &o.model_params {
                let at = self.apps.iter().position(|a| a == reference).expect("validated");
                set[at] = merge_params(&set[at], extra)
                    .map_err(|m| ConfigError::field(format!("device_overrides[{i}].model_params.{reference}"), m))?;
            }
            per_device.insert(o.device, set);
        }

        let signatures = match &self.signatures {
            None => SignatureSet::builtin(),
            Some(p) => {
                let path = self.resolve_path(p);
                SignatureSet::parse(&read(&path)?).map_err(|e| ConfigError::field("signatures", e.to_string()))?
            }
        };
        let policies = match &self.policies {
            None => PolicyTable::default(),
            Some(p) => {
                let path = self.resolve_path(p);
                PolicyTable::parse(&read(&path)?).map_err(|e| ConfigError::field("policies", e.to_string()))?
            }
        };
        Ok(Plan {
            scenario: self.clone(),
            apps,
            per_device,
            router: RouterConfig { signatures, policies, max_inspect: self.max_inspect, anomaly: self.anomaly.clone() },
            leases_path: self.leases_path.as_ref().map(|p| self.resolve_path(p)),
        })
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })
}

fn merge_params(manifest: &AppManifest, extra: &serde_json::Value) -> Result<AppManifest, String> {
    let serde_json::Value::Object(extra) = extra else {
        return Err("must be an object".into());
    };
    let mut m = manifest.clone();
    let mut params = match &m.traffic_model.params {
        serde_json::Value::Object(p) => p.clone(),
        _ => serde_json::Map::new(),
    };
    for (k, v) in extra {
        params.insert(k.clone(), v.clone());
    }
    m.traffic_model.params = serde_json::Value::Object(params);
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

/// A validated scenario with every file loaded.
#[derive(Debug, Clone)]
pub struct Plan {
    pub scenario: Scenario,
    pub apps: Vec<AppManifest>,
    /// Device index → app set with that device's overrides applied.
    pub per_device: BTreeMap<u32, Vec<AppManifest>>,
    pub router: RouterConfig,
    pub leases_path: Option<PathBuf>,
}

impl Plan {
    pub fn apps_for(&self, device_index: u32) -> &[AppManifest] {
        self.per_device.get(&device_index).unwrap_or(&self.apps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_json_str(r#"{"device_count": 2, "apps": ["skype"], "duration_ms": 10000}"#).unwrap();
        assert_eq!(s.poll_interval_ms, 1000);
        assert_eq!(s.intent_delay_ms, 5000);
        assert_eq!(s.seed, 0);
        assert_eq!(s.max_inspect, 8);
        assert_eq!(s.pool, AddressPool::default());
        assert_eq!(s, Scenario::new(2, &["skype"], 10000));
    }

    #[test]
    fn zero_devices_names_the_field() {
        let e = Scenario::from_json_str(r#"{"device_count": 0, "apps": [], "duration_ms": 1}"#).unwrap_err();
        assert_eq!(e.field_path(), Some("device_count"));
    }

    #[test]
    fn unknown_key_is_named() {
        let e = Scenario::from_json_str(r#"{"device_count": 1, "apps": [], "duration_ms": 1, "devcie_count": 3}"#)
            .unwrap_err();
        assert!(e.to_string().contains("devcie_count"), "{e}");
    }

    #[test]
    fn nested_errors_carry_a_path() {
        let e = Scenario::from_json_str(r#"{"device_count": 1, "apps": [], "duration_ms": 1, "anomaly": {"window_ms": "x"}}"#)
            .unwrap_err();
        assert_eq!(e.field_path(), Some("anomaly.window_ms"));
        let e = Scenario::from_json_str(r#"{"apps": [], "duration_ms": 1}"#).unwrap_err();
        assert!(e.to_string().contains("device_count"), "{e}");
    }

    #[test]
    fn duration_must_cover_one_cycle() {
        let e = Scenario::from_json_str(r#"{"device_count": 1, "apps": ["skype", "facebook"], "duration_ms": 9999}"#)
            .unwrap_err();
        assert_eq!(e.field_path(), Some("duration_ms"));
        assert!(Scenario::from_json_str(r#"{"device_count": 1, "apps": ["skype", "facebook"], "duration_ms": 10000}"#).is_ok());
    }

    #[test]
    fn resolve_merges_model_params() {
        let mut s = Scenario::new(3, &["unknown"], 10000);
        s.model_params.insert("unknown".into(), serde_json::json!({"interval_ms": 50}));
        s.device_overrides.push(DeviceOverride {
            device: 2,
            model_params: [("unknown".to_string(), serde_json::json!({"interval_ms": 5}))].into(),
        });
        let plan = s.resolve().unwrap();
        assert_eq!(plan.apps_for(1)[0].traffic_model.params["interval_ms"], 50);
        assert_eq!(plan.apps_for(2)[0].traffic_model.params["interval_ms"], 5);
        s.model_params.insert("unknown".into(), serde_json::json!({"bogus": 1}));
        assert_eq!(s.resolve().unwrap_err().field_path(), Some("model_params.unknown"));
    }

    #[test]
    fn missing_manifest_file_is_a_config_error() {
        let s = Scenario::new(1, &["no/such/manifest.json"], 10000);
        assert_eq!(s.resolve().unwrap_err().field_path(), Some("apps[0]"));
    }
}
