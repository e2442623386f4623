use serde::{Deserialize, Serialize};

use crate::appmodels::{ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivitySpec {
    pub name: String,
    #[serde(default)]
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficModelSpec {
    pub model: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// What `install` ships to a phone: identity, activities and the traffic
/// model its launch activity runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppManifest {
    pub package: String,
    pub apk_name: String,
    pub version: String,
    pub activities: Vec<ActivitySpec>,
    pub launch_activity: String,
    pub traffic_model: TrafficModelSpec,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest is not valid JSON: {0}")]
    Json(String),
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl AppManifest {
    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let m: AppManifest = serde_json::from_str(text).map_err(|e| ManifestError::Json(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let invalid = |s: String| Err(ManifestError::Invalid(s));
        let pkg_ok = self.package.contains('.')
            && !self.package.starts_with('.')
            && !self.package.ends_with('.')
            && self.package.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_');
        if !pkg_ok {
            return invalid(format!("package `{}` is not a reverse-dns name", self.package));
        }
        if self.apk_name.is_empty() || self.apk_name.chars().any(char::is_whitespace) {
            return invalid(format!("apk_name `{}` must be a single token", self.apk_name));
        }
        if self.activities.iter().any(|a| a.name.is_empty() || a.name.contains(['/', ' '])) {
            return invalid("activity names must be non-empty and contain no `/` or spaces".into());
        }
        if self.activity(&self.launch_activity).is_none() {
            return invalid(format!("launch_activity `{}` is not declared", self.launch_activity));
        }
        self.model_params()?;
        Ok(())
    }

    pub fn activity(&self, name: &str) -> Option<&ActivitySpec> {
        self.activities.iter().find(|a| a.name == name)
    }

    /// First activity accepting `action`.
    pub fn activity_for_action(&self, action: &str) -> Option<&ActivitySpec> {
        self.activities.iter().find(|a| a.actions.iter().any(|x| x == action))
    }

    pub fn model_params(&self) -> Result<ModelParams, ModelError> {
        ModelParams::from_json(&self.traffic_model.model, &self.traffic_model.params)
    }
}

const BUILTIN: &[(&str, &str)] = &[
    ("skype", include_str!("../../corpus/manifests/skype.json")),
    ("facebook", include_str!("../../corpus/manifests/facebook.json")),
    ("twitter", include_str!("../../corpus/manifests/twitter.json")),
    ("angrybirds", include_str!("../../corpus/manifests/angrybirds.json")),
    ("unknown", include_str!("../../corpus/manifests/unknown.json")),
];

/// Names of the shipped manifests.
pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// A shipped manifest by short name (`skype`, `facebook`, `twitter`,
/// `angrybirds`, `unknown`).
pub fn builtin_manifest(name: &str) -> Option<AppManifest> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| AppManifest::from_json(text).expect("shipped manifest is valid"))
}
