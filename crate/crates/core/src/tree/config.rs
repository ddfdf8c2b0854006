use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PathSpec, TreeError};
use crate::query::Automation;

/// Tree definition as written in YAML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub node_sources: Vec<String>,
    pub nodes: Vec<NodeConfig>,
    pub root: String,
    #[serde(default)]
    pub flags: TreeFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub name: String,
    #[serde(rename = "type")]
    pub node_type: String,
    #[serde(default)]
    pub children: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub init_args: serde_json::Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFlags {
    #[serde(default)]
    pub automation: Automation,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_dir: Option<PathBuf>,
}

fn default_log_level() -> String {
    "info".into()
}

impl Default for TreeFlags {
    fn default() -> Self {
        TreeFlags {
            automation: Automation::Automatic,
            log_level: default_log_level(),
            log_dir: None,
        }
    }
}

impl TreeConfig {
    pub fn from_yaml(text: &str) -> Result<Self, TreeError> {
        serde_yaml::from_str(text).map_err(|e| TreeError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TreeError> {
        let text = std::fs::read_to_string(path).map_err(|e| TreeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("tree config serializes")
    }
}

/// A tree together with a path fixing every choice, as emitted by the
/// scalability assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedConfig {
    pub tree: TreeConfig,
    pub path: PathSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RecommendedConfig {
    pub fn from_yaml(text: &str) -> Result<Self, TreeError> {
        serde_yaml::from_str(text).map_err(|e| TreeError::Config(e.to_string()))
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("recommended config serializes")
    }
}
