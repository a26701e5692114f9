use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use super::{SchedulerError, SensitivityClass};

const BUILTIN: &str = include_str!("../../data/labels.toml");

/// Maps data-class labels to sensitivity classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRegistry {
    labels: BTreeMap<String, SensitivityClass>,
}

#[derive(Deserialize)]
struct LabelFile {
    labels: BTreeMap<String, SensitivityClass>,
}

impl LabelRegistry {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN).expect("shipped label table parses")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SchedulerError> {
        let f: LabelFile = toml::from_str(s).map_err(|e| SchedulerError::Parse(e.to_string()))?;
        Ok(LabelRegistry { labels: f.labels })
    }

    pub fn load(path: &Path) -> Result<Self, SchedulerError> {
        let s = std::fs::read_to_string(path).map_err(|e| SchedulerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn get(&self, label: &str) -> Option<SensitivityClass> {
        self.labels.get(label).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SensitivityClass)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Highest class among `labels`; the empty set is Public.
    pub fn classify<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<SensitivityClass, SchedulerError> {
        let mut class = SensitivityClass::Public;
        let mut seen = BTreeSet::new();
        for l in labels {
            if !seen.insert(l) {
                continue;
            }
            let c = self.get(l).ok_or_else(|| SchedulerError::UnknownLabel(l.to_string()))?;
            class = class.max(c);
        }
        Ok(class)
    }
}
