use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::EntryId;

const BUILTIN: &str = include_str!("../../data/capabilities.toml");

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("reading capability registry: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing capability registry: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("capability id {0} registered twice")]
    Duplicate(EntryId),
    #[error("unregistered capability id {0}")]
    Unregistered(EntryId),
}

#[derive(Debug, Clone, Deserialize)]
struct Entry {
    id: EntryId,
    name: String,
    #[serde(default)]
    description: String,
}

#[derive(Debug, Deserialize)]
struct File {
    #[serde(default)]
    capability: Vec<Entry>,
}

/// Mapping from capability id to name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilityRegistry {
    entries: BTreeMap<EntryId, (String, String)>,
}

impl CapabilityRegistry {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN).expect("builtin registry parses")
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, RegistryError> {
        let f: File = toml::from_str(s)?;
        let mut entries = BTreeMap::new();
        for e in f.capability {
            if entries.insert(e.id, (e.name, e.description)).is_some() {
                return Err(RegistryError::Duplicate(e.id));
            }
        }
        Ok(CapabilityRegistry { entries })
    }

    pub fn name(&self, id: EntryId) -> Option<&str> {
        self.entries.get(&id).map(|e| e.0.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<EntryId> {
        self.entries.iter().find(|(_, e)| e.0 == name).map(|(id, _)| *id)
    }

    /// Every id must be registered.
    pub fn check<'a>(&self, ids: impl IntoIterator<Item = &'a EntryId>) -> Result<(), RegistryError> {
        for id in ids {
            if !self.entries.contains_key(id) {
                return Err(RegistryError::Unregistered(*id));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntryId, &str, &str)> + '_ {
        self.entries.iter().map(|(id, (n, d))| (*id, n.as_str(), d.as_str()))
    }
}
