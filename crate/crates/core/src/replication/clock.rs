use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Per-replica counters. Absent entries read as 0.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorClock(BTreeMap<String, u64>);

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> u64 {
        self.0.get(id).copied().unwrap_or(0)
    }

    pub fn set(&mut self, id: &str, value: u64) {
        if value == 0 {
            self.0.remove(id);
        } else {
            self.0.insert(id.to_string(), value);
        }
    }

    pub fn increment(&mut self, id: &str) -> u64 {
        let v = self.get(id) + 1;
        self.set(id, v);
        v
    }

    /// Element-wise max.
    pub fn merge(&self, other: &VectorClock) -> VectorClock {
        let mut out = self.clone();
        for (k, v) in &other.0 {
            if *v > out.get(k) {
                out.0.insert(k.clone(), *v);
            }
        }
        out
    }

    /// Every entry ≥ the other's.
    pub fn dominates(&self, other: &VectorClock) -> bool {
        other.0.iter().all(|(k, v)| self.get(k) >= *v)
    }

    pub fn concurrent(&self, other: &VectorClock) -> bool {
        !self.dominates(other) && !other.dominates(self)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Zero entries are stored as absent, so equality ignores them.
impl PartialEq for VectorClock {
    fn eq(&self, other: &Self) -> bool {
        self.dominates(other) && other.dominates(self)
    }
}

impl Eq for VectorClock {}

impl PartialOrd for VectorClock {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self.dominates(other), other.dominates(self)) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Greater),
            (false, true) => Some(Ordering::Less),
            (false, false) => None,
        }
    }
}

impl fmt::Display for VectorClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}:{v}")?;
        }
        f.write_str("}")
    }
}

impl std::str::FromStr for VectorClock {
    type Err = String;

    /// Parses `{a:1,b:2}`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix('{')
            .and_then(|x| x.strip_suffix('}'))
            .ok_or_else(|| format!("vector clock must be braced: `{s}`"))?;
        let mut c = VectorClock::new();
        for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once(':').ok_or_else(|| format!("bad entry `{part}`"))?;
            let v: u64 = v.trim().parse().map_err(|_| format!("bad counter in `{part}`"))?;
            c.set(k.trim(), v);
        }
        Ok(c)
    }
}

impl<const N: usize> From<[(&str, u64); N]> for VectorClock {
    fn from(entries: [(&str, u64); N]) -> Self {
        let mut c = VectorClock::new();
        for (k, v) in entries {
            c.set(k, v);
        }
        c
    }
}

pub fn merge_clocks(a: &VectorClock, b: &VectorClock) -> VectorClock {
    a.merge(b)
}
