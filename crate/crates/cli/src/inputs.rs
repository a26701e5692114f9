//! Reading modules, keys, whitelists, and capability lists from the command line.

use std::path::Path;

use portvm_core::attestation::{measure, CapabilityRegistry, EntryId, GlobalId};
use portvm_core::snapshot::SnapshotKey;
use portvm_core::vm::{assemble, Module};

use crate::error::CliError;

pub const KEY_ENV: &str = "PORTVM_KEY";

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Binary modules start with `PVMM`; anything else is assembly text.
pub fn load_module(path: &Path) -> Result<Module, CliError> {
    let bytes = read(path)?;
    let module = if bytes.starts_with(b"PVMM") {
        Module::from_bytes(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
    } else {
        let text =
            String::from_utf8(bytes).map_err(|_| CliError::Parse(format!("{}: not utf-8 assembly", path.display())))?;
        assemble(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
    };
    log::debug!("{}: measurement {}", path.display(), module.measure().short());
    Ok(module)
}

/// `--key` wins over `--key-file`, which wins over the environment.
pub fn snapshot_key(hex_arg: Option<&str>, file: Option<&Path>) -> Result<SnapshotKey, CliError> {
    let text = match (hex_arg, file) {
        (Some(h), _) => h.to_string(),
        (None, Some(p)) => read_text(p)?,
        (None, None) => std::env::var(KEY_ENV)
            .map_err(|_| CliError::Usage(format!("no snapshot key: pass --key, --key-file, or set {KEY_ENV}")))?,
    };
    SnapshotKey::from_hex(&text).map_err(|e| CliError::Usage(format!("bad snapshot key: {e}")))
}

/// Measurement of the running executable.
pub fn self_measurement() -> Result<GlobalId, CliError> {
    let exe = std::env::current_exe().map_err(|e| CliError::Internal(format!("locating executable: {e}")))?;
    Ok(measure(&read(&exe)?))
}

/// One measurement per line as 64 hex digits, or `self`. `#` starts a comment.
pub fn parse_whitelist(text: &str) -> Result<Vec<GlobalId>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line == "self" {
            out.push(self_measurement()?);
        } else {
            let d = line
                .parse()
                .map_err(|e| CliError::Parse(format!("whitelist line {}: {e}", i + 1)))?;
            out.push(d);
        }
    }
    Ok(out)
}

pub fn load_whitelist(path: Option<&Path>) -> Result<Vec<GlobalId>, CliError> {
    match path {
        Some(p) => parse_whitelist(&read_text(p)?),
        None => Ok(vec![self_measurement()?]),
    }
}

/// Comma-separated capability ids or registry names, e.g. `1003,wasi-nn`.
pub fn parse_caps(list: &str) -> Result<Vec<EntryId>, CliError> {
    let reg = CapabilityRegistry::builtin();
    let mut ids = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let id = match item.parse::<EntryId>() {
            Ok(id) => id,
            Err(_) => reg
                .id_of(item)
                .ok_or_else(|| CliError::Usage(format!("unknown capability `{item}`")))?,
        };
        ids.push(id);
    }
    reg.check(&ids).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn caps_accept_ids_and_names() {
        let ids = parse_caps("1001, 1003").unwrap();
        assert_eq!(ids, vec![1001, 1003]);
        let reg = CapabilityRegistry::builtin();
        let name = reg.name(1003).unwrap().to_string();
        assert_eq!(parse_caps(&name).unwrap(), vec![1003]);
        assert!(parse_caps("4242").is_err());
        assert!(parse_caps("").unwrap().is_empty());
    }

    #[test]
    fn whitelist_skips_comments() {
        let d = measure(b"node");
        let text = format!("# trusted\n{}  # build 7\n\n", d.to_hex());
        assert_eq!(parse_whitelist(&text).unwrap(), vec![d]);
        assert!(parse_whitelist("zz").is_err());
    }
}
