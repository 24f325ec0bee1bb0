//! Versioned, hashed artifacts written atomically.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    kind: String,
    version: u32,
    sha256: String,
    payload: serde_json::Value,
}

fn digest(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Write `text` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Returns the payload hash.
pub fn save<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<String, CliError> {
    let payload = serde_json::to_value(payload).expect("artifacts serialize");
    let sha256 = digest(&payload);
    let env = Envelope { kind: kind.to_string(), version: SCHEMA_VERSION, sha256: sha256.clone(), payload };
    write_atomic(path, &serde_json::to_string(&env).expect("envelope serializes"))?;
    Ok(sha256)
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str, made_by: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Validation(format!("missing artifact {}: run `wizbook {made_by}` first", path.display()))
        } else {
            CliError::io(path, e)
        }
    })?;
    let env: Envelope = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{} is not a wizbook artifact: {e}", path.display())))?;
    if env.kind != kind {
        return Err(CliError::Validation(format!("{} holds a {}, expected a {kind}", path.display(), env.kind)));
    }
    if env.version != SCHEMA_VERSION {
        return Err(CliError::Validation(format!(
            "{} has schema version {}, this build reads {SCHEMA_VERSION}: rerun `wizbook {made_by}`",
            path.display(),
            env.version
        )));
    }
    if digest(&env.payload) != env.sha256 {
        return Err(CliError::Validation(format!("{} fails its checksum", path.display())));
    }
    serde_json::from_value(env.payload).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}
