use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ensemble::{QEnsemble, SoftPolicy};
use crate::error::{invalid, Result};
use crate::io::write_atomic;
use crate::nn::MlpParams;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Lists the network files of a saved ensemble, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub members: Vec<String>,
    pub targets: Vec<String>,
    #[serde(default)]
    pub policy: Option<String>,
}

/// Networks restored from a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub members: Vec<MlpParams>,
    pub targets: Vec<MlpParams>,
    pub policy: Option<MlpParams>,
}

fn write_net(dir: &Path, name: &str, net: &MlpParams) -> Result<String> {
    write_atomic(&dir.join(name), serde_json::to_string(net)?.as_bytes())?;
    Ok(name.to_string())
}

/// Writes one JSON file per network and the manifest; returns the manifest path.
pub fn save_checkpoint(dir: &Path, ensemble: &QEnsemble, policy: Option<&SoftPolicy>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let members = ensemble
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| write_net(dir, &format!("member_{i}.json"), m))
        .collect::<Result<_>>()?;
    let targets = ensemble
        .targets
        .iter()
        .enumerate()
        .map(|(i, m)| write_net(dir, &format!("target_{i}.json"), m))
        .collect::<Result<_>>()?;
    let policy = policy.map(|p| write_net(dir, "policy.json", &p.net)).transpose()?;
    let manifest = Manifest {
        version: crate::VERSION.to_string(),
        members,
        targets,
        policy,
    };
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}

fn read_net(base: &Path, name: &str) -> Result<MlpParams> {
    let net: MlpParams = serde_json::from_str(&fs::read_to_string(base.join(name))?)?;
    net.validate()?;
    Ok(net)
}

/// Loads and shape-checks every network listed in a manifest.
pub fn load_checkpoint(manifest_path: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    if manifest.members.is_empty() {
        return Err(invalid("manifest lists no ensemble members"));
    }
    if !manifest.targets.is_empty() && manifest.targets.len() != manifest.members.len() {
        return Err(invalid("manifest member and target counts differ"));
    }
    let members: Vec<MlpParams> = manifest.members.iter().map(|f| read_net(base, f)).collect::<Result<_>>()?;
    let targets: Vec<MlpParams> = manifest.targets.iter().map(|f| read_net(base, f)).collect::<Result<_>>()?;
    if members.iter().chain(&targets).any(|m| !m.same_shape(&members[0])) {
        return Err(invalid("checkpoint networks do not share one architecture"));
    }
    let policy = manifest.policy.as_deref().map(|f| read_net(base, f)).transpose()?;
    Ok(Checkpoint {
        members,
        targets,
        policy,
    })
}
