//! `generate`: write a synthetic dataset as CSV with metadata sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use feir_core::datagen::{generate, GenSpec};
use feir_core::matrix::{write_sidecar, MatrixMeta};
use feir_core::save_matrix;

pub const UTILITY_FILE: &str = "utility.csv";
pub const SUITABILITY_FILE: &str = "suitability.csv";
pub const GROUPS_FILE: &str = "groups.json";

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFiles {
    pub utility: PathBuf,
    /// Present only when suitability differs from utility.
    pub suitability: Option<PathBuf>,
    /// Boosted group indices, for the group families.
    pub groups: Option<PathBuf>,
}

/// Writes the dataset into `out_dir`. Identical specs give byte-identical files.
pub fn cmd_generate(spec: &GenSpec, out_dir: &Path) -> Result<GeneratedFiles> {
    let data = generate(spec)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let meta = MatrixMeta {
        m: spec.m,
        n: spec.n,
        k: None,
        seed: Some(spec.seed),
        generator: Some(spec.family.to_string()),
    };
    let utility = out_dir.join(UTILITY_FILE);
    save_matrix(data.scores.utility(), &utility)?;
    write_sidecar(&utility, &meta)?;
    let suitability = if data.scores.is_shared() {
        None
    } else {
        let path = out_dir.join(SUITABILITY_FILE);
        save_matrix(data.scores.suitability(), &path)?;
        write_sidecar(&path, &meta)?;
        Some(path)
    };
    let groups = if data.boosted.is_empty() {
        None
    } else {
        let path = out_dir.join(GROUPS_FILE);
        let json = serde_json::json!({ "family": spec.family, "boosted": data.boosted });
        fs::write(&path, serde_json::to_string_pretty(&json)?).with_context(|| format!("writing {}", path.display()))?;
        Some(path)
    };
    Ok(GeneratedFiles {
        utility,
        suitability,
        groups,
    })
}
