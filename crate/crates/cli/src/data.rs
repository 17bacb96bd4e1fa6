use std::path::{Path, PathBuf};

use porenet::network::PoreNetwork;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub num_pores: usize,
    pub num_throats: usize,
    pub target_permeability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: porenet::network::DatasetSpec,
    pub files: Vec<ManifestEntry>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    porenet::Error::io(path, e).into()
}

fn index_of(name: &str) -> Option<usize> {
    name.strip_prefix("net_")?
        .strip_suffix(".json")?
        .parse()
        .ok()
}

/// Network files of a dataset: a single file, a directory with `manifest.json`,
/// or a directory of `net_<k>.json` ordered by `k`.
pub fn dataset_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::validation(format!(
            "no such dataset: {}",
            path.display()
        )));
    }
    let manifest = path.join("manifest.json");
    if manifest.is_file() {
        let text = std::fs::read_to_string(&manifest).map_err(|e| io_err(&manifest, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", manifest.display())))?;
        return Ok(m.files.iter().map(|f| path.join(&f.file)).collect());
    }
    let mut found: Vec<(usize, PathBuf)> = std::fs::read_dir(path)
        .map_err(|e| io_err(path, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            index_of(&name).map(|k| (k, e.path()))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::validation(format!(
            "no net_<k>.json files in {}",
            path.display()
        )));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn load_dataset(path: &Path) -> Result<Vec<PoreNetwork>, CliError> {
    dataset_files(path)?
        .iter()
        .map(|p| PoreNetwork::load(p).map_err(CliError::from))
        .collect()
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}
