//! On-disk dataset directory.
//!
//! ```text
//! users.txt        one user ID per line, in index order
//! items.txt        one item ID per line, in index order
//! train.tsv        user_id <TAB> item_id <TAB> value
//! validation.tsv
//! test.tsv
//! covariates.txt   optional, item_id then L values
//! locations.txt    optional, item_id lat lon
//! ```
//!
//! The split seed is recorded in `split_seed.txt` so a reloaded dataset
//! compares equal to the one written.

use std::fs;
use std::path::Path;

use crate::data::{CovariateMatrix, IdMap, InteractionMatrix};
use crate::error::{Error, Result};
use crate::ingest::{load_covariates, load_locations, SplitDataset};

pub const USERS: &str = "users.txt";
pub const ITEMS: &str = "items.txt";
pub const TRAIN: &str = "train.tsv";
pub const VALIDATION: &str = "validation.tsv";
pub const TEST: &str = "test.tsv";
pub const COVARIATES: &str = "covariates.txt";
pub const LOCATIONS: &str = "locations.txt";
pub const SPLIT_SEED: &str = "split_seed.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDir {
    pub data: SplitDataset,
    pub covariates: Option<CovariateMatrix>,
    pub locations: Option<Vec<(f64, f64)>>,
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ids_text(ids: &IdMap) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

fn matrix_text(y: &InteractionMatrix) -> String {
    let mut out = String::new();
    for (u, i, v) in y.iter() {
        let (uid, iid) = (y.user_ids().id(u).unwrap_or_default(), y.item_ids().id(i).unwrap_or_default());
        out.push_str(&format!("{uid}\t{iid}\t{v}\n"));
    }
    out
}

/// Write a dataset directory, creating `dir` if needed.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    data: &SplitDataset,
    covariates: Option<&CovariateMatrix>,
    locations: Option<&[(f64, f64)]>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let items = data.train.item_ids();
    write(&dir.join(USERS), ids_text(data.train.user_ids()))?;
    write(&dir.join(ITEMS), ids_text(items))?;
    write(&dir.join(TRAIN), matrix_text(&data.train))?;
    write(&dir.join(VALIDATION), matrix_text(&data.validation))?;
    write(&dir.join(TEST), matrix_text(&data.test))?;
    write(&dir.join(SPLIT_SEED), format!("{}\n", data.split_seed))?;
    if let Some(x) = covariates {
        let mut out = String::new();
        for (i, id) in items.iter().enumerate() {
            out.push_str(id);
            for v in x.row(i) {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        write(&dir.join(COVARIATES), out)?;
    }
    if let Some(coords) = locations {
        let out = items
            .iter()
            .zip(coords)
            .map(|(id, (lat, lon))| format!("{id} {lat} {lon}\n"))
            .collect();
        write(&dir.join(LOCATIONS), out)?;
    }
    Ok(())
}

fn read_ids(path: &Path) -> Result<IdMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = IdMap::new();
    for (idx, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        if ids.index_of(id).is_some() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: idx as u64 + 1,
                message: format!("duplicate ID `{id}`"),
            });
        }
        ids.get_or_insert(id);
    }
    Ok(ids)
}

fn read_matrix(path: &Path, users: &IdMap, items: &IdMap) -> Result<InteractionMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: idx as u64 + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [uid, iid, value] = fields[..] else {
            return Err(err("expected three tab-separated fields".into()));
        };
        let u = users.index_of(uid).ok_or_else(|| err(format!("unknown user `{uid}`")))?;
        let i = items.index_of(iid).ok_or_else(|| err(format!("unknown item `{iid}`")))?;
        let v: f64 = value.parse().map_err(|_| err(format!("`{value}` is not a number")))?;
        entries.push((u, i, v));
    }
    InteractionMatrix::from_entries(users.clone(), items.clone(), entries)
}

/// Read a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<DatasetDir> {
    let dir = dir.as_ref();
    let users = read_ids(&dir.join(USERS))?;
    let items = read_ids(&dir.join(ITEMS))?;
    let seed_path = dir.join(SPLIT_SEED);
    let split_seed = if seed_path.exists() {
        let raw = fs::read_to_string(&seed_path).map_err(|e| Error::io(&seed_path, e))?;
        raw.trim().parse().map_err(|_| Error::Parse {
            path: seed_path.clone(),
            line: 1,
            message: "split seed is not an integer".into(),
        })?
    } else {
        0
    };
    let data = SplitDataset {
        train: read_matrix(&dir.join(TRAIN), &users, &items)?,
        validation: read_matrix(&dir.join(VALIDATION), &users, &items)?,
        test: read_matrix(&dir.join(TEST), &users, &items)?,
        split_seed,
    };
    let covariates = dir
        .join(COVARIATES)
        .exists()
        .then(|| load_covariates(dir.join(COVARIATES), &items))
        .transpose()?;
    let locations = dir
        .join(LOCATIONS)
        .exists()
        .then(|| load_locations(dir.join(LOCATIONS), &items))
        .transpose()?;
    Ok(DatasetDir {
        data,
        covariates,
        locations,
    })
}
