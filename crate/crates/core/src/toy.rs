//! Bundled synthetic dataset: 60 labelled sentences in 10 documents with 8
//! polysemous words, a plain-text corpus, a sense inventory with glosses and
//! a partial 16-dimensional word-vector file.

use std::path::{Path, PathBuf};

use crate::corpus::{parse_labelled, parse_plain, LabelledSentence};
use crate::dictgraph::{Inventory, WordVectors};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PRETRAIN: &str = include_str!("../data/toy/pretrain.txt");
pub const LABELLED: &str = include_str!("../data/toy/labelled.jsonl");
pub const INVENTORY: &str = include_str!("../data/toy/inventory.json");
pub const VECTORS: &str = include_str!("../data/toy/vectors.txt");
pub const CONFIG: &str = include_str!("../data/toy/toy.toml");

pub const POLYSEMOUS: [&str; 8] = ["bank", "bat", "plant", "spring", "bark", "match", "light", "key"];

#[derive(Clone, Debug)]
pub struct ToyData<T> {
    pub pretrain: Vec<Vec<String>>,
    pub labelled: Vec<LabelledSentence>,
    pub inventory: Inventory,
    pub vectors: WordVectors<T>,
}

pub fn load<T: Scalar>() -> Result<ToyData<T>> {
    Ok(ToyData {
        pretrain: parse_plain(PRETRAIN)?,
        labelled: parse_labelled(LABELLED)?,
        inventory: Inventory::from_json(INVENTORY)?,
        vectors: WordVectors::parse(VECTORS)?,
    })
}

/// Paths of the dataset files once written to disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyFiles {
    pub pretrain: PathBuf,
    pub labelled: PathBuf,
    pub inventory: PathBuf,
    pub vectors: PathBuf,
    pub config: PathBuf,
}

/// Writes the dataset under `dir`, creating it if needed.
pub fn write_to(dir: &Path) -> Result<ToyFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ToyFiles {
        pretrain: dir.join("pretrain.txt"),
        labelled: dir.join("labelled.jsonl"),
        inventory: dir.join("inventory.json"),
        vectors: dir.join("vectors.txt"),
        config: dir.join("toy.toml"),
    };
    for (path, text) in [
        (&files.pretrain, PRETRAIN),
        (&files.labelled, LABELLED),
        (&files.inventory, INVENTORY),
        (&files.vectors, VECTORS),
        (&files.config, CONFIG),
    ] {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}
