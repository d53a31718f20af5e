use std::path::{Path, PathBuf};

use cita::datagen::{save_dataset, CausalDataset};
use cita::tarnet::TarNetModel;
use serde::Serialize;

use crate::error::Result;
use crate::short_hash;

/// `root/{datasets,models,reports,results}` with content-hash file names.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

const SUBDIRS: [&str; 4] = ["datasets", "models", "reports", "results"];

impl Workdir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in SUBDIRS {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Workdir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, sub: &str) -> PathBuf {
        self.root.join(sub)
    }

    pub fn put_dataset(&self, ds: &CausalDataset) -> Result<PathBuf> {
        let path = self.dir("datasets").join(format!("{}.csv", ds.id()));
        if !path.exists() {
            save_dataset(ds, &path)?;
        }
        Ok(path)
    }

    pub fn put_model(&self, model: &TarNetModel) -> Result<PathBuf> {
        let path = self.dir("models").join(format!("{}.json", model.id()));
        if !path.exists() {
            model.save(&path)?;
        }
        Ok(path)
    }

    pub fn put_report<T: Serialize>(&self, stem: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        let path = self
            .dir("reports")
            .join(format!("{stem}-{}.json", short_hash(text.as_bytes())));
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
