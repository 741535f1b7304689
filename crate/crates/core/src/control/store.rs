//! Versioned resource map with compare-and-swap updates and optional
//! persistence to a directory of YAML files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::resource::{Kind, Resource, ResourceKey};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub resource: Resource,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    Create { key: ResourceKey, resource: Resource },
    Update { key: ResourceKey, expected_generation: u64, resource: Resource },
}

impl Mutation {
    pub fn key(&self) -> &ResourceKey {
        match self {
            Mutation::Create { key, .. } | Mutation::Update { key, .. } => key,
        }
    }

    pub fn resource(&self) -> &Resource {
        match self {
            Mutation::Create { resource, .. } | Mutation::Update { resource, .. } => resource,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} already exists")]
    AlreadyExists(ResourceKey),
    #[error("{key}: expected generation {expected}, found {found}")]
    Conflict { key: ResourceKey, expected: u64, found: u64 },
    #[error("{0} not found")]
    NotFound(ResourceKey),
    #[error("persistence: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store file {file}: {message}")]
    Corrupt { file: String, message: String },
}

const INDEX: &str = "index.yaml";

#[derive(Debug, Default)]
pub struct ResourceStore {
    entries: BTreeMap<ResourceKey, Entry>,
    dir: Option<PathBuf>,
    dirty: BTreeSet<ResourceKey>,
}

fn file_name(key: &ResourceKey) -> String {
    format!("{}.{}.{}.yaml", key.kind.as_str().to_lowercase(), key.namespace, key.name)
}

fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("yaml.tmp");
    fs::write(&tmp, text)?;
    fs::rename(tmp, path)
}

impl ResourceStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a persisted store, creating an empty one if `dir` has no index.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut entries = BTreeMap::new();
        let index_path = dir.join(INDEX);
        if index_path.exists() {
            let text = fs::read_to_string(&index_path)?;
            let index: BTreeMap<String, u64> = serde_yaml::from_str(&text).map_err(|e| StoreError::Corrupt {
                file: INDEX.into(),
                message: e.to_string(),
            })?;
            for (k, generation) in index {
                let key = ResourceKey::parse(&k).ok_or_else(|| StoreError::Corrupt {
                    file: INDEX.into(),
                    message: format!("bad key {k}"),
                })?;
                let name = file_name(&key);
                let text = fs::read_to_string(dir.join(&name))?;
                let resource: Resource = serde_yaml::from_str(&text).map_err(|e| StoreError::Corrupt {
                    file: name.clone(),
                    message: e.to_string(),
                })?;
                entries.insert(key, Entry { resource, generation });
            }
        }
        Ok(Self {
            entries,
            dir: Some(dir),
            dirty: BTreeSet::new(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &ResourceKey) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> Vec<ResourceKey> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter_kind(&self, kind: Kind) -> impl Iterator<Item = (&ResourceKey, &Entry)> {
        self.entries.iter().filter(move |(k, _)| k.kind == kind)
    }

    /// Applies all mutations or none.
    pub fn apply(&mut self, batch: &[Mutation]) -> Result<(), StoreError> {
        for m in batch {
            match m {
                Mutation::Create { key, .. } => {
                    if self.entries.contains_key(key) {
                        return Err(StoreError::AlreadyExists(key.clone()));
                    }
                }
                Mutation::Update { key, expected_generation, .. } => {
                    let found = self
                        .entries
                        .get(key)
                        .ok_or_else(|| StoreError::NotFound(key.clone()))?
                        .generation;
                    if found != *expected_generation {
                        return Err(StoreError::Conflict {
                            key: key.clone(),
                            expected: *expected_generation,
                            found,
                        });
                    }
                }
            }
        }
        for m in batch {
            let key = m.key().clone();
            let generation = self.entries.get(&key).map_or(1, |e| e.generation + 1);
            self.entries.insert(
                key.clone(),
                Entry {
                    resource: m.resource().clone(),
                    generation,
                },
            );
            self.dirty.insert(key);
        }
        Ok(())
    }

    pub fn create(&mut self, key: ResourceKey, resource: Resource) -> Result<(), StoreError> {
        self.apply(&[Mutation::Create { key, resource }])
    }

    /// Writes changed resources and the generation index.
    pub fn flush(&mut self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            self.dirty.clear();
            return Ok(());
        };
        if self.dirty.is_empty() {
            return Ok(());
        }
        for key in &self.dirty {
            let entry = &self.entries[key];
            let text = serde_yaml::to_string(&entry.resource).map_err(|e| StoreError::Corrupt {
                file: file_name(key),
                message: e.to_string(),
            })?;
            write_atomic(&dir.join(file_name(key)), &text)?;
        }
        let index: BTreeMap<String, u64> = self
            .entries
            .iter()
            .map(|(k, e)| (k.to_string(), e.generation))
            .collect();
        let text = serde_yaml::to_string(&index).expect("string map serialises");
        write_atomic(&dir.join(INDEX), &text)?;
        self.dirty.clear();
        Ok(())
    }
}
