use std::collections::HashSet;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::SelectionError;
use crate::data::{ImageRef, ImageSource};

/// One labeled pool class. `n_i` is `refs.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolClass {
    pub name: String,
    pub refs: Vec<ImageRef>,
}

/// The candidate pool: named classes of image references plus the source
/// that decodes them on demand.
#[derive(Clone)]
pub struct OODPool {
    classes: Vec<PoolClass>,
    source: Arc<dyn ImageSource>,
}

impl std::fmt::Debug for OODPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OODPool")
            .field("classes", &self.class_names())
            .field("counts", &self.counts())
            .finish()
    }
}

fn check_names<'a>(names: impl Iterator<Item = &'a str>) -> Result<(), SelectionError> {
    let mut seen = HashSet::new();
    let mut any = false;
    for name in names {
        any = true;
        if name.trim().is_empty() {
            return Err(SelectionError::EmptyName);
        }
        if !seen.insert(name) {
            return Err(SelectionError::DuplicateName(name.to_string()));
        }
    }
    if !any {
        return Err(SelectionError::NoNames);
    }
    Ok(())
}

impl OODPool {
    pub fn new(
        classes: Vec<PoolClass>,
        source: Arc<dyn ImageSource>,
    ) -> Result<Self, SelectionError> {
        check_names(classes.iter().map(|c| c.name.as_str()))?;
        if let Some(c) = classes.iter().find(|c| c.refs.is_empty()) {
            return Err(SelectionError::EmptyClass(c.name.clone()));
        }
        Ok(Self { classes, source })
    }

    pub fn classes(&self) -> &[PoolClass] {
        &self.classes
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.refs.len()).collect()
    }

    /// Total sample count.
    pub fn len(&self) -> usize {
        self.classes.iter().map(|c| c.refs.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source(&self) -> &Arc<dyn ImageSource> {
        &self.source
    }

    /// Digest over class names and per-class counts, in pool order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.classes {
            h.update(c.name.as_bytes());
            h.update([0u8]);
            h.update((c.refs.len() as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Class names of the target task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTaxonomy {
    names: Vec<String>,
}

impl ClassTaxonomy {
    pub fn new(names: Vec<String>) -> Result<Self, SelectionError> {
        check_names(names.iter().map(String::as_str))?;
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}
