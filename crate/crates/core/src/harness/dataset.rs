use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::RawImage;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// Anything evaluation can pull labelled images from.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize;

    /// Stable identifier of sample `index`; crop seeds are derived from it.
    fn key(&self, index: usize) -> &str;

    fn label(&self, index: usize) -> usize;

    fn load(&self, index: usize) -> Result<RawImage>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// Path relative to the dataset root, '/'-separated.
    pub path: String,
    pub label: usize,
}

/// ImageNet-style directory tree: one subdirectory per class.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn read_labelmap(path: &Path) -> Result<BTreeMap<String, usize>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    serde_json::from_str(&std::fs::read_to_string(path)?)
        .map_err(|e| Error::config(format!("labelmap {}: {e}", path.display())))
}

/// Indexes `root`. Without a labelmap, sorted directory names define class
/// indices. Samples are ordered lexicographically by relative path.
pub fn load_dataset_index(root: &Path, labelmap: Option<&Path>) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut dirs: Vec<String> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .collect();
    dirs.sort();

    let mapping: BTreeMap<String, usize> = match labelmap {
        Some(path) => {
            let map = read_labelmap(path)?;
            if let Some(unknown) = dirs.iter().find(|d| !map.contains_key(*d)) {
                return Err(Error::Data(format!(
                    "directory '{unknown}' is not in the labelmap"
                )));
            }
            let mut seen = HashSet::new();
            if let Some((name, _)) = map.iter().find(|(_, v)| !seen.insert(**v)) {
                return Err(Error::config(format!("labelmap index of '{name}' is duplicated")));
            }
            map
        }
        None => dirs.iter().cloned().enumerate().map(|(i, d)| (d, i)).collect(),
    };

    let num_classes = mapping.values().max().map_or(0, |m| m + 1);
    let mut class_names = vec![String::new(); num_classes];
    for (name, &idx) in &mapping {
        class_names[idx] = name.clone();
    }

    let mut samples = Vec::new();
    for dir in &dirs {
        let label = mapping[dir];
        for entry in std::fs::read_dir(root.join(dir))? {
            let path = entry?.path();
            if path.is_file() && is_image(&path) {
                let file = path.file_name().and_then(|f| f.to_str()).ok_or_else(|| {
                    Error::Data(format!("non UTF-8 file name under {dir}"))
                })?;
                samples.push(Sample {
                    path: format!("{dir}/{file}"),
                    label,
                });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("no images found under {}", root.display())));
    }
    samples.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        samples,
        class_names,
    })
}

impl SampleSource for DatasetIndex {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn key(&self, index: usize) -> &str {
        &self.samples[index].path
    }

    fn label(&self, index: usize) -> usize {
        self.samples[index].label
    }

    fn load(&self, index: usize) -> Result<RawImage> {
        RawImage::open(self.root.join(&self.samples[index].path))
    }
}
