//! Folder-per-class dataset ingestion and the manifest CSV format.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "ppm", "pnm"];

/// Sidecar written next to manifests so every split keeps the full class vocabulary.
pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    class_id: usize,
    class_name: String,
    split: String,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for e in &self.entries {
            counts[e.class_id] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class_id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.class_id >= self.class_names.len() {
                return Err(Error::Dataset(format!(
                    "{} has class id {} but only {} classes exist",
                    e.path.display(),
                    e.class_id,
                    self.class_names.len()
                )));
            }
            if !seen.insert(&e.path) {
                return Err(Error::Dataset(format!("duplicate path {}", e.path.display())));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Writes `path,class_id,class_name,split` rows.
    pub fn write_csv(&self, path: &Path, split: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for e in &self.entries {
            w.serialize(ManifestRow {
                path: e.path.to_string_lossy().into_owned(),
                class_id: e.class_id,
                class_name: self.class_names[e.class_id].clone(),
                split: split.to_string(),
            })
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest CSV. The class vocabulary comes from a sibling
    /// `classes.txt` when present, otherwise from the rows themselves.
    pub fn read_csv(path: &Path) -> Result<DatasetManifest> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut entries = Vec::new();
        let mut names = BTreeMap::new();
        for row in r.deserialize() {
            let row: ManifestRow = row.map_err(|e| Error::csv(path, e))?;
            if let Some(prev) = names.insert(row.class_id, row.class_name.clone()) {
                if prev != row.class_name {
                    return Err(Error::Dataset(format!(
                        "{}: class id {} named both {prev} and {}",
                        path.display(),
                        row.class_id,
                        row.class_name
                    )));
                }
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(row.path),
                class_id: row.class_id,
            });
        }
        let sidecar = path.parent().map(|p| p.join(CLASSES_FILE));
        let class_names = match sidecar.filter(|p| p.is_file()) {
            Some(p) => {
                let vocab = read_class_names(&p)?;
                for (id, name) in &names {
                    if vocab.get(*id) != Some(name) {
                        return Err(Error::Dataset(format!(
                            "{}: class {id} ({name}) disagrees with {}",
                            path.display(),
                            p.display()
                        )));
                    }
                }
                vocab
            }
            None => {
                let n = names.keys().next_back().map_or(0, |m| m + 1);
                if names.len() != n {
                    return Err(Error::Dataset(format!(
                        "{}: class ids are not contiguous and no {CLASSES_FILE} is present",
                        path.display()
                    )));
                }
                names.into_values().collect()
            }
        };
        let m = DatasetManifest { entries, class_names };
        m.validate()?;
        Ok(m)
    }
}

pub fn write_class_names(path: &Path, names: &[String]) -> Result<()> {
    let mut text = names.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut items = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    items.retain(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')));
    items.sort();
    Ok(items)
}

/// Scans `root/<class_name>/<image files>`. Classes are sorted
/// lexicographically and files by name, so the ordering is stable.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    let class_dirs: Vec<PathBuf> = sorted_dir(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!("no classes found under {}", root.display())));
    }
    let mut entries = Vec::new();
    let mut class_names = Vec::new();
    let mut unreadable = Vec::new();
    for (class_id, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut count = 0;
        for file in sorted_dir(dir)? {
            if !file.is_file() {
                continue;
            }
            if !is_image(&file) {
                log::warn!("skipping non-image file {}", file.display());
                continue;
            }
            if fs::File::open(&file).is_err() {
                unreadable.push(file);
                continue;
            }
            entries.push(ManifestEntry { path: file, class_id });
            count += 1;
        }
        if count == 0 {
            log::warn!("class directory {} contains no images", dir.display());
            return Err(Error::Dataset(format!("class {name} has no images ({})", dir.display())));
        }
        class_names.push(name);
    }
    if !unreadable.is_empty() {
        return Err(Error::UnreadableFiles(unreadable));
    }
    Ok(DatasetManifest { entries, class_names })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, class: &str, n: usize) {
        let d = dir.join(class);
        fs::create_dir_all(&d).unwrap();
        for i in 0..n {
            fs::write(d.join(format!("{i:03}.ppm")), b"P6\n1 1\n255\n\0\0\0").unwrap();
        }
    }

    #[test]
    fn two_classes_five_files() {
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), "zeta", 5);
        touch(tmp.path(), "alpha", 5);
        fs::write(tmp.path().join("alpha").join("notes.txt"), "x").unwrap();
        let m = load_dataset(tmp.path()).unwrap();
        assert_eq!(m.class_names, vec!["alpha", "zeta"]);
        assert_eq!(m.len(), 10);
        assert_eq!(m.counts(), vec![5, 5]);
        assert!(m.entries[..5].iter().all(|e| e.class_id == 0));
        assert_eq!(m, load_dataset(tmp.path()).unwrap());
    }

    #[test]
    fn empty_root_and_empty_class_are_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("no classes found"));
        touch(tmp.path(), "a", 2);
        fs::create_dir_all(tmp.path().join("b")).unwrap();
        assert!(load_dataset(tmp.path()).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn unreadable_files_are_reported() {
        use std::os::unix::fs::PermissionsExt;
        let tmp = tempfile::tempdir().unwrap();
        touch(tmp.path(), "a", 2);
        let bad = tmp.path().join("a").join("001.ppm");
        fs::set_permissions(&bad, fs::Permissions::from_mode(0o000)).unwrap();
        if fs::File::open(&bad).is_ok() {
            // running as root: permissions are not enforced
            return;
        }
        match load_dataset(tmp.path()) {
            Err(Error::UnreadableFiles(files)) => assert_eq!(files, vec![bad]),
            other => panic!("expected unreadable report, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_with_vocabulary() {
        let tmp = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            entries: vec![
                ManifestEntry { path: "x/a.png".into(), class_id: 2 },
                ManifestEntry { path: "x/b.png".into(), class_id: 0 },
            ],
            class_names: vec!["c0".into(), "c1".into(), "c2".into()],
        };
        let p = tmp.path().join("val.csv");
        m.write_csv(&p, "val").unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,class_id,class_name,split\n"));
        // class 1 is absent from the rows
        assert!(DatasetManifest::read_csv(&p).is_err());
        write_class_names(&tmp.path().join(CLASSES_FILE), &m.class_names).unwrap();
        assert_eq!(DatasetManifest::read_csv(&p).unwrap(), m);
    }
}
