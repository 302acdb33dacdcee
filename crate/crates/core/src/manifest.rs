//! Dataset manifests: which recordings exist, who they belong to and which
//! split they are in. Relative paths resolve against the manifest's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, ManifestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub patient_id: String,
    /// EDF (`.edf`) or raw (`.json` header + `.bin` payload) recording.
    pub path: PathBuf,
    /// Annotation TSV; absent means no seizures.
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    pub split: Split,
    /// Multi-hour recording: only hours containing seizures are used for
    /// training.
    #[serde(default)]
    pub long_form: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub recordings: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against; not serialised.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(recordings: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            recordings,
            root: root.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.into(),
            source,
        })?;
        let mut m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| ManifestError::Malformed {
                path: path.into(),
                message: e.to_string(),
            })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate().map_err(|message| ManifestError::Malformed {
            path: path.into(),
            message,
        })?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(path, text + "\n").map_err(|source| ManifestError::Io {
            path: path.into(),
            source,
        })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.recordings {
            if !seen.insert(&e.id) {
                return Err(format!("duplicate recording id {}", e.id));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.recordings.iter().filter(move |e| e.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            vec![
                ManifestEntry {
                    id: "a".into(),
                    patient_id: "p1".into(),
                    path: "rec/a.json".into(),
                    annotations: Some("rec/a.tsv".into()),
                    split: Split::Train,
                    long_form: false,
                },
                ManifestEntry {
                    id: "b".into(),
                    patient_id: "p2".into(),
                    path: "/abs/b.edf".into(),
                    annotations: None,
                    split: Split::Validation,
                    long_form: true,
                },
            ],
            "",
        );
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.recordings, m.recordings);
        assert_eq!(
            back.resolve(Path::new("rec/a.json")),
            dir.path().join("rec/a.json")
        );
        assert_eq!(
            back.resolve(Path::new("/abs/b.edf")),
            PathBuf::from("/abs/b.edf")
        );
        assert_eq!(back.split(Split::Train).count(), 1);
    }

    #[test]
    fn duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let e = r#"{"id":"a","patient_id":"p","path":"x.edf","split":"train"}"#;
        fs::write(&path, format!(r#"{{"recordings":[{e},{e}]}}"#)).unwrap();
        assert!(matches!(
            DatasetManifest::load(&path),
            Err(ManifestError::Malformed { .. })
        ));
    }
}
