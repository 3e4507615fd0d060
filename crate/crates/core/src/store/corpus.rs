//! Corpus manifests and patch annotations.
//!
//! A manifest is a JSON file `{"entries": [{path, sha256, width, height}],
//! "annotations": "optional/relative.jsonl"}`; paths are relative to the
//! manifest's directory. Annotations are JSONL records
//! `{image, x, y, w, h, category}` with `image` relative to the same root.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::source::ImageSource;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Annotation file, already resolved against `root`.
    pub annotations: Option<PathBuf>,
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ManifestFile = serde_json::from_str(&text)
            .map_err(|e| Error::Corrupt(format!("manifest {}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = HashSet::new();
        for e in &file.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Corrupt(format!(
                    "manifest {} lists {} twice",
                    path.display(),
                    e.path
                )));
            }
        }
        Ok(Self {
            annotations: file.annotations.map(|a| root.join(a)),
            root,
            entries: file.entries,
        })
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Index of the entry with this relative path.
    pub fn position(&self, relative: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.path == relative)
    }

    /// Write a manifest for `paths` (relative to `root`), hashing each file.
    pub fn build(
        root: impl AsRef<Path>,
        paths: &[String],
        annotations: Option<String>,
    ) -> Result<String> {
        let root = root.as_ref();
        let mut entries = vec![];
        for p in paths {
            let full = root.join(p);
            let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
            let img = Image::load(&full)?;
            entries.push(ManifestEntry {
                path: p.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                width: img.width(),
                height: img.height(),
            });
        }
        serde_json::to_string_pretty(&ManifestFile {
            entries,
            annotations,
        })
        .map_err(|e| Error::Corrupt(format!("cannot encode manifest: {e}")))
    }
}

/// Images of a manifest, decoded lazily in manifest order. In strict mode
/// every file's SHA-256 and declared size are verified on load.
#[derive(Debug, Clone)]
pub struct ManifestSource {
    pub manifest: CorpusManifest,
    pub strict: bool,
}

impl ImageSource for ManifestSource {
    fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    fn load(&self, index: usize) -> Result<Image> {
        let entry = &self.manifest.entries[index];
        let path = self.manifest.resolve(&entry.path);
        if self.strict {
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let digest = hex::encode(Sha256::digest(&bytes));
            if !digest.eq_ignore_ascii_case(&entry.sha256) {
                return Err(Error::Corrupt(format!(
                    "{}: sha256 {digest} does not match the manifest's {}",
                    entry.path, entry.sha256
                )));
            }
        }
        let img = Image::load(&path)?;
        if self.strict && (img.width(), img.height()) != (entry.width, entry.height) {
            return Err(Error::Corrupt(format!(
                "{}: image is {}x{}, manifest says {}x{}",
                entry.path,
                img.width(),
                img.height(),
                entry.width,
                entry.height
            )));
        }
        Ok(img)
    }

    fn label(&self, index: usize) -> String {
        self.manifest.entries[index].path.clone()
    }
}

/// Open a manifest as an image source.
pub fn load_corpus(manifest_path: impl AsRef<Path>, strict: bool) -> Result<ManifestSource> {
    Ok(ManifestSource {
        manifest: CorpusManifest::load(manifest_path)?,
        strict,
    })
}

/// An annotated object box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub image: String,
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
    pub category: String,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(line)
            .map_err(|e| Error::Corrupt(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if a.w == 0 || a.h == 0 {
            return Err(Error::Corrupt(format!(
                "{} line {}: empty box",
                path.display(),
                i + 1
            )));
        }
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_images(dir: &Path, n: usize) -> Vec<String> {
        (0..n)
            .map(|i| {
                let name = format!("img{i}.png");
                Image::from_fn(10 + i, 8, |x, y| ((x + y + i) % 5) as f64 / 4.0)
                    .save(dir.join(&name))
                    .unwrap();
                name
            })
            .collect()
    }

    #[test]
    fn three_entries_load_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let names = write_images(dir.path(), 3);
        let text = CorpusManifest::build(dir.path(), &names, None).unwrap();
        std::fs::write(dir.path().join("m.json"), text).unwrap();
        let src = load_corpus(dir.path().join("m.json"), true).unwrap();
        assert_eq!(src.len(), 3);
        for i in 0..3 {
            assert_eq!(src.load(i).unwrap().width(), 10 + i);
            assert_eq!(src.label(i), names[i]);
        }
    }

    #[test]
    fn strict_mode_catches_hash_mismatch_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let names = write_images(dir.path(), 2);
        let text = CorpusManifest::build(dir.path(), &names, None).unwrap();
        std::fs::write(dir.path().join("m.json"), text).unwrap();
        Image::filled(10, 8, 1, 0.3)
            .save(dir.path().join(&names[0]))
            .unwrap();
        let strict = load_corpus(dir.path().join("m.json"), true).unwrap();
        assert!(matches!(strict.load(0), Err(Error::Corrupt(_))));
        let lax = load_corpus(dir.path().join("m.json"), false).unwrap();
        assert!(lax.load(0).is_ok());
        std::fs::remove_file(dir.path().join(&names[1])).unwrap();
        match strict.load(1) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with(&names[1])),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("e.json"), r#"{"entries": []}"#).unwrap();
        assert!(load_corpus(dir.path().join("e.json"), true)
            .unwrap()
            .is_empty());
        let dup = r#"{"entries": [{"path":"a.png","sha256":"00","width":1,"height":1},{"path":"a.png","sha256":"00","width":1,"height":1}]}"#;
        std::fs::write(dir.path().join("d.json"), dup).unwrap();
        assert!(matches!(
            CorpusManifest::load(dir.path().join("d.json")),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn annotations_keep_categories() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        std::fs::write(
            &p,
            "{\"image\": \"a.png\", \"x\": 1, \"y\": 2, \"w\": 30, \"h\": 40, \"category\": \"cat\"}\n\n{\"category\": \"dog\", \"image\": \"b.png\", \"x\": -3, \"y\": 0, \"w\": 5, \"h\": 6}\n",
        )
        .unwrap();
        let a = load_annotations(&p).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].category, "cat");
        assert_eq!((a[1].category.as_str(), a[1].x), ("dog", -3));
    }
}
