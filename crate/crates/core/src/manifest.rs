//! Dataset catalog stored as JSON Lines.
//!
//! The first record is a header `{"master_seed", "scale_um_per_px"}`; each
//! following record is one [`ManifestEntry`]. Paths are relative to the
//! directory containing the manifest file.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::types::{validate_pair, BinaryMask, FluorescenceImage, ParticleSpec};

/// File name used by the generator and the CLI.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`, expected train or test"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Spiked,
    Real,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Spiked => "spiked",
            Provenance::Real => "real",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_path: String,
    pub mask_path: String,
    pub split: Split,
    pub provenance: Provenance,
    pub particles: Vec<ParticleSpec>,
    pub seed: u64,
    /// Whether any two rendered particles touch, in which case their mask
    /// components may have merged.
    #[serde(default)]
    pub overlaps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    master_seed: u64,
    scale_um_per_px: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub master_seed: u64,
    pub scale_um_per_px: f64,
    pub entries: Vec<ManifestEntry>,
    root: PathBuf,
}

impl DatasetManifest {
    /// `root` is the directory entry paths are resolved against.
    pub fn new(master_seed: u64, scale_um_per_px: f64, entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            master_seed,
            scale_um_per_px,
            entries,
            root: root.into(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    pub fn mask_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.mask_path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Copy keeping only the entries selected by `keep`.
    pub fn filtered(&self, keep: impl Fn(usize, &ManifestEntry) -> bool) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .enumerate()
                .filter(|(i, e)| keep(*i, e))
                .map(|(_, e)| e.clone())
                .collect(),
            ..self.clone()
        }
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<(FluorescenceImage, BinaryMask)> {
        let image = io::read_image(self.image_path(entry), self.scale_um_per_px)?;
        let mask = io::read_mask(self.mask_path(entry))?;
        validate_pair(&image, &mask)?;
        Ok((image, mask))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::format(path, "manifest is empty, expected a header record"))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::format(path, format!("header record: {e}")))?;
        let mut entries = Vec::new();
        for (lineno, line) in lines {
            let entry: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::new(header.master_seed, header.scale_um_per_px, entries, root);
        manifest.check_files()?;
        Ok(manifest)
    }

    /// Verifies every referenced file exists.
    pub fn check_files(&self) -> Result<()> {
        for entry in &self.entries {
            for p in [self.image_path(entry), self.mask_path(entry)] {
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "referenced by manifest but missing"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Writes the manifest. Entry paths are rewritten relative to the new
    /// location when the files live under it, and made absolute otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rebase = |p: &str| -> String {
            let full = self.root.join(p);
            if dir == self.root {
                return p.to_string();
            }
            let abs = |q: &Path| fs::canonicalize(q).unwrap_or_else(|_| q.to_path_buf());
            let (full, base) = (abs(&full), abs(&dir));
            match full.strip_prefix(&base) {
                Ok(rel) => rel.to_string_lossy().into_owned(),
                Err(_) => full.to_string_lossy().into_owned(),
            }
        };
        let mut out = Vec::new();
        let header = Header {
            master_seed: self.master_seed,
            scale_um_per_px: self.scale_um_per_px,
        };
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        for entry in &self.entries {
            let mut e = entry.clone();
            e.image_path = rebase(&entry.image_path);
            e.mask_path = rebase(&entry.mask_path);
            serde_json::to_writer(&mut out, &e).expect("entry serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Polymer;

    fn entry(i: usize, split: Split) -> ManifestEntry {
        ManifestEntry {
            image_path: format!("images/{i}.png"),
            mask_path: format!("masks/{i}.png"),
            split,
            provenance: Provenance::Spiked,
            particles: vec![ParticleSpec {
                polymer: Polymer::Pet,
                diameter_um: 120.0,
                center: (10.5, 3.25),
                eccentricity: 0.3,
                rotation: 1.0,
                peak_intensity: 0.9,
            }],
            seed: 1234567 + i as u64,
            overlaps: false,
        }
    }

    fn write_files(dir: &Path, m: &DatasetManifest) {
        fs::create_dir_all(dir.join("images")).unwrap();
        fs::create_dir_all(dir.join("masks")).unwrap();
        for e in &m.entries {
            let img = FluorescenceImage::from_rgb8(2, 2, &[7; 12], 5.0).unwrap();
            io::write_image(dir.join(&e.image_path), &img).unwrap();
            io::write_mask(dir.join(&e.mask_path), &BinaryMask::zeros(2, 2)).unwrap();
        }
    }

    #[test]
    fn round_trip_is_structurally_equal() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(42, 5.0, vec![entry(0, Split::Train), entry(1, Split::Test)], dir.path());
        write_files(dir.path(), &m);
        let path = dir.path().join(MANIFEST_FILE);
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.count(Split::Train), 1);
        let (img, mask) = back.load_pair(&back.entries[0]).unwrap();
        assert_eq!((img.width(), mask.height()), (2, 2));
    }

    #[test]
    fn missing_file_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(1, 5.0, vec![entry(0, Split::Train)], dir.path());
        let path = dir.path().join(MANIFEST_FILE);
        m.save(&path).unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn header_fields_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(9, 2.5, vec![], dir.path());
        let path = dir.path().join(MANIFEST_FILE);
        m.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "{\"master_seed\":9,\"scale_um_per_px\":2.5}\n");
    }

    #[test]
    fn saving_elsewhere_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(3, 5.0, vec![entry(0, Split::Train)], dir.path().join("data"));
        write_files(&dir.path().join("data"), &m);
        let path = dir.path().join("top.jsonl");
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.entries[0].image_path, "data/images/0.png");
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!("val".parse::<Split>().is_err());
    }
}
