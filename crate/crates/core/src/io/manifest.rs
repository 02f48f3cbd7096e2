//! Dataset manifests: tab-separated, one pair per line,
//! `id  hr_path  lr_path  degradation  scale  image_type  split`.
//! Paths are relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::image_io::read_image;
use crate::training::{Dataset, Pair};

pub const MANIFEST_HEADER: &str = "# id\thr_path\tlr_path\tdegradation\tscale\timage_type\tsplit";

macro_rules! label_enum {
    ($name:ident, $what:literal, { $($variant:ident => $label:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $(if s.eq_ignore_ascii_case($label) {
                    return Ok($name::$variant);
                })+
                Err(Error::Dataset(format!(concat!("unknown ", $what, " `{}`"), s)))
            }
        }
    };
}

label_enum!(Degradation, "degradation", { Bd => "bd", Td => "td" });
label_enum!(ImageType, "image type", { Pd => "PD", T1 => "T1", T2 => "T2", Synthetic => "SYNTHETIC" });
label_enum!(Split, "split", { Train => "train", Val => "val", Test => "test" });

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub degradation: Degradation,
    pub scale: usize,
    pub image_type: ImageType,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entries: Vec::new(),
        }
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m = Manifest::new(root);
        let mut ids = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(Error::Dataset(format!(
                    "manifest line {n}: expected 7 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let at = |e: Error| Error::Dataset(format!("manifest line {n}: {e}"));
            let scale = fields[4]
                .parse()
                .map_err(|_| Error::Dataset(format!("manifest line {n}: invalid scale `{}`", fields[4])))?;
            let entry = ManifestEntry {
                id: fields[0].to_string(),
                hr_path: PathBuf::from(fields[1]),
                lr_path: PathBuf::from(fields[2]),
                degradation: fields[3].parse().map_err(at)?,
                scale,
                image_type: fields[5].parse().map_err(at)?,
                split: fields[6].parse().map_err(at)?,
            };
            if !ids.insert(entry.id.clone()) {
                return Err(Error::Dataset(format!("manifest line {n}: duplicate id `{}`", entry.id)));
            }
            m.entries.push(entry);
        }
        Ok(m)
    }

    /// Reads a manifest; its directory becomes the root.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.hr_path.display(),
                e.lr_path.display(),
                e.degradation,
                e.scale,
                e.image_type,
                e.split
            ));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn entries_in(&self, split: Option<Split>) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| split.is_none_or(|s| e.split == s))
    }

    /// Loads the images of one entry, checking `hr = lr * scale`.
    pub fn load_pair(&self, e: &ManifestEntry) -> Result<Pair> {
        let hr = read_image(self.resolve(&e.hr_path))?;
        let lr = read_image(self.resolve(&e.lr_path))?;
        let (lh, lw) = lr.dims();
        let (hh, hw) = hr.dims();
        if hh != lh * e.scale || hw != lw * e.scale {
            return Err(Error::Dataset(format!(
                "entry `{}`: HR {hh}x{hw} is not {} x LR {lh}x{lw}",
                e.id, e.scale
            )));
        }
        Ok(Pair {
            id: e.id.clone(),
            lr,
            hr,
        })
    }

    /// Reads every image and checks all pair dimensions.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            self.load_pair(e)?;
        }
        Ok(())
    }

    /// In-memory dataset of one split (all entries when `None`). Every
    /// selected entry must share one scale.
    pub fn dataset(&self, split: Option<Split>) -> Result<Dataset> {
        let entries: Vec<&ManifestEntry> = self.entries_in(split).collect();
        let scale = match entries.first() {
            Some(e) => e.scale,
            None => {
                return Err(Error::Dataset(format!(
                    "no entries in split {}",
                    split.map_or("(any)", Split::label)
                )))
            }
        };
        if let Some(e) = entries.iter().find(|e| e.scale != scale) {
            return Err(Error::Dataset(format!(
                "entry `{}` has scale {}, expected {scale}",
                e.id, e.scale
            )));
        }
        let pairs = entries.into_iter().map(|e| self.load_pair(e)).collect::<Result<Vec<_>>>()?;
        Dataset::new(scale, pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::io::image_io::write_image;

    fn entry(id: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            hr_path: format!("hr/{id}.f32i").into(),
            lr_path: format!("lr/{id}.f32i").into(),
            degradation: Degradation::Bd,
            scale: 2,
            image_type: ImageType::Synthetic,
            split,
        }
    }

    #[test]
    fn text_round_trip() {
        let mut m = Manifest::new("/data");
        m.entries.push(entry("a", Split::Train));
        m.entries.push(ManifestEntry {
            degradation: Degradation::Td,
            image_type: ImageType::T2,
            ..entry("b", Split::Test)
        });
        assert_eq!(Manifest::parse(&m.to_text(), "/data").unwrap(), m);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Manifest::parse("a\thr\tlr\tbd\t2\tPD\n", ".").is_err());
        assert!(Manifest::parse("a\thr\tlr\txx\t2\tPD\ttrain\n", ".").is_err());
        assert!(Manifest::parse("a\thr\tlr\tbd\ttwo\tPD\ttrain\n", ".").is_err());
        let dup = "a\thr\tlr\tbd\t2\tPD\ttrain\na\thr\tlr\ttd\t2\tT1\tval\n";
        let err = Manifest::parse(dup, ".").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("duplicate"));
    }

    #[test]
    fn validation_checks_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("hr")).unwrap();
        std::fs::create_dir_all(dir.path().join("lr")).unwrap();
        write_image(&Image::filled(8, 8, 0.5), dir.path().join("hr/a.f32i")).unwrap();
        write_image(&Image::filled(4, 4, 0.5), dir.path().join("lr/a.f32i")).unwrap();
        write_image(&Image::filled(8, 8, 0.5), dir.path().join("hr/b.f32i")).unwrap();
        write_image(&Image::filled(4, 3, 0.5), dir.path().join("lr/b.f32i")).unwrap();

        let mut m = Manifest::new(dir.path());
        m.entries.push(entry("a", Split::Train));
        let path = dir.path().join("manifest.tsv");
        m.save(&path).unwrap();
        let loaded = Manifest::load(&path).unwrap();
        loaded.validate().unwrap();
        let data = loaded.dataset(Some(Split::Train)).unwrap();
        assert_eq!((data.scale, data.len()), (2, 1));
        assert!(loaded.dataset(Some(Split::Val)).is_err());

        m.entries.push(entry("b", Split::Train));
        assert!(matches!(m.validate(), Err(Error::Dataset(msg)) if msg.contains("`b`")));
    }
}
