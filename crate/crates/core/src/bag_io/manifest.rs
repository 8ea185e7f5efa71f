//! Dataset manifests: a header `classes=<C> dim=<d_f>` followed by one
//! `<path>\t<split>\t<label>` line per bag. Relative paths are resolved
//! against the manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{read_bag, FeatureBag};
use crate::error::{KatError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = KatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(KatError::Data(format!("unknown split tag '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub n_classes: usize,
    pub d_f: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!("classes={} dim={}\n", self.n_classes, self.d_f);
        for e in &self.entries {
            s.push_str(&format!("{}\t{}\t{}\n", e.path.display(), e.split, e.label));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| KatError::Data("manifest is empty".into()))?;
        let mut n_classes = None;
        let mut d_f = None;
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| KatError::Data(format!("bad manifest header token '{tok}'")))?;
            let v: usize = v
                .parse()
                .map_err(|_| KatError::Data(format!("bad manifest header value '{tok}'")))?;
            match k {
                "classes" => n_classes = Some(v),
                "dim" => d_f = Some(v),
                _ => return Err(KatError::Data(format!("unknown manifest header key '{k}'"))),
            }
        }
        let (Some(n_classes), Some(d_f)) = (n_classes, d_f) else {
            return Err(KatError::Data("manifest header needs classes= and dim=".into()));
        };
        let mut entries = Vec::new();
        for (i, line) in lines {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(KatError::Data(format!(
                    "manifest line {}: expected 3 tab-separated fields",
                    i + 1
                )));
            }
            let label: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| KatError::Data(format!("manifest line {}: bad label", i + 1)))?;
            if label >= n_classes {
                return Err(KatError::Data(format!(
                    "manifest line {}: label {label} with {n_classes} classes",
                    i + 1
                )));
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(parts[0]),
                split: parts[1].trim().parse()?,
                label,
            });
        }
        Ok(DatasetManifest {
            n_classes,
            d_f,
            entries,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Loads every bag of `split`, checking that labels and widths agree
    /// with the manifest.
    pub fn load_split(&self, base: impl AsRef<Path>, split: Split) -> Result<Vec<FeatureBag>> {
        let base = base.as_ref();
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            let path = if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            };
            let bag = read_bag(&path)?;
            if bag.label != e.label {
                return Err(KatError::Data(format!(
                    "{}: file label {} disagrees with manifest label {}",
                    path.display(),
                    bag.label,
                    e.label
                )));
            }
            if bag.d_f() != self.d_f {
                return Err(KatError::Data(format!(
                    "{}: {} features per patch, manifest says {}",
                    path.display(),
                    bag.d_f(),
                    self.d_f
                )));
            }
            out.push(bag);
        }
        Ok(out)
    }
}
