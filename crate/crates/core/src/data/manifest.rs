//! Dataset index: matched image/mask pairs, split tags, CSV persistence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::substream;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "none",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "none" | "" => Ok(Split::Unassigned),
            other => Err(Error::Dataset(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    /// File stem shared by the image and its mask.
    pub fn stem(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Matched samples of one dataset at one target resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleManifest {
    pub dataset: String,
    /// Target `(width, height)`; both divisible by 16.
    pub target: (usize, usize),
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

/// Result of pairing two directories.
#[derive(Clone, Debug)]
pub struct ScanReport {
    pub manifest: SampleManifest,
    /// Files present in only one of the two directories.
    pub unmatched: Vec<PathBuf>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn index_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::data(dir, "directory does not exist"));
    }
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::data(dir, e))? {
        let path = entry.map_err(|e| Error::data(dir, e))?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Dataset(format!(
                "duplicate stem '{stem}': {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Checks a `(width, height)` target against the network's divisibility rule.
pub fn check_target(target: (usize, usize)) -> Result<()> {
    crate::arch::ModelConfig::check_resolution(target.1, target.0)
}

/// Pairs files in `image_dir` and `mask_dir` by identical stem, ordered lexicographically.
pub fn scan_dataset(
    dataset: &str,
    image_dir: &Path,
    mask_dir: &Path,
    target: (usize, usize),
) -> Result<ScanReport> {
    check_target(target)?;
    let images = index_by_stem(image_dir)?;
    let masks = index_by_stem(mask_dir)?;
    let mut entries = Vec::new();
    let mut unmatched = Vec::new();
    for (stem, image) in &images {
        match masks.get(stem) {
            Some(mask) => entries.push(ManifestEntry {
                image: image.clone(),
                mask: mask.clone(),
                split: Split::Unassigned,
            }),
            None => unmatched.push(image.clone()),
        }
    }
    unmatched.extend(masks.iter().filter(|(s, _)| !images.contains_key(*s)).map(|(_, p)| p.clone()));
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "no image/mask pairs found under {} and {}",
            image_dir.display(),
            mask_dir.display()
        )));
    }
    Ok(ScanReport {
        manifest: SampleManifest {
            dataset: dataset.to_string(),
            target,
            seed: 0,
            entries,
        },
        unmatched,
    })
}

/// Seeded shuffle, then the first `floor(ratio * N)` entries are tagged train, the rest test.
pub fn split(manifest: &SampleManifest, ratio: f64, seed: u64) -> Result<SampleManifest> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let n = manifest.entries.len();
    if n < 2 {
        return Err(Error::Dataset(format!("cannot split {n} entries; need at least 2")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split", 0));
    let n_train = (ratio * n as f64).floor() as usize;
    let mut out = manifest.clone();
    out.seed = seed;
    for (rank, &i) in order.iter().enumerate() {
        out.entries[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    Ok(out)
}

impl SampleManifest {
    pub fn entries_in(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// CSV with columns `image,mask,split`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Dataset(e.to_string());
        w.write_record(["image", "mask", "split"]).map_err(io)?;
        for e in &self.entries {
            w.write_record([
                e.image.to_string_lossy().as_ref(),
                e.mask.to_string_lossy().as_ref(),
                e.split.as_str(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses [`SampleManifest::to_csv`] output.
    pub fn from_csv(dataset: &str, target: (usize, usize), seed: u64, text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| Error::Dataset(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["image", "mask", "split"] {
            return Err(Error::Dataset("manifest header must be image,mask,split".into()));
        }
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::Dataset(e.to_string()))?;
            entries.push(ManifestEntry {
                image: PathBuf::from(&rec[0]),
                mask: PathBuf::from(&rec[1]),
                split: rec[2].parse()?,
            });
        }
        Ok(Self {
            dataset: dataset.to_string(),
            target,
            seed,
            entries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(n: usize) -> SampleManifest {
        SampleManifest {
            dataset: "fake".into(),
            target: (64, 48),
            seed: 0,
            entries: (0..n)
                .map(|i| ManifestEntry {
                    image: format!("img/{i:04}.png").into(),
                    mask: format!("msk/{i:04}.png").into(),
                    split: Split::Unassigned,
                })
                .collect(),
        }
    }

    #[test]
    fn split_counts_floor() {
        for (n, train, test) in [(612, 489, 123), (196, 156, 40), (2594, 2075, 519)] {
            let s = split(&fake(n), 0.8, 1).unwrap();
            assert_eq!((s.count(Split::Train), s.count(Split::Test)), (train, test));
        }
    }

    #[test]
    fn split_is_seed_deterministic() {
        let a = split(&fake(50), 0.8, 9).unwrap();
        let b = split(&fake(50), 0.8, 9).unwrap();
        let c = split(&fake(50), 0.8, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.entries, c.entries);
    }

    #[test]
    fn split_rejects_tiny_or_bad_ratio() {
        assert!(split(&fake(1), 0.8, 0).is_err());
        assert!(split(&fake(10), 1.0, 0).is_err());
        assert!(split(&fake(10), 0.0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = split(&fake(5), 0.6, 3).unwrap();
        let csv = s.to_csv().unwrap();
        assert!(csv.starts_with("image,mask,split\n"));
        let back = SampleManifest::from_csv("fake", (64, 48), 3, &csv).unwrap();
        assert_eq!(back, s);
    }
}
