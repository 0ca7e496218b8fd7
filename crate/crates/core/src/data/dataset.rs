//! Paired slice datasets on disk.
//!
//! A dataset directory holds `manifest.csv` (header `path,split`), an
//! optional `dataset.cfg`, and for every manifest stem `<stem>` the files
//! `<stem>_hr.mrsl` (complex or real reference) and `<stem>_lr.mrsl` (real
//! magnitude low-resolution input).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::config::KvConfig;
use crate::data::phantom::phantom_generate;
use crate::data::slice_file::{read_slice, write_slice, SliceData};
use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};
use crate::kspace::{central_mask, degrade, SamplingMask};
use crate::numcore::RealImage;
use crate::rng::{derive_seed, stream_rng, STREAM_SLICE, STREAM_SPLIT};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DATASET_CONFIG_FILE: &str = "dataset.cfg";
pub const MIN_SLICES: usize = 10;
pub const DEFAULT_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn counts(&self) -> SplitCounts {
        let n = |s| self.entries.iter().filter(|e| e.split == s).count();
        SplitCounts {
            train: n(Split::Train),
            val: n(Split::Val),
            test: n(Split::Test),
        }
    }

    pub fn stems(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.path.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,split\n");
        for e in &self.entries {
            out.push_str(&e.path);
            out.push(',');
            out.push_str(e.split.as_str());
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("path,split") {
            return Err(Error::format(origin, "expected header `path,split`"));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (path, split) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::format(origin, format!("line {}: missing comma", i + 2)))?;
            let split = split
                .trim()
                .parse()
                .map_err(|e: Error| Error::format(origin, format!("line {}: {e}", i + 2)))?;
            entries.push(ManifestEntry {
                path: path.trim().to_string(),
                split,
            });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), self.to_csv().as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        Self::parse_csv(&read_text(&path)?, &path)
    }
}

/// Counts `round(0.8 n)`, `round(0.1 n)`, and the remainder.
pub fn split_counts(n: usize) -> SplitCounts {
    let train = (0.8 * n as f64).round() as usize;
    let val = ((0.1 * n as f64).round() as usize).min(n - train);
    SplitCounts {
        train,
        val,
        test: n - train - val,
    }
}

/// Split tag of every slice index, from a seeded shuffle.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let counts = split_counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, STREAM_SPLIT));
    let mut tags = vec![Split::Test; n];
    for (rank, &idx) in order.iter().enumerate() {
        tags[idx] = if rank < counts.train {
            Split::Train
        } else if rank < counts.train + counts.val {
            Split::Val
        } else {
            Split::Test
        };
    }
    tags
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_slices: usize,
    pub seed: u64,
    pub size: usize,
    pub phase_span_deg: f64,
    pub factor: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_slices: 200,
            seed: 0,
            size: 64,
            phase_span_deg: 40.0,
            factor: DEFAULT_FACTOR,
        }
    }
}

impl DatasetConfig {
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("n_slices", self.n_slices);
        kv.set("seed", self.seed);
        kv.set("size", self.size);
        kv.set("phase_span_deg", self.phase_span_deg);
        kv.set("factor", self.factor);
        kv
    }
}

pub fn slice_stem(index: usize) -> String {
    format!("slice_{index:04}")
}

pub fn hr_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}_hr.mrsl"))
}

pub fn lr_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}_lr.mrsl"))
}

/// Generate phantoms, their degraded LR partners, and the manifest.
pub fn build_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.n_slices < MIN_SLICES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SLICES} slices, got {}",
            cfg.n_slices
        )));
    }
    let mask = central_mask(cfg.size, cfg.size, cfg.factor)?;
    let tags = assign_splits(cfg.n_slices, cfg.seed);
    let mut entries = Vec::with_capacity(cfg.n_slices);
    for (i, split) in tags.into_iter().enumerate() {
        let slice_seed = derive_seed(cfg.seed, STREAM_SLICE + i as u64);
        let hr = phantom_generate(slice_seed, cfg.size, cfg.size, cfg.phase_span_deg)?;
        let lr = degrade(&hr, &mask)?;
        let stem = slice_stem(i);
        write_slice(&hr_path(out_dir, &stem), &SliceData::Complex(hr))?;
        write_slice(&lr_path(out_dir, &stem), &SliceData::Real(lr))?;
        entries.push(ManifestEntry { path: stem, split });
    }
    let manifest = DatasetManifest { entries };
    write_atomic(
        &out_dir.join(DATASET_CONFIG_FILE),
        cfg.to_kv().render().as_bytes(),
    )?;
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// One LR/HR magnitude pair, unnormalized.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub lr: RealImage,
    pub hr: RealImage,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub factor: usize,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let cfg_path = dir.join(DATASET_CONFIG_FILE);
        let factor = if cfg_path.exists() {
            KvConfig::parse(&read_text(&cfg_path)?, &cfg_path)?
                .get_parsed::<usize>("factor")?
                .unwrap_or(DEFAULT_FACTOR)
        } else {
            DEFAULT_FACTOR
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            factor,
        })
    }

    pub fn load_sample(&self, stem: &str) -> Result<Sample> {
        let lr_file = lr_path(&self.dir, stem);
        let lr = match read_slice(&lr_file)? {
            SliceData::Real(img) => img,
            SliceData::Complex(_) => {
                return Err(Error::format(&lr_file, "low-resolution slice must be real"))
            }
        };
        let hr = read_slice(&hr_path(&self.dir, stem))?.magnitude();
        if hr.dims() != lr.dims() {
            return Err(Error::format(&lr_file, format!("LR is {:?} but HR is {:?}", lr.dims(), hr.dims())));
        }
        Ok(Sample {
            name: stem.to_string(),
            lr,
            hr,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.manifest
            .stems(split)
            .map(|s| self.load_sample(s))
            .collect()
    }

    /// The central mask for slices of the given shape.
    pub fn mask_for(&self, height: usize, width: usize) -> Result<SamplingMask> {
        central_mask(height, width, self.factor)
    }
}
