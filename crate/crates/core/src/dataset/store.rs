//! On-disk dataset container.
//!
//! A dataset directory holds `manifest.json` and one blob per split
//! (`train.f32`, `val.f32`, `test.f32`). Blobs are little-endian `f32`,
//! row-major `[N, T, C, H, W]`, each guarded by a CRC-32 in the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ns::{simulate_sequence, NsConfig};
use super::sequence::{ForecastTask, SpatioTemporalSequence};
use super::wave::WaveConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    /// 8/1/1 split by sequence index: `floor(n / 10)` each for validation and
    /// test, the rest for training.
    pub fn from_ratio(n: usize) -> Self {
        let val = n / 10;
        let test = n / 10;
        Self {
            train: n - val - test,
            val,
            test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// First global sequence index of `split`.
    fn offset(&self, split: Split) -> usize {
        match split {
            Split::Train => 0,
            Split::Val => self.train,
            Split::Test => self.train + self.val,
        }
    }
}

/// Generator echo stored in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    NavierStokes(NsConfig),
    Wave(WaveConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub split: Split,
    pub file: String,
    pub sequences: usize,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub format_version: u32,
    pub counts: SplitCounts,
    /// `[T, C, H, W]` of every sequence.
    pub shape: [usize; 4],
    pub input_len: usize,
    pub horizon: usize,
    pub dt: f64,
    /// `max - min` over the training split.
    pub data_range: f64,
    pub generator: GeneratorConfig,
    pub blobs: Vec<BlobInfo>,
}

/// Layout shared by both generators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub counts: SplitCounts,
    pub frames: usize,
    pub input_len: usize,
    pub horizon: usize,
}

impl DatasetLayout {
    pub fn new(n_sequences: usize, frames: usize, input_len: usize, horizon: usize) -> Self {
        Self {
            counts: SplitCounts::from_ratio(n_sequences),
            frames,
            input_len,
            horizon,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.counts.total() == 0 {
            return Err(Error::Config("dataset needs at least one sequence".into()));
        }
        if self.input_len == 0 || self.horizon == 0 || self.input_len + self.horizon > self.frames {
            return Err(Error::Config(format!(
                "input_len {} + horizon {} must be positive and fit in {} frames",
                self.input_len, self.horizon, self.frames
            )));
        }
        Ok(())
    }
}

/// Manifest plus in-memory blobs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    blobs: [Vec<f32>; 3],
}

impl Dataset {
    fn assemble(
        name: &str,
        layout: DatasetLayout,
        channels: usize,
        (h, w): (usize, usize),
        dt: f64,
        generator: GeneratorConfig,
        mut make: impl FnMut(usize) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        layout.validate()?;
        let mut blobs: [Vec<f32>; 3] = Default::default();
        for split in Split::ALL {
            let start = layout.counts.offset(split);
            for i in start..start + layout.counts.get(split) {
                let data = make(i)?;
                // validates finiteness and grid
                SpatioTemporalSequence::new(
                    Tensor::from_vec(&[layout.frames, channels, h, w], data.clone())?,
                    dt,
                )?;
                blobs[split.index()].extend(data.iter().map(|&v| v as f32));
            }
        }
        let range_src = if blobs[0].is_empty() {
            blobs.iter().flatten().copied().collect::<Vec<_>>()
        } else {
            blobs[0].clone()
        };
        let (lo, hi) = range_src
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let data_range = if hi > lo { (hi - lo) as f64 } else { 1.0 };
        let blob_info = Split::ALL
            .iter()
            .map(|&s| BlobInfo {
                split: s,
                file: format!("{}.f32", s.name()),
                sequences: layout.counts.get(s),
                crc32: crc32fast::hash(&to_bytes(&blobs[s.index()])),
            })
            .collect();
        Ok(Self {
            manifest: DatasetManifest {
                name: name.to_string(),
                format_version: FORMAT_VERSION,
                counts: layout.counts,
                shape: [layout.frames, channels, h, w],
                input_len: layout.input_len,
                horizon: layout.horizon,
                dt,
                data_range,
                generator,
                blobs: blob_info,
            },
            blobs,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self, split: Split) -> usize {
        self.manifest.counts.get(split)
    }

    pub fn is_empty(&self, split: Split) -> bool {
        self.len(split) == 0
    }

    pub fn blob(&self, split: Split) -> &[f32] {
        &self.blobs[split.index()]
    }

    pub fn sequence(&self, split: Split, index: usize) -> Result<SpatioTemporalSequence> {
        let [t, c, h, w] = self.manifest.shape;
        let per = t * c * h * w;
        let blob = self.blob(split);
        if index >= self.len(split) {
            return Err(Error::Config(format!(
                "sequence {index} out of range for {} split of {}",
                split.name(),
                self.len(split)
            )));
        }
        let data = blob[index * per..(index + 1) * per]
            .iter()
            .map(|&v| v as f64)
            .collect();
        SpatioTemporalSequence::new(Tensor::from_vec(&[t, c, h, w], data)?, self.manifest.dt)
    }

    pub fn task(&self, split: Split, index: usize) -> Result<ForecastTask> {
        ForecastTask::new(
            self.sequence(split, index)?,
            self.manifest.input_len,
            self.manifest.horizon,
        )
    }

    pub fn tasks(&self, split: Split) -> impl Iterator<Item = Result<ForecastTask>> + '_ {
        (0..self.len(split)).map(move |i| self.task(split, i))
    }

    /// All `(X, Y)` pairs of a split, stacked: `[N, I_l*C, H, W]`, `[N, Δ*C, H, W]`.
    pub fn stacked(&self, split: Split) -> Result<(Tensor, Tensor)> {
        let mut xs = Vec::with_capacity(self.len(split));
        let mut ys = Vec::with_capacity(self.len(split));
        for task in self.tasks(split) {
            let (x, y) = task?.split();
            xs.push(x);
            ys.push(y);
        }
        if xs.is_empty() {
            let [_, c, h, w] = self.manifest.shape;
            return Ok((
                Tensor::zeros(&[0, self.manifest.input_len * c, h, w]),
                Tensor::zeros(&[0, self.manifest.horizon * c, h, w]),
            ));
        }
        Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
    }

    /// CRC-32 of every blob, in split order.
    pub fn checksums(&self) -> Vec<u32> {
        self.manifest.blobs.iter().map(|b| b.crc32).collect()
    }
}

pub fn generate_ns_dataset(cfg: &NsConfig, layout: DatasetLayout) -> Result<Dataset> {
    cfg.validate()?;
    let dt = cfg.dt * cfg.steps_per_frame as f64;
    Dataset::assemble(
        "navier_stokes",
        layout,
        1,
        (cfg.h, cfg.w),
        dt,
        GeneratorConfig::NavierStokes(cfg.clone()),
        |i| simulate_sequence(cfg, i as u64, layout.frames),
    )
}

pub fn generate_wave_dataset(cfg: &WaveConfig, layout: DatasetLayout) -> Result<Dataset> {
    cfg.validate()?;
    Dataset::assemble(
        "wave",
        layout,
        1,
        (cfg.h, cfg.w),
        cfg.dt,
        GeneratorConfig::Wave(cfg.clone()),
        |i| Ok(cfg.sequence(i, layout.frames)),
    )
}

fn to_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for info in &dataset.manifest.blobs {
        let path = dir.join(&info.file);
        fs::write(&path, to_bytes(dataset.blob(info.split))).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&dataset.manifest)
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let per: usize = manifest.shape.iter().product();
    let mut blobs: [Vec<f32>; 3] = Default::default();
    for split in Split::ALL {
        let info = manifest
            .blobs
            .iter()
            .find(|b| b.split == split)
            .ok_or_else(|| Error::Format(format!("manifest lists no {} blob", split.name())))?;
        let blob_path = dir.join(&info.file);
        if !blob_path.exists() {
            return Err(Error::Missing(blob_path));
        }
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let found = crc32fast::hash(&bytes);
        if found != info.crc32 {
            return Err(Error::Checksum {
                blob: info.file.clone(),
                expected: info.crc32,
                found,
            });
        }
        if info.sequences != manifest.counts.get(split) || bytes.len() != info.sequences * per * 4 {
            return Err(Error::Shape(format!(
                "blob {} holds {} bytes, manifest expects {} sequences of {:?}",
                info.file,
                bytes.len(),
                manifest.counts.get(split),
                manifest.shape
            )));
        }
        blobs[split.index()] = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
    }
    Ok(Dataset { manifest, blobs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::wave::WaveMode;

    #[test]
    fn ratio_split_arithmetic() {
        assert_eq!(
            SplitCounts::from_ratio(100),
            SplitCounts {
                train: 80,
                val: 10,
                test: 10
            }
        );
        assert_eq!(SplitCounts::from_ratio(2).train, 2);
    }

    #[test]
    fn wave_dataset_matches_closed_form() {
        let cfg = WaveConfig {
            h: 16,
            w: 16,
            dt: 0.25,
            modes: vec![WaveMode::new(1, 2, 0.75, 0.4)],
        };
        let ds = generate_wave_dataset(&cfg, DatasetLayout::new(3, 5, 2, 3)).unwrap();
        let seq = ds.sequence(Split::Train, 2).unwrap();
        for f in 0..5 {
            let t = (2 * 5 + f) as f64 * 0.25;
            for r in 0..16 {
                for c in 0..16 {
                    let v = seq.data().data()[f * 256 + r * 16 + c];
                    assert!((v - cfg.value(r, c, t) as f32 as f64).abs() == 0.0);
                }
            }
        }
    }

    #[test]
    fn empty_layout_is_rejected() {
        let cfg = WaveConfig::default();
        assert!(generate_wave_dataset(&cfg, DatasetLayout::new(0, 5, 2, 3)).is_err());
        assert!(generate_wave_dataset(&cfg, DatasetLayout::new(2, 4, 2, 3)).is_err());
    }
}
