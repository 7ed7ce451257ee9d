//! Dataset manifests, sequence loading, windowing, batching and the
//! synthetic dataset generator.

pub mod csv_io;
pub mod synth;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rng_stream, streams, Batch};
use crate::skeleton::{MotionSequence, SkeletonSpec};
use crate::tensor::{Rng64, Tensor};

pub use synth::{synth_components, synth_motion, Component, SynthSpec};

/// Which columns of the source files hold the modeled joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnMask {
    /// `"all"` or `"nonzero"`.
    Mode(MaskMode),
    /// Explicit 0-based column indices, in output order.
    Columns(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    All,
    /// Columns that are non-zero somewhere in the referenced files.
    Nonzero,
}

impl Default for ColumnMask {
    fn default() -> Self {
        ColumnMask::Mode(MaskMode::All)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Relative to the manifest's `root`.
    pub path: PathBuf,
    pub action: String,
    pub subject: String,
    /// Explicit test window starts, in frames after downsampling. When
    /// empty, test windows tile the clip with stride `T_f`.
    #[serde(default)]
    pub test_offsets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Directory the file paths are relative to; itself relative to the
    /// manifest file's directory.
    #[serde(default = "default_root")]
    pub root: PathBuf,
    /// Frame interval of the files as stored.
    pub frame_interval_ms: f64,
    #[serde(default = "default_downsample")]
    pub downsample: usize,
    #[serde(default)]
    pub mask: ColumnMask,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub files: Vec<FileEntry>,
}

fn default_root() -> PathBuf {
    PathBuf::from(".")
}

fn default_downsample() -> usize {
    1
}

impl DatasetManifest {
    pub fn from_toml(text: &str) -> Result<DatasetManifest> {
        let m: DatasetManifest = toml::from_str(text).map_err(|e| Error::config("manifest", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest and makes `root` absolute against its directory.
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        if !path.is_file() {
            return Err(Error::config("manifest", format!("{} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = DatasetManifest::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        m.root = dir.join(&m.root);
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_interval_ms > 0.0 && self.frame_interval_ms.is_finite()) {
            return Err(Error::config("manifest.frame_interval_ms", "must be positive"));
        }
        if self.downsample == 0 {
            return Err(Error::config("manifest.downsample", "must be at least 1"));
        }
        if self.files.is_empty() {
            return Err(Error::config("manifest.files", "no files listed"));
        }
        if let Some(s) = self.train_subjects.iter().find(|s| self.test_subjects.contains(s)) {
            return Err(Error::config("manifest.test_subjects", format!("subject `{s}` is also a train subject")));
        }
        for (i, f) in self.files.iter().enumerate() {
            if !self.train_subjects.contains(&f.subject) && !self.test_subjects.contains(&f.subject) {
                return Err(Error::config(
                    format!("manifest.files[{i}].subject"),
                    format!("`{}` is in neither train_subjects nor test_subjects", f.subject),
                ));
            }
        }
        if let ColumnMask::Columns(cols) = &self.mask {
            if cols.is_empty() || cols.len() % 3 != 0 {
                return Err(Error::config(
                    "manifest.mask",
                    format!("{} columns selected, need a positive multiple of 3", cols.len()),
                ));
            }
        }
        Ok(())
    }

    /// Frame interval after downsampling.
    pub fn frame_interval(&self) -> f64 {
        self.frame_interval_ms * self.downsample as f64
    }
}

/// One loaded file.
#[derive(Clone, Debug)]
pub struct Clip {
    pub action: String,
    pub subject: String,
    pub path: PathBuf,
    pub test: bool,
    pub test_offsets: Vec<usize>,
    pub sequence: MotionSequence,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub clips: Vec<Clip>,
    /// Source columns kept, in output order.
    pub columns: Vec<usize>,
}

/// Keeps every `factor`-th frame starting with the first.
pub fn downsample(values: &[f64], width: usize, factor: usize) -> Vec<f64> {
    values
        .chunks_exact(width)
        .step_by(factor.max(1))
        .flat_map(|row| row.iter().copied())
        .collect()
}

/// Selects `columns` from every row.
pub fn select_columns(values: &[f64], width: usize, columns: &[usize]) -> Vec<f64> {
    values
        .chunks_exact(width)
        .flat_map(|row| columns.iter().map(move |&c| row[c]))
        .collect()
}

/// Reads, masks and downsamples every file of a manifest, in file order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let mut tables = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        let path = manifest.root.join(&f.path);
        if !path.is_file() {
            return Err(Error::config("manifest.files", format!("{} does not exist", path.display())));
        }
        tables.push((path.clone(), csv_io::read_table(&path)?));
    }
    let width = tables[0].1.columns;
    if let Some((path, t)) = tables.iter().find(|(_, t)| t.columns != width) {
        return Err(Error::Parse {
            path: path.clone(),
            line: 1,
            msg: format!("{} columns, other files have {width}", t.columns),
        });
    }
    let columns: Vec<usize> = match &manifest.mask {
        ColumnMask::Mode(MaskMode::All) => (0..width).collect(),
        ColumnMask::Mode(MaskMode::Nonzero) => (0..width)
            .filter(|&c| {
                tables
                    .iter()
                    .any(|(_, t)| t.values.chunks_exact(width).any(|row| row[c] != 0.0))
            })
            .collect(),
        ColumnMask::Columns(cols) => {
            if let Some(&c) = cols.iter().find(|&&c| c >= width) {
                return Err(Error::config("manifest.mask", format!("column {c} beyond the {width} in the files")));
            }
            cols.clone()
        }
    };
    if columns.is_empty() || columns.len() % 3 != 0 {
        return Err(Error::config(
            "manifest.mask",
            format!("{} columns selected, need a positive multiple of 3", columns.len()),
        ));
    }
    let joints = columns.len() / 3;
    let interval = manifest.frame_interval();
    let clips = manifest
        .files
        .iter()
        .zip(tables)
        .map(|(f, (path, table))| {
            let masked = select_columns(&table.values, width, &columns);
            let values = downsample(&masked, columns.len(), manifest.downsample);
            let frames = values.len() / columns.len();
            let sequence = MotionSequence::new(values, frames, joints, interval)?;
            Ok(Clip {
                action: f.action.clone(),
                subject: f.subject.clone(),
                path,
                test: manifest.test_subjects.contains(&f.subject),
                test_offsets: f.test_offsets.clone(),
                sequence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { clips, columns })
}

/// An observed window with the frames that follow it.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    /// `[T_h][M][3]`
    pub input: Vec<f64>,
    /// `[T_f][M][3]`
    pub target: Vec<f64>,
    pub joints: usize,
    pub action: String,
    /// Index of the source clip.
    pub clip: usize,
    /// First input frame in the source.
    pub offset: usize,
}

impl WindowedSample {
    pub fn input_frames(&self) -> usize {
        self.input.len() / (self.joints * 3)
    }

    pub fn target_frames(&self) -> usize {
        self.target.len() / (self.joints * 3)
    }

    /// Last observed pose, `[M][3]`.
    pub fn last_pose(&self) -> &[f64] {
        let w = self.joints * 3;
        &self.input[self.input.len() - w..]
    }
}

fn window_at(seq: &MotionSequence, input_frames: usize, target_frames: usize, start: usize) -> WindowedSample {
    let w = seq.joints * 3;
    let split = (start + input_frames) * w;
    WindowedSample {
        input: seq.values[start * w..split].to_vec(),
        target: seq.values[split..split + target_frames * w].to_vec(),
        joints: seq.joints,
        action: String::new(),
        clip: 0,
        offset: start,
    }
}

/// Sliding windows at `stride`, in order of their start frame. A sequence
/// shorter than `T_h + T_f` yields no windows.
pub fn make_windows(
    seq: &MotionSequence,
    input_frames: usize,
    target_frames: usize,
    stride: usize,
) -> Result<Vec<WindowedSample>> {
    if stride == 0 || input_frames == 0 || target_frames == 0 {
        return Err(Error::Contract(format!(
            "windowing needs positive lengths and stride, got T_h {input_frames}, T_f {target_frames}, stride {stride}"
        )));
    }
    let span = input_frames + target_frames;
    if seq.frames < span {
        return Ok(Vec::new());
    }
    Ok((0..=seq.frames - span)
        .step_by(stride)
        .map(|start| window_at(seq, input_frames, target_frames, start))
        .collect())
}

/// Windows starting at explicit offsets.
pub fn windows_at(
    seq: &MotionSequence,
    input_frames: usize,
    target_frames: usize,
    offsets: &[usize],
) -> Result<Vec<WindowedSample>> {
    offsets
        .iter()
        .map(|&start| {
            if start + input_frames + target_frames > seq.frames {
                return Err(Error::config(
                    "manifest.files.test_offsets",
                    format!(
                        "offset {start} needs {} frames, clip has {}",
                        start + input_frames + target_frames,
                        seq.frames
                    ),
                ));
            }
            Ok(window_at(seq, input_frames, target_frames, start))
        })
        .collect()
}

impl Dataset {
    pub fn joints(&self) -> usize {
        self.columns.len() / 3
    }

    pub fn frame_interval_ms(&self) -> f64 {
        self.clips.first().map(|c| c.sequence.frame_interval_ms).unwrap_or(0.0)
    }

    fn tag(&self, clip: usize, mut windows: Vec<WindowedSample>) -> Vec<WindowedSample> {
        for w in &mut windows {
            w.clip = clip;
            w.action = self.clips[clip].action.clone();
        }
        windows
    }

    /// Training windows at `stride`, clips in file order.
    pub fn train_windows(&self, input_frames: usize, target_frames: usize, stride: usize) -> Result<Vec<WindowedSample>> {
        let mut out = Vec::new();
        for (i, clip) in self.clips.iter().enumerate().filter(|(_, c)| !c.test) {
            let w = make_windows(&clip.sequence, input_frames, target_frames, stride)?;
            out.extend(self.tag(i, w));
        }
        Ok(out)
    }

    /// Test windows: explicit offsets where given, otherwise non-overlapping
    /// windows with stride `T_f`.
    pub fn test_windows(&self, input_frames: usize, target_frames: usize) -> Result<Vec<WindowedSample>> {
        let mut out = Vec::new();
        for (i, clip) in self.clips.iter().enumerate().filter(|(_, c)| c.test) {
            let w = if clip.test_offsets.is_empty() {
                make_windows(&clip.sequence, input_frames, target_frames, target_frames)?
            } else {
                windows_at(&clip.sequence, input_frames, target_frames, &clip.test_offsets)?
            };
            out.extend(self.tag(i, w));
        }
        Ok(out)
    }
}

/// Stacks samples into a model batch.
pub fn stack(samples: &[&WindowedSample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("cannot stack an empty batch".into()))?;
    let (m, th, tf) = (first.joints, first.input_frames(), first.target_frames());
    if samples
        .iter()
        .any(|s| s.joints != m || s.input_frames() != th || s.target_frames() != tf)
    {
        return Err(Error::Contract("batch samples differ in shape".into()));
    }
    let input: Vec<f64> = samples.iter().flat_map(|s| s.input.iter().copied()).collect();
    let target: Vec<f64> = samples.iter().flat_map(|s| s.target.iter().copied()).collect();
    let b = samples.len();
    Ok(Batch {
        input: Tensor::new(input, &[b, th, m, 3])?,
        target: Tensor::new(target, &[b, tf, m, 3])?,
    })
}

/// Epoch-wise shuffled mini-batches. Each epoch visits every sample once
/// in a fresh random order; a short remainder is dropped.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: Rng64,
}

impl BatchSampler {
    /// Batches of `min(batch_size, samples)` drawn with the batch stream of
    /// `seed`.
    pub fn new(samples: usize, batch_size: usize, seed: u64) -> Result<BatchSampler> {
        if samples == 0 {
            return Err(Error::Contract("no training samples".into()));
        }
        if batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        let batch = batch_size.min(samples);
        Ok(BatchSampler {
            order: (0..samples).collect(),
            pos: samples,
            batch,
            rng: rng_stream(seed, streams::BATCHES),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }

    pub fn next_batch(&mut self, samples: &[WindowedSample]) -> Result<Batch> {
        let idx = self.next_indices();
        let refs: Vec<&WindowedSample> = idx.iter().map(|&i| &samples[i]).collect();
        stack(&refs)
    }
}

/// A synthetic dataset: generator settings plus the train/test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDatasetSpec {
    pub seed: u64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub generator: SynthSpec,
}

impl Default for SynthDatasetSpec {
    fn default() -> Self {
        SynthDatasetSpec {
            seed: 0,
            train_sequences: 8,
            test_sequences: 0,
            generator: SynthSpec::default(),
        }
    }
}

pub const SYNTH_TRAIN_SUBJECT: &str = "train";
pub const SYNTH_TEST_SUBJECT: &str = "test";

impl SynthDatasetSpec {
    pub fn from_toml(text: &str) -> Result<SynthDatasetSpec> {
        toml::from_str(text).map_err(|e| Error::config("synth", e.to_string()))
    }

    /// Per-sequence seeds from the data stream of `seed`; train sequences first.
    fn sequence_seeds(&self) -> Vec<u64> {
        let mut rng = rng_stream(self.seed, streams::DATA);
        (0..self.train_sequences + self.test_sequences).map(|_| rng.gen()).collect()
    }

    /// Generates the dataset in memory.
    pub fn generate(&self) -> Result<Dataset> {
        if self.train_sequences + self.test_sequences == 0 {
            return Err(Error::config("synth.train_sequences", "no sequences requested"));
        }
        let clips = self
            .sequence_seeds()
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let test = i >= self.train_sequences;
                Ok(Clip {
                    action: "synthetic".into(),
                    subject: if test { SYNTH_TEST_SUBJECT } else { SYNTH_TRAIN_SUBJECT }.into(),
                    path: PathBuf::from(Self::file_name(i, test, self.train_sequences)),
                    test,
                    test_offsets: Vec::new(),
                    sequence: synth_motion(&self.generator, s)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            clips,
            columns: (0..self.generator.joints * 3).collect(),
        })
    }

    fn file_name(i: usize, test: bool, train: usize) -> String {
        if test {
            format!("test/seq_{:04}.csv", i - train)
        } else {
            format!("train/seq_{i:04}.csv")
        }
    }

    /// Writes the sequences as CSV files plus `manifest.toml` into `dir`
    /// and returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let data = self.generate()?;
        let joints = self.generator.joints;
        let names: Vec<String> = if joints == 20 {
            SkeletonSpec::default_h36m().joint_names
        } else {
            (0..joints).map(|j| format!("j{j}")).collect()
        };
        let header = csv_io::joint_header(&names);
        let mut files = Vec::with_capacity(data.clips.len());
        for clip in &data.clips {
            let path = dir.join(&clip.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            csv_io::write_sequence(&path, &header, &clip.sequence.values)?;
            files.push(FileEntry {
                path: clip.path.clone(),
                action: clip.action.clone(),
                subject: clip.subject.clone(),
                test_offsets: Vec::new(),
            });
        }
        let manifest = DatasetManifest {
            root: default_root(),
            frame_interval_ms: self.generator.frame_interval_ms,
            downsample: 1,
            mask: ColumnMask::default(),
            train_subjects: vec![SYNTH_TRAIN_SUBJECT.into()],
            test_subjects: vec![SYNTH_TEST_SUBJECT.into()],
            files,
        };
        let path = dir.join("manifest.toml");
        std::fs::write(&path, manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
        let spec_path = dir.join("synth.toml");
        let spec = toml::to_string(self).expect("synth spec serializes");
        std::fs::write(&spec_path, spec).map_err(|e| Error::io(&spec_path, e))?;
        Ok(path)
    }
}
