//! Corpus loading: Speech-Commands directory trees, JSON-lines manifests with keyword
//! timestamps, and a synthetic chirp corpus for offline runs.
//!
//! Manifest format (one JSON object per line, paths relative to the manifest file):
//!
//! ```text
//! {"classes":["go","stop"],"sample_rate":16000,"clip_seconds":1.0}
//! {"path":"go/a.wav","label":"go","t_begin":0.12,"t_end":0.71,"split":"train"}
//! {"path":"stop/b.wav","label":"stop","split":"test"}
//! ```
//!
//! The header line is optional. Without it the classes are the sorted distinct labels,
//! at 16 kHz with 1 s clips.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav};
use crate::error::{Error, Result};
use crate::features::FbankExtractor;
use crate::training::Example;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// As written in the manifest; resolve with [`Manifest::audio_path`].
    pub audio_path: PathBuf,
    pub label: usize,
    pub t_begin: Option<f64>,
    pub t_end: Option<f64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub samples: Vec<Sample>,
    pub classes: Vec<String>,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    /// Directory that relative audio paths are resolved against.
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
    #[serde(default = "default_rate")]
    sample_rate: u32,
    #[serde(default = "default_clip")]
    clip_seconds: f64,
}

fn default_rate() -> u32 {
    16000
}

fn default_clip() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    path: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_begin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_end: Option<f64>,
    split: Split,
}

impl Manifest {
    pub fn audio_path(&self, sample: &Sample) -> PathBuf {
        self.base_dir.join(&sample.audio_path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> + '_ {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn n_samples(&self) -> usize {
        (self.sample_rate as f64 * self.clip_seconds).round() as usize
    }

    /// Reads a sample's audio, zero-padding short clips to the full clip length.
    pub fn load_audio(&self, sample: &Sample) -> Result<Vec<f64>> {
        let path = self.audio_path(sample);
        let mut audio = read_wav(&path, self.sample_rate)?;
        let want = self.n_samples();
        if audio.len() > want {
            return Err(Error::AudioFormat {
                path,
                reason: format!("{} samples, longer than the {want}-sample clip", audio.len()),
            });
        }
        audio.resize(want, 0.0);
        Ok(audio)
    }

    /// Checks labels, timestamps, unique class names and disjoint splits.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for c in &self.classes {
            if !names.insert(c) {
                return Err(Error::Dataset(format!("duplicate class name '{c}'")));
            }
        }
        let mut seen: HashMap<&Path, Split> = HashMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            check_sample(s, self.classes.len(), self.clip_seconds)
                .map_err(|reason| Error::Dataset(format!("sample {i}: {reason}")))?;
            if let Some(prev) = seen.insert(&s.audio_path, s.split) {
                if prev != s.split {
                    return Err(Error::Dataset(format!(
                        "{} appears in both {} and {}",
                        s.audio_path.display(),
                        prev.name(),
                        s.split.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the manifest (with header line) as JSON lines.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            classes: self.classes.clone(),
            sample_rate: self.sample_rate,
            clip_seconds: self.clip_seconds,
        };
        let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
        put(serde_json::to_string(&header)?)?;
        for s in &self.samples {
            put(serde_json::to_string(&Line {
                path: s.audio_path.to_string_lossy().replace('\\', "/"),
                label: self.classes[s.label].clone(),
                t_begin: s.t_begin,
                t_end: s.t_end,
                split: s.split,
            })?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_sample(s: &Sample, n_classes: usize, clip: f64) -> std::result::Result<(), String> {
    if s.label >= n_classes {
        return Err(format!("label {} out of range for {n_classes} classes", s.label));
    }
    match (s.t_begin, s.t_end) {
        (None, None) => Ok(()),
        (Some(b), Some(e)) => {
            if b.is_finite() && e.is_finite() && 0.0 <= b && b < e && e <= clip {
                Ok(())
            } else {
                Err(format!(
                    "timestamps t_begin={b} t_end={e} must satisfy 0 <= t_begin < t_end <= {clip}"
                ))
            }
        }
        _ => Err("t_begin and t_end must be given together".into()),
    }
}

/// Parses a JSON-lines manifest. Errors carry the 1-based line number.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let at = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut header: Option<Header> = None;
    let mut lines: Vec<(usize, Line)> = Vec::new();
    for (i, text) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| at(n, format!("malformed JSON: {e}")))?;
        if value.get("classes").is_some() {
            if header.is_some() || !lines.is_empty() {
                return Err(at(n, "header must be the first line".into()));
            }
            header = Some(serde_json::from_value(value).map_err(|e| at(n, e.to_string()))?);
        } else {
            lines.push((n, serde_json::from_value(value).map_err(|e| at(n, e.to_string()))?));
        }
    }

    let header = header.unwrap_or_else(|| Header {
        classes: lines
            .iter()
            .map(|(_, l)| l.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        sample_rate: default_rate(),
        clip_seconds: default_clip(),
    });
    let index: HashMap<&str, usize> = header
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut samples = Vec::with_capacity(lines.len());
    for (n, line) in &lines {
        let label = *index
            .get(line.label.as_str())
            .ok_or_else(|| at(*n, format!("unknown class '{}'", line.label)))?;
        let sample = Sample {
            audio_path: PathBuf::from(&line.path),
            label,
            t_begin: line.t_begin,
            t_end: line.t_end,
            split: line.split,
        };
        check_sample(&sample, header.classes.len(), header.clip_seconds).map_err(|r| at(*n, r))?;
        samples.push(sample);
    }
    let manifest = Manifest {
        samples,
        classes: header.classes,
        sample_rate: header.sample_rate,
        clip_seconds: header.clip_seconds,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    manifest.validate()?;
    Ok(manifest)
}

fn read_list(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.replace('\\', "/"))
        .collect())
}

/// Loads a Speech Commands tree: one directory per keyword, split by
/// `validation_list.txt` and `testing_list.txt`. Directories starting with `_` are skipped.
pub fn load_gsc(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} is not a directory", root.display())));
    }
    let val = read_list(&root.join("validation_list.txt"))?;
    let test = read_list(&root.join("testing_list.txt"))?;

    let mut classes: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|name| !name.starts_with('_') && !name.starts_with('.'))
        .collect();
    classes.sort();

    let mut samples = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        let mut files: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|f| f.to_ascii_lowercase().ends_with(".wav"))
            .collect();
        files.sort();
        for file in files {
            let rel = format!("{class}/{file}");
            hound::WavReader::open(root.join(&rel)).map_err(|source| Error::Wav {
                path: root.join(&rel),
                source,
            })?;
            let split = if test.contains(&rel) {
                Split::Test
            } else if val.contains(&rel) {
                Split::Val
            } else {
                Split::Train
            };
            samples.push(Sample {
                audio_path: PathBuf::from(rel),
                label,
                t_begin: None,
                t_end: None,
                split,
            });
        }
    }
    let manifest = Manifest {
        samples,
        classes,
        sample_rate: 16000,
        clip_seconds: 1.0,
        base_dir: root.to_path_buf(),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Decodes and featurizes `samples` in parallel, keeping their order.
pub fn examples(manifest: &Manifest, samples: &[&Sample], extractor: &FbankExtractor) -> Result<Vec<Example>> {
    samples
        .par_iter()
        .map(|s| {
            let audio = manifest.load_audio(s)?;
            Ok(Example {
                features: extractor.compute(&audio)?,
                label: s.label,
            })
        })
        .collect()
}

/// Parameters of the synthetic chirp corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub sample_rate: u32,
    pub min_duration: f64,
    pub max_duration: f64,
    pub amplitude: f64,
    pub noise: f64,
    /// Fractions of each class assigned to validation and test; the rest trains.
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            per_class: 200,
            sample_rate: 16000,
            min_duration: 0.4,
            max_duration: 1.0,
            amplitude: 0.5,
            noise: 0.01,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    /// Linear chirp band of class `k`: 300+60k Hz up to 600+60k Hz.
    pub fn chirp_band(k: usize) -> (f64, f64) {
        (300.0 + 60.0 * k as f64, 600.0 + 60.0 * k as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.per_class == 0 {
            return Err(Error::Config("synth: need n_classes >= 2 and per_class >= 1".into()));
        }
        let top = Self::chirp_band(self.n_classes - 1).1;
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "synth: chirp of class {} reaches {top} Hz, above Nyquist",
                self.n_classes - 1
            )));
        }
        if !(0.0 < self.min_duration && self.min_duration <= self.max_duration && self.max_duration <= 1.0) {
            return Err(Error::Config("synth: need 0 < min_duration <= max_duration <= 1".into()));
        }
        if !(self.val_fraction >= 0.0 && self.test_fraction >= 0.0 && self.val_fraction + self.test_fraction < 1.0) {
            return Err(Error::Config("synth: val_fraction + test_fraction must be < 1".into()));
        }
        Ok(())
    }
}

/// One clip: noise floor plus class `k`'s chirp starting at `onset` for `len` samples.
fn synth_clip(k: usize, onset: usize, len: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let (f0, f1) = SynthConfig::chirp_band(k);
    let duration = len as f64 / sr;
    let mut clip: Vec<f64> = (0..cfg.sample_rate as usize)
        .map(|_| rng.random_range(-cfg.noise..=cfg.noise))
        .collect();
    for n in 0..len {
        let tau = n as f64 / sr;
        let phase = 2.0 * PI * (f0 * tau + (f1 - f0) * tau * tau / (2.0 * duration));
        clip[onset + n] += cfg.amplitude * phase.sin();
    }
    clip
}

/// Generates the corpus under `out_dir` (`class{k}/class{k}_{i}.wav` plus
/// `manifest.jsonl`). The same seed always yields byte-identical files.
pub fn synth_dataset(cfg: &SynthConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = cfg.sample_rate as usize;
    let n_val = (cfg.per_class as f64 * cfg.val_fraction).round() as usize;
    let n_test = (cfg.per_class as f64 * cfg.test_fraction).round() as usize;

    let classes: Vec<String> = (0..cfg.n_classes).map(|k| format!("class{k}")).collect();
    let mut samples = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for (k, class) in classes.iter().enumerate() {
        let dir = out_dir.join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut splits: Vec<Split> = (0..cfg.per_class)
            .map(|i| {
                if i < n_test {
                    Split::Test
                } else if i < n_test + n_val {
                    Split::Val
                } else {
                    Split::Train
                }
            })
            .collect();
        splits.shuffle(&mut rng);
        for (i, split) in splits.into_iter().enumerate() {
            let duration = rng.random_range(cfg.min_duration..=cfg.max_duration);
            let len = ((duration * sr as f64).round() as usize).clamp(1, sr);
            let onset = rng.random_range(0..=sr - len);
            let clip = synth_clip(k, onset, len, cfg, &mut rng);
            let rel = format!("{class}/{class}_{i:04}.wav");
            write_wav(out_dir.join(&rel), &clip, cfg.sample_rate)?;
            samples.push(Sample {
                audio_path: PathBuf::from(rel),
                label: k,
                t_begin: Some(onset as f64 / sr as f64),
                t_end: Some((onset + len) as f64 / sr as f64),
                split,
            });
        }
    }
    let manifest = Manifest {
        samples,
        classes,
        sample_rate: cfg.sample_rate,
        clip_seconds: 1.0,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Endless stream of sample indices with every class equally likely.
#[derive(Clone, Debug)]
pub struct ClassBalancedSampler {
    by_class: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl ClassBalancedSampler {
    /// Draws from the training split; every class must have at least one training sample.
    pub fn new(manifest: &Manifest, seed: u64) -> Result<Self> {
        let mut by_class = vec![Vec::new(); manifest.classes.len()];
        for (i, s) in manifest.samples.iter().enumerate() {
            if s.split == Split::Train {
                by_class[s.label].push(i);
            }
        }
        if let Some(k) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Dataset(format!(
                "class '{}' has no training samples",
                manifest.classes[k]
            )));
        }
        Ok(Self::with_groups(by_class, seed))
    }

    /// Balances over the distinct values of `labels`; yields positions into `labels`.
    pub fn from_labels(labels: &[usize], seed: u64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Dataset("no samples to draw from".into()));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class.retain(|g| !g.is_empty());
        Ok(Self::with_groups(by_class, seed))
    }

    fn with_groups(by_class: Vec<Vec<usize>>, seed: u64) -> Self {
        Self {
            by_class,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Iterator for ClassBalancedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let group = &self.by_class[self.rng.random_range(0..self.by_class.len())];
        Some(group[self.rng.random_range(0..group.len())])
    }
}
