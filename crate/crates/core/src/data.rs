//! Samples, synthetic generation, padding and the on-disk feature format.
//!
//! A dataset directory holds `manifest.json` plus one raw file per feature
//! matrix: row-major, little-endian, no header, 8 bytes per value (or 4
//! when the manifest says `"precision": "f32"`).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Ternary label space: normal, mild, severe.
pub const TERNARY_CLASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    pub visual: usize,
    pub audio: usize,
    pub personality: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        FeatureDims {
            visual: 2048,
            audio: 1024,
            personality: 768,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventFeatures {
    /// `T × visual`
    pub visual: Tensor,
    /// `T × audio`
    pub audio: Tensor,
}

impl EventFeatures {
    pub fn frames(&self) -> usize {
        self.visual.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub events: Vec<EventFeatures>,
    /// `S × personality`
    pub personality: Tensor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<serde_json::Value>,
}

impl Sample {
    pub fn max_frames(&self) -> usize {
        self.events.iter().map(EventFeatures::frames).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub events: usize,
    pub dims: FeatureDims,
    pub samples: Vec<Sample>,
    pub generator: Option<GeneratorSpec>,
}

impl Dataset {
    /// Checks event counts, shapes, labels, finiteness and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {}", s.id)));
            }
            if s.label >= TERNARY_CLASSES {
                return Err(Error::InvalidArgument(format!(
                    "sample {}: label {} outside 0..3",
                    s.id, s.label
                )));
            }
            if s.events.len() != self.events {
                return Err(Error::InvalidArgument(format!(
                    "sample {}: {} events, expected {}",
                    s.id,
                    s.events.len(),
                    self.events
                )));
            }
            for e in &s.events {
                let t = e.visual.rows();
                if e.visual.shape() != [t, self.dims.visual] || e.audio.shape() != [t, self.dims.audio] {
                    return Err(Error::InvalidArgument(format!(
                        "sample {}: event shapes {:?} / {:?} do not match dims {:?}",
                        s.id,
                        e.visual.shape(),
                        e.audio.shape(),
                        self.dims
                    )));
                }
            }
            if s.personality.cols() != self.dims.personality {
                return Err(Error::InvalidArgument(format!(
                    "sample {}: personality width {} != {}",
                    s.id,
                    s.personality.cols(),
                    self.dims.personality
                )));
            }
            let finite =
                s.personality.is_finite() && s.events.iter().all(|e| e.visual.is_finite() && e.audio.is_finite());
            if !finite {
                return Err(Error::NonFiniteFeature {
                    sample: s.id.clone(),
                    path: PathBuf::new(),
                });
            }
        }
        Ok(())
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Stratified, subject-disjoint split. Each class contributes
    /// `round(fraction · n_c)` samples to validation, clamped so both sides
    /// keep at least one sample of the class.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {validation_fraction} outside (0, 1)"
            )));
        }
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            by_class.entry(s.label).or_default().push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut val_idx = Vec::new();
        for idx in by_class.values_mut() {
            idx.shuffle(&mut rng);
            if idx.len() < 2 {
                continue;
            }
            let n = ((validation_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            val_idx.extend_from_slice(&idx[..n]);
        }
        val_idx.sort_unstable();
        let is_val: HashSet<usize> = val_idx.iter().copied().collect();
        let pick = |val: bool| Dataset {
            events: self.events,
            dims: self.dims,
            samples: self
                .samples
                .iter()
                .enumerate()
                .filter(|(i, _)| is_val.contains(i) == val)
                .map(|(_, s)| s.clone())
                .collect(),
            generator: self.generator.clone(),
        };
        let (train, val) = (pick(false), pick(true));
        if train.samples.is_empty() || val.samples.is_empty() {
            return Err(Error::InvalidArgument(
                "split leaves an empty train or validation set".into(),
            ));
        }
        Ok((train, val))
    }
}

/// Maps normal → 0 and mild/severe → 1.
pub fn collapse_labels_binary(mut dataset: Dataset) -> Dataset {
    for s in &mut dataset.samples {
        s.label = usize::from(s.label > 0);
    }
    dataset
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    /// `padded[t] = original[t mod T]`
    #[default]
    Cyclic,
    /// Repeats the final frame.
    LastFrame,
}

/// Extends a `T × D` matrix to `target` rows.
pub fn pad_rows(x: &Tensor, target: usize, mode: PadMode) -> Result<Tensor> {
    let (t, d) = (x.rows(), x.cols());
    if target < t {
        return Err(Error::InvalidArgument(format!(
            "cannot pad {t} frames down to {target}"
        )));
    }
    let mut data = Vec::with_capacity(target * d);
    for r in 0..target {
        let src = match mode {
            PadMode::Cyclic => r % t,
            PadMode::LastFrame => r.min(t - 1),
        };
        data.extend_from_slice(x.row_slice(src));
    }
    Tensor::new(vec![target, d], data)
}

/// Pads every event of `sample` to `target` frames.
pub fn pad_events(sample: &Sample, target: usize, mode: PadMode) -> Result<Sample> {
    let events = sample
        .events
        .iter()
        .map(|e| {
            Ok(EventFeatures {
                visual: pad_rows(&e.visual, target, mode)?,
                audio: pad_rows(&e.audio, target, mode)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::InvalidArgument(format!("sample {}: {e}", sample.id)))?;
    Ok(Sample {
        events,
        ..sample.clone()
    })
}

/// Parameters of the synthetic generator.
///
/// Every frame of event `k` for a subject of class `c` is
/// `(1 + personality_signal·z)·(class_signal·(c − 1)·u + event_signal·(1 + ¼a)·e_k) + noise·ε`
/// per modality, where `u` is a class direction shared by all events,
/// `e_k` an event direction, `z ~ U(−1, 1)` the subject's trait (also
/// written into the personality tokens), `a ~ N(0, 1)` per (subject,
/// event) and `ε ~ N(0, I)` per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub subjects_per_class: [usize; 3],
    pub events: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub dims: FeatureDims,
    pub personality_tokens: usize,
    pub class_signal: f64,
    pub event_signal: f64,
    pub personality_signal: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            subjects_per_class: [20, 20, 20],
            events: 3,
            min_frames: 8,
            max_frames: 20,
            dims: FeatureDims::default(),
            personality_tokens: 4,
            class_signal: 4.0,
            event_signal: 4.0,
            personality_signal: 0.2,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.subjects_per_class.iter().any(|&n| n < 2) {
            return bad(format!(
                "need at least 2 subjects per class, got {:?}",
                self.subjects_per_class
            ));
        }
        if self.events < 2 {
            return bad(format!("need at least 2 events, got {}", self.events));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!("bad frame range {}..={}", self.min_frames, self.max_frames));
        }
        let d = self.dims;
        if d.visual == 0 || d.audio == 0 || d.personality == 0 || self.personality_tokens == 0 {
            return bad("feature dims and personality tokens must be positive".into());
        }
        let strengths = [
            self.class_signal,
            self.event_signal,
            self.personality_signal,
            self.noise,
        ];
        if strengths.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("signal strengths must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Unit directions planted by the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedDirections {
    pub class_visual: Vec<f64>,
    pub class_audio: Vec<f64>,
    pub event_visual: Vec<Vec<f64>>,
    pub event_audio: Vec<Vec<f64>>,
    pub personality: Vec<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

impl PlantedDirections {
    fn draw(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Self {
        let d = spec.dims;
        PlantedDirections {
            class_visual: unit_vector(rng, d.visual),
            class_audio: unit_vector(rng, d.audio),
            event_visual: (0..spec.events).map(|_| unit_vector(rng, d.visual)).collect(),
            event_audio: (0..spec.events).map(|_| unit_vector(rng, d.audio)).collect(),
            personality: unit_vector(rng, d.personality),
        }
    }

    /// Directions for `spec`, reproduced from its seed.
    pub fn for_spec(spec: &GeneratorSpec) -> Self {
        Self::draw(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
    }
}

fn planted_frames(
    rng: &mut ChaCha8Rng,
    frames: usize,
    class_dir: &[f64],
    event_dir: &[f64],
    class_amp: f64,
    event_amp: f64,
    scale: f64,
    noise: f64,
) -> Tensor {
    let d = class_dir.len();
    let mut data = Vec::with_capacity(frames * d);
    for _ in 0..frames {
        for j in 0..d {
            let eps: f64 = rng.sample(StandardNormal);
            data.push(scale * (class_amp * class_dir[j] + event_amp * event_dir[j]) + noise * eps);
        }
    }
    Tensor::matrix(frames, d, data)
}

/// Draws a dataset; identical specs give identical datasets.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = PlantedDirections::draw(spec, &mut rng);
    let mut samples = Vec::new();
    for (class, &count) in spec.subjects_per_class.iter().enumerate() {
        for _ in 0..count {
            let id = format!("s{:03}", samples.len());
            let z: f64 = rng.random_range(-1.0..=1.0);
            let scale = 1.0 + spec.personality_signal * z;
            let class_amp = spec.class_signal * (class as f64 - 1.0);
            let mut events = Vec::with_capacity(spec.events);
            for k in 0..spec.events {
                let frames = rng.random_range(spec.min_frames..=spec.max_frames);
                let a: f64 = rng.sample(StandardNormal);
                let event_amp = spec.event_signal * (1.0 + 0.25 * a);
                let visual = planted_frames(
                    &mut rng,
                    frames,
                    &dirs.class_visual,
                    &dirs.event_visual[k],
                    class_amp,
                    event_amp,
                    scale,
                    spec.noise,
                );
                let audio = planted_frames(
                    &mut rng,
                    frames,
                    &dirs.class_audio,
                    &dirs.event_audio[k],
                    class_amp,
                    event_amp,
                    scale,
                    spec.noise,
                );
                events.push(EventFeatures { visual, audio });
            }
            let dp = spec.dims.personality;
            let mut tokens = Vec::with_capacity(spec.personality_tokens * dp);
            for _ in 0..spec.personality_tokens {
                for j in 0..dp {
                    let eps: f64 = rng.sample(StandardNormal);
                    tokens.push(2.0 * z * dirs.personality[j] + spec.noise * eps);
                }
            }
            samples.push(Sample {
                id,
                label: class,
                events,
                personality: Tensor::matrix(spec.personality_tokens, dp, tokens),
                demographics: None,
            });
        }
    }
    Ok(Dataset {
        events: spec.events,
        dims: spec.dims,
        samples,
        generator: Some(spec.clone()),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample mean projection of all frames onto the planted class
/// directions (visual and audio averaged).
pub fn planted_projection(dataset: &Dataset, dirs: &PlantedDirections) -> Vec<f64> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let mut total = 0.0;
            let mut n = 0usize;
            for e in &s.events {
                for t in 0..e.frames() {
                    total += 0.5
                        * (dot(e.visual.row_slice(t), &dirs.class_visual)
                            + dot(e.audio.row_slice(t), &dirs.class_audio));
                    n += 1;
                }
            }
            total / n as f64
        })
        .collect()
}

/// Training accuracy of a multinomial logistic regression on one scalar
/// feature per sample, fitted by full-batch gradient descent.
pub fn logistic_accuracy(features: &[f64], labels: &[usize], classes: usize) -> f64 {
    let n = features.len() as f64;
    let mean = features.iter().sum::<f64>() / n;
    let std = (features.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    let x: Vec<f64> = features.iter().map(|f| (f - mean) / std).collect();
    let mut w = vec![0.0; classes];
    let mut b = vec![0.0; classes];
    let probs = |w: &[f64], b: &[f64], xi: f64| -> Vec<f64> {
        let z: Vec<f64> = (0..classes).map(|c| w[c] * xi + b[c]).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    for _ in 0..2000 {
        let mut gw = vec![0.0; classes];
        let mut gb = vec![0.0; classes];
        for (&xi, &yi) in x.iter().zip(labels) {
            let p = probs(&w, &b, xi);
            for c in 0..classes {
                let r = p[c] - f64::from(u8::from(c == yi));
                gw[c] += r * xi / n;
                gb[c] += r / n;
            }
        }
        for c in 0..classes {
            w[c] -= 0.5 * gw[c];
            b[c] -= 0.5 * gb[c];
        }
    }
    let correct = x
        .iter()
        .zip(labels)
        .filter(|(&xi, &yi)| crate::disentangle::argmax(&probs(&w, &b, xi)) == yi)
        .count();
    correct as f64 / n
}

/// Separability self-test: logistic accuracy on the planted class
/// projection of a generated dataset.
pub fn planted_signal_accuracy(dataset: &Dataset) -> Result<f64> {
    let spec = dataset
        .generator
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset carries no generator spec".into()))?;
    let dirs = PlantedDirections::for_spec(spec);
    let feats = planted_projection(dataset, &dirs);
    let labels: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();
    Ok(logistic_accuracy(&feats, &labels, TERNARY_CLASSES))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    pub fn width(self) -> u64 {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    #[serde(rename = "K")]
    pub events: usize,
    pub dims: FeatureDims,
    #[serde(default)]
    pub precision: Precision,
    /// Sample count per ternary class.
    pub classes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    pub samples: Vec<SampleRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub label: usize,
    pub events: Vec<EventRecord>,
    pub personality: PersonalityRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    #[serde(rename = "T")]
    pub frames: usize,
    pub visual_path: PathBuf,
    pub visual_bytes: u64,
    pub audio_path: PathBuf,
    pub audio_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonalityRecord {
    #[serde(rename = "S")]
    pub tokens: usize,
    pub path: PathBuf,
    pub bytes: u64,
}

fn encode(x: &Tensor, precision: Precision) -> Vec<u8> {
    match precision {
        Precision::F64 => x.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
        Precision::F32 => x.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
    }
}

fn decode(bytes: &[u8], precision: Precision) -> Vec<f64> {
    match precision {
        Precision::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        Precision::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
            .collect(),
    }
}

/// Writes `bytes` to a sibling temp file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes raw feature files under `dir/features/` and `dir/manifest.json`.
pub fn write_dataset(dataset: &Dataset, dir: &Path, precision: Precision) -> Result<Manifest> {
    dataset.validate()?;
    let features = dir.join("features");
    fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
    let put = |name: String, x: &Tensor| -> Result<(PathBuf, u64)> {
        let rel = PathBuf::from("features").join(name);
        let bytes = encode(x, precision);
        write_atomic(&dir.join(&rel), &bytes)?;
        Ok((rel, bytes.len() as u64))
    };
    let mut records = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let mut events = Vec::with_capacity(s.events.len());
        for (k, e) in s.events.iter().enumerate() {
            let (visual_path, visual_bytes) = put(format!("{}_e{k}_visual.bin", s.id), &e.visual)?;
            let (audio_path, audio_bytes) = put(format!("{}_e{k}_audio.bin", s.id), &e.audio)?;
            events.push(EventRecord {
                frames: e.frames(),
                visual_path,
                visual_bytes,
                audio_path,
                audio_bytes,
            });
        }
        let (path, bytes) = put(format!("{}_personality.bin", s.id), &s.personality)?;
        records.push(SampleRecord {
            id: s.id.clone(),
            label: s.label,
            events,
            personality: PersonalityRecord {
                tokens: s.personality.rows(),
                path,
                bytes,
            },
            demographics: s.demographics.clone(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        events: dataset.events,
        dims: dataset.dims,
        precision,
        classes: dataset.class_counts(TERNARY_CLASSES),
        generator: dataset.generator.clone(),
        samples: records,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

fn read_matrix(
    root: &Path,
    rel: &Path,
    rows: usize,
    cols: usize,
    recorded: u64,
    precision: Precision,
    sample: &str,
) -> Result<Tensor> {
    let path = root.join(rel);
    let expected = (rows * cols) as u64 * precision.width();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = bytes.len() as u64;
    if actual != expected || recorded != expected {
        return Err(Error::FileLength { path, expected, actual });
    }
    let data = decode(&bytes, precision);
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature {
            sample: sample.to_string(),
            path,
        });
    }
    Tensor::new(vec![rows, cols], data)
}

/// Loads a dataset from a manifest path (or its directory).
pub fn load_dataset(manifest_path: &Path, exec: Execution) -> Result<Dataset> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join(MANIFEST_FILE)
    } else {
        manifest_path.to_path_buf()
    };
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let dims = manifest.dims;
    let precision = manifest.precision;
    let samples = exec
        .map(&manifest.samples, |r| -> Result<Sample> {
            let events = r
                .events
                .iter()
                .map(|e| {
                    Ok(EventFeatures {
                        visual: read_matrix(
                            root,
                            &e.visual_path,
                            e.frames,
                            dims.visual,
                            e.visual_bytes,
                            precision,
                            &r.id,
                        )?,
                        audio: read_matrix(
                            root,
                            &e.audio_path,
                            e.frames,
                            dims.audio,
                            e.audio_bytes,
                            precision,
                            &r.id,
                        )?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let p = &r.personality;
            let personality = read_matrix(root, &p.path, p.tokens, dims.personality, p.bytes, precision, &r.id)?;
            Ok(Sample {
                id: r.id.clone(),
                label: r.label,
                events,
                personality,
                demographics: r.demographics.clone(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        events: manifest.events,
        dims,
        samples,
        generator: manifest.generator,
    };
    dataset.validate()?;
    Ok(dataset)
}
