//! Corpus evaluation: per-stage accuracy, false alarms per hour and
//! start-point error.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_text, Error, Result};
use crate::pipeline::{Detection, Engine};
use crate::posterior::PosteriorStream;

pub mod roc;
pub mod synth;

pub use roc::{roc_from_decoded, roc_sweep, RocPoint, SweepMode};
pub use synth::{synth_corpus, SynthCorpus, SynthSpec};

/// One manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub det: PathBuf,
    pub ali: PathBuf,
    pub label: Option<String>,
    pub true_start: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    /// Parses `det<TAB>ali<TAB>label-or-"-"<TAB>true_start-or-"-"` lines.
    /// Stream paths resolve against `base`; the id is the detection path as
    /// written.
    pub fn parse_manifest(text: &str, base: &Path) -> Result<Self> {
        let mut utterances = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Manifest { line, message };
            let fields: Vec<&str> = raw.split('\t').collect();
            let [det, ali, label, start] = fields[..] else {
                return Err(err(format!(
                    "expected 4 tab-separated fields, got {}",
                    fields.len()
                )));
            };
            let label = (label != "-").then(|| label.to_string());
            let true_start = match start {
                "-" => None,
                s => Some(
                    s.parse()
                        .map_err(|e| err(format!("true start {s:?}: {e}")))?,
                ),
            };
            if label.is_none() && true_start.is_some() {
                return Err(err("true start given for an unlabeled utterance".into()));
            }
            utterances.push(Utterance {
                id: det.to_string(),
                det: base.join(det),
                ali: base.join(ali),
                label,
                true_start,
            });
        }
        Ok(Self { utterances })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_manifest(&read_text(path)?, base)
    }
}

/// Decoded detections of one utterance with what the metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedUtterance {
    pub id: String,
    pub label: Option<String>,
    pub true_start: Option<usize>,
    pub frame_duration: f32,
    pub duration_secs: f64,
    pub detections: Vec<Detection>,
}

/// Streams already in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedUtterance {
    pub id: String,
    pub det: PosteriorStream,
    pub ali: PosteriorStream,
    pub label: Option<String>,
    pub true_start: Option<usize>,
}

pub fn decode_one(engine: &Engine, u: &LoadedUtterance) -> Result<DecodedUtterance> {
    if let Some(label) = &u.label {
        if engine.lexicon.get(label).is_none() {
            return Err(Error::Eval(format!(
                "{}: label {label:?} not in lexicon",
                u.id
            )));
        }
    }
    Ok(DecodedUtterance {
        id: u.id.clone(),
        label: u.label.clone(),
        true_start: u.true_start,
        frame_duration: u.det.frame_duration(),
        duration_secs: u.det.duration_secs(),
        detections: engine.run_named(&u.id, &u.det, &u.ali)?,
    })
}

/// Runs `f` over `0..n` on `jobs` threads, keeping index order.
fn parallel<T: Send>(
    n: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Eval(e.to_string()))?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

pub fn decode_loaded(
    engine: &Engine,
    utts: &[LoadedUtterance],
    jobs: usize,
) -> Result<Vec<DecodedUtterance>> {
    parallel(utts.len(), jobs, |i| decode_one(engine, &utts[i]))
}

pub fn decode_corpus(
    engine: &Engine,
    corpus: &Corpus,
    jobs: usize,
) -> Result<Vec<DecodedUtterance>> {
    parallel(corpus.utterances.len(), jobs, |i| {
        let u = &corpus.utterances[i];
        let load = |p: &Path| PosteriorStream::load(p).map_err(|e| Error::in_file(p, e));
        let loaded = LoadedUtterance {
            id: u.id.clone(),
            det: load(&u.det)?,
            ali: load(&u.ali)?,
            label: u.label.clone(),
            true_start: u.true_start,
        };
        decode_one(engine, &loaded)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveMetrics {
    pub utterances: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Seconds, over correct utterances with a known true start.
    pub mean_start_error: Option<f64>,
    /// Fraction of those start errors at most two frames.
    pub start_error_within_2_frames: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeMetrics {
    pub utterances: usize,
    pub hours: f64,
    pub false_alarms: usize,
    pub fa_per_hour: f64,
}

/// The detection credited to a labeled utterance at `stage`, if any.
pub fn credited(u: &DecodedUtterance, stage: u8) -> Option<&Detection> {
    let label = u.label.as_deref()?;
    u.detections
        .iter()
        .find(|d| d.passed(stage) && d.keyword == label)
}

/// Start errors in frames of credited detections at `stage`.
pub fn start_errors(decoded: &[DecodedUtterance], stage: u8) -> Vec<usize> {
    decoded
        .iter()
        .filter_map(|u| {
            let truth = u.true_start?;
            credited(u, stage).map(|d| d.start(stage).abs_diff(truth))
        })
        .collect()
}

pub fn eval_positives(decoded: &[DecodedUtterance], stage: u8) -> Result<PositiveMetrics> {
    let positives: Vec<&DecodedUtterance> = decoded.iter().filter(|u| u.label.is_some()).collect();
    if positives.is_empty() {
        return Err(Error::Eval("no labeled utterances".into()));
    }
    let correct = positives
        .iter()
        .filter(|u| credited(u, stage).is_some())
        .count();
    let mut errors_s = Vec::new();
    let mut within = 0;
    for u in &positives {
        if let (Some(truth), Some(d)) = (u.true_start, credited(u, stage)) {
            let frames = d.start(stage).abs_diff(truth);
            errors_s.push(frames as f64 * u.frame_duration as f64);
            within += usize::from(frames <= 2);
        }
    }
    let n = errors_s.len();
    Ok(PositiveMetrics {
        utterances: positives.len(),
        correct,
        accuracy: correct as f64 / positives.len() as f64,
        mean_start_error: (n > 0).then(|| errors_s.iter().sum::<f64>() / n as f64),
        start_error_within_2_frames: (n > 0).then(|| within as f64 / n as f64),
    })
}

pub fn eval_negatives(decoded: &[DecodedUtterance], stage: u8) -> Result<NegativeMetrics> {
    let negatives: Vec<&DecodedUtterance> = decoded.iter().filter(|u| u.label.is_none()).collect();
    count_false_alarms(&negatives, |d| d.passed(stage))
}

pub(crate) fn count_false_alarms(
    negatives: &[&DecodedUtterance],
    accept: impl Fn(&Detection) -> bool,
) -> Result<NegativeMetrics> {
    let hours: f64 = negatives.iter().map(|u| u.duration_secs).sum::<f64>() / 3600.0;
    if hours <= 0.0 {
        return Err(Error::Eval("negative set has zero duration".into()));
    }
    let false_alarms = negatives
        .iter()
        .flat_map(|u| &u.detections)
        .filter(|d| accept(d))
        .count();
    Ok(NegativeMetrics {
        utterances: negatives.len(),
        hours,
        false_alarms,
        fa_per_hour: false_alarms as f64 / hours,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub positives: Option<PositiveMetrics>,
    pub negatives: Option<NegativeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Final-stage figures.
    pub accuracy: Option<f64>,
    pub fa_per_hour: Option<f64>,
    pub mean_start_error: Option<f64>,
    pub stages: Vec<StageReport>,
}

/// Metrics for stages `1..=max_stage`. Either half of the corpus may be empty.
pub fn evaluate(decoded: &[DecodedUtterance], max_stage: u8) -> Result<EvalReport> {
    let has_pos = decoded.iter().any(|u| u.label.is_some());
    let has_neg = decoded.iter().any(|u| u.label.is_none());
    if !has_pos && !has_neg {
        return Err(Error::Eval("empty corpus".into()));
    }
    let mut stages = Vec::new();
    for stage in 1..=max_stage {
        stages.push(StageReport {
            stage,
            positives: has_pos
                .then(|| eval_positives(decoded, stage))
                .transpose()?,
            negatives: has_neg
                .then(|| eval_negatives(decoded, stage))
                .transpose()?,
        });
    }
    let last = stages.last().expect("max_stage is at least 1");
    Ok(EvalReport {
        accuracy: last.positives.as_ref().map(|p| p.accuracy),
        fa_per_hour: last.negatives.as_ref().map(|n| n.fa_per_hour),
        mean_start_error: last.positives.as_ref().and_then(|p| p.mean_start_error),
        stages,
    })
}
