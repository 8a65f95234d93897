//! Stage 3: fixed-length beam search over an autoregressive scorer and the
//! exact-match check against the candidate's units.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::Verdict;
use crate::posterior::{clamped_ln, PosteriorStream, SegmentRef};
use crate::symbols::{PhoneSet, UnitId};

/// Maximum deviation of a scripted distribution's total mass from 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("beam width must be at least 1")]
    ZeroBeam,
    #[error("upsilon must be positive, got {0}")]
    BadUpsilon(f64),
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error("hypothesis has {got} units, candidate has {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("segment {0} is outside the stream")]
    BadSegment(String),
    #[error("scorer queried at step {step} beyond horizon {steps}")]
    BeyondHorizon { step: usize, steps: usize },
    #[error("scorer returned {got} entries, expected {expected}")]
    WrongWidth { got: usize, expected: usize },
    #[error("no scripted distribution for segment {segment} prefix [{prefix}]")]
    Unscripted { segment: String, prefix: String },
    #[error("table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("unknown scorer {0:?}; expected \"pooled\" or \"table:<path>\"")]
    UnknownScorer(String),
    #[error("{0}")]
    Io(String),
}

/// An autoregressive unit scorer conditioned on a stream segment.
pub trait Scorer: Sync {
    fn num_units(&self) -> usize;

    /// Opens a session for `segment` that will be stepped at most `steps` times.
    fn open(
        &self,
        segment: &SegmentRef,
        steps: usize,
    ) -> Result<Box<dyn ScorerSession + '_>, VerifyError>;
}

pub trait ScorerSession {
    /// Natural-log distribution over all units given the emitted prefix.
    fn step(&mut self, prefix: &[UnitId]) -> Result<Vec<f64>, VerifyError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<UnitId>,
    pub logp_sum: f64,
    pub per_step_logp: Vec<f64>,
}

/// Runs exactly `steps` expansions and returns the final beam, best first.
/// Ties are ordered by token sequence.
pub fn beam_search(
    scorer: &dyn Scorer,
    segment: &SegmentRef,
    steps: usize,
    beam_width: usize,
) -> Result<Vec<Hypothesis>, VerifyError> {
    if steps == 0 {
        return Err(VerifyError::ZeroSteps);
    }
    if beam_width == 0 {
        return Err(VerifyError::ZeroBeam);
    }
    let units = scorer.num_units();
    let mut session = scorer.open(segment, steps)?;
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        logp_sum: 0.0,
        per_step_logp: Vec::new(),
    }];
    for _ in 0..steps {
        let mut next = Vec::with_capacity(beam.len() * units);
        for h in &beam {
            let dist = session.step(&h.tokens)?;
            if dist.len() != units {
                return Err(VerifyError::WrongWidth {
                    got: dist.len(),
                    expected: units,
                });
            }
            for (u, &lp) in dist.iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(u as UnitId);
                let mut per_step_logp = h.per_step_logp.clone();
                per_step_logp.push(lp);
                next.push(Hypothesis {
                    tokens,
                    logp_sum: h.logp_sum + lp,
                    per_step_logp,
                });
            }
        }
        sort_ranked(&mut next);
        next.truncate(beam_width);
        beam = next;
    }
    Ok(beam)
}

pub(crate) fn sort_ranked(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| {
        b.logp_sum
            .total_cmp(&a.logp_sum)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyResult {
    pub decision: Verdict,
    pub s2: Option<f64>,
    pub matched: bool,
}

pub fn stage3_verify(
    beam: &[Hypothesis],
    phone_seq: &[UnitId],
    upsilon: f64,
) -> Result<VerifyResult, VerifyError> {
    if let Some(h) = beam.iter().find(|h| h.tokens.len() != phone_seq.len()) {
        return Err(VerifyError::LengthMismatch {
            got: h.tokens.len(),
            expected: phone_seq.len(),
        });
    }
    Ok(match beam.iter().find(|h| h.tokens == phone_seq) {
        Some(h) => {
            let s2 = -h.logp_sum;
            VerifyResult {
                decision: if s2 <= upsilon {
                    Verdict::Accept
                } else {
                    Verdict::Reject
                },
                s2: Some(s2),
                matched: true,
            }
        }
        None => VerifyResult {
            decision: Verdict::Reject,
            s2: None,
            matched: false,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerKind {
    Pooled,
    Table(PathBuf),
}

impl ScorerKind {
    pub fn parse(text: &str) -> Result<Self, VerifyError> {
        match text {
            "pooled" => Ok(ScorerKind::Pooled),
            _ => match text.strip_prefix("table:") {
                Some(path) if !path.is_empty() => Ok(ScorerKind::Table(PathBuf::from(path))),
                _ => Err(VerifyError::UnknownScorer(text.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    pub beam_width: usize,
    pub upsilon: f64,
    pub scorer: String,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            beam_width: 8,
            upsilon: 5.0,
            scorer: "pooled".to_string(),
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<ScorerKind, VerifyError> {
        if self.beam_width == 0 {
            return Err(VerifyError::ZeroBeam);
        }
        if self.upsilon.is_nan() || self.upsilon <= 0.0 {
            return Err(VerifyError::BadUpsilon(self.upsilon));
        }
        ScorerKind::parse(&self.scorer)
    }
}

/// Prefix-independent scorer built from the alignment stream: step `i` is the
/// renormalized mean posterior over the `i`-th of `steps` equal slices of the
/// segment. Segments shorter than `steps` use one frame per step, repeating
/// the last frame.
pub struct PooledPosteriorScorer<'a> {
    stream: &'a PosteriorStream,
}

impl<'a> PooledPosteriorScorer<'a> {
    pub fn new(stream: &'a PosteriorStream) -> Self {
        Self { stream }
    }

    /// Log distribution for step `i` of `steps` over `segment`.
    pub fn slice_distribution(&self, segment: &SegmentRef, i: usize, steps: usize) -> Vec<f64> {
        let start = segment.start_frame;
        let len = segment.len();
        let (lo, hi) = if len >= steps {
            (start + i * len / steps, start + (i + 1) * len / steps)
        } else {
            let f = start + i.min(len - 1);
            (f, f + 1)
        };
        let units = self.stream.num_units();
        let mut mean = vec![0.0f64; units];
        for t in lo..hi {
            for (m, &p) in mean.iter_mut().zip(self.stream.row(t)) {
                *m += p as f64;
            }
        }
        let total: f64 = mean.iter().sum();
        mean.iter().map(|&m| clamped_ln(m / total)).collect()
    }
}

impl Scorer for PooledPosteriorScorer<'_> {
    fn num_units(&self) -> usize {
        self.stream.num_units()
    }

    fn open(
        &self,
        segment: &SegmentRef,
        steps: usize,
    ) -> Result<Box<dyn ScorerSession + '_>, VerifyError> {
        if segment.end_frame >= self.stream.num_frames() || segment.start_frame > segment.end_frame
        {
            return Err(VerifyError::BadSegment(segment.key()));
        }
        let slices = (0..steps)
            .map(|i| self.slice_distribution(segment, i, steps))
            .collect();
        Ok(Box::new(PooledSession { slices }))
    }
}

struct PooledSession {
    slices: Vec<Vec<f64>>,
}

impl ScorerSession for PooledSession {
    fn step(&mut self, prefix: &[UnitId]) -> Result<Vec<f64>, VerifyError> {
        self.slices
            .get(prefix.len())
            .cloned()
            .ok_or(VerifyError::BeyondHorizon {
                step: prefix.len(),
                steps: self.slices.len(),
            })
    }
}

/// Scripted distributions keyed by segment and prefix.
///
/// One record per line: `segment<TAB>prefix<TAB>probabilities`, where segment
/// is a [`SegmentRef::key`] or `*` for any segment, prefix is space-separated
/// unit names (empty for the first step) and probabilities are
/// space-separated, one per unit. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct TableScorer {
    units: usize,
    entries: HashMap<(String, Vec<UnitId>), Vec<f64>>,
}

impl TableScorer {
    pub fn new(units: usize) -> Self {
        Self {
            units,
            entries: HashMap::new(),
        }
    }

    /// Adds a distribution given in linear probabilities.
    pub fn insert(
        &mut self,
        segment: impl Into<String>,
        prefix: Vec<UnitId>,
        probs: &[f64],
    ) -> Result<(), VerifyError> {
        if probs.len() != self.units {
            return Err(VerifyError::WrongWidth {
                got: probs.len(),
                expected: self.units,
            });
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (sum - 1.0).abs() > NORMALIZATION_TOLERANCE
        {
            return Err(VerifyError::Table {
                line: 0,
                message: format!("distribution sums to {sum}"),
            });
        }
        self.entries.insert(
            (segment.into(), prefix),
            probs.iter().map(|&p| clamped_ln(p)).collect(),
        );
        Ok(())
    }

    pub fn parse(text: &str, phones: &PhoneSet) -> Result<Self, VerifyError> {
        let mut table = Self::new(phones.len());
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let err = |message: String| VerifyError::Table { line, message };
            let fields: Vec<&str> = raw.split('\t').collect();
            let [segment, prefix, probs] = fields[..] else {
                return Err(err(format!(
                    "expected 3 tab-separated fields, got {}",
                    fields.len()
                )));
            };
            let prefix = if prefix.trim().is_empty() {
                Vec::new()
            } else {
                phones.resolve(prefix).map_err(&err)?
            };
            let probs = probs
                .split_whitespace()
                .map(|p| p.parse::<f64>().map_err(|e| err(format!("{p:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            table
                .insert(segment.trim(), prefix, &probs)
                .map_err(|e| match e {
                    VerifyError::Table { message, .. } => err(message),
                    other => err(other.to_string()),
                })?;
        }
        Ok(table)
    }

    pub fn load(path: &Path, phones: &PhoneSet) -> Result<Self, VerifyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VerifyError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, phones)
    }

    fn lookup(&self, segment: &str, prefix: &[UnitId]) -> Option<&Vec<f64>> {
        self.entries
            .get(&(segment.to_string(), prefix.to_vec()))
            .or_else(|| self.entries.get(&("*".to_string(), prefix.to_vec())))
    }
}

impl Scorer for TableScorer {
    fn num_units(&self) -> usize {
        self.units
    }

    fn open(
        &self,
        segment: &SegmentRef,
        _steps: usize,
    ) -> Result<Box<dyn ScorerSession + '_>, VerifyError> {
        Ok(Box::new(TableSession {
            table: self,
            segment: segment.key(),
        }))
    }
}

struct TableSession<'a> {
    table: &'a TableScorer,
    segment: String,
}

impl ScorerSession for TableSession<'_> {
    fn step(&mut self, prefix: &[UnitId]) -> Result<Vec<f64>, VerifyError> {
        self.table
            .lookup(&self.segment, prefix)
            .cloned()
            .ok_or_else(|| VerifyError::Unscripted {
                segment: self.segment.clone(),
                prefix: prefix
                    .iter()
                    .map(|u| u.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            })
    }
}
