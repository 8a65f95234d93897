//! The three-stage cascade over a detection/alignment stream pair.

use serde::{Deserialize, Serialize};

use crate::aligner::{
    align_candidate, stage2_verify, AlignError, AlignerConfig, AlignmentResult, GarbageScore,
    Verdict,
};
use crate::detector::{skip_blank_filter, token_passing_decode, DetectorConfig};
use crate::error::{Error, Result};
use crate::fst::{build_decoding_graph, DecodingGraph};
use crate::posterior::{PosteriorStream, SegmentRef};
use crate::symbols::{KeywordSet, Lexicon, PhoneSet, UnitId};
use crate::verifier::{
    beam_search, stage3_verify, Hypothesis, PooledPosteriorScorer, Scorer, ScorerKind, TableScorer,
    VerifierConfig, VerifyResult,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub aligner: AlignerConfig,
    pub verifier: VerifierConfig,
    pub stages: u8,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            aligner: AlignerConfig::default(),
            verifier: VerifierConfig::default(),
            stages: 3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<ScorerKind> {
        if !(1..=3).contains(&self.stages) {
            return Err(Error::Config(format!(
                "stages must be 1, 2 or 3, got {}",
                self.stages
            )));
        }
        self.detector.validate()?;
        self.aligner.validate()?;
        Ok(self.verifier.validate()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub keyword: String,
    pub t0: usize,
    pub t_r: Option<usize>,
    pub t_end: usize,
    pub detect_cost: f64,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    /// Deepest stage this detection passed.
    pub final_stage_passed: u8,
    pub accepted: bool,
}

impl Detection {
    pub fn passed(&self, stage: u8) -> bool {
        self.final_stage_passed >= stage
    }

    /// Best known start frame: refined when stage 2 ran, sketchy otherwise.
    pub fn start(&self, stage: u8) -> usize {
        if stage >= 2 {
            self.t_r.unwrap_or(self.t0)
        } else {
            self.t0
        }
    }

    pub fn record(&self, frame_duration: f32) -> DetectionRecord {
        let secs = |f: usize| f as f64 * frame_duration as f64;
        DetectionRecord {
            keyword: self.keyword.clone(),
            t0_s: secs(self.t0),
            tr_s: self.t_r.map(secs),
            tend_s: secs(self.t_end),
            detect_cost: self.detect_cost,
            s1: self.s1,
            s2: self.s2,
            final_stage_passed: self.final_stage_passed,
            accepted: self.accepted,
        }
    }
}

/// One line of detection output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub keyword: String,
    pub t0_s: f64,
    pub tr_s: Option<f64>,
    pub tend_s: f64,
    pub detect_cost: f64,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    pub final_stage_passed: u8,
    pub accepted: bool,
}

pub fn check_stream_pair(det: &PosteriorStream, ali: &PosteriorStream) -> Result<()> {
    if det.num_frames() != ali.num_frames() {
        return Err(Error::StreamMismatch(format!(
            "detection stream has {} frames, alignment stream {}",
            det.num_frames(),
            ali.num_frames()
        )));
    }
    if det.frame_duration() != ali.frame_duration() {
        return Err(Error::StreamMismatch(format!(
            "frame durations differ: {} s vs {} s",
            det.frame_duration(),
            ali.frame_duration()
        )));
    }
    Ok(())
}

/// Runs the cascade to `config.stages`. `scorer` defaults to pooling the
/// alignment stream. Rejected candidates are kept with `accepted == false`.
pub fn run_pipeline(
    name: &str,
    det: &PosteriorStream,
    ali: &PosteriorStream,
    graph: &DecodingGraph,
    phones: &PhoneSet,
    config: &PipelineConfig,
    scorer: Option<&dyn Scorer>,
) -> Result<Vec<Detection>> {
    config.validate()?;
    det.check_units(phones)?;
    ali.check_units(phones)?;
    check_stream_pair(det, ali)?;
    let garbage = if config.stages >= 2 {
        Some(config.aligner.garbage_score(phones)?)
    } else {
        None
    };
    let pooled = PooledPosteriorScorer::new(ali);
    let scorer = scorer.unwrap_or(&pooled);

    let emissions = skip_blank_filter(det, phones.blank());
    let candidates = token_passing_decode(&emissions, graph, &config.detector)?;
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut d = Detection {
            keyword: c.keyword.clone(),
            t0: c.t0,
            t_r: None,
            t_end: c.t_end,
            detect_cost: c.detect_cost,
            s1: None,
            s2: None,
            final_stage_passed: 1,
            accepted: false,
        };
        if let Some(garbage) = garbage {
            later_stages(&mut d, &c.phone_seq, name, ali, config, garbage, scorer)?;
        }
        d.accepted = d.final_stage_passed == config.stages;
        out.push(d);
    }
    Ok(out)
}

fn later_stages(
    d: &mut Detection,
    phone_seq: &[UnitId],
    name: &str,
    ali: &PosteriorStream,
    config: &PipelineConfig,
    garbage: GarbageScore,
    scorer: &dyn Scorer,
) -> Result<()> {
    let r = match align_candidate(ali, phone_seq, d.t0, d.t_end, &config.aligner, garbage) {
        Ok(r) => r,
        Err(AlignError::Infeasible { .. }) => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    d.t_r = Some(r.t_r);
    d.s1 = Some(r.s1);
    if !stage2_verify(&r, config.aligner.tau).accepted() {
        return Ok(());
    }
    d.final_stage_passed = 2;
    if config.stages < 3 {
        return Ok(());
    }
    let segment = SegmentRef::new(name, r.t_r, r.t_end, ali.num_frames())?;
    let beam = beam_search(
        scorer,
        &segment,
        phone_seq.len(),
        config.verifier.beam_width,
    )?;
    let v = stage3_verify(&beam, phone_seq, config.verifier.upsilon)?;
    d.s2 = v.s2;
    if v.decision.accepted() {
        d.final_stage_passed = 3;
    }
    Ok(())
}

/// Compiled keyword graph plus everything needed to run the cascade.
#[derive(Debug, Clone)]
pub struct Engine {
    pub phones: PhoneSet,
    pub lexicon: Lexicon,
    pub keywords: KeywordSet,
    pub graph: DecodingGraph,
    pub config: PipelineConfig,
    table: Option<TableScorer>,
}

impl Engine {
    pub fn new(
        phones: PhoneSet,
        lexicon: Lexicon,
        keywords: KeywordSet,
        config: PipelineConfig,
    ) -> Result<Self> {
        let table = match config.validate()? {
            ScorerKind::Pooled => None,
            ScorerKind::Table(path) => Some(TableScorer::load(&path, &phones)?),
        };
        if config.stages >= 2 {
            config.aligner.garbage_score(&phones)?;
        }
        let graph = build_decoding_graph(&lexicon, &keywords)?;
        Ok(Self {
            phones,
            lexicon,
            keywords,
            graph,
            config,
            table,
        })
    }

    /// Same graph and tables under a different cascade configuration.
    pub fn with_config(&self, config: PipelineConfig) -> Result<Self> {
        let table = match config.validate()? {
            ScorerKind::Pooled => None,
            ScorerKind::Table(_) if config.verifier.scorer == self.config.verifier.scorer => {
                self.table.clone()
            }
            ScorerKind::Table(path) => Some(TableScorer::load(&path, &self.phones)?),
        };
        Ok(Self {
            config,
            table,
            ..self.clone()
        })
    }

    pub fn run(&self, det: &PosteriorStream, ali: &PosteriorStream) -> Result<Vec<Detection>> {
        self.run_named("stream", det, ali)
    }

    /// `name` identifies the stream to scripted scorers.
    pub fn run_named(
        &self,
        name: &str,
        det: &PosteriorStream,
        ali: &PosteriorStream,
    ) -> Result<Vec<Detection>> {
        run_pipeline(
            name,
            det,
            ali,
            &self.graph,
            &self.phones,
            &self.config,
            self.table.as_ref().map(|t| t as &dyn Scorer),
        )
    }

    pub fn pronunciation(&self, keyword: &str) -> Result<&[UnitId]> {
        self.lexicon
            .get(keyword)
            .ok_or_else(|| Error::Config(format!("keyword {keyword:?} not in lexicon")))
    }

    /// Stage 2 alone: pushback from `t0` and align up to `t_end`.
    pub fn align(
        &self,
        ali: &PosteriorStream,
        keyword: &str,
        t0: usize,
        t_end: usize,
    ) -> Result<(AlignmentResult, Verdict)> {
        ali.check_units(&self.phones)?;
        let garbage = self.config.aligner.garbage_score(&self.phones)?;
        let r = align_candidate(
            ali,
            self.pronunciation(keyword)?,
            t0,
            t_end,
            &self.config.aligner,
            garbage,
        )?;
        let v = stage2_verify(&r, self.config.aligner.tau);
        Ok((r, v))
    }

    /// Stage 3 alone over `segment` of `ali`.
    pub fn verify(
        &self,
        ali: &PosteriorStream,
        keyword: &str,
        segment: &SegmentRef,
    ) -> Result<(Vec<Hypothesis>, VerifyResult)> {
        ali.check_units(&self.phones)?;
        let seq = self.pronunciation(keyword)?;
        let pooled = PooledPosteriorScorer::new(ali);
        let scorer: &dyn Scorer = match &self.table {
            Some(t) => t,
            None => &pooled,
        };
        let beam = beam_search(scorer, segment, seq.len(), self.config.verifier.beam_width)?;
        let v = stage3_verify(&beam, seq, self.config.verifier.upsilon)?;
        Ok((beam, v))
    }
}
