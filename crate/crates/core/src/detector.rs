//! Detection stage: skip-blank filtering and token passing over the compiled
//! keyword graph.
//!
//! Only frames whose best unit is not blank reach the graph search. Each such
//! emission advances tokens along arcs labelled with its best unit, and a fresh
//! token is injected at the start state on every emission so keywords may
//! begin anywhere. A token reaching a final state produces a [`Candidate`]
//! whose start is the frame of the token's first emission; that start is only
//! as good as the transducer's emission timing, which the aligner later
//! corrects.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fst::{DecodingGraph, Label, StateId, EPSILON};
use crate::posterior::{clamped_ln, PosteriorStream, LOG_FLOOR};
use crate::symbols::UnitId;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("decoding graph accepts nothing")]
    EmptyGraph,
    #[error("beam width must be at least 1")]
    ZeroBeam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Tokens kept per emission. `usize::MAX` disables pruning.
    pub beam_width: usize,
    /// Let consecutive emissions of the same unit re-consume the last arc.
    pub allow_same_label_loop: bool,
    /// Same-keyword candidates ending within this many emissions of each
    /// other are merged, keeping the cheapest.
    pub refractory_emissions: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            beam_width: 64,
            allow_same_label_loop: true,
            refractory_emissions: 20,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.beam_width == 0 {
            return Err(DetectError::ZeroBeam);
        }
        Ok(())
    }
}

/// A frame whose best unit is not blank.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFrame {
    pub source_frame: usize,
    /// Best non-blank unit.
    pub label: UnitId,
    /// Natural-log posteriors indexed by unit; the blank entry is set to
    /// [`LOG_FLOOR`] so it can never be chosen.
    pub log_post: Vec<f64>,
}

/// Keeps the frames whose argmax is not blank. Ties go to the lower unit id.
pub fn skip_blank_filter(stream: &PosteriorStream, blank: UnitId) -> Vec<EmittedFrame> {
    let mut out = Vec::new();
    for frame in 0..stream.num_frames() {
        let row = stream.row(frame);
        let best = argmax(row);
        if best == blank {
            continue;
        }
        let mut log_post: Vec<f64> = row.iter().map(|&p| clamped_ln(p as f64)).collect();
        if let Some(b) = log_post.get_mut(blank as usize) {
            *b = LOG_FLOOR;
        }
        out.push(EmittedFrame {
            source_frame: frame,
            label: best,
            log_post,
        });
    }
    out
}

fn argmax(row: &[f32]) -> UnitId {
    let mut best = 0;
    for (u, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = u;
        }
    }
    best as UnitId
}

/// A keyword hypothesis from the detection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub keyword: String,
    /// Output symbol of the keyword in the decoding graph.
    pub keyword_index: usize,
    pub phone_seq: Vec<UnitId>,
    /// Sketchy start: source frame of the first consumed emission.
    pub t0: usize,
    pub t_end: usize,
    pub detect_cost: f64,
    /// Consumed emissions as (source frame, unit).
    pub trace: Vec<(usize, UnitId)>,
}

#[derive(Debug, Clone)]
struct Token {
    state: StateId,
    last_label: Option<UnitId>,
    cost: f64,
    start_frame: usize,
    keyword: Option<Label>,
    trace: Vec<(usize, UnitId)>,
}

impl Token {
    fn key(&self) -> (StateId, Option<UnitId>) {
        (self.state, self.last_label)
    }
}

/// Inserts `tok` unless an equal-or-cheaper token already holds its slot.
fn relax(slots: &mut BTreeMap<(StateId, Option<UnitId>), Token>, tok: Token) -> bool {
    match slots.get(&tok.key()) {
        Some(old) if old.cost <= tok.cost => false,
        _ => {
            slots.insert(tok.key(), tok);
            true
        }
    }
}

/// Frame-synchronous token passing over `graph`.
///
/// Tokens are recombined per (state, last consumed unit); on equal cost the
/// token coming from the lower state id is kept. Candidates for the same
/// keyword ending within the refractory window are merged.
pub fn token_passing_decode(
    emissions: &[EmittedFrame],
    graph: &DecodingGraph,
    config: &DetectorConfig,
) -> Result<Vec<Candidate>, DetectError> {
    config.validate()?;
    let fst = &graph.fst;
    if fst.finals().next().is_none() {
        return Err(DetectError::EmptyGraph);
    }

    let mut active: Vec<Token> = Vec::new();
    let mut raw: Vec<(usize, Candidate)> = Vec::new();

    for (ei, em) in emissions.iter().enumerate() {
        let label = em.label;
        let step_cost = -em.log_post[label as usize];

        let mut sources = std::mem::take(&mut active);
        sources.push(Token {
            state: fst.start(),
            last_label: None,
            cost: 0.0,
            start_frame: em.source_frame,
            keyword: None,
            trace: Vec::new(),
        });
        sources.sort_by_key(Token::key);

        let mut next: BTreeMap<(StateId, Option<UnitId>), Token> = BTreeMap::new();
        for tok in &sources {
            let consume = |state: StateId, extra: f64, olabel: Label| {
                let mut t = tok.clone();
                t.state = state;
                t.last_label = Some(label);
                t.cost += step_cost + extra;
                if olabel != EPSILON && t.keyword.is_none() {
                    t.keyword = Some(olabel);
                }
                t.trace.push((em.source_frame, label));
                t
            };
            if config.allow_same_label_loop && tok.last_label == Some(label) {
                relax(&mut next, consume(tok.state, 0.0, EPSILON));
            }
            for arc in fst.arcs(tok.state).iter().filter(|a| a.ilabel == label) {
                relax(&mut next, consume(arc.next, arc.weight, arc.olabel));
            }
        }

        let mut stack: Vec<_> = next.keys().copied().collect();
        while let Some(key) = stack.pop() {
            let tok = next[&key].clone();
            for arc in fst.arcs(tok.state).iter().filter(|a| a.ilabel == EPSILON) {
                let mut t = tok.clone();
                t.state = arc.next;
                t.cost += arc.weight;
                if arc.olabel != EPSILON && t.keyword.is_none() {
                    t.keyword = Some(arc.olabel);
                }
                let k = t.key();
                if relax(&mut next, t) {
                    stack.push(k);
                }
            }
        }

        for tok in next.values() {
            let (Some(fw), Some(k)) = (fst.final_weight(tok.state), tok.keyword) else {
                continue;
            };
            let idx = k as usize;
            raw.push((
                ei,
                Candidate {
                    keyword: graph.keywords[idx].clone(),
                    keyword_index: idx,
                    phone_seq: graph.pronunciations[idx].clone(),
                    t0: tok.start_frame,
                    t_end: em.source_frame,
                    detect_cost: tok.cost + fw,
                    trace: tok.trace.clone(),
                },
            ));
        }

        active = next.into_values().collect();
        if active.len() > config.beam_width {
            active.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.key().cmp(&b.key())));
            active.truncate(config.beam_width);
        }
    }

    Ok(dedup_refractory(raw, config.refractory_emissions))
}

fn dedup_refractory(raw: Vec<(usize, Candidate)>, window: usize) -> Vec<Candidate> {
    // (anchor emission, candidate)
    let mut kept: Vec<(usize, Candidate)> = Vec::new();
    for (ei, cand) in raw {
        let cluster = kept
            .iter_mut()
            .rev()
            .find(|(anchor, c)| c.keyword_index == cand.keyword_index && ei - *anchor <= window);
        match cluster {
            Some((_, best)) => {
                if cand.detect_cost < best.detect_cost {
                    *best = cand;
                }
            }
            None => kept.push((ei, cand)),
        }
    }
    let mut out: Vec<Candidate> = kept.into_iter().map(|(_, c)| c).collect();
    out.sort_by_key(|c| (c.t_end, c.t0, c.keyword_index));
    out
}
