//! Stage 2: boundary pushback and garbage-prefixed forced alignment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fst::{build_alignment_graph, AlignmentGraph, FstError, StateId, GARBAGE};
use crate::posterior::{clamped_ln, PosteriorStream};
use crate::symbols::{PhoneSet, UnitId};

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("alignment infeasible: span of {frames} frames cannot hold {phones} phones")]
    Infeasible { frames: usize, phones: usize },
    #[error("span {start}..={end} outside stream of {frames} frames")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        frames: usize,
    },
    #[error("garbage mode designated-unit needs a <sil> unit in the phone set")]
    NoGarbageUnit,
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error(transparent)]
    Graph(#[from] FstError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GarbageMode {
    DesignatedUnit,
    MaxPosterior,
    UniformFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignerConfig {
    pub t_d: usize,
    pub tau: f64,
    pub garbage_mode: GarbageMode,
}

impl Default for AlignerConfig {
    fn default() -> Self {
        Self {
            t_d: 15,
            tau: 1.5,
            garbage_mode: GarbageMode::DesignatedUnit,
        }
    }
}

impl AlignerConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(AlignError::BadTau(self.tau));
        }
        Ok(())
    }

    pub fn garbage_score(&self, phones: &PhoneSet) -> Result<GarbageScore, AlignError> {
        Ok(match self.garbage_mode {
            GarbageMode::DesignatedUnit => {
                GarbageScore::Unit(phones.garbage().ok_or(AlignError::NoGarbageUnit)?)
            }
            GarbageMode::MaxPosterior => GarbageScore::MaxPosterior,
            GarbageMode::UniformFloor => GarbageScore::UniformFloor,
        })
    }
}

/// How a frame assigned to the garbage state is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GarbageScore {
    Unit(UnitId),
    MaxPosterior,
    UniformFloor,
}

impl GarbageScore {
    pub fn log_score(&self, stream: &PosteriorStream, frame: usize) -> f64 {
        match *self {
            GarbageScore::Unit(u) => stream.log_prob(frame, u),
            GarbageScore::MaxPosterior => {
                let best = stream.row(frame).iter().copied().fold(0.0f32, f32::max);
                clamped_ln(best as f64)
            }
            GarbageScore::UniformFloor => -(stream.num_units() as f64).ln(),
        }
    }
}

pub fn pushback(t0: usize, t_d: usize) -> usize {
    t0.saturating_sub(t_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignedLabel {
    Garbage,
    Phone { index: usize, unit: UnitId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub span_start: usize,
    pub t_r: usize,
    pub t_end: usize,
    /// One label per frame of `span_start..=t_end`.
    pub framewise: Vec<AlignedLabel>,
    pub s1: f64,
    /// Length of the refined span `t_r..=t_end`.
    pub frames: usize,
    /// Total log-likelihood of the best path, garbage frames included.
    pub log_likelihood: f64,
}

impl AlignmentResult {
    /// Start frame of each phone within the stream.
    pub fn phone_starts(&self) -> Vec<usize> {
        let mut starts = Vec::new();
        let mut prev = None;
        for (i, l) in self.framewise.iter().enumerate() {
            if let AlignedLabel::Phone { index, .. } = *l {
                if prev != Some(index) {
                    starts.push(self.span_start + i);
                    prev = Some(index);
                }
            }
        }
        starts
    }
}

/// Frame-synchronous Viterbi over `graph` for frames `span_start..=span_end`.
///
/// Ties prefer the self-loop, then the lower source state, which moves phone
/// boundaries as early as possible among equally likely paths.
pub fn force_align(
    stream: &PosteriorStream,
    span_start: usize,
    span_end: usize,
    graph: &AlignmentGraph,
    garbage: GarbageScore,
) -> Result<AlignmentResult, AlignError> {
    if span_start > span_end || span_end >= stream.num_frames() {
        return Err(AlignError::SpanOutOfRange {
            start: span_start,
            end: span_end,
            frames: stream.num_frames(),
        });
    }
    let len = span_end - span_start + 1;
    let n = graph.phone_seq.len();
    if len < n {
        return Err(AlignError::Infeasible {
            frames: len,
            phones: n,
        });
    }

    let fst = &graph.graph;
    let states = fst.num_states();
    let mut score = vec![f64::NEG_INFINITY; states];
    score[fst.start()] = 0.0;
    let mut back: Vec<Vec<Option<StateId>>> = Vec::with_capacity(len);

    for t in span_start..=span_end {
        let mut next = vec![f64::NEG_INFINITY; states];
        let mut from: Vec<Option<StateId>> = vec![None; states];
        // (is_self_loop, source) ordering for ties
        let mut rank: Vec<(bool, StateId)> = vec![(false, usize::MAX); states];
        for (s, &prev) in score.iter().enumerate() {
            if prev == f64::NEG_INFINITY {
                continue;
            }
            for arc in fst.arcs(s) {
                let emit = if arc.ilabel == GARBAGE {
                    garbage.log_score(stream, t)
                } else {
                    stream.log_prob(t, arc.ilabel)
                };
                let cand = prev - arc.weight + emit;
                let d = arc.next;
                let r = (d == s, s);
                let better = cand > next[d]
                    || (cand == next[d]
                        && ((r.0 && !rank[d].0) || (r.0 == rank[d].0 && s < rank[d].1)));
                if from[d].is_none() || better {
                    next[d] = cand;
                    from[d] = Some(s);
                    rank[d] = r;
                }
            }
        }
        score = next;
        back.push(from);
    }

    let last = graph.phone_state(n - 1);
    let total = score[last];
    let mut path = vec![0; len];
    let mut s = last;
    for i in (0..len).rev() {
        path[i] = s;
        s = back[i][s].expect("final state is reachable when the span is feasible");
    }

    let framewise: Vec<AlignedLabel> = path
        .iter()
        .map(|&s| {
            if s == graph.entry_state() {
                AlignedLabel::Garbage
            } else {
                AlignedLabel::Phone {
                    index: s - 1,
                    unit: graph.phone_seq[s - 1],
                }
            }
        })
        .collect();
    let first_phone = path
        .iter()
        .position(|&s| s == graph.phone_state(0))
        .expect("every phone occupies at least one frame");
    let t_r = span_start + first_phone;
    let s1 = s1_score(stream, &framewise[first_phone..], t_r);

    Ok(AlignmentResult {
        span_start,
        t_r,
        t_end: span_end,
        framewise,
        s1,
        frames: span_end - t_r + 1,
        log_likelihood: total,
    })
}

/// Mean negative log posterior of the aligned phones over the refined span.
fn s1_score(stream: &PosteriorStream, phones: &[AlignedLabel], t_r: usize) -> f64 {
    let mut sum = 0.0;
    for (i, l) in phones.iter().enumerate() {
        if let AlignedLabel::Phone { unit, .. } = *l {
            sum += stream.log_prob(t_r + i, unit);
        }
    }
    -sum / phones.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn accepted(self) -> bool {
        self == Verdict::Accept
    }
}

pub fn stage2_verify(result: &AlignmentResult, tau: f64) -> Verdict {
    if result.s1 <= tau {
        Verdict::Accept
    } else {
        Verdict::Reject
    }
}

/// Pushback plus alignment for one candidate.
pub fn align_candidate(
    stream: &PosteriorStream,
    phone_seq: &[UnitId],
    t0: usize,
    t_end: usize,
    config: &AlignerConfig,
    garbage: GarbageScore,
) -> Result<AlignmentResult, AlignError> {
    let graph = build_alignment_graph(phone_seq, true)?;
    force_align(stream, pushback(t0, config.t_d), t_end, &graph, garbage)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn stream_from_rows(rows: &[Vec<f32>]) -> PosteriorStream {
        let units = rows[0].len();
        PosteriorStream::new(units, rows.concat(), 0.04).unwrap()
    }

    /// Best segmentation by exhaustive search: frames before the first phone are
    /// garbage; ties go to the earliest boundaries compared from the last
    /// phone backwards.
    pub(crate) fn brute_force(
        stream: &PosteriorStream,
        start: usize,
        end: usize,
        phones: &[UnitId],
        garbage: Option<GarbageScore>,
    ) -> (Vec<usize>, f64) {
        let len = end - start + 1;
        let n = phones.len();
        let max_g = if garbage.is_some() { len - n } else { 0 };
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut bounds = vec![0; n];
        fn rec(
            k: usize,
            pos: usize,
            len: usize,
            n: usize,
            bounds: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if k == n {
                out.push(bounds.clone());
                return;
            }
            // phone k starts at pos (k == 0) or anywhere leaving room for the rest
            let lo = pos;
            let hi = len - (n - k);
            for b in lo..=hi {
                if k == 0 && b != pos {
                    continue;
                }
                bounds[k] = b;
                rec(k + 1, b + 1, len, n, bounds, out);
            }
        }
        let mut all = Vec::new();
        for g in 0..=max_g {
            rec(0, g, len, n, &mut bounds, &mut all);
        }
        for b in all {
            let mut total = 0.0;
            for i in 0..len {
                let t = start + i;
                let e = match b.iter().rposition(|&s| s <= i) {
                    None => garbage.unwrap().log_score(stream, t),
                    Some(k) => stream.log_prob(t, phones[k]),
                };
                total += e;
            }
            let replace = match &best {
                None => true,
                Some((bt, bb)) => {
                    total > *bt || (total == *bt && b.iter().rev().cmp(bb.iter().rev()).is_lt())
                }
            };
            if replace {
                best = Some((total, b));
            }
        }
        let (total, b) = best.unwrap();
        (b.into_iter().map(|x| x + start).collect(), total)
    }

    #[test]
    fn pushback_clamps() {
        assert_eq!(pushback(100, 15), 85);
        assert_eq!(pushback(5, 15), 0);
        assert_eq!(pushback(42, 0), 42);
    }

    #[test]
    fn perfect_posteriors() {
        let rows = vec![
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0],
        ];
        let s = stream_from_rows(&rows);
        let g = build_alignment_graph(&[2, 3, 4], true).unwrap();
        let r = force_align(&s, 0, 2, &g, GarbageScore::Unit(1)).unwrap();
        assert_eq!(r.t_r, 0);
        assert_eq!(r.s1, 0.0);
        assert_eq!(r.frames, 3);
    }

    #[test]
    fn garbage_absorbs_lead() {
        // units: blk, sil, a, b
        let mut rows = vec![vec![0.0, 0.9, 0.05, 0.05]; 3];
        rows.push(vec![0.0, 0.1, 0.8, 0.1]);
        rows.push(vec![0.0, 0.1, 0.1, 0.8]);
        let s = stream_from_rows(&rows);
        let g = build_alignment_graph(&[2, 3], true).unwrap();
        let r = force_align(&s, 0, 4, &g, GarbageScore::Unit(1)).unwrap();
        assert_eq!(r.t_r, 3);
        let expected = -((0.8f32 as f64).ln() * 2.0) / 2.0;
        assert!((r.s1 - expected).abs() < 1e-9);
        assert!((r.s1 - 0.2231).abs() < 1e-4);
        assert_eq!(r.framewise[..3], [AlignedLabel::Garbage; 3]);
    }

    #[test]
    fn uniform_posteriors_score_log_units() {
        let rows = vec![vec![0.25f32; 4]; 8];
        let s = stream_from_rows(&rows);
        let g = build_alignment_graph(&[2, 3], true).unwrap();
        for mode in [
            GarbageScore::Unit(1),
            GarbageScore::MaxPosterior,
            GarbageScore::UniformFloor,
        ] {
            let r = force_align(&s, 0, 7, &g, mode).unwrap();
            assert!((r.s1 - 4f64.ln()).abs() < 1e-9);
            // stay-preference puts every boundary as early as possible
            assert_eq!(r.t_r, 0);
            assert_eq!(r.phone_starts(), vec![0, 1]);
        }
    }

    #[test]
    fn infeasible_and_out_of_range() {
        let s = stream_from_rows(&vec![vec![0.5f32, 0.5]; 4]);
        let g = build_alignment_graph(&[1, 1, 1], true).unwrap();
        assert_eq!(
            force_align(&s, 2, 3, &g, GarbageScore::UniformFloor),
            Err(AlignError::Infeasible {
                frames: 2,
                phones: 3
            })
        );
        assert!(matches!(
            force_align(&s, 0, 4, &g, GarbageScore::UniformFloor),
            Err(AlignError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn thresholds_inclusive() {
        let mut r = AlignmentResult {
            span_start: 0,
            t_r: 0,
            t_end: 0,
            framewise: vec![],
            s1: 0.22,
            frames: 1,
            log_likelihood: 0.0,
        };
        assert_eq!(stage2_verify(&r, 1.5), Verdict::Accept);
        r.s1 = 1.5;
        assert_eq!(stage2_verify(&r, 1.5), Verdict::Accept);
        r.s1 = 2.0;
        assert_eq!(stage2_verify(&r, 1.5), Verdict::Reject);
    }

    #[test]
    fn designated_unit_needs_sil() {
        let p = PhoneSet::from_names(&["<blk>", "a"]).unwrap();
        let c = AlignerConfig::default();
        assert_eq!(c.garbage_score(&p), Err(AlignError::NoGarbageUnit));
        let c = AlignerConfig {
            garbage_mode: GarbageMode::UniformFloor,
            ..c
        };
        assert_eq!(c.garbage_score(&p), Ok(GarbageScore::UniformFloor));
        assert!(AlignerConfig { tau: 0.0, ..c }.validate().is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<UnitId>, usize, usize)> {
        (2usize..=6, 1usize..=4)
            .prop_flat_map(|(units, n)| (Just(units), Just(n), n..=12usize))
            .prop_flat_map(|(units, n, frames)| {
                (
                    prop::collection::vec(prop::collection::vec(0.01f32..1.0, units), frames),
                    prop::collection::vec(1u32..units as u32, n),
                    0usize..3,
                    Just(frames),
                )
            })
            .prop_map(|(raw, phones, mode, frames)| {
                let rows = raw
                    .into_iter()
                    .map(|r| {
                        let s: f32 = r.iter().sum();
                        r.into_iter().map(|x| x / s).collect()
                    })
                    .collect();
                (rows, phones, mode, frames)
            })
    }

    proptest! {
        #[test]
        fn matches_brute_force((rows, phones, mode, frames) in instance(), with_garbage in any::<bool>()) {
            let s = stream_from_rows(&rows);
            let garbage = [GarbageScore::Unit(0), GarbageScore::MaxPosterior, GarbageScore::UniformFloor][mode];
            let g = build_alignment_graph(&phones, with_garbage).unwrap();
            let r = force_align(&s, 0, frames - 1, &g, garbage).unwrap();
            let (starts, total) = brute_force(&s, 0, frames - 1, &phones, with_garbage.then_some(garbage));
            prop_assert_eq!(r.phone_starts(), starts.clone());
            prop_assert_eq!(r.log_likelihood, total);
            prop_assert_eq!(r.t_r, starts[0]);
            let t = frames - starts[0];
            let mut sum = 0.0;
            for (k, &b) in starts.iter().enumerate() {
                let e = starts.get(k + 1).copied().unwrap_or(frames);
                for f in b..e {
                    sum += s.log_prob(f, phones[k]);
                }
            }
            prop_assert!((r.s1 - (-sum / t as f64)).abs() < 1e-9);
            prop_assert!(r.s1 >= 0.0);
        }

        #[test]
        fn tau_monotone(s1 in 0.0f64..10.0, a in 0.01f64..10.0, b in 0.01f64..10.0) {
            let r = AlignmentResult { span_start: 0, t_r: 0, t_end: 0, framewise: vec![], s1, frames: 1, log_likelihood: 0.0 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if stage2_verify(&r, lo).accepted() {
                prop_assert!(stage2_verify(&r, hi).accepted());
            }
        }
    }
}
