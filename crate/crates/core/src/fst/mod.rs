//! Weighted finite-state transducers over the tropical semiring.
//!
//! Only what keyword graphs need is provided: composition, determinization and
//! minimization of acyclic machines, plus the linear alignment graphs used by
//! the forced aligner. Weights are costs (negated log probabilities): `plus` is
//! `min` and `times` is `+`.

mod build;
mod ops;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

pub use build::{
    build_alignment_graph, build_decoding_graph, build_grammar_fst, build_lexicon_fst,
    AlignmentGraph, DecodingGraph,
};
pub use ops::{compose, determinize, minimize};

pub type StateId = usize;
pub type Label = u32;

/// The empty label.
pub const EPSILON: Label = u32::MAX;
/// The abstract garbage symbol `(g)` on alignment graphs. How a frame scores
/// against it is decided by the aligner.
pub const GARBAGE: Label = u32::MAX - 1;

#[derive(Debug, Error, PartialEq)]
pub enum FstError {
    #[error("keyword set is empty")]
    EmptyKeywords,
    #[error("keyword `{0}` is not in the lexicon")]
    UnknownKeyword(String),
    #[error("keywords `{0}` and `{1}` share a pronunciation")]
    AmbiguousPronunciation(String, String),
    #[error("alphabet mismatch: left output alphabet has {left} symbols, right input alphabet has {right}")]
    AlphabetMismatch { left: usize, right: usize },
    #[error("machine is cyclic")]
    Cyclic,
    #[error("machine is not functional: one input maps to several outputs")]
    NonFunctional,
    #[error("machine has input epsilon arcs")]
    InputEpsilon,
    #[error("machine is not deterministic at state {0}")]
    NonDeterministic(StateId),
    #[error("more than {0} paths")]
    TooManyPaths(usize),
    #[error("alignment graph needs a non-empty unit sequence")]
    EmptySequence,
    #[error("graph has no states")]
    EmptyGraph,
    #[error("text line {line}: {message}")]
    Text { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub ilabel: Label,
    pub olabel: Label,
    pub weight: f64,
    pub next: StateId,
}

impl Arc {
    pub fn new(ilabel: Label, olabel: Label, weight: f64, next: StateId) -> Self {
        Self {
            ilabel,
            olabel,
            weight,
            next,
        }
    }

    fn sort_key(&self) -> (Label, Label, u64, StateId) {
        (self.ilabel, self.olabel, self.weight.to_bits(), self.next)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct State {
    arcs: Vec<Arc>,
    final_weight: Option<f64>,
}

/// A weighted transducer. `isyms` and `osyms` are alphabet sizes: every
/// non-special label is below the corresponding size.
#[derive(Debug, Clone, PartialEq)]
pub struct Wfst {
    states: Vec<State>,
    start: StateId,
    isyms: usize,
    osyms: usize,
}

/// One accepting path: non-epsilon input labels, non-epsilon output labels and
/// the path cost including the final weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub input: Vec<Label>,
    pub output: Vec<Label>,
    pub weight: f64,
}

impl Wfst {
    /// A machine with a single non-final start state.
    pub fn new(isyms: usize, osyms: usize) -> Self {
        Self {
            states: vec![State::default()],
            start: 0,
            isyms,
            osyms,
        }
    }

    pub fn add_state(&mut self) -> StateId {
        self.states.push(State::default());
        self.states.len() - 1
    }

    pub fn add_arc(&mut self, from: StateId, arc: Arc) {
        debug_assert!(arc.next < self.states.len());
        debug_assert!(arc.weight.is_finite() && arc.weight >= 0.0);
        self.states[from].arcs.push(arc);
    }

    pub fn set_final(&mut self, state: StateId, weight: f64) {
        self.states[state].final_weight = Some(weight);
    }

    pub fn set_start(&mut self, state: StateId) {
        self.start = state;
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.states.iter().map(|s| s.arcs.len()).sum()
    }

    pub fn arcs(&self, state: StateId) -> &[Arc] {
        &self.states[state].arcs
    }

    pub fn final_weight(&self, state: StateId) -> Option<f64> {
        self.states[state].final_weight
    }

    pub fn is_final(&self, state: StateId) -> bool {
        self.states[state].final_weight.is_some()
    }

    pub fn input_alphabet(&self) -> usize {
        self.isyms
    }

    pub fn output_alphabet(&self) -> usize {
        self.osyms
    }

    pub fn finals(&self) -> impl Iterator<Item = (StateId, f64)> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter_map(|(s, st)| st.final_weight.map(|w| (s, w)))
    }

    /// True when some cycle exists other than single-state self-loops.
    pub fn has_cycle_ignoring_self_loops(&self) -> bool {
        self.topological_order(true).is_none()
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order(false).is_some()
    }

    /// Topological order of all states, or `None` on a cycle.
    pub(crate) fn topological_order(&self, skip_self_loops: bool) -> Option<Vec<StateId>> {
        let n = self.states.len();
        let mut indegree = vec![0usize; n];
        for (s, st) in self.states.iter().enumerate() {
            for a in &st.arcs {
                if skip_self_loops && a.next == s {
                    continue;
                }
                indegree[a.next] += 1;
            }
        }
        let mut ready: Vec<StateId> = (0..n).filter(|&s| indegree[s] == 0).rev().collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = ready.pop() {
            order.push(s);
            for a in &self.states[s].arcs {
                if skip_self_loops && a.next == s {
                    continue;
                }
                indegree[a.next] -= 1;
                if indegree[a.next] == 0 {
                    ready.push(a.next);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Removes states that are not both reachable from the start and able to
    /// reach a final state. The start state is always kept.
    pub fn connect(&self) -> Wfst {
        let n = self.states.len();
        let mut reach = vec![false; n];
        let mut stack = vec![self.start];
        reach[self.start] = true;
        while let Some(s) = stack.pop() {
            for a in &self.states[s].arcs {
                if !reach[a.next] {
                    reach[a.next] = true;
                    stack.push(a.next);
                }
            }
        }
        let mut reverse: Vec<Vec<StateId>> = vec![Vec::new(); n];
        for (s, st) in self.states.iter().enumerate() {
            for a in &st.arcs {
                reverse[a.next].push(s);
            }
        }
        let mut coreach = vec![false; n];
        let mut stack: Vec<StateId> = self.finals().map(|(s, _)| s).collect();
        for &s in &stack {
            coreach[s] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &reverse[s] {
                if !coreach[p] {
                    coreach[p] = true;
                    stack.push(p);
                }
            }
        }
        let keep: Vec<bool> = (0..n)
            .map(|s| s == self.start || (reach[s] && coreach[s]))
            .collect();
        self.retain_states(&keep)
    }

    fn retain_states(&self, keep: &[bool]) -> Wfst {
        let mut map = vec![usize::MAX; self.states.len()];
        let mut out = Wfst {
            states: Vec::new(),
            start: 0,
            isyms: self.isyms,
            osyms: self.osyms,
        };
        for (s, &k) in keep.iter().enumerate() {
            if k {
                map[s] = out.states.len();
                out.states.push(State {
                    arcs: Vec::new(),
                    final_weight: self.states[s].final_weight,
                });
            }
        }
        for (s, st) in self.states.iter().enumerate() {
            if !keep[s] {
                continue;
            }
            for a in &st.arcs {
                if keep[a.next] {
                    out.states[map[s]].arcs.push(Arc {
                        next: map[a.next],
                        ..*a
                    });
                }
            }
        }
        out.start = map[self.start];
        out
    }

    /// Renumbers states in breadth-first order from the start, visiting arcs
    /// sorted by label, and sorts every arc list. Unreachable states are
    /// dropped. Two machines equal after this are isomorphic.
    pub fn canonicalize(&self) -> Wfst {
        let n = self.states.len();
        let mut map = vec![usize::MAX; n];
        let mut order = vec![self.start];
        map[self.start] = 0;
        let mut head = 0;
        while head < order.len() {
            let s = order[head];
            head += 1;
            let mut arcs = self.states[s].arcs.clone();
            arcs.sort_by_key(|a| (a.ilabel, a.olabel, a.weight.to_bits(), a.next));
            for a in arcs {
                if map[a.next] == usize::MAX {
                    map[a.next] = order.len();
                    order.push(a.next);
                }
            }
        }
        let mut out = Wfst {
            states: Vec::with_capacity(order.len()),
            start: 0,
            isyms: self.isyms,
            osyms: self.osyms,
        };
        for &s in &order {
            let mut arcs: Vec<Arc> = self.states[s]
                .arcs
                .iter()
                .map(|a| Arc {
                    next: map[a.next],
                    ..*a
                })
                .collect();
            arcs.sort_by_key(Arc::sort_key);
            out.states.push(State {
                arcs,
                final_weight: self.states[s].final_weight,
            });
        }
        out
    }

    /// At most one arc per (state, input label).
    pub fn is_deterministic(&self) -> bool {
        self.first_nondeterministic_state().is_none()
    }

    pub(crate) fn first_nondeterministic_state(&self) -> Option<StateId> {
        self.states.iter().position(|st| {
            let mut seen = HashSet::new();
            st.arcs.iter().any(|a| !seen.insert(a.ilabel))
        })
    }

    /// Lists every accepting path, sorted by (input, output, weight).
    ///
    /// Self-loops are not expanded. Any other cycle is an error, as is a path
    /// count above `max_paths`.
    pub fn enumerate_paths(&self, max_paths: usize) -> Result<Vec<Path>, FstError> {
        if self.has_cycle_ignoring_self_loops() {
            return Err(FstError::Cyclic);
        }
        let mut paths = Vec::new();
        let mut input = Vec::new();
        let mut output = Vec::new();
        self.walk(
            self.start,
            0.0,
            &mut input,
            &mut output,
            &mut paths,
            max_paths,
        )?;
        paths.sort_by(|a, b| {
            a.input
                .cmp(&b.input)
                .then_with(|| a.output.cmp(&b.output))
                .then_with(|| a.weight.total_cmp(&b.weight))
        });
        Ok(paths)
    }

    fn walk(
        &self,
        s: StateId,
        cost: f64,
        input: &mut Vec<Label>,
        output: &mut Vec<Label>,
        paths: &mut Vec<Path>,
        max_paths: usize,
    ) -> Result<(), FstError> {
        if let Some(fw) = self.states[s].final_weight {
            if paths.len() == max_paths {
                return Err(FstError::TooManyPaths(max_paths));
            }
            paths.push(Path {
                input: input.clone(),
                output: output.clone(),
                weight: cost + fw,
            });
        }
        for a in &self.states[s].arcs {
            if a.next == s {
                continue;
            }
            let pushed_in = a.ilabel != EPSILON;
            let pushed_out = a.olabel != EPSILON;
            if pushed_in {
                input.push(a.ilabel);
            }
            if pushed_out {
                output.push(a.olabel);
            }
            self.walk(a.next, cost + a.weight, input, output, paths, max_paths)?;
            if pushed_in {
                input.pop();
            }
            if pushed_out {
                output.pop();
            }
        }
        Ok(())
    }

    /// Whether the machine, read as an acceptor on input labels, accepts `labels`.
    pub fn accepts(&self, labels: &[Label]) -> bool {
        let mut current = self.eps_closure(BTreeSet::from([self.start]));
        for &l in labels {
            let next: BTreeSet<StateId> = current
                .iter()
                .flat_map(|&s| self.states[s].arcs.iter())
                .filter(|a| a.ilabel == l)
                .map(|a| a.next)
                .collect();
            if next.is_empty() {
                return false;
            }
            current = self.eps_closure(next);
        }
        current.iter().any(|&s| self.is_final(s))
    }

    fn eps_closure(&self, mut set: BTreeSet<StateId>) -> BTreeSet<StateId> {
        let mut stack: Vec<StateId> = set.iter().copied().collect();
        while let Some(s) = stack.pop() {
            for a in &self.states[s].arcs {
                if a.ilabel == EPSILON && set.insert(a.next) {
                    stack.push(a.next);
                }
            }
        }
        set
    }

    /// AT&T-style text: `src<TAB>dst<TAB>ilabel<TAB>olabel<TAB>weight` per
    /// arc, `state<TAB>weight` per final state. The first line belongs to the
    /// start state. Epsilon is written `<eps>`, garbage `<g>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let order =
            std::iter::once(self.start).chain((0..self.states.len()).filter(|&s| s != self.start));
        for s in order {
            for a in &self.states[s].arcs {
                let _ = writeln!(
                    out,
                    "{s}\t{}\t{}\t{}\t{}",
                    a.next,
                    label_text(a.ilabel),
                    label_text(a.olabel),
                    a.weight
                );
            }
            if let Some(w) = self.states[s].final_weight {
                let _ = writeln!(out, "{s}\t{w}");
            }
        }
        out
    }

    pub fn from_text(text: &str, isyms: usize, osyms: usize) -> Result<Wfst, FstError> {
        let mut fst = Wfst {
            states: Vec::new(),
            start: 0,
            isyms,
            osyms,
        };
        let mut start = None;
        let ensure = |fst: &mut Wfst, s: StateId| {
            while fst.states.len() <= s {
                fst.states.push(State::default());
            }
        };
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |m: &str| FstError::Text {
                line,
                message: m.to_string(),
            };
            let fields: Vec<&str> = raw.split('\t').collect();
            let state = |f: &str| f.parse::<StateId>().map_err(|_| err("bad state id"));
            let weight = |f: &str| {
                f.parse::<f64>()
                    .ok()
                    .filter(|w| w.is_finite() && *w >= 0.0)
                    .ok_or_else(|| err("bad weight"))
            };
            match fields.len() {
                2 => {
                    let s = state(fields[0])?;
                    ensure(&mut fst, s);
                    fst.states[s].final_weight = Some(weight(fields[1])?);
                    start.get_or_insert(s);
                }
                5 => {
                    let s = state(fields[0])?;
                    let d = state(fields[1])?;
                    ensure(&mut fst, s.max(d));
                    let il = parse_label(fields[2]).ok_or_else(|| err("bad input label"))?;
                    let ol = parse_label(fields[3]).ok_or_else(|| err("bad output label"))?;
                    let w = weight(fields[4])?;
                    fst.states[s].arcs.push(Arc::new(il, ol, w, d));
                    start.get_or_insert(s);
                }
                _ => return Err(err("expected 2 or 5 tab-separated fields")),
            }
        }
        fst.start = start.ok_or(FstError::EmptyGraph)?;
        Ok(fst)
    }
}

fn label_text(l: Label) -> String {
    match l {
        EPSILON => "<eps>".to_string(),
        GARBAGE => "<g>".to_string(),
        l => l.to_string(),
    }
}

fn parse_label(s: &str) -> Option<Label> {
    match s {
        "<eps>" => Some(EPSILON),
        "<g>" => Some(GARBAGE),
        s => s.parse().ok().filter(|&l| l < GARBAGE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(labels: &[Label]) -> Wfst {
        let mut f = Wfst::new(10, 10);
        let mut s = f.start();
        for &l in labels {
            let n = f.add_state();
            f.add_arc(s, Arc::new(l, l, 0.0, n));
            s = n;
        }
        f.set_final(s, 0.0);
        f
    }

    #[test]
    fn chain_has_one_path() {
        let paths = chain(&[1, 2, 3]).enumerate_paths(10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].input, vec![1, 2, 3]);
    }

    #[test]
    fn empty_language() {
        let f = Wfst::new(3, 3);
        assert!(f.enumerate_paths(10).unwrap().is_empty());
    }

    #[test]
    fn path_limit() {
        let mut f = Wfst::new(5, 5);
        let end = f.add_state();
        for l in 0..5 {
            f.add_arc(0, Arc::new(l, EPSILON, 0.0, end));
        }
        f.set_final(end, 0.0);
        assert_eq!(f.enumerate_paths(4), Err(FstError::TooManyPaths(4)));
        assert_eq!(f.enumerate_paths(5).unwrap().len(), 5);
    }

    #[test]
    fn cycles_rejected_by_enumeration() {
        let mut f = chain(&[1, 2]);
        f.add_arc(2, Arc::new(1, 1, 0.0, 1));
        assert_eq!(f.enumerate_paths(10), Err(FstError::Cyclic));
        let mut g = chain(&[1, 2]);
        g.add_arc(1, Arc::new(1, 1, 0.0, 1));
        assert_eq!(g.enumerate_paths(10).unwrap().len(), 1);
    }

    #[test]
    fn text_round_trip() {
        let mut f = chain(&[1, 2]);
        f.add_arc(1, Arc::new(EPSILON, GARBAGE, 0.5, 2));
        let text = f.to_text();
        assert!(text.starts_with("0\t1\t1\t1\t0\n"));
        let back = Wfst::from_text(&text, 10, 10).unwrap();
        assert_eq!(back, f);
        assert!(matches!(
            Wfst::from_text("0\t1\tx\t1\t0\n", 10, 10),
            Err(FstError::Text { line: 1, .. })
        ));
    }

    #[test]
    fn connect_trims_dead_ends() {
        let mut f = chain(&[1]);
        let dead = f.add_state();
        f.add_arc(0, Arc::new(2, 2, 0.0, dead));
        assert_eq!(f.connect().num_states(), 2);
    }

    #[test]
    fn canonical_form_is_order_independent() {
        let mut a = Wfst::new(5, 5);
        let x = a.add_state();
        let y = a.add_state();
        a.add_arc(0, Arc::new(2, 2, 0.0, y));
        a.add_arc(0, Arc::new(1, 1, 0.0, x));
        a.set_final(x, 0.0);
        a.set_final(y, 0.0);
        let mut b = Wfst::new(5, 5);
        let y2 = b.add_state();
        let x2 = b.add_state();
        b.add_arc(0, Arc::new(1, 1, 0.0, x2));
        b.add_arc(0, Arc::new(2, 2, 0.0, y2));
        b.set_final(x2, 0.0);
        b.set_final(y2, 0.0);
        assert_eq!(a.canonicalize(), b.canonicalize());
    }
}
