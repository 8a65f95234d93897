use std::collections::HashMap;

use super::{
    compose, determinize, minimize, Arc, FstError, Label, StateId, Wfst, EPSILON, GARBAGE,
};
use crate::symbols::{KeywordSet, Lexicon, UnitId};

fn input_alphabet(lexicon: &Lexicon, keywords: &KeywordSet) -> usize {
    keywords
        .names()
        .iter()
        .filter_map(|k| lexicon.get(k))
        .flatten()
        .map(|&u| u as usize + 1)
        .max()
        .unwrap_or(0)
}

/// L: one branch per active keyword mapping its unit sequence to the keyword's
/// output symbol (its position in the set). The output sits on the first arc.
pub fn build_lexicon_fst(lexicon: &Lexicon, keywords: &KeywordSet) -> Result<Wfst, FstError> {
    if keywords.is_empty() {
        return Err(FstError::EmptyKeywords);
    }
    let mut l = Wfst::new(input_alphabet(lexicon, keywords), keywords.len());
    for (k, name) in keywords.names().iter().enumerate() {
        let seq = lexicon
            .get(name)
            .ok_or_else(|| FstError::UnknownKeyword(name.clone()))?;
        let mut s = l.start();
        for (i, &unit) in seq.iter().enumerate() {
            let n = l.add_state();
            let out = if i == 0 { k as Label } else { EPSILON };
            l.add_arc(s, Arc::new(unit, out, 0.0, n));
            s = n;
        }
        l.set_final(s, 0.0);
    }
    Ok(l)
}

/// G: accepts exactly one keyword symbol.
pub fn build_grammar_fst(keywords: &KeywordSet) -> Result<Wfst, FstError> {
    if keywords.is_empty() {
        return Err(FstError::EmptyKeywords);
    }
    let mut g = Wfst::new(keywords.len(), keywords.len());
    let end = g.add_state();
    for k in 0..keywords.len() as Label {
        g.add_arc(g.start(), Arc::new(k, k, 0.0, end));
    }
    g.set_final(end, 0.0);
    Ok(g)
}

/// The compiled detection graph together with the keyword tables needed to
/// interpret its output symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingGraph {
    pub fst: Wfst,
    pub keywords: Vec<String>,
    pub pronunciations: Vec<Vec<UnitId>>,
}

impl DecodingGraph {
    pub fn keyword(&self, olabel: Label) -> Option<&str> {
        self.keywords.get(olabel as usize).map(String::as_str)
    }
}

/// `min(det(L ∘ G))`.
pub fn build_decoding_graph(
    lexicon: &Lexicon,
    keywords: &KeywordSet,
) -> Result<DecodingGraph, FstError> {
    let mut seen: HashMap<&[UnitId], &str> = HashMap::new();
    let mut pronunciations = Vec::with_capacity(keywords.len());
    for name in keywords.names() {
        let seq = lexicon
            .get(name)
            .ok_or_else(|| FstError::UnknownKeyword(name.clone()))?;
        if let Some(other) = seen.insert(seq, name) {
            return Err(FstError::AmbiguousPronunciation(
                other.to_string(),
                name.clone(),
            ));
        }
        pronunciations.push(seq.to_vec());
    }
    let l = build_lexicon_fst(lexicon, keywords)?;
    let g = build_grammar_fst(keywords)?;
    let lg = compose(&l, &g)?;
    let fst = minimize(&determinize(&lg)?)?;
    Ok(DecodingGraph {
        fst,
        keywords: keywords.names().to_vec(),
        pronunciations,
    })
}

/// Linear forced-alignment graph for one candidate.
///
/// State 0 is the entry state; with garbage it carries a `(g)` self-loop.
/// States `1..=n` are the phone states, each with a self-loop on its phone,
/// entered by an arc carrying the same phone. State `n` is the only final
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGraph {
    pub graph: Wfst,
    pub phone_seq: Vec<UnitId>,
    pub has_garbage: bool,
}

impl AlignmentGraph {
    pub fn phone_state(&self, index: usize) -> StateId {
        index + 1
    }

    pub fn entry_state(&self) -> StateId {
        0
    }
}

pub fn build_alignment_graph(
    phone_seq: &[UnitId],
    with_garbage: bool,
) -> Result<AlignmentGraph, FstError> {
    if phone_seq.is_empty() {
        return Err(FstError::EmptySequence);
    }
    let syms = phone_seq.iter().map(|&u| u as usize + 1).max().unwrap_or(0);
    let mut g = Wfst::new(syms, syms);
    if with_garbage {
        g.add_arc(0, Arc::new(GARBAGE, GARBAGE, 0.0, 0));
    }
    let mut prev = g.start();
    for &unit in phone_seq {
        let s = g.add_state();
        g.add_arc(prev, Arc::new(unit, unit, 0.0, s));
        g.add_arc(s, Arc::new(unit, unit, 0.0, s));
        prev = s;
    }
    g.set_final(prev, 0.0);
    Ok(AlignmentGraph {
        graph: g,
        phone_seq: phone_seq.to_vec(),
        has_garbage: with_garbage,
    })
}
