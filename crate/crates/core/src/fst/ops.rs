use std::collections::{BTreeMap, HashMap, VecDeque};

use super::{Arc, FstError, Label, StateId, Wfst, EPSILON};

/// Epsilon-aware composition.
///
/// A two-state filter keeps exactly one composed path per pair of matching
/// paths: between two matched labels, moves on the left machine alone
/// (output epsilon) come before moves on the right machine alone (input
/// epsilon). The result is trimmed with [`Wfst::connect`].
pub fn compose(a: &Wfst, b: &Wfst) -> Result<Wfst, FstError> {
    if a.osyms != b.isyms {
        return Err(FstError::AlphabetMismatch {
            left: a.osyms,
            right: b.isyms,
        });
    }
    type Key = (StateId, StateId, u8);
    let mut out = Wfst::new(a.isyms, b.osyms);
    let mut keys: Vec<Key> = vec![(a.start, b.start, 0)];
    let mut ids: HashMap<Key, StateId> = HashMap::from([(keys[0], 0)]);

    let mut next = 0;
    while next < keys.len() {
        let src = next;
        let (q1, q2, filter) = keys[src];
        next += 1;

        let mut moves: Vec<(Label, Label, f64, Key)> = Vec::new();
        for a1 in a.arcs(q1) {
            if a1.olabel == EPSILON {
                if filter == 0 {
                    moves.push((a1.ilabel, EPSILON, a1.weight, (a1.next, q2, 0)));
                }
                continue;
            }
            for a2 in b.arcs(q2).iter().filter(|a2| a2.ilabel == a1.olabel) {
                moves.push((
                    a1.ilabel,
                    a2.olabel,
                    a1.weight + a2.weight,
                    (a1.next, a2.next, 0),
                ));
            }
        }
        for a2 in b.arcs(q2).iter().filter(|a2| a2.ilabel == EPSILON) {
            moves.push((EPSILON, a2.olabel, a2.weight, (q1, a2.next, 1)));
        }

        for (il, ol, w, key) in moves {
            let dst = match ids.get(&key) {
                Some(&d) => d,
                None => {
                    let d = out.add_state();
                    ids.insert(key, d);
                    keys.push(key);
                    d
                }
            };
            out.add_arc(src, Arc::new(il, ol, w, dst));
        }
        if let (Some(w1), Some(w2)) = (a.final_weight(q1), b.final_weight(q2)) {
            out.set_final(src, w1 + w2);
        }
    }
    Ok(out.connect())
}

/// One member of a determinization subset: a source state with the weight and
/// output still owed on the way to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Residual {
    state: StateId,
    weight_bits: u64,
    output: Vec<Label>,
}

/// Determinizes an acyclic functional transducer without input epsilons.
///
/// Outputs are delayed until every path in a subset agrees on them. Output
/// still pending at a final subset is flushed through a chain of
/// input-epsilon arcs ending in a new final state.
pub fn determinize(m: &Wfst) -> Result<Wfst, FstError> {
    if !m.is_acyclic() {
        return Err(FstError::Cyclic);
    }
    if m.states
        .iter()
        .flat_map(|s| &s.arcs)
        .any(|a| a.ilabel == EPSILON)
    {
        return Err(FstError::InputEpsilon);
    }

    let mut out = Wfst::new(m.isyms, m.osyms);
    let start = vec![Residual {
        state: m.start,
        weight_bits: 0f64.to_bits(),
        output: Vec::new(),
    }];
    let mut ids: HashMap<Vec<Residual>, StateId> = HashMap::from([(start.clone(), 0)]);
    let mut pending: VecDeque<(StateId, Vec<Residual>)> = VecDeque::from([(0, start)]);

    while let Some((src, subset)) = pending.pop_front() {
        let mut final_out: Option<(f64, &[Label])> = None;
        for r in &subset {
            if let Some(fw) = m.final_weight(r.state) {
                let w = f64::from_bits(r.weight_bits) + fw;
                match &mut final_out {
                    None => final_out = Some((w, &r.output)),
                    Some((best, o)) => {
                        if *o != r.output.as_slice() {
                            return Err(FstError::NonFunctional);
                        }
                        *best = best.min(w);
                    }
                }
            }
        }
        if let Some((fw, owed)) = final_out {
            let mut tail = src;
            for &label in owed {
                let n = out.add_state();
                out.add_arc(tail, Arc::new(EPSILON, label, 0.0, n));
                tail = n;
            }
            out.set_final(tail, fw);
        }

        let mut by_label: BTreeMap<Label, Vec<(StateId, f64, Vec<Label>)>> = BTreeMap::new();
        for r in &subset {
            let w = f64::from_bits(r.weight_bits);
            for arc in m.arcs(r.state) {
                let mut output = r.output.clone();
                if arc.olabel != EPSILON {
                    output.push(arc.olabel);
                }
                by_label
                    .entry(arc.ilabel)
                    .or_default()
                    .push((arc.next, w + arc.weight, output));
            }
        }

        for (label, mut items) in by_label {
            items.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
            let mut merged: Vec<(StateId, f64, Vec<Label>)> = Vec::new();
            for item in items {
                match merged.last_mut() {
                    Some(last) if last.0 == item.0 => {
                        if last.2 != item.2 {
                            return Err(FstError::NonFunctional);
                        }
                    }
                    _ => merged.push(item),
                }
            }
            let min_w = merged.iter().map(|i| i.1).fold(f64::INFINITY, f64::min);
            let lcp = common_prefix_len(merged.iter().map(|i| i.2.as_slice()));
            let emitted = if lcp > 0 { Some(merged[0].2[0]) } else { None };
            let target: Vec<Residual> = merged
                .into_iter()
                .map(|(state, w, output)| Residual {
                    state,
                    weight_bits: (w - min_w).to_bits(),
                    output: output[usize::from(emitted.is_some())..].to_vec(),
                })
                .collect();
            let dst = match ids.get(&target) {
                Some(&d) => d,
                None => {
                    let d = out.add_state();
                    ids.insert(target.clone(), d);
                    pending.push_back((d, target));
                    d
                }
            };
            out.add_arc(src, Arc::new(label, emitted.unwrap_or(EPSILON), min_w, dst));
        }
    }
    Ok(out.canonicalize())
}

fn common_prefix_len<'a>(mut seqs: impl Iterator<Item = &'a [Label]>) -> usize {
    let Some(first) = seqs.next() else {
        return 0;
    };
    seqs.fold(first.len(), |n, s| {
        first
            .iter()
            .zip(s)
            .take(n)
            .take_while(|(a, b)| a == b)
            .count()
    })
}

/// Minimizes an acyclic deterministic machine.
///
/// Arcs are compared on (input, output, weight, target class), so the machine
/// is minimized as an acceptor over encoded labels. Equivalent states are
/// found bottom-up in reverse topological order.
pub fn minimize(m: &Wfst) -> Result<Wfst, FstError> {
    if !m.is_acyclic() {
        return Err(FstError::Cyclic);
    }
    if let Some(s) = m.first_nondeterministic_state() {
        return Err(FstError::NonDeterministic(s));
    }
    let m = m.connect();
    let order = m.topological_order(false).ok_or(FstError::Cyclic)?;

    type Signature = (Option<u64>, Vec<(Label, Label, u64, usize)>);
    let mut class = vec![usize::MAX; m.num_states()];
    let mut classes: HashMap<Signature, usize> = HashMap::new();
    let mut representative = Vec::new();
    for &s in order.iter().rev() {
        let mut arcs: Vec<(Label, Label, u64, usize)> = m
            .arcs(s)
            .iter()
            .map(|a| (a.ilabel, a.olabel, a.weight.to_bits(), class[a.next]))
            .collect();
        arcs.sort_unstable();
        let sig = (m.final_weight(s).map(f64::to_bits), arcs);
        let n = classes.len();
        class[s] = *classes.entry(sig).or_insert_with(|| {
            representative.push(s);
            n
        });
    }

    let mut out = Wfst::new(m.isyms, m.osyms);
    for _ in 1..representative.len() {
        out.add_state();
    }
    for (c, &s) in representative.iter().enumerate() {
        for a in m.arcs(s) {
            out.add_arc(c, Arc::new(a.ilabel, a.olabel, a.weight, class[a.next]));
        }
        if let Some(w) = m.final_weight(s) {
            out.set_final(c, w);
        }
    }
    out.set_start(class[m.start]);
    Ok(out.canonicalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acceptor(words: &[&[Label]], syms: usize) -> Wfst {
        let mut f = Wfst::new(syms, syms);
        for w in words {
            let mut s = f.start();
            for &l in *w {
                let n = f.add_state();
                f.add_arc(s, Arc::new(l, l, 0.0, n));
                s = n;
            }
            f.set_final(s, 0.0);
        }
        f
    }

    #[test]
    fn compose_matches_through_epsilons() {
        // a: 1:5 2:<eps>  b: 5:7
        let mut a = Wfst::new(3, 6);
        let s1 = a.add_state();
        let s2 = a.add_state();
        a.add_arc(0, Arc::new(1, 5, 0.5, s1));
        a.add_arc(s1, Arc::new(2, EPSILON, 0.25, s2));
        a.set_final(s2, 0.0);
        let mut b = Wfst::new(6, 8);
        let t1 = b.add_state();
        b.add_arc(0, Arc::new(5, 7, 1.0, t1));
        b.set_final(t1, 0.0);
        let c = compose(&a, &b).unwrap();
        let paths = c.enumerate_paths(10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].input, vec![1, 2]);
        assert_eq!(paths[0].output, vec![7]);
        assert_eq!(paths[0].weight, 1.75);
    }

    #[test]
    fn compose_filter_avoids_duplicate_paths() {
        // a emits its output after an epsilon; b consumes an epsilon first.
        let mut a = Wfst::new(2, 2);
        let s1 = a.add_state();
        let s2 = a.add_state();
        a.add_arc(0, Arc::new(0, EPSILON, 0.0, s1));
        a.add_arc(s1, Arc::new(1, 1, 0.0, s2));
        a.set_final(s2, 0.0);
        let mut b = Wfst::new(2, 2);
        let t1 = b.add_state();
        let t2 = b.add_state();
        b.add_arc(0, Arc::new(EPSILON, 0, 0.0, t1));
        b.add_arc(t1, Arc::new(1, 1, 0.0, t2));
        b.set_final(t2, 0.0);
        let paths = compose(&a, &b).unwrap().enumerate_paths(10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].input, vec![0, 1]);
        assert_eq!(paths[0].output, vec![0, 1]);
    }

    #[test]
    fn compose_alphabet_mismatch() {
        let a = Wfst::new(3, 4);
        let b = Wfst::new(5, 5);
        assert_eq!(
            compose(&a, &b),
            Err(FstError::AlphabetMismatch { left: 4, right: 5 })
        );
    }

    #[test]
    fn determinize_merges_prefixes() {
        let f = acceptor(&[&[1, 2, 3], &[1, 2, 4]], 5);
        assert!(!f.is_deterministic());
        let d = determinize(&f).unwrap();
        assert!(d.is_deterministic());
        assert_eq!(d.num_states(), 5);
        assert_eq!(
            d.enumerate_paths(10).unwrap(),
            f.enumerate_paths(10).unwrap()
        );
    }

    #[test]
    fn determinize_delays_output() {
        // 1:7 2:<eps>  and  1:8 3:<eps>
        let mut f = Wfst::new(4, 9);
        for (out, second) in [(7, 2), (8, 3)] {
            let a = f.add_state();
            let b = f.add_state();
            f.add_arc(0, Arc::new(1, out, 0.0, a));
            f.add_arc(a, Arc::new(second, EPSILON, 0.0, b));
            f.set_final(b, 0.0);
        }
        let d = determinize(&f).unwrap();
        assert!(d.is_deterministic());
        assert_eq!(d.arcs(0).len(), 1);
        assert_eq!(d.arcs(0)[0].olabel, EPSILON);
        assert_eq!(
            d.enumerate_paths(10).unwrap(),
            f.enumerate_paths(10).unwrap()
        );
    }

    #[test]
    fn determinize_flushes_output_at_final_prefix() {
        // "1 2" -> 7 and "1 2 3" -> 8
        let mut f = Wfst::new(4, 9);
        for (out, word) in [(7, &[1, 2][..]), (8, &[1, 2, 3][..])] {
            let mut s = 0;
            for (i, &l) in word.iter().enumerate() {
                let n = f.add_state();
                f.add_arc(s, Arc::new(l, if i == 0 { out } else { EPSILON }, 0.0, n));
                s = n;
            }
            f.set_final(s, 0.0);
        }
        let d = determinize(&f).unwrap();
        assert!(d.is_deterministic());
        assert_eq!(
            d.enumerate_paths(10).unwrap(),
            f.enumerate_paths(10).unwrap()
        );
        assert!(d
            .states
            .iter()
            .flat_map(|s| &s.arcs)
            .any(|a| a.ilabel == EPSILON && a.olabel == 7));
    }

    #[test]
    fn determinize_keeps_min_weight() {
        let mut f = Wfst::new(2, 2);
        let a = f.add_state();
        let b = f.add_state();
        f.add_arc(0, Arc::new(1, 1, 2.0, a));
        f.add_arc(0, Arc::new(1, 1, 0.5, b));
        f.set_final(a, 0.0);
        f.set_final(b, 0.0);
        let d = determinize(&f).unwrap();
        let paths = d.enumerate_paths(10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].weight, 0.5);
    }

    #[test]
    fn determinize_rejects_bad_input() {
        let mut cyclic = acceptor(&[&[1]], 2);
        cyclic.add_arc(1, Arc::new(1, 1, 0.0, 0));
        assert_eq!(determinize(&cyclic), Err(FstError::Cyclic));

        let mut ambiguous = Wfst::new(2, 3);
        let a = ambiguous.add_state();
        let b = ambiguous.add_state();
        ambiguous.add_arc(0, Arc::new(1, 1, 0.0, a));
        ambiguous.add_arc(0, Arc::new(1, 2, 0.0, b));
        ambiguous.set_final(a, 0.0);
        ambiguous.set_final(b, 0.0);
        assert_eq!(determinize(&ambiguous), Err(FstError::NonFunctional));
    }

    #[test]
    fn deterministic_chain_is_unchanged() {
        let f = acceptor(&[&[1, 2, 3]], 4);
        assert_eq!(determinize(&f).unwrap(), f.canonicalize());
    }

    #[test]
    fn minimize_shares_suffixes() {
        let f = determinize(&acceptor(&[&[1, 3], &[2, 3]], 4)).unwrap();
        let m = minimize(&f).unwrap();
        assert!(m.num_states() < f.num_states());
        assert_eq!(m.num_states(), 3);
        assert_eq!(
            m.enumerate_paths(10).unwrap(),
            f.enumerate_paths(10).unwrap()
        );
        assert_eq!(minimize(&m).unwrap(), m);
    }

    #[test]
    fn minimize_requires_determinism() {
        let f = acceptor(&[&[1, 2], &[1, 3]], 4);
        assert_eq!(minimize(&f), Err(FstError::NonDeterministic(0)));
    }

    #[test]
    fn minimal_input_unchanged_in_size() {
        let f = acceptor(&[&[1, 2, 3]], 4);
        assert_eq!(minimize(&f).unwrap().num_states(), 4);
    }
}
