//! Seeded synthetic corpora with planted keywords and ground truth.
//!
//! Positives hold one keyword each. The alignment stream carries the
//! keyword's units over consecutive segments; the detection stream spikes
//! once per unit, the first spike `delay` frames late and the last on the
//! keyword's final frame. Negatives are minute-long runs of random unit churn
//! with occasional decoys: a keyword spelled out in the detection stream whose
//! alignment evidence is only partly present.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use super::{Corpus, LoadedUtterance, Utterance};
use crate::error::{Error, Result};
use crate::posterior::PosteriorStream;
use crate::symbols::{KeywordSet, Lexicon, PhoneSet, UnitId, BLANK_NAME, GARBAGE_NAME};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Generated inventory size, excluding blank and silence.
    pub num_phones: usize,
    pub num_keywords: usize,
    pub min_keyword_len: usize,
    pub max_keyword_len: usize,
    /// Keywords to plant; every active keyword when empty.
    pub keywords: Vec<String>,
    pub positives: usize,
    pub negative_hours: f64,
    pub negative_utterance_secs: f64,
    /// Posterior mass on the planted unit.
    pub p_hit: f64,
    /// Mass spread over other units on background frames.
    pub epsilon: f64,
    /// Emission delay of the first detection spike, in frames.
    pub delay: usize,
    pub frame_duration: f32,
    pub min_phone_frames: usize,
    pub max_phone_frames: usize,
    pub min_margin_frames: usize,
    pub max_margin_frames: usize,
    pub decoys_per_hour: f64,
    /// Probability that a decoy unit has matching alignment evidence.
    pub decoy_support: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_phones: 46,
            num_keywords: 29,
            min_keyword_len: 6,
            max_keyword_len: 8,
            keywords: Vec::new(),
            positives: 200,
            negative_hours: 2.0,
            negative_utterance_secs: 60.0,
            p_hit: 0.9,
            epsilon: 0.05,
            delay: 10,
            frame_duration: 0.04,
            min_phone_frames: 4,
            max_phone_frames: 6,
            min_margin_frames: 20,
            max_margin_frames: 40,
            decoys_per_hour: 30.0,
            decoy_support: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if !(0.0..=1.0).contains(&self.p_hit) || self.p_hit <= 0.5 {
            return bad("p_hit must be in (0.5, 1]");
        }
        if !(0.0..0.5).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.decoy_support) {
            return bad("decoy_support must be in [0, 1]");
        }
        if self.min_keyword_len == 0 || self.min_keyword_len > self.max_keyword_len {
            return bad("keyword length range is empty");
        }
        if self.min_phone_frames == 0 || self.min_phone_frames > self.max_phone_frames {
            return bad("phone duration range is empty");
        }
        if self.min_margin_frames > self.max_margin_frames {
            return bad("margin range is empty");
        }
        if self.frame_duration.is_nan() || self.frame_duration <= 0.0 {
            return bad("frame_duration must be positive");
        }
        if self.negative_hours.is_nan() || self.negative_hours < 0.0 || self.decoys_per_hour < 0.0 {
            return bad("negative_hours and decoys_per_hour must be non-negative");
        }
        if self.negative_utterance_secs.is_nan() || self.negative_utterance_secs <= 0.0 {
            return bad("negative_utterance_secs must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub phones: PhoneSet,
    pub lexicon: Lexicon,
    pub keywords: KeywordSet,
    pub utterances: Vec<LoadedUtterance>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Phones `p00..`, keywords `kw00..` with distinct random pronunciations.
pub fn generate_inventory(spec: &SynthSpec, seed: u64) -> Result<(PhoneSet, Lexicon, KeywordSet)> {
    spec.validate()?;
    if spec.num_phones == 0 || spec.num_keywords == 0 {
        return Err(Error::Config("synth: empty generated inventory".into()));
    }
    let mut names = vec![BLANK_NAME.to_string(), GARBAGE_NAME.to_string()];
    names.extend((0..spec.num_phones).map(|i| format!("p{i:02}")));
    let phones = PhoneSet::from_names(&names)?;
    let mut rng = rng_for(seed, u64::MAX);
    let mut lexicon = Lexicon::default();
    let mut seen = std::collections::HashSet::new();
    let mut attempts = 0;
    while lexicon.len() < spec.num_keywords {
        attempts += 1;
        if attempts > 1000 * spec.num_keywords {
            return Err(Error::Config(
                "synth: cannot draw distinct pronunciations".into(),
            ));
        }
        let len = rng.random_range(spec.min_keyword_len..=spec.max_keyword_len);
        let seq: Vec<UnitId> = (0..len)
            .map(|_| rng.random_range(2..2 + spec.num_phones as UnitId))
            .collect();
        if seen.insert(seq.clone()) {
            let name = format!("kw{:02}", lexicon.len());
            lexicon.insert(&phones, &name, seq)?;
        }
    }
    let keywords = KeywordSet::all(&lexicon)?;
    Ok((phones, lexicon, keywords))
}

struct Frames<'a> {
    units: usize,
    rows: Vec<f32>,
    rng: &'a mut ChaCha8Rng,
}

impl Frames<'_> {
    /// `mass` on `target` plus `1 - mass` spread by a flat Dirichlet draw.
    fn push(&mut self, target: UnitId, mass: f64) {
        let noise: Vec<f64> = (0..self.units)
            .map(|_| Exp1.sample(&mut *self.rng))
            .collect();
        let total: f64 = noise.iter().sum();
        for (u, n) in noise.iter().enumerate() {
            let mut p = (1.0 - mass) * n / total;
            if u == target as usize {
                p += mass;
            }
            self.rows.push(p as f32);
        }
    }

    fn set(&mut self, frame: usize, target: UnitId, mass: f64) {
        let at = self.rows.len();
        self.push(target, mass);
        let row: Vec<f32> = self.rows.drain(at..).collect();
        self.rows[frame * self.units..(frame + 1) * self.units].copy_from_slice(&row);
    }
}

/// Segment durations for a planted keyword, stretched so the delayed spikes
/// stay on distinct frames.
fn durations(spec: &SynthSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut d: Vec<usize> = (0..n)
        .map(|_| rng.random_range(spec.min_phone_frames..=spec.max_phone_frames))
        .collect();
    let mut i = 0;
    while d.iter().sum::<usize>() < spec.delay + n {
        d[i % n] += 1;
        i += 1;
    }
    d
}

/// Spike frames relative to the keyword start.
fn spike_offsets(delay: usize, len: usize, n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![delay];
    }
    let span = (len - 1 - delay) as f64;
    (0..n)
        .map(|j| delay + (j as f64 * span / (n - 1) as f64).round() as usize)
        .collect()
}

fn positive(
    spec: &SynthSpec,
    phones: &PhoneSet,
    sil: UnitId,
    keyword: &str,
    seq: &[UnitId],
    rng: &mut ChaCha8Rng,
) -> Result<(PosteriorStream, PosteriorStream, usize)> {
    let units = phones.len();
    let lead = rng.random_range(spec.min_margin_frames..=spec.max_margin_frames);
    let tail = rng.random_range(spec.min_margin_frames..=spec.max_margin_frames);
    let durs = durations(spec, seq.len(), rng);
    let len: usize = durs.iter().sum();
    let frames = lead + len + tail;

    let mut ali = Frames {
        units,
        rows: Vec::with_capacity(frames * units),
        rng,
    };
    for _ in 0..lead {
        ali.push(sil, 1.0 - spec.epsilon);
    }
    for (&u, &d) in seq.iter().zip(&durs) {
        for _ in 0..d {
            ali.push(u, spec.p_hit);
        }
    }
    for _ in 0..tail {
        ali.push(sil, 1.0 - spec.epsilon);
    }
    let ali_rows = std::mem::take(&mut ali.rows);
    let rng = ali.rng;

    let mut det = Frames {
        units,
        rows: Vec::with_capacity(frames * units),
        rng,
    };
    for _ in 0..frames {
        det.push(phones.blank(), 1.0 - spec.epsilon);
    }
    for (j, off) in spike_offsets(spec.delay, len, seq.len())
        .into_iter()
        .enumerate()
    {
        det.set(lead + off, seq[j], spec.p_hit);
    }
    let dur = spec.frame_duration;
    let mk = |rows| {
        PosteriorStream::new(units, rows, dur).map_err(|e| Error::Eval(format!("{keyword}: {e}")))
    };
    Ok((mk(det.rows)?, mk(ali_rows)?, lead))
}

fn negative(
    spec: &SynthSpec,
    phones: &PhoneSet,
    sil: UnitId,
    lexicon: &Lexicon,
    keywords: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<(PosteriorStream, PosteriorStream)> {
    let units = phones.len();
    let frames = (spec.negative_utterance_secs / spec.frame_duration as f64)
        .round()
        .max(1.0) as usize;
    let speech: Vec<UnitId> = (0..units as UnitId)
        .filter(|&u| u != phones.blank() && u != sil)
        .collect();

    let hours = spec.negative_utterance_secs / 3600.0;
    let decoys = if spec.decoys_per_hour > 0.0 && !keywords.is_empty() {
        Poisson::new(spec.decoys_per_hour * hours)
            .map_err(|e| Error::Config(format!("synth: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut decoy_starts: Vec<usize> = (0..decoys).map(|_| rng.random_range(0..frames)).collect();
    decoy_starts.sort_unstable();

    // (frame, unit, mass) spikes and the frame ranges owned by decoys
    let mut spikes: Vec<(usize, UnitId, f64)> = Vec::new();
    let mut owned: Vec<(usize, usize)> = Vec::new();
    let mut decoy_spikes: Vec<(usize, UnitId, f64)> = Vec::new();
    let mut ali = Frames {
        units,
        rows: Vec::with_capacity(frames * units),
        rng,
    };
    let mut t = 0;
    let mut next_decoy = 0;
    while t < frames {
        if next_decoy < decoy_starts.len() && decoy_starts[next_decoy] <= t {
            next_decoy += 1;
            let kw = &keywords[ali.rng.random_range(0..keywords.len())];
            let seq = lexicon.get(kw).expect("keywords come from the lexicon");
            let durs = durations(spec, seq.len(), ali.rng);
            let len: usize = durs.iter().sum();
            if t + len > frames {
                continue;
            }
            for (&u, &d) in seq.iter().zip(&durs) {
                let supported = ali.rng.random_bool(spec.decoy_support);
                let unit = if supported {
                    u
                } else {
                    *pick(&speech, u, ali.rng)
                };
                let mass = ali.rng.random_range(0.5..0.9);
                for _ in 0..d {
                    ali.push(unit, mass);
                }
            }
            for (j, off) in spike_offsets(spec.delay, len, seq.len())
                .into_iter()
                .enumerate()
            {
                decoy_spikes.push((t + off, seq[j], spec.p_hit));
            }
            owned.push((t, t + len));
            t += len;
            continue;
        }
        if ali.rng.random_bool(0.15) {
            let d = ali.rng.random_range(10..=30).min(frames - t);
            for _ in 0..d {
                ali.push(sil, 1.0 - spec.epsilon);
            }
            t += d;
        } else {
            let unit = speech[ali.rng.random_range(0..speech.len())];
            let mass = ali.rng.random_range(0.5..0.9);
            let d = ali.rng.random_range(3..=8).min(frames - t);
            for _ in 0..d {
                ali.push(unit, mass);
            }
            spikes.push((t + spec.delay, unit, mass));
            t += d;
        }
    }
    let ali_rows = std::mem::take(&mut ali.rows);
    let rng = ali.rng;

    let mut det = Frames {
        units,
        rows: Vec::with_capacity(frames * units),
        rng,
    };
    for _ in 0..frames {
        det.push(phones.blank(), 1.0 - spec.epsilon);
    }
    let in_decoy = |f: usize| owned.iter().any(|&(a, b)| (a..b).contains(&f));
    for (f, u, m) in spikes {
        if f < frames && !in_decoy(f) {
            det.set(f, u, m);
        }
    }
    for (f, u, m) in decoy_spikes {
        det.set(f, u, m);
    }
    let dur = spec.frame_duration;
    let mk = |rows| PosteriorStream::new(units, rows, dur).map_err(|e| Error::Eval(e.to_string()));
    Ok((mk(det.rows)?, mk(ali_rows)?))
}

fn pick<'a>(units: &'a [UnitId], avoid: UnitId, rng: &mut ChaCha8Rng) -> &'a UnitId {
    loop {
        let u = &units[rng.random_range(0..units.len())];
        if *u != avoid || units.len() == 1 {
            return u;
        }
    }
}

/// Builds a corpus over `inventory`, or over a generated one when `None`.
pub fn synth_corpus(
    spec: &SynthSpec,
    seed: u64,
    inventory: Option<(PhoneSet, Lexicon, KeywordSet)>,
) -> Result<SynthCorpus> {
    spec.validate()?;
    let (phones, lexicon, keywords) = match inventory {
        Some(inv) => inv,
        None => generate_inventory(spec, seed)?,
    };
    let sil = phones
        .garbage()
        .ok_or_else(|| Error::Config("synth: phone set needs a <sil> unit".into()))?;
    let planted: Vec<String> = if spec.keywords.is_empty() {
        keywords.names().to_vec()
    } else {
        for k in &spec.keywords {
            if keywords.position(k).is_none() {
                return Err(Error::Config(format!("synth: unknown keyword {k:?}")));
            }
        }
        spec.keywords.clone()
    };

    let mut utterances = Vec::new();
    for i in 0..spec.positives {
        let mut rng = rng_for(seed, i as u64);
        let kw = &planted[rng.random_range(0..planted.len())];
        let seq = lexicon.get(kw).expect("checked above");
        let (det, ali, start) = positive(spec, &phones, sil, kw, seq, &mut rng)?;
        utterances.push(LoadedUtterance {
            id: format!("pos_{i:05}"),
            det,
            ali,
            label: Some(kw.clone()),
            true_start: Some(start),
        });
    }
    let negatives = (spec.negative_hours * 3600.0 / spec.negative_utterance_secs).ceil() as usize;
    for i in 0..negatives {
        let mut rng = rng_for(seed, (1 << 32) + i as u64);
        let (det, ali) = negative(spec, &phones, sil, &lexicon, &planted, &mut rng)?;
        utterances.push(LoadedUtterance {
            id: format!("neg_{i:05}"),
            det,
            ali,
            label: None,
            true_start: None,
        });
    }
    Ok(SynthCorpus {
        phones,
        lexicon,
        keywords,
        utterances,
    })
}

impl SynthCorpus {
    /// Writes inventory files, a default config, one stream pair per
    /// utterance under `streams/`, and `manifest.tsv`.
    pub fn write(&self, dir: &Path) -> Result<Corpus> {
        let streams = dir.join("streams");
        std::fs::create_dir_all(&streams).map_err(|e| Error::io(&streams, e))?;
        let write = |name: &str, text: &str| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("phones.txt", &self.phones.serialize())?;
        write("lexicon.txt", &self.lexicon.serialize(&self.phones))?;
        write("keywords.txt", &self.keywords.serialize())?;
        write(
            "config.toml",
            "phones = \"phones.txt\"\nlexicon = \"lexicon.txt\"\nkeywords = \"keywords.txt\"\n",
        )?;
        let mut manifest = String::new();
        let mut utterances = Vec::new();
        for u in &self.utterances {
            let det = format!("streams/{}.det.kwsp", u.id);
            let ali = format!("streams/{}.ali.kwsp", u.id);
            for (rel, s) in [(&det, &u.det), (&ali, &u.ali)] {
                let p = dir.join(rel);
                s.save(&p).map_err(|e| Error::in_file(&p, e))?;
            }
            let _ = writeln!(
                manifest,
                "{det}\t{ali}\t{}\t{}",
                u.label.as_deref().unwrap_or("-"),
                u.true_start.map_or("-".to_string(), |s| s.to_string())
            );
            utterances.push(Utterance {
                id: det.clone(),
                det: dir.join(&det),
                ali: dir.join(&ali),
                label: u.label.clone(),
                true_start: u.true_start,
            });
        }
        write("manifest.tsv", &manifest)?;
        Ok(Corpus { utterances })
    }
}
