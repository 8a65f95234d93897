//! Unit symbol tables, keyword lexicon and active keyword sets.
//!
//! These three tables are the customization surface of the engine: adding a
//! keyword means adding a lexicon line and listing it in the keyword set, after
//! which the decoding graph is recompiled. Unit names are opaque strings, so the
//! same tables can hold phones or characters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

/// Dense unit index into a [`PhoneSet`].
pub type UnitId = u32;

/// Reserved name binding the transducer blank.
pub const BLANK_NAME: &str = "<blk>";
/// Reserved name binding the default garbage (silence) unit.
pub const GARBAGE_NAME: &str = "<sil>";

#[derive(Debug, Error, PartialEq)]
pub enum SymbolError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("blank symbol required (`{BLANK_NAME}` missing)")]
    MissingBlank,
    #[error("unit ids are not dense: id {0} missing")]
    NonDense(UnitId),
    #[error("symbol table is empty")]
    Empty,
    #[error("unknown keyword `{0}`")]
    UnknownKeyword(String),
    #[error("duplicate keyword `{0}`")]
    DuplicateKeyword(String),
    #[error("keyword set is empty")]
    EmptyKeywordSet,
    #[error("pronunciation of `{keyword}` contains invalid unit {unit}")]
    InvalidUnit { keyword: String, unit: UnitId },
}

fn line_err(line: usize, message: impl Into<String>) -> SymbolError {
    SymbolError::Line {
        line,
        message: message.into(),
    }
}

/// Unit inventory with the blank and optional garbage unit resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSet {
    names: Vec<String>,
    index: HashMap<String, UnitId>,
    blank: UnitId,
    garbage: Option<UnitId>,
}

impl PhoneSet {
    /// Builds a table from names listed in id order.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, SymbolError> {
        let mut text = String::new();
        for (id, name) in names.iter().enumerate() {
            let _ = writeln!(text, "{}\t{}", name.as_ref(), id);
        }
        Self::parse(&text)
    }

    /// Parses a `name<TAB>id` table. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, SymbolError> {
        let mut by_id: BTreeMap<UnitId, String> = BTreeMap::new();
        let mut index = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let (name, id) = raw
                .split_once('\t')
                .ok_or_else(|| line_err(line, "expected `name<TAB>id`"))?;
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(line_err(line, format!("invalid unit name `{name}`")));
            }
            let id: UnitId = id
                .trim()
                .parse()
                .map_err(|_| line_err(line, format!("invalid unit id `{}`", id.trim())))?;
            if by_id.contains_key(&id) {
                return Err(line_err(line, format!("duplicate id {id}")));
            }
            if index.insert(name.to_string(), id).is_some() {
                return Err(line_err(line, format!("duplicate name `{name}`")));
            }
            by_id.insert(id, name.to_string());
        }
        if by_id.is_empty() {
            return Err(SymbolError::Empty);
        }
        for (expected, id) in by_id.keys().enumerate() {
            if *id != expected as UnitId {
                return Err(SymbolError::NonDense(expected as UnitId));
            }
        }
        let blank = *index.get(BLANK_NAME).ok_or(SymbolError::MissingBlank)?;
        let garbage = index.get(GARBAGE_NAME).copied();
        Ok(Self {
            names: by_id.into_values().collect(),
            index,
            blank,
            garbage,
        })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (id, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, "{name}\t{id}");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn blank(&self) -> UnitId {
        self.blank
    }

    pub fn garbage(&self) -> Option<UnitId> {
        self.garbage
    }

    pub fn id(&self, name: &str) -> Option<UnitId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: UnitId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Resolves a space-separated list of unit names.
    pub fn resolve(&self, units: &str) -> Result<Vec<UnitId>, String> {
        units
            .split_whitespace()
            .map(|u| self.id(u).ok_or_else(|| format!("unknown unit `{u}`")))
            .collect()
    }

    pub fn render(&self, seq: &[UnitId]) -> String {
        seq.iter()
            .map(|&u| self.name(u).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Keyword name to unit-sequence mapping, one pronunciation per keyword.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<UnitId>>,
}

impl Lexicon {
    /// Parses `keyword<TAB>unit names` lines against `phones`.
    pub fn parse(text: &str, phones: &PhoneSet) -> Result<Self, SymbolError> {
        let mut lexicon = Lexicon::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() {
                continue;
            }
            let (name, units) = raw
                .split_once('\t')
                .ok_or_else(|| line_err(line, "expected `keyword<TAB>units`"))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(line_err(line, "empty keyword name"));
            }
            let seq = phones.resolve(units).map_err(|m| line_err(line, m))?;
            if seq.is_empty() {
                return Err(line_err(line, format!("empty pronunciation for `{name}`")));
            }
            if seq.contains(&phones.blank()) {
                return Err(line_err(line, "pronunciation contains the blank symbol"));
            }
            if lexicon.entries.contains_key(name) {
                return Err(line_err(line, format!("duplicate keyword `{name}`")));
            }
            lexicon.entries.insert(name.to_string(), seq);
        }
        Ok(lexicon)
    }

    /// Inserts an already-resolved entry, validating it against `phones`.
    pub fn insert(
        &mut self,
        phones: &PhoneSet,
        name: &str,
        seq: Vec<UnitId>,
    ) -> Result<(), SymbolError> {
        if self.entries.contains_key(name) {
            return Err(SymbolError::DuplicateKeyword(name.to_string()));
        }
        if seq.is_empty() {
            return Err(SymbolError::Line {
                line: 0,
                message: format!("empty pronunciation for `{name}`"),
            });
        }
        if let Some(&bad) = seq
            .iter()
            .find(|&&u| u as usize >= phones.len() || u == phones.blank())
        {
            return Err(SymbolError::InvalidUnit {
                keyword: name.to_string(),
                unit: bad,
            });
        }
        self.entries.insert(name.to_string(), seq);
        Ok(())
    }

    pub fn serialize(&self, phones: &PhoneSet) -> String {
        let mut out = String::new();
        for (name, seq) in &self.entries {
            let _ = writeln!(out, "{name}\t{}", phones.render(seq));
        }
        out
    }

    pub fn get(&self, keyword: &str) -> Option<&[UnitId]> {
        self.entries.get(keyword).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[UnitId])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// The active command set. Order is significant: a keyword's position is its
/// output symbol in the decoding graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordSet {
    active: Vec<String>,
}

impl KeywordSet {
    pub fn new<S: Into<String>>(
        names: impl IntoIterator<Item = S>,
        lexicon: &Lexicon,
    ) -> Result<Self, SymbolError> {
        let mut seen = HashSet::new();
        let mut active = Vec::new();
        for name in names {
            let name = name.into();
            if lexicon.get(&name).is_none() {
                return Err(SymbolError::UnknownKeyword(name));
            }
            if !seen.insert(name.clone()) {
                return Err(SymbolError::DuplicateKeyword(name));
            }
            active.push(name);
        }
        if active.is_empty() {
            return Err(SymbolError::EmptyKeywordSet);
        }
        Ok(Self { active })
    }

    /// Parses one keyword name per line.
    pub fn parse(text: &str, lexicon: &Lexicon) -> Result<Self, SymbolError> {
        Self::new(
            text.lines().map(str::trim).filter(|l| !l.is_empty()),
            lexicon,
        )
    }

    /// Every lexicon entry, in lexicon order.
    pub fn all(lexicon: &Lexicon) -> Result<Self, SymbolError> {
        Self::new(lexicon.iter().map(|(k, _)| k.to_string()), lexicon)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for name in &self.active {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn names(&self) -> &[String] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.active.iter().position(|n| n == name)
    }
}
