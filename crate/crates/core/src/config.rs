//! TOML run configuration: inventory file paths plus cascade settings.
//!
//! ```toml
//! phones = "phones.txt"
//! lexicon = "lexicon.txt"
//! keywords = "keywords.txt"   # optional; every lexicon entry when absent
//! stages = 3
//!
//! [aligner]
//! t_d = 15
//! tau = 1.5
//! garbage_mode = "designated-unit"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aligner::AlignerConfig;
use crate::detector::DetectorConfig;
use crate::error::{read_text, Error, Result};
use crate::pipeline::{Engine, PipelineConfig};
use crate::symbols::{KeywordSet, Lexicon, PhoneSet};
use crate::verifier::{ScorerKind, VerifierConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub phones: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub keywords: Option<PathBuf>,
    #[serde(default = "default_stages")]
    pub stages: u8,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub aligner: AlignerConfig,
    #[serde(default)]
    pub verifier: VerifierConfig,
}

fn default_stages() -> u8 {
    3
}

impl CliConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.phones = base.join(&c.phones);
        c.lexicon = base.join(&c.lexicon);
        c.keywords = c.keywords.map(|k| base.join(k));
        if let ScorerKind::Table(p) = ScorerKind::parse(&c.verifier.scorer)? {
            c.verifier.scorer = format!("table:{}", base.join(p).display());
        }
        c.pipeline().validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| Error::in_file(path, e))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            detector: self.detector.clone(),
            aligner: self.aligner.clone(),
            verifier: self.verifier.clone(),
            stages: self.stages,
        }
    }

    pub fn inventory(&self) -> Result<(PhoneSet, Lexicon, KeywordSet)> {
        load_inventory(&self.phones, &self.lexicon, self.keywords.as_deref())
    }

    pub fn engine(&self) -> Result<Engine> {
        let (phones, lexicon, keywords) = self.inventory()?;
        Engine::new(phones, lexicon, keywords, self.pipeline())
    }
}

pub fn load_inventory(
    phones: &Path,
    lexicon: &Path,
    keywords: Option<&Path>,
) -> Result<(PhoneSet, Lexicon, KeywordSet)> {
    let p = PhoneSet::parse(&read_text(phones)?).map_err(|e| Error::in_file(phones, e))?;
    let l = Lexicon::parse(&read_text(lexicon)?, &p).map_err(|e| Error::in_file(lexicon, e))?;
    let k = match keywords {
        Some(path) => {
            KeywordSet::parse(&read_text(path)?, &l).map_err(|e| Error::in_file(path, e))?
        }
        None => KeywordSet::all(&l)?,
    };
    Ok((p, l, k))
}
