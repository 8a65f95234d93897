//! Threshold sweeps. The corpus is decoded once with the swept threshold
//! disabled; each grid point then filters the recorded scores.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{count_false_alarms, decode_corpus, Corpus, DecodedUtterance};
use crate::error::{Error, Result};
use crate::pipeline::{Detection, Engine, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Vary the alignment threshold with the verifier threshold fixed.
    #[default]
    Tau,
    /// Vary the verifier threshold with the alignment threshold fixed.
    Upsilon,
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Tau => "tau",
            SweepMode::Upsilon => "upsilon",
        }
    }

    /// `config` with the swept threshold opened to infinity.
    pub fn open_config(self, config: &PipelineConfig) -> Result<PipelineConfig> {
        let mut c = config.clone();
        match self {
            SweepMode::Tau if c.stages < 2 => {
                return Err(Error::Eval("a tau sweep needs stages >= 2".into()))
            }
            SweepMode::Upsilon if c.stages < 3 => {
                return Err(Error::Eval("an upsilon sweep needs stages = 3".into()))
            }
            SweepMode::Tau => c.aligner.tau = f64::INFINITY,
            SweepMode::Upsilon => c.verifier.upsilon = f64::INFINITY,
        }
        Ok(c)
    }

    /// Whether a detection decoded under [`open_config`](Self::open_config)
    /// is accepted at `threshold`.
    pub fn accepts(self, d: &Detection, threshold: f64) -> bool {
        let score = match self {
            SweepMode::Tau => d.s1,
            SweepMode::Upsilon => d.s2,
        };
        d.accepted && score.is_some_and(|s| s <= threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub frr: f64,
    pub fa_per_hour: f64,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Eval("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| t.is_nan()) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Eval("threshold grid must be ascending".into()));
    }
    Ok(())
}

/// Points for `grid` from utterances decoded with the swept threshold open.
pub fn roc_from_decoded(
    decoded: &[DecodedUtterance],
    grid: &[f64],
    mode: SweepMode,
) -> Result<Vec<RocPoint>> {
    check_grid(grid)?;
    let positives: Vec<&DecodedUtterance> = decoded.iter().filter(|u| u.label.is_some()).collect();
    let negatives: Vec<&DecodedUtterance> = decoded.iter().filter(|u| u.label.is_none()).collect();
    if positives.is_empty() {
        return Err(Error::Eval("a sweep needs labeled utterances".into()));
    }
    grid.iter()
        .map(|&threshold| {
            let correct = positives
                .iter()
                .filter(|u| {
                    let label = u.label.as_deref();
                    u.detections
                        .iter()
                        .any(|d| Some(d.keyword.as_str()) == label && mode.accepts(d, threshold))
                })
                .count();
            let fa = count_false_alarms(&negatives, |d| mode.accepts(d, threshold))?;
            Ok(RocPoint {
                threshold,
                frr: (positives.len() - correct) as f64 / positives.len() as f64,
                fa_per_hour: fa.fa_per_hour,
            })
        })
        .collect()
}

pub fn roc_sweep(
    engine: &Engine,
    corpus: &Corpus,
    grid: &[f64],
    mode: SweepMode,
    jobs: usize,
) -> Result<Vec<RocPoint>> {
    check_grid(grid)?;
    let open = engine.with_config(mode.open_config(&engine.config)?)?;
    let decoded = decode_corpus(&open, corpus, jobs)?;
    roc_from_decoded(&decoded, grid, mode)
}

pub fn roc_csv(points: &[RocPoint], mode: SweepMode) -> String {
    let mut out = format!("{},frr,fa_per_hour\n", mode.name());
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.frr, p.fa_per_hour);
    }
    out
}

/// FRR against FA/h as a standalone SVG line plot.
pub fn roc_svg(points: &[RocPoint], mode: SweepMode) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 48.0;
    let max_fa = points
        .iter()
        .map(|p| p.fa_per_hour)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let max_frr = points
        .iter()
        .map(|p| p.frr)
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let x = |fa: f64| M + fa / max_fa * (W - 2.0 * M);
    let y = |frr: f64| H - M - frr / max_frr * (H - 2.0 * M);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{M} {M} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    let _ = writeln!(
        svg,
        r#"<text x="{cx}" y="{ty}" text-anchor="middle" font-size="12">false alarms per hour (max {max_fa:.3})</text>"#,
        cx = W / 2.0,
        ty = H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{cy}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {cy})">false reject rate (max {max_frr:.3})</text>"#,
        cy = H / 2.0
    );
    let coords: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.fa_per_hour), y(p.frr)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        coords.join(" ")
    );
    for (p, c) in points.iter().zip(&coords) {
        let (cx, cy) = c.split_once(',').expect("formatted as x,y");
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx}" cy="{cy}" r="3" fill="steelblue"><title>{}={} frr={} fa/h={}</title></circle>"#,
            mode.name(),
            p.threshold,
            p.frr,
            p.fa_per_hour
        );
    }
    svg.push_str("</svg>\n");
    svg
}
