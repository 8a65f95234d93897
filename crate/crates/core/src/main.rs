use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use kws_core::aligner::AlignedLabel;
use kws_core::config::{load_inventory, CliConfig};
use kws_core::eval::roc::{roc_csv, roc_svg};
use kws_core::eval::{
    decode_corpus, evaluate, roc_sweep, synth_corpus, Corpus, SweepMode, SynthSpec,
};
use kws_core::fst::build_decoding_graph;
use kws_core::posterior::{PosteriorStream, SegmentRef};
use kws_core::{Engine, Error, Result};

/// Multi-stage keyword spotting over posterior streams.
#[derive(Parser)]
#[command(name = "kws", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for corpus decoding.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Seed for synthetic corpora.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile the keyword decoding graph and write it as AT&T text.
    CompileGraph {
        #[arg(long)]
        phones: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cascade over one stream pair and write detections as JSON lines.
    Run {
        #[arg(long)]
        det: PathBuf,
        #[arg(long)]
        ali: PathBuf,
        #[arg(long)]
        stages: Option<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Align one keyword candidate against the alignment stream.
    Align {
        #[arg(long)]
        ali: PathBuf,
        #[arg(long)]
        keyword: String,
        /// Sketchy start frame before pushback.
        #[arg(long)]
        t0: usize,
        #[arg(long)]
        t_end: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beam-search verification of one keyword over a frame span.
    Verify {
        #[arg(long)]
        ali: PathBuf,
        #[arg(long)]
        keyword: String,
        #[arg(long)]
        start: usize,
        #[arg(long)]
        end: usize,
        /// Segment name seen by scripted scorers.
        #[arg(long, default_value = "stream")]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a manifest and write the JSON report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stages: Option<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep a threshold over a manifest and write CSV points.
    Roc {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated ascending thresholds.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Mode::Tau)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Generate a synthetic corpus. Uses the inventory of --config when given.
    Synth {
        /// TOML generator parameters.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Tau,
    Upsilon,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn config(cli: &Cli) -> Result<CliConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    CliConfig::load(path)
}

fn engine(cli: &Cli, stages: Option<u8>) -> Result<Engine> {
    let mut c = config(cli)?;
    if let Some(s) = stages {
        c.stages = s;
    }
    c.engine()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io {
                path: "<stdout>".into(),
                source: e,
            }),
    }
}

fn load_stream(path: &Path) -> Result<PosteriorStream> {
    PosteriorStream::load(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(e.into()),
    })
}

fn json_line(value: &impl serde::Serialize) -> String {
    serde_json::to_string(value).expect("plain data serializes") + "\n"
}

fn json_pretty(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::CompileGraph {
            phones,
            lexicon,
            keywords,
            out,
        } => {
            let (_, l, k) = match (phones, lexicon) {
                (Some(p), Some(l)) => load_inventory(p, l, keywords.as_deref())?,
                (None, None) if keywords.is_none() => config(&cli)?.inventory()?,
                _ => {
                    return Err(Error::Config(
                        "give --phones and --lexicon together, or --config".into(),
                    ))
                }
            };
            let graph = build_decoding_graph(&l, &k)?;
            emit(out.as_deref(), &graph.fst.to_text())
        }
        Command::Run {
            det,
            ali,
            stages,
            out,
        } => {
            let engine = engine(&cli, *stages)?;
            let det_s = load_stream(det)?;
            let ali_s = load_stream(ali)?;
            let name = det.display().to_string();
            let dets = engine.run_named(&name, &det_s, &ali_s)?;
            let text: String = dets
                .iter()
                .map(|d| json_line(&d.record(det_s.frame_duration())))
                .collect();
            emit(out.as_deref(), &text)
        }
        Command::Align {
            ali,
            keyword,
            t0,
            t_end,
            out,
        } => {
            let engine = engine(&cli, None)?;
            let s = load_stream(ali)?;
            let (r, verdict) = engine.align(&s, keyword, *t0, *t_end)?;
            let labels: Vec<&str> = r
                .framewise
                .iter()
                .map(|l| match *l {
                    AlignedLabel::Garbage => "<g>",
                    AlignedLabel::Phone { unit, .. } => engine.phones.name(unit).unwrap_or("?"),
                })
                .collect();
            let doc = json!({
                "keyword": keyword,
                "span_start": r.span_start,
                "t_r": r.t_r,
                "t_end": r.t_end,
                "frames": r.frames,
                "s1": r.s1,
                "log_likelihood": r.log_likelihood,
                "verdict": verdict,
                "framewise": labels,
            });
            emit(out.as_deref(), &json_pretty(&doc))
        }
        Command::Verify {
            ali,
            keyword,
            start,
            end,
            name,
            out,
        } => {
            let engine = engine(&cli, None)?;
            let s = load_stream(ali)?;
            let segment = SegmentRef::new(name.clone(), *start, *end, s.num_frames())?;
            let (beam, v) = engine.verify(&s, keyword, &segment)?;
            let beam: Vec<_> = beam
                .iter()
                .map(|h| json!({"tokens": engine.phones.render(&h.tokens), "logp_sum": h.logp_sum}))
                .collect();
            let doc = json!({
                "keyword": keyword,
                "segment": segment.key(),
                "beam": beam,
                "matched": v.matched,
                "s2": v.s2,
                "verdict": v.decision,
            });
            emit(out.as_deref(), &json_pretty(&doc))
        }
        Command::Eval {
            manifest,
            stages,
            out,
        } => {
            let engine = engine(&cli, *stages)?;
            let corpus = Corpus::load(manifest)?;
            let decoded = decode_corpus(&engine, &corpus, cli.jobs)?;
            let report = evaluate(&decoded, engine.config.stages)?;
            emit(out.as_deref(), &json_pretty(&report))
        }
        Command::Roc {
            manifest,
            grid,
            mode,
            out,
            svg,
        } => {
            let engine = engine(&cli, None)?;
            let mode = match mode {
                Mode::Tau => SweepMode::Tau,
                Mode::Upsilon => SweepMode::Upsilon,
            };
            let corpus = Corpus::load(manifest)?;
            let points = roc_sweep(&engine, &corpus, grid, mode, cli.jobs)?;
            if let Some(path) = svg {
                emit(Some(path), &roc_svg(&points, mode))?;
            }
            emit(out.as_deref(), &roc_csv(&points, mode))
        }
        Command::Synth { spec, out_dir } => {
            let spec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    toml::from_str::<SynthSpec>(&text).map_err(|e| Error::File {
                        path: p.clone(),
                        source: Box::new(Error::Config(e.to_string())),
                    })?
                }
                None => SynthSpec::default(),
            };
            let inventory = match &cli.config {
                Some(_) => Some(config(&cli)?.inventory()?),
                None => None,
            };
            let corpus = synth_corpus(&spec, cli.seed, inventory)?;
            corpus.write(out_dir)?;
            Ok(())
        }
    }
}
