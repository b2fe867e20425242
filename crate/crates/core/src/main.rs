use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use songsmith::audio::{self, WavEncoding};
use songsmith::beats::{self, BeatGrid, VoicedSegment};
use songsmith::chords::{ChordSequence, KeyLabel};
use songsmith::conditioning::{self, ConditionBundle};
use songsmith::harmonizer::{self, HarmonizerWeights};
use songsmith::lyrics::LyricsSheet;
use songsmith::metrics;
use songsmith::pipeline::{self, PipelineConfig, PlanDocument, Stage};
use songsmith::planner::{self, PlanOptions};
use songsmith::prep::{self, SingerProfile};
use songsmith::render::{self, StubGenerator};
use songsmith::score::VocalScore;
use songsmith::score_io::{read_score, write_score, ScoreFileFormat};

#[derive(Parser)]
#[command(name = "songsmith", version, about = "Symbolic song pipeline: score to conditioned accompaniment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a score against the model invariants.
    Validate { score: PathBuf },
    /// Chord progression for a score, one chord per bar.
    Harmonize {
        score: PathBuf,
        /// Bars of repeated opening chords to put in front (0 disables).
        #[arg(long, default_value_t = 4)]
        intro_bars: u32,
        /// Where to write the chords (stdout otherwise).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Where to write the score with the intro bars added.
        #[arg(long)]
        score_out: Option<PathBuf>,
    },
    /// Choose a singer profile and octave shift.
    Register {
        score: PathBuf,
        /// Profile as name:low:high (MIDI, inclusive); repeatable.
        #[arg(long = "profile", value_parser = parse_profile)]
        profiles: Vec<SingerProfile>,
        /// Where to write the shifted score.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Pick the closest lyric sheet from a reference bank.
    Select {
        lyrics: PathBuf,
        bank: PathBuf,
        #[arg(long)]
        reject_fewer_lines: bool,
    },
    /// Build the conditioning bundle from a score and a chord file.
    Condition {
        score: PathBuf,
        chords: PathBuf,
        #[arg(long, default_value_t = conditioning::DEFAULT_FRAME_RATE)]
        frame_rate: f64,
        #[arg(long, default_value_t = conditioning::DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Plan generation windows and print them in generation order.
    Plan {
        conditions: PathBuf,
        /// Score used for section prompts.
        #[arg(long)]
        score: Option<PathBuf>,
        #[arg(long, default_value_t = planner::MAX_WINDOW_SECONDS)]
        max_window: f64,
        #[arg(long)]
        context: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render the stub accompaniment for a plan.
    Render {
        conditions: PathBuf,
        plan: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = render::DEFAULT_RENDER_RATE)]
        sample_rate: u32,
    },
    /// Sum vocal and accompaniment and peak-normalize.
    Mix {
        vocal: PathBuf,
        accompaniment: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Song-wide beat grid from beats detected inside voiced regions.
    Beats {
        audio: PathBuf,
        /// Detected beat times, one per line.
        detected: PathBuf,
        #[arg(long, default_value_t = 0.02)]
        window: f64,
        #[arg(long, default_value_t = -30.0, allow_hyphen_values = true)]
        threshold_db: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score predictions against annotations.
    Eval(EvalArgs),
    /// Run the whole pipeline from a configuration file.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Restart from this stage, reusing earlier artifacts.
        #[arg(long, default_value = "load")]
        from: Stage,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Beat files: time in the first column.
    #[arg(long, requires = "est_beats")]
    ref_beats: Option<PathBuf>,
    #[arg(long)]
    est_beats: Option<PathBuf>,
    #[arg(long, default_value_t = metrics::RHYTHM_TOLERANCE)]
    tolerance: f64,
    /// Key files: one key such as C:maj per line (extra columns allowed
    /// before it).
    #[arg(long, requires = "est_keys")]
    ref_keys: Option<PathBuf>,
    #[arg(long)]
    est_keys: Option<PathBuf>,
    /// Chord files compared as chromagrams.
    #[arg(long, requires = "est_chords")]
    ref_chords: Option<PathBuf>,
    #[arg(long)]
    est_chords: Option<PathBuf>,
    #[arg(long, default_value_t = conditioning::DEFAULT_FRAME_RATE)]
    frame_rate: f64,
    /// Phoneme files: one lyric line per line, phonemes separated by spaces.
    #[arg(long, requires = "est_phonemes")]
    ref_phonemes: Option<PathBuf>,
    #[arg(long)]
    est_phonemes: Option<PathBuf>,
    /// Collapse consecutive repeated lines before scoring PER.
    #[arg(long)]
    dedup: bool,
    /// Also write the report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_profile(s: &str) -> Result<SingerProfile, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, low, high] = parts[..] else {
        return Err("expected name:low:high".into());
    };
    let low: u8 = low.parse().map_err(|_| format!("bad low pitch {low:?}"))?;
    let high: u8 = high.parse().map_err(|_| format!("bad high pitch {high:?}"))?;
    Ok(SingerProfile::new(name, low, high))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_score(path: &Path) -> Result<VocalScore> {
    read_score(&read(path)?, ScoreFileFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

fn save_score(path: &Path, score: &VocalScore) -> Result<()> {
    write(path, &write_score(score, ScoreFileFormat::from_path(path))?)
}

fn load_bundle(path: &Path) -> Result<ConditionBundle> {
    ConditionBundle::from_json(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn times(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let first = line.split_whitespace().next().unwrap_or_default();
        out.push(first.parse().with_context(|| format!("bad time {first:?}"))?);
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

fn keys(text: &str) -> Result<Vec<KeyLabel>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let last = l.split_whitespace().last().unwrap_or_default();
            last.parse::<KeyLabel>().map_err(|e| anyhow::anyhow!("bad key {last:?}: {e}"))
        })
        .collect()
}

fn chroma_of(path: &Path, frame_rate: f64, duration: f64) -> Result<Vec<[u8; 12]>> {
    let seq = ChordSequence::from_text(&read_text(path)?)?;
    Ok(conditioning::chord_chromagram(&seq, duration, frame_rate)?)
}

fn eval(args: &EvalArgs) -> Result<()> {
    let mut report = BTreeMap::new();
    let mut table = String::from("metric          value\n");
    if let (Some(r), Some(e)) = (&args.ref_beats, &args.est_beats) {
        let m = metrics::rhythm_f1(&times(&read_text(r)?)?, &times(&read_text(e)?)?, args.tolerance);
        table += &format!("rhythm_f1       {:.4}  (P {:.4}, R {:.4})\n", m.f1, m.precision, m.recall);
        report.insert("rhythm", serde_json::to_value(m)?);
    }
    if let (Some(r), Some(e)) = (&args.ref_keys, &args.est_keys) {
        let acc = metrics::key_accuracy(&keys(&read_text(r)?)?, &keys(&read_text(e)?)?)?;
        table += &format!("key_accuracy    {acc:.4}\n");
        report.insert("key_accuracy", acc.into());
    }
    if let (Some(r), Some(e)) = (&args.ref_chords, &args.est_chords) {
        let end = |p: &Path| -> Result<f64> { Ok(ChordSequence::from_text(&read_text(p)?)?.end()) };
        let duration = end(r)?.max(end(e)?);
        let f1 = metrics::chord_f1(&chroma_of(r, args.frame_rate, duration)?, &chroma_of(e, args.frame_rate, duration)?)?;
        table += &format!("chord_f1        {f1:.4}\n");
        report.insert("chord_f1", f1.into());
    }
    if let (Some(r), Some(e)) = (&args.ref_phonemes, &args.est_phonemes) {
        let lines = |p: &Path| -> Result<Vec<String>> {
            Ok(read_text(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
        };
        let (mut rl, mut el) = (lines(r)?, lines(e)?);
        if args.dedup {
            rl = metrics::dedup_lines(&rl);
            el = metrics::dedup_lines(&el);
        }
        let flat = |ls: &[String]| -> Vec<String> { ls.iter().flat_map(|l| l.split_whitespace().map(str::to_string)).collect() };
        let per = metrics::per(&flat(&rl), &flat(&el))?;
        table += &format!("per             {per:.4}\n");
        report.insert("per", per.into());
    }
    if report.is_empty() {
        bail!("nothing to evaluate: give at least one --ref-*/--est-* pair");
    }
    print!("{table}");
    if let Some(p) = &args.json {
        write(p, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { score } => {
            let bytes = read(&score)?;
            match read_score(&bytes, ScoreFileFormat::from_path(&score)) {
                Ok(s) => println!(
                    "ok: {} notes, {} sections, {:.3} s",
                    s.notes.len(),
                    s.sections.len(),
                    s.duration_seconds()
                ),
                Err(e) => bail!("{}: {e}", score.display()),
            }
        }
        Command::Harmonize { score, intro_bars, output, score_out } => {
            let s = load_score(&score)?;
            let chords = harmonizer::harmonize(&s, &HarmonizerWeights::default())?;
            let (arranged, chords) = pipeline::add_intro(&s, chords, intro_bars)?;
            match output {
                Some(p) => write(&p, chords.to_text().as_bytes())?,
                None => print!("{}", chords.to_text()),
            }
            if let Some(p) = score_out {
                save_score(&p, &arranged)?;
            }
        }
        Command::Register { score, profiles, output } => {
            let s = load_score(&score)?;
            let profiles = if profiles.is_empty() { SingerProfile::defaults() } else { profiles };
            let decision = prep::register_match(&s, &profiles)?;
            println!("{}", serde_json::to_string_pretty(&decision)?);
            if let Some(p) = output {
                save_score(&p, &prep::apply_transpose(&s, decision.delta)?)?;
            }
        }
        Command::Select { lyrics, bank, reject_fewer_lines } => {
            let target = LyricsSheet::parse(&read_text(&lyrics)?)?;
            let bank = prep::load_bank(&bank)?;
            let sheets: Vec<LyricsSheet> = bank.iter().map(|(_, s)| s.clone()).collect();
            let (i, p) = prep::select_reference(&target, &sheets, reject_fewer_lines)?;
            println!(
                "{}\ttotal {:.6}\tsent {:.6}\tprof {:.6}\tstruct {:.6}",
                bank[i].0.display(),
                p.total,
                p.p_sent,
                p.p_prof,
                p.p_struct
            );
        }
        Command::Condition { score, chords, frame_rate, sigma, output } => {
            let s = load_score(&score)?;
            let seq = ChordSequence::from_text(&read_text(&chords)?)?;
            let bundle = pipeline::condition(&s, &seq, frame_rate, sigma)?;
            write(&output, bundle.to_json().as_bytes())?;
            print!("{}", pipeline::keys_to_text(&bundle));
        }
        Command::Plan { conditions, score, max_window, context, output } => {
            let bundle = load_bundle(&conditions)?;
            let s = match score {
                Some(p) => load_score(&p)?,
                None => VocalScore::new(""),
            };
            let doc = pipeline::plan_document(&bundle, &s, PlanOptions { max_window, context }, None, &BTreeMap::new())?;
            print!("{}", doc.to_table());
            if let Some(p) = output {
                write(&p, (serde_json::to_string_pretty(&doc)? + "\n").as_bytes())?;
            }
        }
        Command::Render { conditions, plan, output, events, sample_rate } => {
            let bundle = load_bundle(&conditions)?;
            let doc: PlanDocument = serde_json::from_str(&read_text(&plan)?)?;
            let generator = StubGenerator { sample_rate };
            let (audio_out, ev) = render::render_song(&generator, &bundle, &doc.windows(), sample_rate)?;
            write(&output, &audio::write_wav(&audio_out, WavEncoding::Float32)?)?;
            if let Some(p) = events {
                write(&p, render::events_to_text(&ev, sample_rate).as_bytes())?;
            }
        }
        Command::Mix { vocal, accompaniment, output } => {
            let v = audio::read_wav(&read(&vocal)?)?;
            let a = audio::read_wav(&read(&accompaniment)?)?;
            write(&output, &audio::write_wav(&audio::mix(&v, &a)?, WavEncoding::Pcm16)?)?;
        }
        Command::Beats { audio: audio_path, detected, window, threshold_db, output } => {
            let a = audio::read_wav(&read(&audio_path)?)?;
            let segments = beats::detect_voiced_segments(&a, window, threshold_db)?;
            let detected = times(&read_text(&detected)?)?;
            let per_segment: Vec<Vec<f64>> = segments
                .iter()
                .map(|s: &VoicedSegment| detected.iter().copied().filter(|&t| t >= s.start && t <= s.end).collect())
                .collect();
            let grid: BeatGrid = beats::interpolate_beats(&per_segment, &segments, a.duration_seconds())?;
            match output {
                Some(p) => write(&p, grid.to_text().as_bytes())?,
                None => print!("{}", grid.to_text()),
            }
        }
        Command::Eval(args) => eval(&args)?,
        Command::Run { config, from, out, seed } => {
            let mut c = PipelineConfig::load(&config)?;
            if let Some(o) = out {
                c.output_dir = std::path::absolute(o)?;
            }
            if let Some(s) = seed {
                c.seed = s;
            }
            let manifest = pipeline::run_pipeline(&c, from)?;
            print!("{}", manifest.metrics.to_table());
            println!("manifest: {}", c.out_dir().join(pipeline::artifact::MANIFEST).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
