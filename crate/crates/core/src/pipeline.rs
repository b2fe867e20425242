//! End-to-end orchestration with every intermediate written to disk.
//!
//! Each stage reads its inputs from the output directory and writes its
//! artifacts there, so a run can restart from any stage after an
//! intermediate file has been edited by hand.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{self, AudioBuffer, WavEncoding};
use crate::beats::{detect_onsets, OnsetParams};
use crate::chords::{ChordSequence, KeyLabel, Mode, PitchClass};
use crate::conditioning::{self, beat_downbeat_events, build_condition_bundle, ConditionBundle, SectionKey};
use crate::harmonizer::{self, HarmonizerWeights};
use crate::lyrics::LyricsSheet;
use crate::metrics::{self, audio_chromagram, ChromaParams, MatchReport, RHYTHM_TOLERANCE};
use crate::planner::{self, GenerationWindow, PlanOptions, TrainingSlice};
use crate::prep::{self, PenaltyBreakdown, SingerProfile};
use crate::render::{self, StubGenerator, PEAK_THRESHOLD};
use crate::score::{SectionLabel, VocalScore};
use crate::score_io::{read_score, write_score, ScoreFileFormat};

pub mod artifact {
    pub const INPUT_SCORE: &str = "input.score.json";
    pub const LYRICS: &str = "lyrics.json";
    pub const REFERENCE: &str = "reference.json";
    pub const REGISTER: &str = "register.json";
    pub const REGISTERED_SCORE: &str = "registered.score.json";
    pub const ARRANGED_SCORE: &str = "arranged.score.json";
    pub const CHORDS: &str = "chords.txt";
    pub const CONDITIONS: &str = "conditions.json";
    pub const KEYS: &str = "keys.txt";
    pub const PLAN: &str = "plan.json";
    pub const TRAINING_SLICES: &str = "training_slices.json";
    pub const ACCOMPANIMENT: &str = "accompaniment.wav";
    pub const EVENTS: &str = "events.txt";
    pub const VOCAL: &str = "vocal.wav";
    pub const MIX: &str = "mix.wav";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Load,
    Register,
    Harmonize,
    Condition,
    Plan,
    Render,
    Mix,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Load,
        Stage::Register,
        Stage::Harmonize,
        Stage::Condition,
        Stage::Plan,
        Stage::Render,
        Stage::Mix,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Register => "register",
            Stage::Harmonize => "harmonize",
            Stage::Condition => "condition",
            Stage::Plan => "plan",
            Stage::Render => "render",
            Stage::Mix => "mix",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

fn at<E: Into<BoxError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: e.into() }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_frame_rate() -> f64 {
    conditioning::DEFAULT_FRAME_RATE
}
fn default_sigma() -> f64 {
    conditioning::DEFAULT_SIGMA
}
fn default_max_window() -> f64 {
    planner::MAX_WINDOW_SECONDS
}
fn default_p_backward() -> f64 {
    planner::DEFAULT_P_BACKWARD
}
fn default_sample_rate() -> u32 {
    render::DEFAULT_RENDER_RATE
}
fn default_intro_bars() -> u32 {
    4
}

/// Run configuration, read from TOML. Relative paths are resolved against
/// the directory holding the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub score: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyrics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_bank: Option<PathBuf>,
    #[serde(default)]
    pub reject_fewer_lines: bool,
    /// A user chord progression, used instead of the harmonizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chords: Option<PathBuf>,
    /// Sung vocal audio; a sine guide melody is synthesized when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocal: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_max_window")]
    pub max_window: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_seconds: Option<f64>,
    #[serde(default = "default_p_backward")]
    pub p_backward: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default = "default_intro_bars")]
    pub intro_bars: u32,
    #[serde(default = "SingerProfile::defaults", rename = "singer")]
    pub singers: Vec<SingerProfile>,
    #[serde(default)]
    pub harmonizer: HarmonizerWeights,
    /// Global style prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Per-section prompts keyed by section label; a prompt stored on the
    /// score section itself takes precedence.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub section_prompts: BTreeMap<String, String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// Defaults for everything but the score.
    pub fn new(score: impl Into<PathBuf>) -> Self {
        let mut c: PipelineConfig = toml::from_str("score = \"\"").expect("defaults parse");
        c.score = score.into();
        c
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut c: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        if !(self.max_window.is_finite() && self.max_window > 0.0) {
            return bad("max_window must be positive");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_backward) {
            return bad("p_backward must lie in [0, 1]");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.singers.is_empty() {
            return bad("at least one singer profile is required");
        }
        if !self.harmonizer.is_valid() {
            return bad("harmonizer weights must be finite with a positive emission weight");
        }
        for label in self.section_prompts.keys() {
            if label.parse::<SectionLabel>().is_err() {
                return Err(PipelineError::Config(format!("unknown section label {label:?} in section_prompts")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceChoice {
    pub index: usize,
    pub file: String,
    pub penalty: PenaltyBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedWindow {
    #[serde(flatten)]
    pub window: GenerationWindow,
    pub label: SectionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub max_window: f64,
    pub windows: Vec<PlannedWindow>,
}

impl PlanDocument {
    pub fn windows(&self) -> Vec<GenerationWindow> {
        self.windows.iter().map(|w| w.window.clone()).collect()
    }

    /// Fixed-width table in generation order.
    pub fn to_table(&self) -> String {
        let mut out = String::from("order  start_s    end_s  section    reference\n");
        for w in &self.windows {
            let reference = match w.window.reference {
                planner::WindowReference::None => "none".to_string(),
                planner::WindowReference::PreviousWindow => "previous".to_string(),
                planner::WindowReference::BackwardFrom(s) => format!("backward from {s}"),
            };
            out += &format!(
                "{:>5} {:>8.3} {:>8.3}  {:<9}  {}\n",
                w.window.order, w.window.start, w.window.end, w.label, reference
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionKeyCheck {
    pub section: usize,
    pub expected: KeyLabel,
    pub estimated: Option<KeyLabel>,
}

/// Scores of the rendered accompaniment against its own conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfReport {
    /// Event-log beats against the score's beat grid.
    pub rhythm_events: MatchReport,
    /// Onsets detected in the audio against the score's beat grid.
    pub rhythm_audio: MatchReport,
    pub chord_f1: f64,
    pub key_accuracy: f64,
    pub keys: Vec<SectionKeyCheck>,
}

impl SelfReport {
    pub fn to_table(&self) -> String {
        format!(
            "metric               value\n\
             rhythm_f1 (events)   {:.4}\n\
             rhythm_f1 (audio)    {:.4}\n\
             chord_f1             {:.4}\n\
             key_accuracy         {:.4}\n",
            self.rhythm_events.f1, self.rhythm_audio.f1, self.chord_f1, self.key_accuracy
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: PipelineConfig,
    pub artifacts: Vec<ArtifactRecord>,
    pub metrics: SelfReport,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Keys per section estimated from the chord chroma of that section. A
/// section without chords falls back to its melody, then to C major.
pub fn section_keys(bundle: &ConditionBundle, score: &VocalScore) -> Vec<SectionKey> {
    let spans = score.section_spans_seconds();
    spans
        .iter()
        .enumerate()
        .map(|(i, &(start, end))| {
            let rows = metrics::binary_to_real(&bundle.chroma[bundle.frame_range(start, end)]);
            let key = metrics::estimate_key(&rows).ok().or_else(|| {
                let section = &score.sections[i];
                let mut hist = [0.0; 12];
                for n in score.notes.iter().filter(|n| {
                    n.onset_tick >= section.start_tick && n.onset_tick < section.end_tick
                }) {
                    hist[PitchClass::of_midi(n.pitch).value() as usize] += n.duration_ticks as f64;
                }
                metrics::estimate_key(&[hist]).ok()
            });
            SectionKey { section: i, key: key.unwrap_or(KeyLabel::new(0, Mode::Major)) }
        })
        .collect()
}

/// Condition bundle for a score and progression, with keys derived from
/// the progression.
pub fn condition(
    score: &VocalScore,
    chords: &ChordSequence,
    frame_rate: f64,
    sigma: f64,
) -> Result<ConditionBundle, conditioning::ConditionError> {
    let placeholder: Vec<SectionKey> =
        (0..score.sections.len()).map(|i| SectionKey { section: i, key: KeyLabel::new(0, Mode::Major) }).collect();
    let mut bundle = build_condition_bundle(score, chords, &placeholder, frame_rate, sigma)?;
    bundle.key_per_section = section_keys(&bundle, score);
    Ok(bundle)
}

pub fn keys_to_text(bundle: &ConditionBundle) -> String {
    bundle
        .key_per_section
        .iter()
        .map(|k| format!("{}\t{}\t{}\n", k.section, bundle.sections[k.section].label, k.key))
        .collect()
}

/// Downbeat times recovered from the bundle's downbeat activation.
pub fn bundle_downbeats(bundle: &ConditionBundle) -> Vec<f64> {
    let col: Vec<f64> = bundle.rhythm.iter().map(|r| r[1]).collect();
    render::activation_peaks(&col, bundle.frame_rate, PEAK_THRESHOLD)
}

pub fn plan_document(
    bundle: &ConditionBundle,
    score: &VocalScore,
    options: PlanOptions,
    global_prompt: Option<&str>,
    section_prompts: &BTreeMap<String, String>,
) -> Result<PlanDocument, planner::PlanError> {
    let windows = planner::plan_inference(&bundle.sections, &bundle_downbeats(bundle), options)?;
    let windows = windows
        .into_iter()
        .map(|w| {
            let label = bundle.sections[w.anchor_section].label;
            let prompt = score
                .sections
                .get(w.anchor_section)
                .and_then(|s| s.prompt.clone())
                .or_else(|| section_prompts.get(label.as_str()).cloned())
                .or_else(|| global_prompt.map(str::to_string));
            PlannedWindow { window: w, label, prompt }
        })
        .collect();
    Ok(PlanDocument { max_window: options.max_window, windows })
}

/// Rendered accompaniment scored against the conditions it was made from.
pub fn self_report(
    score: &VocalScore,
    bundle: &ConditionBundle,
    accompaniment: &AudioBuffer,
    event_beats: &[f64],
) -> Result<SelfReport, BoxError> {
    let (beats, _) = beat_downbeat_events(score)?;
    let rhythm_events = metrics::rhythm_f1(&beats, event_beats, RHYTHM_TOLERANCE);
    let onsets = detect_onsets(accompaniment, OnsetParams::default());
    let rhythm_audio = metrics::rhythm_f1(&beats, &onsets, RHYTHM_TOLERANCE);
    let chroma = audio_chromagram(accompaniment, bundle.frame_rate, bundle.frames(), ChromaParams::default());
    let chord_f1 = metrics::chord_f1(&bundle.chroma, &chroma)?;
    let keys: Vec<SectionKeyCheck> = bundle
        .key_per_section
        .iter()
        .map(|k| {
            let s = &bundle.sections[k.section];
            let rows = metrics::binary_to_real(&chroma[bundle.frame_range(s.start, s.end)]);
            SectionKeyCheck { section: k.section, expected: k.key, estimated: metrics::estimate_key(&rows).ok() }
        })
        .collect();
    let hits = keys.iter().filter(|k| k.estimated == Some(k.expected)).count();
    let key_accuracy = if keys.is_empty() { 1.0 } else { hits as f64 / keys.len() as f64 };
    Ok(SelfReport { rhythm_events, rhythm_audio, chord_f1, key_accuracy, keys })
}

struct Run<'a> {
    config: &'a PipelineConfig,
    out: PathBuf,
    written: Vec<String>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&mut self, stage: Stage, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        std::fs::write(self.path(name), bytes).map_err(at(stage))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn read(&self, stage: Stage, name: &str) -> Result<Vec<u8>, PipelineError> {
        let p = self.path(name);
        std::fs::read(&p).map_err(|e| PipelineError::Stage { stage, source: format!("{}: {e}", p.display()).into() })
    }

    fn read_text(&self, stage: Stage, name: &str) -> Result<String, PipelineError> {
        String::from_utf8(self.read(stage, name)?).map_err(at(stage))
    }

    fn read_score(&self, stage: Stage, name: &str) -> Result<VocalScore, PipelineError> {
        read_score(&self.read(stage, name)?, ScoreFileFormat::CanonicalText).map_err(at(stage))
    }

    fn write_score(&mut self, stage: Stage, name: &str, score: &VocalScore) -> Result<(), PipelineError> {
        let bytes = write_score(score, ScoreFileFormat::CanonicalText).map_err(at(stage))?;
        self.write(stage, name, &bytes)
    }

    fn write_json<T: Serialize>(&mut self, stage: Stage, name: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(at(stage))?;
        bytes.push(b'\n');
        self.write(stage, name, &bytes)
    }

    fn read_external(&self, stage: Stage, path: &Path) -> Result<Vec<u8>, PipelineError> {
        let p = self.config.resolve(path);
        std::fs::read(&p).map_err(|e| PipelineError::Stage { stage, source: format!("{}: {e}", p.display()).into() })
    }

    fn load(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::Load;
        let bytes = self.read_external(stage, &self.config.score)?;
        let score =
            read_score(&bytes, ScoreFileFormat::from_path(&self.config.score)).map_err(at(stage))?;
        self.write_score(stage, artifact::INPUT_SCORE, &score)?;

        let lyrics = match &self.config.lyrics {
            Some(p) => {
                let text = String::from_utf8(self.read_external(stage, p)?).map_err(at(stage))?;
                let sheet = LyricsSheet::parse(&text).map_err(at(stage))?;
                self.write(stage, artifact::LYRICS, (sheet.to_json() + "\n").as_bytes())?;
                Some(sheet)
            }
            None => None,
        };
        if let Some(bank_dir) = &self.config.reference_bank {
            let target = lyrics.ok_or_else(|| at(stage)("a reference bank needs a lyrics file"))?;
            let bank = prep::load_bank(&self.config.resolve(bank_dir)).map_err(at(stage))?;
            let sheets: Vec<LyricsSheet> = bank.iter().map(|(_, s)| s.clone()).collect();
            let (index, penalty) =
                prep::select_reference(&target, &sheets, self.config.reject_fewer_lines).map_err(at(stage))?;
            let file = bank[index].0.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            self.write_json(stage, artifact::REFERENCE, &ReferenceChoice { index, file, penalty })?;
        }
        Ok(())
    }

    fn register(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::Register;
        let score = self.read_score(stage, artifact::INPUT_SCORE)?;
        let decision = prep::register_match(&score, &self.config.singers).map_err(at(stage))?;
        let shifted = prep::apply_transpose(&score, decision.delta).map_err(at(stage))?;
        self.write_json(stage, artifact::REGISTER, &decision)?;
        self.write_score(stage, artifact::REGISTERED_SCORE, &shifted)
    }

    fn harmonize(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::Harmonize;
        let score = self.read_score(stage, artifact::REGISTERED_SCORE)?;
        let chords = match &self.config.chords {
            Some(p) => {
                let text = String::from_utf8(self.read_external(stage, p)?).map_err(at(stage))?;
                ChordSequence::from_text(&text).map_err(at(stage))?
            }
            None => harmonizer::harmonize(&score, &self.config.harmonizer).map_err(at(stage))?,
        };
        let (arranged, chords) = add_intro(&score, chords, self.config.intro_bars).map_err(at(stage))?;
        self.write_score(stage, artifact::ARRANGED_SCORE, &arranged)?;
        self.write(stage, artifact::CHORDS, chords.to_text().as_bytes())
    }

    fn condition(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::Condition;
        let score = self.read_score(stage, artifact::ARRANGED_SCORE)?;
        let chords = ChordSequence::from_text(&self.read_text(stage, artifact::CHORDS)?).map_err(at(stage))?;
        let bundle = condition(&score, &chords, self.config.frame_rate, self.config.sigma).map_err(at(stage))?;
        self.write(stage, artifact::CONDITIONS, bundle.to_json().as_bytes())?;
        self.write(stage, artifact::KEYS, keys_to_text(&bundle).as_bytes())
    }

    fn read_bundle(&self, stage: Stage) -> Result<ConditionBundle, PipelineError> {
        ConditionBundle::from_json(&self.read_text(stage, artifact::CONDITIONS)?).map_err(at(stage))
    }

    fn plan(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::Plan;
        let bundle = self.read_bundle(stage)?;
        let score = self.read_score(stage, artifact::ARRANGED_SCORE)?;
        let options = PlanOptions { max_window: self.config.max_window, context: self.config.context_seconds };
        let doc = plan_document(
            &bundle,
            &score,
            options,
            self.config.prompt.as_deref(),
            &self.config.section_prompts,
        )
        .map_err(at(stage))?;
        let slices: Vec<TrainingSlice> =
            planner::plan_training_slices(&bundle.sections, self.config.p_backward, self.config.seed, self.config.max_window)
                .map_err(at(stage))?;
        self.write_json(stage, artifact::PLAN, &doc)?;
        self.write_json(stage, artifact::TRAINING_SLICES, &slices)
    }

    fn render(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::Render;
        let bundle = self.read_bundle(stage)?;
        let doc: PlanDocument = serde_json::from_slice(&self.read(stage, artifact::PLAN)?).map_err(at(stage))?;
        let sr = self.config.sample_rate;
        let generator = StubGenerator { sample_rate: sr };
        let (audio, events) = render::render_song(&generator, &bundle, &doc.windows(), sr).map_err(at(stage))?;
        let wav = audio::write_wav(&audio, WavEncoding::Float32).map_err(at(stage))?;
        self.write(stage, artifact::ACCOMPANIMENT, &wav)?;
        self.write(stage, artifact::EVENTS, render::events_to_text(&events, sr).as_bytes())
    }

    fn mix(&mut self) -> Result<(), PipelineError> {
        let stage = Stage::Mix;
        let acc = audio::read_wav(&self.read(stage, artifact::ACCOMPANIMENT)?).map_err(at(stage))?;
        let vocal = match &self.config.vocal {
            Some(p) => audio::read_wav(&self.read_external(stage, p)?).map_err(at(stage))?,
            None => {
                let score = self.read_score(stage, artifact::ARRANGED_SCORE)?;
                let guide = render::render_guide_vocal(&score, self.config.sample_rate);
                let wav = audio::write_wav(&guide, WavEncoding::Float32).map_err(at(stage))?;
                self.write(stage, artifact::VOCAL, &wav)?;
                guide
            }
        };
        let mixed = audio::mix(&vocal, &acc).map_err(at(stage))?;
        let wav = audio::write_wav(&mixed, WavEncoding::Pcm16).map_err(at(stage))?;
        self.write(stage, artifact::MIX, &wav)
    }

    fn eval(&mut self) -> Result<SelfReport, PipelineError> {
        let stage = Stage::Eval;
        let score = self.read_score(stage, artifact::ARRANGED_SCORE)?;
        let bundle = self.read_bundle(stage)?;
        let acc = audio::read_wav(&self.read(stage, artifact::ACCOMPANIMENT)?).map_err(at(stage))?;
        let beats = render::beat_times_from_text(&self.read_text(stage, artifact::EVENTS)?);
        let report = self_report(&score, &bundle, &acc, &beats).map_err(|source| PipelineError::Stage { stage, source })?;
        self.write_json(stage, artifact::REPORT_JSON, &report)?;
        self.write(stage, artifact::REPORT_TEXT, report.to_table().as_bytes())?;
        Ok(report)
    }
}

/// Prepends the intro (empty bars in the score, repeated opening chords in
/// the progression) unless the song already opens with an intro.
pub fn add_intro(
    score: &VocalScore,
    chords: ChordSequence,
    bars: u32,
) -> Result<(VocalScore, ChordSequence), harmonizer::HarmonizeError> {
    let opens_with_intro = score.sections.first().is_some_and(|s| s.label == SectionLabel::Intro);
    if bars == 0 || opens_with_intro {
        return Ok((score.clone(), chords));
    }
    let arranged = score.with_intro_bars(bars);
    let bar_duration = arranged.tick_to_seconds(bars as u64 * score.ticks_per_bar() as u64) / bars as f64;
    let chords = harmonizer::prepend_intro_chords(&chords, bar_duration, bars)?;
    Ok((arranged, chords))
}

/// Every artifact a full run can produce, in stage order.
const ALL_ARTIFACTS: [&str; 17] = [
    artifact::INPUT_SCORE,
    artifact::LYRICS,
    artifact::REFERENCE,
    artifact::REGISTER,
    artifact::REGISTERED_SCORE,
    artifact::ARRANGED_SCORE,
    artifact::CHORDS,
    artifact::CONDITIONS,
    artifact::KEYS,
    artifact::PLAN,
    artifact::TRAINING_SLICES,
    artifact::ACCOMPANIMENT,
    artifact::EVENTS,
    artifact::VOCAL,
    artifact::MIX,
    artifact::REPORT_JSON,
    artifact::REPORT_TEXT,
];

/// Runs the stages from `from` onwards and writes `manifest.json`. Earlier
/// stages' artifacts must already exist in the output directory.
pub fn run_pipeline(config: &PipelineConfig, from: Stage) -> Result<Manifest, PipelineError> {
    config.check()?;
    let out = config.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| PipelineError::Config(format!("{}: {e}", out.display())))?;
    let mut run = Run { config, out, written: Vec::new() };
    let mut report = None;
    for stage in Stage::ALL.into_iter().filter(|s| *s >= from) {
        match stage {
            Stage::Load => run.load()?,
            Stage::Register => run.register()?,
            Stage::Harmonize => run.harmonize()?,
            Stage::Condition => run.condition()?,
            Stage::Plan => run.plan()?,
            Stage::Render => run.render()?,
            Stage::Mix => run.mix()?,
            Stage::Eval => report = Some(run.eval()?),
        }
    }
    let report = report.expect("eval always runs");

    let mut artifacts = Vec::new();
    for name in ALL_ARTIFACTS {
        let p = run.path(name);
        if p.is_file() {
            let bytes = std::fs::read(&p).map_err(at(Stage::Eval))?;
            artifacts.push(ArtifactRecord { path: name.to_string(), sha256: sha256_hex(&bytes) });
        }
    }
    let manifest = Manifest { seed: config.seed, config: config.clone(), artifacts, metrics: report };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(at(Stage::Eval))?;
    bytes.push(b'\n');
    std::fs::write(run.path(artifact::MANIFEST), bytes).map_err(at(Stage::Eval))?;
    Ok(manifest)
}
