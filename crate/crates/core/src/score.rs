//! Symbolic vocal score: notes, tempo map, meter and song sections.
//!
//! A [`VocalScore`] is a plain value. Construction never checks invariants;
//! [`VocalScore::validate`] returns every violation as data so callers can
//! report all problems at once instead of failing on the first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const DEFAULT_TICKS_PER_QUARTER: u16 = 480;
/// SMF default tempo (120 BPM).
pub const DEFAULT_MICROS_PER_QUARTER: u32 = 500_000;

/// Closed set of structural labels, in their fixed integer order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionLabel {
    Intro,
    Verse,
    Chorus,
    Bridge,
    Solo,
    Break,
    Inst,
    Outro,
}

impl SectionLabel {
    pub const ALL: [SectionLabel; 8] = [
        SectionLabel::Intro,
        SectionLabel::Verse,
        SectionLabel::Chorus,
        SectionLabel::Bridge,
        SectionLabel::Solo,
        SectionLabel::Break,
        SectionLabel::Inst,
        SectionLabel::Outro,
    ];

    /// Integer code: intro=0 … outro=7.
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(index as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SectionLabel::Intro => "intro",
            SectionLabel::Verse => "verse",
            SectionLabel::Chorus => "chorus",
            SectionLabel::Bridge => "bridge",
            SectionLabel::Solo => "solo",
            SectionLabel::Break => "break",
            SectionLabel::Inst => "inst",
            SectionLabel::Outro => "outro",
        }
    }
}

impl fmt::Display for SectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unknown section label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for SectionLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        SectionLabel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == lower)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub onset_tick: u32,
    pub duration_ticks: u32,
    pub pitch: u8,
    /// Absent on melisma continuation notes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syllable: Option<String>,
}

impl Note {
    pub fn new(onset_tick: u32, duration_ticks: u32, pitch: u8) -> Self {
        Note { onset_tick, duration_ticks, pitch, syllable: None }
    }

    pub fn with_syllable(mut self, syllable: impl Into<String>) -> Self {
        self.syllable = Some(syllable.into());
        self
    }

    pub fn end_tick(&self) -> u64 {
        self.onset_tick as u64 + self.duration_ticks as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempoChange {
    pub tick: u32,
    pub micros_per_quarter: u32,
}

impl TempoChange {
    pub fn bpm(&self) -> f64 {
        60_000_000.0 / self.micros_per_quarter as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSignature {
    pub numerator: u8,
    pub denominator: u8,
}

impl TimeSignature {
    pub const COMMON: TimeSignature = TimeSignature { numerator: 4, denominator: 4 };
}

impl Default for TimeSignature {
    fn default() -> Self {
        Self::COMMON
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: SectionLabel,
    pub start_tick: u32,
    pub end_tick: u32,
    /// Free-form style description for this section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl Section {
    pub fn new(label: SectionLabel, start_tick: u32, end_tick: u32) -> Self {
        Section { label, start_tick, end_tick, prompt: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocalScore {
    #[serde(default)]
    pub title: String,
    pub ticks_per_quarter: u16,
    #[serde(default)]
    pub time_signature: TimeSignature,
    pub tempo_map: Vec<TempoChange>,
    pub sections: Vec<Section>,
    pub notes: Vec<Note>,
}

/// One broken invariant, located by note / section / tempo index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    PitchOutOfRange { note: usize, pitch: u8 },
    ZeroDuration { note: usize },
    NotesUnsorted { note: usize },
    MonophonyViolated { note: usize },
    TicksPerQuarterZero,
    NonCommonMeter { numerator: u8, denominator: u8 },
    TempoMapEmpty,
    TempoNotAtZero,
    TempoUnsorted { index: usize },
    TempoZero { index: usize },
    NoSections,
    SectionsNotAtZero,
    SectionEmpty { section: usize },
    SectionsNotContiguous { section: usize },
    NotesPastLastSection { note: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PitchOutOfRange { note, pitch } => {
                write!(f, "note {note}: pitch {pitch} outside [0, 127]")
            }
            Violation::ZeroDuration { note } => write!(f, "note {note}: duration must be > 0 ticks"),
            Violation::NotesUnsorted { note } => write!(f, "note {note}: notes not sorted by onset"),
            Violation::MonophonyViolated { note } => {
                write!(f, "note {note}: monophony violated (overlaps previous note)")
            }
            Violation::TicksPerQuarterZero => write!(f, "ticks_per_quarter must be > 0"),
            Violation::NonCommonMeter { numerator, denominator } => {
                write!(f, "time signature {numerator}/{denominator} is not 4/4")
            }
            Violation::TempoMapEmpty => write!(f, "tempo map is empty"),
            Violation::TempoNotAtZero => write!(f, "first tempo entry is not at tick 0"),
            Violation::TempoUnsorted { index } => write!(f, "tempo entry {index}: not strictly after previous"),
            Violation::TempoZero { index } => write!(f, "tempo entry {index}: zero microseconds per quarter"),
            Violation::NoSections => write!(f, "score has notes but no sections"),
            Violation::SectionsNotAtZero => write!(f, "first section does not start at tick 0"),
            Violation::SectionEmpty { section } => write!(f, "section {section}: start must be < end"),
            Violation::SectionsNotContiguous { section } => {
                write!(f, "section {section}: sections not contiguous")
            }
            Violation::NotesPastLastSection { note } => {
                write!(f, "note {note}: extends past the last section")
            }
        }
    }
}

impl VocalScore {
    /// Empty 4/4 score at 120 BPM with the default resolution.
    pub fn new(title: impl Into<String>) -> Self {
        VocalScore {
            title: title.into(),
            ticks_per_quarter: DEFAULT_TICKS_PER_QUARTER,
            time_signature: TimeSignature::COMMON,
            tempo_map: vec![TempoChange { tick: 0, micros_per_quarter: DEFAULT_MICROS_PER_QUARTER }],
            sections: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn ticks_per_bar(&self) -> u32 {
        self.ticks_per_quarter as u32 * 4
    }

    /// Last tick of the score: the end of the last section, or of the last
    /// note when that reaches further.
    pub fn end_tick(&self) -> u64 {
        let section_end = self.sections.last().map(|s| s.end_tick as u64).unwrap_or(0);
        let note_end = self.notes.iter().map(Note::end_tick).max().unwrap_or(0);
        section_end.max(note_end)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.tick_to_seconds(self.end_tick())
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Piecewise-linear tick → seconds conversion through the tempo map.
    pub fn tick_to_seconds(&self, tick: u64) -> f64 {
        let tpq = self.ticks_per_quarter.max(1) as f64;
        let mut seconds = 0.0;
        let mut prev_tick = 0u64;
        let mut micros = DEFAULT_MICROS_PER_QUARTER as f64;
        for change in &self.tempo_map {
            let change_tick = change.tick as u64;
            if change_tick >= tick {
                break;
            }
            if change_tick > prev_tick {
                seconds += (change_tick - prev_tick) as f64 / tpq * micros / 1e6;
                prev_tick = change_tick;
            }
            micros = change.micros_per_quarter as f64;
        }
        seconds + (tick - prev_tick.min(tick)) as f64 / tpq * micros / 1e6
    }

    /// Section spans in seconds, in score order.
    pub fn section_spans_seconds(&self) -> Vec<(f64, f64)> {
        self.sections
            .iter()
            .map(|s| (self.tick_to_seconds(s.start_tick as u64), self.tick_to_seconds(s.end_tick as u64)))
            .collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        if self.ticks_per_quarter == 0 {
            out.push(Violation::TicksPerQuarterZero);
        }
        if self.time_signature != TimeSignature::COMMON {
            out.push(Violation::NonCommonMeter {
                numerator: self.time_signature.numerator,
                denominator: self.time_signature.denominator,
            });
        }

        match self.tempo_map.first() {
            None => out.push(Violation::TempoMapEmpty),
            Some(first) if first.tick != 0 => out.push(Violation::TempoNotAtZero),
            Some(_) => {}
        }
        for (i, change) in self.tempo_map.iter().enumerate() {
            if change.micros_per_quarter == 0 {
                out.push(Violation::TempoZero { index: i });
            }
            if i > 0 && change.tick <= self.tempo_map[i - 1].tick {
                out.push(Violation::TempoUnsorted { index: i });
            }
        }

        for (i, note) in self.notes.iter().enumerate() {
            if note.pitch > 127 {
                out.push(Violation::PitchOutOfRange { note: i, pitch: note.pitch });
            }
            if note.duration_ticks == 0 {
                out.push(Violation::ZeroDuration { note: i });
            }
            if i > 0 {
                let prev = &self.notes[i - 1];
                if note.onset_tick < prev.onset_tick {
                    out.push(Violation::NotesUnsorted { note: i });
                } else if (note.onset_tick as u64) < prev.end_tick() {
                    out.push(Violation::MonophonyViolated { note: i });
                }
            }
        }

        if self.sections.is_empty() {
            if !self.notes.is_empty() {
                out.push(Violation::NoSections);
            }
        } else {
            if self.sections[0].start_tick != 0 {
                out.push(Violation::SectionsNotAtZero);
            }
            for (i, section) in self.sections.iter().enumerate() {
                if section.start_tick >= section.end_tick {
                    out.push(Violation::SectionEmpty { section: i });
                }
                if i > 0 && section.start_tick != self.sections[i - 1].end_tick {
                    out.push(Violation::SectionsNotContiguous { section: i });
                }
            }
            let last_end = self.sections.last().map(|s| s.end_tick as u64).unwrap_or(0);
            for (i, note) in self.notes.iter().enumerate() {
                if note.end_tick() > last_end {
                    out.push(Violation::NotesPastLastSection { note: i });
                }
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Index of the section containing `tick`, if any.
    pub fn section_at_tick(&self, tick: u64) -> Option<usize> {
        self.sections
            .iter()
            .position(|s| (s.start_tick as u64) <= tick && tick < s.end_tick as u64)
    }

    /// Prepends `bars` empty bars labelled `intro` at the initial tempo,
    /// shifting every later event. Returns the score unchanged for `bars == 0`.
    pub fn with_intro_bars(&self, bars: u32) -> VocalScore {
        if bars == 0 {
            return self.clone();
        }
        let shift = bars * self.ticks_per_bar();
        let mut out = self.clone();
        for note in &mut out.notes {
            note.onset_tick += shift;
        }
        for change in out.tempo_map.iter_mut().skip(1) {
            change.tick += shift;
        }
        for section in &mut out.sections {
            section.start_tick += shift;
            section.end_tick += shift;
        }
        out.sections.insert(0, Section::new(SectionLabel::Intro, 0, shift));
        out
    }
}
