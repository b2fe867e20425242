//! Pitch classes, triads, keys and time-stamped chord progressions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const SHARP_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PitchClass(u8);

impl PitchClass {
    /// Reduces any integer modulo 12.
    pub fn new(value: i32) -> Self {
        PitchClass(value.rem_euclid(12) as u8)
    }

    pub fn of_midi(pitch: u8) -> Self {
        PitchClass(pitch % 12)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn transpose(self, semitones: i32) -> Self {
        PitchClass::new(self.0 as i32 + semitones)
    }

    pub fn name(self) -> &'static str {
        SHARP_NAMES[self.0 as usize]
    }
}

impl fmt::Display for PitchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("unknown pitch name {0:?}")]
    PitchName(String),
    #[error("unknown chord quality {0:?}")]
    Quality(String),
    #[error("malformed chord symbol {0:?}")]
    Symbol(String),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

impl FromStr for PitchClass {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        let base = match chars.next().map(|c| c.to_ascii_uppercase()) {
            Some('C') => 0,
            Some('D') => 2,
            Some('E') => 4,
            Some('F') => 5,
            Some('G') => 7,
            Some('A') => 9,
            Some('B') => 11,
            _ => return Err(ParseError::PitchName(s.to_string())),
        };
        let mut offset = 0;
        for c in chars {
            match c {
                '#' | '♯' => offset += 1,
                'b' | '♭' => offset -= 1,
                _ => return Err(ParseError::PitchName(s.to_string())),
            }
        }
        Ok(PitchClass::new(base + offset))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Maj,
    Min,
}

impl Quality {
    pub fn as_str(self) -> &'static str {
        match self {
            Quality::Maj => "maj",
            Quality::Min => "min",
        }
    }
}

impl FromStr for Quality {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "maj" | "major" | "M" => Ok(Quality::Maj),
            "min" | "minor" | "m" => Ok(Quality::Min),
            other => Err(ParseError::Quality(other.to_string())),
        }
    }
}

/// A major or minor triad.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Chord {
    pub root: PitchClass,
    pub quality: Quality,
}

impl Chord {
    pub fn new(root: i32, quality: Quality) -> Self {
        Chord { root: PitchClass::new(root), quality }
    }

    /// All 24 triads in vocabulary order: roots C..B, major before minor.
    pub fn vocabulary() -> [Chord; 24] {
        std::array::from_fn(Chord::from_index)
    }

    pub fn from_index(index: usize) -> Chord {
        let quality = if index.is_multiple_of(2) { Quality::Maj } else { Quality::Min };
        Chord::new((index / 2) as i32 % 12, quality)
    }

    pub fn index(self) -> usize {
        self.root.value() as usize * 2 + (self.quality == Quality::Min) as usize
    }

    pub fn pitch_classes(self) -> [PitchClass; 3] {
        let third = match self.quality {
            Quality::Maj => 4,
            Quality::Min => 3,
        };
        [self.root, self.root.transpose(third), self.root.transpose(7)]
    }

    pub fn contains(self, pc: PitchClass) -> bool {
        self.pitch_classes().contains(&pc)
    }

    /// 12-bin membership mask.
    pub fn chroma(self) -> [u8; 12] {
        let mut out = [0u8; 12];
        for pc in self.pitch_classes() {
            out[pc.value() as usize] = 1;
        }
        out
    }

    /// Recognises a 12-bin mask that is exactly one triad.
    pub fn from_chroma(bins: &[u8; 12]) -> Option<Chord> {
        Chord::vocabulary().into_iter().find(|c| &c.chroma() == bins)
    }

    pub fn common_tones(self, other: Chord) -> usize {
        self.pitch_classes().iter().filter(|pc| other.contains(**pc)).count()
    }

    pub fn transpose(self, semitones: i32) -> Chord {
        Chord { root: self.root.transpose(semitones), quality: self.quality }
    }
}

impl fmt::Display for Chord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.root, self.quality.as_str())
    }
}

impl FromStr for Chord {
    type Err = ParseError;

    /// `ROOT:quality`, e.g. `C:maj`, `F#:min`, `Bb:maj`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (root, quality) = s.split_once(':').ok_or_else(|| ParseError::Symbol(s.to_string()))?;
        Ok(Chord { root: root.parse()?, quality: quality.parse()? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyLabel {
    pub tonic: PitchClass,
    pub mode: Mode,
}

impl KeyLabel {
    pub fn new(tonic: i32, mode: Mode) -> Self {
        KeyLabel { tonic: PitchClass::new(tonic), mode }
    }

    /// Ordering used for tie-breaking: tonic first, major before minor.
    pub fn index(self) -> usize {
        self.tonic.value() as usize * 2 + (self.mode == Mode::Minor) as usize
    }

    pub fn from_index(index: usize) -> KeyLabel {
        let mode = if index.is_multiple_of(2) { Mode::Major } else { Mode::Minor };
        KeyLabel::new((index / 2) as i32 % 12, mode)
    }
}

impl fmt::Display for KeyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Major => "maj",
            Mode::Minor => "min",
        };
        write!(f, "{}:{}", self.tonic, mode)
    }
}

impl FromStr for KeyLabel {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chord: Chord = s.parse()?;
        let mode = match chord.quality {
            Quality::Maj => Mode::Major,
            Quality::Min => Mode::Minor,
        };
        Ok(KeyLabel { tonic: chord.root, mode })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordSpan {
    pub start: f64,
    pub end: f64,
    pub chord: Chord,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChordSequence {
    pub entries: Vec<ChordSpan>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ChordSequenceError {
    #[error("chord {0}: start must be before end")]
    EmptySpan(usize),
    #[error("chord {0}: starts before the previous chord ends")]
    Overlap(usize),
    #[error("chord {0}: negative or non-finite time")]
    BadTime(usize),
}

impl ChordSequence {
    pub fn new(entries: Vec<ChordSpan>) -> Self {
        ChordSequence { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn end(&self) -> f64 {
        self.entries.last().map(|e| e.end).unwrap_or(0.0)
    }

    pub fn check(&self) -> Result<(), ChordSequenceError> {
        for (i, e) in self.entries.iter().enumerate() {
            if !e.start.is_finite() || !e.end.is_finite() || e.start < 0.0 {
                return Err(ChordSequenceError::BadTime(i));
            }
            if e.start >= e.end {
                return Err(ChordSequenceError::EmptySpan(i));
            }
            if i > 0 && e.start < self.entries[i - 1].end {
                return Err(ChordSequenceError::Overlap(i));
            }
        }
        Ok(())
    }

    /// Chord sounding at `t`, if any.
    pub fn chord_at(&self, t: f64) -> Option<Chord> {
        self.entries.iter().find(|e| e.start <= t && t < e.end).map(|e| e.chord)
    }

    /// One `start end ROOT:quality` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{:?} {:?} {}\n", e.start, e.end, e.chord));
        }
        out
    }

    /// Parses the line format; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, ParseError> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ParseError::Line { line: n + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            }
            let start: f64 = fields[0].parse().map_err(|_| err(format!("bad start time {:?}", fields[0])))?;
            let end: f64 = fields[1].parse().map_err(|_| err(format!("bad end time {:?}", fields[1])))?;
            let chord: Chord = fields[2].parse().map_err(|e: ParseError| err(e.to_string()))?;
            entries.push(ChordSpan { start, end, chord });
        }
        Ok(ChordSequence { entries })
    }
}
