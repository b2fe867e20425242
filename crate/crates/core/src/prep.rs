//! Symbolic decisions taken before synthesis: choosing a reference lyric
//! sheet from a bank by structural penalty, and octave-shifting the melody
//! into a singer's comfortable range.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::lyrics::{LyricsError, LyricsSheet};
use crate::score::VocalScore;

pub const SENTENCE_WEIGHT: f64 = 0.4;
pub const PROFILE_WEIGHT: f64 = 0.4;
pub const STRUCTURE_WEIGHT: f64 = 0.2;

/// Octave shifts considered by [`register_match`].
pub const OCTAVE_SHIFTS: [i32; 3] = [-12, 0, 12];

#[derive(Debug, thiserror::Error)]
pub enum PrepError {
    #[error("{0} lyric sheet is empty")]
    EmptySheet(&'static str),
    #[error("reference bank is empty")]
    EmptyBank,
    #[error("every bank candidate was rejected")]
    AllRejected,
    #[error("score has no notes")]
    EmptyScore,
    #[error("no singer profiles given")]
    NoProfiles,
    #[error("singer profile {name:?} has low {low} ≥ high {high}")]
    BadProfile { name: String, low: u8, high: u8 },
    #[error("pitch {pitch} shifted by {delta} leaves the MIDI range")]
    PitchOutOfRange { pitch: u8, delta: i32 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Lyrics { path: PathBuf, source: LyricsError },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub p_sent: f64,
    pub p_prof: f64,
    pub p_struct: f64,
    /// Weighted sum, or +∞ for a rejected candidate.
    pub total: f64,
}

impl PenaltyBreakdown {
    pub fn from_components(p_sent: f64, p_prof: f64, p_struct: f64) -> Self {
        let total = SENTENCE_WEIGHT * p_sent + PROFILE_WEIGHT * p_prof + STRUCTURE_WEIGHT * p_struct;
        PenaltyBreakdown { p_sent, p_prof, p_struct, total }
    }

    pub fn is_rejected(&self) -> bool {
        self.total == f64::INFINITY
    }
}

fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Mean absolute difference of per-line token counts after padding the
/// shorter sequence with its own median, scaled by the largest count.
pub fn profile_penalty(target: &[usize], candidate: &[usize]) -> f64 {
    let max = target.iter().chain(candidate).copied().max().unwrap_or(0);
    if max == 0 {
        return 0.0;
    }
    let n = target.len().max(candidate.len());
    let padded = |v: &[usize]| -> Vec<f64> {
        let fill = median(v);
        v.iter().map(|&x| x as f64).chain(std::iter::repeat(fill)).take(n).collect()
    };
    let (a, b) = (padded(target), padded(candidate));
    let mean = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    mean / max as f64
}

/// Position-wise tag mismatches plus one per extra position, over the
/// longer length.
pub fn structure_penalty<T: PartialEq>(target: &[T], candidate: &[T]) -> f64 {
    let longer = target.len().max(candidate.len());
    if longer == 0 {
        return 0.0;
    }
    let mismatches = target.iter().zip(candidate).filter(|(a, b)| a != b).count();
    let extra = target.len().abs_diff(candidate.len());
    (mismatches + extra) as f64 / longer as f64
}

pub fn penalty_score(
    target: &LyricsSheet,
    candidate: &LyricsSheet,
    reject_fewer_lines: bool,
) -> Result<PenaltyBreakdown, PrepError> {
    if target.is_empty() {
        return Err(PrepError::EmptySheet("target"));
    }
    if candidate.is_empty() {
        return Err(PrepError::EmptySheet("candidate"));
    }
    let (nt, nc) = (target.lines.len(), candidate.lines.len());
    let p_sent = nt.abs_diff(nc) as f64 / nt.max(nc) as f64;
    let p_prof = profile_penalty(&target.token_counts(), &candidate.token_counts());
    let p_struct = structure_penalty(&target.tags(), &candidate.tags());
    let mut out = PenaltyBreakdown::from_components(p_sent, p_prof, p_struct);
    if reject_fewer_lines && nc < nt {
        out.total = f64::INFINITY;
    }
    Ok(out)
}

/// Index of the lowest-penalty candidate; ties go to the lower index.
pub fn select_reference(
    target: &LyricsSheet,
    bank: &[LyricsSheet],
    reject_fewer_lines: bool,
) -> Result<(usize, PenaltyBreakdown), PrepError> {
    if bank.is_empty() {
        return Err(PrepError::EmptyBank);
    }
    let mut best: Option<(usize, PenaltyBreakdown)> = None;
    for (i, candidate) in bank.iter().enumerate() {
        let p = penalty_score(target, candidate, reject_fewer_lines)?;
        if p.is_rejected() {
            continue;
        }
        if best.is_none_or(|(_, b)| p.total < b.total) {
            best = Some((i, p));
        }
    }
    best.ok_or(PrepError::AllRejected)
}

/// Lyric sheets from every `.json` or `.txt` file in `dir`, sorted by file
/// name so bank indices are stable.
pub fn load_bank(dir: &Path) -> Result<Vec<(PathBuf, LyricsSheet)>, PrepError> {
    let io = |source| PrepError::Io { path: dir.to_path_buf(), source };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "txt")));
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text =
                std::fs::read_to_string(&path).map_err(|source| PrepError::Io { path: path.clone(), source })?;
            let sheet = LyricsSheet::parse(&text).map_err(|source| PrepError::Lyrics { path: path.clone(), source })?;
            Ok((path, sheet))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingerProfile {
    pub name: String,
    /// Inclusive MIDI bounds of the comfortable range.
    pub low: u8,
    pub high: u8,
}

impl SingerProfile {
    pub fn new(name: impl Into<String>, low: u8, high: u8) -> Self {
        SingerProfile { name: name.into(), low, high }
    }

    pub fn male() -> Self {
        SingerProfile::new("male", 45, 64)
    }

    pub fn female() -> Self {
        SingerProfile::new("female", 55, 74)
    }

    pub fn defaults() -> Vec<SingerProfile> {
        vec![SingerProfile::male(), SingerProfile::female()]
    }

    fn check(&self) -> Result<(), PrepError> {
        if self.low < self.high {
            Ok(())
        } else {
            Err(PrepError::BadProfile { name: self.name.clone(), low: self.low, high: self.high })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterDecision {
    pub singer: String,
    pub delta: i32,
    pub in_range_count: usize,
}

/// One (profile, shift) configuration and its coverage. Shifts that push a
/// note outside 0..=127 are infeasible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterCandidate {
    pub profile: usize,
    pub delta: i32,
    pub in_range_count: usize,
    pub feasible: bool,
}

/// Every configuration searched by [`register_match`], profile-major.
pub fn register_candidates(
    score: &VocalScore,
    profiles: &[SingerProfile],
) -> Result<Vec<RegisterCandidate>, PrepError> {
    if score.is_empty() {
        return Err(PrepError::EmptyScore);
    }
    if profiles.is_empty() {
        return Err(PrepError::NoProfiles);
    }
    let mut out = Vec::with_capacity(profiles.len() * OCTAVE_SHIFTS.len());
    for (i, profile) in profiles.iter().enumerate() {
        profile.check()?;
        for delta in OCTAVE_SHIFTS {
            let shifted = score.notes.iter().map(|n| n.pitch as i32 + delta);
            let feasible = shifted.clone().all(|p| (0..=127).contains(&p));
            let in_range_count = shifted.filter(|&p| p >= profile.low as i32 && p <= profile.high as i32).count();
            out.push(RegisterCandidate { profile: i, delta, in_range_count, feasible });
        }
    }
    Ok(out)
}

/// Most notes in range, then the smallest shift, then the earlier profile.
pub fn register_match(score: &VocalScore, profiles: &[SingerProfile]) -> Result<RegisterDecision, PrepError> {
    let best = register_candidates(score, profiles)?
        .into_iter()
        .filter(|c| c.feasible)
        .min_by_key(|c| (std::cmp::Reverse(c.in_range_count), c.delta.abs(), c.profile, c.delta))
        .expect("zero shift is always feasible");
    Ok(RegisterDecision {
        singer: profiles[best.profile].name.clone(),
        delta: best.delta,
        in_range_count: best.in_range_count,
    })
}

pub fn apply_transpose(score: &VocalScore, delta: i32) -> Result<VocalScore, PrepError> {
    let mut out = score.clone();
    for note in &mut out.notes {
        let p = note.pitch as i32 + delta;
        if !(0..=127).contains(&p) {
            return Err(PrepError::PitchOutOfRange { pitch: note.pitch, delta });
        }
        note.pitch = p as u8;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyrics::LyricLine;
    use crate::score::{Note, Section, SectionLabel};

    fn sheet(lines: &[(SectionLabel, usize)]) -> LyricsSheet {
        LyricsSheet {
            lines: lines
                .iter()
                .map(|&(tag, n)| LyricLine { tag, tokens: (0..n).map(|i| format!("w{i}")).collect() })
                .collect(),
        }
    }

    use SectionLabel::{Chorus, Verse};

    #[test]
    fn identical_sheets_cost_nothing() {
        let s = sheet(&[(Verse, 5), (Chorus, 7)]);
        assert_eq!(penalty_score(&s, &s, true).unwrap().total, 0.0);
    }

    #[test]
    fn token_profile_example() {
        let t = sheet(&[(Verse, 4), (Verse, 4)]);
        let c = sheet(&[(Verse, 4), (Verse, 6)]);
        let p = penalty_score(&t, &c, false).unwrap();
        assert!((p.p_prof - 1.0 / 6.0).abs() < 1e-15);
        assert!((p.total - 0.4 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn structure_example() {
        let t = sheet(&[(Verse, 3), (Chorus, 3)]);
        let c = sheet(&[(Verse, 3), (Verse, 3), (Chorus, 3)]);
        let p = penalty_score(&t, &c, false).unwrap();
        assert!((p.p_struct - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.p_sent - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn median_padding() {
        // candidate [2, 9, 4] has median 4, target padded with median 3
        assert!((profile_penalty(&[2, 4], &[2, 9, 4]) - ((0.0 + 5.0 + 1.0) / 3.0) / 9.0).abs() < 1e-15);
    }

    #[test]
    fn shorter_candidates_can_be_rejected() {
        let t = sheet(&[(Verse, 3), (Chorus, 3)]);
        let c = sheet(&[(Verse, 3)]);
        assert!(penalty_score(&t, &c, true).unwrap().is_rejected());
        assert!(!penalty_score(&t, &c, false).unwrap().is_rejected());
        assert!(matches!(select_reference(&t, &[c], true), Err(PrepError::AllRejected)));
    }

    #[test]
    fn selection_prefers_exact_copy_and_lower_index() {
        let t = sheet(&[(Verse, 3), (Chorus, 4)]);
        let far = sheet(&[(Chorus, 9)]);
        let bank = vec![far.clone(), t.clone(), t.clone()];
        let (i, p) = select_reference(&t, &bank, false).unwrap();
        assert_eq!((i, p.total), (1, 0.0));
        assert!(matches!(select_reference(&t, &[], false), Err(PrepError::EmptyBank)));
    }

    fn melody(pitches: &[u8]) -> VocalScore {
        let mut s = VocalScore::new("m");
        s.sections.push(Section::new(SectionLabel::Verse, 0, 480 * pitches.len() as u32));
        for (i, &p) in pitches.iter().enumerate() {
            s.notes.push(Note::new(i as u32 * 480, 480, p));
        }
        s
    }

    #[test]
    fn register_examples() {
        let d = register_match(&melody(&[60, 64, 67, 72]), &SingerProfile::defaults()).unwrap();
        assert_eq!((d.singer.as_str(), d.delta, d.in_range_count), ("female", 0, 4));
        let d = register_match(&melody(&[40, 40, 40]), &SingerProfile::defaults()).unwrap();
        assert_eq!((d.singer.as_str(), d.delta, d.in_range_count), ("male", 12, 3));
    }

    #[test]
    fn ties_prefer_small_shift_then_list_order() {
        // 60 fits both profiles unshifted and male shifted down
        let d = register_match(&melody(&[60]), &SingerProfile::defaults()).unwrap();
        assert_eq!((d.singer.as_str(), d.delta), ("male", 0));
        let only_up = [SingerProfile::new("high", 70, 80)];
        let d = register_match(&melody(&[60, 80]), &only_up).unwrap();
        assert_eq!((d.delta, d.in_range_count), (0, 1));
    }

    #[test]
    fn transpose_checks_range() {
        let s = melody(&[60, 120]);
        assert_eq!(apply_transpose(&s, 0).unwrap(), s);
        assert_eq!(apply_transpose(&s, -12).unwrap().notes[1].pitch, 108);
        assert!(matches!(apply_transpose(&s, 12), Err(PrepError::PitchOutOfRange { pitch: 120, delta: 12 })));
    }

    #[test]
    fn candidates_cover_all_shifts() {
        let c = register_candidates(&melody(&[120]), &SingerProfile::defaults()).unwrap();
        let pairs: Vec<(usize, i32)> = c.iter().map(|c| (c.profile, c.delta)).collect();
        assert_eq!(pairs, [(0, -12), (0, 0), (0, 12), (1, -12), (1, 0), (1, 12)]);
        assert!(!c[2].feasible);
    }
}
