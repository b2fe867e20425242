//! Per-bar melody harmonization by dynamic programming over the 24 major
//! and minor triads, and the intro rule that repeats the opening bars.

use crate::chords::{Chord, ChordSequence, ChordSpan, PitchClass};
use crate::score::{Violation, VocalScore};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HarmonizerWeights {
    pub emission_weight: f64,
    pub transition_weight: f64,
    pub chord_change_penalty: f64,
}

impl Default for HarmonizerWeights {
    fn default() -> Self {
        HarmonizerWeights { emission_weight: 1.0, transition_weight: 0.1, chord_change_penalty: 0.05 }
    }
}

impl HarmonizerWeights {
    pub fn is_valid(&self) -> bool {
        self.emission_weight.is_finite()
            && self.transition_weight.is_finite()
            && self.chord_change_penalty.is_finite()
            && self.emission_weight > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarmonizeError {
    #[error("score has no notes")]
    EmptyScore,
    #[error("invalid score: {0:?}")]
    InvalidScore(Vec<Violation>),
    #[error("weights must be finite with a positive emission weight")]
    Weights,
    #[error("progression spans {available:.3}s, {bars} bars need {needed:.3}s")]
    TooShort { bars: u32, needed: f64, available: f64 },
    #[error("bar duration must be positive, got {0}")]
    BarDuration(f64),
}

/// Scores within this distance count as tied.
const TIE_EPS: f64 = 1e-12;

/// Pitch-class weight (in ticks of sounding melody) for every bar.
pub fn bar_pitch_weights(score: &VocalScore) -> Vec<[u64; 12]> {
    let tpb = score.ticks_per_bar().max(1) as u64;
    let bars = score.end_tick().div_ceil(tpb) as usize;
    let mut out = vec![[0u64; 12]; bars];
    for note in &score.notes {
        let pc = PitchClass::of_midi(note.pitch).value() as usize;
        let (mut t, end) = (note.onset_tick as u64, note.end_tick());
        while t < end {
            let bar = (t / tpb) as usize;
            let bar_end = ((bar as u64 + 1) * tpb).min(end);
            out[bar][pc] += bar_end - t;
            t = bar_end;
        }
    }
    out
}

/// Duration-weighted fraction of the bar's melody that falls on chord tones.
pub fn emission(weights: &[u64; 12], chord: Chord) -> f64 {
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let inside: u64 = chord.pitch_classes().iter().map(|pc| weights[pc.value() as usize]).sum();
    inside as f64 / total as f64
}

pub fn transition(from: Chord, to: Chord, w: &HarmonizerWeights) -> f64 {
    let change = if from == to { 0.0 } else { w.chord_change_penalty };
    w.transition_weight * from.common_tones(to) as f64 - change
}

fn is_rest(bar: &[u64; 12]) -> bool {
    bar.iter().all(|&w| w == 0)
}

/// Objective maximized by [`harmonize_bars`]: weighted emissions plus the
/// transitions between consecutive bars that contain melody. Rest bars are
/// ignored.
pub fn path_score(bars: &[[u64; 12]], chords: &[Chord], w: &HarmonizerWeights) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<Chord> = None;
    for (bar, &chord) in bars.iter().zip(chords) {
        if is_rest(bar) {
            continue;
        }
        total += w.emission_weight * emission(bar, chord);
        if let Some(p) = prev {
            total += transition(p, chord, w);
        }
        prev = Some(chord);
    }
    total
}

/// Lowest index among entries within [`TIE_EPS`] of the maximum.
fn argmax_first(values: &[f64]) -> usize {
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= best - TIE_EPS).expect("non-empty")
}

/// One chord per bar. Among optimal progressions the lexicographically
/// smallest by chord index is returned. Rest bars repeat the previous
/// chord (leading rests take the first harmonized chord).
pub fn harmonize_bars(bars: &[[u64; 12]], w: &HarmonizerWeights) -> Result<Vec<Chord>, HarmonizeError> {
    if !w.is_valid() {
        return Err(HarmonizeError::Weights);
    }
    let voiced: Vec<usize> = (0..bars.len()).filter(|&i| !is_rest(&bars[i])).collect();
    if voiced.is_empty() {
        return Err(HarmonizeError::EmptyScore);
    }
    let vocab = Chord::vocabulary();
    let mut trans = [[0.0; 24]; 24];
    for (a, row) in trans.iter_mut().enumerate() {
        for (b, t) in row.iter_mut().enumerate() {
            *t = transition(vocab[a], vocab[b], w);
        }
    }
    let emit: Vec<[f64; 24]> = voiced
        .iter()
        .map(|&i| std::array::from_fn(|c| w.emission_weight * emission(&bars[i], vocab[c])))
        .collect();

    // value[k][c]: best score of bars k.. given chord c at bar k
    let n = voiced.len();
    let mut value = vec![[0.0; 24]; n];
    value[n - 1] = emit[n - 1];
    for k in (0..n - 1).rev() {
        for c in 0..24 {
            let best = (0..24).map(|d| trans[c][d] + value[k + 1][d]).fold(f64::NEG_INFINITY, f64::max);
            value[k][c] = emit[k][c] + best;
        }
    }
    let mut picks = Vec::with_capacity(n);
    picks.push(argmax_first(&value[0]));
    for k in 1..n {
        let prev = picks[k - 1];
        let scores: Vec<f64> = (0..24).map(|d| trans[prev][d] + value[k][d]).collect();
        picks.push(argmax_first(&scores));
    }

    let mut out = Vec::with_capacity(bars.len());
    let mut current = vocab[picks[0]];
    let mut next_pick = 0;
    for i in 0..bars.len() {
        if next_pick < n && voiced[next_pick] == i {
            current = vocab[picks[next_pick]];
            next_pick += 1;
        }
        out.push(current);
    }
    Ok(out)
}

/// Chord progression for a score, one span per 4/4 bar. The last bar is
/// clipped at the end of the score.
pub fn harmonize(score: &VocalScore, w: &HarmonizerWeights) -> Result<ChordSequence, HarmonizeError> {
    let violations = score.validate();
    if !violations.is_empty() {
        return Err(HarmonizeError::InvalidScore(violations));
    }
    if score.is_empty() {
        return Err(HarmonizeError::EmptyScore);
    }
    let chords = harmonize_bars(&bar_pitch_weights(score), w)?;
    let tpb = score.ticks_per_bar() as u64;
    let end = score.end_tick();
    let entries = chords
        .into_iter()
        .enumerate()
        .map(|(b, chord)| ChordSpan {
            start: score.tick_to_seconds(b as u64 * tpb),
            end: score.tick_to_seconds(((b as u64 + 1) * tpb).min(end)),
            chord,
        })
        .collect();
    Ok(ChordSequence::new(entries))
}

/// Repeats the chords of the first `bars` bars as an intro in front of the
/// progression, shifting everything else later by the intro length.
pub fn prepend_intro_chords(
    chords: &ChordSequence,
    bar_duration: f64,
    bars: u32,
) -> Result<ChordSequence, HarmonizeError> {
    if bars == 0 {
        return Ok(chords.clone());
    }
    if !(bar_duration.is_finite() && bar_duration > 0.0) {
        return Err(HarmonizeError::BarDuration(bar_duration));
    }
    let shift = bars as f64 * bar_duration;
    let available = chords.end();
    if chords.is_empty() || available < shift - 1e-9 {
        return Err(HarmonizeError::TooShort { bars, needed: shift, available });
    }
    let mut entries: Vec<ChordSpan> = chords
        .entries
        .iter()
        .filter(|e| e.start < shift - 1e-9)
        .map(|e| ChordSpan { start: e.start, end: e.end.min(shift), chord: e.chord })
        .collect();
    entries.extend(
        chords.entries.iter().map(|e| ChordSpan { start: e.start + shift, end: e.end + shift, chord: e.chord }),
    );
    Ok(ChordSequence::new(entries))
}
