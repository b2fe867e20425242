#![allow(dead_code)]

use rand::Rng;
use songsmith::score::{Note, Section, SectionLabel, TempoChange, VocalScore};

pub const TPQ: u32 = 480;
pub const BAR: u32 = 4 * TPQ;

/// Random valid 4/4 score: `bars` bars at `bpm`, split into sections of at
/// least two bars that include a verse, filled with a diatonic melody.
pub fn random_score(rng: &mut impl Rng, bars: u32, bpm: f64) -> VocalScore {
    let mut s = VocalScore::new("random");
    s.tempo_map = vec![TempoChange { tick: 0, micros_per_quarter: (60e6 / bpm).round() as u32 }];

    let mut spans = Vec::new();
    let mut at = 0;
    while at < bars {
        let mut len = rng.random_range(2..=8).min(bars - at);
        if bars - (at + len) < 2 {
            len = bars - at;
        }
        spans.push((at, at + len));
        at += len;
    }
    let mut labels = Vec::new();
    if spans.len() > 1 && rng.random_bool(0.3) {
        labels.push(SectionLabel::Intro);
    }
    labels.push(SectionLabel::Verse);
    let cycle = [SectionLabel::Chorus, SectionLabel::Verse, SectionLabel::Bridge, SectionLabel::Chorus, SectionLabel::Outro];
    while labels.len() < spans.len() {
        labels.push(cycle[labels.len() % cycle.len()]);
    }
    for (&(a, b), &label) in spans.iter().zip(&labels) {
        s.sections.push(Section::new(label, a * BAR, b * BAR));
    }

    let scale = [0, 2, 4, 5, 7, 9, 11];
    let tonic = rng.random_range(55..67);
    let mut t = 0u32;
    let end = bars * BAR;
    while t < end {
        let dur = [TPQ / 2, TPQ, TPQ, 2 * TPQ][rng.random_range(0..4)].min(end - t);
        if rng.random_bool(0.85) {
            let degree = rng.random_range(0..10);
            let pitch = tonic + 12 * (degree / 7) + scale[(degree % 7) as usize];
            s.notes.push(Note::new(t, dur, pitch as u8));
        }
        t += dur;
    }
    assert!(s.validate().is_empty(), "{:?}", s.validate());
    s
}

/// [`random_score`] plus tempo changes, syllables and a title, everything
/// a Standard MIDI File can carry.
pub fn random_rich_score(rng: &mut impl Rng) -> VocalScore {
    let bars = rng.random_range(1..=12);
    let bpm = rng.random_range(40.0..220.0);
    let mut s = random_score(rng, bars, bpm);
    s.title = format!("song {}", rng.random_range(0..1000));
    let mut tick = 0;
    for _ in 0..rng.random_range(0..4) {
        tick += rng.random_range(1..3 * BAR);
        if tick >= bars * BAR {
            break;
        }
        s.tempo_map.push(TempoChange { tick, micros_per_quarter: rng.random_range(200_000..1_500_000) });
    }
    let syllables = ["la", "na", "oh", "yeah", "you", "我", "的"];
    for n in &mut s.notes {
        if rng.random_bool(0.5) {
            n.syllable = Some(syllables[rng.random_range(0..syllables.len())].to_string());
        }
    }
    s
}

/// Sample times of clicks found as energy peaks of the fourth-difference
/// (high-passed) signal; the pad sits far below the 1 kHz click band.
pub fn energy_peaks(samples: &[f32], sample_rate: u32) -> Vec<f64> {
    // the song is silent before its first sample
    let lead = 4 + sample_rate as usize / 1000;
    let x: Vec<f64> = std::iter::repeat_n(0.0, lead).chain(samples.iter().map(|&v| v as f64)).collect();
    if samples.is_empty() {
        return vec![];
    }
    let d: Vec<f64> = (4..x.len()).map(|n| x[n] - 4.0 * x[n - 1] + 6.0 * x[n - 2] - 4.0 * x[n - 3] + x[n - 4]).collect();
    let energy: Vec<f64> = d.iter().map(|v| v * v).collect();
    let box_len = (sample_rate as usize / 1000).max(1);
    let mut smooth = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for i in 0..energy.len() {
        acc += energy[i];
        if i >= box_len {
            acc -= energy[i - box_len];
        }
        smooth[i] = acc;
    }
    let max = smooth.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![];
    }
    let radius = (0.04 * sample_rate as f64) as usize;
    let mut out = Vec::new();
    for i in 0..smooth.len() {
        let v = smooth[i];
        if v < 0.1 * max {
            continue;
        }
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(smooth.len());
        if (lo..hi).all(|j| if j < i { smooth[j] < v } else { smooth[j] <= v }) {
            // box ends at i, the difference filter lags two samples
            let centre = i as f64 + 4.0 - 2.0 - (box_len as f64 - 1.0) / 2.0 - lead as f64;
            out.push(centre / sample_rate as f64);
        }
    }
    out
}
