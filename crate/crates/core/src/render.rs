//! Deterministic stand-in for the accompaniment generator: a sine pad on
//! the conditioned chords plus a click on every conditioned beat.
//!
//! Rendering works on the song-wide sample grid, so windows rendered one by
//! one concatenate into exactly the buffer a single whole-song window gives.

use std::sync::OnceLock;

use crate::audio::AudioBuffer;
use crate::chords::Chord;
use crate::conditioning::ConditionBundle;
use crate::planner::GenerationWindow;

pub const DEFAULT_RENDER_RATE: u32 = 44_100;
pub const PAD_AMPLITUDE: f64 = 0.2;
pub const CLICK_AMPLITUDE: f64 = 0.3;
pub const DOWNBEAT_GAIN: f64 = 1.5;
pub const CLICK_HZ: f64 = 1000.0;
pub const CLICK_SECONDS: f64 = 0.010;
/// Decay constant of the click envelope.
pub const CLICK_TAU: f64 = 0.0025;
pub const CROSSFADE_SECONDS: f64 = 0.010;
/// Activation peaks below this are not beats.
pub const PEAK_THRESHOLD: f64 = 0.5;
/// Entries in the sine table covering one period.
pub const SINE_TABLE_SIZE: usize = 1 << 16;
/// Pad voicing: pitch class `pc` sounds at MIDI `PAD_BASE_MIDI + pc`.
pub const PAD_BASE_MIDI: u8 = 60;

fn sine_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=SINE_TABLE_SIZE)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / SINE_TABLE_SIZE as f64).sin())
            .collect()
    })
}

/// sin(2π·cycles) by linear interpolation in the table.
fn table_sin(cycles: f64) -> f64 {
    let frac = cycles - cycles.floor();
    let pos = frac * SINE_TABLE_SIZE as f64;
    let i = pos as usize;
    let t = sine_table();
    let (a, b) = (t[i.min(SINE_TABLE_SIZE)], t[(i + 1).min(SINE_TABLE_SIZE)]);
    a + (b - a) * (pos - i as f64)
}

pub fn midi_to_hz(pitch: f64) -> f64 {
    440.0 * 2f64.powf((pitch - 69.0) / 12.0)
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    Beat,
    Downbeat,
    /// Pad change; `None` when the pad falls silent or plays a non-triad.
    Chord(Option<Chord>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderEvent {
    /// Song-wide sample index.
    pub sample: u64,
    pub kind: EventKind,
}

impl RenderEvent {
    pub fn label(&self) -> String {
        match &self.kind {
            EventKind::Beat => "beat".into(),
            EventKind::Downbeat => "downbeat".into(),
            EventKind::Chord(Some(c)) => format!("chord:{c}"),
            EventKind::Chord(None) => "chord:N".into(),
        }
    }
}

/// Two columns per line: time in seconds and event type.
pub fn events_to_text(events: &[RenderEvent], sample_rate: u32) -> String {
    events.iter().map(|e| format!("{:?}\t{}\n", e.sample as f64 / sample_rate as f64, e.label())).collect()
}

/// Beat times from an event log written by [`events_to_text`].
pub fn beat_times_from_text(text: &str) -> Vec<f64> {
    text.lines()
        .filter_map(|l| {
            let mut f = l.split_whitespace();
            let t = f.next()?.parse().ok()?;
            (f.next()? == "beat").then_some(t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("window [{start}, {end}] is outside the bundle's [0, {duration}]")]
    WindowMismatch { start: f64, end: f64, duration: f64 },
    #[error("bundle channels have inconsistent frame counts")]
    Shapes,
    #[error("sample rate must be positive")]
    SampleRate,
}

/// Sub-frame times of local maxima ≥ `threshold` in an activation column.
/// The Gaussian bumps are parabolas in log domain, so a three-point fit on
/// ln(a) recovers the event time.
pub fn activation_peaks(column: &[f64], frame_rate: f64, threshold: f64) -> Vec<f64> {
    let n = column.len();
    let mut out = Vec::new();
    for k in 0..n {
        let a = column[k];
        if a < threshold {
            continue;
        }
        let left = if k > 0 { column[k - 1] } else { 0.0 };
        let right = if k + 1 < n { column[k + 1] } else { 0.0 };
        if !(a > left && a >= right) {
            continue;
        }
        let mut offset = 0.0;
        if left > 0.0 && right > 0.0 {
            let (l, c, r) = (left.ln(), a.ln(), right.ln());
            let denom = l - 2.0 * c + r;
            if denom < 0.0 {
                offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
            }
        }
        out.push((k as f64 + offset) / frame_rate);
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Click {
    onset: u64,
    downbeat: bool,
}

fn clicks(bundle: &ConditionBundle, sample_rate: u32) -> Vec<Click> {
    let beat_col: Vec<f64> = bundle.rhythm.iter().map(|r| r[0]).collect();
    let down_col: Vec<f64> = bundle.rhythm.iter().map(|r| r[1]).collect();
    let beats = activation_peaks(&beat_col, bundle.frame_rate, PEAK_THRESHOLD);
    let downs = activation_peaks(&down_col, bundle.frame_rate, PEAK_THRESHOLD);
    let near = |t: f64, list: &[f64]| list.iter().any(|&x| (x - t).abs() <= 1.0 / bundle.frame_rate);
    let sr = sample_rate as f64;
    let mut out: Vec<Click> =
        beats.iter().map(|&t| Click { onset: (t * sr).round() as u64, downbeat: near(t, &downs) }).collect();
    out.extend(
        downs.iter().filter(|&&t| !near(t, &beats)).map(|&t| Click { onset: (t * sr).round() as u64, downbeat: true }),
    );
    out.sort_by_key(|c| c.onset);
    out
}

/// Frame indices where the chroma row changes.
fn chroma_changes(chroma: &[[u8; 12]]) -> Vec<usize> {
    (1..chroma.len()).filter(|&k| chroma[k] != chroma[k - 1]).collect()
}

fn pad_sample(row: &[u8; 12], n: u64, sr: f64) -> f64 {
    let mut acc = 0.0;
    for (pc, &on) in row.iter().enumerate() {
        if on != 0 {
            let f = midi_to_hz((PAD_BASE_MIDI as usize + pc) as f64);
            acc += PAD_AMPLITUDE * table_sin(f * n as f64 / sr);
        }
    }
    acc
}

/// Renders `[window.start, window.end)` of the song. Sample `i` of the
/// result is song-wide sample `round(start·sr) + i`.
pub fn render_stub(
    bundle: &ConditionBundle,
    window: &GenerationWindow,
    sample_rate: u32,
) -> Result<(AudioBuffer, Vec<RenderEvent>), RenderError> {
    if sample_rate == 0 {
        return Err(RenderError::SampleRate);
    }
    if !bundle.shapes_consistent() {
        return Err(RenderError::Shapes);
    }
    let duration = bundle.duration_seconds;
    let tol = 1.0 / sample_rate as f64;
    if !(window.start >= 0.0 && window.end > window.start && window.end <= duration + tol) {
        return Err(RenderError::WindowMismatch { start: window.start, end: window.end, duration });
    }
    let sr = sample_rate as f64;
    let n0 = (window.start * sr).round() as u64;
    let n1 = (window.end * sr).round() as u64;
    let mut samples = vec![0.0f32; (n1 - n0) as usize];
    let mut events = Vec::new();

    let fr = bundle.frame_rate;
    let frames = bundle.frames();
    let frame_of = |n: u64| (((n as f64 / sr) * fr).floor() as usize).min(frames.saturating_sub(1));
    let changes = chroma_changes(&bundle.chroma);
    let half_fade = CROSSFADE_SECONDS / 2.0;

    if frames > 0 {
        for (i, out) in samples.iter_mut().enumerate() {
            let n = n0 + i as u64;
            let t = n as f64 / sr;
            // nearest chroma change, cross-faded linearly across it
            let idx = changes.partition_point(|&k| (k as f64 / fr) <= t);
            let nearest = [idx.checked_sub(1), Some(idx)]
                .into_iter()
                .flatten()
                .filter_map(|j| changes.get(j))
                .min_by(|&&a, &&b| (a as f64 / fr - t).abs().total_cmp(&(b as f64 / fr - t).abs()));
            let value = match nearest {
                Some(&k) if (k as f64 / fr - t).abs() < half_fade => {
                    let tb = k as f64 / fr;
                    let g_new = (t - (tb - half_fade)) / CROSSFADE_SECONDS;
                    (1.0 - g_new) * pad_sample(&bundle.chroma[k - 1], n, sr) + g_new * pad_sample(&bundle.chroma[k], n, sr)
                }
                _ => pad_sample(&bundle.chroma[frame_of(n)], n, sr),
            };
            *out = value as f32;
        }

        if n0 == 0 && bundle.chroma[0].iter().any(|&b| b != 0) {
            events.push(RenderEvent { sample: 0, kind: EventKind::Chord(Chord::from_chroma(&bundle.chroma[0])) });
        }
        for &k in &changes {
            let n = (k as f64 / fr * sr).round() as u64;
            if n >= n0 && n < n1 {
                events.push(RenderEvent { sample: n, kind: EventKind::Chord(Chord::from_chroma(&bundle.chroma[k])) });
            }
        }
    }

    let click_len = (CLICK_SECONDS * sr).round() as u64;
    for click in clicks(bundle, sample_rate) {
        if click.onset + click_len <= n0 || click.onset >= n1 {
            continue;
        }
        let gain = CLICK_AMPLITUDE * if click.downbeat { DOWNBEAT_GAIN } else { 1.0 };
        for m in 0..click_len {
            let n = click.onset + m;
            if n < n0 || n >= n1 {
                continue;
            }
            let t = m as f64 / sr;
            let v = gain * (-t / CLICK_TAU).exp() * table_sin(CLICK_HZ * t);
            samples[(n - n0) as usize] += v as f32;
        }
        if click.onset >= n0 {
            events.push(RenderEvent { sample: click.onset, kind: EventKind::Beat });
            if click.downbeat {
                events.push(RenderEvent { sample: click.onset, kind: EventKind::Downbeat });
            }
        }
    }
    events.sort_by_key(|e| e.sample);
    Ok((AudioBuffer::mono(sample_rate, samples), events))
}

/// Contract for accompaniment generators. `reference` carries audio already
/// generated for the window's reference span, if any.
pub trait AccompanimentGenerator {
    fn generate(
        &self,
        bundle: &ConditionBundle,
        reference: Option<&AudioBuffer>,
        window: &GenerationWindow,
    ) -> Result<(AudioBuffer, Vec<RenderEvent>), RenderError>;
}

#[derive(Clone, Copy, Debug)]
pub struct StubGenerator {
    pub sample_rate: u32,
}

impl Default for StubGenerator {
    fn default() -> Self {
        StubGenerator { sample_rate: DEFAULT_RENDER_RATE }
    }
}

impl AccompanimentGenerator for StubGenerator {
    fn generate(
        &self,
        bundle: &ConditionBundle,
        _reference: Option<&AudioBuffer>,
        window: &GenerationWindow,
    ) -> Result<(AudioBuffer, Vec<RenderEvent>), RenderError> {
        render_stub(bundle, window, self.sample_rate)
    }
}

/// Runs `windows` in generation order, handing each generator call the
/// already rendered audio of its reference span, and assembles the song.
pub fn render_song(
    generator: &dyn AccompanimentGenerator,
    bundle: &ConditionBundle,
    windows: &[GenerationWindow],
    sample_rate: u32,
) -> Result<(AudioBuffer, Vec<RenderEvent>), RenderError> {
    let sr = sample_rate as f64;
    let total = (bundle.duration_seconds * sr).round() as usize;
    let mut song = vec![0.0f32; total];
    let mut events = Vec::new();
    let mut ordered: Vec<&GenerationWindow> = windows.iter().collect();
    ordered.sort_by_key(|w| w.order);
    for w in ordered {
        let reference = w.reference_span.map(|(a, b)| {
            let (i, j) = (((a * sr).round() as usize).min(total), ((b * sr).round() as usize).min(total));
            AudioBuffer::mono(sample_rate, song[i..j.max(i)].to_vec())
        });
        let (audio, mut ev) = generator.generate(bundle, reference.as_ref(), w)?;
        let offset = (w.start * sr).round() as usize;
        let mono = audio.to_mono();
        for (k, s) in mono.into_iter().enumerate() {
            if let Some(slot) = song.get_mut(offset + k) {
                *slot = s;
            }
        }
        events.append(&mut ev);
    }
    events.sort_by_key(|e| e.sample);
    Ok((AudioBuffer::mono(sample_rate, song), events))
}

/// Plain sine rendition of the melody, used as a vocal stand-in when no
/// sung audio is supplied. Notes get 5 ms linear attack and release ramps.
pub fn render_guide_vocal(score: &crate::score::VocalScore, sample_rate: u32) -> AudioBuffer {
    const AMPLITUDE: f64 = 0.3;
    const RAMP: f64 = 0.005;
    let sr = sample_rate as f64;
    let total = (score.duration_seconds() * sr).round() as usize;
    let mut out = vec![0.0f32; total];
    for note in &score.notes {
        let t0 = score.tick_to_seconds(note.onset_tick as u64);
        let t1 = score.tick_to_seconds(note.end_tick());
        let (n0, n1) = ((t0 * sr).round() as usize, ((t1 * sr).round() as usize).min(total));
        let hz = midi_to_hz(note.pitch as f64);
        let ramp = (RAMP * sr).max(1.0);
        for (n, sample) in out.iter_mut().enumerate().take(n1).skip(n0) {
            let edge = ((n - n0) as f64).min((n1 - n) as f64) / ramp;
            *sample += (AMPLITUDE * edge.min(1.0) * table_sin(hz * n as f64 / sr)) as f32;
        }
    }
    AudioBuffer::mono(sample_rate, out)
}
