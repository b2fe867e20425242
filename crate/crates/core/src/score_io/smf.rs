//! Standard MIDI File subset: note on/off plus meta events 0x03 (track
//! name), 0x05 (lyric), 0x06 (marker), 0x2F (end of track), 0x51 (tempo)
//! and 0x58 (time signature). Types 0 and 1 are read (tracks merged by
//! tick); type 0 is written.
//!
//! Song sections travel as marker events whose text is the section label.
//! A marker opens a section that runs until the next marker or the end of
//! the track.

use std::collections::BTreeMap;

use super::ScoreIoError;
use crate::score::{
    Note, Section, SectionLabel, TempoChange, VocalScore, DEFAULT_MICROS_PER_QUARTER,
};

const META: u8 = 0xFF;
const META_TRACK_NAME: u8 = 0x03;
const META_LYRIC: u8 = 0x05;
const META_MARKER: u8 = 0x06;
const META_END_OF_TRACK: u8 = 0x2F;
const META_TEMPO: u8 = 0x51;
const META_TIME_SIGNATURE: u8 = 0x58;

const NOTE_ON_VELOCITY: u8 = 100;
const NOTE_OFF_VELOCITY: u8 = 64;

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        ByteReader { data, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ScoreIoError> {
        if self.remaining() < n {
            return Err(ScoreIoError::Truncated { what, offset: self.pos });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, ScoreIoError> {
        Ok(self.take(1, what)?[0])
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ScoreIoError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    fn vlq(&mut self) -> Result<u32, ScoreIoError> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let byte = self.u8("variable-length quantity")?;
            value = (value << 7) | (byte & 0x7F) as u32;
            if byte & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(ScoreIoError::VlqTooLong { offset: start })
    }
}

fn write_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (value & 0x7F) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7F) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

#[derive(Debug, Clone)]
enum EventKind {
    NoteOn(u8),
    NoteOff(u8),
    Tempo(u32),
    TimeSignature { numerator: u8, denominator_pow: u8 },
    Marker(String),
    Lyric(String),
    TrackName(String),
    EndOfTrack,
}

#[derive(Debug, Clone)]
struct TimedEvent {
    tick: u64,
    track: usize,
    seq: usize,
    kind: EventKind,
}

fn parse_track(
    data: &[u8],
    base_offset: usize,
    track: usize,
    out: &mut Vec<TimedEvent>,
) -> Result<(), ScoreIoError> {
    let mut r = ByteReader::new(data);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut seq = 0usize;
    while r.remaining() > 0 {
        tick += r.vlq()? as u64;
        if tick > u32::MAX as u64 {
            return Err(ScoreIoError::TickOverflow);
        }
        let offset = base_offset + r.pos;
        let status = match r.peek() {
            Some(b) if b >= 0x80 => {
                r.pos += 1;
                b
            }
            Some(_) => running.ok_or(ScoreIoError::MissingStatus { offset })?,
            None => return Err(ScoreIoError::Truncated { what: "event", offset }),
        };
        let kind = match status {
            META => {
                running = None;
                let meta_type = r.u8("meta event type")?;
                let len = r.vlq()? as usize;
                let body = r.take(len, "meta event data")?;
                match meta_type {
                    META_END_OF_TRACK => Some(EventKind::EndOfTrack),
                    META_TEMPO if len == 3 => Some(EventKind::Tempo(
                        (body[0] as u32) << 16 | (body[1] as u32) << 8 | body[2] as u32,
                    )),
                    META_TEMPO => return Err(ScoreIoError::BadMeta { meta_type, offset }),
                    META_TIME_SIGNATURE if len >= 2 => Some(EventKind::TimeSignature {
                        numerator: body[0],
                        denominator_pow: body[1],
                    }),
                    META_TIME_SIGNATURE => return Err(ScoreIoError::BadMeta { meta_type, offset }),
                    META_MARKER => Some(EventKind::Marker(String::from_utf8_lossy(body).into_owned())),
                    META_LYRIC => Some(EventKind::Lyric(String::from_utf8_lossy(body).into_owned())),
                    META_TRACK_NAME => {
                        Some(EventKind::TrackName(String::from_utf8_lossy(body).into_owned()))
                    }
                    _ => None,
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len, "sysex data")?;
                None
            }
            0x80..=0xEF => {
                running = Some(status);
                let data_len = if matches!(status & 0xF0, 0xC0 | 0xD0) { 1 } else { 2 };
                let body = r.take(data_len, "channel message data")?;
                if body.iter().any(|b| b & 0x80 != 0) {
                    return Err(ScoreIoError::MissingStatus { offset });
                }
                match status & 0xF0 {
                    0x90 if body[1] > 0 => Some(EventKind::NoteOn(body[0])),
                    0x90 | 0x80 => Some(EventKind::NoteOff(body[0])),
                    _ => None,
                }
            }
            other => return Err(ScoreIoError::UnsupportedStatus { status: other, offset }),
        };
        if let Some(kind) = kind {
            let end = matches!(kind, EventKind::EndOfTrack);
            out.push(TimedEvent { tick, track, seq, kind });
            seq += 1;
            if end {
                break;
            }
        }
    }
    Ok(())
}

pub fn read(bytes: &[u8]) -> Result<VocalScore, ScoreIoError> {
    if bytes.is_empty() {
        return Err(ScoreIoError::EmptyInput);
    }
    let mut r = ByteReader::new(bytes);
    let id = r.take(4, "header chunk id")?;
    if id != b"MThd" {
        return Err(ScoreIoError::BadHeader("missing MThd chunk id".into()));
    }
    let header_len = r.u32("header length")? as usize;
    if header_len < 6 {
        return Err(ScoreIoError::BadHeader(format!("header length {header_len} < 6")));
    }
    let header = r.take(header_len, "header chunk")?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let n_tracks = u16::from_be_bytes([header[2], header[3]]) as usize;
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(ScoreIoError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(ScoreIoError::BadHeader("SMPTE time division not supported".into()));
    }
    if division == 0 {
        return Err(ScoreIoError::BadHeader("zero ticks per quarter".into()));
    }

    let mut events = Vec::new();
    let mut tracks_found = 0usize;
    while r.remaining() >= 8 && tracks_found < n_tracks {
        let chunk_id = r.take(4, "chunk id")?;
        let len = r.u32("chunk length")? as usize;
        let offset = r.pos;
        let body = r.take(len, "track chunk")?;
        if chunk_id == b"MTrk" {
            parse_track(body, offset, tracks_found, &mut events)?;
            tracks_found += 1;
        }
    }
    if tracks_found < n_tracks {
        return Err(ScoreIoError::Truncated { what: "track chunks", offset: r.pos });
    }

    events.sort_by_key(|e| (e.tick, e.track, e.seq));
    assemble(events, division)
}

fn assemble(events: Vec<TimedEvent>, division: u16) -> Result<VocalScore, ScoreIoError> {
    let mut score = VocalScore::new("");
    score.ticks_per_quarter = division;
    score.tempo_map.clear();

    let mut open: BTreeMap<u8, u64> = BTreeMap::new();
    let mut notes: Vec<(u64, u64, u8)> = Vec::new();
    let mut lyrics: BTreeMap<u64, String> = BTreeMap::new();
    let mut markers: Vec<(u64, SectionLabel)> = Vec::new();
    let mut tempos: BTreeMap<u64, u32> = BTreeMap::new();
    let mut end_of_track = 0u64;
    let mut title: Option<String> = None;

    for ev in events {
        match ev.kind {
            EventKind::NoteOn(pitch) => {
                if let Some(start) = open.insert(pitch, ev.tick) {
                    notes.push((start, ev.tick, pitch));
                }
            }
            EventKind::NoteOff(pitch) => {
                if let Some(start) = open.remove(&pitch) {
                    notes.push((start, ev.tick, pitch));
                }
            }
            EventKind::Tempo(us) => {
                tempos.insert(ev.tick, us);
            }
            EventKind::TimeSignature { numerator, denominator_pow } => {
                if numerator != 4 || denominator_pow != 2 {
                    let denominator = 1u32.checked_shl(denominator_pow as u32).unwrap_or(0);
                    return Err(ScoreIoError::NonCommonMeter { numerator, denominator });
                }
            }
            EventKind::Marker(text) => {
                let label = text
                    .parse::<SectionLabel>()
                    .map_err(|_| ScoreIoError::UnknownSectionLabel(text.clone()))?;
                markers.push((ev.tick, label));
            }
            EventKind::Lyric(text) => {
                lyrics.insert(ev.tick, text);
            }
            EventKind::TrackName(text) => {
                if ev.tick == 0 && title.is_none() {
                    title = Some(text);
                }
            }
            EventKind::EndOfTrack => end_of_track = end_of_track.max(ev.tick),
        }
    }
    if let Some((&pitch, &tick)) = open.iter().next() {
        return Err(ScoreIoError::UnmatchedNoteOn { pitch, tick });
    }

    notes.sort();
    score.notes = notes
        .into_iter()
        .map(|(start, end, pitch)| Note {
            onset_tick: start as u32,
            duration_ticks: (end - start) as u32,
            pitch,
            syllable: lyrics.get(&start).cloned(),
        })
        .collect();

    tempos.entry(0).or_insert(DEFAULT_MICROS_PER_QUARTER);
    score.tempo_map = tempos
        .into_iter()
        .map(|(tick, us)| TempoChange { tick: tick as u32, micros_per_quarter: us })
        .collect();

    let end = end_of_track.max(score.notes.iter().map(Note::end_tick).max().unwrap_or(0));
    if markers.is_empty() {
        if end > 0 {
            score.sections.push(Section::new(SectionLabel::Verse, 0, end as u32));
        }
    } else {
        for (i, &(tick, label)) in markers.iter().enumerate() {
            let next = markers.get(i + 1).map(|m| m.0).unwrap_or(end);
            score.sections.push(Section::new(label, tick as u32, next as u32));
        }
    }
    score.title = title.unwrap_or_default();

    let violations = score.validate();
    if !violations.is_empty() {
        return Err(ScoreIoError::Invalid(violations));
    }
    Ok(score)
}

/// Ordering of simultaneous events: closing notes precede markers and
/// lyrics, which precede the note they label.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    TrackName,
    TimeSignature,
    Tempo,
    NoteOff,
    Marker,
    Lyric,
    NoteOn,
}

fn meta(out: &mut Vec<u8>, meta_type: u8, data: &[u8]) {
    out.push(META);
    out.push(meta_type);
    write_vlq(out, data.len() as u32);
    out.extend_from_slice(data);
}

pub fn write(score: &VocalScore) -> Result<Vec<u8>, ScoreIoError> {
    let violations = score.validate();
    if !violations.is_empty() {
        return Err(ScoreIoError::Invalid(violations));
    }
    let end = score.end_tick();
    if end > u32::MAX as u64 {
        return Err(ScoreIoError::TickOverflow);
    }

    let mut events: Vec<(u64, Slot, usize, Vec<u8>)> = Vec::new();
    let mut push = |tick: u64, slot: Slot, bytes: Vec<u8>| {
        let n = events.len();
        events.push((tick, slot, n, bytes));
    };
    if !score.title.is_empty() {
        let mut b = Vec::new();
        meta(&mut b, META_TRACK_NAME, score.title.as_bytes());
        push(0, Slot::TrackName, b);
    }
    let mut b = Vec::new();
    meta(&mut b, META_TIME_SIGNATURE, &[4, 2, 24, 8]);
    push(0, Slot::TimeSignature, b);
    for change in &score.tempo_map {
        let us = change.micros_per_quarter.min(0xFF_FFFF);
        let mut b = Vec::new();
        meta(&mut b, META_TEMPO, &[(us >> 16) as u8, (us >> 8) as u8, us as u8]);
        push(change.tick as u64, Slot::Tempo, b);
    }
    for section in &score.sections {
        let mut b = Vec::new();
        meta(&mut b, META_MARKER, section.label.as_str().as_bytes());
        push(section.start_tick as u64, Slot::Marker, b);
    }
    for note in &score.notes {
        if let Some(syllable) = &note.syllable {
            let mut b = Vec::new();
            meta(&mut b, META_LYRIC, syllable.as_bytes());
            push(note.onset_tick as u64, Slot::Lyric, b);
        }
        push(note.onset_tick as u64, Slot::NoteOn, vec![0x90, note.pitch, NOTE_ON_VELOCITY]);
        push(note.end_tick(), Slot::NoteOff, vec![0x80, note.pitch, NOTE_OFF_VELOCITY]);
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));

    let mut track = Vec::new();
    let mut last = 0u64;
    for (tick, _, _, bytes) in &events {
        write_vlq(&mut track, (tick - last) as u32);
        track.extend_from_slice(bytes);
        last = *tick;
    }
    write_vlq(&mut track, (end - last) as u32);
    meta(&mut track, META_END_OF_TRACK, &[]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&score.ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}
