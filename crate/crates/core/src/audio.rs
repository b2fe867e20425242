//! Sampled audio, RIFF/WAVE I/O and final mixing.

use std::io::Cursor;

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
/// Peak level after [`mix`].
pub const MIX_PEAK: f32 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    /// One sample vector per channel, all the same length.
    pub channels: Vec<Vec<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("malformed RIFF/WAVE data: {0}")]
    Malformed(String),
    #[error("unsupported codec: {0}")]
    Unsupported(String),
    #[error("sample rates differ ({0} Hz vs {1} Hz)")]
    SampleRateMismatch(u32, u32),
    #[error("channel lengths differ")]
    RaggedChannels,
    #[error("{0} channels; only mono and stereo are supported")]
    ChannelCount(usize),
}

impl AudioBuffer {
    pub fn silent(sample_rate: u32, channels: usize, len: usize) -> Self {
        AudioBuffer { sample_rate, channels: vec![vec![0.0; len]; channels] }
    }

    pub fn mono(sample_rate: u32, samples: Vec<f32>) -> Self {
        AudioBuffer { sample_rate, channels: vec![samples] }
    }

    pub fn len(&self) -> usize {
        self.channels.first().map(Vec::len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.channels.iter().flatten().fold(0.0f32, |m, &x| m.max(x.abs()))
    }

    /// Average of all channels.
    pub fn to_mono(&self) -> Vec<f32> {
        let n = self.channels.len().max(1) as f32;
        (0..self.len()).map(|i| self.channels.iter().map(|c| c[i]).sum::<f32>() / n).collect()
    }

    fn check(&self) -> Result<(), AudioError> {
        if self.channels.is_empty() || self.channels.len() > 2 {
            return Err(AudioError::ChannelCount(self.channels.len()));
        }
        if self.channels.iter().any(|c| c.len() != self.len()) {
            return Err(AudioError::RaggedChannels);
        }
        Ok(())
    }
}

fn hound_err(e: hound::Error) -> AudioError {
    match e {
        hound::Error::Unsupported => AudioError::Unsupported("unsupported WAVE format".into()),
        other => AudioError::Malformed(other.to_string()),
    }
}

pub fn read_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(hound_err)?;
    let spec = reader.spec();
    let n_channels = spec.channels as usize;
    if !(1..=2).contains(&n_channels) {
        return Err(AudioError::ChannelCount(n_channels));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(hound_err)?,
        (hound::SampleFormat::Float, 32) => {
            reader.samples::<f32>().collect::<Result<_, _>>().map_err(hound_err)?
        }
        (format, bits) => {
            return Err(AudioError::Unsupported(format!("{format:?} with {bits} bits per sample")))
        }
    };
    if !interleaved.len().is_multiple_of(n_channels) {
        return Err(AudioError::Malformed("partial sample frame".into()));
    }
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_channels); n_channels];
    for frame in interleaved.chunks_exact(n_channels) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s);
        }
    }
    Ok(AudioBuffer { sample_rate: spec.sample_rate, channels })
}

pub fn write_wav(buffer: &AudioBuffer, encoding: WavEncoding) -> Result<Vec<u8>, AudioError> {
    buffer.check()?;
    let spec = hound::WavSpec {
        channels: buffer.channels.len() as u16,
        sample_rate: buffer.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).map_err(hound_err)?;
        for i in 0..buffer.len() {
            for channel in &buffer.channels {
                let s = channel[i];
                match encoding {
                    WavEncoding::Pcm16 => {
                        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                        writer.write_sample(q).map_err(hound_err)?;
                    }
                    WavEncoding::Float32 => writer.write_sample(s).map_err(hound_err)?,
                }
            }
        }
        writer.finalize().map_err(hound_err)?;
    }
    Ok(cursor.into_inner())
}

/// Sums vocal and accompaniment (zero-padding the shorter, duplicating a
/// mono input when the other is stereo) and scales the result to a peak of
/// [`MIX_PEAK`]. Digital silence stays silent.
pub fn mix(vocal: &AudioBuffer, accompaniment: &AudioBuffer) -> Result<AudioBuffer, AudioError> {
    if vocal.sample_rate != accompaniment.sample_rate {
        return Err(AudioError::SampleRateMismatch(vocal.sample_rate, accompaniment.sample_rate));
    }
    vocal.check()?;
    accompaniment.check()?;
    let n_channels = vocal.channels.len().max(accompaniment.channels.len());
    let len = vocal.len().max(accompaniment.len());
    let mut out = AudioBuffer::silent(vocal.sample_rate, n_channels, len);
    for source in [vocal, accompaniment] {
        for (c, channel) in out.channels.iter_mut().enumerate() {
            let src = &source.channels[c.min(source.channels.len() - 1)];
            for (o, &s) in channel.iter_mut().zip(src) {
                *o += s;
            }
        }
    }
    let peak = out.peak();
    if peak > 0.0 {
        let scale = MIX_PEAK as f64 / peak as f64;
        for s in out.channels.iter_mut().flatten() {
            *s = (*s as f64 * scale) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_bit_exact() {
        let buf = AudioBuffer {
            sample_rate: 22_050,
            channels: vec![vec![0.1, -0.7, 1.0e-7, 0.999], vec![0.0, 0.5, -1.0, 0.25]],
        };
        let back = read_wav(&write_wav(&buf, WavEncoding::Float32).unwrap()).unwrap();
        assert_eq!(back, buf);
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let samples: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.0137).sin()).collect();
        let buf = AudioBuffer::mono(44_100, samples);
        let back = read_wav(&write_wav(&buf, WavEncoding::Pcm16).unwrap()).unwrap();
        for (a, b) in buf.channels[0].iter().zip(&back.channels[0]) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn truncated_header_is_a_typed_error() {
        let buf = AudioBuffer::mono(8000, vec![0.0; 10]);
        let bytes = write_wav(&buf, WavEncoding::Pcm16).unwrap();
        assert!(matches!(read_wav(&bytes[..20]), Err(AudioError::Malformed(_))));
        assert!(read_wav(b"").is_err());
    }

    #[test]
    fn mix_normalizes_peak() {
        let vocal = AudioBuffer::mono(100, vec![0.0; 4]);
        let acc = AudioBuffer::mono(100, vec![0.1, -0.5, 0.25, 0.0]);
        let m = mix(&vocal, &acc).unwrap();
        assert!((m.peak() - 0.95).abs() < 1e-6);
        assert!((m.channels[0][0] - 0.19).abs() < 1e-6);
    }

    #[test]
    fn mix_of_silence_is_silent() {
        let a = AudioBuffer::mono(100, vec![0.0; 4]);
        let m = mix(&a, &AudioBuffer::mono(100, vec![0.0; 6])).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.peak(), 0.0);
    }

    #[test]
    fn mix_of_identical_buffers_is_proportional() {
        let a = AudioBuffer::mono(100, vec![0.2, -0.4, 0.1]);
        let m = mix(&a, &a).unwrap();
        for (x, y) in a.channels[0].iter().zip(&m.channels[0]) {
            assert!((y - x * 0.95 / 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn mix_rejects_rate_mismatch() {
        let a = AudioBuffer::mono(100, vec![0.0]);
        let b = AudioBuffer::mono(200, vec![0.0]);
        assert!(matches!(mix(&a, &b), Err(AudioError::SampleRateMismatch(100, 200))));
    }
}
