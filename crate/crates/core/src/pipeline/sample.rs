use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::scalar::Scalar;

/// Rate assumed for inputs that carry none (raw PCM and text).
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Pcm16le,
    Wav,
    Text,
}

impl SourceFormat {
    pub fn code(self) -> u8 {
        match self {
            SourceFormat::Pcm16le => 0,
            SourceFormat::Wav => 1,
            SourceFormat::Text => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [SourceFormat::Pcm16le, SourceFormat::Wav, SourceFormat::Text]
            .get(c as usize)
            .copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceFormat::Pcm16le => "pcm16le",
            SourceFormat::Wav => "wav",
            SourceFormat::Text => "text",
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceFormat {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pcm16le" | "pcm" | "raw" => Ok(SourceFormat::Pcm16le),
            "wav" => Ok(SourceFormat::Wav),
            "text" | "txt" => Ok(SourceFormat::Text),
            other => Err(PipelineError::UnsupportedFormat(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
    pub source_format: SourceFormat,
}

impl<T: Scalar> Sample<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32, source_format: SourceFormat) -> Self {
        Sample {
            samples,
            sample_rate,
            source_format,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_abs(&self) -> T {
        self.samples.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

pub fn load_sample<T: Scalar>(bytes: &[u8], format: SourceFormat) -> Result<Sample<T>, PipelineError> {
    if bytes.is_empty() {
        return Err(PipelineError::malformed(0, "empty input"));
    }
    match format {
        SourceFormat::Pcm16le => Ok(Sample::new(pcm16le(bytes, 0)?, DEFAULT_SAMPLE_RATE, format)),
        SourceFormat::Wav => load_wav(bytes),
        SourceFormat::Text => load_text(bytes),
    }
}

fn pcm16le<T: Scalar>(bytes: &[u8], base: usize) -> Result<Vec<T>, PipelineError> {
    if !bytes.len().is_multiple_of(2) {
        return Err(PipelineError::malformed(base + bytes.len() - 1, "odd byte count for 16-bit PCM"));
    }
    if bytes.is_empty() {
        return Err(PipelineError::malformed(base, "no samples"));
    }
    let scale = T::lit(32768.0);
    Ok(bytes
        .chunks_exact(2)
        .map(|c| T::lit(i16::from_le_bytes([c[0], c[1]]) as f64) / scale)
        .collect())
}

fn le_u16(b: &[u8], at: usize) -> Result<u16, PipelineError> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| PipelineError::malformed(at, "unexpected end of header"))
}

fn le_u32(b: &[u8], at: usize) -> Result<u32, PipelineError> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| PipelineError::malformed(at, "unexpected end of header"))
}

const WAVE_FORMAT_PCM: u16 = 1;

/// Minimal RIFF/WAVE reader: mono, 16-bit PCM only.
fn load_wav<T: Scalar>(b: &[u8]) -> Result<Sample<T>, PipelineError> {
    if b.len() < 12 || &b[0..4] != b"RIFF" || &b[8..12] != b"WAVE" {
        return Err(PipelineError::malformed(0, "not a RIFF/WAVE file"));
    }
    let mut at = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while at + 8 <= b.len() {
        let id = &b[at..at + 4];
        let size = le_u32(b, at + 4)? as usize;
        let body = at + 8;
        let end = body
            .checked_add(size)
            .filter(|e| *e <= b.len())
            .ok_or_else(|| PipelineError::malformed(at + 4, "chunk overruns file"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(PipelineError::malformed(at + 4, "fmt chunk too short"));
                }
                let codec = le_u16(b, body)?;
                let channels = le_u16(b, body + 2)?;
                let rate = le_u32(b, body + 4)?;
                let bits = le_u16(b, body + 14)?;
                fmt = Some((codec, channels, rate, bits));
            }
            b"data" => {
                let (codec, channels, rate, bits) =
                    fmt.ok_or_else(|| PipelineError::malformed(at, "data chunk before fmt chunk"))?;
                if codec != WAVE_FORMAT_PCM {
                    return Err(PipelineError::UnsupportedFormat(format!("wav codec 0x{codec:04x}")));
                }
                if channels != 1 {
                    return Err(PipelineError::UnsupportedFormat(format!("wav with {channels} channels")));
                }
                if bits != 16 {
                    return Err(PipelineError::UnsupportedFormat(format!("wav with {bits}-bit samples")));
                }
                return Ok(Sample::new(pcm16le(&b[body..end], body)?, rate, SourceFormat::Wav));
            }
            _ => {}
        }
        // Chunks are word aligned.
        at = end + (size & 1);
    }
    Err(PipelineError::malformed(b.len(), "no data chunk"))
}

fn load_text<T: Scalar>(b: &[u8]) -> Result<Sample<T>, PipelineError> {
    let text = std::str::from_utf8(b).map_err(|e| PipelineError::malformed(e.valid_up_to(), "invalid utf-8"))?;
    let mut out = Vec::new();
    let base = text.as_ptr() as usize;
    for tok in text.split_ascii_whitespace() {
        let offset = tok.as_ptr() as usize - base;
        let v: f64 = tok
            .parse()
            .map_err(|_| PipelineError::malformed(offset, format!("not a number: {tok:?}")))?;
        if !v.is_finite() {
            return Err(PipelineError::malformed(offset, "non-finite value"));
        }
        out.push(T::lit(v));
    }
    if out.is_empty() {
        return Err(PipelineError::malformed(0, "no samples"));
    }
    Ok(Sample::new(out, DEFAULT_SAMPLE_RATE, SourceFormat::Text))
}

/// Renders samples in the text format accepted by [`load_sample`].
pub fn samples_to_text<T: Scalar>(samples: &[T]) -> String {
    let mut s = String::with_capacity(samples.len() * 20);
    for (i, v) in samples.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&v.to_f64_lossless().to_string());
    }
    s
}

/// Builds a mono 16-bit PCM WAV file.
pub fn wav_bytes(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut b = Vec::with_capacity(44 + data_len as usize);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVE");
    b.extend_from_slice(b"fmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&sample_rate.to_le_bytes());
    b.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    b
}
