//! Frame-level posterior streams.
//!
//! Two streams drive the cascade: the transducer token posteriors used for
//! detection and the phone-predictor posteriors used for alignment and
//! verification. Both are stored in linear probability; callers that need log
//! probabilities go through [`PosteriorStream::log_prob`], the single
//! conversion point.
//!
//! Binary layout (little-endian): magic `KWSP`, `u32` version (1), `u32`
//! frame count, `u32` unit count, `f32` frame duration in seconds, then
//! `frames * units` `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::symbols::{PhoneSet, UnitId};

pub const MAGIC: &[u8; 4] = b"KWSP";
pub const FORMAT_VERSION: u32 = 1;
/// Encoder frame length: 10 ms feature shift downsampled four times.
pub const DEFAULT_FRAME_DURATION: f32 = 0.040;
/// Replacement for `ln(0)` so tropical arithmetic stays finite.
pub const LOG_FLOOR: f64 = -1e9;
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic: not a posterior file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("stream has zero units")]
    NoUnits,
    #[error("frame duration must be positive, got {0}")]
    BadFrameDuration(f32),
    #[error("non-finite value at frame {frame}, unit {unit}")]
    NonFinite { frame: usize, unit: usize },
    #[error("value {value} out of [0, 1] at frame {frame}, unit {unit}")]
    OutOfRange {
        frame: usize,
        unit: usize,
        value: f32,
    },
    #[error("row {frame} sums to {sum}")]
    RowSum { frame: usize, sum: f64 },
    #[error("stream has {found} units but the phone set has {expected}")]
    UnitMismatch { expected: usize, found: usize },
    #[error("frame {frame} out of range (stream has {len} frames)")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A validated frames-by-units probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStream {
    num_frames: usize,
    num_units: usize,
    values: Vec<f32>,
    frame_duration: f32,
}

impl PosteriorStream {
    pub fn new(
        num_units: usize,
        values: Vec<f32>,
        frame_duration: f32,
    ) -> Result<Self, StreamError> {
        if num_units == 0 {
            return Err(StreamError::NoUnits);
        }
        if !(frame_duration > 0.0 && frame_duration.is_finite()) {
            return Err(StreamError::BadFrameDuration(frame_duration));
        }
        if !values.len().is_multiple_of(num_units) {
            return Err(StreamError::TruncatedPayload {
                expected: values.len().div_ceil(num_units) * num_units,
                found: values.len(),
            });
        }
        let stream = Self {
            num_frames: values.len() / num_units,
            num_units,
            values,
            frame_duration,
        };
        stream.validate()?;
        Ok(stream)
    }

    fn validate(&self) -> Result<(), StreamError> {
        for frame in 0..self.num_frames {
            let mut sum = 0.0f64;
            for (unit, &v) in self.row(frame).iter().enumerate() {
                if !v.is_finite() {
                    return Err(StreamError::NonFinite { frame, unit });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(StreamError::OutOfRange {
                        frame,
                        unit,
                        value: v,
                    });
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(StreamError::RowSum { frame, sum });
            }
        }
        Ok(())
    }

    /// Checks the stream against the unit inventory it will be decoded with.
    pub fn check_units(&self, phones: &PhoneSet) -> Result<(), StreamError> {
        if self.num_units != phones.len() {
            return Err(StreamError::UnitMismatch {
                expected: phones.len(),
                found: self.num_units,
            });
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn frame_duration(&self) -> f32 {
        self.frame_duration
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        let start = frame * self.num_units;
        &self.values[start..start + self.num_units]
    }

    pub fn prob(&self, frame: usize, unit: UnitId) -> f32 {
        self.values[frame * self.num_units + unit as usize]
    }

    /// Natural-log posterior with `ln(0)` clamped to [`LOG_FLOOR`].
    pub fn log_prob(&self, frame: usize, unit: UnitId) -> f64 {
        clamped_ln(self.prob(frame, unit) as f64)
    }

    /// Total duration in seconds.
    pub fn duration_secs(&self) -> f64 {
        self.num_frames as f64 * self.frame_duration as f64
    }

    pub fn frame_to_seconds(&self, frame: usize) -> Result<f64, StreamError> {
        if frame >= self.num_frames {
            return Err(StreamError::FrameOutOfRange {
                frame,
                len: self.num_frames,
            });
        }
        Ok(frame as f64 * self.frame_duration as f64)
    }

    pub fn read_from(mut reader: impl Read) -> Result<Self, StreamError> {
        let mut header = [0u8; 20];
        let mut filled = 0;
        while filled < header.len() {
            let n = reader.read(&mut header[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled >= 4 && &header[..4] != MAGIC {
            return Err(StreamError::BadMagic);
        }
        if filled < header.len() {
            return Err(StreamError::TruncatedHeader);
        }
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(StreamError::UnsupportedVersion(version));
        }
        let num_frames = u32_at(8) as usize;
        let num_units = u32_at(12) as usize;
        let frame_duration = f32::from_le_bytes(header[16..20].try_into().unwrap());

        let expected = num_frames * num_units;
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let found = payload.len() / 4;
        if found < expected {
            return Err(StreamError::TruncatedPayload { expected, found });
        }
        if payload.len() != expected * 4 {
            return Err(StreamError::TrailingBytes);
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if num_units == 0 {
            return Err(StreamError::NoUnits);
        }
        let stream = Self {
            num_frames,
            num_units,
            values,
            frame_duration,
        };
        if !(frame_duration > 0.0 && frame_duration.is_finite()) {
            return Err(StreamError::BadFrameDuration(frame_duration));
        }
        stream.validate()?;
        Ok(stream)
    }

    pub fn write_to(&self, mut writer: impl Write) -> Result<(), StreamError> {
        let mut buf = Vec::with_capacity(20 + self.values.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.num_frames as u32).to_le_bytes());
        buf.extend_from_slice(&(self.num_units as u32).to_le_bytes());
        buf.extend_from_slice(&self.frame_duration.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StreamError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        if path.extension().is_some_and(|e| e == "csv") {
            let text = std::io::read_to_string(reader)?;
            return Self::from_csv(&text, DEFAULT_FRAME_DURATION);
        }
        Self::read_from(reader)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StreamError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Imports a fixture CSV: a header row of unit names, then one frame per row.
    pub fn from_csv(text: &str, frame_duration: f32) -> Result<Self, StreamError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(StreamError::Csv {
            line: 1,
            message: "missing header row".into(),
        })?;
        let num_units = header.split(',').count();
        let mut values = Vec::new();
        for (n, line) in lines {
            let before = values.len();
            for cell in line.split(',') {
                let v: f32 = cell.trim().parse().map_err(|_| StreamError::Csv {
                    line: n + 1,
                    message: format!("invalid number `{}`", cell.trim()),
                })?;
                values.push(v);
            }
            if values.len() - before != num_units {
                return Err(StreamError::Csv {
                    line: n + 1,
                    message: format!(
                        "expected {num_units} columns, found {}",
                        values.len() - before
                    ),
                });
            }
        }
        Self::new(num_units, values, frame_duration)
    }

    /// Header names of a fixture CSV, for matching against a [`PhoneSet`].
    pub fn csv_header(text: &str) -> Vec<String> {
        text.lines()
            .find(|l| !l.trim().is_empty())
            .map(|l| l.split(',').map(|c| c.trim().to_string()).collect())
            .unwrap_or_default()
    }
}

pub fn clamped_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

/// Identifies a frame span of a stream; stands in for a truncated slice of
/// encoder output handed to the verifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegmentRef {
    pub stream: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl SegmentRef {
    pub fn new(
        stream: impl Into<String>,
        start_frame: usize,
        end_frame: usize,
        num_frames: usize,
    ) -> Result<Self, StreamError> {
        if end_frame >= num_frames {
            return Err(StreamError::FrameOutOfRange {
                frame: end_frame,
                len: num_frames,
            });
        }
        if start_frame > end_frame {
            return Err(StreamError::FrameOutOfRange {
                frame: start_frame,
                len: end_frame + 1,
            });
        }
        Ok(Self {
            stream: stream.into(),
            start_frame,
            end_frame,
        })
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Key used by scripted scorers: `stream@start-end`.
    pub fn key(&self) -> String {
        format!("{}@{}-{}", self.stream, self.start_frame, self.end_frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(frames: usize, units: usize) -> PosteriorStream {
        PosteriorStream::new(
            units,
            vec![1.0 / units as f32; frames * units],
            DEFAULT_FRAME_DURATION,
        )
        .unwrap()
    }

    #[test]
    fn uniform_round_trip() {
        let s = uniform(100, 4);
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = PosteriorStream::read_from(&buf[..]).unwrap();
        assert_eq!(back.num_frames(), 100);
        assert!(back.values().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn truncated_payload() {
        let s = uniform(10, 4);
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 16);
        let err = PosteriorStream::read_from(&buf[..]).unwrap_err();
        assert!(err.to_string().starts_with("truncated payload"), "{err}");
    }

    #[test]
    fn bad_row_sum_names_the_row() {
        let mut values = vec![0.25f32; 10 * 4];
        values[7 * 4] = 0.15;
        let err = PosteriorStream::new(4, values, 0.04).unwrap_err();
        assert!(err.to_string().starts_with("row 7 sums to 0.9"), "{err}");
    }

    #[test]
    fn non_finite_rejected() {
        let mut values = vec![0.5f32; 4];
        values[1] = f32::NAN;
        assert!(matches!(
            PosteriorStream::new(2, values, 0.04),
            Err(StreamError::NonFinite { frame: 0, unit: 1 })
        ));
    }

    #[test]
    fn header_checks() {
        let mut buf = Vec::new();
        uniform(2, 2).write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            PosteriorStream::read_from(&bad[..]),
            Err(StreamError::BadMagic)
        ));
        assert!(matches!(
            PosteriorStream::read_from(&buf[..10]),
            Err(StreamError::TruncatedHeader)
        ));
        buf.push(0);
        assert!(matches!(
            PosteriorStream::read_from(&buf[..]),
            Err(StreamError::TrailingBytes)
        ));
    }

    #[test]
    fn seconds() {
        let s = uniform(200, 2);
        assert_eq!(s.frame_to_seconds(0).unwrap(), 0.0);
        assert!((s.frame_to_seconds(25).unwrap() - 1.0).abs() < 1e-6);
        let fine = PosteriorStream::new(2, vec![0.5; 400], 0.010).unwrap();
        assert!((fine.frame_to_seconds(100).unwrap() - 1.0).abs() < 1e-6);
        assert!(s.frame_to_seconds(200).is_err());
    }

    #[test]
    fn log_floor() {
        let s = PosteriorStream::new(2, vec![1.0, 0.0], 0.04).unwrap();
        assert_eq!(s.log_prob(0, 0), 0.0);
        assert_eq!(s.log_prob(0, 1), LOG_FLOOR);
    }

    #[test]
    fn csv_import() {
        let text = "<blk>,a,b\n0.5,0.25,0.25\n0,1,0\n";
        let s = PosteriorStream::from_csv(text, 0.04).unwrap();
        assert_eq!(s.num_frames(), 2);
        assert_eq!(s.prob(1, 1), 1.0);
        assert_eq!(PosteriorStream::csv_header(text), vec!["<blk>", "a", "b"]);
        assert!(PosteriorStream::from_csv("a,b\n1\n", 0.04).is_err());
    }

    #[test]
    fn segment_bounds() {
        assert!(SegmentRef::new("s", 2, 5, 6).is_ok());
        assert!(SegmentRef::new("s", 2, 6, 6).is_err());
        assert!(SegmentRef::new("s", 3, 2, 6).is_err());
        assert_eq!(SegmentRef::new("s", 2, 5, 6).unwrap().len(), 4);
    }

    fn arb_stream() -> impl Strategy<Value = PosteriorStream> {
        (1usize..6, 1usize..20, 0.001f32..0.2).prop_flat_map(|(units, frames, dur)| {
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, units), frames).prop_map(
                move |rows| {
                    let mut values = Vec::new();
                    for row in rows {
                        let total: f64 = row.iter().sum();
                        values.extend(row.iter().map(|v| (v / total) as f32));
                    }
                    PosteriorStream::new(units, values, dur).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_exact(s in arb_stream()) {
            let mut buf = Vec::new();
            s.write_to(&mut buf).unwrap();
            let back = PosteriorStream::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            s.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.frame_duration().to_bits(), s.frame_duration().to_bits());
        }

        #[test]
        fn seconds_strictly_increasing(s in arb_stream()) {
            for f in 1..s.num_frames() {
                prop_assert!(s.frame_to_seconds(f).unwrap() > s.frame_to_seconds(f - 1).unwrap());
            }
        }
    }
}
