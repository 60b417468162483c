//! `frames_v1` index: `id,timestamp_ns,path` per frame, timestamps strictly increasing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io::text::{field, records, utf8};

pub const FRAMES_HEADER: &str = "frames_v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: u64,
    pub timestamp_ns: i64,
    /// Image path, relative to the index file's directory unless absolute.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrameIndex {
    pub frames: Vec<FrameEntry>,
}

impl FrameIndex {
    pub fn find(&self, id: u64) -> Result<&FrameEntry> {
        self.frames
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::Argument(format!("frame id {id} is not in the index")))
    }

    /// Consecutive pairs `(i, i + 1)` by position.
    pub fn consecutive_pairs(&self) -> Vec<(u64, u64)> {
        self.frames.windows(2).map(|w| (w[0].id, w[1].id)).collect()
    }

    /// Gyro-clock interval `[t_a, t_b]` for a pair, after adding `time_offset_ns`
    /// to both frame timestamps.
    pub fn pair_interval(&self, a: u64, b: u64, time_offset_ns: i64) -> Result<(i64, i64)> {
        let (fa, fb) = (self.find(a)?, self.find(b)?);
        ensure(fa.timestamp_ns < fb.timestamp_ns, || {
            format!("frame {a} is not earlier than frame {b}")
        })?;
        let shift = |t: i64| {
            t.checked_add(time_offset_ns)
                .ok_or_else(|| Error::Argument("time offset overflows the timestamp range".into()))
        };
        Ok((shift(fa.timestamp_ns)?, shift(fb.timestamp_ns)?))
    }
}

pub fn parse_frame_index(text: &str) -> Result<FrameIndex> {
    let (hline, header, _) = records(text)?;
    if header != [FRAMES_HEADER] {
        return Err(Error::format(hline, format!("expected header `{FRAMES_HEADER}`")));
    }
    let mut frames: Vec<FrameEntry> = Vec::new();
    // Paths may contain commas, so split the raw line at most twice.
    for (i, raw) in text.lines().enumerate().skip(hline) {
        let line = i + 1;
        let content = match raw.find('#') {
            Some(c) => raw[..c].trim(),
            None => raw.trim(),
        };
        if content.is_empty() {
            continue;
        }
        let parts: Vec<&str> = content.splitn(3, ',').map(str::trim).collect();
        if parts.len() != 3 || parts[2].is_empty() {
            return Err(Error::format(line, "expected `id,timestamp_ns,path`"));
        }
        let id: u64 = field(line, "id", parts[0])?;
        let t: i64 = field(line, "timestamp_ns", parts[1])?;
        if let Some(prev) = frames.last() {
            if t <= prev.timestamp_ns {
                return Err(Error::Ordering { line, timestamp_ns: t });
            }
        }
        if frames.iter().any(|f| f.id == id) {
            return Err(Error::format(line, format!("duplicate frame id {id}")));
        }
        frames.push(FrameEntry {
            id,
            timestamp_ns: t,
            path: parts[2].to_string(),
        });
    }
    Ok(FrameIndex { frames })
}

pub fn parse_frame_index_bytes(bytes: &[u8]) -> Result<FrameIndex> {
    parse_frame_index(utf8(bytes)?)
}

pub fn write_frame_index(index: &FrameIndex) -> String {
    let mut out = format!("{FRAMES_HEADER}\n");
    for f in &index.frames {
        let _ = writeln!(out, "{},{},{}", f.id, f.timestamp_ns, f.path);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "frames_v1\n0,100,img/0.png\n1,33433433,img/a,b.png # comma in path\n";
        let idx = parse_frame_index(text).unwrap();
        assert_eq!(idx.frames[1].path, "img/a,b.png");
        assert_eq!(idx.consecutive_pairs(), vec![(0, 1)]);
        assert_eq!(idx.pair_interval(0, 1, -100).unwrap(), (0, 33433333));
        assert_eq!(parse_frame_index(&write_frame_index(&idx)).unwrap(), idx);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_frame_index("frames_v2\n").is_err());
        assert!(matches!(
            parse_frame_index("frames_v1\n0,5,a\n1,5,b\n"),
            Err(Error::Ordering { line: 3, .. })
        ));
        assert!(matches!(parse_frame_index("frames_v1\n0,5\n"), Err(Error::Format { line: 2, .. })));
        assert!(parse_frame_index("frames_v1\n0,5,a\n0,6,b\n").is_err());
    }
}
