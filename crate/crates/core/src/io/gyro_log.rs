//! `gyro_v1` text logs.
//!
//! ```text
//! gyro_v1,rad_s[,clock_id]
//! timestamp_ns,wx,wy,wz
//! ```
//! Blank lines and `#` comments are ignored. Timestamps must strictly increase.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::io::text::{arity, field, finite, records, utf8};
use crate::math::GyroSample;

pub const GYRO_HEADER: &str = "gyro_v1";
pub const GYRO_UNITS: &str = "rad_s";

#[derive(Debug, Clone, PartialEq)]
pub struct GyroLog {
    pub samples: Vec<GyroSample>,
    pub clock: Option<String>,
}

impl GyroLog {
    pub fn new(samples: Vec<GyroSample>) -> Self {
        GyroLog { samples, clock: None }
    }
}

pub fn parse_gyro_log(text: &str) -> Result<GyroLog> {
    let (hline, header, rest) = records(text)?;
    if header.first() != Some(&GYRO_HEADER) {
        return Err(Error::format(hline, format!("expected header `{GYRO_HEADER},{GYRO_UNITS}`")));
    }
    match header.get(1) {
        Some(&GYRO_UNITS) => {}
        Some(u) => return Err(Error::format(hline, format!("unsupported units {u:?}, expected {GYRO_UNITS}"))),
        None => return Err(Error::format(hline, "header is missing the units declaration")),
    }
    if header.len() > 3 {
        return Err(Error::format(hline, "header has extra fields"));
    }
    let clock = header.get(2).map(|c| c.to_string());
    let mut samples: Vec<GyroSample> = Vec::new();
    for (line, f) in rest {
        arity(line, &f, &[4])?;
        let t: i64 = field(line, "timestamp_ns", f[0])?;
        let omega = [
            finite(line, "wx", f[1])?,
            finite(line, "wy", f[2])?,
            finite(line, "wz", f[3])?,
        ];
        if let Some(prev) = samples.last() {
            if t <= prev.timestamp_ns {
                return Err(Error::Ordering { line, timestamp_ns: t });
            }
        }
        samples.push(GyroSample::new(t, omega));
    }
    Ok(GyroLog { samples, clock })
}

pub fn parse_gyro_log_bytes(bytes: &[u8]) -> Result<GyroLog> {
    parse_gyro_log(utf8(bytes)?)
}

/// Shortest round-trip float formatting, so parsing the output is bit-exact.
pub fn write_gyro_log(log: &GyroLog) -> String {
    let mut out = String::with_capacity(32 * (log.samples.len() + 1));
    out.push_str(GYRO_HEADER);
    out.push(',');
    out.push_str(GYRO_UNITS);
    if let Some(c) = &log.clock {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for s in &log.samples {
        let [x, y, z] = s.omega;
        let _ = writeln!(out, "{},{x:?},{y:?},{z:?}", s.timestamp_ns);
    }
    out
}
