//! Line-oriented versioned CSV records shared by the text formats.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Non-blank, non-comment lines after the header, with 1-based line numbers.
pub(crate) struct Records<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

/// Splits `text` into its header fields and the remaining records.
pub(crate) fn records(text: &str) -> Result<(usize, Vec<&str>, Records<'_>)> {
    let mut lines = text.lines().enumerate();
    for (i, line) in lines.by_ref() {
        let content = strip(line);
        if content.is_empty() {
            continue;
        }
        let fields = content.split(',').map(str::trim).collect();
        return Ok((i + 1, fields, Records { lines }));
    }
    Err(Error::format(1, "missing header line"))
}

fn strip(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

impl<'a> Iterator for Records<'a> {
    type Item = (usize, Vec<&'a str>);

    fn next(&mut self) -> Option<Self::Item> {
        for (i, line) in self.lines.by_ref() {
            let content = strip(line);
            if !content.is_empty() {
                return Some((i + 1, content.split(',').map(str::trim).collect()));
            }
        }
        None
    }
}

pub(crate) fn utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1;
        Error::format(line, "input is not valid UTF-8")
    })
}

pub(crate) fn field<T: FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::format(line, format!("cannot parse {name} from {raw:?}")))
}

pub(crate) fn finite(line: usize, name: &str, raw: &str) -> Result<f64> {
    let v: f64 = field(line, name, raw)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::format(line, format!("{name} is not finite")))
    }
}

pub(crate) fn arity(line: usize, fields: &[&str], allowed: &[usize]) -> Result<()> {
    if allowed.contains(&fields.len()) {
        Ok(())
    } else {
        Err(Error::format(
            line,
            format!("expected {} fields, found {}", allowed.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" or "), fields.len()),
        ))
    }
}
