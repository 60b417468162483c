//! `pts_v1` correspondence lists: `xa,ya,xb,yb[,weight]` per line (weight defaults to 1).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::homography_fit::Correspondence;
use crate::io::text::{arity, finite, records, utf8};

pub const POINTS_HEADER: &str = "pts_v1";

pub fn read_correspondences(text: &str) -> Result<Vec<Correspondence>> {
    let (hline, header, rest) = records(text)?;
    if header != [POINTS_HEADER] {
        return Err(Error::format(hline, format!("expected header `{POINTS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (line, f) in rest {
        arity(line, &f, &[4, 5])?;
        let weight = match f.get(4) {
            Some(w) => finite(line, "weight", w)?,
            None => 1.0,
        };
        if weight < 0.0 {
            return Err(Error::format(line, "weight must be >= 0"));
        }
        out.push(Correspondence::new(
            [finite(line, "xa", f[0])?, finite(line, "ya", f[1])?],
            [finite(line, "xb", f[2])?, finite(line, "yb", f[3])?],
            weight,
        ));
    }
    Ok(out)
}

pub fn read_correspondences_bytes(bytes: &[u8]) -> Result<Vec<Correspondence>> {
    read_correspondences(utf8(bytes)?)
}

/// Weights equal to 1 are omitted.
pub fn write_correspondences(pairs: &[Correspondence]) -> String {
    let mut out = format!("{POINTS_HEADER}\n");
    for c in pairs {
        let _ = write!(out, "{:?},{:?},{:?},{:?}", c.p[0], c.p[1], c.q[0], c.q[1]);
        if c.weight != 1.0 {
            let _ = write!(out, ",{:?}", c.weight);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_pairs() {
        let c = read_correspondences("pts_v1\n1,2,1,2\n3.5,4,3.5,4,0.25\n").unwrap();
        assert!(c.iter().all(|c| c.p == c.q));
        assert_eq!(c[0].weight, 1.0);
        assert_eq!(c[1].weight, 0.25);
    }

    #[test]
    fn malformed_line_is_reported() {
        assert!(matches!(
            read_correspondences("pts_v1\n1,2,1,2\n1,2,x,2\n"),
            Err(Error::Format { line: 3, .. })
        ));
        assert!(matches!(
            read_correspondences("pts_v1\n1,2,1,2,-1\n"),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pairs: Vec<_> = (0..100)
            .map(|i| {
                Correspondence::new(
                    [rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)],
                    [rng.random_range(0.0..800.0), rng.random_range(0.0..600.0)],
                    if i % 3 == 0 { 1.0 } else { rng.random() },
                )
            })
            .collect();
        let text = write_correspondences(&pairs);
        assert_eq!(read_correspondences(&text).unwrap(), pairs);
    }
}
