//! Flow and homography evaluation: AEPE, PCK, PME and error heatmaps.
//!
//! Means are reduced with a fixed pairwise tree, so results do not depend on
//! thread count or platform summation order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::{Grid, ValidMask};
use crate::gyro_field::{FlowField, Homography, HomographyArray};
use crate::homography_fit::Correspondence;

const PAIRWISE_LEAF: usize = 8;

/// Tree reduction with sequential leaves of at most 8 values.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        return values.iter().fold(0.0, |acc, v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn check_pair(est: &FlowField, gt: &FlowField) -> Result<()> {
    ensure(est.same_dims(gt), || {
        format!(
            "estimate is {}x{} but ground truth is {}x{}",
            est.width, est.height, gt.width, gt.height
        )
    })
}

/// Per-pixel `||est - gt||`.
pub fn error_heatmap(est: &FlowField, gt: &FlowField) -> Result<Grid> {
    check_pair(est, gt)?;
    let data = (0..est.width * est.height)
        .into_par_iter()
        .map(|i| (est.u.data[i] - gt.u.data[i]).hypot(est.v.data[i] - gt.v.data[i]))
        .collect();
    Ok(Grid {
        width: est.width,
        height: est.height,
        data,
    })
}

fn valid_errors(est: &FlowField, gt: &FlowField, valid: &ValidMask) -> Result<Vec<f64>> {
    check_pair(est, gt)?;
    ensure(valid.width == est.width && valid.height == est.height, || {
        "validity mask differs in size from the flow".into()
    })?;
    let errors: Vec<f64> = error_heatmap(est, gt)?
        .data
        .into_iter()
        .zip(&valid.data)
        .filter_map(|(e, ok)| ok.then_some(e))
        .collect();
    ensure(!errors.is_empty(), || "validity mask selects no pixels".into())?;
    Ok(errors)
}

/// Mean endpoint error over valid pixels.
pub fn aepe(est: &FlowField, gt: &FlowField, valid: &ValidMask) -> Result<f64> {
    let errors = valid_errors(est, gt, valid)?;
    Ok(pairwise_sum(&errors) / errors.len() as f64)
}

/// Percentage of valid pixels with endpoint error strictly below `tau`.
pub fn pck(est: &FlowField, gt: &FlowField, valid: &ValidMask, tau: f64) -> Result<f64> {
    ensure(tau > 0.0, || format!("PCK threshold must be positive, got {tau}"))?;
    let errors = valid_errors(est, gt, valid)?;
    Ok(pck_of(&errors, tau))
}

fn pck_of(errors: &[f64], tau: f64) -> f64 {
    let hits = errors.iter().filter(|e| **e < tau).count();
    100.0 * hits as f64 / errors.len() as f64
}

/// Something that maps frame-a points to frame b.
#[derive(Debug, Clone)]
pub enum HomographyModel {
    Single(Homography),
    /// Each point uses the patch homography of its row.
    Array(HomographyArray),
}

impl HomographyModel {
    pub fn project(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        match self {
            HomographyModel::Single(h) => h.project(x, y),
            HomographyModel::Array(arr) => arr.homographies[arr.patch_of_row(y)].project(x, y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmeOutcome {
    /// Mean reprojection distance over the evaluated pairs.
    pub pme: f64,
    /// Percentage of evaluated pairs below 1 px.
    pub pck_1px: f64,
    pub evaluated: usize,
    /// Pairs excluded because the projective divide degenerated.
    pub degenerate: usize,
}

/// Point matching error: mean `||warp(H, p) - q||` over ground-truth pairs.
pub fn pme(model: &HomographyModel, pairs: &[Correspondence]) -> Result<PmeOutcome> {
    ensure(!pairs.is_empty(), || "PME needs at least one ground-truth pair".into())?;
    let mut errors = Vec::with_capacity(pairs.len());
    let mut degenerate = 0;
    for c in pairs {
        match model.project(c.p[0], c.p[1]) {
            Ok((x, y)) => errors.push((x - c.q[0]).hypot(y - c.q[1])),
            Err(Error::DegenerateProjection { .. }) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if degenerate > 0 {
        log::warn!("{degenerate} ground-truth point(s) excluded: degenerate projection");
    }
    ensure(!errors.is_empty(), || "every ground-truth pair projected degenerately".into())?;
    Ok(PmeOutcome {
        pme: pairwise_sum(&errors) / errors.len() as f64,
        pck_1px: pck_of(&errors, 1.0),
        evaluated: errors.len(),
        degenerate,
    })
}

/// Tunables recorded alongside every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFingerprint {
    pub beta: [f64; 5],
    pub gamma: [f64; 2],
    pub lambda: f64,
    pub patch_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aepe: Option<f64>,
    /// Keyed by threshold in px.
    pub pck: BTreeMap<String, f64>,
    pub pme: Option<f64>,
    pub pme_pck_1px: Option<f64>,
    /// Evaluated pixels (flow) or points (PME).
    pub count: usize,
    pub config: Option<ConfigFingerprint>,
}

pub const DEFAULT_PCK_THRESHOLDS: [f64; 2] = [1.0, 5.0];

fn tau_key(tau: f64) -> String {
    format!("{tau}")
}

impl EvalReport {
    pub fn for_flow(est: &FlowField, gt: &FlowField, valid: &ValidMask, taus: &[f64]) -> Result<Self> {
        let errors = valid_errors(est, gt, valid)?;
        let mut pck = BTreeMap::new();
        for &tau in taus {
            ensure(tau > 0.0, || format!("PCK threshold must be positive, got {tau}"))?;
            pck.insert(tau_key(tau), pck_of(&errors, tau));
        }
        Ok(EvalReport {
            aepe: Some(pairwise_sum(&errors) / errors.len() as f64),
            pck,
            pme: None,
            pme_pck_1px: None,
            count: errors.len(),
            config: None,
        })
    }

    pub fn for_homography(model: &HomographyModel, pairs: &[Correspondence]) -> Result<Self> {
        let outcome = pme(model, pairs)?;
        Ok(EvalReport {
            aepe: None,
            pck: BTreeMap::new(),
            pme: Some(outcome.pme),
            pme_pck_1px: Some(outcome.pck_1px),
            count: outcome.evaluated,
            config: None,
        })
    }

    /// Single `key=value` line, space separated, fixed key order.
    ///
    /// Keys: `aepe`, `pck_<tau>` (percent), `pme`, `pme_pck_1`, `count`, and when
    /// present `beta`, `gamma`, `lambda`, `patch_count`. Absent metrics are omitted.
    pub fn to_kv_line(&self) -> String {
        let mut parts = Vec::new();
        if let Some(a) = self.aepe {
            parts.push(format!("aepe={a}"));
        }
        let mut taus: Vec<(&String, &f64)> = self.pck.iter().collect();
        taus.sort_by(|a, b| {
            let fa: f64 = a.0.parse().unwrap_or(f64::MAX);
            let fb: f64 = b.0.parse().unwrap_or(f64::MAX);
            fa.total_cmp(&fb)
        });
        for (tau, v) in taus {
            parts.push(format!("pck_{tau}={v}"));
        }
        if let Some(p) = self.pme {
            parts.push(format!("pme={p}"));
        }
        if let Some(p) = self.pme_pck_1px {
            parts.push(format!("pme_pck_1={p}"));
        }
        parts.push(format!("count={}", self.count));
        if let Some(c) = &self.config {
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
            parts.push(format!("beta={}", join(&c.beta)));
            parts.push(format!("gamma={}", join(&c.gamma)));
            parts.push(format!("lambda={}", c.lambda));
            parts.push(format!("patch_count={}", c.patch_count));
        }
        parts.join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut impl Rng, w: usize, h: usize, scale: f64) -> FlowField {
        FlowField::from_fn(w, h, |_, _| {
            (rng.random_range(-scale..scale), rng.random_range(-scale..scale))
        })
    }

    #[test]
    fn pairwise_sum_small_and_large() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0]), 6.0);
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499500.0);
    }

    #[test]
    fn aepe_and_pck_trivial_cases() {
        let gt = FlowField::from_fn(5, 4, |x, y| (x as f64, -(y as f64)));
        let all = ValidMask::all(5, 4);
        assert_eq!(aepe(&gt, &gt, &all).unwrap(), 0.0);
        assert_eq!(pck(&gt, &gt, &all, 0.5).unwrap(), 100.0);
        let shifted = FlowField::from_fn(5, 4, |x, y| (x as f64 + 1.0, -(y as f64)));
        assert!((aepe(&shifted, &gt, &all).unwrap() - 1.0).abs() < 1e-15);
        let off3 = FlowField::from_fn(5, 4, |x, y| (x as f64, 3.0 - y as f64));
        assert_eq!(pck(&off3, &gt, &all, 1.0).unwrap(), 0.0);
        assert_eq!(pck(&off3, &gt, &all, 5.0).unwrap(), 100.0);
        // Strictly smaller than tau.
        assert_eq!(pck(&off3, &gt, &all, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_and_mismatch_are_errors() {
        let f = FlowField::zeros(3, 3);
        let none = ValidMask {
            width: 3,
            height: 3,
            data: vec![false; 9],
        };
        assert!(aepe(&f, &f, &none).is_err());
        assert!(aepe(&f, &FlowField::zeros(3, 2), &ValidMask::all(3, 3)).is_err());
        assert!(pck(&f, &f, &ValidMask::all(3, 3), 0.0).is_err());
    }

    #[test]
    fn heatmap_single_pixel() {
        let gt = FlowField::zeros(4, 3);
        let mut est = gt.clone();
        est.u.set(2, 1, 3.0);
        est.v.set(2, 1, 4.0);
        let heat = error_heatmap(&est, &gt).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let expected = if (x, y) == (2, 1) { 5.0 } else { 0.0 };
                assert_eq!(heat.get(x, y), expected);
            }
        }
        assert!(error_heatmap(&est, &gt).unwrap().data.len() == 12);
        assert_eq!(error_heatmap(&gt, &gt).unwrap().data, vec![0.0; 12]);
    }

    #[test]
    fn metrics_match_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
            let est = random_field(&mut rng, w, h, 4.0);
            let gt = random_field(&mut rng, w, h, 4.0);
            let mut valid = ValidMask::all(w, h);
            valid.data.iter_mut().for_each(|v| *v = rng.random_bool(0.8));
            valid.data[0] = true;
            let (mut sum, mut n, mut below) = (0.0, 0usize, 0usize);
            for y in 0..h {
                for x in 0..w {
                    if !valid.get(x, y) {
                        continue;
                    }
                    let du = est.u.get(x, y) - gt.u.get(x, y);
                    let dv = est.v.get(x, y) - gt.v.get(x, y);
                    let e = (du * du + dv * dv).sqrt();
                    sum += e;
                    n += 1;
                    if e < 2.0 {
                        below += 1;
                    }
                }
            }
            assert!((aepe(&est, &gt, &valid).unwrap() - sum / n as f64).abs() < 1e-9);
            assert_eq!(pck(&est, &gt, &valid, 2.0).unwrap(), 100.0 * below as f64 / n as f64);
        }
    }

    #[test]
    fn pme_trivial_cases() {
        let pairs: Vec<Correspondence> = (0..6)
            .map(|i| Correspondence::new([i as f64 * 7.0, 3.0 + i as f64], [i as f64 * 7.0, 5.0 + i as f64], 1.0))
            .collect();
        let id = HomographyModel::Single(Homography::identity());
        assert!((pme(&id, &pairs).unwrap().pme - 2.0).abs() < 1e-15);
        let exact = HomographyModel::Single(Homography::translation(0.0, 2.0));
        assert!(pme(&exact, &pairs).unwrap().pme < 1e-9);
        assert!(pme(&id, &[]).is_err());
    }

    #[test]
    fn kv_line_layout() {
        let gt = FlowField::zeros(2, 2);
        let est = FlowField::constant(2, 2, 3.0, 0.0);
        let mut r = EvalReport::for_flow(&est, &gt, &ValidMask::all(2, 2), &[5.0, 1.0]).unwrap();
        r.config = Some(ConfigFingerprint {
            beta: [1.0, 0.9, 0.7, 0.5, 0.3],
            gamma: [-0.2, 0.2],
            lambda: 10.0,
            patch_count: 14,
        });
        assert_eq!(
            r.to_kv_line(),
            "aepe=3 pck_1=0 pck_5=100 count=4 beta=1,0.9,0.7,0.5,0.3 gamma=-0.2,0.2 lambda=10 patch_count=14"
        );
    }
}
