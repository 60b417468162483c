//! TOML project configuration.
//!
//! Only `[intrinsics]` is required; everything else takes documented defaults,
//! which [`write_config`] echoes back. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{BetaLadder, FusionParams, PyramidLevels};
use crate::gyro_field::RollingShutterModel;
use crate::homography_fit::DEFAULT_SMOOTHING;
use crate::math::{AxisRemap, CameraIntrinsics};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "GYROFUSE_CONFIG";

pub const DEFAULT_GAMMA: [f64; 2] = [-0.2, 0.2];
pub const DEFAULT_FIT_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Added to frame timestamps before they are compared with gyro timestamps.
    #[serde(default)]
    pub time_offset_ns: i64,
    #[serde(default)]
    pub axis_remap: AxisRemap,
    #[serde(default)]
    pub beta: BetaLadder,
    /// `[gamma_minus, gamma_plus]` range of the map refinement.
    #[serde(default = "default_gamma")]
    pub gamma: [f64; 2],
    /// Patch-axis smoothing strength of the homography array fit.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub pyramid_levels: PyramidLevels,
    /// Pixel stride when sampling fused flow for homography fitting.
    #[serde(default = "default_fit_stride")]
    pub fit_stride: usize,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub rolling_shutter: RollingShutterModel,
    #[serde(default)]
    pub fusion: FusionParams,
}

fn default_gamma() -> [f64; 2] {
    DEFAULT_GAMMA
}

fn default_lambda() -> f64 {
    DEFAULT_SMOOTHING
}

fn default_fit_stride() -> usize {
    DEFAULT_FIT_STRIDE
}

impl ProjectConfig {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        ProjectConfig {
            time_offset_ns: 0,
            axis_remap: AxisRemap::identity(),
            beta: BetaLadder::default(),
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_SMOOTHING,
            pyramid_levels: PyramidLevels::default(),
            fit_stride: DEFAULT_FIT_STRIDE,
            intrinsics,
            rolling_shutter: RollingShutterModel::default(),
            fusion: FusionParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.rolling_shutter.validate()?;
        let [gm, gp] = self.gamma;
        if !(gm <= 0.0 && gp >= 0.0 && gm >= -1.0 && gp <= 1.0) {
            return Err(Error::config("gamma", "need -1 <= gamma_minus <= 0 <= gamma_plus <= 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be >= 0"));
        }
        if self.fit_stride == 0 {
            return Err(Error::config("fit_stride", "must be >= 1"));
        }
        self.fusion.validate()
    }

    pub fn gamma_pair(&self) -> (f64, f64) {
        (self.gamma[0], self.gamma[1])
    }
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    let message = e.to_string();
    let path = message
        .split('`')
        .nth(1)
        .filter(|_| message.contains("unknown field") || message.contains("missing field"))
        .unwrap_or("config")
        .to_string();
    Error::config(path, message.trim().replace('\n', " "))
}

pub fn read_config(text: &str) -> Result<ProjectConfig> {
    read_config_with_overrides(text, &[])
}

/// Applies `key.path=value` overrides before validation. Values parse as TOML
/// (`lambda=5`, `beta=[1,0.8,0.6,0.4,0.2]`) and fall back to plain strings.
pub fn read_config_with_overrides(text: &str, overrides: &[String]) -> Result<ProjectConfig> {
    let mut table: toml::Table = text.parse().map_err(toml_error)?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: ProjectConfig = table.try_into().map_err(toml_error)?;
    config.validate()?;
    Ok(config)
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn write_config(config: &ProjectConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::config("config", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[intrinsics]\nfx = 700.0\nfy = 700.0\ncx = 399.5\ncy = 299.5\nwidth = 800\nheight = 600\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = read_config(MINIMAL).unwrap();
        assert_eq!(c.beta, BetaLadder::default());
        assert_eq!(c.gamma, DEFAULT_GAMMA);
        assert_eq!(c.lambda, 10.0);
        assert_eq!(c.rolling_shutter.patch_count, 14);
        assert_eq!(c.pyramid_levels.count(), 5);
        assert_eq!(c.time_offset_ns, 0);
        let echoed = write_config(&c).unwrap();
        assert!(echoed.contains("lambda = 10.0"));
        assert!(echoed.contains("patch_count = 14"));
        assert_eq!(read_config(&echoed).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = read_config(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = read_config(&MINIMAL.replace("fx", "fxx")).unwrap_err();
        assert!(err.to_string().contains("fxx"), "{err}");
    }

    #[test]
    fn missing_intrinsics_is_named() {
        let err = read_config("lambda = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("intrinsics"), "{err}");
    }

    #[test]
    fn misordered_ladder_names_constraint() {
        let err = read_config(&format!("beta = [1.0, 0.7, 0.9, 0.5, 0.3]\n{MINIMAL}")).unwrap_err();
        assert!(err.to_string().contains("beta3 <= beta2"), "{err}");
    }

    #[test]
    fn invariant_violation_names_field() {
        let err = read_config(&MINIMAL.replace("fx = 700.0", "fx = -1.0")).unwrap_err();
        assert!(err.to_string().contains("intrinsics.fx"), "{err}");
    }

    #[test]
    fn overrides_apply() {
        let c = read_config_with_overrides(
            MINIMAL,
            &["lambda=2.5".into(), "rolling_shutter.patch_count=7".into(), "axis_remap=x,-y,-z".into()],
        )
        .unwrap();
        assert_eq!(c.lambda, 2.5);
        assert_eq!(c.rolling_shutter.patch_count, 7);
        assert_eq!(c.axis_remap.to_string(), "x,-y,-z");
        assert!(read_config_with_overrides(MINIMAL, &["nonsense".into()]).is_err());
    }

    #[test]
    fn full_round_trip() {
        let mut c = read_config(MINIMAL).unwrap();
        c.time_offset_ns = -1234;
        c.lambda = 0.1 + 0.2;
        c.gamma = [-0.15, 0.3];
        c.axis_remap = "y,x,-z".parse().unwrap();
        let text = write_config(&c).unwrap();
        let back = read_config(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(write_config(&back).unwrap(), text);
    }
}
