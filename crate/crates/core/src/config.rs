//! Line-oriented `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored, as is anything after
//! a `#` on a value line. Keys may repeat only when listed as indexed keys
//! (`sensor.1`, `sensor.2`, ...), which are distinct keys anyway.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::trilateration::{SolverConfig, SolverMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate { key: k.to_string(), line: i + 1 });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| ConfigError::invalid(key, format!("cannot parse `{v}`"))))
            .transpose()
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn flag_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("on" | "true" | "yes" | "1") => Ok(true),
            Some("off" | "false" | "no" | "0") => Ok(false),
            Some(v) => Err(ConfigError::invalid(key, format!("expected on/off, got `{v}`"))),
        }
    }

    /// `(suffix, value)` for every key of the form `prefix.suffix`.
    pub fn indexed(&self, prefix: &str) -> impl Iterator<Item = (&str, &str)> {
        let dotted = format!("{prefix}.");
        self.entries
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(dotted.as_str()).map(|s| (s, v.as_str())))
    }

    /// Rejects keys that are neither in `plain` nor `prefix.*` for a prefix in
    /// `indexed`.
    pub fn check_known(&self, plain: &[&str], indexed: &[&str]) -> Result<(), ConfigError> {
        for k in self.entries.keys() {
            let ok = plain.contains(&k.as_str())
                || k.split_once('.').is_some_and(|(p, s)| indexed.contains(&p) && !s.is_empty());
            if !ok {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        Ok(())
    }
}

/// Parses the `nonlinear` / `linear` solver selector.
pub fn parse_solver_mode(key: &str, v: &str) -> Result<SolverMode, ConfigError> {
    match v {
        "nonlinear" => Ok(SolverMode::Nonlinear),
        "linear" => Ok(SolverMode::LinearOnly),
        _ => Err(ConfigError::invalid(key, format!("expected nonlinear or linear, got `{v}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub listen: String,
    pub fps: f64,
    pub skeleton: String,
    pub solver: SolverConfig,
    pub mode: SolverMode,
    /// Overrides the `1000 / fps` admission window.
    pub window_ms: Option<f64>,
    pub compensation: bool,
    pub sync_interval_ms: u64,
    /// Where calibration records are written, if anywhere.
    pub calibration_file: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            fps: 30.0,
            skeleton: "body15".into(),
            solver: SolverConfig::default(),
            mode: SolverMode::Nonlinear,
            window_ms: None,
            compensation: true,
            sync_interval_ms: 1000,
            calibration_file: None,
        }
    }
}

impl ServerConfig {
    pub const KEYS: [&'static str; 11] = [
        "listen",
        "fps",
        "skeleton",
        "c_threshold",
        "max_iterations",
        "singular_det_epsilon",
        "solver",
        "window_ms",
        "compensation",
        "sync_interval_ms",
        "calibration_file",
    ];

    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_known(&Self::KEYS, &[])?;
        Self::from_kv_lenient(kv)
    }

    /// Like [`ServerConfig::from_kv`] but ignores keys it does not know, so a
    /// scenario file can carry server settings alongside its own.
    pub fn from_kv_lenient(kv: &KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let solver = SolverConfig {
            c_threshold: kv.parsed_or("c_threshold", d.solver.c_threshold)?,
            max_iterations: kv.parsed_or("max_iterations", d.solver.max_iterations)?,
            singular_det_epsilon: kv.parsed_or("singular_det_epsilon", d.solver.singular_det_epsilon)?,
        };
        let cfg = Self {
            listen: kv.get("listen").unwrap_or(&d.listen).to_string(),
            fps: kv.parsed_or("fps", d.fps)?,
            skeleton: kv.get("skeleton").unwrap_or(&d.skeleton).to_string(),
            solver,
            mode: kv.get("solver").map(|v| parse_solver_mode("solver", v)).transpose()?.unwrap_or(d.mode),
            window_ms: kv.parsed("window_ms")?,
            compensation: kv.flag_or("compensation", d.compensation)?,
            sync_interval_ms: kv.parsed_or("sync_interval_ms", d.sync_interval_ms)?,
            calibration_file: kv.get("calibration_file").map(str::to_string),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(ConfigError::invalid("fps", "must be positive"));
        }
        if !(self.solver.c_threshold >= 0.0) {
            return Err(ConfigError::invalid("c_threshold", "must be non-negative"));
        }
        if self.solver.max_iterations == 0 {
            return Err(ConfigError::invalid("max_iterations", "must be at least 1"));
        }
        if self.window_ms.is_some_and(|w| !(w > 0.0)) {
            return Err(ConfigError::invalid("window_ms", "must be positive"));
        }
        if self.sync_interval_ms == 0 {
            return Err(ConfigError::invalid("sync_interval_ms", "must be positive"));
        }
        crate::skeleton::Skeleton::by_name(&self.skeleton).map_err(|e| ConfigError::invalid("skeleton", e.to_string()))?;
        Ok(())
    }

    pub fn window(&self) -> f64 {
        self.window_ms.unwrap_or(1000.0 / self.fps)
    }
}

impl FromStr for ServerConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_kv(&KeyValues::parse(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# header\n\n fps = 60 # fast\nsensor.2 = 0 1 2 3\nlisten=0.0.0.0:9000\n").unwrap();
        assert_eq!(kv.get("fps"), Some("60"));
        assert_eq!(kv.get("listen"), Some("0.0.0.0:9000"));
        assert_eq!(kv.indexed("sensor").collect::<Vec<_>>(), vec![("2", "0 1 2 3")]);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        assert_eq!(KeyValues::parse("fps = 30\nnonsense\n"), Err(ConfigError::Syntax { line: 2 }));
        assert_eq!(KeyValues::parse("a b = 1"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(KeyValues::parse("fps = 1\nfps = 2"), Err(ConfigError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn server_config_defaults_and_overrides() {
        let c: ServerConfig = "".parse().unwrap();
        assert_eq!(c, ServerConfig::default());
        assert!((c.window() - 1000.0 / 30.0).abs() < 1e-12);

        let c: ServerConfig = "fps = 60\nc_threshold = 1e-6\nsolver = linear\ncompensation = off\nwindow_ms = 50".parse().unwrap();
        assert_eq!(c.fps, 60.0);
        assert_eq!(c.solver.c_threshold, 1e-6);
        assert_eq!(c.mode, SolverMode::LinearOnly);
        assert!(!c.compensation);
        assert_eq!(c.window(), 50.0);
    }

    #[test]
    fn server_config_rejections() {
        assert_eq!("bogus = 1".parse::<ServerConfig>(), Err(ConfigError::UnknownKey("bogus".into())));
        assert!(matches!("fps = -3".parse::<ServerConfig>(), Err(ConfigError::Invalid { .. })));
        assert!(matches!("fps = fast".parse::<ServerConfig>(), Err(ConfigError::Invalid { .. })));
        assert!(matches!("skeleton = octopus".parse::<ServerConfig>(), Err(ConfigError::Invalid { .. })));
        assert!(matches!("compensation = maybe".parse::<ServerConfig>(), Err(ConfigError::Invalid { .. })));
    }
}
