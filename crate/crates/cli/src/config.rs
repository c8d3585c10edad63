//! Run configuration: JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use mixfem::analysis::StudyConfig;
use mixfem::forms::{Material, Method};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Md,
}

/// Every field is optional so that a file and the flags can be layered.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub method: Option<String>,
    pub k: Option<u32>,
    pub dim: Option<usize>,
    pub levels: Option<String>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl PartialConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            method: over.method.or(self.method),
            k: over.k.or(self.k),
            dim: over.dim.or(self.dim),
            levels: over.levels.or(self.levels),
            lambda: over.lambda.or(self.lambda),
            mu: over.mu.or(self.mu),
            out: over.out.or(self.out),
            format: over.format.or(self.format),
            seed: over.seed.or(self.seed),
            threads: over.threads.or(self.threads),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Invalid(String),
    Io(String),
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub method: Method,
    pub k: u32,
    pub dim: usize,
    pub levels: (i32, i32),
    pub material: Material,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: usize,
}

/// Parses `A:B` into an inclusive level range.
pub fn parse_levels(s: &str) -> Result<(i32, i32), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("levels '{s}' must have the form A:B"))?;
    let a: i32 = a.trim().parse().map_err(|_| format!("bad level '{a}'"))?;
    let b: i32 = b.trim().parse().map_err(|_| format!("bad level '{b}'"))?;
    if a > b {
        return Err(format!("levels {a}:{b} are not increasing"));
    }
    if !(-2..=10).contains(&a) || !(-2..=10).contains(&b) {
        return Err(format!("levels {a}:{b} outside the supported range -2..10"));
    }
    Ok((a, b))
}

impl RunConfig {
    pub fn resolve(p: PartialConfig) -> Result<Self, String> {
        let method = Method::parse(p.method.as_deref().ok_or("--method is required")?).map_err(|e| e.to_string())?;
        let k = p.k.ok_or("--k is required")?;
        let dim = p.dim.unwrap_or(2);
        method.validate(k, dim).map_err(|e| e.to_string())?;
        let levels = match &p.levels {
            Some(s) => parse_levels(s)?,
            None => (1, 3),
        };
        let default = Material::paper_default(dim);
        let material = Material::new(p.lambda.unwrap_or(default.lambda), p.mu.unwrap_or(default.mu), dim)
            .map_err(|e| e.to_string())?;
        let threads = p.threads.unwrap_or(1);
        if threads == 0 {
            return Err("--threads must be at least 1".into());
        }
        Ok(RunConfig {
            method,
            k,
            dim,
            levels,
            material,
            out: p.out,
            format: p.format.unwrap_or(Format::Csv),
            threads,
        })
    }

    pub fn study(&self) -> StudyConfig {
        let mut s = StudyConfig::new(self.method, self.k, self.dim, self.levels.0..=self.levels.1);
        s.material = self.material;
        s.threads = self.threads;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partial(method: &str, k: u32, dim: usize) -> PartialConfig {
        PartialConfig {
            method: Some(method.into()),
            k: Some(k),
            dim: Some(dim),
            ..Default::default()
        }
    }

    #[test]
    fn level_ranges() {
        assert_eq!(parse_levels("1:7"), Ok((1, 7)));
        assert_eq!(parse_levels("0:6"), Ok((0, 6)));
        assert!(parse_levels("3:1").is_err());
        assert!(parse_levels("7").is_err());
        assert!(parse_levels("a:2").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file: PartialConfig =
            serde_json::from_str(r#"{"method": "hood-taylor", "k": 1, "dim": 3, "lambda": 1.0, "levels": "1:2"}"#)
                .unwrap();
        let flags = PartialConfig {
            dim: Some(2),
            levels: Some("0:4".into()),
            ..Default::default()
        };
        let c = RunConfig::resolve(file.overlay(flags)).unwrap();
        assert_eq!((c.method, c.k, c.dim, c.levels), (Method::HoodTaylor, 1, 2, (0, 4)));
        assert_eq!(c.material.lambda, 1.0);
        assert_eq!(c.material.mu, 0.35);
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        assert!(RunConfig::resolve(partial("stab-div", 3, 2)).is_err());
        assert!(RunConfig::resolve(partial("bubble-cont", 0, 2)).is_err());
        assert!(RunConfig::resolve(partial("hood-taylor", 3, 3)).is_err());
        assert!(RunConfig::resolve(partial("mystery", 1, 2)).is_err());
        assert!(RunConfig::resolve(partial("stab-div", 1, 4)).is_err());
        assert!(RunConfig::resolve(partial("stab-div", 3, 3)).is_ok());
        assert!(serde_json::from_str::<PartialConfig>(r#"{"colour": 1}"#).is_err());
    }
}
