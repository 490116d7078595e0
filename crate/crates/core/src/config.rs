//! Run configuration: a flat `key = value` file with command-line overrides.
//!
//! Lines starting with `#` are comments. Later assignments win, so overrides
//! applied after the file take precedence over it, and both over defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle_graph::{FibreMetric, KernelConfig, KernelFamily};
use crate::embedding::WeightConvention;
use crate::error::{HdmError, Result};
use crate::geometry::{FibreSampling, RngSeed};
use crate::spectral::SolverConfig;
use crate::tangent_pca::PcaConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Exact tangent vectors and exact parallel transport.
    Exact,
    /// Tangent planes and transports estimated from the base cloud.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_base: usize,
    pub n_fibre: usize,
    pub k_base: usize,
    pub k_fibre: usize,
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    /// `None` means `n_base^{-1/2}`.
    pub eps_pca: Option<f64>,
    pub k_pca: usize,
    pub mode: SamplingMode,
    pub fibre_sampling: FibreSampling,
    pub family: KernelFamily,
    pub fibre_metric: FibreMetric,
    pub m_eigs: usize,
    pub rel_gap: f64,
    pub solver_tol: f64,
    pub dense_threshold: usize,
    pub t: f64,
    pub convention: WeightConvention,
    pub anchor_fibre: usize,
    pub anchor_sample: usize,
    pub seed: RngSeed,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_base: 800,
            n_fibre: 32,
            k_base: 60,
            k_fibre: 16,
            eps: 2.0,
            delta: 0.15,
            alpha: 1.0,
            eps_pca: None,
            k_pca: 100,
            mode: SamplingMode::Exact,
            fibre_sampling: FibreSampling::Random,
            family: KernelFamily::GaussianProduct,
            fibre_metric: FibreMetric::Chordal,
            m_eigs: 36,
            rel_gap: 0.2,
            solver_tol: 1e-8,
            dense_threshold: 1500,
            t: 1.0,
            convention: WeightConvention::LaplacianPower,
            anchor_fibre: 0,
            anchor_sample: 0,
            seed: RngSeed(0),
            out_dir: PathBuf::from("run"),
        }
    }
}

/// Keys accepted by [`RunConfig::set`], in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "n_base",
    "n_fibre",
    "k_base",
    "k_fibre",
    "eps",
    "delta",
    "alpha",
    "eps_pca",
    "k_pca",
    "mode",
    "fibre_sampling",
    "family",
    "fibre_metric",
    "m_eigs",
    "rel_gap",
    "solver_tol",
    "dense_threshold",
    "t",
    "convention",
    "anchor_fibre",
    "anchor_sample",
    "seed",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| HdmError::InvalidConfig(format!("{key} = {value}: {e}")))
}

/// Enum values use their snake_case serde names.
fn parse_name<T: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| HdmError::InvalidConfig(format!("{key} = {value}: unknown value")))
}

fn name<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("enum did not serialize to a string: {other:?}"),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "n_base" => self.n_base = parse(key, value)?,
            "n_fibre" => self.n_fibre = parse(key, value)?,
            "k_base" => self.k_base = parse(key, value)?,
            "k_fibre" => self.k_fibre = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "eps_pca" => {
                self.eps_pca = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "k_pca" => self.k_pca = parse(key, value)?,
            "mode" => self.mode = parse_name(key, value)?,
            "fibre_sampling" => self.fibre_sampling = parse_name(key, value)?,
            "family" => self.family = parse_name(key, value)?,
            "fibre_metric" => self.fibre_metric = parse_name(key, value)?,
            "m_eigs" => self.m_eigs = parse(key, value)?,
            "rel_gap" => self.rel_gap = parse(key, value)?,
            "solver_tol" => self.solver_tol = parse(key, value)?,
            "dense_threshold" => self.dense_threshold = parse(key, value)?,
            "t" => self.t = parse(key, value)?,
            "convention" => self.convention = parse_name(key, value)?,
            "anchor_fibre" => self.anchor_fibre = parse(key, value)?,
            "anchor_sample" => self.anchor_sample = parse(key, value)?,
            "seed" => self.seed = RngSeed(parse(key, value)?),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(HdmError::InvalidConfig(format!("unknown key {other}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_base" => self.n_base.to_string(),
            "n_fibre" => self.n_fibre.to_string(),
            "k_base" => self.k_base.to_string(),
            "k_fibre" => self.k_fibre.to_string(),
            "eps" => self.eps.to_string(),
            "delta" => self.delta.to_string(),
            "alpha" => self.alpha.to_string(),
            "eps_pca" => self.eps_pca.map_or_else(|| "auto".to_string(), |v| v.to_string()),
            "k_pca" => self.k_pca.to_string(),
            "mode" => name(&self.mode),
            "fibre_sampling" => name(&self.fibre_sampling),
            "family" => name(&self.family),
            "fibre_metric" => name(&self.fibre_metric),
            "m_eigs" => self.m_eigs.to_string(),
            "rel_gap" => self.rel_gap.to_string(),
            "solver_tol" => self.solver_tol.to_string(),
            "dense_threshold" => self.dense_threshold.to_string(),
            "t" => self.t.to_string(),
            "convention" => name(&self.convention),
            "anchor_fibre" => self.anchor_fibre.to_string(),
            "anchor_sample" => self.anchor_sample.to_string(),
            "seed" => self.seed.0.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str, context: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HdmError::Parse {
                context: context.to_string(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            self.set(key, value).map_err(|e| HdmError::Parse {
                context: context.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            if !path.exists() {
                return Err(HdmError::MissingArtifact(path.to_path_buf()));
            }
            cfg.apply_text(&std::fs::read_to_string(path)?, &path.display().to_string())?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("every listed key has a value")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_base", self.n_base),
            ("n_fibre", self.n_fibre),
            ("k_base", self.k_base),
            ("k_fibre", self.k_fibre),
            ("k_pca", self.k_pca),
            ("m_eigs", self.m_eigs),
        ];
        if let Some((k, _)) = counts.iter().find(|c| c.1 == 0) {
            return Err(HdmError::InvalidConfig(format!("{k} must be at least 1")));
        }
        self.kernel().validate()?;
        if let Some(e) = self.eps_pca {
            if !(e > 0.0) {
                return Err(HdmError::InvalidConfig(format!("eps_pca must be positive, got {e}")));
            }
        }
        if !(self.rel_gap > 0.0) || !(self.solver_tol > 0.0) || !(self.t >= 0.0) {
            return Err(HdmError::InvalidConfig(
                "rel_gap and solver_tol must be positive, t non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn kernel(&self) -> KernelConfig {
        KernelConfig {
            family: self.family,
            alpha: self.alpha,
            fibre_metric: self.fibre_metric,
            ..KernelConfig::new(self.eps, self.delta, self.k_base, self.k_fibre)
        }
    }

    pub fn eps_pca(&self) -> f64 {
        self.eps_pca.unwrap_or_else(|| (self.n_base as f64).powf(-0.5))
    }

    pub fn pca(&self) -> PcaConfig {
        PcaConfig {
            target_dim: Some(2),
            ..PcaConfig::new(self.eps_pca(), self.k_pca.min(self.n_base.saturating_sub(1)).max(1))
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver_tol,
            dense_threshold: self.dense_threshold,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("mode", "empirical").unwrap();
        cfg.set("eps_pca", "0.03").unwrap();
        cfg.set("family", "compact_product").unwrap();
        cfg.set("out_dir", "some/where").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "echo").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn precedence_is_cli_then_file_then_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "# comment\nn_base = 50\ndelta = 0.3\n").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &[("delta".into(), "0.7".into())]).unwrap();
        assert_eq!(cfg.n_base, 50);
        assert_eq!(cfg.delta, 0.7);
        assert_eq!(cfg.n_fibre, RunConfig::default().n_fibre);
    }

    #[test]
    fn bad_input_is_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("nonsense", "1").is_err());
        assert!(cfg.set("mode", "approximate").is_err());
        assert!(cfg.set("n_base", "-3").is_err());
        assert!(matches!(
            cfg.apply_text("n_base 4", "f"),
            Err(HdmError::Parse { line: 1, .. })
        ));
        for (k, v) in [("alpha", "1.5"), ("eps", "0"), ("n_fibre", "0"), ("eps_pca", "-1")] {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k} = {v}");
        }
        let missing = std::path::Path::new("/nonexistent/run.cfg");
        assert!(matches!(
            RunConfig::resolve(Some(missing), &[]),
            Err(HdmError::MissingArtifact(_))
        ));
    }

    #[test]
    fn eps_pca_defaults_to_inverse_root() {
        let cfg = RunConfig {
            n_base: 1600,
            ..RunConfig::default()
        };
        assert!((cfg.eps_pca() - 0.025).abs() < 1e-15);
    }
}
