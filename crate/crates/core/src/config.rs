//! Engine configuration, feature toggles and ablation presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compressor::CompressionConfig;
use crate::error::{AoiError, Result};
use crate::llm::RemoteConfig;
use crate::memory::{COMPRESSED_TTL, HOUR, RAW_TTL};
use crate::observer::{LAMBDA, THETA_COMPLEX};

pub const DEFAULT_STEP_BUDGET: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummarizerKind {
    Extractive,
    Remote,
}

impl std::str::FromStr for SummarizerKind {
    type Err = AoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extractive" => Ok(SummarizerKind::Extractive),
            "remote" => Ok(SummarizerKind::Remote),
            other => Err(AoiError::Config(format!("unknown summarizer `{other}` (expected extractive or remote)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Features {
    pub compressor: bool,
    pub dynamic_scheduling: bool,
    pub three_layer_memory: bool,
    pub multi_agent: bool,
}

impl Default for Features {
    fn default() -> Self {
        Features { compressor: true, dynamic_scheduling: true, three_layer_memory: true, multi_agent: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub lambda: f64,
    pub theta_complex: f64,
    pub window_size: usize,
    pub overlap_ratio: f64,
    pub target_ratio: f64,
    /// Seconds.
    pub raw_ttl: f64,
    /// Seconds.
    pub compressed_ttl: f64,
    pub summarizer: SummarizerKind,
    pub remote: RemoteConfig,
    pub features: Features,
    pub seeds: Vec<u64>,
    pub step_budget: u64,
    /// Tokens of stored context the Observer reads per decision.
    pub context_budget: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            lambda: LAMBDA,
            theta_complex: THETA_COMPLEX,
            window_size: 768,
            overlap_ratio: 0.5,
            target_ratio: 0.72,
            raw_ttl: RAW_TTL,
            compressed_ttl: COMPRESSED_TTL,
            summarizer: SummarizerKind::Extractive,
            remote: RemoteConfig::default(),
            features: Features::default(),
            seeds: vec![0, 1, 2, 3, 4],
            step_budget: DEFAULT_STEP_BUDGET,
            context_budget: 768,
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EngineConfig = serde_json::from_str(text).map_err(|e| AoiError::Config(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AoiError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn compression(&self) -> CompressionConfig {
        CompressionConfig {
            window_size: self.window_size,
            overlap_ratio: self.overlap_ratio,
            target_ratio: self.target_ratio,
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(AoiError::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.theta_complex >= 0.0 && self.theta_complex.is_finite()) {
            return bad(format!("theta_complex must be a non-negative number, got {}", self.theta_complex));
        }
        self.compression().check()?;
        if !(self.raw_ttl > 0.0 && self.raw_ttl.is_finite()) {
            return bad(format!("raw_ttl must be positive, got {}", self.raw_ttl));
        }
        if !(self.compressed_ttl >= self.raw_ttl && self.compressed_ttl.is_finite()) {
            return bad(format!("compressed_ttl ({}) must be at least raw_ttl ({})", self.compressed_ttl, self.raw_ttl));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.step_budget == 0 {
            return bad("step_budget must be positive".into());
        }
        if self.context_budget == 0 {
            return bad("context_budget must be positive".into());
        }
        if self.summarizer == SummarizerKind::Remote {
            self.remote.check()?;
        }
        Ok(())
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.features = ablation.features();
        self
    }
}

/// The five configurations of the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoCompressor,
    NoDynamicScheduling,
    NoThreeLayerMemory,
    SingleAgent,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoCompressor,
        Ablation::NoDynamicScheduling,
        Ablation::NoThreeLayerMemory,
        Ablation::SingleAgent,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "AOI (full)",
            Ablation::NoCompressor => "w/o Context Compressor",
            Ablation::NoDynamicScheduling => "w/o Dynamic Scheduling",
            Ablation::NoThreeLayerMemory => "w/o Three-layer Memory",
            Ablation::SingleAgent => "Single Agent",
        }
    }

    pub fn features(self) -> Features {
        let on = Features::default();
        match self {
            Ablation::Full => on,
            Ablation::NoCompressor => Features { compressor: false, ..on },
            Ablation::NoDynamicScheduling => Features { dynamic_scheduling: false, ..on },
            Ablation::NoThreeLayerMemory => Features { three_layer_memory: false, ..on },
            Ablation::SingleAgent => Features { multi_agent: false, ..on },
        }
    }
}

/// Parameters the sweep command can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    WindowSize,
    Lambda,
    Retention,
}

impl SweepParam {
    /// Default grid; retention values are raw-layer TTLs in hours.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::WindowSize => vec![256.0, 512.0, 768.0, 1024.0, 1536.0],
            SweepParam::Lambda => vec![0.2, 0.35, 0.5, 0.65, 0.8],
            SweepParam::Retention => vec![24.0, 72.0, 120.0],
        }
    }

    pub fn apply(self, base: &EngineConfig, value: f64) -> Result<EngineConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::WindowSize => {
                if value.fract() != 0.0 || value < 2.0 {
                    return Err(AoiError::Config(format!("window size must be an integer >= 2, got {value}")));
                }
                cfg.window_size = value as usize;
            }
            SweepParam::Lambda => cfg.lambda = value,
            SweepParam::Retention => {
                cfg.raw_ttl = value * HOUR;
                cfg.compressed_ttl = cfg.compressed_ttl.max(cfg.raw_ttl);
            }
        }
        cfg.check()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = AoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window_size" | "window-size" => Ok(SweepParam::WindowSize),
            "lambda" => Ok(SweepParam::Lambda),
            "retention" => Ok(SweepParam::Retention),
            other => Err(AoiError::Config(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = EngineConfig::default();
        c.check().unwrap();
        assert_eq!(c.lambda, 0.35);
        assert_eq!(c.theta_complex, 4.0);
        assert_eq!((c.window_size, c.overlap_ratio, c.target_ratio), (768, 0.5, 0.72));
        assert_eq!(c.raw_ttl, 86_400.0);
        assert_eq!(c.compressed_ttl, 604_800.0);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = EngineConfig::from_json(r#"{"lambda": 0.5, "features": {"compressor": false}}"#).unwrap();
        assert_eq!(c.lambda, 0.5);
        assert!(!c.features.compressor && c.features.multi_agent);
        assert_eq!(c.window_size, 768);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for bad in [
            r#"{"lambda": 1.5}"#,
            r#"{"overlap_ratio": 0.3, "window_size": 5}"#,
            r#"{"target_ratio": 1.0}"#,
            r#"{"seeds": []}"#,
            r#"{"raw_ttl": 0}"#,
            r#"{"no_such_field": 1}"#,
        ] {
            assert!(matches!(EngineConfig::from_json(bad), Err(AoiError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn each_ablation_turns_off_one_feature() {
        for a in Ablation::ALL {
            let f = a.features();
            let off = [f.compressor, f.dynamic_scheduling, f.three_layer_memory, f.multi_agent]
                .iter()
                .filter(|on| !**on)
                .count();
            assert_eq!(off, usize::from(a != Ablation::Full));
        }
    }

    #[test]
    fn sweep_grids() {
        assert_eq!(SweepParam::Retention.default_values().len(), 3);
        let c = SweepParam::Retention.apply(&EngineConfig::default(), 120.0).unwrap();
        assert_eq!(c.raw_ttl, 120.0 * 3600.0);
        assert!(SweepParam::WindowSize.apply(&EngineConfig::default(), 100.5).is_err());
        assert!(SweepParam::Lambda.apply(&EngineConfig::default(), 2.0).is_err());
    }
}
