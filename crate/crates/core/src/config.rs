//! Run configuration: a TOML file with one section per module, plus
//! `key.path=value` overrides applied on top.
//!
//! ```toml
//! mode = "ppdnn"
//! seed = 1
//! trace = "downtown.pptrace"
//!
//! [executors]
//! preset = "per_task"
//!
//! [keyframe]
//! ssim_threshold = 0.9
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dispatch::DispatchConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::flops::FlopsModel;
use crate::fusion::SyncConfig;
use crate::keyframe::KeyframeConfig;
use crate::predictor::PredictorConfig;
use crate::sim::{DetectorEmulator, ExecutorConfig, LatencyModel, Mode, PipelineConfig, QueueConfig};
use crate::similarity::SsimParams;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub trace: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub keyframe: KeyframeConfig,
    pub ssim: SsimParams,
    pub tracker: TrackerConfig,
    pub flops: FlopsModel,
    pub dispatch: DispatchConfig,
    pub predictor: PredictorConfig,
    pub fusion: SyncConfig,
    pub latency: LatencyModel,
    pub executors: ExecutorConfig,
    pub queues: QueueConfig,
    pub detector: DetectorEmulator,
    pub tracker_detector: DetectorEmulator,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_pipeline(PipelineConfig::default())
    }
}

/// Splits `a.b.c=value` into its key path and raw value.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config(s, "override must look like key.path=value")),
    }
}

/// TOML literal if `raw` parses as one, otherwise a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Replaces `executors.preset = "<name>"` by the preset's fields; explicit
/// executor keys next to it still win.
fn expand_executor_preset(root: &mut toml::Table) -> Result<()> {
    let Some(section) = root.get_mut("executors").and_then(toml::Value::as_table_mut) else {
        return Ok(());
    };
    let Some(preset) = section.remove("preset") else {
        return Ok(());
    };
    let name = preset
        .as_str()
        .ok_or_else(|| Error::config("executors.preset", "must be a string"))?;
    let base = toml::Value::try_from(ExecutorConfig::preset(name)?)
        .map_err(|e| Error::config("executors", e.to_string()))?;
    let mut merged = base.as_table().cloned().unwrap_or_default();
    for (k, v) in std::mem::take(section) {
        merged.insert(k, v);
    }
    *section = merged;
    Ok(())
}

impl RunConfig {
    pub fn from_pipeline(p: PipelineConfig) -> Self {
        RunConfig {
            mode: p.mode,
            seed: p.seed,
            trace: None,
            output: None,
            keyframe: p.keyframe,
            ssim: p.ssim,
            tracker: p.tracker,
            flops: p.flops,
            dispatch: p.dispatch,
            predictor: p.predictor,
            fusion: p.fusion,
            latency: p.latency,
            executors: p.executors,
            queues: p.queues,
            detector: p.detector,
            tracker_detector: p.tracker_detector,
            eval: EvalConfig::default(),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            seed: self.seed,
            keyframe: self.keyframe,
            ssim: self.ssim,
            tracker: self.tracker,
            flops: self.flops,
            dispatch: self.dispatch,
            predictor: self.predictor,
            fusion: self.fusion,
            latency: self.latency,
            executors: self.executors.clone(),
            queues: self.queues,
            detector: self.detector,
            tracker_detector: self.tracker_detector,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if !(self.eval.dc_window_ms > 0.0) {
            return Err(Error::config("eval.dc_window_ms", "must be positive"));
        }
        Ok(())
    }

    /// Parses config text (possibly empty) and applies overrides in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut root: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        for (k, v) in overrides {
            set_path(&mut root, k, override_value(v))?;
        }
        expand_executor_preset(&mut root)?;

        let mut unknown = Vec::new();
        let mut track = serde_path_to_error::Track::new();
        let value = toml::Value::Table(root);
        let de = serde_path_to_error::Deserializer::new(value, &mut track);
        let parsed: std::result::Result<RunConfig, _> =
            serde_ignored::deserialize(de, |path| unknown.push(path.to_string()));
        let cfg = match parsed {
            Ok(c) => c,
            Err(e) => {
                let path = track.path().to_string();
                let field = if path == "." { "config".to_string() } else { path };
                return Err(Error::config(field, e.to_string()));
            }
        };
        if let Some(field) = unknown.first() {
            return Err(Error::config(field.clone(), "unknown field"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        RunConfig::parse(&text, overrides)
    }
}
