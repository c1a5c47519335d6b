//! JSON run configuration. Every field is optional; relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use lka_core::diagnosis::DiagnosisConfig;
use lka_core::dynamics::CurvatureSweep;
use lka_core::readiness::{GeneratorConfig, TrainParams};
use lka_core::rules::AuditConfig;
use lka_core::telemetry::SegmentConfig;
use serde::Deserialize;

use crate::Format;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub formats: Option<Vec<Format>>,
    /// Vehicle capability JSON shared by audit, analyze and simulate.
    pub capability: Option<PathBuf>,
    pub audit: AuditSection,
    pub analyze: AnalyzeSection,
    pub curate: CurateSection,
    pub fit: FitSection,
    pub simulate: SimulateSection,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub geometry: Option<PathBuf>,
    pub speed_mps: Option<f64>,
    pub rules: AuditConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub logs: Vec<PathBuf>,
    pub segment: SegmentConfig,
    pub diagnosis: DiagnosisConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSection {
    pub logs: Vec<PathBuf>,
    pub normal_sample_ratio: Option<f64>,
    pub segment: SegmentConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub logs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub sweep: CurvatureSweep,
    pub trace: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub n_synthetic: usize,
    pub generator: GeneratorConfig,
    pub params: TrainParams,
    pub test_fraction: f64,
    /// Grid points of the partial dependence curves.
    pub pd_grid: usize,
    /// Background rows averaged by partial dependence.
    pub pd_background: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            data: None,
            n_synthetic: 5000,
            generator: GeneratorConfig::default(),
            params: TrainParams::default(),
            test_fraction: 0.3,
            pd_grid: 31,
            pd_background: 300,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub model: Option<PathBuf>,
    pub features: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub inputs: Vec<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    fn rebase_paths(&mut self, base: &Path) {
        let opts = [
            &mut self.out,
            &mut self.capability,
            &mut self.audit.geometry,
            &mut self.train.data,
            &mut self.predict.model,
            &mut self.predict.features,
        ];
        for p in opts.into_iter().flatten() {
            rebase(base, p);
        }
        let lists = [&mut self.analyze.logs, &mut self.curate.logs, &mut self.fit.logs, &mut self.report.inputs];
        for list in lists {
            for p in list.iter_mut() {
                rebase(base, p);
            }
        }
    }
}

/// Reads the config file, or returns defaults when no path is given.
pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    cfg.rebase_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
