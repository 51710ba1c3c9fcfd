//! Experiment configuration: TOML loading, defaults, validation and the effective-config echo.

use std::path::{Path, PathBuf};

use isac_core::arrays::{ArrayGeometry, Direction};
use isac_core::channels::SubcarrierGrid;
use isac_core::metrics::{dbm_per_hz_to_watts, FrameVariant, NoiseConfig};
use isac_core::precoder::BandwidthMode;
use isac_core::scenario::SystemParams;
use isac_core::pareto::{LossParams, SearchBudget};
use isac_core::tracking::{ThresholdPairing, TrackingConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::timing::SlotBudget;

/// Pipeline selected by a config file or a CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    ParetoSweep,
    TrackingEval,
    Efficiency,
    Prop1Check,
    Prop2Check,
    BeamPattern,
    LossOpt,
}

impl Pipeline {
    /// Kebab-case name used in files and summaries.
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::ParetoSweep => "pareto-sweep",
            Pipeline::TrackingEval => "tracking-eval",
            Pipeline::Efficiency => "efficiency",
            Pipeline::Prop1Check => "prop1-check",
            Pipeline::Prop2Check => "prop2-check",
            Pipeline::BeamPattern => "beam-pattern",
            Pipeline::LossOpt => "loss-opt",
        }
    }
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    /// Optional scene file; a seeded random desk scene is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub pareto: ParetoConfig,
    #[serde(default)]
    pub tracking: TrackingSection,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub prop1: Prop1Config,
    #[serde(default)]
    pub prop2: Prop2Config,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub efficiency: EfficiencyConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("isac-out")
}

/// Transmit array layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TxArrayConfig {
    pub n_h: usize,
    pub n_v: usize,
    pub q_h: usize,
    pub q_v: usize,
}

impl Default for TxArrayConfig {
    fn default() -> Self {
        Self { n_h: 8, n_v: 8, q_h: 8, q_v: 8 }
    }
}

/// Receive array layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RxArrayConfig {
    pub n_h: usize,
    pub n_v: usize,
}

impl Default for RxArrayConfig {
    fn default() -> Self {
        Self { n_h: 8, n_v: 8 }
    }
}

/// Transceiver, band and noise settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub carrier_ghz: f64,
    pub bandwidth_ghz: f64,
    pub subcarriers: usize,
    pub tx: TxArrayConfig,
    pub rx: RxArrayConfig,
    pub n_rf: usize,
    pub t_max_ns: f64,
    /// Reference SNR `P_t β² / (B n_c0)` at 50 m used to set `P_t` when `p_t_w` is absent.
    pub snr_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_t_w: Option<f64>,
    pub n_c0_dbm_hz: f64,
    pub n_s0_dbm_hz: f64,
    pub dictionary_h: usize,
    pub dictionary_v: usize,
    pub paths_per_user: usize,
    pub rician_k: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            carrier_ghz: 100.0,
            bandwidth_ghz: 8.0,
            subcarriers: 16,
            tx: TxArrayConfig::default(),
            rx: RxArrayConfig::default(),
            n_rf: 6,
            t_max_ns: 1.0,
            snr_db: 10.0,
            p_t_w: None,
            n_c0_dbm_hz: -30.0,
            n_s0_dbm_hz: -30.0,
            dictionary_h: 16,
            dictionary_v: 16,
            paths_per_user: 2,
            rician_k: 3.0,
        }
    }
}

/// Random scene population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub users: usize,
    pub targets: usize,
    /// Detector pixel-noise standard deviation.
    pub camera_noise_px: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { users: 2, targets: 2, camera_noise_px: 0.0 }
    }
}

/// Frame-structure variant as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    RfOnly,
    VisionAided,
}

impl From<VariantName> for FrameVariant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::RfOnly => FrameVariant::RfOnly,
            VariantName::VisionAided => FrameVariant::VisionAided,
        }
    }
}

/// Frame-timing inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub variant: VariantName,
    pub tracking_slots: usize,
    pub inference_slots: usize,
    /// Hierarchical-training slots charged to the SSB stage of the RF-only variant.
    pub ssb_slots: usize,
    pub slot_ms: f64,
    pub subframe_ms: f64,
    pub n_sub: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            variant: VariantName::VisionAided,
            tracking_slots: 2,
            inference_slots: 1,
            ssb_slots: 16,
            slot_ms: 0.5,
            subframe_ms: 100.0,
            n_sub: 10,
        }
    }
}

/// Boundary sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoConfig {
    pub gamma_points: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// SE thresholds (bits/s); when non-empty they replace the `γ` grid.
    pub thresholds: Vec<f64>,
    /// Factorise every realisation into the hybrid structure and report the residual.
    pub factorize: bool,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self { gamma_points: 25, gamma_min: 1e-3, gamma_max: 1e3, thresholds: vec![], factorize: true }
    }
}

/// Threshold pairing as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingName {
    Printed,
    Swapped,
}

/// Bandwidth convention as written in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthName {
    Effective,
    Literal,
}

/// Beam-tracking settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSection {
    pub t_bt: usize,
    /// Operating SNR (dB); `inf` means noiseless probing.
    pub snr_db: f64,
    pub pairing: PairingName,
    pub bandwidth: BandwidthName,
    /// Scale feedback magnitudes by `f_m/f_c` before the argmax.
    pub equalize_spreading: bool,
    /// Monte-Carlo LoS users per seed in the tracking evaluation.
    pub trials: usize,
    /// Write the per-slot trace of every user.
    pub write_traces: bool,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            t_bt: 1,
            snr_db: 10.0,
            pairing: PairingName::Printed,
            bandwidth: BandwidthName::Effective,
            equalize_spreading: true,
            trials: 200,
            write_traces: true,
        }
    }
}

/// Loss-driven search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub starts: usize,
    pub evals_per_start: usize,
    pub tol: f64,
    /// SE threshold `Γ` (bits/s/Hz).
    pub gamma_se: f64,
    pub eta_c: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { starts: 8, evals_per_start: 80, tol: 1e-5, gamma_se: 1.0, eta_c: 1.0 }
    }
}

/// Separation-sweep settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prop1Config {
    pub steps: usize,
    pub max_deg: f64,
    pub gamma: f64,
    /// Consecutive steps per seed that must respect the SE and CRB trends.
    pub min_ok_steps: usize,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self { steps: 20, max_deg: 40.0, gamma: 1.0, min_ok_steps: 18 }
    }
}

/// Gain-monotonicity check settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prop2Config {
    pub grids: usize,
    pub spearman_max: f64,
}

impl Default for Prop2Config {
    fn default() -> Self {
        Self { grids: 50, spearman_max: -0.95 }
    }
}

/// Squint-trajectory beam-pattern settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub start_theta_deg: f64,
    pub start_phi_deg: f64,
    pub end_theta_deg: f64,
    pub end_phi_deg: f64,
    /// Cosine scan points per axis for the argmax oracle.
    pub scan: usize,
    /// Cosine scan points per axis for the written pattern files.
    pub pattern_scan: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            start_theta_deg: 115.0,
            start_phi_deg: -10.0,
            end_theta_deg: 120.0,
            end_phi_deg: 10.0,
            scan: 512,
            pattern_scan: 64,
        }
    }
}

/// Efficiency inputs; the boundary point at `γ = 1` is used when values are absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EfficiencyConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crb_star: Option<f64>,
}

/// Line and column (one-based) of a byte offset.
pub(crate) fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.chars().count(), |p| before[p + 1..].chars().count()) + 1;
    (line, col)
}

/// Parses and validates a config from text; `origin` names the source in errors.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        HarnessError::Parse { path: origin.to_string(), line, column, message: e.message().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a config file. Relative scene paths resolve against the
/// config file's directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(&text, s.start));
        HarnessError::Parse { path: path.display().to_string(), line, column, message: e.message().to_string() }
    })?;
    if let Some(scene) = &cfg.scene {
        if scene.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.scene = Some(dir.join(scene));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::config(field, format!("must be positive and finite, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(HarnessError::config(field, "must be at least 1"))
    }
}

impl ExperimentConfig {
    /// Defaults for a pipeline.
    pub fn for_pipeline(pipeline: Pipeline) -> Self {
        Self {
            pipeline,
            scene: None,
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            system: SystemConfig::default(),
            scenario: ScenarioConfig::default(),
            timing: TimingConfig::default(),
            pareto: ParetoConfig::default(),
            tracking: TrackingSection::default(),
            search: SearchConfig::default(),
            prop1: Prop1Config::default(),
            prop2: Prop2Config::default(),
            beam: BeamConfig::default(),
            efficiency: EfficiencyConfig::default(),
        }
    }

    /// Checks every constraint, naming the offending fields.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds", "at least one seed is required"));
        }
        if let Some(scene) = &self.scene {
            if !scene.is_file() {
                return Err(HarnessError::config("scene", format!("file {} does not exist", scene.display())));
            }
        }
        let s = &self.system;
        positive("system.carrier_ghz", s.carrier_ghz)?;
        if !(s.bandwidth_ghz >= 0.0 && s.bandwidth_ghz < 2.0 * s.carrier_ghz) {
            return Err(HarnessError::config("system.bandwidth_ghz", "must lie in [0, 2·carrier_ghz)"));
        }
        at_least_one("system.subcarriers", s.subcarriers)?;
        for (name, v) in [("system.tx.n_h", s.tx.n_h), ("system.tx.n_v", s.tx.n_v), ("system.tx.q_h", s.tx.q_h), ("system.tx.q_v", s.tx.q_v)] {
            at_least_one(name, v)?;
        }
        if s.tx.n_h % s.tx.q_h != 0 {
            return Err(HarnessError::config(
                "system.tx.q_h, system.tx.n_h",
                format!("q_h = {} does not divide n_h = {}", s.tx.q_h, s.tx.n_h),
            ));
        }
        if s.tx.n_v % s.tx.q_v != 0 {
            return Err(HarnessError::config(
                "system.tx.q_v, system.tx.n_v",
                format!("q_v = {} does not divide n_v = {}", s.tx.q_v, s.tx.n_v),
            ));
        }
        at_least_one("system.rx.n_h", s.rx.n_h)?;
        at_least_one("system.rx.n_v", s.rx.n_v)?;
        at_least_one("system.n_rf", s.n_rf)?;
        positive("system.t_max_ns", s.t_max_ns)?;
        if let Some(p) = s.p_t_w {
            positive("system.p_t_w", p)?;
        }
        if !s.snr_db.is_finite() || !s.n_c0_dbm_hz.is_finite() || !s.n_s0_dbm_hz.is_finite() {
            return Err(HarnessError::config("system.snr_db, system.n_c0_dbm_hz, system.n_s0_dbm_hz", "must be finite"));
        }
        if s.dictionary_h < s.tx.n_h.max(s.rx.n_h) || s.dictionary_v < s.tx.n_v.max(s.rx.n_v) {
            return Err(HarnessError::config(
                "system.dictionary_h, system.dictionary_v",
                "dictionary must have at least as many codewords per axis as array elements",
            ));
        }
        if !(s.rician_k > 0.0) {
            return Err(HarnessError::config("system.rician_k", "must be positive"));
        }
        at_least_one("scenario.users", self.scenario.users)?;
        at_least_one("scenario.targets", self.scenario.targets)?;
        if !(self.scenario.camera_noise_px >= 0.0) {
            return Err(HarnessError::config("scenario.camera_noise_px", "must be non-negative"));
        }
        let t = &self.timing;
        positive("timing.slot_ms", t.slot_ms)?;
        positive("timing.subframe_ms", t.subframe_ms)?;
        at_least_one("timing.n_sub", t.n_sub)?;
        let p = &self.pareto;
        at_least_one("pareto.gamma_points", p.gamma_points)?;
        positive("pareto.gamma_min", p.gamma_min)?;
        if !(p.gamma_max >= p.gamma_min && p.gamma_max.is_finite()) {
            return Err(HarnessError::config("pareto.gamma_max, pareto.gamma_min", "gamma_max must be finite and at least gamma_min"));
        }
        if p.thresholds.iter().any(|v| !(*v > 0.0)) {
            return Err(HarnessError::config("pareto.thresholds", "thresholds must be positive"));
        }
        at_least_one("tracking.t_bt", self.tracking.t_bt)?;
        if self.tracking.snr_db.is_nan() || self.tracking.snr_db == f64::NEG_INFINITY {
            return Err(HarnessError::config("tracking.snr_db", "must be a number or inf"));
        }
        at_least_one("search.starts", self.search.starts)?;
        at_least_one("search.evals_per_start", self.search.evals_per_start)?;
        positive("search.gamma_se", self.search.gamma_se)?;
        if !(self.search.eta_c >= 0.0) {
            return Err(HarnessError::config("search.eta_c", "must be non-negative"));
        }
        at_least_one("prop1.steps", self.prop1.steps)?;
        positive("prop1.max_deg", self.prop1.max_deg)?;
        at_least_one("prop2.grids", self.prop2.grids)?;
        if !(self.beam.scan >= 2 && self.beam.pattern_scan >= 2) {
            return Err(HarnessError::config("beam.scan, beam.pattern_scan", "need at least 2 points per axis"));
        }
        self.system_params()?;
        self.start_end()?;
        Ok(())
    }

    /// Core system parameters.
    pub fn system_params(&self) -> Result<SystemParams> {
        let s = &self.system;
        let fc = s.carrier_ghz * 1e9;
        let wrap = |field: &str, e: isac_core::IsacError| HarnessError::config(field, e.to_string());
        let tx = ArrayGeometry::new(s.tx.n_h, s.tx.n_v, s.tx.q_h, s.tx.q_v, fc).map_err(|e| wrap("system.tx", e))?;
        let rx = ArrayGeometry::fully_delayed(s.rx.n_h, s.rx.n_v, fc).map_err(|e| wrap("system.rx", e))?;
        let grid = SubcarrierGrid::new(fc, s.bandwidth_ghz * 1e9, s.subcarriers).map_err(|e| wrap("system.bandwidth_ghz", e))?;
        let mut p = SystemParams {
            tx,
            rx,
            grid,
            n_rf: s.n_rf,
            t_max: s.t_max_ns * 1e-9,
            p_t: 1.0,
            noise: NoiseConfig { n_c0: dbm_per_hz_to_watts(s.n_c0_dbm_hz), n_s0: dbm_per_hz_to_watts(s.n_s0_dbm_hz) },
            n_dh: s.dictionary_h,
            n_dv: s.dictionary_v,
            p_u: s.paths_per_user,
            k_f: s.rician_k,
        };
        p.p_t = s.p_t_w.unwrap_or_else(|| p.power_for_snr(s.snr_db));
        Ok(p)
    }

    /// Beam-pattern trajectory endpoints.
    pub fn start_end(&self) -> Result<(Direction, Direction)> {
        let b = &self.beam;
        let start = Direction::new(b.start_theta_deg.to_radians(), b.start_phi_deg.to_radians())
            .map_err(|e| HarnessError::config("beam.start_theta_deg, beam.start_phi_deg", e.to_string()))?;
        let end = Direction::new(b.end_theta_deg.to_radians(), b.end_phi_deg.to_radians())
            .map_err(|e| HarnessError::config("beam.end_theta_deg, beam.end_phi_deg", e.to_string()))?;
        Ok((start, end))
    }

    /// Tracking threshold pairing.
    pub fn pairing(&self) -> ThresholdPairing {
        match self.tracking.pairing {
            PairingName::Printed => ThresholdPairing::Printed,
            PairingName::Swapped => ThresholdPairing::Swapped,
        }
    }

    /// Bandwidth convention for trajectories.
    pub fn bandwidth_mode(&self) -> BandwidthMode {
        match self.tracking.bandwidth {
            BandwidthName::Effective => BandwidthMode::Effective,
            BandwidthName::Literal => BandwidthMode::Literal,
        }
    }

    /// Tracking SNR in dB, or `None` for noiseless probing.
    pub fn tracking_snr(&self) -> Option<f64> {
        self.tracking.snr_db.is_finite().then_some(self.tracking.snr_db)
    }

    /// Tracking configuration with noiseless probing.
    pub fn tracking_config(&self, params: &SystemParams) -> TrackingConfig {
        TrackingConfig {
            geom: params.tx,
            grid: params.grid,
            t_max: params.t_max,
            t_bt: self.tracking.t_bt,
            mode: self.bandwidth_mode(),
            pairing: self.pairing(),
            n_c0: 0.0,
            equalize_spreading: self.tracking.equalize_spreading,
        }
    }

    /// Loss weights of the precoder search.
    pub fn loss_params(&self) -> LossParams {
        LossParams { gamma_se: self.search.gamma_se, eta_c: self.search.eta_c }
    }

    /// Budget of the precoder search.
    pub fn search_budget(&self) -> SearchBudget {
        SearchBudget { starts: self.search.starts, evals_per_start: self.search.evals_per_start, tol: self.search.tol }
    }

    /// Slot budget of the frame-timing model.
    pub fn slot_budget(&self, tracking_slots: usize) -> SlotBudget {
        SlotBudget {
            tracking_slots,
            inference_slots: self.timing.inference_slots,
            ssb_slots: self.timing.ssb_slots,
            slot_s: self.timing.slot_ms * 1e-3,
            subframe_s: self.timing.subframe_ms * 1e-3,
            n_sub: self.timing.n_sub,
        }
    }

    /// Effective config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_config("pipeline = \"pareto-sweep\"\n", "mem").unwrap();
        assert_eq!(cfg, ExperimentConfig::for_pipeline(Pipeline::ParetoSweep));
        assert_eq!(cfg.system.n_rf, 6);
        assert_eq!(cfg.seeds, vec![0]);
    }

    #[test]
    fn unknown_key_reports_position() {
        let err = parse_config("pipeline = \"efficiency\"\n[system]\nbogus = 1\n", "mem").unwrap_err();
        match err {
            HarnessError::Parse { line, column, message, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, 1);
                assert!(message.contains("bogus"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn subarray_divisibility_names_both_fields() {
        let err = parse_config("pipeline = \"efficiency\"\n[system.tx]\nq_h = 3\n", "mem").unwrap_err();
        match err {
            HarnessError::Config { field, .. } => {
                assert!(field.contains("system.tx.q_h") && field.contains("system.tx.n_h"));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert_eq!(parse_config("pipeline = \"efficiency\"\n[system.tx]\nq_h = 3\n", "mem").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn empty_seed_list_rejected() {
        let err = parse_config("pipeline = \"efficiency\"\nseeds = []\n", "mem").unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "seeds"));
    }

    #[test]
    fn missing_scene_file_rejected() {
        let err = parse_config("pipeline = \"efficiency\"\nscene = \"/nonexistent/scene.toml\"\n", "mem").unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "scene"));
    }

    #[test]
    fn default_power_matches_reference_snr() {
        let p = ExperimentConfig::for_pipeline(Pipeline::LossOpt).system_params().unwrap();
        assert_eq!(p, SystemParams::desk());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn effective_config_round_trips(
            seeds in proptest::collection::vec(0u64..1_000_000, 1..4),
            snr in -20.0..30.0f64,
            t_max in 0.1..5.0f64,
            users in 1usize..4,
            pts in 1usize..40,
            tracking_snr in prop_oneof![Just(f64::INFINITY), -10.0..30.0f64],
            rf_only in any::<bool>(),
            thresholds in proptest::collection::vec(1e6..1e11f64, 0..3),
        ) {
            let mut cfg = ExperimentConfig::for_pipeline(Pipeline::LossOpt);
            cfg.seeds = seeds;
            cfg.system.snr_db = snr;
            cfg.system.t_max_ns = t_max;
            cfg.scenario.users = users;
            cfg.pareto.gamma_points = pts;
            cfg.pareto.thresholds = thresholds;
            cfg.tracking.snr_db = tracking_snr;
            cfg.timing.variant = if rf_only { VariantName::RfOnly } else { VariantName::VisionAided };
            let text = cfg.to_toml();
            let back = parse_config(&text, "mem").unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
