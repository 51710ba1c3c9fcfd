//! End-to-end pipelines, stage accounting and result emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use isac_core::arrays::{steering_from_cosines, Direction};
use isac_core::metrics::{isac_efficiency, FrameVariant};
use isac_core::pareto::{gamma_grid, loss_driven_precoder_search, ParetoContext, ParetoPoint};
use isac_core::precoder::{dump_precoder, pattern_argmax, subcarrier_pointing, trajectory_cosines, HybridPrecoder};
use isac_core::scenario::{desk_scenario, scenario_from_directions, scenario_from_scene, Scenario, SystemParams};
use isac_core::scene::{detect_candidates, fuse_detections, Category, Detection, FUSION_RADIUS_M};
use isac_core::tracking::{noise_psd_for_snr, sa_cp_bt, trace_csv, user_channel};
use isac_core::{IsacError, C64};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::checks::{
    beam_endpoints, median, monotone, prop1_seed, prop2_check, tracking_trials, TrackingTrial,
};
use crate::config::{ExperimentConfig, Pipeline};
use crate::error::{HarnessError, Result};
use crate::scenefile::load_scene;
use crate::timing::frame_timing_model;

/// Accumulated wall time of one named stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
    pub runs: usize,
}

/// Records stage timings and the first failing stage.
#[derive(Debug, Clone, Default)]
pub struct StageClock {
    pub stages: Vec<StageTiming>,
    pub failing_stage: Option<String>,
}

impl StageClock {
    /// Runs `f` as stage `name`, converting a core error into a stage failure.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> std::result::Result<T, IsacError>) -> Result<T> {
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed().as_secs_f64();
        match self.stages.iter_mut().find(|s| s.name == name) {
            Some(s) => {
                s.seconds += dt;
                s.runs += 1;
            }
            None => self.stages.push(StageTiming { name: name.to_string(), seconds: dt, runs: 1 }),
        }
        out.map_err(|source| {
            self.failing_stage.get_or_insert_with(|| name.to_string());
            HarnessError::Stage { stage: name.to_string(), source }
        })
    }
}

/// Output directory with a record of every file written.
#[derive(Debug)]
pub struct OutputDir {
    pub root: PathBuf,
    pub files: Vec<String>,
}

impl OutputDir {
    /// Creates the directory.
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    /// Writes `contents` to the relative path `rel`.
    pub fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(())
    }
}

/// CSV table built row by row.
#[derive(Debug, Clone)]
pub struct Csv {
    body: String,
}

impl Csv {
    /// Table with the given header.
    pub fn new(header: &[&str]) -> Self {
        Self { body: header.join(",") + "\n" }
    }

    /// Appends one row of already formatted cells.
    pub fn row(&mut self, cells: &[String]) {
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    /// Table text.
    pub fn text(&self) -> &str {
        &self.body
    }
}

/// Formats a number with the shortest round-tripping representation.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Outcome of a pipeline run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pipeline: Pipeline,
    pub out_dir: PathBuf,
    pub results: Value,
    /// Verdict of check pipelines; `None` for pure evaluation pipelines.
    pub pass: Option<bool>,
    pub stages: Vec<StageTiming>,
    pub files: Vec<String>,
}

/// Names of the deterministic result files of a run.
pub const RESULT_FILES: &[&str] = &["results.json"];

/// Runs the configured pipeline, writing outputs, `summary.json` and `manifest.json`.
///
/// Outputs written before a failure are kept and the manifest names the failing stage.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut out = OutputDir::create(&cfg.output_dir)?;
    let effective = cfg.to_toml();
    out.write("effective_config.toml", &effective)?;
    let mut clock = StageClock::default();
    let t0 = Instant::now();
    let body = match cfg.pipeline {
        Pipeline::ParetoSweep => pareto_sweep(cfg, &mut clock, &mut out),
        Pipeline::TrackingEval => tracking_eval(cfg, &mut clock, &mut out),
        Pipeline::Efficiency => efficiency(cfg, &mut clock, &mut out),
        Pipeline::Prop1Check => prop1(cfg, &mut clock, &mut out),
        Pipeline::Prop2Check => prop2(cfg, &mut clock, &mut out),
        Pipeline::BeamPattern => beam_pattern(cfg, &mut clock, &mut out),
        Pipeline::LossOpt => loss_opt(cfg, &mut clock, &mut out),
    };
    let elapsed = t0.elapsed().as_secs_f64();
    let (status, error, results, pass) = match &body {
        Ok((results, pass)) => ("ok", Value::Null, results.clone(), *pass),
        Err(e) => {
            if clock.failing_stage.is_none() {
                clock.failing_stage = Some("write".into());
            }
            ("failed", json!(e.to_string()), Value::Null, None)
        }
    };
    if body.is_ok() {
        let text = serde_json::to_string_pretty(&results).expect("results serialise") + "\n";
        out.write("results.json", &text)?;
    }
    let summary = json!({
        "pipeline": cfg.pipeline.name(),
        "seeds": cfg.seeds,
        "status": status,
        "error": error,
        "failing_stage": clock.failing_stage,
        "pass": pass,
        "total_seconds": elapsed,
        "stages": clock.stages,
        "files": out.files,
    });
    out.write("summary.json", &(serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n"))?;
    write_manifest(cfg, &effective, &clock, &mut out)?;
    body.map(|(results, pass)| RunOutcome {
        pipeline: cfg.pipeline,
        out_dir: out.root.clone(),
        results,
        pass,
        stages: clock.stages.clone(),
        files: out.files.clone(),
    })
}

fn write_manifest(cfg: &ExperimentConfig, effective: &str, clock: &StageClock, out: &mut OutputDir) -> Result<()> {
    let mut files = Vec::new();
    for rel in &out.files {
        let path = out.root.join(rel);
        let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
        files.push(json!({ "path": rel, "sha256": sha256_hex(&bytes) }));
    }
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "pipeline": cfg.pipeline.name(),
        "seeds": cfg.seeds,
        "config_sha256": sha256_hex(effective.as_bytes()),
        "config_file": "effective_config.toml",
        "versions": {
            "isac-harness": env!("CARGO_PKG_VERSION"),
            "isac-core": isac_core::VERSION,
        },
        "timestamp_unix": timestamp,
        "failing_stage": clock.failing_stage,
        "files": files,
    });
    out.write("manifest.json", &(serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n"))
}

type Body = Result<(Value, Option<bool>)>;

/// Scenario for a seed: the configured scene file, or a seeded random desk scene.
pub fn seed_scenario(cfg: &ExperimentConfig, params: SystemParams, seed: u64) -> Result<isac_core::Result<Scenario>> {
    Ok(match &cfg.scene {
        Some(path) => {
            let scene = load_scene(path)?;
            scenario_from_scene(params, scene, seed)
        }
        None => desk_scenario(params, cfg.scenario.users, cfg.scenario.targets, seed),
    })
}

fn pareto_row(csv: &mut Csv, seed: u64, p: &ParetoPoint) {
    csv.row(&[
        seed.to_string(),
        num(p.gamma),
        num(p.se),
        num(p.crb),
        num(p.se_eq29),
        num(p.crb_eq30),
        num(p.cor),
        p.residual.map_or(String::new(), num),
        num(p.se_no_interference),
        p.feasible.to_string(),
    ]);
}

fn pareto_sweep(cfg: &ExperimentConfig, clock: &mut StageClock, out: &mut OutputDir) -> Body {
    let params = cfg.system_params()?;
    let mut csv = Csv::new(&[
        "seed", "gamma", "se_exact", "crb_exact", "se_eq29", "crb_eq30", "cor", "residual", "se_no_interference", "feasible",
    ]);
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let scn = seed_scenario(cfg, params, seed)?;
        let scn = clock.stage("scenario", || scn)?;
        let ctx = clock.stage("model", || ParetoContext::new(&scn))?;
        let pts = clock.stage("sweep", || {
            if cfg.pareto.thresholds.is_empty() {
                ctx.sweep(&gamma_grid(cfg.pareto.gamma_points, cfg.pareto.gamma_min, cfg.pareto.gamma_max), cfg.pareto.factorize)
            } else {
                ctx.sweep_thresholds(&cfg.pareto.thresholds)
            }
        })?;
        for p in &pts {
            pareto_row(&mut csv, seed, p);
        }
        let se: Vec<f64> = pts.iter().map(|p| p.se).collect();
        let crb: Vec<f64> = pts.iter().map(|p| p.crb).collect();
        per_seed.push(json!({
            "seed": seed,
            "cor": ctx.cor,
            "points": pts.len(),
            "se_monotone": monotone(&se, 1e-9),
            "crb_monotone": monotone(&crb, 1e-9),
            "max_residual": pts.iter().filter_map(|p| p.residual).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.max(r)))),
        }));
        out.write("pareto.csv", csv.text())?;
    }
    out.write("pareto.csv", csv.text())?;
    Ok((json!({ "pipeline": "pareto-sweep", "seeds": per_seed }), None))
}

/// Detections fused over every camera of a scenario's scene.
pub fn detect_all(scn: &Scenario, noise_px: f64, seed: u64) -> isac_core::Result<Vec<Detection>> {
    let per_camera = scn
        .scene
        .cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| detect_candidates(&scn.scene, cam, noise_px, seed.wrapping_mul(31).wrapping_add(i as u64)))
        .collect::<isac_core::Result<Vec<_>>>()?;
    Ok(fuse_detections(&per_camera, FUSION_RADIUS_M))
}

/// Entity indices of one category, in scene order.
fn entity_indices(scn: &Scenario, cat: Category) -> Vec<usize> {
    scn.scene.entities.iter().enumerate().filter(|(_, e)| e.category == cat).map(|(i, _)| i).collect()
}

/// Detection of every entity of a category, or a detection-stage error naming the first miss.
fn detections_for(scn: &Scenario, dets: &[Detection], cat: Category) -> isac_core::Result<Vec<Detection>> {
    entity_indices(scn, cat)
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            dets.iter()
                .find(|d| d.entity == e)
                .copied()
                .ok_or_else(|| IsacError::DegenerateScene(format!("{cat:?} {k} was not detected by any camera")))
        })
        .collect()
}

/// Tracking outcome for one user of a scene.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserTrack {
    pub user: usize,
    pub phi: f64,
    pub theta: f64,
    pub phi_hat: f64,
    pub theta_hat: f64,
    pub phi_cross: f64,
    pub phi_step: f64,
    pub theta_step: f64,
    pub slots_used: usize,
    pub snr_db: f64,
    #[serde(skip)]
    pub trace: String,
    pub dist: f64,
}

/// Detects and tracks every user of a scenario.
pub fn detect_and_track(cfg: &ExperimentConfig, scn: &Scenario, seed: u64, clock: &mut StageClock) -> Result<(Vec<UserTrack>, Vec<Detection>)> {
    let dets = clock.stage("detect", || detect_all(scn, cfg.scenario.camera_noise_px, seed))?;
    let user_dets = clock.stage("detect", || detections_for(scn, &dets, Category::User))?;
    let target_dets = clock.stage("detect", || detections_for(scn, &dets, Category::Target))?;
    let base = cfg.tracking_config(&scn.params);
    let tracks = clock.stage("track", || {
        user_dets
            .iter()
            .enumerate()
            .map(|(u, d)| {
                let h_u = user_channel(&scn.comm, u);
                let mut tc = base;
                tc.n_c0 = cfg.tracking_snr().map_or(0.0, |s| noise_psd_for_snr(&h_u, s, &tc.geom, &tc.grid));
                let res = sa_cp_bt(d.range, &h_u, &tc, seed.wrapping_mul(1_000_003).wrapping_add(u as u64))?;
                let truth = scn.users[u].los.dir;
                Ok(UserTrack {
                    user: u,
                    phi: truth.phi,
                    theta: truth.theta,
                    phi_hat: res.phi_hat,
                    theta_hat: res.theta_hat,
                    phi_cross: res.phi_cross,
                    phi_step: res.phi_step,
                    theta_step: res.theta_step,
                    slots_used: res.slots_used,
                    snr_db: res.snr_db,
                    trace: trace_csv(&res.trace),
                    dist: d.range.dist,
                })
            })
            .collect::<isac_core::Result<Vec<_>>>()
    })?;
    Ok((tracks, target_dets))
}

fn trial_row(csv: &mut Csv, seed: u64, label: &str, t: &TrackingTrial) {
    csv.row(&[
        seed.to_string(),
        label.to_string(),
        t.trial.to_string(),
        num(t.phi),
        num(t.theta),
        num(t.phi_hat),
        num(t.theta_hat),
        num(t.phi_cross),
        num(t.phi_step),
        num(t.theta_step),
        t.slots_used.to_string(),
        num(t.snr_db),
    ]);
}

fn tracking_eval(cfg: &ExperimentConfig, clock: &mut StageClock, out: &mut OutputDir) -> Body {
    let params = cfg.system_params()?;
    let mut tracks_csv = Csv::new(&[
        "seed", "user", "phi", "theta", "phi_hat", "theta_hat", "phi_cross", "phi_step", "theta_step", "slots_used", "snr_db",
    ]);
    let mut trials_csv = Csv::new(&[
        "seed", "condition", "trial", "phi", "theta", "phi_hat", "theta_hat", "phi_cross", "phi_step", "theta_step", "slots_used",
        "snr_db",
    ]);
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let scn = seed_scenario(cfg, params, seed)?;
        let scn = clock.stage("scenario", || scn)?;
        let (tracks, _) = detect_and_track(cfg, &scn, seed, clock)?;
        for t in &tracks {
            tracks_csv.row(&[
                seed.to_string(),
                t.user.to_string(),
                num(t.phi),
                num(t.theta),
                num(t.phi_hat),
                num(t.theta_hat),
                num(t.phi_cross),
                num(t.phi_step),
                num(t.theta_step),
                t.slots_used.to_string(),
                num(t.snr_db),
            ]);
            if cfg.tracking.write_traces {
                out.write(&format!("traces/seed-{seed}-user-{}.csv", t.user), &t.trace)?;
            }
        }
        let tc = cfg.tracking_config(&params);
        let noiseless = clock.stage("trials", || tracking_trials(&tc, cfg.tracking.trials, None, seed))?;
        let noisy = match cfg.tracking_snr() {
            Some(s) => clock.stage("trials", || tracking_trials(&tc, cfg.tracking.trials, Some(s), seed ^ 0x9e37))?,
            None => Vec::new(),
        };
        for t in &noiseless {
            trial_row(&mut trials_csv, seed, "noiseless", t);
        }
        for t in &noisy {
            trial_row(&mut trials_csv, seed, "noisy", t);
        }
        let within = noiseless.iter().filter(|t| t.within_half_step()).count();
        let steps = |f: fn(&TrackingTrial) -> f64| median(&noisy.iter().map(f).collect::<Vec<_>>());
        per_seed.push(json!({
            "seed": seed,
            "scene_users": tracks.len(),
            "noiseless_trials": noiseless.len(),
            "noiseless_within_half_step": within,
            "noiseless_cross_within_half_step": noiseless.iter().filter(|t| t.cross_within_half_step()).count(),
            "noisy_snr_db": cfg.tracking_snr(),
            "noisy_median_phi_err_steps": if noisy.is_empty() { Value::Null } else { json!(steps(TrackingTrial::phi_err_steps)) },
            "noisy_median_theta_err_steps": if noisy.is_empty() { Value::Null } else { json!(steps(TrackingTrial::theta_err_steps)) },
        }));
        out.write("tracking.csv", tracks_csv.text())?;
        out.write("tracking_trials.csv", trials_csv.text())?;
    }
    out.write("tracking.csv", tracks_csv.text())?;
    out.write("tracking_trials.csv", trials_csv.text())?;
    Ok((json!({ "pipeline": "tracking-eval", "seeds": per_seed }), None))
}

const VARIANTS: [(FrameVariant, &str); 2] = [(FrameVariant::RfOnly, "rf-only"), (FrameVariant::VisionAided, "vision-aided")];

fn efficiency(cfg: &ExperimentConfig, clock: &mut StageClock, out: &mut OutputDir) -> Body {
    let params = cfg.system_params()?;
    let mut csv = Csv::new(&[
        "seed", "variant", "t_ssb_s", "t_rs_s", "t_data_s", "n_sub", "t_frame_s", "se_star", "crb_star", "se_bar", "crb_bar",
        "se_ratio", "crb_ratio",
    ]);
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let (se, crb) = match (cfg.efficiency.se_star, cfg.efficiency.crb_star) {
            (Some(se), Some(crb)) => (se, crb),
            _ => {
                let scn = seed_scenario(cfg, params, seed)?;
                let scn = clock.stage("scenario", || scn)?;
                let pt = clock.stage("sweep", || ParetoContext::new(&scn)?.point(1.0, false))?;
                (cfg.efficiency.se_star.unwrap_or(pt.se), cfg.efficiency.crb_star.unwrap_or(pt.crb))
            }
        };
        for (variant, name) in VARIANTS {
            let timing = clock.stage("timing", || frame_timing_model(variant, cfg.slot_budget(cfg.timing.tracking_slots)))?;
            let (se_bar, crb_bar) = clock.stage("efficiency", || isac_efficiency(se, crb, &timing))?;
            csv.row(&[
                seed.to_string(),
                name.to_string(),
                num(timing.t_ssb),
                num(timing.t_rs),
                num(timing.t_data),
                timing.n_sub.to_string(),
                num(timing.t_frame()),
                num(se),
                num(crb),
                num(se_bar),
                num(crb_bar),
                num(se_bar / se),
                num(crb_bar / crb),
            ]);
            rows.push(json!({
                "seed": seed, "variant": name, "se_star": se, "crb_star": crb,
                "se_bar": se_bar, "crb_bar": crb_bar, "se_ratio": se_bar / se, "crb_ratio": crb_bar / crb,
            }));
        }
    }
    out.write("efficiency.csv", csv.text())?;
    Ok((json!({ "pipeline": "efficiency", "configured_variant": cfg.timing.variant, "rows": rows }), None))
}

fn prop1(cfg: &ExperimentConfig, clock: &mut StageClock, out: &mut OutputDir) -> Body {
    let params = cfg.system_params()?;
    let p = &cfg.prop1;
    let mut rows_csv = Csv::new(&["seed", "separation_deg", "cor", "se", "crb"]);
    let mut verdict_csv = Csv::new(&["seed", "steps", "cor_non_increasing", "se_ok_steps", "crb_ok_steps", "pass"]);
    let mut verdicts = Vec::new();
    for &seed in &cfg.seeds {
        let (rows, v) = clock.stage("separation", || prop1_seed(params, seed, p.steps, p.max_deg, p.gamma, p.min_ok_steps))?;
        for r in &rows {
            rows_csv.row(&[seed.to_string(), num(r.separation_deg), num(r.cor), num(r.se), num(r.crb)]);
        }
        verdict_csv.row(&[
            seed.to_string(),
            v.steps.to_string(),
            v.cor_non_increasing.to_string(),
            v.se_ok_steps.to_string(),
            v.crb_ok_steps.to_string(),
            v.pass.to_string(),
        ]);
        verdicts.push(v);
        out.write("prop1.csv", rows_csv.text())?;
    }
    out.write("prop1.csv", rows_csv.text())?;
    out.write("prop1_verdict.csv", verdict_csv.text())?;
    let pass = verdicts.iter().all(|v| v.pass);
    Ok((json!({ "pipeline": "prop1-check", "seeds": verdicts, "pass": pass }), Some(pass)))
}

fn prop2(cfg: &ExperimentConfig, clock: &mut StageClock, out: &mut OutputDir) -> Body {
    let params = cfg.system_params()?;
    let seed = cfg.seeds[0];
    let rep = clock.stage("monotonicity", || {
        prop2_check(
            &params.grid,
            &params.tx,
            params.t_max,
            cfg.bandwidth_mode(),
            cfg.pairing(),
            cfg.prop2.grids,
            cfg.prop2.spearman_max,
            seed,
        )
    })?;
    let mut csv = Csv::new(&["grid", "phi_min", "phi_max", "theta_min", "theta_max", "user_phi", "user_theta", "spearman"]);
    for r in &rep.rows {
        csv.row(&[
            r.index.to_string(),
            num(r.phi_min),
            num(r.phi_max),
            num(r.theta_min),
            num(r.theta_max),
            num(r.user_phi),
            num(r.user_theta),
            num(r.spearman),
        ]);
    }
    out.write("prop2.csv", csv.text())?;
    Ok((
        json!({
            "pipeline": "prop2-check",
            "seed": seed,
            "grids": rep.rows.len(),
            "worst_spearman": rep.worst_spearman,
            "spearman_max": rep.spearman_max,
            "counterexample": rep.counterexample,
            "pass": rep.pass,
        }),
        Some(rep.pass),
    ))
}

fn beam_pattern(cfg: &ExperimentConfig, clock: &mut StageClock, out: &mut OutputDir) -> Body {
    let params = cfg.system_params()?;
    let (start, end) = cfg.start_end()?;
    let (grid, geom) = (params.grid, params.tx);
    let (traj, rep) = clock.stage("trajectory", || {
        beam_endpoints(start, end, &grid, &geom, params.t_max, cfg.bandwidth_mode(), cfg.beam.scan)
    })?;
    let mut ttd = Csv::new(&["q_h", "q_v", "delay_ps"]);
    for i in 0..geom.q_h {
        for j in 0..geom.q_v {
            ttd.row(&[i.to_string(), j.to_string(), format!("{:.9}", traj.ttd[(i, j)] * 1e12)]);
        }
    }
    out.write("trajectory_ttd.csv", ttd.text())?;
    let mut pointing = Csv::new(&["m", "freq_hz", "phi", "theta", "u", "v", "argmax_u", "argmax_v"]);
    clock.stage("pattern", || {
        for m in 0..grid.m_count {
            let d = subcarrier_pointing(&traj, m, &grid);
            let (u, v) = trajectory_cosines(&traj, m, &grid);
            let (au, av) = pattern_argmax(&traj.beam(m, &grid, &geom), grid.freq(m), &geom, cfg.beam.scan);
            pointing.row(&[m.to_string(), num(grid.freq(m)), num(d.phi), num(d.theta), num(u), num(v), num(au), num(av)]);
        }
        Ok(())
    })?;
    out.write("pointing.csv", pointing.text())?;
    let mut pattern = Csv::new(&["m", "u", "v", "gain"]);
    let n = cfg.beam.pattern_scan;
    let picks = [0, grid.m_count / 2, grid.m_count - 1];
    clock.stage("pattern", || {
        for &m in picks.iter().take(if grid.m_count >= 3 { 3 } else { grid.m_count }) {
            let beam = traj.beam(m, &grid, &geom);
            let ratio = grid.freq(m) / geom.f_c;
            let norm = (geom.n_elements() as f64).sqrt();
            for i in 0..n {
                for j in 0..n {
                    let u = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                    let v = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                    let a = steering_from_cosines(u, v, ratio, &geom);
                    let g: C64 = a.dotc(&beam);
                    pattern.row(&[m.to_string(), num(u), num(v), num(g.norm() / norm)]);
                }
            }
        }
        Ok(())
    })?;
    out.write("pattern.csv", pattern.text())?;
    Ok((
        json!({
            "pipeline": "beam-pattern",
            "start": { "theta": start.theta, "phi": start.phi },
            "end": { "theta": end.theta, "phi": end.phi },
            "endpoint_check": rep,
            "ttd_span_s": traj.span(),
            "pass": rep.pass,
        }),
        Some(rep.pass),
    ))
}

/// Outcome of one loss-driven precoder search seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossOptRecord {
    pub seed: u64,
    pub users_tracked: usize,
    pub tracking_slots: usize,
    pub initial_losses: Vec<f64>,
    pub final_losses: Vec<f64>,
    pub best_start: usize,
    pub loss: f64,
    pub gamma: f64,
    pub se: f64,
    pub crb: f64,
    pub cor: f64,
    pub crb_isotropic: f64,
    pub cor_star: f64,
    pub crb_min: f64,
    pub evaluations: usize,
    /// Final loss no larger than any start's initial loss.
    pub final_below_initial: bool,
    pub beats_isotropic: bool,
    pub se_bar: f64,
    pub crb_bar: f64,
}

/// Detect, track, build priors, search, evaluate and account frame efficiency for one seed.
pub fn loss_opt_seed(cfg: &ExperimentConfig, seed: u64, clock: &mut StageClock) -> Result<(LossOptRecord, HybridPrecoder)> {
    let params = cfg.system_params()?;
    let truth = seed_scenario(cfg, params, seed)?;
    let truth = clock.stage("scenario", || truth)?;
    let (tracks, target_dets) = detect_and_track(cfg, &truth, seed, clock)?;
    let prior = clock.stage("priors", || {
        let users: Vec<(Direction, f64)> =
            tracks.iter().map(|t| (Direction { theta: t.theta_hat, phi: t.phi_hat }, t.dist)).collect();
        let targets: Vec<(Direction, f64)> = target_dets.iter().map(|d| (d.range.center(), d.range.dist)).collect();
        scenario_from_directions(params, &users, &targets, seed)
    })?;
    let outcome = clock.stage("search", || {
        loss_driven_precoder_search(&truth, &prior, cfg.loss_params(), cfg.search_budget(), seed)
    })?;
    let (initial_min, final_min) = clock.stage("metrics", || {
        let i = outcome.initial_losses.iter().copied().fold(f64::INFINITY, f64::min);
        let f = outcome.final_losses.iter().copied().fold(f64::INFINITY, f64::min);
        Ok((i, f))
    })?;
    let tracking_slots: usize = tracks.iter().map(|t| t.slots_used).sum();
    let timing = clock.stage("efficiency", || frame_timing_model(cfg.timing.variant.into(), cfg.slot_budget(tracking_slots)))?;
    let m = outcome.metrics;
    let (se_bar, crb_bar) = clock.stage("efficiency", || isac_efficiency(m.se, m.crb, &timing))?;
    let record = LossOptRecord {
        seed,
        users_tracked: tracks.len(),
        tracking_slots,
        initial_losses: outcome.initial_losses.clone(),
        final_losses: outcome.final_losses.clone(),
        best_start: outcome.best_start,
        loss: m.loss,
        gamma: outcome.gamma,
        se: m.se,
        crb: m.crb,
        cor: m.cor,
        crb_isotropic: outcome.crb_isotropic,
        cor_star: outcome.normalizers.cor_star,
        crb_min: outcome.normalizers.crb_min,
        evaluations: outcome.evaluations,
        final_below_initial: final_min <= initial_min,
        beats_isotropic: m.crb < outcome.crb_isotropic,
        se_bar,
        crb_bar,
    };
    Ok((record, outcome.precoder))
}

fn loss_opt(cfg: &ExperimentConfig, clock: &mut StageClock, out: &mut OutputDir) -> Body {
    let mut csv = Csv::new(&[
        "seed", "loss", "gamma", "se", "crb", "cor", "crb_isotropic", "cor_star", "crb_min", "initial_loss_min", "final_loss_min",
        "final_below_initial", "beats_isotropic", "tracking_slots", "se_bar", "crb_bar", "evaluations",
    ]);
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let (r, precoder) = loss_opt_seed(cfg, seed, clock)?;
        let imin = r.initial_losses.iter().copied().fold(f64::INFINITY, f64::min);
        let fmin = r.final_losses.iter().copied().fold(f64::INFINITY, f64::min);
        csv.row(&[
            seed.to_string(),
            num(r.loss),
            num(r.gamma),
            num(r.se),
            num(r.crb),
            num(r.cor),
            num(r.crb_isotropic),
            num(r.cor_star),
            num(r.crb_min),
            num(imin),
            num(fmin),
            r.final_below_initial.to_string(),
            r.beats_isotropic.to_string(),
            r.tracking_slots.to_string(),
            num(r.se_bar),
            num(r.crb_bar),
            r.evaluations.to_string(),
        ]);
        out.write(&format!("precoders/seed-{seed}.txt"), &dump_precoder(&precoder))?;
        out.write("loss_opt.csv", csv.text())?;
        records.push(r);
    }
    out.write("loss_opt.csv", csv.text())?;
    let n = records.len().max(1) as f64;
    let below = records.iter().filter(|r| r.final_below_initial).count() as f64 / n;
    let beats = records.iter().filter(|r| r.beats_isotropic).count() as f64 / n;
    Ok((
        json!({
            "pipeline": "loss-opt",
            "seeds": records,
            "fraction_final_below_initial": below,
            "fraction_beats_isotropic": beats,
        }),
        None,
    ))
}
