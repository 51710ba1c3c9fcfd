//! Acceptance suite: one PASS/FAIL line per criterion with measured runtime.
//!
//! Criteria that cannot be met print FAIL with their measured figures; the suite itself only
//! fails when a check cannot be evaluated at all.

use std::path::{Path, PathBuf};
use std::time::Instant;

use isac_core::arrays::Direction;
use isac_core::channels::{target_response_from_paths, TargetPath};
use isac_core::metrics::{crb, fisher_information, isac_efficiency, FrameTiming, FrameVariant};
use isac_core::pareto::random_feasible_covariances;
use isac_core::precoder::{hybrid_factorize, random_precoder, BandwidthMode, FactorizeOptions};
use isac_core::scenario::{desk_scenario, SystemParams};
use isac_core::scene::{pixel_to_world, rotation_matrix, world_to_pixel, CameraModel};
use isac_core::tracking::{ThresholdPairing, TrackingConfig};
use isac_core::{CMat, C64};
use isac_harness::checks::{beam_endpoints, median, pareto_sanity, prop1_seed, prop2_check, tracking_trials, TrackingTrial};
use isac_harness::config::{ExperimentConfig, Pipeline};
use isac_harness::pipelines::{loss_opt_seed, run_pipeline, StageClock};
use isac_harness::timing::{frame_timing_model, SlotBudget};
use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String), String>;

struct Line {
    index: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
    limit_s: Option<f64>,
}

fn run(index: usize, title: &'static str, limit_s: Option<f64>, f: impl FnOnce() -> Verdict) -> Line {
    let t0 = Instant::now();
    let out = f();
    let seconds = t0.elapsed().as_secs_f64();
    let (mut pass, detail) = match out {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    if limit_s.is_some_and(|l| seconds >= l) {
        pass = false;
    }
    let line = Line { index, title, pass, detail, seconds, limit_s };
    print_line(&line);
    line
}

fn print_line(l: &Line) {
    let limit = l.limit_s.map_or(String::new(), |s| format!(" (limit {s} s)"));
    println!(
        "criterion {}: {}: {}; {}; runtime {:.2} s{}",
        l.index,
        if l.pass { "PASS" } else { "FAIL" },
        l.title,
        l.detail,
        l.seconds,
        limit
    );
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn squint_endpoints() -> Verdict {
    let p = SystemParams::desk();
    let pairs = [
        ((115.0, -10.0), (120.0, 10.0)),
        ((100.0, 0.0), (110.0, 20.0)),
        ((125.0, 15.0), (118.0, -5.0)),
    ];
    let mut worst = 0.0f64;
    let mut half = 0.0;
    let mut all = true;
    for ((t0, p0), (t1, p1)) in pairs {
        let a = Direction { theta: f64::to_radians(t0), phi: f64::to_radians(p0) };
        let b = Direction { theta: f64::to_radians(t1), phi: f64::to_radians(p1) };
        let (_, rep) = beam_endpoints(a, b, &p.grid, &p.tx, p.t_max, BandwidthMode::Effective, 512).map_err(err)?;
        worst = worst.max(rep.start_du).max(rep.start_dv).max(rep.end_du).max(rep.end_dv);
        half = rep.half_step;
        all &= rep.pass;
    }
    Ok((all, format!("{} trajectories; worst cosine offset {worst:.3e} vs half step {half:.3e}", pairs.len())))
}

fn monotonicity() -> Verdict {
    let p = SystemParams::desk();
    let rep = prop2_check(&p.grid, &p.tx, p.t_max, BandwidthMode::Effective, ThresholdPairing::Printed, 50, -0.95, 0)
        .map_err(err)?;
    let below = rep.rows.iter().filter(|r| r.spearman <= rep.spearman_max).count();
    let cx = match &rep.counterexample {
        Some(a) => format!(
            "ambiguity at height {}x threshold: argmax subcarrier {} vs nearest {}",
            a.height_over_threshold, a.argmax_subcarrier, a.nearest_subcarrier
        ),
        None => "no ambiguity counterexample found".into(),
    };
    Ok((
        rep.pass,
        format!("{below}/{} grids with Spearman <= {}; worst {:.3}; {cx}", rep.rows.len(), rep.spearman_max, rep.worst_spearman),
    ))
}

fn tracking_accuracy() -> Verdict {
    let p = SystemParams::desk();
    let cfg = TrackingConfig {
        geom: p.tx,
        grid: p.grid,
        t_max: p.t_max,
        t_bt: 1,
        mode: BandwidthMode::Effective,
        pairing: ThresholdPairing::Printed,
        n_c0: 0.0,
        equalize_spreading: true,
    };
    let clean = tracking_trials(&cfg, 200, None, 11).map_err(err)?;
    let noisy = tracking_trials(&cfg, 200, Some(10.0), 12).map_err(err)?;
    let within = clean.iter().filter(|t| t.within_half_step()).count();
    let cross = clean.iter().filter(|t| t.cross_within_half_step()).count();
    let med = |f: fn(&TrackingTrial) -> f64| median(&noisy.iter().map(f).collect::<Vec<_>>());
    let (mp, mc, mt) = (med(TrackingTrial::phi_err_steps), med(TrackingTrial::phi_cross_err_steps), med(TrackingTrial::theta_err_steps));
    let pass = within == clean.len() && mp <= 1.0 && mt <= 1.0;
    Ok((
        pass,
        format!(
            "noiseless within half step {within}/{} (cross-corrected azimuth {cross}/{}); 10 dB median error in steps phi {mp:.2}, cross phi {mc:.2}, theta {mt:.2}",
            clean.len(),
            clean.len()
        ),
    ))
}

/// Finite-difference FIM from the dense per-subcarrier responses and the trace form of the
/// Gaussian information.
fn fd_fim(targets: &[TargetPath], r: &[CMat], params: &SystemParams, h: f64) -> Result<DMatrix<f64>, String> {
    let k = targets.len();
    let m_count = params.grid.m_count;
    let mut derivs: Vec<Vec<CMat>> = Vec::with_capacity(2 * k);
    for p in 0..2 * k {
        let shifted = |s: f64| -> Result<Vec<CMat>, String> {
            let mut t = targets.to_vec();
            if p < k {
                t[p].dir.theta += s;
            } else {
                t[p - k].dir.phi += s;
            }
            let resp = target_response_from_paths(&t, &params.grid, &params.tx, &params.rx).map_err(err)?;
            Ok(resp.per_subcarrier.iter().map(|g| g.dense()).collect())
        };
        let plus = shifted(h)?;
        let minus = shifted(-h)?;
        derivs.push((0..m_count).map(|m| (&plus[m] - &minus[m]) / C64::new(2.0 * h, 0.0)).collect());
    }
    let scale = 2.0 / (params.grid.bandwidth * params.noise.n_s0);
    let mut j = DMatrix::zeros(2 * k, 2 * k);
    for p in 0..2 * k {
        for q in 0..2 * k {
            let mut acc = 0.0;
            for m in 0..m_count {
                acc += (&derivs[p][m] * &r[m] * derivs[q][m].adjoint()).trace().re;
            }
            j[(p, q)] = scale * acc;
        }
    }
    Ok(j)
}

fn fim_correctness() -> Verdict {
    let params = SystemParams::desk();
    let mut worst = 0.0f64;
    let mut worst_halving = 0.0f64;
    for seed in 0..20u64 {
        let scn = desk_scenario(params, 2, 2, 1000 + seed).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_feasible_covariances(params.tx.n_elements(), params.p_t, params.grid.m_count, &mut rng);
        let fim = fisher_information(&scn.resp, &r, params.noise.n_s0, &params.grid, &params.tx, &params.rx).map_err(err)?;
        let oracle = fd_fim(&scn.resp.targets, &r, &params, 1e-6)?;
        worst = worst.max((&fim.matrix - &oracle).norm() / oracle.norm());
        let doubled: Vec<CMat> = r.iter().map(|x| x * C64::new(2.0, 0.0)).collect();
        let fim2 = fisher_information(&scn.resp, &doubled, params.noise.n_s0, &params.grid, &params.tx, &params.rx).map_err(err)?;
        let (c1, c2) = (crb(&fim).map_err(err)?, crb(&fim2).map_err(err)?);
        worst_halving = worst_halving.max((c2 / c1 - 0.5).abs() / 0.5);
    }
    Ok((
        worst <= 1e-4 && worst_halving <= 1e-9,
        format!("20 scenes; worst relative Frobenius error {worst:.2e}; worst CRB halving error {worst_halving:.2e}"),
    ))
}

fn pareto() -> Verdict {
    let params = SystemParams::desk();
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 0..5u64 {
        let (_, s) = pareto_sanity(params, 2, 2, seed, 25, 100).map_err(err)?;
        if s.pass {
            passed += 1;
        } else {
            notes.push(format!(
                "seed {seed} se_monotone={} crb_monotone={} trace_err={:.1e} min_eig={:.1e} dominated {}/{}",
                s.se_monotone, s.crb_monotone, s.max_trace_error, s.min_eigenvalue, s.dominated, s.random_trials
            ));
        }
    }
    let extra = if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) };
    Ok((passed == 5, format!("{passed}/5 scenes satisfy monotonicity, feasibility and dominance{extra}")))
}

fn separation_trend() -> Verdict {
    let params = SystemParams::desk();
    let mut passed = 0;
    let mut cor_ok = 0;
    let mut se_min = usize::MAX;
    let mut crb_min = usize::MAX;
    for seed in 0..10u64 {
        let (_, v) = prop1_seed(params, seed, 20, 40.0, 1.0, 18).map_err(err)?;
        passed += usize::from(v.pass);
        cor_ok += usize::from(v.cor_non_increasing);
        se_min = se_min.min(v.se_ok_steps);
        crb_min = crb_min.min(v.crb_ok_steps);
    }
    Ok((
        passed == 10,
        format!("{passed}/10 seeds pass; Cor non-increasing in {cor_ok}/10; fewest ordered steps SE {se_min}/20, CRB {crb_min}/20"),
    ))
}

fn factorization() -> Verdict {
    let params = SystemParams::desk();
    let (geom, grid, n_rf, t_max) = (params.tx, params.grid, params.n_rf, params.t_max);
    let p_t = 2.0;
    let mut worst_residual = 0.0f64;
    let mut monotone = true;
    let mut constraints = true;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_precoder(&geom, &grid, n_rf, n_rf, t_max, p_t, &mut rng);
        let opts = FactorizeOptions { seed, ..FactorizeOptions::default() };
        let (p, rep) = hybrid_factorize(&truth.full_all(&grid), &grid, &geom, n_rf, t_max, p_t, opts).map_err(err)?;
        worst_residual = worst_residual.max(rep.residual);
        monotone &= rep.objective_history.windows(2).all(|w| w[1] <= w[0]);
        constraints &= p.ttd.iter().all(|&t| (0.0..=t_max).contains(&t));
        constraints &= p.ps().iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12);
        for m in 0..grid.m_count {
            let power: f64 = p.full(m, &grid).iter().map(|z| z.norm_sqr()).sum();
            let target = p_t / grid.m_count as f64;
            constraints &= (power - target).abs() <= 1e-9 * target;
        }
    }
    Ok((
        worst_residual <= 1e-6 && monotone && constraints,
        format!("5 precoders; worst residual {worst_residual:.2e}; objective non-increasing {monotone}; constraints exact {constraints}"),
    ))
}

fn loss_search() -> Verdict {
    let mut cfg = ExperimentConfig::for_pipeline(Pipeline::LossOpt);
    cfg.seeds = (0..100).collect();
    let mut below = 0;
    let mut beats = 0;
    let mut errors = Vec::new();
    let mut clock = StageClock::default();
    for &seed in &cfg.seeds {
        match loss_opt_seed(&cfg, seed, &mut clock) {
            Ok((r, _)) => {
                below += usize::from(r.final_below_initial);
                beats += usize::from(r.beats_isotropic);
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    let n = cfg.seeds.len();
    let pass = below * 100 >= 95 * n && beats * 100 >= 90 * n;
    let extra = if errors.is_empty() { String::new() } else { format!("; {} seeds errored, first {}", errors.len(), errors[0]) };
    Ok((pass, format!("final loss <= every initial loss on {below}/{n} seeds; CRB beats isotropic on {beats}/{n}{extra}")))
}

fn geometry() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_rt = 0.0f64;
    let mut worst_orth = 0.0f64;
    let mut points = 0;
    for _ in 0..200 {
        let rot = [rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0)];
        let r = rotation_matrix(rot[0], rot[1], rot[2]);
        worst_orth = worst_orth.max((r.transpose() * r - Matrix3::identity()).abs().max()).max((r.determinant() - 1.0).abs());
        let center = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.0..60.0));
        let cam = CameraModel::from_center(rng.random_range(0.5..2.0), 1920, 1024, center, rot).map_err(err)?;
        let axis = r.transpose() * Vector3::z();
        let lateral = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let world = center + axis * rng.random_range(2.0..80.0) + lateral;
        if let Some((px, py, depth)) = world_to_pixel(world, &cam).map_err(err)? {
            let back = pixel_to_world(Vector3::new(px, py, 1.0), depth, &cam).map_err(err)?;
            worst_rt = worst_rt.max((back - world).norm());
            let again = world_to_pixel(back, &cam).map_err(err)?.ok_or("round trip left the frustum")?;
            worst_rt = worst_rt.max((again.0 - px).abs()).max((again.1 - py).abs());
            points += 1;
        }
    }
    let direct = FrameTiming { t_ssb: 0.0, t_rs: 0.02, t_data: 0.08, n_sub: 10, variant: FrameVariant::VisionAided };
    let (se, cr) = isac_efficiency(1.0, 1.0, &direct).map_err(err)?;
    let budget = SlotBudget { tracking_slots: 3, inference_slots: 1, ssb_slots: 0, slot_s: 5e-3, subframe_s: 0.1, n_sub: 10 };
    let slotted = frame_timing_model(FrameVariant::VisionAided, budget).map_err(err)?;
    let (se2, cr2) = isac_efficiency(1.0, 1.0, &slotted).map_err(err)?;
    let hand = [(se - 0.8).abs(), (cr - 1.25).abs(), (se2 - 0.8).abs(), (cr2 - 1.25).abs()].into_iter().fold(0.0, f64::max);
    Ok((
        worst_rt <= 1e-9 && worst_orth <= 1e-12 && hand <= 1e-12,
        format!(
            "{points} pinhole round trips, worst error {worst_rt:.1e}; rotation orthonormality {worst_orth:.1e}; hand example ratios {se} and {cr}"
        ),
    ))
}

fn body_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let path = e.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
            if name == "summary.json" || name == "manifest.json" {
                continue;
            }
            out.push((name, std::fs::read(&path).unwrap_or_default()));
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let root: PathBuf = std::env::temp_dir().join(format!("isac-acceptance-{}", std::process::id()));
    let pipelines = [
        Pipeline::BeamPattern,
        Pipeline::Efficiency,
        Pipeline::Prop1Check,
        Pipeline::Prop2Check,
        Pipeline::TrackingEval,
        Pipeline::LossOpt,
    ];
    let mut identical = 0;
    let mut files = 0;
    let mut differing = Vec::new();
    for p in pipelines {
        let mut bodies = Vec::new();
        let mut cfg = ExperimentConfig::for_pipeline(p);
        cfg.seeds = vec![7];
        cfg.tracking.trials = 40;
        cfg.output_dir = root.join(p.name());
        for _ in 0..2 {
            let _ = std::fs::remove_dir_all(&cfg.output_dir);
            run_pipeline(&cfg).map_err(err)?;
            bodies.push(body_files(&cfg.output_dir));
        }
        files += bodies[0].len();
        if bodies[0] == bodies[1] && !bodies[0].is_empty() {
            identical += 1;
        } else {
            differing.push(p.name());
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    let extra = if differing.is_empty() { String::new() } else { format!("; differing: {}", differing.join(", ")) };
    Ok((
        identical == pipelines.len(),
        format!("{identical}/{} pipelines byte-identical over two runs ({files} result files){extra}", pipelines.len()),
    ))
}

fn main() {
    println!("acceptance suite: desk profile, 8x8 arrays, 16 subcarriers");
    let lines = [
        run(1, "squint endpoint exactness", Some(10.0), squint_endpoints),
        run(2, "gain monotonicity along the trajectory", Some(30.0), monotonicity),
        run(3, "squint-aware beam tracking accuracy", Some(120.0), tracking_accuracy),
        run(4, "Fisher information correctness", Some(60.0), fim_correctness),
        run(5, "Pareto sanity", Some(180.0), pareto),
        run(6, "separation trend", Some(180.0), separation_trend),
        run(7, "hybrid factorization round trip", Some(60.0), factorization),
        run(8, "loss-driven search", Some(600.0), loss_search),
        run(9, "geometry and timing exactness", Some(5.0), geometry),
        run(10, "determinism", None, determinism),
    ];
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("acceptance summary: {passed}/{} criteria pass", lines.len());
    for l in lines.iter().filter(|l| !l.pass) {
        println!("failing: criterion {} ({})", l.index, l.title);
    }
    let evaluated = lines.iter().all(|l| !l.detail.starts_with("error:"));
    assert!(evaluated, "a criterion could not be evaluated");
}
