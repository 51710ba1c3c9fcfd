//! Property checks shared by the pipelines and the acceptance suite.

use isac_core::arrays::{steering_vector, ArrayGeometry, Direction};
use isac_core::channels::{path_amplitude, SubcarrierGrid};
use isac_core::linalg::{hermitian_eigen, trace_re};
use isac_core::pareto::{
    gamma_grid, random_feasible_covariances, separation_sweep, weakly_dominated, ParetoContext, ParetoPoint,
};
use isac_core::precoder::{
    array_gain, pattern_argmax, squint_trajectory_config, subcarrier_pointing, BandwidthMode, SquintTrajectory,
};
use isac_core::scenario::{desk_scenario, SystemParams};
use isac_core::scene::AngularRange;
use isac_core::tracking::{
    angular_distance, noise_psd_for_snr, sa_cp_bt, sa_thresholds, spearman, ThresholdPairing, TrackingConfig,
};
use isac_core::{CVec, Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Argmax errors of a squint trajectory's first and last subcarrier beams, in cosine units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamEndpointReport {
    pub start_du: f64,
    pub start_dv: f64,
    pub end_du: f64,
    pub end_dv: f64,
    pub half_step: f64,
    pub pass: bool,
}

/// Compares the beam-pattern argmax at the band edges with the configured endpoints.
pub fn beam_endpoints(
    start: Direction,
    end: Direction,
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
    t_max: f64,
    mode: BandwidthMode,
    scan: usize,
) -> Result<(SquintTrajectory, BeamEndpointReport)> {
    let traj = squint_trajectory_config(start, end, grid, geom, t_max, mode)?;
    let last = grid.m_count - 1;
    let (u0, v0) = pattern_argmax(&traj.beam(0, grid, geom), grid.freq(0), geom, scan);
    let (u1, v1) = pattern_argmax(&traj.beam(last, grid, geom), grid.freq(last), geom, scan);
    let half_step = 1.0 / scan as f64;
    let (start_du, start_dv) = ((u0 - start.u()).abs(), (v0 - start.v()).abs());
    let (end_du, end_dv) = ((u1 - end.u()).abs(), (v1 - end.v()).abs());
    let tol = half_step * (1.0 + 1e-9);
    let pass = start_du <= tol && start_dv <= tol && end_du <= tol && end_dv <= tol;
    Ok((traj, BeamEndpointReport { start_du, start_dv, end_du, end_dv, half_step, pass }))
}

/// LoS-only channel of a user at `dir` and `dist` on every subcarrier.
pub fn los_channel(dir: Direction, dist: f64, grid: &SubcarrierGrid, geom: &ArrayGeometry) -> Result<Vec<CVec>> {
    (0..grid.m_count)
        .map(|m| {
            let f = grid.freq(m);
            Ok(steering_vector(dir, f, geom)? * C64::new(path_amplitude(f, dist), 0.0))
        })
        .collect()
}

/// Per-subcarrier gain at `user` and squared angular distance to each pointing direction.
pub fn gain_distance_profile(
    user: Direction,
    traj: &SquintTrajectory,
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ps = traj.ps_column();
    let mut gains = Vec::with_capacity(grid.m_count);
    let mut dists = Vec::with_capacity(grid.m_count);
    for m in 0..grid.m_count {
        gains.push(array_gain(user, grid.freq(m), &traj.ttd, &ps, geom)?);
        dists.push(angular_distance(user, subcarrier_pointing(traj, m, grid)));
    }
    Ok((gains, dists))
}

/// One in-threshold grid of the gain-monotonicity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop2Row {
    pub index: usize,
    pub phi_min: f64,
    pub phi_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub user_phi: f64,
    pub user_theta: f64,
    pub spearman: f64,
}

/// A user position whose strongest subcarrier is not the one pointing nearest to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ambiguity {
    pub height_over_threshold: f64,
    pub user_phi: f64,
    pub user_theta: f64,
    pub argmax_subcarrier: usize,
    pub nearest_subcarrier: usize,
    pub users_scanned: usize,
    pub ambiguous_users: usize,
}

/// Outcome of the gain-monotonicity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop2Report {
    pub rows: Vec<Prop2Row>,
    pub worst_spearman: f64,
    pub spearman_max: f64,
    pub counterexample: Option<Ambiguity>,
    pub pass: bool,
}

/// Diagonal trajectory across `range` from `(φ_min, θ_min)` to `(φ_max, θ_max)`.
fn diagonal(range: &AngularRange) -> (Direction, Direction) {
    (
        Direction { theta: range.theta_min, phi: range.phi_min },
        Direction { theta: range.theta_max, phi: range.phi_max },
    )
}

/// Heights, in units of `Δθ`, tried in turn by the out-of-threshold ambiguity search.
pub const AMBIGUITY_FACTORS: [f64; 7] = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

/// Random grids within both squint-aware thresholds, each traversed diagonally with one random
/// user inside; then vertical grids of increasing height above `Δθ` scanned for argmax ambiguity.
#[allow(clippy::too_many_arguments)]
pub fn prop2_check(
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
    t_max: f64,
    mode: BandwidthMode,
    pairing: ThresholdPairing,
    grids: usize,
    spearman_max: f64,
    seed: u64,
) -> Result<Prop2Report> {
    let (d_theta, d_phi) = sa_thresholds(geom, grid, pairing);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(grids);
    for index in 0..grids {
        let w = rng.random_range(0.3..1.0) * d_phi;
        let h = rng.random_range(0.3..1.0) * d_theta;
        let phi_min = rng.random_range(-0.5..0.5 - w);
        let theta_min = rng.random_range(1.75..2.35 - h);
        let range = AngularRange::new(phi_min, phi_min + w, theta_min, theta_min + h, 50.0)?;
        let user = Direction {
            phi: rng.random_range(range.phi_min..=range.phi_max),
            theta: rng.random_range(range.theta_min..=range.theta_max),
        };
        let (a, b) = diagonal(&range);
        let traj = squint_trajectory_config(a, b, grid, geom, t_max, mode)?;
        let (g, d) = gain_distance_profile(user, &traj, grid, geom)?;
        rows.push(Prop2Row {
            index,
            phi_min: range.phi_min,
            phi_max: range.phi_max,
            theta_min: range.theta_min,
            theta_max: range.theta_max,
            user_phi: user.phi,
            user_theta: user.theta,
            spearman: spearman(&g, &d),
        });
    }
    let worst_spearman = rows.iter().map(|r| r.spearman).fold(f64::NEG_INFINITY, f64::max);
    let mut counterexample = None;
    for factor in AMBIGUITY_FACTORS {
        counterexample = ambiguity_search(grid, geom, mode, d_theta, factor)?;
        if counterexample.is_some() {
            break;
        }
    }
    let pass = worst_spearman <= spearman_max && counterexample.is_some();
    Ok(Prop2Report { rows, worst_spearman, spearman_max, counterexample, pass })
}

/// Scans users over a vertical range `factor·Δθ` tall swept by a vertical trajectory and
/// returns the first position whose argmax subcarrier differs from its nearest pointing.
pub fn ambiguity_search(
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
    mode: BandwidthMode,
    d_theta: f64,
    factor: f64,
) -> Result<Option<Ambiguity>> {
    let half = 0.5 * factor * d_theta;
    let theta_min = (1.8 - half).max(0.05);
    let theta_max = (1.8 + half).min(std::f64::consts::PI - 0.05);
    let phi = 0.1;
    let start = Direction { theta: theta_min, phi };
    let end = Direction { theta: theta_max, phi };
    let traj = squint_trajectory_config(start, end, grid, geom, f64::MAX, mode)?;
    let n = 61;
    let mut first = None;
    let mut ambiguous = 0;
    for i in 0..n {
        let theta = theta_min + (theta_max - theta_min) * i as f64 / (n - 1) as f64;
        let user = Direction { theta, phi };
        let (g, d) = gain_distance_profile(user, &traj, grid, geom)?;
        let arg = argmax(&g);
        let near = argmin(&d);
        if arg != near {
            ambiguous += 1;
            first.get_or_insert((theta, arg, near));
        }
    }
    Ok(first.map(|(theta, arg, near)| Ambiguity {
        height_over_threshold: factor,
        user_phi: phi,
        user_theta: theta,
        argmax_subcarrier: arg,
        nearest_subcarrier: near,
        users_scanned: n,
        ambiguous_users: ambiguous,
    }))
}

fn argmax(x: &[f64]) -> usize {
    x.iter().enumerate().fold(0, |b, (i, &v)| if v > x[b] { i } else { b })
}

fn argmin(x: &[f64]) -> usize {
    x.iter().enumerate().fold(0, |b, (i, &v)| if v < x[b] { i } else { b })
}

/// One Monte-Carlo tracking trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingTrial {
    pub trial: usize,
    pub phi: f64,
    pub theta: f64,
    pub phi_hat: f64,
    pub theta_hat: f64,
    pub phi_cross: f64,
    pub phi_step: f64,
    pub theta_step: f64,
    pub slots_used: usize,
    pub snr_db: f64,
}

impl TrackingTrial {
    /// Azimuth error in units of the pointing step.
    pub fn phi_err_steps(&self) -> f64 {
        (self.phi_hat - self.phi).abs() / self.phi_step
    }

    /// Elevation error in units of the pointing step.
    pub fn theta_err_steps(&self) -> f64 {
        (self.theta_hat - self.theta).abs() / self.theta_step
    }

    /// Whether both errors are within half a pointing step.
    pub fn within_half_step(&self) -> bool {
        (self.phi_hat - self.phi).abs() <= 0.5 * self.phi_step + 1e-12
            && (self.theta_hat - self.theta).abs() <= 0.5 * self.theta_step + 1e-12
    }

    /// Azimuth error of the cross-corrected estimate in units of the pointing step.
    pub fn phi_cross_err_steps(&self) -> f64 {
        (self.phi_cross - self.phi).abs() / self.phi_step
    }

    /// [`Self::within_half_step`] with the cross-corrected azimuth.
    pub fn cross_within_half_step(&self) -> bool {
        (self.phi_cross - self.phi).abs() <= 0.5 * self.phi_step + 1e-12
            && (self.theta_hat - self.theta).abs() <= 0.5 * self.theta_step + 1e-12
    }
}

/// Random LoS users inside random angular ranges, tracked with SA-CP-BT.
pub fn tracking_trials(cfg: &TrackingConfig, trials: usize, snr_db: Option<f64>, seed: u64) -> Result<Vec<TrackingTrial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let w = rng.random_range(0.1..0.4);
        let h = rng.random_range(0.05..0.3);
        let phi_min = rng.random_range(-0.4..0.4 - w);
        let theta_min = rng.random_range(1.75..2.3 - h);
        let range = AngularRange::new(phi_min, phi_min + w, theta_min, theta_min + h, 50.0)?;
        let user = Direction {
            phi: rng.random_range(range.phi_min..=range.phi_max),
            theta: rng.random_range(range.theta_min..=range.theta_max),
        };
        let h_u = los_channel(user, 50.0, &cfg.grid, &cfg.geom)?;
        let mut c = *cfg;
        c.n_c0 = snr_db.map_or(0.0, |s| noise_psd_for_snr(&h_u, s, &cfg.geom, &cfg.grid));
        let res = sa_cp_bt(range, &h_u, &c, rng.random())?;
        out.push(TrackingTrial {
            trial,
            phi: user.phi,
            theta: user.theta,
            phi_hat: res.phi_hat,
            theta_hat: res.theta_hat,
            phi_cross: res.phi_cross,
            phi_step: res.phi_step,
            theta_step: res.theta_step,
            slots_used: res.slots_used,
            snr_db: res.snr_db,
        });
    }
    Ok(out)
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Boundary sanity of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoSanity {
    pub seed: u64,
    pub se_monotone: bool,
    pub crb_monotone: bool,
    /// Largest `|tr(R_m) − P_t/M| / (P_t/M)` over the sweep.
    pub max_trace_error: f64,
    /// Most negative eigenvalue over the sweep, relative to `P_t/M`.
    pub min_eigenvalue: f64,
    pub random_trials: usize,
    pub dominated: usize,
    pub pass: bool,
}

/// Whether a sequence is monotone in one direction within `tol` relative to its largest magnitude.
pub fn monotone(x: &[f64], tol: f64) -> bool {
    let scale = x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let slack = tol * scale;
    let up = x.windows(2).all(|w| w[1] >= w[0] - slack);
    let down = x.windows(2).all(|w| w[1] <= w[0] + slack);
    up || down
}

/// Sweep, covariance feasibility and random-covariance dominance of one seeded desk scene.
pub fn pareto_sanity(
    params: SystemParams,
    users: usize,
    targets: usize,
    seed: u64,
    gamma_points: usize,
    random_trials: usize,
) -> Result<(Vec<ParetoPoint>, ParetoSanity)> {
    let scn = desk_scenario(params, users, targets, seed)?;
    let ctx = ParetoContext::new(&scn)?;
    let gammas = gamma_grid(gamma_points, 1e-3, 1e3);
    let curve = ctx.sweep(&gammas, false)?;
    let power = params.p_t / params.grid.m_count as f64;
    let mut max_trace_error = 0.0f64;
    let mut min_eigenvalue = f64::INFINITY;
    for &g in &gammas {
        for f in ctx.realizations(g)? {
            let r = &f * f.adjoint();
            max_trace_error = max_trace_error.max((trace_re(&r) - power).abs() / power);
            let (eig, _) = hermitian_eigen(&r);
            min_eigenvalue = min_eigenvalue.min(eig.iter().copied().fold(f64::INFINITY, f64::min) / power);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut dominated = 0;
    for _ in 0..random_trials {
        let r = random_feasible_covariances(params.tx.n_elements(), params.p_t, params.grid.m_count, &mut rng);
        let (se, crb) = ctx.evaluate_covariances(&r)?;
        if weakly_dominated(&curve, se, crb, 1e-9) {
            dominated += 1;
        }
    }
    let se: Vec<f64> = curve.iter().map(|p| p.se).collect();
    let crb: Vec<f64> = curve.iter().map(|p| p.crb).collect();
    let se_monotone = monotone(&se, 1e-9);
    let crb_monotone = monotone(&crb, 1e-9);
    let pass = se_monotone && crb_monotone && max_trace_error <= 1e-9 && min_eigenvalue >= -1e-9 && dominated == random_trials;
    Ok((
        curve,
        ParetoSanity { seed, se_monotone, crb_monotone, max_trace_error, min_eigenvalue, random_trials, dominated, pass },
    ))
}

/// Separation-sweep verdict for one seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Seed {
    pub seed: u64,
    pub steps: usize,
    pub cor_non_increasing: bool,
    pub se_ok_steps: usize,
    pub crb_ok_steps: usize,
    pub pass: bool,
}

/// One row of the separation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop1Row {
    pub seed: u64,
    pub separation_deg: f64,
    pub cor: f64,
    pub se: f64,
    pub crb: f64,
}

/// Runs the separation sweep for one seed and counts trend-respecting steps.
pub fn prop1_seed(params: SystemParams, seed: u64, steps: usize, max_deg: f64, gamma: f64, min_ok: usize) -> Result<(Vec<Prop1Row>, Prop1Seed)> {
    let samples = separation_sweep(params, seed, steps, max_deg, gamma)?;
    let rows: Vec<Prop1Row> = samples
        .iter()
        .map(|s| Prop1Row { seed, separation_deg: s.separation_deg, cor: s.cor, se: s.se, crb: s.crb })
        .collect();
    let rel = 1e-9;
    let cor_non_increasing = samples.windows(2).all(|w| w[1].cor <= w[0].cor * (1.0 + rel));
    let se_ok_steps = samples.windows(2).filter(|w| w[1].se <= w[0].se * (1.0 + rel)).count();
    let crb_ok_steps = samples.windows(2).filter(|w| w[1].crb >= w[0].crb * (1.0 - rel)).count();
    let pass = cor_non_increasing && se_ok_steps >= min_ok && crb_ok_steps >= min_ok;
    Ok((rows, Prop1Seed { seed, steps, cor_non_increasing, se_ok_steps, crb_ok_steps, pass }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> (SubcarrierGrid, ArrayGeometry) {
        let p = SystemParams::desk();
        (p.grid, p.tx)
    }

    #[test]
    fn monotone_either_direction() {
        assert!(monotone(&[1.0, 2.0, 2.0, 3.0], 0.0));
        assert!(monotone(&[3.0, 1.0, 1.0], 0.0));
        assert!(!monotone(&[1.0, 3.0, 2.0], 1e-9));
        assert!(monotone(&[1.0, 1.0 - 1e-12, 2.0], 1e-9));
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn los_channel_norm_is_path_amplitude() {
        let (grid, geom) = desk();
        let dir = Direction { theta: 2.0, phi: 0.1 };
        let h = los_channel(dir, 80.0, &grid, &geom).unwrap();
        for (m, hm) in h.iter().enumerate() {
            assert!((hm.norm() - path_amplitude(grid.freq(m), 80.0)).abs() < 1e-18);
        }
    }

    #[test]
    fn endpoints_hold_for_a_diagonal_sweep() {
        let (grid, geom) = desk();
        let a = Direction { theta: 2.0, phi: -0.1 };
        let b = Direction { theta: 2.05, phi: 0.1 };
        let (_, rep) = beam_endpoints(a, b, &grid, &geom, 1e-9, BandwidthMode::Effective, 128).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn on_trajectory_user_has_perfect_rank_agreement() {
        let (grid, geom) = desk();
        let a = Direction { theta: 2.0, phi: 0.0 };
        let b = Direction { theta: 2.0, phi: 0.1 };
        let traj = squint_trajectory_config(a, b, &grid, &geom, 1e-9, BandwidthMode::Effective).unwrap();
        let user = subcarrier_pointing(&traj, 0, &grid);
        let (g, d) = gain_distance_profile(user, &traj, &grid, &geom).unwrap();
        assert_eq!(argmax(&g), 0);
        assert_eq!(argmin(&d), 0);
        assert!(spearman(&g, &d) < -0.99);
    }

    #[test]
    fn noiseless_trials_stay_near_the_truth() {
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
        let trials = tracking_trials(&cfg, 10, None, 3).unwrap();
        assert!(trials.iter().all(|t| t.phi_err_steps() < 1.5 && t.theta_err_steps() < 1.5));
        assert!(trials.iter().filter(|t| t.within_half_step()).count() >= 7);
        assert_eq!(trials, tracking_trials(&cfg, 10, None, 3).unwrap());
    }
}
