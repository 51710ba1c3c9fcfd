//! Squint-aware cross-pattern beam tracking (SA-CP-BT).
//!
//! The visual angular range is split vertically into `N_g` grids no taller than `Δ^SA_θ`.
//! A horizontal squint sweep at each grid's center elevation selects `(m*_h, t*_h, n*_g)` and
//! the azimuth; a vertical sweep inside the selected grid then selects `(m*_v, t*_v)` and the
//! elevation. Angles are recovered from the pointing closed forms evaluated on the slot
//! endpoints actually transmitted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arrays::{ArrayGeometry, Direction};
use crate::channels::{CommChannel, SubcarrierGrid};
use crate::precoder::{squint_trajectory_config, subcarrier_pointing, BandwidthMode, SquintTrajectory};
use crate::scene::AngularRange;
use crate::{CVec, IsacError, Result, C64};

/// Which element count each squint-aware threshold uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdPairing {
    /// `Δ^SA_θ = 4f_c/(N_{t_h} f_M)`, `Δ^SA_φ = 4f_c/(N_{t_v} f_M)`.
    #[default]
    Printed,
    /// `Δ^SA_θ` uses `N_{t_v}` and `Δ^SA_φ` uses `N_{t_h}`.
    Swapped,
}

/// Squint-aware thresholds `(Δ^SA_θ, Δ^SA_φ)` in radians.
pub fn sa_thresholds(geom: &ArrayGeometry, grid: &SubcarrierGrid, pairing: ThresholdPairing) -> (f64, f64) {
    let k = 4.0 * geom.f_c / grid.f_last();
    let (nt, np) = match pairing {
        ThresholdPairing::Printed => (geom.n_h, geom.n_v),
        ThresholdPairing::Swapped => (geom.n_v, geom.n_h),
    };
    (k / nt as f64, k / np as f64)
}

/// Static tracking configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingConfig {
    pub geom: ArrayGeometry,
    pub grid: SubcarrierGrid,
    pub t_max: f64,
    /// Slots per grid `T_bt`.
    pub t_bt: usize,
    pub mode: BandwidthMode,
    pub pairing: ThresholdPairing,
    /// Communication noise PSD `n_c0` (W/Hz); zero disables noise.
    pub n_c0: f64,
    /// Scale `|y_m|` by `f_m/f_c` before the argmax, removing the free-space `1/f_m` amplitude slope.
    pub equalize_spreading: bool,
}

/// Per-subcarrier weights applied to `|y_m|` before the feedback argmax.
pub fn feedback_weights(cfg: &TrackingConfig) -> Vec<f64> {
    (0..cfg.grid.m_count)
        .map(|m| if cfg.equalize_spreading { cfg.grid.freq(m) / cfg.geom.f_c } else { 1.0 })
        .collect()
}

/// Grid partition of an angular range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingPlan {
    pub range: AngularRange,
    /// Vertical grid count `N_g`.
    pub n_g: usize,
    /// Slots per grid `T_bt`.
    pub t_bt: usize,
    pub delta_theta: f64,
    pub delta_phi: f64,
}

impl TrackingPlan {
    /// Elevation bounds of grid `n` (zero-based).
    pub fn grid_bounds(&self, n: usize) -> (f64, f64) {
        let h = self.range.height() / self.n_g as f64;
        (self.range.theta_min + h * n as f64, self.range.theta_min + h * (n + 1) as f64)
    }

    /// Endpoints of horizontal slot `t` (zero-based) in grid `n`.
    pub fn horizontal_endpoints(&self, n: usize, t: usize) -> (Direction, Direction) {
        let (lo, hi) = self.grid_bounds(n);
        let theta = 0.5 * (lo + hi);
        let w = self.range.width() / self.t_bt as f64;
        let phi0 = self.range.phi_min + w * t as f64;
        (Direction { theta, phi: phi0 }, Direction { theta, phi: phi0 + w })
    }

    /// Endpoints of vertical slot `t` (zero-based) inside grid `n` at azimuth `phi`.
    pub fn vertical_endpoints(&self, n: usize, t: usize, phi: f64) -> (Direction, Direction) {
        let (lo, hi) = self.grid_bounds(n);
        let h = (hi - lo) / self.t_bt as f64;
        let theta0 = lo + h * t as f64;
        (Direction { theta: theta0, phi }, Direction { theta: theta0 + h, phi })
    }

    /// Total slot count `N_g·T_bt + T_bt`.
    pub fn slots(&self) -> usize {
        self.n_g * self.t_bt + self.t_bt
    }
}

/// Splits the range vertically so that every grid is at most `Δ^SA_θ` tall.
pub fn partition_grids(
    range: AngularRange,
    geom: &ArrayGeometry,
    grid: &SubcarrierGrid,
    t_bt: usize,
    pairing: ThresholdPairing,
) -> Result<TrackingPlan> {
    if t_bt == 0 {
        return Err(IsacError::config("t_bt", "at least one slot per grid is required"));
    }
    let (delta_theta, delta_phi) = sa_thresholds(geom, grid, pairing);
    let ratio = range.height() / delta_theta;
    // Guard against `ceil` overshooting on an exact multiple.
    let n_g = ((ratio - 1e-12).ceil() as usize).max(1);
    Ok(TrackingPlan { range, n_g, t_bt, delta_theta, delta_phi })
}

/// Sweep stage of a trace record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Horizontal,
    Vertical,
}

/// Per-slot feedback statistics `w_m·|y_m|` (see [`feedback_weights`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub stage: Stage,
    pub grid: usize,
    pub slot: usize,
    pub magnitudes: Vec<f64>,
}

/// Reported indices (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feedback {
    pub m_h: usize,
    pub t_h: usize,
    pub n_g: usize,
    pub m_v: usize,
    pub t_v: usize,
}

/// Outcome of one SA-CP-BT run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingResult {
    pub phi_hat: f64,
    pub theta_hat: f64,
    /// Azimuth re-decoded from the horizontal beam's cosine at the refined elevation, see
    /// [`cross_corrected_azimuth`].
    pub phi_cross: f64,
    pub feedback: Feedback,
    pub slots_used: usize,
    /// Peak received SNR (dB); infinite when noiseless.
    pub snr_db: f64,
    /// Largest adjacent azimuth spacing along the selected horizontal slot.
    pub phi_step: f64,
    /// Largest adjacent elevation spacing along the selected vertical slot.
    pub theta_step: f64,
    pub trace: Vec<SlotRecord>,
}

/// Per-subcarrier channel vectors of user `u`.
pub fn user_channel(ch: &CommChannel, u: usize) -> Vec<CVec> {
    ch.vectors.iter().map(|h| h.column(u).into_owned()).collect()
}

/// Noise PSD giving the requested peak SNR `‖h‖²·N_t/σ²` averaged over subcarriers.
pub fn noise_psd_for_snr(h_u: &[CVec], snr_db: f64, geom: &ArrayGeometry, grid: &SubcarrierGrid) -> f64 {
    let mean = h_u.iter().map(|h| h.norm_squared()).sum::<f64>() / h_u.len() as f64;
    mean * geom.n_elements() as f64 / 10f64.powf(snr_db / 10.0) / grid.spacing()
}

/// Peak received SNR (dB) for a given noise PSD.
pub fn peak_snr_db(h_u: &[CVec], n_c0: f64, geom: &ArrayGeometry, grid: &SubcarrierGrid) -> f64 {
    if n_c0 <= 0.0 {
        return f64::INFINITY;
    }
    let mean = h_u.iter().map(|h| h.norm_squared()).sum::<f64>() / h_u.len() as f64;
    10.0 * (mean * geom.n_elements() as f64 / (n_c0 * grid.spacing())).log10()
}

/// Received probe `y_m = h_m^H F_{T,m} f_PS + z_m` for every subcarrier.
pub fn probe(traj: &SquintTrajectory, h_u: &[CVec], cfg: &TrackingConfig, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let sigma2 = cfg.n_c0 * cfg.grid.spacing();
    let normal = Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("finite noise variance");
    (0..cfg.grid.m_count)
        .map(|m| {
            let clean = h_u[m].dotc(&traj.beam(m, &cfg.grid, &cfg.geom));
            if sigma2 > 0.0 {
                clean + C64::new(normal.sample(rng), normal.sample(rng))
            } else {
                clean
            }
        })
        .collect()
}

/// Largest adjacent spacing of the pointing sequence, as `(Δφ, Δθ)`.
pub fn pointing_steps(traj: &SquintTrajectory, grid: &SubcarrierGrid) -> (f64, f64) {
    let dirs: Vec<Direction> = (0..grid.m_count).map(|m| subcarrier_pointing(traj, m, grid)).collect();
    dirs.windows(2).fold((0.0f64, 0.0f64), |(a, b), w| {
        (a.max((w[1].phi - w[0].phi).abs()), b.max((w[1].theta - w[0].theta).abs()))
    })
}

struct Sweep {
    best: (usize, usize, usize),
    best_mag: f64,
    traj: Option<SquintTrajectory>,
}

impl Sweep {
    fn new() -> Self {
        Self { best: (0, 0, 0), best_mag: f64::NEG_INFINITY, traj: None }
    }

    /// Strict comparison keeps the lexicographically smallest `(n_g, t, m)` on ties.
    fn offer(&mut self, n: usize, t: usize, y: &[C64], weights: &[f64], traj: &SquintTrajectory) -> Vec<f64> {
        let mags: Vec<f64> = y.iter().zip(weights).map(|(z, w)| z.norm() * w).collect();
        for (m, &a) in mags.iter().enumerate() {
            if a > self.best_mag {
                self.best_mag = a;
                self.best = (n, t, m);
                self.traj = Some(traj.clone());
            }
        }
        mags
    }
}

/// Horizontal outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalResult {
    pub m: usize,
    pub t_bt: usize,
    pub n_g: usize,
    pub phi_hat: f64,
    pub trajectory: SquintTrajectory,
}

/// Horizontal sweeps over every grid and slot.
pub fn horizontal_search(
    plan: &TrackingPlan,
    h_u: &[CVec],
    cfg: &TrackingConfig,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<SlotRecord>,
) -> Result<HorizontalResult> {
    let mut sweep = Sweep::new();
    let weights = feedback_weights(cfg);
    for n in 0..plan.n_g {
        for t in 0..plan.t_bt {
            let (a, b) = plan.horizontal_endpoints(n, t);
            let traj = squint_trajectory_config(a, b, &cfg.grid, &cfg.geom, cfg.t_max, cfg.mode)?;
            let y = probe(&traj, h_u, cfg, rng);
            let magnitudes = sweep.offer(n, t, &y, &weights, &traj);
            trace.push(SlotRecord { stage: Stage::Horizontal, grid: n, slot: t, magnitudes });
        }
    }
    let (n_g, t_bt, m) = sweep.best;
    let trajectory = sweep.traj.expect("at least one slot");
    let phi_hat = subcarrier_pointing(&trajectory, m, &cfg.grid).phi;
    Ok(HorizontalResult { m, t_bt, n_g, phi_hat, trajectory })
}

/// Vertical outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalResult {
    pub m: usize,
    pub t_bt: usize,
    pub theta_hat: f64,
    pub trajectory: SquintTrajectory,
}

/// Vertical sweeps inside grid `n_g` at azimuth `phi_hat`.
pub fn vertical_search(
    phi_hat: f64,
    n_g: usize,
    plan: &TrackingPlan,
    h_u: &[CVec],
    cfg: &TrackingConfig,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<SlotRecord>,
) -> Result<VerticalResult> {
    let mut sweep = Sweep::new();
    let weights = feedback_weights(cfg);
    for t in 0..plan.t_bt {
        let (a, b) = plan.vertical_endpoints(n_g, t, phi_hat);
        let traj = squint_trajectory_config(a, b, &cfg.grid, &cfg.geom, cfg.t_max, cfg.mode)?;
        let y = probe(&traj, h_u, cfg, rng);
        let magnitudes = sweep.offer(0, t, &y, &weights, &traj);
        trace.push(SlotRecord { stage: Stage::Vertical, grid: n_g, slot: t, magnitudes });
    }
    let (_, t_bt, m) = sweep.best;
    let trajectory = sweep.traj.expect("at least one slot");
    let theta_hat = subcarrier_pointing(&trajectory, m, &cfg.grid).theta;
    Ok(VerticalResult { m, t_bt, theta_hat, trajectory })
}

/// Full tracking run: partition, horizontal search, vertical search.
pub fn sa_cp_bt(range: AngularRange, h_u: &[CVec], cfg: &TrackingConfig, seed: u64) -> Result<TrackingResult> {
    if h_u.len() != cfg.grid.m_count {
        return Err(IsacError::domain("one channel vector per subcarrier is required"));
    }
    let plan = partition_grids(range, &cfg.geom, &cfg.grid, cfg.t_bt, cfg.pairing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(plan.slots());
    let h = horizontal_search(&plan, h_u, cfg, &mut rng, &mut trace)?;
    let v = vertical_search(h.phi_hat, h.n_g, &plan, h_u, cfg, &mut rng, &mut trace)?;
    let (phi_step, _) = pointing_steps(&h.trajectory, &cfg.grid);
    let (_, theta_step) = pointing_steps(&v.trajectory, &cfg.grid);
    Ok(TrackingResult {
        phi_hat: h.phi_hat,
        theta_hat: v.theta_hat,
        phi_cross: cross_corrected_azimuth(h.phi_hat, h.trajectory.start.theta, v.theta_hat),
        feedback: Feedback { m_h: h.m, t_h: h.t_bt, n_g: h.n_g, m_v: v.m, t_v: v.t_bt },
        slots_used: trace.len(),
        snr_db: peak_snr_db(h_u, cfg.n_c0, &cfg.geom, &cfg.grid),
        phi_step,
        theta_step,
        trace,
    })
}

/// Azimuth whose horizontal cosine `sinθ̂·sinφ` equals that of the selected horizontal beam,
/// which points at elevation `theta_h` and azimuth `phi_hat`.
pub fn cross_corrected_azimuth(phi_hat: f64, theta_h: f64, theta_hat: f64) -> f64 {
    let s = theta_hat.sin();
    if s <= 0.0 {
        return phi_hat;
    }
    (theta_h.sin() * phi_hat.sin() / s).clamp(-1.0, 1.0).asin()
}

/// Per-slot trace as CSV: `stage,grid,slot,m,magnitude`.
pub fn trace_csv(trace: &[SlotRecord]) -> String {
    let mut out = String::from("stage,grid,slot,m,magnitude\n");
    for r in trace {
        let stage = match r.stage {
            Stage::Horizontal => "h",
            Stage::Vertical => "v",
        };
        for (m, a) in r.magnitudes.iter().enumerate() {
            out.push_str(&format!("{stage},{},{},{m},{a:.16e}\n", r.grid, r.slot));
        }
    }
    out
}

/// Squared angular distance `(φ_u − φ_m)² + (θ_u − θ_m)²`.
pub fn angular_distance(user: Direction, pointing: Direction) -> f64 {
    (user.phi - pointing.phi).powi(2) + (user.theta - pointing.theta).powi(2)
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
