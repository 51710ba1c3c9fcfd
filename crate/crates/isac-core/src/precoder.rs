//! TTD + PS + digital hybrid precoding.
//!
//! Per subcarrier the precoder is `F_m = F_{T,m} F_P F_{D,m}` where `F_{T,m}` is the
//! diagonal TTD phase matrix `exp(j2π f_m T[q(n)])`, `F_P` the unit-modulus phase-shifter
//! network (stored as phases) and `F_{D,m}` the digital precoder.
//!
//! Squint trajectories use delays `τ_n = (f_M p₁(n) − f_1 p₀(n)) / (2 f_c b)` and phases
//! `ψ_n = π (f_1/f_c) p₀(n) − 2π f_1 T[q(n)]`, with `p(n) = u·ih + v·iv` and `b = f_M − f_1`
//! by default. Subcarrier `m` then points at
//! `u_m = (f_1 u₀ b + (f_m − f_1)(f_M u₁ − f_1 u₀)) / (f_m b)`, and likewise for `v`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arrays::{dirichlet, steering_from_cosines, steering_vector, ArrayGeometry, Direction};
use crate::channels::{dump_matrix, SensingMatrix, SubcarrierGrid};
use crate::linalg::{cis, fro2, least_squares};
use crate::{CMat, CVec, IsacError, Result, C64};

/// Which bandwidth enters the trajectory formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandwidthMode {
    /// `f_M − f_1`: endpoints are hit exactly.
    #[default]
    Effective,
    /// The nominal bandwidth `B`, kept for compatibility.
    Literal,
}

impl BandwidthMode {
    fn value(self, grid: &SubcarrierGrid) -> f64 {
        match self {
            BandwidthMode::Effective => grid.b_eff(),
            BandwidthMode::Literal => grid.bandwidth,
        }
    }
}

/// Diagonal of `F_{T,m}`: one unit phasor per element.
pub fn ttd_phase_diagonal(ttd: &DMatrix<f64>, f: f64, geom: &ArrayGeometry) -> CVec {
    CVec::from_fn(geom.n_elements(), |n, _| {
        let s = geom.subarray_of(n);
        cis(2.0 * PI * f * ttd[(s / geom.q_v, s % geom.q_v)])
    })
}

fn check_ttd(ttd: &DMatrix<f64>, geom: &ArrayGeometry, t_max: f64) -> Result<()> {
    if ttd.shape() != (geom.q_h, geom.q_v) {
        return Err(IsacError::Constraint(format!(
            "TTD matrix is {:?}, expected ({}, {})",
            ttd.shape(),
            geom.q_h,
            geom.q_v
        )));
    }
    let tol = 1e-9 * t_max.max(1e-30);
    if let Some(bad) = ttd.iter().find(|&&t| !(t >= -tol && t <= t_max + tol)) {
        return Err(IsacError::Constraint(format!("delay {bad:e} s outside [0, {t_max:e}]")));
    }
    Ok(())
}

/// Dense diagonal TTD phase matrix `F_{T,m}`.
pub fn ttd_phase_matrix(ttd: &DMatrix<f64>, f: f64, geom: &ArrayGeometry, t_max: f64) -> Result<CMat> {
    check_ttd(ttd, geom, t_max)?;
    Ok(CMat::from_diagonal(&ttd_phase_diagonal(ttd, f, geom)))
}

/// Hardware-structured hybrid precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPrecoder {
    pub geom: ArrayGeometry,
    /// Delays `T` (s), `Q_h × Q_v`.
    pub ttd: DMatrix<f64>,
    /// Phase-shifter phases (rad), `N_t × N_RF`; the network is `exp(j·ps_phase)`.
    pub ps_phase: DMatrix<f64>,
    /// Digital precoders `F_{D,m}`, each `N_RF × streams`.
    pub digital: Vec<CMat>,
    pub t_max: f64,
    pub p_t: f64,
}

impl HybridPrecoder {
    /// Validated constructor.
    pub fn new(
        geom: ArrayGeometry,
        ttd: DMatrix<f64>,
        ps_phase: DMatrix<f64>,
        digital: Vec<CMat>,
        t_max: f64,
        p_t: f64,
    ) -> Result<Self> {
        check_ttd(&ttd, &geom, t_max)?;
        if ps_phase.nrows() != geom.n_elements() {
            return Err(IsacError::Constraint("phase-shifter rows must equal N_t".into()));
        }
        if digital.iter().any(|d| d.nrows() != ps_phase.ncols()) {
            return Err(IsacError::Constraint("digital precoder rows must equal N_RF".into()));
        }
        Ok(Self { geom, ttd, ps_phase, digital, t_max, p_t })
    }

    /// RF chain count.
    pub fn n_rf(&self) -> usize {
        self.ps_phase.ncols()
    }

    /// Unit-modulus phase-shifter matrix `F_P`.
    pub fn ps(&self) -> CMat {
        self.ps_phase.map(cis)
    }

    /// Analog part `F_{T,m} F_P` at frequency `f`.
    pub fn analog(&self, f: f64) -> CMat {
        let d = ttd_phase_diagonal(&self.ttd, f, &self.geom);
        let mut a = self.ps();
        for (n, mut row) in a.row_iter_mut().enumerate() {
            row *= d[n];
        }
        a
    }

    /// Full precoder `F_m`.
    pub fn full(&self, m: usize, grid: &SubcarrierGrid) -> CMat {
        self.analog(grid.freq(m)) * &self.digital[m]
    }

    /// All per-subcarrier precoders.
    pub fn full_all(&self, grid: &SubcarrierGrid) -> Vec<CMat> {
        (0..grid.m_count).map(|m| self.full(m, grid)).collect()
    }

    /// `tr(F_m F_m^H)`.
    pub fn power(&self, m: usize, grid: &SubcarrierGrid) -> f64 {
        fro2(&self.full(m, grid))
    }

    /// Rescales every digital precoder so that `tr(F_m F_m^H) = P_t/M`.
    pub fn normalize_power(&mut self, grid: &SubcarrierGrid) {
        let target = self.p_t / grid.m_count as f64;
        for m in 0..grid.m_count {
            let p = self.power(m, grid);
            if p > 0.0 {
                self.digital[m] *= C64::new((target / p).sqrt(), 0.0);
            }
        }
    }
}

/// `x_m = F_{T,m} F_P F_{D,m} s_m`.
pub fn transmit(p: &HybridPrecoder, s: &CVec, m: usize, grid: &SubcarrierGrid) -> Result<CVec> {
    let d = p.digital.get(m).ok_or_else(|| IsacError::domain("subcarrier index out of range"))?;
    if d.ncols() != s.len() {
        return Err(IsacError::domain("symbol vector length does not match the stream count"));
    }
    Ok(p.full(m, grid) * s)
}

/// TTD and PS configuration sweeping the beams from `start` (f_1) to `end` (f_M).
#[derive(Debug, Clone, PartialEq)]
pub struct SquintTrajectory {
    pub start: Direction,
    pub end: Direction,
    /// Delays (s), min-shifted to zero.
    pub ttd: DMatrix<f64>,
    /// Per-element phase-shifter phases (rad) of the single RF chain.
    pub ps_phase: DVector<f64>,
    pub mode: BandwidthMode,
}

impl SquintTrajectory {
    /// Unit-modulus PS column.
    pub fn ps_column(&self) -> CVec {
        self.ps_phase.map(cis)
    }

    /// Analog beam `F_{T,m} f_PS` at subcarrier `m`.
    pub fn beam(&self, m: usize, grid: &SubcarrierGrid, geom: &ArrayGeometry) -> CVec {
        let d = ttd_phase_diagonal(&self.ttd, grid.freq(m), geom);
        d.component_mul(&self.ps_column())
    }

    /// Delay span actually used (s).
    pub fn span(&self) -> f64 {
        self.ttd.max() - self.ttd.min()
    }
}

/// Configures TTDs and PSs for a squint trajectory.
pub fn squint_trajectory_config(
    start: Direction,
    end: Direction,
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
    t_max: f64,
    mode: BandwidthMode,
) -> Result<SquintTrajectory> {
    start.validate()?;
    end.validate()?;
    let (f1, fm_, fc) = (grid.f_first(), grid.f_last(), geom.f_c);
    let b = mode.value(grid);
    let (u0, v0, u1, v1) = (start.u(), start.v(), end.u(), end.v());
    let mut ttd = DMatrix::<f64>::zeros(geom.q_h, geom.q_v);
    let per_sub = (geom.l_h() * geom.l_v()) as f64;
    if b > 0.0 {
        for n in 0..geom.n_elements() {
            let (ih, iv) = geom.element_indices(n);
            let p0 = u0 * ih as f64 + v0 * iv as f64;
            let p1 = u1 * ih as f64 + v1 * iv as f64;
            let tau = (fm_ * p1 - f1 * p0) / (2.0 * fc * b);
            let s = geom.subarray_of(n);
            ttd[(s / geom.q_v, s % geom.q_v)] += tau / per_sub;
        }
    }
    let shift = ttd.min();
    ttd.add_scalar_mut(-shift);
    let span = ttd.max();
    if span > t_max * (1.0 + 1e-12) {
        return Err(IsacError::TtdRangeExceeded { required_s: span, t_max_s: t_max });
    }
    let ps_phase = DVector::from_fn(geom.n_elements(), |n, _| {
        let (ih, iv) = geom.element_indices(n);
        let p0 = u0 * ih as f64 + v0 * iv as f64;
        let s = geom.subarray_of(n);
        PI * (f1 / fc) * p0 - 2.0 * PI * f1 * ttd[(s / geom.q_v, s % geom.q_v)]
    });
    Ok(SquintTrajectory { start, end, ttd, ps_phase, mode })
}

fn interpolate(c0: f64, c1: f64, m: usize, grid: &SubcarrierGrid, mode: BandwidthMode) -> f64 {
    let b = mode.value(grid);
    if b == 0.0 {
        return c0;
    }
    let (f1, fm_, f) = (grid.f_first(), grid.f_last(), grid.freq(m));
    (f1 * c0 * b + (f - f1) * (fm_ * c1 - f1 * c0)) / (f * b)
}

/// Directional cosines `(u_m, v_m)` addressed by subcarrier `m`.
pub fn trajectory_cosines(traj: &SquintTrajectory, m: usize, grid: &SubcarrierGrid) -> (f64, f64) {
    (
        interpolate(traj.start.u(), traj.end.u(), m, grid, traj.mode),
        interpolate(traj.start.v(), traj.end.v(), m, grid, traj.mode),
    )
}

/// Direction from cosines, clamping round-off.
pub fn direction_from_cosines(u: f64, v: f64) -> Direction {
    let theta = v.clamp(-1.0, 1.0).acos();
    let st = theta.sin();
    let phi = if st > 0.0 { (u / st).clamp(-1.0, 1.0).asin() } else { 0.0 };
    Direction { theta, phi }
}

/// Pointing direction of subcarrier `m` along a trajectory.
pub fn subcarrier_pointing(traj: &SquintTrajectory, m: usize, grid: &SubcarrierGrid) -> Direction {
    let (u, v) = trajectory_cosines(traj, m, grid);
    direction_from_cosines(u, v)
}

/// Normalised gain `|a^H(dir, f) F_T f_PS| / √N_t`.
pub fn array_gain(dir: Direction, f: f64, ttd: &DMatrix<f64>, ps_column: &CVec, geom: &ArrayGeometry) -> Result<f64> {
    let a = steering_vector(dir, f, geom)?;
    let w = ttd_phase_diagonal(ttd, f, geom).component_mul(ps_column);
    Ok(a.dotc(&w).norm() / (geom.n_elements() as f64).sqrt())
}

/// Dirichlet-product gain of a trajectory beam at subcarrier `m` (exact when `Q = N`).
pub fn trajectory_gain_closed_form(dir: Direction, m: usize, traj: &SquintTrajectory, grid: &SubcarrierGrid, geom: &ArrayGeometry) -> f64 {
    let (um, vm) = trajectory_cosines(traj, m, grid);
    let r = grid.freq(m) / geom.f_c;
    (dirichlet(r * (um - dir.u()), geom.n_h) * dirichlet(r * (vm - dir.v()), geom.n_v)).abs()
        / geom.n_elements() as f64
}

/// Gain pattern on a cosine grid, returning the argmax cosines.
pub fn pattern_argmax(beam: &CVec, f: f64, geom: &ArrayGeometry, n_scan: usize) -> (f64, f64) {
    let r = f / geom.f_c;
    // The pattern separates into horizontal and vertical factors only for separable beams, so
    // evaluate the full 2-D scan.
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    let step = 2.0 / n_scan as f64;
    let hcol: Vec<CVec> = (0..n_scan)
        .map(|i| {
            let u = -1.0 + step * i as f64;
            CVec::from_fn(geom.n_h, |ih, _| cis(-PI * r * u * ih as f64))
        })
        .collect();
    let vrow: Vec<CVec> = (0..n_scan)
        .map(|j| {
            let v = -1.0 + step * j as f64;
            CVec::from_fn(geom.n_v, |iv, _| cis(-PI * r * v * iv as f64))
        })
        .collect();
    let w = DMatrix::from_fn(geom.n_h, geom.n_v, |ih, iv| beam[ih * geom.n_v + iv]);
    for (i, hc) in hcol.iter().enumerate() {
        // t[iv] = Σ_ih conj(a_h)[ih] · w[ih, iv]
        let t = CVec::from_fn(geom.n_v, |iv, _| (0..geom.n_h).map(|ih| hc[ih] * w[(ih, iv)]).sum());
        for (j, vr) in vrow.iter().enumerate() {
            let g = t.iter().zip(vr.iter()).map(|(a, b)| a * b).sum::<C64>().norm_sqr();
            if g > best.0 {
                best = (g, -1.0 + step * i as f64, -1.0 + step * j as f64);
            }
        }
    }
    (best.1, best.2)
}

/// Applies the TTD modulation: `h̃ = F_T^H h`, `G̃ = G F_T`.
pub fn equivalent_channels(
    ttd: &DMatrix<f64>,
    h: &[CMat],
    g: &[SensingMatrix],
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
) -> (Vec<CMat>, Vec<SensingMatrix>) {
    let mut hs = Vec::with_capacity(h.len());
    let mut gs = Vec::with_capacity(g.len());
    for m in 0..grid.m_count {
        let d = ttd_phase_diagonal(ttd, grid.freq(m), geom);
        let mut hm = h[m].clone();
        let mut at = g[m].a_t.clone();
        for n in 0..d.len() {
            let c = d[n].conj();
            for x in hm.row_mut(n).iter_mut() {
                *x *= c;
            }
            for x in at.row_mut(n).iter_mut() {
                *x *= c;
            }
        }
        hs.push(hm);
        gs.push(SensingMatrix { a_r: g[m].a_r.clone(), alpha: g[m].alpha.clone(), a_t: at });
    }
    (hs, gs)
}

/// Options for [`hybrid_factorize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizeOptions {
    pub max_iter: usize,
    /// Relative objective improvement below which the iteration stops.
    pub tol: f64,
    /// Random restarts of the phase-shifter initialisation.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6, restarts: 16, seed: 0 }
    }
}

/// Convergence summary of [`hybrid_factorize`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationReport {
    /// `sqrt(Σ‖F_m − F*_m‖² / Σ‖F*_m‖²)` after the final power rescale.
    pub residual: f64,
    /// Relative residual before the power rescale.
    pub residual_unscaled: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective `Σ‖F_m − F*_m‖²` after initialisation and after every iteration.
    pub objective_history: Vec<f64>,
}

struct Factor<'a> {
    targets: &'a [CMat],
    freqs: Vec<f64>,
    geom: ArrayGeometry,
    ttd: DMatrix<f64>,
    ps: CMat,
    digital: Vec<CMat>,
    t_max: f64,
}

impl Factor<'_> {
    fn analog(&self, m: usize) -> CMat {
        let d = ttd_phase_diagonal(&self.ttd, self.freqs[m], &self.geom);
        let mut a = self.ps.clone();
        for (n, mut row) in a.row_iter_mut().enumerate() {
            row *= d[n];
        }
        a
    }

    fn objective(&self) -> f64 {
        (0..self.targets.len())
            .map(|m| fro2(&(self.analog(m) * &self.digital[m] - &self.targets[m])))
            .sum()
    }

    fn digital_step(&mut self) {
        for m in 0..self.targets.len() {
            self.digital[m] = least_squares(&self.analog(m), &self.targets[m]);
        }
    }

    fn ps_step(&mut self) {
        let nt = self.geom.n_elements();
        let nrf = self.ps.ncols();
        let mcount = self.targets.len();
        for n in 0..nt {
            let c: Vec<C64> = (0..mcount)
                .map(|m| ttd_phase_diagonal_entry(&self.ttd, self.freqs[m], &self.geom, n))
                .collect();
            // current row product per subcarrier
            let mut rowprod: Vec<CVec> = (0..mcount)
                .map(|m| (self.ps.row(n) * &self.digital[m]).transpose())
                .collect();
            for r in 0..nrf {
                let x_old = self.ps[(n, r)];
                let mut z = C64::new(0.0, 0.0);
                for m in 0..mcount {
                    let d = self.digital[m].row(r);
                    for s in 0..d.len() {
                        let others = rowprod[m][s] - x_old * d[s];
                        let e = self.targets[m][(n, s)] - c[m] * others;
                        z += (c[m] * d[s]).conj() * e;
                    }
                }
                if z.norm() > 0.0 {
                    let x_new = z / z.norm();
                    for m in 0..mcount {
                        let d = self.digital[m].row(r);
                        for s in 0..d.len() {
                            rowprod[m][s] += (x_new - x_old) * d[s];
                        }
                    }
                    self.ps[(n, r)] = x_new;
                }
            }
        }
    }

    fn ttd_step(&mut self) {
        let geom = self.geom;
        let mcount = self.targets.len();
        if mcount < 2 {
            return;
        }
        let fc = geom.f_c;
        let bw = self.freqs[mcount - 1] - self.freqs[0];
        for q in 0..geom.n_subarrays() {
            let (qh, qv) = (q / geom.q_v, q % geom.q_v);
            let members: Vec<usize> = (0..geom.n_elements()).filter(|&n| geom.subarray_of(n) == q).collect();
            // z_m = Σ_{n∈q} g_{m,n}^H f*_{m,n} with g = F_P F_D without the TTD phase.
            let z: Vec<C64> = (0..mcount)
                .map(|m| {
                    let mut acc = C64::new(0.0, 0.0);
                    for &n in &members {
                        let g = self.ps.row(n) * &self.digital[m];
                        for s in 0..g.ncols() {
                            acc += g[s].conj() * self.targets[m][(n, s)];
                        }
                    }
                    acc
                })
                .collect();
            let score = |tau: f64| -> C64 {
                z.iter()
                    .zip(&self.freqs)
                    .map(|(zm, f)| zm * cis(-2.0 * PI * (f - fc) * tau))
                    .sum()
            };
            let tau_cur = self.ttd[(qh, qv)];
            let s_cur = score(tau_cur) * cis(-2.0 * PI * fc * tau_cur);
            let current = s_cur.re;
            let n_grid = ((self.t_max * bw * 20.0).ceil() as usize).clamp(16, 4096);
            let step = self.t_max / n_grid as f64;
            let mut best_tau = tau_cur;
            let mut best_val = score(tau_cur).norm();
            for i in 0..=n_grid {
                let t = step * i as f64;
                let v = score(t).norm();
                if v > best_val {
                    best_val = v;
                    best_tau = t;
                }
            }
            let (lo, hi) = ((best_tau - step).max(0.0), (best_tau + step).min(self.t_max));
            let t_ref = golden_max(|t| score(t).norm(), lo, hi, 60);
            if score(t_ref).norm() > best_val {
                best_tau = t_ref;
                best_val = score(t_ref).norm();
            }
            if best_val > current * (1.0 + 1e-15) + 1e-300 {
                // Apply the new delay and absorb the common phase into the subarray's PS rows.
                let s_new = score(best_tau) * cis(-2.0 * PI * fc * best_tau);
                let rot = if s_new.norm() > 0.0 { s_new / s_new.norm() } else { C64::new(1.0, 0.0) };
                self.ttd[(qh, qv)] = best_tau;
                for &n in &members {
                    for r in 0..self.ps.ncols() {
                        self.ps[(n, r)] *= rot;
                    }
                }
            }
        }
    }
}

fn ttd_phase_diagonal_entry(ttd: &DMatrix<f64>, f: f64, geom: &ArrayGeometry, n: usize) -> C64 {
    let s = geom.subarray_of(n);
    cis(2.0 * PI * f * ttd[(s / geom.q_v, s % geom.q_v)])
}

/// Golden-section maximisation of a unimodal function on `[lo, hi]`.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        x1
    } else {
        x2
    }
}

/// Delay estimate from consecutive-subcarrier projector phases.
fn init_delays(targets: &[CMat], freqs: &[f64], geom: &ArrayGeometry, t_max: f64) -> DMatrix<f64> {
    let nt = geom.n_elements();
    let mcount = targets.len();
    let mut ttd = DMatrix::zeros(geom.q_h, geom.q_v);
    if mcount < 2 {
        return ttd;
    }
    let projectors: Vec<CMat> = targets
        .iter()
        .map(|t| {
            let q = crate::linalg::orthonormal_columns(t, 1e-10);
            &q * q.adjoint()
        })
        .collect();
    // Cross-products accumulated over consecutive subcarriers.
    let mut acc = CMat::zeros(nt, nt);
    for m in 0..mcount - 1 {
        for a in 0..nt {
            for b in 0..nt {
                acc[(a, b)] += projectors[m + 1][(a, b)] * projectors[m][(a, b)].conj();
            }
        }
    }
    let df = freqs[1] - freqs[0];
    // Weighted least squares on pairwise differences: L τ = b.
    let mut lap = DMatrix::<f64>::zeros(nt, nt);
    let mut rhs = DVector::<f64>::zeros(nt);
    for a in 0..nt {
        for b in 0..nt {
            if a == b {
                continue;
            }
            let w = acc[(a, b)].norm();
            if w == 0.0 {
                continue;
            }
            let d = acc[(a, b)].arg() / (2.0 * PI * df);
            lap[(a, a)] += w;
            lap[(a, b)] -= w;
            rhs[a] += w * d;
        }
    }
    // Pin the mean to zero to remove the null space.
    let mut aug = DMatrix::<f64>::zeros(nt + 1, nt);
    aug.rows_mut(0, nt).copy_from(&lap);
    aug.row_mut(nt).fill(1.0);
    let mut rhs_aug = DVector::zeros(nt + 1);
    rhs_aug.rows_mut(0, nt).copy_from(&rhs);
    let svd = aug.svd(true, true);
    let tau = svd.solve(&rhs_aug, 1e-12).unwrap_or_else(|_| DVector::zeros(nt));
    let per_sub = (geom.l_h() * geom.l_v()) as f64;
    for n in 0..nt {
        let s = geom.subarray_of(n);
        ttd[(s / geom.q_v, s % geom.q_v)] += tau[n] / per_sub;
    }
    let shift = ttd.min();
    ttd.add_scalar_mut(-shift);
    ttd.apply(|t| *t = t.clamp(0.0, t_max));
    ttd
}

/// Energy of the compensated stacked targets outside their top-`n_rf` singular subspace.
fn rank_tail(stacked: &CMat, n_rf: usize) -> f64 {
    let gram = if stacked.ncols() <= stacked.nrows() { stacked.adjoint() * stacked } else { stacked * stacked.adjoint() };
    let (vals, _) = crate::linalg::hermitian_eigen(&gram);
    vals.iter().skip(n_rf).map(|v| v.max(0.0)).sum()
}

fn compensated_stack(targets: &[CMat], freqs: &[f64], geom: &ArrayGeometry, ttd: &DMatrix<f64>) -> CMat {
    let streams: usize = targets.iter().map(|t| t.ncols()).sum();
    let mut stacked = CMat::zeros(geom.n_elements(), streams);
    let mut col = 0;
    for (m, t) in targets.iter().enumerate() {
        let d = ttd_phase_diagonal(ttd, freqs[m], geom);
        for c in 0..t.ncols() {
            stacked.set_column(col, &t.column(c).component_mul(&d.map(|z| z.conj())));
            col += 1;
        }
    }
    stacked
}

/// Top-`k` left singular subspace of `x`.
fn dominant_subspace(x: &CMat, k: usize) -> CMat {
    let (_, vecs) = crate::linalg::hermitian_eigen(&(x * x.adjoint()));
    vecs.columns(0, k.min(vecs.ncols())).into_owned()
}

/// Cyclic per-subarray delay refinement decreasing [`rank_tail`] by majorisation: with the
/// current dominant subspace `U` fixed, each subarray delay maximises `‖U^H X(τ)‖²` over a
/// coarse grid refined by golden section.
fn refine_delays(targets: &[CMat], freqs: &[f64], geom: &ArrayGeometry, n_rf: usize, t_max: f64, mut ttd: DMatrix<f64>) -> DMatrix<f64> {
    let total: f64 = targets.iter().map(fro2).sum();
    let col_freq: Vec<f64> = targets.iter().enumerate().flat_map(|(m, t)| std::iter::repeat_n(freqs[m], t.ncols())).collect();
    let raw = compensated_stack(targets, freqs, geom, &DMatrix::zeros(geom.q_h, geom.q_v));
    let mut stacked = compensated_stack(targets, freqs, geom, &ttd);
    let members: Vec<Vec<usize>> = (0..geom.n_subarrays())
        .map(|s| (0..geom.n_elements()).filter(|&n| geom.subarray_of(n) == s).collect())
        .collect();
    let coarse = 24;
    let mut tail = rank_tail(&stacked, n_rf);
    for _ in 0..20 {
        if tail <= 1e-12 * total {
            break;
        }
        let before = tail;
        for (s, rows) in members.iter().enumerate() {
            let (qh, qv) = (s / geom.q_v, s % geom.q_v);
            let u = dominant_subspace(&stacked, n_rf);
            let mut base = u.adjoint() * &stacked;
            for &n in rows {
                for c in 0..stacked.ncols() {
                    for r in 0..u.ncols() {
                        base[(r, c)] -= u[(n, r)].conj() * stacked[(n, c)];
                    }
                }
            }
            let captured = |tau: f64| {
                let mut acc = base.clone();
                for &n in rows {
                    for (c, &f) in col_freq.iter().enumerate() {
                        let x = raw[(n, c)] * cis(-2.0 * PI * f * tau);
                        for r in 0..u.ncols() {
                            acc[(r, c)] += u[(n, r)].conj() * x;
                        }
                    }
                }
                fro2(&acc)
            };
            let current = captured(ttd[(qh, qv)]);
            let mut best = (current, ttd[(qh, qv)]);
            for i in 0..=coarse {
                let tau = t_max * i as f64 / coarse as f64;
                let v = captured(tau);
                if v > best.0 {
                    best = (v, tau);
                }
            }
            let h = t_max / coarse as f64;
            let (lo, hi) = ((best.1 - h).max(0.0), (best.1 + h).min(t_max));
            let tau = golden_max(captured, lo, hi, 40);
            let v = captured(tau);
            if v > best.0 {
                best = (v, tau);
            }
            if best.0 > current + 1e-12 * total {
                ttd[(qh, qv)] = best.1;
                for &n in rows {
                    for (c, &f) in col_freq.iter().enumerate() {
                        stacked[(n, c)] = raw[(n, c)] * cis(-2.0 * PI * f * best.1);
                    }
                }
            }
        }
        tail = rank_tail(&stacked, n_rf);
        if before - tail <= 1e-9 * before {
            break;
        }
    }
    ttd
}

fn unit_phase(z: C64) -> C64 {
    if z.norm() > 0.0 {
        z / z.norm()
    } else {
        C64::new(1.0, 0.0)
    }
}

fn random_complex(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

/// Subspace distance `‖(I − W W^H) P‖²_F` of a candidate phase matrix.
fn span_error(w: &CMat, p: &CMat) -> f64 {
    fro2(&(w * (w.adjoint() * p) - p))
}

/// Unit-modulus vectors found one at a time by alternating projection `x ← phase(W W^H x)`.
///
/// New searches start in the part of the span orthogonal to the vectors already accepted.
fn columnwise_basis(w: &CMat, n_rf: usize, rng: &mut ChaCha8Rng, starts: usize) -> CMat {
    let nt = w.nrows();
    let exact_tol = 1e-16 * nt as f64;
    let mut basis: Vec<(f64, CVec)> = Vec::new();
    let mut ortho: Vec<CVec> = Vec::new();
    let mut spare: Vec<(f64, CVec)> = Vec::new();
    let deflate = |v: &CVec, ortho: &[CVec]| {
        let mut r = v.clone();
        for q in ortho {
            let c = q.dotc(&r);
            r -= q * c;
        }
        r
    };
    for _ in 0..starts {
        if basis.len() == n_rf {
            break;
        }
        let seed_vec = deflate(&(w * random_complex(w.ncols(), 1, rng)).column(0).into_owned(), &ortho);
        let mut x = seed_vec.map(unit_phase);
        let mut err = f64::INFINITY;
        for _ in 0..600 {
            let proj = w * (w.adjoint() * &x);
            err = (&proj - &x).norm_squared();
            if err < 1e-26 * nt as f64 {
                break;
            }
            x = proj.map(unit_phase);
        }
        let r = deflate(&x, &ortho);
        let nr = r.norm();
        if err < exact_tol && nr > 0.3 * x.norm() {
            ortho.push(r / C64::new(nr, 0.0));
            basis.push((err, x));
        } else {
            spare.push((err, x));
        }
    }
    spare.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (e, x) in spare {
        if basis.len() == n_rf {
            break;
        }
        let r = deflate(&x, &ortho);
        let nr = r.norm();
        if nr > 0.3 * x.norm() {
            ortho.push(r / C64::new(nr, 0.0));
            basis.push((e, x));
        }
    }
    while basis.len() < n_rf {
        basis.push((f64::INFINITY, random_complex(nt, 1, rng).column(0).map(unit_phase)));
    }
    CMat::from_columns(&basis.into_iter().map(|(_, x)| x).collect::<Vec<_>>())
}

/// Unit-modulus basis of (approximately) the span of `w`.
///
/// Candidates are the phases of `w` itself, a column-by-column search, and joint alternating
/// projections from random starts; the one closest to the span wins.
fn unit_modulus_basis(w: &CMat, n_rf: usize, rng: &mut ChaCha8Rng, restarts: usize) -> CMat {
    let r = w.ncols();
    let mut best: Option<(f64, CMat)> = None;
    let consider = |p: CMat, best: &mut Option<(f64, CMat)>| {
        let err = span_error(w, &p);
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            *best = Some((err, p));
        }
    };
    let first = CMat::from_fn(w.nrows(), n_rf, |i, j| if j < r { unit_phase(w[(i, j)]) } else { C64::new(1.0, 0.0) });
    consider(first, &mut best);
    consider(columnwise_basis(w, n_rf, rng, restarts * n_rf * 4), &mut best);
    for _ in 0..restarts {
        if best.as_ref().is_some_and(|(e, p)| *e < 1e-20 * fro2(p)) {
            break;
        }
        let mut c = random_complex(r, n_rf, rng);
        let mut p = CMat::zeros(w.nrows(), n_rf);
        for _ in 0..1000 {
            p = (w * &c).map(unit_phase);
            c = w.adjoint() * &p;
        }
        consider(p, &mut best);
    }
    best.expect("at least one candidate").1
}

/// Maps per-subcarrier target precoders onto the hybrid TTD + PS + digital structure.
///
/// Block descent on `Σ_m ‖F_{T,m} F_P F_{D,m} − F*_m‖²_F`: least-squares digital step,
/// element-wise exact phase updates for the PSs, and a per-subarray delay-plus-phase fit
/// for the TTDs. Each block step never increases the objective. A final digital rescale
/// enforces `tr(F_m F_m^H) = P_t/M`.
pub fn hybrid_factorize(
    targets: &[CMat],
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
    n_rf: usize,
    t_max: f64,
    p_t: f64,
    opts: FactorizeOptions,
) -> Result<(HybridPrecoder, FactorizationReport)> {
    if targets.len() != grid.m_count {
        return Err(IsacError::domain("one target matrix per subcarrier is required"));
    }
    if n_rf == 0 {
        return Err(IsacError::domain("at least one RF chain is required"));
    }
    if targets.iter().any(|t| t.nrows() != geom.n_elements()) {
        return Err(IsacError::domain("target rows must equal N_t"));
    }
    let freqs = grid.frequencies();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ttd = init_delays(targets, &freqs, geom, t_max);
    let ttd = if targets.iter().any(|t| t.ncols() < n_rf) {
        refine_delays(targets, &freqs, geom, n_rf, t_max, ttd)
    } else {
        ttd
    };

    // Dominant subspace of the TTD-compensated stacked targets.
    let stacked = compensated_stack(targets, &freqs, geom, &ttd);
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let k = n_rf.min(u.ncols());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let w = CMat::from_fn(geom.n_elements(), k, |i, j| u[(i, order[j])]);
    let ps = unit_modulus_basis(&w, n_rf, &mut rng, opts.restarts);

    let mut st = Factor {
        targets,
        freqs,
        geom: *geom,
        ttd,
        ps,
        digital: vec![CMat::zeros(n_rf, 0); targets.len()],
        t_max,
    };
    st.digital_step();
    let total: f64 = targets.iter().map(fro2).sum();
    let mut history = vec![st.objective()];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        st.ttd_step();
        st.digital_step();
        st.ps_step();
        st.digital_step();
        let obj = st.objective();
        let prev = *history.last().expect("history");
        // Least-squares round-off may nudge the objective up by a few ulps; keep the better
        // iterate so the reported sequence is monotone.
        history.push(obj.min(prev));
        if obj <= 1e-28 * total || (prev - obj) <= opts.tol * prev {
            converged = true;
            break;
        }
    }
    let unscaled = (history.last().copied().unwrap_or(0.0) / total.max(1e-300)).sqrt();
    let ps_phase = st.ps.map(|z| z.arg());
    let mut pre = HybridPrecoder::new(*geom, st.ttd.clone(), ps_phase, st.digital.clone(), t_max, p_t)?;
    pre.normalize_power(grid);
    let residual = (pre
        .full_all(grid)
        .iter()
        .zip(targets)
        .map(|(f, t)| fro2(&(f - t)))
        .sum::<f64>()
        / total.max(1e-300))
    .sqrt();
    Ok((
        pre,
        FactorizationReport { residual, residual_unscaled: unscaled, iterations, converged, objective_history: history },
    ))
}

/// Random feasible precoder used by round-trip checks and multi-start searches.
pub fn random_precoder(
    geom: &ArrayGeometry,
    grid: &SubcarrierGrid,
    n_rf: usize,
    streams: usize,
    t_max: f64,
    p_t: f64,
    rng: &mut impl Rng,
) -> HybridPrecoder {
    let ttd = DMatrix::from_fn(geom.q_h, geom.q_v, |_, _| rng.random_range(0.0..=t_max));
    let ps_phase = DMatrix::from_fn(geom.n_elements(), n_rf, |_, _| rng.random_range(-PI..PI));
    let digital = (0..grid.m_count)
        .map(|_| {
            CMat::from_fn(n_rf, streams, |_, _| {
                C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
            })
        })
        .collect();
    let mut p = HybridPrecoder { geom: *geom, ttd, ps_phase, digital, t_max, p_t };
    p.normalize_power(grid);
    p
}

/// Text dump: delays in picoseconds, PS phases in radians, digital matrices as complex text.
pub fn dump_precoder(p: &HybridPrecoder) -> String {
    let mut s = String::new();
    s.push_str(&format!("# ttd_ps {}x{}\n", p.ttd.nrows(), p.ttd.ncols()));
    for r in 0..p.ttd.nrows() {
        let row: Vec<String> = p.ttd.row(r).iter().map(|t| format!("{:.9}", t * 1e12)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s.push_str(&format!("# ps_phase_rad {}x{}\n", p.ps_phase.nrows(), p.ps_phase.ncols()));
    for r in 0..p.ps_phase.nrows() {
        let row: Vec<String> = p.ps_phase.row(r).iter().map(|x| format!("{x:.16e}")).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    for (m, d) in p.digital.iter().enumerate() {
        s.push_str(&format!("# digital m={m} {}x{}\n", d.nrows(), d.ncols()));
        s.push_str(&dump_matrix(d));
    }
    s
}

/// Steering vector at cosines, re-exported for pattern oracles.
pub fn beam_from_cosines(u: f64, v: f64, f: f64, geom: &ArrayGeometry) -> CVec {
    steering_from_cosines(u, v, f / geom.f_c, geom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn desk() -> (ArrayGeometry, SubcarrierGrid) {
        (
            ArrayGeometry::fully_delayed(8, 8, 100e9).unwrap(),
            SubcarrierGrid::new(100e9, 8e9, 16).unwrap(),
        )
    }

    #[test]
    fn zero_delay_is_identity() {
        let (g, _) = desk();
        let t = DMatrix::zeros(8, 8);
        let f = ttd_phase_matrix(&t, 101e9, &g, 1e-9).unwrap();
        assert!((f - CMat::identity(64, 64)).norm() < 1e-15);
    }

    #[test]
    fn uniform_delay_is_scalar_phase() {
        let (g, _) = desk();
        let t = DMatrix::from_element(8, 8, 0.3e-9);
        let f = ttd_phase_matrix(&t, 101e9, &g, 1e-9).unwrap();
        let c = cis(2.0 * PI * 101e9 * 0.3e-9);
        assert!((f - CMat::identity(64, 64) * c).norm() < 1e-12);
    }

    #[test]
    fn ttd_index_mapping() {
        let g = ArrayGeometry::new(4, 6, 2, 3, 100e9).unwrap();
        let t = DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 * 1e-11);
        let d = ttd_phase_diagonal(&t, 99e9, &g);
        for ih in 0..4 {
            for iv in 0..6 {
                let tau = ((ih / 2) * 3 + iv / 2) as f64 * 1e-11;
                let e = cis(2.0 * PI * 99e9 * tau);
                assert!((d[ih * 6 + iv] - e).norm() < 1e-12);
            }
        }
        assert!(ttd_phase_matrix(&DMatrix::from_element(2, 3, 2e-9), 1e9, &g, 1e-9).is_err());
        assert!(ttd_phase_matrix(&DMatrix::from_element(2, 3, -1e-10), 1e9, &g, 1e-9).is_err());
    }

    #[test]
    fn transmit_basic_cases() {
        let (g, gr) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_precoder(&g, &gr, 2, 2, 1e-9, 1.0, &mut rng);
        assert!(transmit(&p, &CVec::zeros(2), 3, &gr).unwrap().norm() == 0.0);
        let mut p1 = random_precoder(&g, &gr, 1, 1, 1e-9, 1.0, &mut rng);
        for d in &mut p1.digital {
            *d = CMat::from_element(1, 1, C64::new(1.0, 0.0));
        }
        let x = transmit(&p1, &CVec::from_element(1, C64::new(1.0, 0.0)), 5, &gr).unwrap();
        assert!((x - p1.analog(gr.freq(5)).column(0)).norm() < 1e-14);
    }

    #[test]
    fn transmit_covariance_monte_carlo() {
        let (g, gr) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_precoder(&g, &gr, 3, 3, 1e-9, 1.0, &mut rng);
        let f = p.full(4, &gr);
        let mut acc = CMat::zeros(64, 64);
        let n = 10_000;
        for _ in 0..n {
            let s = CVec::from_fn(3, |_, _| {
                C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
                    / 2f64.sqrt()
            });
            let x = transmit(&p, &s, 4, &gr).unwrap();
            acc += &x * x.adjoint();
        }
        acc /= C64::new(n as f64, 0.0);
        let r = &f * f.adjoint();
        assert!((acc - &r).norm() / r.norm() < 0.05);
    }

    #[test]
    fn power_normalisation() {
        let (g, gr) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_precoder(&g, &gr, 4, 2, 1e-9, 2.5, &mut rng);
        for m in 0..16 {
            assert!((p.power(m, &gr) - 2.5 / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_trajectory_points_everywhere_at_start() {
        let (g, gr) = desk();
        let d = Direction::new(1.9, 0.3).unwrap();
        let tr = squint_trajectory_config(d, d, &gr, &g, 1e-9, BandwidthMode::Effective).unwrap();
        for m in 0..16 {
            let p = subcarrier_pointing(&tr, m, &gr);
            assert!((p.theta - d.theta).abs() < 1e-9 && (p.phi - d.phi).abs() < 1e-9);
        }
    }

    #[test]
    fn pointing_endpoints_exact_and_monotone() {
        let (g, gr) = desk();
        let s = Direction::new(1.8, -0.2).unwrap();
        let e = Direction::new(2.0, 0.25).unwrap();
        let tr = squint_trajectory_config(s, e, &gr, &g, 1e-9, BandwidthMode::Effective).unwrap();
        let p1 = subcarrier_pointing(&tr, 0, &gr);
        let pm = subcarrier_pointing(&tr, 15, &gr);
        assert!((p1.theta - s.theta).abs() < 1e-12 && (p1.phi - s.phi).abs() < 1e-12);
        assert!((pm.theta - e.theta).abs() < 1e-12 && (pm.phi - e.phi).abs() < 1e-12);
        let phis: Vec<f64> = (0..16).map(|m| subcarrier_pointing(&tr, m, &gr).phi).collect();
        assert!(phis.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn literal_bandwidth_misses_far_endpoint() {
        let (g, gr) = desk();
        let s = Direction::new(1.8, -0.2).unwrap();
        let e = Direction::new(2.0, 0.25).unwrap();
        let tr = squint_trajectory_config(s, e, &gr, &g, 1e-9, BandwidthMode::Literal).unwrap();
        let p1 = subcarrier_pointing(&tr, 0, &gr);
        let pm = subcarrier_pointing(&tr, 15, &gr);
        assert!((p1.phi - s.phi).abs() < 1e-12);
        assert!((pm.phi - e.phi).abs() > 1e-3);
    }

    #[test]
    fn horizontal_trajectory_keeps_elevation() {
        let (g, gr) = desk();
        let s = Direction::new(1.7, -0.3).unwrap();
        let e = Direction::new(1.7, 0.3).unwrap();
        let tr = squint_trajectory_config(s, e, &gr, &g, 1e-9, BandwidthMode::Effective).unwrap();
        for m in 0..16 {
            assert!((subcarrier_pointing(&tr, m, &gr).theta - 1.7).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_oracle_matches_pointing() {
        let (g, gr) = desk();
        let s = Direction::new(1.75, -0.35).unwrap();
        let e = Direction::new(2.05, 0.3).unwrap();
        let tr = squint_trajectory_config(s, e, &gr, &g, 1e-9, BandwidthMode::Effective).unwrap();
        let n_scan = 256;
        let half = 1.0 / n_scan as f64;
        for m in [0, 5, 15] {
            let (u, v) = pattern_argmax(&tr.beam(m, &gr, &g), gr.freq(m), &g, n_scan);
            let (um, vm) = trajectory_cosines(&tr, m, &gr);
            assert!((u - um).abs() <= half + 1e-12 && (v - vm).abs() <= half + 1e-12, "m={m}");
        }
    }

    #[test]
    fn too_wide_trajectory_rejected() {
        let (g, gr) = desk();
        let s = Direction::new(0.3, -1.4).unwrap();
        let e = Direction::new(2.8, 1.4).unwrap();
        let err = squint_trajectory_config(s, e, &gr, &g, 1e-11, BandwidthMode::Effective).unwrap_err();
        assert!(matches!(err, IsacError::TtdRangeExceeded { .. }));
    }

    #[test]
    fn gain_is_one_at_pointing_direction() {
        let (g, gr) = desk();
        let s = Direction::new(1.8, -0.2).unwrap();
        let e = Direction::new(2.0, 0.25).unwrap();
        let tr = squint_trajectory_config(s, e, &gr, &g, 1e-9, BandwidthMode::Effective).unwrap();
        for m in 0..16 {
            let p = subcarrier_pointing(&tr, m, &gr);
            let gain = array_gain(p, gr.freq(m), &tr.ttd, &tr.ps_column(), &g).unwrap();
            assert!((gain - 1.0).abs() < 1e-9, "m={m} gain={gain}");
        }
    }

    #[test]
    fn equivalent_channels_identity_and_norms() {
        let (g, gr) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h: Vec<CMat> = (0..16)
            .map(|_| CMat::from_fn(64, 2, |_, _| C64::new(rng.random(), rng.random())))
            .collect();
        let sm: Vec<SensingMatrix> = (0..16)
            .map(|m| {
                let a = steering_vector(Direction { theta: 2.0, phi: 0.1 }, gr.freq(m), &g).unwrap();
                SensingMatrix { a_r: CMat::from_columns(&[a.clone()]), alpha: vec![C64::new(0.3, 0.1)], a_t: CMat::from_columns(&[a]) }
            })
            .collect();
        let (h0, g0) = equivalent_channels(&DMatrix::zeros(8, 8), &h, &sm, &gr, &g);
        assert_eq!(h0, h);
        assert_eq!(g0, sm);
        let t = DMatrix::from_fn(8, 8, |_, _| rng.random_range(0.0..1e-9));
        let (h1, g1) = equivalent_channels(&t, &h, &sm, &gr, &g);
        for m in 0..16 {
            for u in 0..2 {
                assert!((h1[m].column(u).norm() - h[m].column(u).norm()).abs() < 1e-12);
            }
            let s0 = sm[m].dense().svd(false, false).singular_values;
            let s1 = g1[m].dense().svd(false, false).singular_values;
            assert!((s0[0] - s1[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_sections_and_units() {
        let (g, gr) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = random_precoder(&g, &gr, 2, 1, 1e-9, 1.0, &mut rng);
        p.ttd.fill(0.5e-9);
        let d = dump_precoder(&p);
        assert!(d.starts_with("# ttd_ps 8x8\n500.000000000 "));
        assert!(d.contains("# ps_phase_rad 64x2\n"));
        assert_eq!(d.matches("# digital m=").count(), 16);
        assert_eq!(d.lines().count(), 1 + 8 + 1 + 64 + 16 * 3);
    }

    #[test]
    fn factorization_round_trip() {
        let (g, gr) = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let truth = random_precoder(&g, &gr, 4, 4, 1e-9, 1.0, &mut rng);
        let targets = truth.full_all(&gr);
        let (p, rep) = hybrid_factorize(&targets, &gr, &g, 4, 1e-9, 1.0, FactorizeOptions::default()).unwrap();
        assert!(rep.residual <= 1e-6, "residual {}", rep.residual);
        assert!(rep.objective_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(p.ttd.iter().all(|&t| (0.0..=1e-9).contains(&t)));
    }

    #[test]
    fn factorization_of_matched_steering() {
        let (g, gr) = desk();
        let a = steering_vector(Direction { theta: 1.9, phi: 0.4 }, gr.f_c, &g).unwrap() * C64::new(0.25, 0.0);
        let targets: Vec<CMat> = (0..16).map(|_| CMat::from_columns(&[a.clone()])).collect();
        let (_, rep) = hybrid_factorize(&targets, &gr, &g, 1, 1e-9, 1.0, FactorizeOptions::default()).unwrap();
        assert!(rep.residual <= 1e-3, "residual {}", rep.residual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gain_closed_form_matches_direct_sum(
            t0 in 1.6..2.4f64, p0 in -0.5..0.5f64, t1 in 1.6..2.4f64, p1 in -0.5..0.5f64,
            tu in 1.6..2.4f64, pu in -0.5..0.5f64, m in 0usize..16,
        ) {
            let (g, gr) = desk();
            let tr = squint_trajectory_config(Direction { theta: t0, phi: p0 }, Direction { theta: t1, phi: p1 }, &gr, &g, 1e-9, BandwidthMode::Effective).unwrap();
            let d = Direction { theta: tu, phi: pu };
            let direct = array_gain(d, gr.freq(m), &tr.ttd, &tr.ps_column(), &g).unwrap();
            let closed = trajectory_gain_closed_form(d, m, &tr, &gr, &g);
            prop_assert!((direct - closed).abs() < 1e-10);
            prop_assert!(direct <= 1.0 + 1e-12);
        }

        #[test]
        fn precoder_invariants_hold(seed in 0u64..1000) {
            let (g, gr) = desk();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_precoder(&g, &gr, 3, 2, 1e-9, 1.0, &mut rng);
            prop_assert!(p.ps().iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
            prop_assert!(p.ttd.iter().all(|&t| (0.0..=1e-9).contains(&t)));
            for m in 0..16 {
                prop_assert!((p.power(m, &gr) - 1.0 / 16.0).abs() < 1e-9);
            }
        }
    }
}
