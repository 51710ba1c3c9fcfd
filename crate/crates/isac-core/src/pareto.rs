//! Optimal waveform covariance on the SE–CRB Pareto boundary, boundary sweeps, the
//! correlation/separation harness and a loss-driven hybrid-precoder search.
//!
//! Per subcarrier the covariance is `R_m = Q_m Λ_m Q_m^H` with `Q_m` an orthonormal basis of
//! `[A_t, Ȧ_θ, Ȧ_φ, user steering]`. `Λ_m` weights the communication and sensing Gram matrices
//! `Ξ_c = w w^H` (`w_n = g^H q_n`, `g = D_t D_t^H Σ_u h_u`) and `Ξ_s = V V^H` (`V = Q^H A_t Σ`).
//! Both are trace-normalised before weighting so that `γ` trades comparable quantities.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::arrays::{steering_derivatives, steering_vector, ArrayGeometry, BeamspaceDictionary, Direction};
use crate::channels::{cs_correlation, SensingMatrix, SubcarrierGrid, TargetResponse};
use crate::linalg::{complete_unitary, fro2, hermitian_eigen, least_squares, orthonormal_columns, trace_re};
use crate::metrics::{crb, fisher_information, fisher_information_precoder, isac_loss, isotropic_covariance, spectral_efficiency, LossSample};
use crate::precoder::{equivalent_channels, golden_max, hybrid_factorize, random_precoder, FactorizeOptions, HybridPrecoder};
use crate::scenario::{scenario_from_directions, Scenario, SystemParams};
use crate::{CMat, CVec, IsacError, Result, C64};

/// Default `γ` sweep: 25 points log-spaced in `[10⁻³, 10³]`.
pub const DEFAULT_GAMMA_POINTS: usize = 25;
pub const DEFAULT_GAMMA_MIN: f64 = 1e-3;
pub const DEFAULT_GAMMA_MAX: f64 = 1e3;
/// `γ` of the sensing-end point used as the CRB normaliser.
pub const SENSING_END_GAMMA: f64 = 1e3;

/// Log-spaced grid of `n` values in `[lo, hi]`.
pub fn gamma_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Basis columns `[A_t, Ȧ_{t,θ}, Ȧ_{t,φ}, {a_t(user)}]`, conjugated when `conjugate` is set.
pub fn basis_columns(
    targets: &[Direction],
    users: &[Direction],
    f: f64,
    geom: &ArrayGeometry,
    conjugate: bool,
) -> Result<CMat> {
    if targets.is_empty() || users.is_empty() {
        return Err(IsacError::DegenerateScene("the basis needs at least one target and one user".into()));
    }
    let k = targets.len();
    let mut u = CMat::zeros(geom.n_elements(), 3 * k + users.len());
    for (i, &d) in targets.iter().enumerate() {
        let (dt, dp) = steering_derivatives(d, f, geom)?;
        u.set_column(i, &steering_vector(d, f, geom)?);
        u.set_column(k + i, &dt);
        u.set_column(2 * k + i, &dp);
    }
    for (j, &d) in users.iter().enumerate() {
        u.set_column(3 * k + j, &steering_vector(d, f, geom)?);
    }
    if conjugate {
        u.apply(|z| *z = z.conj());
    }
    Ok(u)
}

/// The basis `U_m` with conjugated target columns as written in the covariance closed form.
pub fn basis_matrix(targets: &[Direction], users: &[Direction], f: f64, geom: &ArrayGeometry) -> Result<CMat> {
    let mut u = basis_columns(targets, users, f, geom, false)?;
    let k = targets.len();
    for c in 0..3 * k {
        for z in u.column_mut(c).iter_mut() {
            *z = z.conj();
        }
    }
    Ok(u)
}

/// `(Ξ_c, Ξ_s)` for basis `q` (columns `q_n`), users `h` (`N_t × U`) and one sensing matrix.
pub fn xi_matrices(q: &CMat, h: &CMat, dt: &BeamspaceDictionary, g: &SensingMatrix) -> (CMat, CMat) {
    let hsum = h.column_sum();
    let hb = dt.codewords.adjoint() * hsum;
    let gvec = &dt.codewords * hb;
    let w = CVec::from_fn(q.ncols(), |n, _| gvec.dotc(&q.column(n)));
    let xi_c = &w * w.adjoint();
    let sigma = CMat::from_diagonal(&CVec::from_vec(g.alpha.clone()));
    let v = q.adjoint() * &g.a_t * sigma;
    let xi_s = &v * v.adjoint();
    (xi_c, xi_s)
}

/// `Λ = (Ξ_c + γΞ_s)·P_t/(M·tr(Ξ_c + γΞ_s))`.
pub fn optimal_lambda(xi_c: &CMat, xi_s: &CMat, gamma: f64, p_t: f64, m_count: usize) -> Result<CMat> {
    if !(gamma >= 0.0) {
        return Err(IsacError::domain("γ must be non-negative"));
    }
    let mix = xi_c + xi_s * C64::new(gamma, 0.0);
    let tr = trace_re(&mix);
    if !(tr > 0.0) {
        return Err(IsacError::DegenerateScene("Ξ_c + γΞ_s has zero trace".into()));
    }
    Ok(mix * C64::new(p_t / (m_count as f64 * tr), 0.0))
}

/// `Σ_{i,j} Λ[i,j]·Ξ[i,j]`.
fn weighted_sum(lambda: &CMat, xi: &CMat) -> f64 {
    lambda.iter().zip(xi.iter()).map(|(a, b)| (a * b).re).sum()
}

/// Per-subcarrier bases and Gram matrices of one channel realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoModel {
    /// Orthonormal bases `Q_m`.
    pub bases: Vec<CMat>,
    pub xi_c: Vec<CMat>,
    pub xi_s: Vec<CMat>,
    /// Nominal basis size `N_R = 3K + U`.
    pub n_r: usize,
    pub p_t: f64,
}

impl ParetoModel {
    /// Builds the model from channels, target response and user directions.
    pub fn new(
        h: &[CMat],
        resp: &TargetResponse,
        users: &[Direction],
        params: &SystemParams,
        dt: &BeamspaceDictionary,
    ) -> Result<Self> {
        let grid = &params.grid;
        let targets: Vec<Direction> = resp.targets.iter().map(|t| t.dir).collect();
        let mut bases = Vec::with_capacity(grid.m_count);
        let mut xi_c = Vec::with_capacity(grid.m_count);
        let mut xi_s = Vec::with_capacity(grid.m_count);
        for m in 0..grid.m_count {
            let raw = basis_columns(&targets, users, grid.freq(m), &params.tx, false)?;
            let q = orthonormal_columns(&raw, 1e-9);
            let (c, s) = xi_matrices(&q, &h[m], dt, &resp.per_subcarrier[m]);
            bases.push(q);
            xi_c.push(c);
            xi_s.push(s);
        }
        Ok(Self { bases, xi_c, xi_s, n_r: 3 * targets.len() + users.len(), p_t: params.p_t })
    }

    /// `Λ_m(γ)` from trace-normalised Gram matrices.
    pub fn lambdas(&self, gamma: f64) -> Result<Vec<CMat>> {
        let m_count = self.bases.len();
        self.xi_c
            .iter()
            .zip(&self.xi_s)
            .map(|(c, s)| {
                let (tc, ts) = (trace_re(c), trace_re(s));
                if !(tc > 0.0 && ts > 0.0) {
                    return Err(IsacError::DegenerateScene("a Gram matrix has zero trace".into()));
                }
                optimal_lambda(&(c / C64::new(tc, 0.0)), &(s / C64::new(ts, 0.0)), gamma, self.p_t, m_count)
            })
            .collect()
    }

    /// `R_m = Q_m Λ_m Q_m^H`.
    pub fn covariances(&self, lambdas: &[CMat]) -> Vec<CMat> {
        self.bases.iter().zip(lambdas).map(|(q, l)| q * l * q.adjoint()).collect()
    }
}

/// Stream realisation of `R = Q Λ Q^H`: the top `min(N_RF, rank)` eigenmodes, rescaled to `power`,
/// then rotated so that column `u` carries user `u` and later columns do not reach earlier users.
pub fn realize_from_lambda(q: &CMat, lambda: &CMat, h: &CMat, n_rf: usize, power: f64) -> Result<CMat> {
    let (vals, vecs) = hermitian_eigen(lambda);
    let f0 = modes(&(q * vecs), &vals, n_rf.min(q.ncols()), power);
    rotate_to_users(f0, h)
}

/// Stream realisation of an arbitrary covariance.
pub fn realize_covariance(r: &CMat, h: &CMat, n_rf: usize, power: f64) -> Result<CMat> {
    let (vals, vecs) = hermitian_eigen(r);
    let f0 = modes(&vecs, &vals, n_rf.min(r.nrows()), power);
    rotate_to_users(f0, h)
}

fn modes(vecs: &CMat, vals: &[f64], k: usize, power: f64) -> CMat {
    let mut f = CMat::zeros(vecs.nrows(), k);
    for i in 0..k {
        f.set_column(i, &(vecs.column(i) * C64::new(vals[i].max(0.0).sqrt(), 0.0)));
    }
    let p = fro2(&f);
    if p > 0.0 {
        f *= C64::new((power / p).sqrt(), 0.0);
    }
    f
}

fn rotate_to_users(f0: CMat, h: &CMat) -> Result<CMat> {
    let k = f0.ncols();
    if k < h.ncols() {
        return Err(IsacError::Constraint(format!("{k} streams cannot serve {} users", h.ncols())));
    }
    let hs_h = (h.adjoint() * &f0).adjoint();
    let q = orthonormal_columns(&hs_h, 1e-12);
    let rot = if q.ncols() == 0 { CMat::identity(k, k) } else { complete_unitary(&q) };
    Ok(f0 * rot)
}

/// One point of the SE–CRB boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub gamma: f64,
    /// Exact sum rate of the stream realisation, interference included (bits/s).
    pub se: f64,
    /// Sum rate of the same realisation with interference removed (bits/s).
    pub se_no_interference: f64,
    /// Exact CRB on `R_x` (rad²); infinite when the FIM is singular.
    pub crb: f64,
    /// Closed-form rate approximation (bits/s).
    pub se_eq29: f64,
    /// Closed-form CRB approximation (rad²).
    pub crb_eq30: f64,
    pub cor: f64,
    /// Relative hybrid-factorisation residual of the realisation, when requested.
    pub residual: Option<f64>,
    /// False for a threshold that no `γ` reaches.
    pub feasible: bool,
}

/// Channels and helpers shared by every point of one scenario.
#[derive(Debug, Clone)]
pub struct ParetoContext<'a> {
    pub scenario: &'a Scenario,
    pub model: ParetoModel,
    pub cor: f64,
    pub dt: BeamspaceDictionary,
}

impl<'a> ParetoContext<'a> {
    /// Builds the model and the zero-delay correlation of a scenario.
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        let p = &scenario.params;
        let (dt, dr) = p.dictionaries()?;
        let users: Vec<Direction> = scenario.users.iter().map(|u| u.los.dir).collect();
        let model = ParetoModel::new(&scenario.comm.vectors, &scenario.resp, &users, p, &dt)?;
        let (cor, _) = cs_correlation(&scenario.comm.vectors, &scenario.resp.per_subcarrier, &dt, &dr)?;
        Ok(Self { scenario, model, cor, dt })
    }

    /// Stream realisations at `γ`.
    pub fn realizations(&self, gamma: f64) -> Result<Vec<CMat>> {
        let p = &self.scenario.params;
        let power = p.p_t / p.grid.m_count as f64;
        let lambdas = self.model.lambdas(gamma)?;
        (0..p.grid.m_count)
            .map(|m| realize_from_lambda(&self.model.bases[m], &lambdas[m], &self.scenario.comm.vectors[m], p.n_rf, power))
            .collect()
    }

    /// Evaluates the boundary point at `γ`.
    pub fn point(&self, gamma: f64, factorize: bool) -> Result<ParetoPoint> {
        let scn = self.scenario;
        let p = &scn.params;
        let grid = &p.grid;
        let lambdas = self.model.lambdas(gamma)?;
        let r = self.model.covariances(&lambdas);
        let power = p.p_t / grid.m_count as f64;
        let f: Vec<CMat> = (0..grid.m_count)
            .map(|m| realize_from_lambda(&self.model.bases[m], &lambdas[m], &scn.comm.vectors[m], p.n_rf, power))
            .collect::<Result<_>>()?;
        let se = spectral_efficiency(&scn.comm.vectors, &f, p.noise.n_c0, grid)?.total;
        let se_no_interference = interference_free_rate(&scn.comm.vectors, &f, p.noise.n_c0, grid);
        let fim = fisher_information(&scn.resp, &r, p.noise.n_s0, grid, &p.tx, &p.rx)?;
        let crb_exact = crb_or_infinite(crb(&fim))?;
        let sigma_c2 = grid.spacing() * p.noise.n_c0;
        let mut se_eq29 = 0.0;
        let mut sens = 0.0;
        for m in 0..grid.m_count {
            se_eq29 += grid.spacing() * (1.0 + weighted_sum(&lambdas[m], &self.model.xi_c[m]) / sigma_c2).log2();
            sens += weighted_sum(&lambdas[m], &self.model.xi_s[m]);
        }
        let scale = 2.0 / (grid.bandwidth * p.noise.n_s0);
        let crb_eq30 = (self.model.n_r * self.model.n_r) as f64 / (scale * sens);
        let residual = if factorize {
            let (_, rep) = hybrid_factorize(&f, grid, &p.tx, p.n_rf, p.t_max, p.p_t, FactorizeOptions::default())?;
            Some(rep.residual)
        } else {
            None
        };
        Ok(ParetoPoint {
            gamma,
            se,
            se_no_interference,
            crb: crb_exact,
            se_eq29,
            crb_eq30,
            cor: self.cor,
            residual,
            feasible: true,
        })
    }

    /// Boundary over a `γ` grid, in grid order.
    pub fn sweep(&self, gammas: &[f64], factorize: bool) -> Result<Vec<ParetoPoint>> {
        if gammas.is_empty() {
            return Err(IsacError::domain("γ grid is empty"));
        }
        gammas.iter().map(|&g| self.point(g, factorize)).collect()
    }

    /// Boundary driven by SE thresholds: bisects `log γ` so that SE meets each threshold
    /// within 1% relative while staying above it.
    pub fn sweep_thresholds(&self, thresholds: &[f64]) -> Result<Vec<ParetoPoint>> {
        let lo_pt = self.point(DEFAULT_GAMMA_MIN, false)?;
        let hi_pt = self.point(DEFAULT_GAMMA_MAX, false)?;
        let mut out = Vec::with_capacity(thresholds.len());
        for &t in thresholds {
            if lo_pt.se < t {
                out.push(ParetoPoint { feasible: false, ..lo_pt.clone() });
                continue;
            }
            if hi_pt.se >= t {
                out.push(hi_pt.clone());
                continue;
            }
            let (mut a, mut b) = (DEFAULT_GAMMA_MIN.ln(), DEFAULT_GAMMA_MAX.ln());
            let mut best = lo_pt.clone();
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                let pt = self.point(mid.exp(), false)?;
                if pt.se >= t {
                    a = mid;
                    best = pt;
                    if (best.se - t) / t <= 0.01 {
                        break;
                    }
                } else {
                    b = mid;
                }
            }
            out.push(best);
        }
        Ok(out)
    }

    /// `(SE, CRB)` of an arbitrary covariance set, realised like the boundary points.
    pub fn evaluate_covariances(&self, r: &[CMat]) -> Result<(f64, f64)> {
        let scn = self.scenario;
        let p = &scn.params;
        let power = p.p_t / p.grid.m_count as f64;
        let f: Vec<CMat> = (0..p.grid.m_count)
            .map(|m| realize_covariance(&r[m], &scn.comm.vectors[m], p.n_rf, power))
            .collect::<Result<_>>()?;
        let se = spectral_efficiency(&scn.comm.vectors, &f, p.noise.n_c0, &p.grid)?.total;
        let fim = fisher_information(&scn.resp, r, p.noise.n_s0, &p.grid, &p.tx, &p.rx)?;
        Ok((se, crb_or_infinite(crb(&fim))?))
    }
}

fn crb_or_infinite(c: Result<f64>) -> Result<f64> {
    match c {
        Ok(v) => Ok(v),
        Err(IsacError::InfiniteCrb { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn interference_free_rate(h: &[CMat], f: &[CMat], n_c0: f64, grid: &SubcarrierGrid) -> f64 {
    let noise = grid.spacing() * n_c0;
    let mut total = 0.0;
    for m in 0..grid.m_count {
        for u in 0..h[m].ncols() {
            let s = h[m].column(u).dotc(&f[m].column(u)).norm_sqr();
            total += grid.spacing() * (1.0 + s / noise).log2();
        }
    }
    total
}

/// Random PSD covariance per subcarrier with trace `P_t/M`.
pub fn random_feasible_covariances(n_t: usize, p_t: f64, m_count: usize, rng: &mut impl Rng) -> Vec<CMat> {
    let rank = rng.random_range(1..=n_t);
    (0..m_count)
        .map(|_| {
            let a = CMat::from_fn(n_t, rank, |_, _| {
                C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
            });
            let r = &a * a.adjoint();
            let tr = trace_re(&r);
            r * C64::new(p_t / (m_count as f64 * tr), 0.0)
        })
        .collect()
}

/// Whether some curve point has at least `se` (relative slack `tol`) and at most `crb`.
pub fn weakly_dominated(curve: &[ParetoPoint], se: f64, crb: f64, tol: f64) -> bool {
    curve.iter().any(|p| p.se >= se * (1.0 - tol) && p.crb <= crb * (1.0 + tol))
}

/// Indicator-form approximations of `(Ξ_c, Ξ_s)` from beamspace peak coincidences.
///
/// `aligned[k]` states whether target `k`'s sensing peak equals the communication peak;
/// `sigma2[k]` is `|Σ[k,k]|²`.
pub fn xi_indicator_approximation(k: usize, users: usize, aligned: &[bool], sigma2: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = 3 * k + users;
    let s: f64 = aligned.iter().filter(|&&a| a).count() as f64;
    let s_sigma: f64 = aligned.iter().zip(sigma2).filter(|(a, _)| **a).map(|(_, v)| v).sum();
    let total_sigma: f64 = sigma2.iter().sum();
    let mut c = DMatrix::zeros(n, n);
    let mut sm = DMatrix::zeros(n, n);
    for n1 in 0..n {
        for n2 in 0..n {
            let (i1, i2) = (n1 + 1, n2 + 1);
            let mut vc = 0.0;
            let mut vs = 0.0;
            if i1 == i2 && i1 > 3 * k {
                vc += 1.0;
                vs += s_sigma;
            }
            if i1 <= k && i2 > 3 * k {
                vc += 2.0 * s;
            }
            if i1 <= k && i2 <= k {
                vc += s * s;
                vs += total_sigma;
            }
            c[(n1, n2)] = vc;
            sm[(n1, n2)] = vs;
        }
    }
    (c, sm)
}

/// Tilt-family delay settings `T = a·x + b·y + c·(x² + y²)` on normalised subarray
/// coordinates `x, y ∈ [−½, ½]`, each coefficient on `n` points of `[−t_max, t_max]`,
/// min-shifted to zero; settings whose span exceeds `t_max` are skipped.
pub fn tilt_grid(geom: &ArrayGeometry, t_max: f64, n: usize) -> Vec<DMatrix<f64>> {
    let coef = |i: usize| if n == 1 { 0.0 } else { -t_max + 2.0 * t_max * i as f64 / (n - 1) as f64 };
    let norm = |q: usize, total: usize| if total == 1 { 0.0 } else { q as f64 / (total - 1) as f64 - 0.5 };
    let mut out = Vec::new();
    for ia in 0..n {
        for ib in 0..n {
            for ic in 0..n {
                let (a, b, c) = (coef(ia), coef(ib), coef(ic));
                let mut t = DMatrix::from_fn(geom.q_h, geom.q_v, |qh, qv| {
                    let (x, y) = (norm(qh, geom.q_h), norm(qv, geom.q_v));
                    a * x + b * y + c * (x * x + y * y)
                });
                let mn = t.min();
                t.add_scalar_mut(-mn);
                if t.max() <= t_max * (1.0 + 1e-12) {
                    t.apply(|v| *v = v.clamp(0.0, t_max));
                    out.push(t);
                }
            }
        }
    }
    out
}

/// Correlation of the TTD-modulated channels.
pub fn correlation_with_delays(scn: &Scenario, ttd: &DMatrix<f64>, dt: &BeamspaceDictionary, dr: &BeamspaceDictionary) -> Result<f64> {
    let p = &scn.params;
    let (h, g) = equivalent_channels(ttd, &scn.comm.vectors, &scn.resp.per_subcarrier, &p.grid, &p.tx);
    Ok(cs_correlation(&h, &g, dt, dr)?.0)
}

/// `Cor*`: the best correlation over the 9³ tilt grid.
pub fn cor_star(scn: &Scenario, dt: &BeamspaceDictionary, dr: &BeamspaceDictionary) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for t in tilt_grid(&scn.params.tx, scn.params.t_max, 9) {
        best = best.max(correlation_with_delays(scn, &t, dt, dr)?);
    }
    Ok(best)
}

/// One step of the separation sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationSample {
    pub separation_deg: f64,
    pub cor: f64,
    pub se: f64,
    pub crb: f64,
}

/// Target–user separation sweep at fixed `γ`.
///
/// Two users sit at a seeded elevation and azimuths `φ₀` and `φ₀ − 0.6`; target `k` starts on
/// user `k` and moves outward in azimuth by the separation. Distances are 50 m and path phases
/// are held fixed across the sweep.
pub fn separation_sweep(params: SystemParams, seed: u64, steps: usize, max_deg: f64, gamma: f64) -> Result<Vec<SeparationSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = rng.random_range(1.9..2.3);
    let phi0 = rng.random_range(0.0..0.2);
    let users = [(Direction { theta, phi: phi0 }, 50.0), (Direction { theta, phi: phi0 - 0.6 }, 50.0)];
    let phase_seed: u64 = rng.random();
    let mut out = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let sep_deg = max_deg * i as f64 / steps as f64;
        let d = sep_deg.to_radians();
        let targets = [
            (Direction { theta, phi: phi0 + d }, 50.0),
            (Direction { theta, phi: phi0 - 0.6 - d }, 50.0),
        ];
        let scn = scenario_from_directions(params, &users, &targets, phase_seed)?;
        let ctx = ParetoContext::new(&scn)?;
        let pt = ctx.point(gamma, false)?;
        out.push(SeparationSample { separation_deg: sep_deg, cor: ctx.cor, se: pt.se, crb: pt.crb });
    }
    Ok(out)
}

/// Loss weights: SE threshold `Γ` (bits/s/Hz) and penalty weight `η_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub gamma_se: f64,
    pub eta_c: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self { gamma_se: 1.0, eta_c: 1.0 }
    }
}

/// Budgets of the multi-start search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBudget {
    pub starts: usize,
    /// Loss evaluations per start.
    pub evals_per_start: usize,
    /// Relative loss improvement per round below which a start stops.
    pub tol: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { starts: 8, evals_per_start: 80, tol: 1e-5 }
    }
}

/// Per-scenario loss normalisers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizers {
    pub cor_star: f64,
    pub crb_min: f64,
}

/// `Cor*` from the tilt grid and `CRB_min` from the sensing-end boundary point.
pub fn normalizers(truth: &Scenario) -> Result<Normalizers> {
    let (dt, dr) = truth.params.dictionaries()?;
    let ctx = ParetoContext::new(truth)?;
    let crb_min = ctx.point(SENSING_END_GAMMA, false)?.crb;
    if !crb_min.is_finite() {
        return Err(IsacError::DegenerateScene("sensing-end CRB is infinite".into()));
    }
    Ok(Normalizers { cor_star: cor_star(truth, &dt, &dr)?, crb_min })
}

/// Metrics of one evaluated precoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchMetrics {
    pub loss: f64,
    /// Sum rate (bits/s).
    pub se: f64,
    pub crb: f64,
    pub cor: f64,
}

/// Result of [`loss_driven_precoder_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub precoder: HybridPrecoder,
    pub gamma: f64,
    pub metrics: SearchMetrics,
    /// Loss of every start's initial point.
    pub initial_losses: Vec<f64>,
    /// Loss of every start after descent.
    pub final_losses: Vec<f64>,
    pub best_start: usize,
    pub crb_isotropic: f64,
    pub normalizers: Normalizers,
    pub evaluations: usize,
}

struct SearchState {
    log_gamma: f64,
    ttd: DMatrix<f64>,
    ps: DMatrix<f64>,
}

struct Evaluator<'a> {
    truth: &'a Scenario,
    prior: ParetoContext<'a>,
    dt: BeamspaceDictionary,
    dr: BeamspaceDictionary,
    norm: Normalizers,
    loss: LossParams,
    cor_cache: Option<(DMatrix<f64>, f64)>,
    evaluations: usize,
}

impl Evaluator<'_> {
    fn precoder(&self, st: &SearchState) -> Result<HybridPrecoder> {
        let p = &self.truth.params;
        let targets = self.prior.realizations(st.log_gamma.exp())?;
        let mut pre = HybridPrecoder {
            geom: p.tx,
            ttd: st.ttd.clone(),
            ps_phase: st.ps.clone(),
            digital: Vec::with_capacity(p.grid.m_count),
            t_max: p.t_max,
            p_t: p.p_t,
        };
        for (m, t) in targets.iter().enumerate() {
            let a = pre.analog(p.grid.freq(m));
            pre.digital.push(least_squares(&a, t));
        }
        pre.normalize_power(&p.grid);
        Ok(pre)
    }

    fn cor(&mut self, ttd: &DMatrix<f64>) -> Result<f64> {
        if let Some((t, c)) = &self.cor_cache {
            if t == ttd {
                return Ok(*c);
            }
        }
        let c = correlation_with_delays(self.truth, ttd, &self.dt, &self.dr)?;
        self.cor_cache = Some((ttd.clone(), c));
        Ok(c)
    }

    fn evaluate(&mut self, st: &SearchState) -> Result<SearchMetrics> {
        self.evaluations += 1;
        let p = &self.truth.params;
        let pre = self.precoder(st)?;
        let f = pre.full_all(&p.grid);
        let se = spectral_efficiency(&self.truth.comm.vectors, &f, p.noise.n_c0, &p.grid)?.total;
        let fim = fisher_information_precoder(&self.truth.resp, &f, p.noise.n_s0, &p.grid, &p.tx, &p.rx)?;
        let c = crb_or_infinite(crb(&fim))?;
        let cor = self.cor(&st.ttd)?;
        let sample = LossSample {
            cor,
            cor_star: self.norm.cor_star,
            crb: if c.is_finite() { c } else { f64::MAX },
            crb_min: self.norm.crb_min,
            se: se / p.grid.bandwidth,
        };
        let loss = isac_loss(&[sample], self.loss.gamma_se, self.loss.eta_c)?;
        Ok(SearchMetrics { loss, se, crb: c, cor })
    }
}

/// Golden-section search on one coordinate, keeping the move only if the loss drops.
fn line_search(
    ev: &mut Evaluator<'_>,
    st: &mut SearchState,
    current: &mut SearchMetrics,
    lo: f64,
    hi: f64,
    iters: usize,
    get: impl Fn(&SearchState) -> f64,
    set: impl Fn(&mut SearchState, f64),
) -> Result<()> {
    let orig = get(st);
    let mut best = (current.loss, orig, *current);
    let mut failure = None;
    golden_max(
        |x| {
            set(st, x);
            match ev.evaluate(st) {
                Ok(m) => {
                    if m.loss < best.0 {
                        best = (m.loss, x, m);
                    }
                    -m.loss
                }
                Err(e) => {
                    failure = Some(e);
                    f64::NEG_INFINITY
                }
            }
        },
        lo,
        hi,
        iters,
    );
    if let Some(e) = failure {
        set(st, orig);
        return Err(e);
    }
    set(st, best.1);
    *current = best.2;
    Ok(())
}

/// Multi-start coordinate descent on the ISAC loss of a single scenario.
///
/// The digital precoders are least-squares fits of the analog network to the boundary
/// realisation built from `prior` at the current `γ`. Coordinates are `log γ`, the subarray
/// delays and the phase-shifter phases, each searched by golden section and accepted only on
/// improvement. Start 0 is the hybrid factorisation of the `γ = 1` realisation; the rest are
/// random. Metrics are evaluated on `truth`.
pub fn loss_driven_precoder_search(
    truth: &Scenario,
    prior: &Scenario,
    loss: LossParams,
    budget: SearchBudget,
    seed: u64,
) -> Result<SearchOutcome> {
    let p = truth.params;
    let (dt, dr) = p.dictionaries()?;
    let norm = normalizers(truth)?;
    let prior_ctx = ParetoContext::new(prior)?;
    let mut ev = Evaluator { truth, prior: prior_ctx, dt, dr, norm, loss, cor_cache: None, evaluations: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nt = p.tx.n_elements();
    let (gmin, gmax) = (DEFAULT_GAMMA_MIN.ln(), DEFAULT_GAMMA_MAX.ln());

    let mut initial_losses = Vec::with_capacity(budget.starts);
    let mut final_losses = Vec::with_capacity(budget.starts);
    let mut best: Option<(usize, SearchState, SearchMetrics)> = None;
    for start in 0..budget.starts {
        let mut st = if start == 0 {
            let targets = ev.prior.realizations(1.0)?;
            let opts = FactorizeOptions { max_iter: 30, restarts: 4, seed, ..FactorizeOptions::default() };
            let (pre, _) = hybrid_factorize(&targets, &p.grid, &p.tx, p.n_rf, p.t_max, p.p_t, opts)?;
            SearchState { log_gamma: 0.0, ttd: pre.ttd, ps: pre.ps_phase }
        } else {
            let pre = random_precoder(&p.tx, &p.grid, p.n_rf, 1, p.t_max, p.p_t, &mut rng);
            SearchState { log_gamma: rng.random_range(gmin..gmax), ttd: pre.ttd, ps: pre.ps_phase }
        };
        let start_evals = ev.evaluations;
        let mut cur = ev.evaluate(&st)?;
        initial_losses.push(cur.loss);
        let mut round = 0usize;
        let spent = |ev: &Evaluator<'_>| ev.evaluations - start_evals >= budget.evals_per_start;
        'rounds: while !spent(&ev) {
            let before = cur.loss;
            line_search(&mut ev, &mut st, &mut cur, gmin, gmax, 8, |s| s.log_gamma, |s, x| s.log_gamma = x)?;
            for j in 0..4 {
                if spent(&ev) {
                    break 'rounds;
                }
                let q = (round * 4 + j) % p.tx.n_subarrays();
                let (qh, qv) = (q / p.tx.q_v, q % p.tx.q_v);
                line_search(&mut ev, &mut st, &mut cur, 0.0, p.t_max, 6, move |s| s.ttd[(qh, qv)], move |s, x| s.ttd[(qh, qv)] = x)?;
            }
            for j in 0..8 {
                if spent(&ev) {
                    break 'rounds;
                }
                let idx = (round * 8 + j) % (nt * p.n_rf);
                let (n, r) = (idx % nt, idx / nt);
                line_search(&mut ev, &mut st, &mut cur, -PI, PI, 6, move |s| s.ps[(n, r)], move |s, x| s.ps[(n, r)] = x)?;
            }
            round += 1;
            if (before - cur.loss).abs() <= budget.tol * before.abs().max(1e-300) {
                break;
            }
        }
        final_losses.push(cur.loss);
        if best.as_ref().is_none_or(|(_, _, b)| cur.loss < b.loss) {
            best = Some((start, st, cur));
        }
    }
    let (best_start, st, metrics) = best.ok_or_else(|| IsacError::domain("at least one start is required"))?;
    let precoder = ev.precoder(&st)?;
    let iso = vec![isotropic_covariance(p.tx.n_elements(), p.p_t, p.grid.m_count); p.grid.m_count];
    let crb_isotropic = crb_or_infinite(crb(&fisher_information(&truth.resp, &iso, p.noise.n_s0, &p.grid, &p.tx, &p.rx)?))?;
    Ok(SearchOutcome {
        precoder,
        gamma: st.log_gamma.exp(),
        metrics,
        initial_losses,
        final_losses,
        best_start,
        crb_isotropic,
        normalizers: norm,
        evaluations: ev.evaluations,
    })
}
