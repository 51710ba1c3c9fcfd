//! Spectral efficiency, Fisher information and CRB, the ISAC loss, and frame-level efficiency.

use nalgebra::DMatrix;

use crate::arrays::{steering_derivatives, ArrayGeometry};
use crate::channels::{SubcarrierGrid, TargetResponse};
use crate::linalg::symmetric_eigenvalues;
use crate::{CMat, IsacError, Result, C64};

/// Noise power spectral densities (W/Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub n_c0: f64,
    pub n_s0: f64,
}

impl NoiseConfig {
    /// Validated constructor.
    pub fn new(n_c0: f64, n_s0: f64) -> Result<Self> {
        if !(n_c0 > 0.0 && n_s0 > 0.0) {
            return Err(IsacError::domain("noise PSDs must be positive"));
        }
        Ok(Self { n_c0, n_s0 })
    }
}

/// Converts dBm/Hz to W/Hz.
pub fn dbm_per_hz_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Spectral-efficiency breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct SeReport {
    /// Sum over users and subcarriers (bits/s).
    pub total: f64,
    /// `per_user[(u, m)]` is `ℛ_{u,m}`.
    pub per_user: DMatrix<f64>,
}

/// Sum rate with inter-stream interference.
///
/// `h[m]` is `N_t × U`; `f[m]` is `N_t × S` with `S ≥ U`, column `u` carrying user `u` and all
/// remaining columns counted as interference.
pub fn spectral_efficiency(h: &[CMat], f: &[CMat], n_c0: f64, grid: &SubcarrierGrid) -> Result<SeReport> {
    if h.len() != grid.m_count || f.len() != grid.m_count {
        return Err(IsacError::domain("one channel and one precoder per subcarrier are required"));
    }
    let users = h.first().map_or(0, |x| x.ncols());
    let spacing = grid.spacing();
    let noise = spacing * n_c0;
    let mut per_user = DMatrix::zeros(users, grid.m_count);
    for m in 0..grid.m_count {
        if f[m].ncols() < users || f[m].nrows() != h[m].nrows() {
            return Err(IsacError::domain("precoder must have N_t rows and at least U columns"));
        }
        let g = h[m].adjoint() * &f[m];
        for u in 0..users {
            let signal = g[(u, u)].norm_sqr();
            let interference: f64 = (0..g.ncols()).filter(|&i| i != u).map(|i| g[(u, i)].norm_sqr()).sum();
            let denom = interference + noise;
            let rate = if signal == 0.0 { 0.0 } else { spacing * (1.0 + signal / denom).log2() };
            per_user[(u, m)] = rate;
        }
    }
    Ok(SeReport { total: per_user.sum(), per_user })
}

/// Fisher information for the target angles, ordered `θ_1..θ_K, φ_1..φ_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    pub per_subcarrier: Vec<DMatrix<f64>>,
}

/// Columns `[A, Ȧ_θ, Ȧ_φ]` for one subcarrier.
fn steering_block(resp: &TargetResponse, m: usize, f: f64, geom: &ArrayGeometry, tx: bool) -> Result<CMat> {
    let k = resp.targets.len();
    let s = &resp.per_subcarrier[m];
    let base = if tx { &s.a_t } else { &s.a_r };
    let mut x = CMat::zeros(base.nrows(), 3 * k);
    for (i, t) in resp.targets.iter().enumerate() {
        let (dt, dp) = steering_derivatives(t.dir, f, geom)?;
        x.set_column(i, &base.column(i));
        x.set_column(k + i, &dt);
        x.set_column(2 * k + i, &dp);
    }
    Ok(x)
}

/// Analytic FIM from per-subcarrier transmit covariances `R_{x,m}`.
pub fn fisher_information(
    resp: &TargetResponse,
    r: &[CMat],
    n_s0: f64,
    grid: &SubcarrierGrid,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
) -> Result<FisherInfo> {
    fisher_core(resp, grid, tx, rx, n_s0, |m, x| Ok(x.adjoint() * &r[m] * x), r.len())
}

/// Analytic FIM from per-subcarrier precoders, using `R_{x,m} = F_m F_m^H`.
pub fn fisher_information_precoder(
    resp: &TargetResponse,
    f: &[CMat],
    n_s0: f64,
    grid: &SubcarrierGrid,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
) -> Result<FisherInfo> {
    fisher_core(
        resp,
        grid,
        tx,
        rx,
        n_s0,
        |m, x| {
            let p = x.adjoint() * &f[m];
            Ok(&p * p.adjoint())
        },
        f.len(),
    )
}

fn fisher_core(
    resp: &TargetResponse,
    grid: &SubcarrierGrid,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    n_s0: f64,
    tx_gram: impl Fn(usize, &CMat) -> Result<CMat>,
    count: usize,
) -> Result<FisherInfo> {
    if count != grid.m_count || resp.per_subcarrier.len() != grid.m_count {
        return Err(IsacError::domain("one covariance and one response per subcarrier are required"));
    }
    if !(n_s0 > 0.0) {
        return Err(IsacError::domain("sensing noise PSD must be positive"));
    }
    let k = resp.targets.len();
    let scale = 2.0 / (grid.bandwidth * n_s0);
    let mut total = DMatrix::zeros(2 * k, 2 * k);
    let mut per_subcarrier = Vec::with_capacity(grid.m_count);
    for m in 0..grid.m_count {
        let f = grid.freq(m);
        let xt = steering_block(resp, m, f, tx, true)?;
        let xr = steering_block(resp, m, f, rx, false)?;
        let w = tx_gram(m, &xt)?;
        let v = xr.adjoint() * &xr;
        let alpha = &resp.per_subcarrier[m].alpha;
        // Parameter p = (kind, target): kind 0 is θ, kind 1 is φ; derivative column = (1 + kind)·K + target.
        let mut j = DMatrix::zeros(2 * k, 2 * k);
        for p in 0..2 * k {
            let (kp, tp) = (p / k, p % k);
            let dp = (1 + kp) * k + tp;
            for q in 0..2 * k {
                let (kq, tq) = (q / k, q % k);
                let dq = (1 + kq) * k + tq;
                let coef = alpha[tp].conj() * alpha[tq];
                let s: C64 = v[(dp, dq)] * w[(tp, tq)].conj()
                    + v[(dp, tq)] * w[(dq, tp)]
                    + v[(tp, dq)] * w[(tq, dp)]
                    + v[(tp, tq)] * w[(dp, dq)].conj();
                j[(p, q)] = scale * (coef * s).re;
            }
        }
        let j = (&j + j.transpose()) * 0.5;
        total += &j;
        per_subcarrier.push(j);
    }
    Ok(FisherInfo { matrix: total, per_subcarrier })
}

/// `tr(J^{-1})`, or [`IsacError::InfiniteCrb`] when `J` is rank deficient.
pub fn crb(fim: &FisherInfo) -> Result<f64> {
    let dim = fim.matrix.nrows();
    let eig = symmetric_eigenvalues(&fim.matrix);
    let smax = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-12 * smax;
    let rank = eig.iter().filter(|&&l| l > tol).count();
    if smax == 0.0 || rank < dim {
        return Err(IsacError::InfiniteCrb { rank, dim });
    }
    Ok(eig.iter().map(|l| 1.0 / l).sum())
}

/// Isotropic covariance `P_t/(M N_t)·I`.
pub fn isotropic_covariance(n_t: usize, p_t: f64, m_count: usize) -> CMat {
    CMat::identity(n_t, n_t) * C64::new(p_t / (m_count as f64 * n_t as f64), 0.0)
}

/// One scenario's contribution to the ISAC loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSample {
    pub cor: f64,
    pub cor_star: f64,
    pub crb: f64,
    pub crb_min: f64,
    pub se: f64,
}

/// `L = −(1/N_b) Σ (Cor/Cor*)·[CRB_min/CRB − η_c·ReLU(Γ − ℛ)]`.
pub fn isac_loss(batch: &[LossSample], gamma: f64, eta_c: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(IsacError::domain("loss batch is empty"));
    }
    let mut acc = 0.0;
    for s in batch {
        if !(s.crb > 0.0) || !(s.crb_min > 0.0) || !(s.cor_star > 0.0) {
            return Err(IsacError::domain("CRB and normalizers must be positive"));
        }
        let penalty = eta_c * (gamma - s.se).max(0.0);
        acc += s.cor / s.cor_star * (s.crb_min / s.crb - penalty);
    }
    Ok(-acc / batch.len() as f64)
}

/// Frame structure of the scheme being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameVariant {
    /// Frames open with an SSB beam-training stage.
    RfOnly,
    /// Visual priors replace the SSB stage.
    VisionAided,
}

/// Stage durations of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTiming {
    pub t_ssb: f64,
    pub t_rs: f64,
    pub t_data: f64,
    pub n_sub: usize,
    pub variant: FrameVariant,
}

impl FrameTiming {
    /// Frame duration.
    pub fn t_frame(&self) -> f64 {
        let body = self.n_sub as f64 * (self.t_rs + self.t_data);
        match self.variant {
            FrameVariant::RfOnly => self.t_ssb + body,
            FrameVariant::VisionAided => body,
        }
    }
}

/// Time-averaged `(ℛ̄, C̄RB)`.
pub fn isac_efficiency(se: f64, crb: f64, timing: &FrameTiming) -> Result<(f64, f64)> {
    if timing.t_ssb < 0.0 || timing.t_rs < 0.0 || timing.t_data < 0.0 {
        return Err(IsacError::InfeasibleTiming("stage durations must be non-negative".into()));
    }
    let data = timing.t_data * timing.n_sub as f64;
    if !(data > 0.0) {
        return Err(IsacError::InfeasibleTiming("no data transmission time in the frame".into()));
    }
    let frame = timing.t_frame();
    Ok((se * data / frame, crb * frame / data))
}
