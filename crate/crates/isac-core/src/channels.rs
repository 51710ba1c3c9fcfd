//! Wideband channel synthesis, beamspace profiles and the C-S channel correlation.
//!
//! Communication channels are stored per subcarrier as `N_t × U` matrices whose columns
//! are the user vectors `h_{u,m}`. Target responses keep the factored form
//! `G_m = A_r Σ_m A_t^H` so that TTD modulation and beamspace projection stay cheap.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arrays::{steering_vector, ArrayGeometry, BeamspaceDictionary, Direction};
use crate::scene::{direction_to, Category, Scene};
use crate::{CMat, CVec, IsacError, Result, C64, SPEED_OF_LIGHT};

/// Uniform OFDM subcarrier grid centred on the carrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubcarrierGrid {
    pub f_c: f64,
    pub bandwidth: f64,
    pub m_count: usize,
}

impl SubcarrierGrid {
    /// Validated constructor.
    pub fn new(f_c: f64, bandwidth: f64, m_count: usize) -> Result<Self> {
        if m_count == 0 {
            return Err(IsacError::config("m_count", "at least one subcarrier is required"));
        }
        if !(bandwidth >= 0.0 && f_c > 0.0) {
            return Err(IsacError::config("f_c/bandwidth", "carrier must be positive and bandwidth non-negative"));
        }
        let g = Self { f_c, bandwidth, m_count };
        if !(g.freq(0) > 0.0) {
            return Err(IsacError::config("bandwidth", "lowest subcarrier frequency must be positive"));
        }
        Ok(g)
    }

    /// Frequency of subcarrier `m` (zero-based): `f_c + (B/M)(m + 1 − (M+1)/2)`.
    pub fn freq(&self, m: usize) -> f64 {
        let mm = self.m_count as f64;
        self.f_c + self.spacing() * ((m + 1) as f64 - (mm + 1.0) / 2.0)
    }

    /// All subcarrier frequencies in increasing order.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.m_count).map(|m| self.freq(m)).collect()
    }

    /// Subcarrier spacing `B/M`.
    pub fn spacing(&self) -> f64 {
        self.bandwidth / self.m_count as f64
    }

    /// Lowest frequency `f_1`.
    pub fn f_first(&self) -> f64 {
        self.freq(0)
    }

    /// Highest frequency `f_M`.
    pub fn f_last(&self) -> f64 {
        self.freq(self.m_count - 1)
    }

    /// Effective span `f_M − f_1`.
    pub fn b_eff(&self) -> f64 {
        self.f_last() - self.f_first()
    }
}

/// One propagation path seen from the array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGeom {
    pub dir: Direction,
    /// Propagation distance (m).
    pub dist: f64,
    /// Random phase `υ` (rad).
    pub phase: f64,
}

/// LoS path plus scatterer paths of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPaths {
    pub los: PathGeom,
    pub nlos: Vec<PathGeom>,
}

/// Per-subcarrier communication channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannel {
    /// `vectors[m]` is `N_t × U`, column `u` holding `h_{u,m}`.
    pub vectors: Vec<CMat>,
    pub users: Vec<UserPaths>,
    pub k_f: f64,
}

impl CommChannel {
    /// User count `U`.
    pub fn n_users(&self) -> usize {
        self.users.len()
    }
}

/// Free-space amplitude `c/(4πfd)`.
pub fn path_amplitude(f: f64, d: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * PI * f * d)
}

/// Default half-width of the scatterer placement box (m).
pub const SCATTER_HALF_WIDTH_M: f64 = 20.0;

/// Draws LoS geometry and `p_u` scatterer paths per user.
///
/// Scatterers are uniform in a box of half-width `half_width` around the user, kept above
/// ground (z ≥ 0). A scatterer path is the two-hop length from the array via the scatterer
/// to the user, arriving from the scatterer's direction.
pub fn draw_user_paths(
    users: &[Vector3<f64>],
    upa: Vector3<f64>,
    p_u: usize,
    half_width: f64,
    rng: &mut impl Rng,
) -> Result<Vec<UserPaths>> {
    let mut out = Vec::with_capacity(users.len());
    for &pos in users {
        let (dir, dist) = direction_to(pos, upa)?;
        let los = PathGeom { dir, dist, phase: rng.random_range(0.0..2.0 * PI) };
        let mut nlos = Vec::with_capacity(p_u);
        while nlos.len() < p_u {
            let s = Vector3::new(
                pos.x + rng.random_range(-half_width..half_width),
                pos.y + rng.random_range(-half_width..half_width),
                (pos.z + rng.random_range(-half_width..half_width)).max(0.0),
            );
            let Ok((sdir, d1)) = direction_to(s, upa) else { continue };
            if s.x <= upa.x {
                continue;
            }
            let d2 = (pos - s).norm();
            nlos.push(PathGeom { dir: sdir, dist: d1 + d2, phase: rng.random_range(0.0..2.0 * PI) });
        }
        out.push(UserPaths { los, nlos });
    }
    Ok(out)
}

/// Assembles `h_{u,m}` from explicit paths.
pub fn comm_channel_from_paths(
    users: &[UserPaths],
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
    k_f: f64,
) -> Result<CommChannel> {
    let nt = geom.n_elements();
    let mut vectors = Vec::with_capacity(grid.m_count);
    for m in 0..grid.m_count {
        let f = grid.freq(m);
        let mut hm = CMat::zeros(nt, users.len());
        for (u, up) in users.iter().enumerate() {
            let mut col = path_term(&up.los, f, geom)?;
            if !up.nlos.is_empty() {
                let scale = 1.0 / ((up.nlos.len() as f64).sqrt() * k_f);
                for p in &up.nlos {
                    col += path_term(p, f, geom)? * C64::new(scale, 0.0);
                }
            }
            hm.set_column(u, &col);
        }
        vectors.push(hm);
    }
    Ok(CommChannel { vectors, users: users.to_vec(), k_f })
}

fn path_term(p: &PathGeom, f: f64, geom: &ArrayGeometry) -> Result<CVec> {
    if !(p.dist > 0.0) {
        return Err(IsacError::domain("path distance must be positive"));
    }
    let beta = C64::from_polar(path_amplitude(f, p.dist), p.phase);
    let delay = C64::from_polar(1.0, -2.0 * PI * f * p.dist / SPEED_OF_LIGHT);
    Ok(steering_vector(p.dir, f, geom)? * (beta * delay))
}

/// Communication channels for the users of a scene, seeded.
pub fn comm_channel(
    scene: &Scene,
    grid: &SubcarrierGrid,
    geom: &ArrayGeometry,
    p_u: usize,
    k_f: f64,
    seed: u64,
) -> Result<CommChannel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users: Vec<Vector3<f64>> = scene.of(Category::User).map(|e| e.position).collect();
    let paths = draw_user_paths(&users, scene.upa_position, p_u, SCATTER_HALF_WIDTH_M, &mut rng)?;
    comm_channel_from_paths(&paths, grid, geom, k_f)
}

/// Point target as seen by the monostatic array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPath {
    pub dir: Direction,
    pub dist: f64,
    pub rcs: f64,
    pub phase: f64,
}

/// Radar-equation reflection coefficient `α_{k,m}`.
pub fn reflection_coefficient(f: f64, t: &TargetPath) -> C64 {
    let c = SPEED_OF_LIGHT;
    let mag = (c * c * t.rcs / ((4.0 * PI).powi(3) * f * f * t.dist.powi(4))).sqrt();
    C64::from_polar(mag, t.phase)
}

/// Factored target response `G = A_r diag(α) A_t^H` at one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    /// `N_r × K` receive steering matrix.
    pub a_r: CMat,
    /// Reflection coefficients `α_k`.
    pub alpha: Vec<C64>,
    /// `N_t × K` transmit steering matrix.
    pub a_t: CMat,
}

impl SensingMatrix {
    /// Dense `N_r × N_t` matrix.
    pub fn dense(&self) -> CMat {
        let d = CMat::from_diagonal(&DVector::from_vec(self.alpha.clone()));
        &self.a_r * d * self.a_t.adjoint()
    }

    /// Target count `K`.
    pub fn n_targets(&self) -> usize {
        self.alpha.len()
    }
}

/// Per-subcarrier target responses.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetResponse {
    pub per_subcarrier: Vec<SensingMatrix>,
    pub targets: Vec<TargetPath>,
}

/// Builds the target response from explicit target paths.
pub fn target_response_from_paths(
    targets: &[TargetPath],
    grid: &SubcarrierGrid,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
) -> Result<TargetResponse> {
    if targets.is_empty() {
        return Err(IsacError::domain("at least one target is required"));
    }
    let mut per_subcarrier = Vec::with_capacity(grid.m_count);
    for m in 0..grid.m_count {
        let f = grid.freq(m);
        let mut a_t = CMat::zeros(tx.n_elements(), targets.len());
        let mut a_r = CMat::zeros(rx.n_elements(), targets.len());
        let mut alpha = Vec::with_capacity(targets.len());
        for (k, t) in targets.iter().enumerate() {
            if !(t.dist > 0.0) {
                return Err(IsacError::domain("target distance must be positive"));
            }
            a_t.set_column(k, &steering_vector(t.dir, f, tx)?);
            a_r.set_column(k, &steering_vector(t.dir, f, rx)?);
            alpha.push(reflection_coefficient(f, t));
        }
        per_subcarrier.push(SensingMatrix { a_r, alpha, a_t });
    }
    Ok(TargetResponse { per_subcarrier, targets: targets.to_vec() })
}

/// Target response for the targets of a scene with seeded phases `υ_s,k`.
pub fn target_response(
    scene: &Scene,
    grid: &SubcarrierGrid,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    seed: u64,
) -> Result<TargetResponse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::new();
    for e in scene.of(Category::Target) {
        let (dir, dist) = direction_to(e.position, scene.upa_position)?;
        paths.push(TargetPath { dir, dist, rcs: e.rcs, phase: rng.random_range(0.0..2.0 * PI) });
    }
    target_response_from_paths(&paths, grid, tx, rx)
}

fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> C64 {
    let n = Normal::new(0.0, (variance / 2.0).sqrt()).expect("finite variance");
    C64::new(n.sample(rng), n.sample(rng))
}

/// Downlink sample `y = h^H F s + z`, `z ~ CN(0, (B/M)·n_c0)`.
pub fn downlink_rx(h: &CVec, f: &CMat, s: &CVec, n_c0: f64, spacing: f64, seed: u64) -> C64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = h.dotc(&(f * s));
    if n_c0 > 0.0 {
        clean + complex_gaussian(&mut rng, spacing * n_c0)
    } else {
        clean
    }
}

/// Echo `y = G x + z` with white noise of variance `(B/M)·n_s0` per element.
pub fn echo_rx(g: &CMat, x: &CVec, n_s0: f64, spacing: f64, seed: u64) -> CVec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = g * x;
    if n_s0 > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(&mut rng, spacing * n_s0);
        }
    }
    y
}

/// Per-subcarrier beamspace vectors `(h^b_c, h^b_s)`.
pub fn beamspace_channels(
    h: &[CMat],
    g: &[SensingMatrix],
    dt: &BeamspaceDictionary,
    dr: &BeamspaceDictionary,
) -> Result<Vec<(CVec, CVec)>> {
    Ok(beamspace_components(h, g, dt, dr)?
        .into_iter()
        .map(|c| (c.comm, c.sens_per_target.column_sum()))
        .collect())
}

struct BeamspaceComponents {
    comm: CVec,
    /// `N_D × K` per-target contributions to `diag(D_r^H G D_t)`.
    sens_per_target: CMat,
}

fn beamspace_components(
    h: &[CMat],
    g: &[SensingMatrix],
    dt: &BeamspaceDictionary,
    dr: &BeamspaceDictionary,
) -> Result<Vec<BeamspaceComponents>> {
    if dt.n_d() != dr.n_d() {
        return Err(IsacError::config(
            "n_d",
            format!("transmit ({}) and receive ({}) dictionaries must share N_D", dt.n_d(), dr.n_d()),
        ));
    }
    if h.len() != g.len() {
        return Err(IsacError::config("subcarriers", "communication and sensing grids differ"));
    }
    let dth = dt.codewords.adjoint();
    let drh = dr.codewords.adjoint();
    let mut out = Vec::with_capacity(h.len());
    for (hm, gm) in h.iter().zip(g) {
        if hm.nrows() != dt.codewords.nrows() || gm.a_t.nrows() != dt.codewords.nrows() {
            return Err(IsacError::config("n_d", "transmit dictionary does not match the array"));
        }
        if gm.a_r.nrows() != dr.codewords.nrows() {
            return Err(IsacError::config("n_d", "receive dictionary does not match the array"));
        }
        let comm = (&dth * hm).column_sum();
        let pr = &drh * &gm.a_r;
        let pt = &dth * &gm.a_t;
        let sens = CMat::from_fn(dt.n_d(), gm.n_targets(), |n, k| pr[(n, k)] * gm.alpha[k] * pt[(n, k)].conj());
        out.push(BeamspaceComponents { comm, sens_per_target: sens });
    }
    Ok(out)
}

/// Aggregated, L1-normalised beamspace magnitudes and their per-subcarrier peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamspaceProfile {
    pub comm: DVector<f64>,
    pub sens: DVector<f64>,
    /// `ψ_{c,m}`: argmax of `|h^b_{c,m}|` per subcarrier.
    pub peaks_c: Vec<usize>,
    /// `ψ_{s,k,m}`: `peaks_s[m][k]` is the argmax of target `k`'s contribution.
    pub peaks_s: Vec<Vec<usize>>,
}

/// Uniform mixing mass applied before the KL divergence.
pub const KL_EPSILON: f64 = 1e-9;

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Beamspace profile of a channel pair.
pub fn beamspace_profile(
    h: &[CMat],
    g: &[SensingMatrix],
    dt: &BeamspaceDictionary,
    dr: &BeamspaceDictionary,
) -> Result<BeamspaceProfile> {
    let comps = beamspace_components(h, g, dt, dr)?;
    let nd = dt.n_d();
    let mut comm = DVector::zeros(nd);
    let mut sens = DVector::zeros(nd);
    let mut peaks_c = Vec::with_capacity(comps.len());
    let mut peaks_s = Vec::with_capacity(comps.len());
    for c in &comps {
        let s_total = c.sens_per_target.column_sum();
        for n in 0..nd {
            comm[n] += c.comm[n].norm();
            sens[n] += s_total[n].norm();
        }
        peaks_c.push(argmax(c.comm.iter().map(|z| z.norm())));
        peaks_s.push(
            (0..c.sens_per_target.ncols())
                .map(|k| argmax(c.sens_per_target.column(k).iter().map(|z| z.norm())))
                .collect(),
        );
    }
    let sc: f64 = comm.sum();
    let ss: f64 = sens.sum();
    if !(sc > 0.0) || !(ss > 0.0) {
        return Err(IsacError::domain("all-zero beamspace channel"));
    }
    Ok(BeamspaceProfile { comm: comm / sc, sens: sens / ss, peaks_c, peaks_s })
}

/// `KL(p ‖ q)` after mixing both with `ε` uniform mass.
pub fn kl_divergence(p: &DVector<f64>, q: &DVector<f64>, eps: f64) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(q.iter())
        .map(|(&a, &b)| {
            let a = (1.0 - eps) * a + eps / n;
            let b = (1.0 - eps) * b + eps / n;
            a * (a / b).ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// `Cor = 1/KL(p ‖ q)`, capped at `1/ε`.
pub fn correlation_from_profiles(p: &DVector<f64>, q: &DVector<f64>, eps: f64) -> f64 {
    let kl = kl_divergence(p, q, eps);
    if kl * (1.0 / eps) <= 1.0 {
        1.0 / eps
    } else {
        1.0 / kl
    }
}

/// C-S channel correlation and the underlying beamspace profile.
pub fn cs_correlation(
    h: &[CMat],
    g: &[SensingMatrix],
    dt: &BeamspaceDictionary,
    dr: &BeamspaceDictionary,
) -> Result<(f64, BeamspaceProfile)> {
    let prof = beamspace_profile(h, g, dt, dr)?;
    Ok((correlation_from_profiles(&prof.comm, &prof.sens, KL_EPSILON), prof))
}

/// Count of `(m, k)` pairs whose sensing peak coincides with the communication peak.
pub fn peak_similarity(profile: &BeamspaceProfile) -> usize {
    profile
        .peaks_c
        .iter()
        .zip(&profile.peaks_s)
        .map(|(pc, ps)| ps.iter().filter(|&&p| p == *pc).count())
        .sum()
}

/// Empirical variance helper used by Monte-Carlo checks: mean `|x|²`.
pub fn mean_power(samples: &[C64]) -> f64 {
    samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// Textual matrix dump: one row per line, entries `re+imj` separated by spaces.
pub fn dump_matrix(m: &CMat) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_complex(m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Formats `z` as `re+imj` with 17 significant digits.
pub fn format_complex(z: C64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{:.16e}{}{:.16e}j", z.re, sign, z.im.abs())
}

/// Real-valued helper matrix used by tests and dumps.
pub fn magnitudes(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.norm())
}
