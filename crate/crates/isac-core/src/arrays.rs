//! Uniform planar array (UPA) primitives.
//!
//! Elements are indexed row-major with the horizontal index outer and the
//! vertical index inner: element `ih * n_v + iv`. Every steering vector is the
//! Kronecker product `a_h ⊗ a_v` with half-wavelength spacing at the carrier.
//!
//! The horizontal directional cosine of a direction is `u = sinθ·sinφ` and the
//! vertical one is `v = cosθ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::{CMat, CVec, IsacError, Result, C64};

/// Geometry of a UPA with TTD subarrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    /// Horizontal element count.
    pub n_h: usize,
    /// Vertical element count.
    pub n_v: usize,
    /// Horizontal TTD subarray count.
    pub q_h: usize,
    /// Vertical TTD subarray count.
    pub q_v: usize,
    /// Carrier frequency (Hz).
    pub f_c: f64,
}

impl ArrayGeometry {
    /// Validates and builds a geometry.
    pub fn new(n_h: usize, n_v: usize, q_h: usize, q_v: usize, f_c: f64) -> Result<Self> {
        if n_h == 0 || n_v == 0 || q_h == 0 || q_v == 0 {
            return Err(IsacError::config("n_h/n_v/q_h/q_v", "all counts must be at least 1"));
        }
        if n_h % q_h != 0 {
            return Err(IsacError::config(
                "q_h, n_h",
                format!("q_h = {q_h} does not divide n_h = {n_h}"),
            ));
        }
        if n_v % q_v != 0 {
            return Err(IsacError::config(
                "q_v, n_v",
                format!("q_v = {q_v} does not divide n_v = {n_v}"),
            ));
        }
        if !(f_c > 0.0 && f_c.is_finite()) {
            return Err(IsacError::config("f_c", "carrier must be positive and finite"));
        }
        Ok(Self { n_h, n_v, q_h, q_v, f_c })
    }

    /// Geometry with one TTD per element.
    pub fn fully_delayed(n_h: usize, n_v: usize, f_c: f64) -> Result<Self> {
        Self::new(n_h, n_v, n_h, n_v, f_c)
    }

    /// Total element count `N_t`.
    pub fn n_elements(&self) -> usize {
        self.n_h * self.n_v
    }

    /// Total TTD count `Q_h·Q_v`.
    pub fn n_subarrays(&self) -> usize {
        self.q_h * self.q_v
    }

    /// Horizontal subarray width `L_h`.
    pub fn l_h(&self) -> usize {
        self.n_h / self.q_h
    }

    /// Vertical subarray height `L_v`.
    pub fn l_v(&self) -> usize {
        self.n_v / self.q_v
    }

    /// `(ih, iv)` indices of a flattened element.
    pub fn element_indices(&self, n: usize) -> (usize, usize) {
        (n / self.n_v, n % self.n_v)
    }

    /// Flattened index `qh * q_v + qv` of the subarray that drives element `n`.
    pub fn subarray_of(&self, n: usize) -> usize {
        let (ih, iv) = self.element_indices(n);
        (ih / self.l_h()) * self.q_v + iv / self.l_v()
    }
}

/// Propagation direction: elevation `theta ∈ [0, π]`, azimuth `phi ∈ [−π/2, π/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    /// Validated constructor.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        let d = Self { theta, phi };
        d.validate()?;
        Ok(d)
    }

    /// Checks the angular ranges.
    pub fn validate(&self) -> Result<()> {
        let tol = 1e-12;
        if !(self.theta >= -tol && self.theta <= PI + tol) {
            return Err(IsacError::domain(format!("theta = {} outside [0, π]", self.theta)));
        }
        if !(self.phi.abs() <= PI / 2.0 + tol) {
            return Err(IsacError::domain(format!("phi = {} outside [−π/2, π/2]", self.phi)));
        }
        Ok(())
    }

    /// Horizontal directional cosine `sinθ·sinφ`.
    pub fn u(&self) -> f64 {
        self.theta.sin() * self.phi.sin()
    }

    /// Vertical directional cosine `cosθ`.
    pub fn v(&self) -> f64 {
        self.theta.cos()
    }
}

fn check_frequency(f: f64) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(IsacError::domain(format!("frequency must be positive, got {f}")))
    }
}

/// Steering vector for directional cosines `(u, v)` at frequency ratio `r = f/f_c`.
pub fn steering_from_cosines(u: f64, v: f64, ratio: f64, geom: &ArrayGeometry) -> CVec {
    let norm = 1.0 / ((geom.n_h * geom.n_v) as f64).sqrt();
    let ph = PI * ratio * u;
    let pv = PI * ratio * v;
    DVector::from_fn(geom.n_elements(), |n, _| {
        let (ih, iv) = geom.element_indices(n);
        C64::from_polar(norm, ph * ih as f64 + pv * iv as f64)
    })
}

/// UPA steering vector `a_t(θ, φ, f)`, unit 2-norm.
pub fn steering_vector(dir: Direction, f: f64, geom: &ArrayGeometry) -> Result<CVec> {
    check_frequency(f)?;
    dir.validate()?;
    Ok(steering_from_cosines(dir.u(), dir.v(), f / geom.f_c, geom))
}

/// Analytic derivatives `(∂a/∂θ, ∂a/∂φ)` of the steering vector.
pub fn steering_derivatives(dir: Direction, f: f64, geom: &ArrayGeometry) -> Result<(CVec, CVec)> {
    let a = steering_vector(dir, f, geom)?;
    let r = f / geom.f_c;
    let (st, ct) = dir.theta.sin_cos();
    let (sp, cp) = dir.phi.sin_cos();
    let du_dtheta = ct * sp;
    let du_dphi = st * cp;
    let dv_dtheta = -st;
    let mut d_theta = a.clone();
    let mut d_phi = a;
    for n in 0..geom.n_elements() {
        let (ih, iv) = geom.element_indices(n);
        let k_t = PI * r * (du_dtheta * ih as f64 + dv_dtheta * iv as f64);
        let k_p = PI * r * du_dphi * ih as f64;
        d_theta[n] *= C64::new(0.0, k_t);
        d_phi[n] *= C64::new(0.0, k_p);
    }
    Ok((d_theta, d_phi))
}

/// Dirichlet kernel `sin(nπx/2) / sin(πx/2)` with its limit at the removable singularities.
pub fn dirichlet(x: f64, n: usize) -> f64 {
    let nf = n as f64;
    let den = (PI * x / 2.0).sin();
    if den.abs() < 1e-12 {
        nf * (nf * PI * x / 2.0).cos() / (PI * x / 2.0).cos()
    } else {
        (nf * PI * x / 2.0).sin() / den
    }
}

/// Beamspace dictionary sampled uniformly in directional-cosine space.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamspaceDictionary {
    /// `N × N_D` matrix of unit-norm codewords.
    pub codewords: CMat,
    /// Horizontal codeword count.
    pub n_dh: usize,
    /// Vertical codeword count.
    pub n_dv: usize,
}

impl BeamspaceDictionary {
    /// Codeword count `N_D`.
    pub fn n_d(&self) -> usize {
        self.n_dh * self.n_dv
    }

    /// Directional cosines `(u, v)` of codeword `k`.
    pub fn cosines(&self, k: usize) -> (f64, f64) {
        let i = k / self.n_dv;
        let j = k % self.n_dv;
        (
            -1.0 + 2.0 * i as f64 / self.n_dh as f64,
            -1.0 + 2.0 * j as f64 / self.n_dv as f64,
        )
    }

    /// Index of the codeword with cosines `(-1 + 2i/n_dh, -1 + 2j/n_dv)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_dv + j
    }
}

/// Builds the `a_h(u_i) ⊗ a_v(v_j)` dictionary at the carrier, `i` outer.
pub fn beamspace_dictionary(geom: &ArrayGeometry, n_dh: usize, n_dv: usize) -> Result<BeamspaceDictionary> {
    if n_dh < geom.n_h || n_dv < geom.n_v {
        return Err(IsacError::config(
            "n_dh/n_dv",
            format!(
                "dictionary {n_dh}×{n_dv} undersamples a {}×{} array",
                geom.n_h, geom.n_v
            ),
        ));
    }
    let mut dict = BeamspaceDictionary {
        codewords: DMatrix::zeros(geom.n_elements(), n_dh * n_dv),
        n_dh,
        n_dv,
    };
    for k in 0..n_dh * n_dv {
        let (u, v) = dict.cosines(k);
        dict.codewords.set_column(k, &steering_from_cosines(u, v, 1.0, geom));
    }
    Ok(dict)
}
