//! World geometry, pinhole cameras and the synthetic candidate detector.
//!
//! The UPA lies in the world y-z plane with its broadside along +x. A camera maps
//! world points to its own frame through `q = R·p_wd + p_cam`, with `R = R_z R_y R_x`,
//! and to pixels through the intrinsic matrix `K`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arrays::Direction;
use crate::{IsacError, Result};

/// Pinhole RGB-D camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Field of view (rad), in `(0, π)`.
    pub fov: f64,
    /// Horizontal pixel count.
    pub n_w: usize,
    /// Vertical pixel count.
    pub n_h: usize,
    /// Extrinsic translation `p_cam` (m).
    pub position: Vector3<f64>,
    /// Rotation angles `(γ_x, γ_y, γ_z)` (rad).
    pub rotation: [f64; 3],
}

impl CameraModel {
    /// Validated constructor taking the extrinsic translation directly.
    pub fn new(fov: f64, n_w: usize, n_h: usize, position: Vector3<f64>, rotation: [f64; 3]) -> Result<Self> {
        if !(fov > 0.0 && fov < PI) {
            return Err(IsacError::domain(format!("fov = {fov} outside (0, π)")));
        }
        if n_w == 0 || n_h == 0 {
            return Err(IsacError::domain("pixel counts must be at least 1"));
        }
        Ok(Self { fov, n_w, n_h, position, rotation })
    }

    /// Camera whose optical center sits at the world point `center`.
    pub fn from_center(fov: f64, n_w: usize, n_h: usize, center: Vector3<f64>, rotation: [f64; 3]) -> Result<Self> {
        let r = rotation_matrix(rotation[0], rotation[1], rotation[2]);
        Self::new(fov, n_w, n_h, -(r * center), rotation)
    }

    /// Camera at `center` whose optical axis points at `look_at`, with world +z as up.
    pub fn looking_at(fov: f64, n_w: usize, n_h: usize, center: Vector3<f64>, look_at: Vector3<f64>) -> Result<Self> {
        let fwd = look_at - center;
        if fwd.norm() == 0.0 {
            return Err(IsacError::domain("camera center coincides with its look-at point"));
        }
        let z_c = fwd.normalize();
        let up = Vector3::new(0.0, 0.0, 1.0);
        let right = z_c.cross(&up);
        if right.norm() < 1e-12 {
            return Err(IsacError::domain("optical axis parallel to the world up axis"));
        }
        let x_c = right.normalize();
        let y_c = z_c.cross(&x_c);
        let r = Matrix3::from_rows(&[x_c.transpose(), y_c.transpose(), z_c.transpose()]);
        Self::from_center(fov, n_w, n_h, center, euler_from_rotation(&r))
    }

    /// World coordinates of the optical center.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.position)
    }

    /// `R = R_z R_y R_x`.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self.rotation[0], self.rotation[1], self.rotation[2])
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.n_w as f64 / (2.0 * (self.fov / 2.0).tan())
    }
}

/// Intrinsic matrix `K`.
pub fn intrinsic_matrix(cam: &CameraModel) -> Result<Matrix3<f64>> {
    if !(cam.fov > 0.0 && cam.fov < PI) {
        return Err(IsacError::domain(format!("fov = {} outside (0, π)", cam.fov)));
    }
    let f = cam.focal();
    Ok(Matrix3::new(
        f,
        0.0,
        cam.n_w as f64 / 2.0,
        0.0,
        f,
        cam.n_h as f64 / 2.0,
        0.0,
        0.0,
        1.0,
    ))
}

/// Rotation matrix `R_z(γ_z) R_y(γ_y) R_x(γ_x)`.
pub fn rotation_matrix(gx: f64, gy: f64, gz: f64) -> Matrix3<f64> {
    let (sx, cx) = gx.sin_cos();
    let (sy, cy) = gy.sin_cos();
    let (sz, cz) = gz.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Angles `(γ_x, γ_y, γ_z)` that reproduce a proper rotation under [`rotation_matrix`].
pub fn euler_from_rotation(r: &Matrix3<f64>) -> [f64; 3] {
    let gy = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if r[(2, 0)].abs() < 1.0 - 1e-12 {
        [r[(2, 1)].atan2(r[(2, 2)]), gy, r[(1, 0)].atan2(r[(0, 0)])]
    } else {
        [0.0, gy, (-r[(0, 1)]).atan2(r[(1, 1)])]
    }
}

/// Back-projects a homogeneous pixel at depth `depth` to world coordinates.
pub fn pixel_to_world(p_img: Vector3<f64>, depth: f64, cam: &CameraModel) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(IsacError::domain(format!("depth must be positive, got {depth}")));
    }
    let k = intrinsic_matrix(cam)?;
    let k_inv = k.try_inverse().ok_or_else(|| IsacError::domain("singular intrinsic matrix"))?;
    let q = k_inv * p_img * depth - cam.position;
    Ok(cam.rotation_matrix().transpose() * q)
}

/// Projects a world point to `(pixel x, pixel y, depth)`; `None` behind the camera.
pub fn world_to_pixel(p_wd: Vector3<f64>, cam: &CameraModel) -> Result<Option<(f64, f64, f64)>> {
    let k = intrinsic_matrix(cam)?;
    let q = cam.rotation_matrix() * p_wd + cam.position;
    if q.z <= 0.0 {
        return Ok(None);
    }
    let p = k * q;
    Ok(Some((p.x / p.z, p.y / p.z, q.z)))
}

/// Polar coordinates `(φ, θ, d)` of a world point relative to the UPA.
pub fn world_to_polar(p_wd: Vector3<f64>, p_upa: Vector3<f64>) -> Result<(f64, f64, f64)> {
    let d = p_wd - p_upa;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(IsacError::domain("point coincides with the UPA"));
    }
    let phi = d.y.atan2(d.x).clamp(-PI / 2.0, PI / 2.0);
    let rho = d.x.hypot(d.y);
    let theta = if d.z == 0.0 { PI / 2.0 } else { PI - (rho / d.z.abs()).atan() };
    Ok((phi, theta, dist))
}

/// Direction of a world point seen from the UPA.
pub fn direction_to(p_wd: Vector3<f64>, p_upa: Vector3<f64>) -> Result<(Direction, f64)> {
    let (phi, theta, dist) = world_to_polar(p_wd, p_upa)?;
    Ok((Direction { theta, phi }, dist))
}

/// Entity category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    User,
    Target,
}

impl Category {
    /// Class index carried by a bounding box: 0 user, 1 target.
    pub fn index(self) -> u8 {
        match self {
            Category::User => 0,
            Category::Target => 1,
        }
    }
}

/// A user or sensing target in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entity {
    pub position: Vector3<f64>,
    pub category: Category,
    /// Radar cross-section (m²); ignored for users.
    pub rcs: f64,
    /// Half-width (x and y) and half-height (z) of the bounding volume (m).
    pub extent: [f64; 2],
}

impl Entity {
    /// Validated constructor.
    pub fn new(position: Vector3<f64>, category: Category, rcs: f64, extent: [f64; 2]) -> Result<Self> {
        if category == Category::Target && !(rcs > 0.0) {
            return Err(IsacError::domain("target RCS must be positive"));
        }
        if !(extent[0] >= 0.0 && extent[1] >= 0.0) {
            return Err(IsacError::domain("entity extent must be non-negative"));
        }
        Ok(Self { position, category, rcs, extent })
    }

    fn corners(&self) -> [Vector3<f64>; 8] {
        let [w, h] = self.extent;
        let mut out = [self.position; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -w } else { w };
            let sy = if i & 2 == 0 { -w } else { w };
            let sz = if i & 4 == 0 { -h } else { h };
            *c += Vector3::new(sx, sy, sz);
        }
        out
    }
}

/// World description: UPA pose, entities and cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub upa_position: Vector3<f64>,
    pub entities: Vec<Entity>,
    pub cameras: Vec<CameraModel>,
}

impl Scene {
    /// Entities of one category, in declaration order.
    pub fn of(&self, category: Category) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.category == category)
    }
}

/// Detector output in pixel space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub bx: f64,
    pub by: f64,
    pub bw: f64,
    pub bh: f64,
    pub category: u8,
    pub depth: f64,
}

/// Angular prior derived from a detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularRange {
    pub phi_min: f64,
    pub phi_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Range estimate `d̂` (m), read at the box center.
    pub dist: f64,
}

impl AngularRange {
    /// Validated constructor.
    pub fn new(phi_min: f64, phi_max: f64, theta_min: f64, theta_max: f64, dist: f64) -> Result<Self> {
        if !(phi_min <= phi_max && theta_min <= theta_max) {
            return Err(IsacError::domain("angular range bounds are inverted"));
        }
        if !(dist > 0.0) {
            return Err(IsacError::domain("range estimate must be positive"));
        }
        Ok(Self { phi_min, phi_max, theta_min, theta_max, dist })
    }

    /// Whether `dir` lies inside the range dilated by `margin` rad on every side.
    pub fn contains(&self, dir: Direction, margin: f64) -> bool {
        dir.phi >= self.phi_min - margin
            && dir.phi <= self.phi_max + margin
            && dir.theta >= self.theta_min - margin
            && dir.theta <= self.theta_max + margin
    }

    /// Center direction.
    pub fn center(&self) -> Direction {
        Direction {
            theta: 0.5 * (self.theta_min + self.theta_max),
            phi: 0.5 * (self.phi_min + self.phi_max),
        }
    }

    /// Horizontal width `Δφ`.
    pub fn width(&self) -> f64 {
        self.phi_max - self.phi_min
    }

    /// Vertical height `Δθ`.
    pub fn height(&self) -> f64 {
        self.theta_max - self.theta_min
    }
}

/// One detected candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub range: AngularRange,
    /// Index of the generating entity in `Scene::entities`.
    pub entity: usize,
    /// World position reconstructed from the box center and depth.
    pub world: Vector3<f64>,
}

const RANGE_SAMPLES: usize = 5;

/// Synthetic detector: exact projection of each entity's bounding volume, perturbed by
/// zero-mean Gaussian pixel noise of standard deviation `noise_px`.
pub fn detect_candidates(scene: &Scene, cam: &CameraModel, noise_px: f64, seed: u64) -> Result<Vec<Detection>> {
    if !(noise_px >= 0.0) {
        return Err(IsacError::domain("pixel noise must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let (w_img, h_img) = (cam.n_w as f64, cam.n_h as f64);
    let mut out = Vec::new();
    for (idx, ent) in scene.entities.iter().enumerate() {
        let Some((cx, cy, depth)) = world_to_pixel(ent.position, cam)? else {
            continue;
        };
        if !(0.0..=w_img).contains(&cx) || !(0.0..=h_img).contains(&cy) {
            continue;
        }
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for c in ent.corners() {
            if let Some((px, py, _)) = world_to_pixel(c, cam)? {
                x0 = x0.min(px);
                x1 = x1.max(px);
                y0 = y0.min(py);
                y1 = y1.max(py);
            }
        }
        let draws: [f64; 5] = std::array::from_fn(|_| normal.sample(&mut rng));
        let bx = 0.5 * (x0 + x1) + noise_px * draws[0];
        let by = 0.5 * (y0 + y1) + noise_px * draws[1];
        let bw = ((x1 - x0) + noise_px * draws[2]).max(0.0);
        let bh = ((y1 - y0) + noise_px * draws[3]).max(0.0);
        let depth = (depth + noise_px * depth / cam.focal() * draws[4]).max(f64::MIN_POSITIVE);
        let xa = (bx - bw / 2.0).clamp(0.0, w_img);
        let xb = (bx + bw / 2.0).clamp(0.0, w_img);
        let ya = (by - bh / 2.0).clamp(0.0, h_img);
        let yb = (by + bh / 2.0).clamp(0.0, h_img);
        let bbox = BoundingBox {
            bx: 0.5 * (xa + xb),
            by: 0.5 * (ya + yb),
            bw: xb - xa,
            bh: yb - ya,
            category: ent.category.index(),
            depth,
        };
        let range = box_to_range(&bbox, cam, scene.upa_position)?;
        let world = pixel_to_world(Vector3::new(bbox.bx, bbox.by, 1.0), depth, cam)?;
        out.push(Detection { bbox, range, entity: idx, world });
    }
    Ok(out)
}

/// Angular range spanned by a box back-projected at its depth reading.
pub fn box_to_range(bbox: &BoundingBox, cam: &CameraModel, p_upa: Vector3<f64>) -> Result<AngularRange> {
    let mut r = AngularRange {
        phi_min: f64::INFINITY,
        phi_max: f64::NEG_INFINITY,
        theta_min: f64::INFINITY,
        theta_max: f64::NEG_INFINITY,
        dist: 0.0,
    };
    let n = RANGE_SAMPLES - 1;
    for i in 0..=n {
        for j in 0..=n {
            let px = bbox.bx - bbox.bw / 2.0 + bbox.bw * i as f64 / n as f64;
            let py = bbox.by - bbox.bh / 2.0 + bbox.bh * j as f64 / n as f64;
            let w = pixel_to_world(Vector3::new(px, py, 1.0), bbox.depth, cam)?;
            let (phi, theta, _) = world_to_polar(w, p_upa)?;
            r.phi_min = r.phi_min.min(phi);
            r.phi_max = r.phi_max.max(phi);
            r.theta_min = r.theta_min.min(theta);
            r.theta_max = r.theta_max.max(theta);
        }
    }
    let center = pixel_to_world(Vector3::new(bbox.bx, bbox.by, 1.0), bbox.depth, cam)?;
    r.dist = world_to_polar(center, p_upa)?.2;
    Ok(r)
}

/// Concatenates per-camera detections, dropping any whose reconstructed world position
/// lies within `radius` m of an earlier detection of the same category.
pub fn fuse_detections(per_camera: &[Vec<Detection>], radius: f64) -> Vec<Detection> {
    let mut fused: Vec<Detection> = Vec::new();
    for det in per_camera.iter().flatten() {
        let dup = fused
            .iter()
            .any(|f| f.bbox.category == det.bbox.category && (f.world - det.world).norm() < radius);
        if !dup {
            fused.push(*det);
        }
    }
    fused
}

/// Default fusion radius (m).
pub const FUSION_RADIUS_M: f64 = 0.5;

/// Default maximal detectable distance (m).
pub const DEFAULT_D_MAX: f64 = 200.0;

/// Rasterised positioning spectrum `N_x × N_y × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositioningSpectrum {
    /// Row-major storage indexed by `(ix·n_y + iy)·2 + channel`.
    pub grid: Vec<f64>,
    pub n_x: usize,
    pub n_y: usize,
    pub d_max: f64,
    /// Entities whose distance exceeded `d_max`.
    pub warnings: Vec<String>,
}

impl PositioningSpectrum {
    /// Value at cell `(ix, iy)` of `channel` (0 users, 1 targets).
    pub fn get(&self, ix: usize, iy: usize, channel: usize) -> f64 {
        self.grid[(ix * self.n_y + iy) * 2 + channel]
    }

    fn raise(&mut self, ix: usize, iy: usize, channel: usize, v: f64) {
        let idx = (ix * self.n_y + iy) * 2 + channel;
        self.grid[idx] = self.grid[idx].max(v);
    }
}

fn cell_index(x: f64, lo: f64, step: f64, n: usize) -> usize {
    (((x - lo) / step).floor().max(0.0) as usize).min(n - 1)
}

/// Rasterises user directions (channel 0) and target ranges (channel 1).
///
/// Cells `θ ∈ [π(n_x−1)/N_x, πn_x/N_x)` and `φ ∈ [−π/2 + π(n_y−1)/N_y, −π/2 + πn_y/N_y)`
/// receive `1 − d/d_max`.
pub fn positioning_spectrum(
    users: &[(Direction, f64)],
    target_ranges: &[AngularRange],
    n_x: usize,
    n_y: usize,
    d_max: f64,
) -> Result<PositioningSpectrum> {
    if n_x == 0 || n_y == 0 {
        return Err(IsacError::domain("grid counts must be at least 1"));
    }
    if !(d_max > 0.0) {
        return Err(IsacError::domain("d_max must be positive"));
    }
    let mut s = PositioningSpectrum {
        grid: vec![0.0; n_x * n_y * 2],
        n_x,
        n_y,
        d_max,
        warnings: Vec::new(),
    };
    let dth = PI / n_x as f64;
    let dph = PI / n_y as f64;
    let value = |d: f64, what: &str, warnings: &mut Vec<String>| {
        if d > d_max {
            warnings.push(format!("{what} at {d:.3} m beyond d_max = {d_max} m, clamped to 0"));
            0.0
        } else {
            1.0 - d / d_max
        }
    };
    for (i, (dir, d)) in users.iter().enumerate() {
        let v = value(*d, &format!("user {i}"), &mut s.warnings);
        let ix = cell_index(dir.theta, 0.0, dth, n_x);
        let iy = cell_index(dir.phi, -PI / 2.0, dph, n_y);
        s.raise(ix, iy, 0, v);
    }
    for (i, r) in target_ranges.iter().enumerate() {
        let v = value(r.dist, &format!("target {i}"), &mut s.warnings);
        let (x0, x1) = (cell_index(r.theta_min, 0.0, dth, n_x), cell_index(r.theta_max, 0.0, dth, n_x));
        let (y0, y1) = (cell_index(r.phi_min, -PI / 2.0, dph, n_y), cell_index(r.phi_max, -PI / 2.0, dph, n_y));
        for ix in x0..=x1 {
            for iy in y0..=y1 {
                s.raise(ix, iy, 1, v);
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam_at_origin() -> CameraModel {
        CameraModel::new(PI / 2.0, 1920, 1024, Vector3::zeros(), [0.0; 3]).unwrap()
    }

    #[test]
    fn intrinsic_quarter_turn_fov() {
        let k = intrinsic_matrix(&cam_at_origin()).unwrap();
        assert!((k[(0, 0)] - 960.0).abs() < 1e-9);
        assert!((k[(1, 1)] - 960.0).abs() < 1e-9);
        assert_eq!((k[(0, 2)], k[(1, 2)], k[(2, 2)]), (960.0, 512.0, 1.0));
        assert!(k.try_inverse().is_some());
    }

    #[test]
    fn intrinsic_hundred_degree_fov() {
        let cam = CameraModel::new(100f64.to_radians(), 1920, 1024, Vector3::zeros(), [0.0; 3]).unwrap();
        let k = intrinsic_matrix(&cam).unwrap();
        assert!((k[(0, 0)] - 960.0 / 50f64.to_radians().tan()).abs() < 1e-9);
    }

    #[test]
    fn fov_out_of_range_rejected() {
        assert!(CameraModel::new(PI, 10, 10, Vector3::zeros(), [0.0; 3]).is_err());
        let mut cam = cam_at_origin();
        cam.fov = 4.0;
        assert!(intrinsic_matrix(&cam).is_err());
    }

    #[test]
    fn rotation_special_cases() {
        assert!((rotation_matrix(0.0, 0.0, 0.0) - Matrix3::identity()).norm() < 1e-15);
        let rz = rotation_matrix(0.0, 0.0, PI / 2.0);
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((rz - expect).norm() < 1e-15);
    }

    #[test]
    fn center_pixel_back_projects_to_axis() {
        let w = pixel_to_world(Vector3::new(960.0, 512.0, 1.0), 10.0, &cam_at_origin()).unwrap();
        assert!((w - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn translated_camera_subtracts_position() {
        let mut cam = cam_at_origin();
        cam.position = Vector3::new(1.0, 2.0, 3.0);
        let w = pixel_to_world(Vector3::new(960.0, 512.0, 1.0), 5.0, &cam).unwrap();
        assert!((w - Vector3::new(-1.0, -2.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn nonpositive_depth_rejected() {
        assert!(pixel_to_world(Vector3::new(1.0, 1.0, 1.0), 0.0, &cam_at_origin()).is_err());
    }

    #[test]
    fn polar_special_cases() {
        let (phi, theta, d) = world_to_polar(Vector3::new(1.0, 1.0, 0.0), Vector3::zeros()).unwrap();
        assert!((phi - PI / 4.0).abs() < 1e-15 && (theta - PI / 2.0).abs() < 1e-15);
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        let (_, theta, d) = world_to_polar(Vector3::new(0.0, 0.0, -5.0), Vector3::zeros()).unwrap();
        assert!((theta - PI).abs() < 1e-15 && (d - 5.0).abs() < 1e-15);
        assert!(world_to_polar(Vector3::zeros(), Vector3::zeros()).is_err());
    }

    #[test]
    fn looking_at_points_axis_at_target() {
        let center = Vector3::new(5.0, 0.0, 55.1);
        let target = Vector3::new(60.0, 10.0, 1.4);
        let cam = CameraModel::looking_at(100f64.to_radians(), 1920, 1024, center, target).unwrap();
        assert!((cam.center() - center).norm() < 1e-9);
        let (px, py, _) = world_to_pixel(target, &cam).unwrap().unwrap();
        assert!((px - 960.0).abs() < 1e-6 && (py - 512.0).abs() < 1e-6);
        // Upward world points appear higher in the image (smaller row index).
        let (_, py_up, _) = world_to_pixel(target + Vector3::new(0.0, 0.0, 1.0), &cam).unwrap().unwrap();
        assert!(py_up < py);
    }

    fn demo_scene() -> (Scene, CameraModel) {
        let upa = Vector3::new(0.0, 0.0, 55.0);
        let cam = CameraModel::looking_at(
            100f64.to_radians(),
            1920,
            1024,
            Vector3::new(0.5, 0.0, 55.1),
            Vector3::new(50.0, 0.0, 20.0),
        )
        .unwrap();
        let entities = vec![
            Entity::new(Vector3::new(40.0, 8.0, 1.4), Category::User, 0.0, [0.3, 0.9]).unwrap(),
            Entity::new(Vector3::new(60.0, -12.0, 45.0), Category::Target, 1.0, [0.6, 0.2]).unwrap(),
            Entity::new(Vector3::new(-30.0, 0.0, 1.4), Category::User, 0.0, [0.3, 0.9]).unwrap(),
        ];
        (Scene { upa_position: upa, entities, cameras: vec![cam] }, cam)
    }

    #[test]
    fn noiseless_ranges_contain_truth_and_behind_is_culled() {
        let (scene, cam) = demo_scene();
        let dets = detect_candidates(&scene, &cam, 0.0, 1).unwrap();
        assert_eq!(dets.len(), 2, "entity behind the camera must be excluded");
        for det in &dets {
            let (dir, _) = direction_to(scene.entities[det.entity].position, scene.upa_position).unwrap();
            assert!(det.range.contains(dir, 1e-12), "{:?} vs {:?}", det.range, dir);
        }
    }

    #[test]
    fn point_entity_collapses_range() {
        let (mut scene, cam) = demo_scene();
        scene.entities[0].extent = [0.0, 0.0];
        let dets = detect_candidates(&scene, &cam, 0.0, 3).unwrap();
        let det = dets.iter().find(|d| d.entity == 0).unwrap();
        let (dir, dist) = direction_to(scene.entities[0].position, scene.upa_position).unwrap();
        for v in [det.range.phi_min - dir.phi, det.range.phi_max - dir.phi] {
            assert!(v.abs() < 1e-9);
        }
        for v in [det.range.theta_min - dir.theta, det.range.theta_max - dir.theta] {
            assert!(v.abs() < 1e-9);
        }
        assert!((det.range.dist - dist).abs() < 1e-9);
    }

    #[test]
    fn detector_is_deterministic_per_seed() {
        let (scene, cam) = demo_scene();
        let a = detect_candidates(&scene, &cam, 2.0, 9).unwrap();
        let b = detect_candidates(&scene, &cam, 2.0, 9).unwrap();
        let c = detect_candidates(&scene, &cam, 2.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fusion_removes_near_duplicates() {
        let (scene, cam) = demo_scene();
        let a = detect_candidates(&scene, &cam, 0.0, 1).unwrap();
        let fused = fuse_detections(&[a.clone(), a.clone()], FUSION_RADIUS_M);
        assert_eq!(fused.len(), a.len());
    }

    #[test]
    fn spectrum_user_cell_value() {
        let s = positioning_spectrum(&[(Direction { theta: 2.0, phi: 0.1 }, 50.0)], &[], 16, 16, 200.0).unwrap();
        let ix = (2.0 / (PI / 16.0)).floor() as usize;
        let iy = ((0.1 + PI / 2.0) / (PI / 16.0)).floor() as usize;
        assert!((s.get(ix, iy, 0) - 0.75).abs() < 1e-15);
        assert_eq!(s.grid.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn spectrum_empty_scene_is_zero() {
        let s = positioning_spectrum(&[], &[], 8, 8, 200.0).unwrap();
        assert!(s.grid.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spectrum_target_rectangle_enumeration() {
        let step = PI / 20.0;
        // Spans theta cells 10..=12 and phi cells 4..=5.
        let r = AngularRange::new(
            -PI / 2.0 + 4.3 * step,
            -PI / 2.0 + 5.6 * step,
            10.2 * step,
            12.9 * step,
            100.0,
        )
        .unwrap();
        let s = positioning_spectrum(&[], &[r], 20, 20, 200.0).unwrap();
        let mut cells = Vec::new();
        for ix in 0..20 {
            for iy in 0..20 {
                if s.get(ix, iy, 1) != 0.0 {
                    assert!((s.get(ix, iy, 1) - 0.5).abs() < 1e-15);
                    cells.push((ix, iy));
                }
            }
        }
        assert_eq!(cells, vec![(10, 4), (10, 5), (11, 4), (11, 5), (12, 4), (12, 5)]);
    }

    #[test]
    fn spectrum_far_entity_clamped_with_warning() {
        let s = positioning_spectrum(&[(Direction { theta: 2.0, phi: 0.0 }, 250.0)], &[], 4, 4, 200.0).unwrap();
        assert!(s.grid.iter().all(|&v| v == 0.0));
        assert_eq!(s.warnings.len(), 1);
    }

    proptest! {
        #[test]
        fn rotation_is_proper_orthonormal(gx in -PI..PI, gy in -PI..PI, gz in -PI..PI) {
            let r = rotation_matrix(gx, gy, gz);
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            let back = euler_from_rotation(&r);
            let r2 = rotation_matrix(back[0], back[1], back[2]);
            prop_assert!((r - r2).norm() < 1e-9);
        }

        #[test]
        fn pixel_world_round_trip(
            px in 0.0..1920.0f64, py in 0.0..1024.0f64, depth in 0.5..150.0f64,
            gx in -1.0..1.0f64, gy in -1.0..1.0f64, gz in -3.0..3.0f64,
            tx in -10.0..10.0f64, ty in -10.0..10.0f64, tz in -10.0..10.0f64,
        ) {
            let cam = CameraModel::new(1.7, 1920, 1024, Vector3::new(tx, ty, tz), [gx, gy, gz]).unwrap();
            let w = pixel_to_world(Vector3::new(px, py, 1.0), depth, &cam).unwrap();
            let (qx, qy, qd) = world_to_pixel(w, &cam).unwrap().unwrap();
            prop_assert!((qx - px).abs() < 1e-9 && (qy - py).abs() < 1e-9 && (qd - depth).abs() < 1e-9);
        }

        #[test]
        fn polar_matches_spherical_conversion(x in 0.1..100.0f64, y in -100.0..100.0f64, z in -60.0..-0.1f64) {
            let (phi, theta, d) = world_to_polar(Vector3::new(x, y, z), Vector3::zeros()).unwrap();
            let r = (x * x + y * y + z * z).sqrt();
            // Spherical polar angle measured from +z, azimuth from +x.
            prop_assert!((theta - (z / r).acos()).abs() < 1e-12);
            prop_assert!((phi - (y / x).atan()).abs() < 1e-12);
            prop_assert!((d - r).abs() < 1e-12);
        }

        #[test]
        fn spectrum_entries_in_unit_interval(
            t in 0.0..PI, p in -PI/2.0..PI/2.0, d in 0.0..400.0f64, h in 0.0..0.5f64, w in 0.0..0.5f64,
        ) {
            let r = AngularRange::new(p.min(PI/2.0 - w), (p + w).min(PI/2.0), t.min(PI - h), (t + h).min(PI), d.max(1.0)).unwrap();
            let s = positioning_spectrum(&[(Direction { theta: t, phi: p }, d)], &[r], 12, 10, 200.0).unwrap();
            prop_assert!(s.grid.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
