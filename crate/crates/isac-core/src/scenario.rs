//! Seeded desk-scale scenarios: system parameters, scene geometry and channels.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arrays::{beamspace_dictionary, ArrayGeometry, BeamspaceDictionary, Direction};
use crate::channels::{
    comm_channel_from_paths, draw_user_paths, path_amplitude, target_response_from_paths, CommChannel, PathGeom,
    SubcarrierGrid, TargetPath, TargetResponse, UserPaths, SCATTER_HALF_WIDTH_M,
};
use crate::metrics::{dbm_per_hz_to_watts, NoiseConfig};
use crate::scene::{direction_to, world_to_pixel, CameraModel, Category, Entity, Scene};
use crate::{IsacError, Result};

/// Array position used by generated scenes (m).
pub const UPA_POSITION: [f64; 3] = [0.0, 0.0, 55.0];
/// User height above ground (m).
pub const USER_HEIGHT_M: f64 = 1.4;
/// Flying-target height (m).
pub const TARGET_HEIGHT_M: f64 = 45.0;
/// Reference distance for the link-budget SNR (m).
pub const REFERENCE_DISTANCE_M: f64 = 50.0;

/// Transceiver, band and noise parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub grid: SubcarrierGrid,
    pub n_rf: usize,
    pub t_max: f64,
    pub p_t: f64,
    pub noise: NoiseConfig,
    /// Beamspace dictionary size per axis.
    pub n_dh: usize,
    pub n_dv: usize,
    /// Scattered paths per user.
    pub p_u: usize,
    /// Rician factor scaling the scattered paths.
    pub k_f: f64,
}

impl SystemParams {
    /// Desk profile: 8×8 arrays, 100 GHz carrier, 8 GHz over 16 subcarriers, 6 RF chains.
    pub fn desk() -> Self {
        let grid = SubcarrierGrid::new(100e9, 8e9, 16).expect("valid grid");
        let n0 = dbm_per_hz_to_watts(-30.0);
        let mut p = Self {
            tx: ArrayGeometry::fully_delayed(8, 8, 100e9).expect("valid geometry"),
            rx: ArrayGeometry::fully_delayed(8, 8, 100e9).expect("valid geometry"),
            grid,
            n_rf: 6,
            t_max: 1e-9,
            p_t: 1.0,
            noise: NoiseConfig { n_c0: n0, n_s0: n0 },
            n_dh: 16,
            n_dv: 16,
            p_u: 2,
            k_f: 3.0,
        };
        p.p_t = p.power_for_snr(10.0);
        p
    }

    /// Transmit power giving `P_t·β_ref²/(B n_c0)` equal to `snr_db`, with `β_ref` the
    /// free-space amplitude at the carrier over [`REFERENCE_DISTANCE_M`].
    pub fn power_for_snr(&self, snr_db: f64) -> f64 {
        let beta = path_amplitude(self.grid.f_c, REFERENCE_DISTANCE_M);
        10f64.powf(snr_db / 10.0) * self.grid.bandwidth * self.noise.n_c0 / (beta * beta)
    }

    /// Transmit and receive beamspace dictionaries.
    pub fn dictionaries(&self) -> Result<(BeamspaceDictionary, BeamspaceDictionary)> {
        Ok((beamspace_dictionary(&self.tx, self.n_dh, self.n_dv)?, beamspace_dictionary(&self.rx, self.n_dh, self.n_dv)?))
    }
}

/// A fully specified scenario: scene, ground-truth geometry and channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: SystemParams,
    pub scene: Scene,
    pub users: Vec<UserPaths>,
    pub targets: Vec<TargetPath>,
    pub comm: CommChannel,
    pub resp: TargetResponse,
    pub seed: u64,
}

impl Scenario {
    /// Ground-truth user directions and distances.
    pub fn user_directions(&self) -> Vec<(Direction, f64)> {
        self.users.iter().map(|u| (u.los.dir, u.los.dist)).collect()
    }
}

/// Three cameras at the array looking left, ahead and right over the service area.
pub fn default_cameras() -> Result<Vec<CameraModel>> {
    let c = Vector3::from(UPA_POSITION);
    [-30.0, 0.0, 30.0]
        .iter()
        .map(|&y| CameraModel::looking_at(PI / 2.0, 640, 480, c, Vector3::new(50.0, y, 0.0)))
        .collect()
}

/// Random desk scene: users on the ground, targets in the air, `x ∈ [10, 90]`, `y ∈ [−40, 40]`.
///
/// Positions whose center falls outside every default camera image are redrawn.
pub fn desk_scene(n_users: usize, n_targets: usize, rng: &mut impl Rng) -> Result<Scene> {
    let cameras = default_cameras()?;
    let mut entities = Vec::with_capacity(n_users + n_targets);
    let kinds = std::iter::repeat_n((Category::User, USER_HEIGHT_M, 0.0, [1.0, 0.8]), n_users)
        .chain(std::iter::repeat_n((Category::Target, TARGET_HEIGHT_M, 1.0, [0.4, 0.2]), n_targets));
    for (category, height, rcs, extent) in kinds {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_DRAWS {
            let p = Vector3::new(rng.random_range(10.0..90.0), rng.random_range(-40.0..40.0), height);
            if in_view(p, &cameras)? {
                placed = Some(p);
                break;
            }
        }
        let p = placed.ok_or_else(|| IsacError::DegenerateScene(format!("no visible position found for a {category:?}")))?;
        entities.push(Entity::new(p, category, rcs, extent)?);
    }
    Ok(Scene { upa_position: Vector3::from(UPA_POSITION), entities, cameras })
}

/// Draw limit per entity in [`desk_scene`].
pub const MAX_PLACEMENT_DRAWS: usize = 1000;

/// Whether a world point projects inside the image of at least one camera.
pub fn in_view(p: Vector3<f64>, cameras: &[CameraModel]) -> Result<bool> {
    for cam in cameras {
        if let Some((x, y, _)) = world_to_pixel(p, cam)? {
            if (0.0..=cam.n_w as f64).contains(&x) && (0.0..=cam.n_h as f64).contains(&y) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Builds channels for a scene.
pub fn scenario_from_scene(params: SystemParams, scene: Scene, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_pos: Vec<Vector3<f64>> = scene.of(Category::User).map(|e| e.position).collect();
    let users = draw_user_paths(&user_pos, scene.upa_position, params.p_u, SCATTER_HALF_WIDTH_M, &mut rng)?;
    let mut targets = Vec::new();
    for e in scene.of(Category::Target) {
        let (dir, dist) = direction_to(e.position, scene.upa_position)?;
        targets.push(TargetPath { dir, dist, rcs: e.rcs, phase: rng.random_range(0.0..2.0 * PI) });
    }
    build(params, scene, users, targets, seed)
}

fn build(params: SystemParams, scene: Scene, users: Vec<UserPaths>, targets: Vec<TargetPath>, seed: u64) -> Result<Scenario> {
    if users.is_empty() || targets.is_empty() {
        return Err(IsacError::DegenerateScene("at least one user and one target are required".into()));
    }
    let comm = comm_channel_from_paths(&users, &params.grid, &params.tx, params.k_f)?;
    let resp = target_response_from_paths(&targets, &params.grid, &params.tx, &params.rx)?;
    Ok(Scenario { params, scene, users, targets, comm, resp, seed })
}

/// Seeded random desk scenario.
pub fn desk_scenario(params: SystemParams, n_users: usize, n_targets: usize, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = desk_scene(n_users, n_targets, &mut rng)?;
    scenario_from_scene(params, scene, rng.random())
}

/// Scenario with explicit LoS-only users and point targets given by direction and distance.
pub fn scenario_from_directions(
    params: SystemParams,
    users: &[(Direction, f64)],
    targets: &[(Direction, f64)],
    seed: u64,
) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_paths: Vec<UserPaths> = users
        .iter()
        .map(|&(dir, dist)| UserPaths { los: PathGeom { dir, dist, phase: rng.random_range(0.0..2.0 * PI) }, nlos: vec![] })
        .collect();
    let target_paths: Vec<TargetPath> = targets
        .iter()
        .map(|&(dir, dist)| TargetPath { dir, dist, rcs: 1.0, phase: rng.random_range(0.0..2.0 * PI) })
        .collect();
    let scene = Scene { upa_position: Vector3::from(UPA_POSITION), entities: vec![], cameras: vec![] };
    build(params, scene, user_paths, target_paths, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scenario_shapes_and_determinism() {
        let p = SystemParams::desk();
        let a = desk_scenario(p, 2, 2, 7).unwrap();
        let b = desk_scenario(p, 2, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.comm.vectors.len(), 16);
        assert_eq!(a.comm.vectors[0].shape(), (64, 2));
        assert_eq!(a.resp.targets.len(), 2);
        for (d, _) in a.user_directions() {
            assert!(d.validate().is_ok());
            assert!(d.theta > PI / 2.0);
        }
    }

    #[test]
    fn desk_entities_are_in_camera_view() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let scene = desk_scene(2, 2, &mut rng).unwrap();
            for e in &scene.entities {
                assert!(in_view(e.position, &scene.cameras).unwrap());
            }
        }
    }

    #[test]
    fn link_budget_snr() {
        let p = SystemParams::desk();
        let beta = path_amplitude(p.grid.f_c, REFERENCE_DISTANCE_M);
        let snr = p.p_t * beta * beta / (p.grid.bandwidth * p.noise.n_c0);
        assert!((10.0 * snr.log10() - 10.0).abs() < 1e-9);
    }
}
