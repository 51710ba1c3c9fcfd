//! Scene files: UPA position, optional cameras and entities in TOML.

use std::path::Path;

use isac_core::scenario::{default_cameras, UPA_POSITION};
use isac_core::scene::{CameraModel, Category, Entity, Scene};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Entity category as written in scene files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoryName {
    User,
    Target,
}

/// One entity record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub category: CategoryName,
    /// World position (m).
    pub position: [f64; 3],
    /// Radar cross-section (m²).
    #[serde(default = "default_rcs")]
    pub rcs: f64,
    /// Half-width and half-height (m).
    #[serde(default = "default_extent")]
    pub extent: [f64; 2],
}

fn default_rcs() -> f64 {
    1.0
}

fn default_extent() -> [f64; 2] {
    [0.5, 0.5]
}

/// One camera record; rotation angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    /// Optical center (m).
    pub position: [f64; 3],
    pub rotation_deg: [f64; 3],
    pub fov_deg: f64,
    pub n_w: usize,
    pub n_h: usize,
}

/// Scene file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default = "default_upa")]
    pub upa_position: [f64; 3],
    /// Cameras; the three default desk cameras are used when empty.
    #[serde(default, rename = "camera")]
    pub cameras: Vec<CameraRecord>,
    #[serde(rename = "entity")]
    pub entities: Vec<EntityRecord>,
}

fn default_upa() -> [f64; 3] {
    UPA_POSITION
}

impl SceneFile {
    /// Converts to a core scene.
    pub fn to_scene(&self) -> Result<Scene> {
        let wrap = |field: String, e: isac_core::IsacError| HarnessError::config(field, e.to_string());
        let entities = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let cat = match e.category {
                    CategoryName::User => Category::User,
                    CategoryName::Target => Category::Target,
                };
                Entity::new(Vector3::from(e.position), cat, e.rcs, e.extent).map_err(|err| wrap(format!("entity[{i}]"), err))
            })
            .collect::<Result<Vec<_>>>()?;
        let cameras = if self.cameras.is_empty() {
            default_cameras().map_err(|e| wrap("camera".into(), e))?
        } else {
            self.cameras
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let r = c.rotation_deg.map(f64::to_radians);
                    CameraModel::from_center(c.fov_deg.to_radians(), c.n_w, c.n_h, Vector3::from(c.position), r)
                        .map_err(|err| wrap(format!("camera[{i}]"), err))
                })
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Scene { upa_position: Vector3::from(self.upa_position), entities, cameras })
    }
}

/// Reads and converts a scene file.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let file: SceneFile = toml::from_str(&text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| crate::config::line_col(&text, s.start));
        HarnessError::Parse { path: path.display().to_string(), line, column, message: e.message().to_string() }
    })?;
    file.to_scene()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entities_and_defaults_cameras() {
        let text = "[[entity]]\ncategory = \"user\"\nposition = [40.0, 5.0, 1.4]\n\n[[entity]]\ncategory = \"target\"\nposition = [60.0, -10.0, 45.0]\nrcs = 2.0\n";
        let f: SceneFile = toml::from_str(text).unwrap();
        let s = f.to_scene().unwrap();
        assert_eq!(s.entities.len(), 2);
        assert_eq!(s.cameras.len(), 3);
        assert_eq!(s.of(Category::Target).next().unwrap().rcs, 2.0);
        assert_eq!(s.upa_position, Vector3::from(UPA_POSITION));
    }

    #[test]
    fn bad_target_rcs_names_the_entity() {
        let text = "[[entity]]\ncategory = \"target\"\nposition = [60.0, -10.0, 45.0]\nrcs = 0.0\n";
        let f: SceneFile = toml::from_str(text).unwrap();
        let err = f.to_scene().unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "entity[0]"));
    }
}
