//! JSON documents: pose lists and reports.

use std::path::Path;

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic, IoError};
use crate::geometry::{quaternion_from_wxyz, quaternion_to_wxyz, RigidPose};

/// One world-to-camera pose; rotation as `[w, x, y, z]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEntry {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseList {
    pub poses: Vec<PoseEntry>,
}

impl From<&RigidPose> for PoseEntry {
    fn from(p: &RigidPose) -> Self {
        Self {
            rotation: quaternion_to_wxyz(&p.rotation),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl PoseEntry {
    pub fn to_pose(&self) -> RigidPose {
        let t = self.translation;
        RigidPose::new(quaternion_from_wxyz(self.rotation), Vector3::new(t[0], t[1], t[2]))
    }
}

pub fn poses_to_json(poses: &[RigidPose]) -> PoseList {
    PoseList {
        poses: poses.iter().map(PoseEntry::from).collect(),
    }
}

pub fn poses_from_json(list: &PoseList) -> Vec<RigidPose> {
    list.poses.iter().map(PoseEntry::to_pose).collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed, newline-terminated.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push(b'\n');
    write_atomic(path, &text)
}
