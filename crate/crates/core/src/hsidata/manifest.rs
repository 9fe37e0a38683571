use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HsiError, Result};
use crate::geometry::{Homography, Intrinsics, RelativePose};

/// World-to-camera pose: `X_cam = R X_world + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation_mm: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(pose: &RelativePose) -> Self {
        Self {
            rotation: pose.quaternion(),
            translation_mm: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }

    pub fn to_pose(&self) -> Result<RelativePose> {
        RelativePose::from_quaternion(self.rotation, self.translation_mm)
            .map_err(|e| HsiError::Manifest(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Relative to the manifest's directory unless absolute.
    pub cube_path: String,
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseRecord>,
    pub sequence: String,
    pub frame_index: usize,
}

/// A training or evaluation sample: base view, its warped copy, and
/// optionally a second posed view of the same scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub base: usize,
    pub warped: usize,
    pub h01: Homography,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub frames: Vec<FrameRecord>,
    #[serde(default)]
    pub triplets: Vec<TripletRecord>,
    /// Generator settings echoed for reproducibility.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.frames.iter().enumerate() {
            f.intrinsics
                .validate()
                .map_err(|e| HsiError::Manifest(format!("frames[{i}].intrinsics: {e}")))?;
            if let Some(p) = &f.pose {
                let n = p.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(HsiError::Manifest(format!(
                        "frames[{i}].pose.rotation: norm {n}"
                    )));
                }
            }
        }
        let n = self.frames.len();
        for (i, t) in self.triplets.iter().enumerate() {
            let idx = [Some(t.base), Some(t.warped), t.second];
            if idx.iter().flatten().any(|&k| k >= n) {
                return Err(HsiError::Manifest(format!(
                    "triplets[{i}]: frame index out of range"
                )));
            }
            if let Some(s) = t.second {
                if self.frames[t.base].pose.is_none() || self.frames[s].pose.is_none() {
                    return Err(HsiError::Manifest(format!(
                        "triplets[{i}]: second view needs poses on both frames"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Relative pose taking camera `a` coordinates into camera `b`.
    pub fn relative_pose(&self, a: usize, b: usize) -> Result<RelativePose> {
        let pose = |i: usize| {
            self.frames
                .get(i)
                .and_then(|f| f.pose)
                .ok_or_else(|| HsiError::Manifest(format!("frame {i} has no pose")))?
                .to_pose()
        };
        let (pa, pb) = (pose(a)?, pose(b)?);
        let r = pb.rotation * pa.rotation.transpose();
        RelativePose::new(r, pb.translation - r * pa.translation)
            .map_err(|e| HsiError::Manifest(e.to_string()))
    }

    pub fn has_poses(&self) -> bool {
        self.triplets.iter().any(|t| t.second.is_some())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| HsiError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| HsiError::Manifest(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn cube_path(&self, root: &Path, frame: usize) -> PathBuf {
        let p = Path::new(&self.frames[frame].cube_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }
}
