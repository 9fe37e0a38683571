//! Projective and epipolar geometry in f64.
//!
//! Conventions: pixel points are `(x, y)`; a relative pose `(R, t)` maps
//! coordinates of camera 0 into camera 2 (`X2 = R X0 + t`), so that
//! `x2^T F x0 = 0` for corresponding pixels.

mod epipolar;
mod homography;
mod robust;

pub use epipolar::{
    compose_fundamental, decompose_essential, eight_point, essential_from_fundamental,
    pose_angular_error, relative_pose_from_matches, sampson_distance, skew, EssentialMatrix,
    FundamentalMatrix, NormalizedFrame, PoseEstimate,
};
pub use homography::{dlt_homography, Homography};
pub use robust::{
    estimate_fundamental_robust, estimate_homography_robust, RobustConfig, RobustFundamental,
    RobustHomography,
};

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Point2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point maps to infinity (w = {0:e})")]
    PointAtInfinity(f64),
    #[error("degenerate homography (|det| = {0:e})")]
    DegenerateHomography(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("zero translation: fundamental matrix undefined for pure rotation")]
    DegenerateMotion,
    #[error("Sampson denominator vanishes (point at an epipole)")]
    EpipoleDegenerate,
    #[error("cheirality test is ambiguous: no correspondences")]
    CheiralityAmbiguous,
    #[error("estimation failed: {0}")]
    EstimationFailure(String),
    #[error("non-finite input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Pinhole intrinsics with zero skew.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={} fy={} must be positive and finite",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Normalised camera coordinates (`K^-1 x`).
    pub fn unproject(&self, p: &Point) -> Point {
        Point::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn project(&self, x: &Vector3<f64>) -> Point {
        Point::new(self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy)
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }
}

/// Rigid motion from camera 0 to camera 2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RelativePose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let orth = (rotation * rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        let det = rotation.determinant();
        if orth > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(GeometryError::InvalidRotation(format!(
                "orthogonality error {orth:e}, det {det}"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pose from a unit quaternion `[w, x, y, z]` and translation.
    pub fn from_quaternion(q: [f64; 4], translation: [f64; 3]) -> Result<Self> {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(GeometryError::InvalidRotation(format!(
                "quaternion norm {norm}"
            )));
        }
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[0], q[1], q[2], q[3],
        ));
        Self::new(
            *uq.to_rotation_matrix().matrix(),
            Vector3::from(translation),
        )
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&r);
        [q.w, q.i, q.j, q.k]
    }

    /// The pose taking camera 2 back to camera 0.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// One putative match between two views.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub similarity: f64,
}

impl Correspondence {
    pub fn new(p0: Point, p1: Point, similarity: f64) -> Self {
        Self {
            p0: [p0.x, p0.y],
            p1: [p1.x, p1.y],
            similarity,
        }
    }

    pub fn from_points(p0: Point, p1: Point) -> Self {
        Self::new(p0, p1, 1.0)
    }

    pub fn a(&self) -> Point {
        Point::new(self.p0[0], self.p0[1])
    }

    pub fn b(&self) -> Point {
        Point::new(self.p1[0], self.p1[1])
    }

    pub fn is_finite(&self) -> bool {
        self.p0.iter().chain(&self.p1).all(|v| v.is_finite())
    }
}

pub type CorrespondenceSet = Vec<Correspondence>;

pub(crate) fn homogeneous(p: &Point) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// Similarity transform moving the centroid to the origin with mean distance
/// sqrt(2), used to condition DLT-style solvers.
pub(crate) fn hartley_normalisation(points: &[Point]) -> Matrix3<f64> {
    let n = points.len().max(1) as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Right null vector of a `rows x 9` design matrix, via SVD (padded to at
/// least 9 rows so the full right basis is available).
pub(crate) fn null_vector9(rows: &[[f64; 9]]) -> Option<nalgebra::SVector<f64, 9>> {
    let n = rows.len().max(9);
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, 9);
    for (i, r) in rows.iter().enumerate() {
        for j in 0..9 {
            a[(i, j)] = r[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let row = v_t.row(idx);
    Some(nalgebra::SVector::<f64, 9>::from_iterator(
        row.iter().copied(),
    ))
}
