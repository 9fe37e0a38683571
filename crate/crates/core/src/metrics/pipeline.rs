use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    homography_corner_error, matching_score, mha, mma, repeatability, EvalMode, EvalReport,
    PairRecord, PlanarGeometry, PlanarRecord, PoseRecord, RepeatabilityDenominator,
    PIXEL_THRESHOLDS,
};
use crate::geometry::{
    pose_angular_error, relative_pose_from_matches, CorrespondenceSet, GeometryError, Homography,
    Intrinsics, RelativePose, RobustConfig,
};
use crate::hsidata::{HsiCube, ValidityMask};
use crate::matching::{mnn_match, similarity, to_correspondences};
use crate::model::{HyKeyNetwork, ModelError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub max_keypoints: usize,
    /// Inlier threshold (px) of the homography estimate behind MHA.
    pub mha_threshold: f64,
    pub min_similarity: Option<f32>,
    pub repeatability_denominator: RepeatabilityDenominator,
    /// Robust fundamental estimation for pose evaluation.
    pub pose: RobustConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_keypoints: 1024,
            mha_threshold: 3.0,
            min_similarity: None,
            repeatability_denominator: RepeatabilityDenominator::Sum,
            pose: RobustConfig::fundamental(),
        }
    }
}

/// An image and its homographic warp.
#[derive(Clone, Debug)]
pub struct PlanarSample {
    pub id: String,
    pub image0: HsiCube,
    pub image1: HsiCube,
    pub h01: Homography,
    /// Pixels of `image1` with content.
    pub mask1: Option<ValidityMask>,
}

/// Two views with known intrinsics and relative pose.
#[derive(Clone, Debug)]
pub struct PoseSample {
    pub id: String,
    pub image0: HsiCube,
    pub image2: HsiCube,
    pub k0: Intrinsics,
    pub k2: Intrinsics,
    pub pose: RelativePose,
}

/// Mutual nearest neighbour matches between two sets of detections with
/// unit-norm descriptors `[N, D]`.
pub fn match_features(
    kpts0: &[[f32; 2]],
    desc0: &Tensor,
    kpts1: &[[f32; 2]],
    desc1: &Tensor,
    min_similarity: Option<f32>,
) -> CorrespondenceSet {
    if kpts0.is_empty() || kpts1.is_empty() {
        return vec![];
    }
    match similarity(desc0, desc1) {
        Ok(m) => to_correspondences(&mnn_match(&m, min_similarity), kpts0, kpts1),
        Err(e) => {
            log::warn!("matching skipped: {e}");
            vec![]
        }
    }
}

/// Planar metrics of one pair of detections.
pub fn evaluate_planar_pair(
    id: &str,
    view0: (&[[f32; 2]], &Tensor),
    view1: (&[[f32; 2]], &Tensor),
    geometry: &PlanarGeometry,
    options: &EvalOptions,
) -> PairRecord {
    let (k0, k1) = (view0.0, view1.0);
    let matches = match_features(k0, view0.1, k1, view1.1, options.min_similarity);
    let covisible = geometry.covisible_counts(k0, k1);
    let corner_error = homography_corner_error(
        &matches,
        &geometry.h01,
        geometry.size0.0,
        geometry.size0.1,
        &RobustConfig::homography(options.mha_threshold),
    );
    let per =
        |f: &dyn Fn(f64) -> Option<f64>| PIXEL_THRESHOLDS.iter().map(|&t| f(t)).collect::<Vec<_>>();
    PairRecord {
        id: id.to_string(),
        keypoints: [k0.len(), k1.len()],
        matches: matches.len(),
        planar: Some(PlanarRecord {
            covisible: [covisible.0, covisible.1],
            repeatability: per(&|t| {
                repeatability(k0, k1, geometry, t, options.repeatability_denominator)
            }),
            matching_score: per(&|t| matching_score(&matches, &geometry.h01, t, covisible)),
            mma: per(&|t| mma(&matches, &geometry.h01, t)),
            mha: PIXEL_THRESHOLDS
                .iter()
                .map(|&t| mha(corner_error, t))
                .collect(),
            corner_error,
        }),
        pose: None,
    }
}

/// Relative-pose error of one pair of detections.
pub fn evaluate_pose_pair(
    id: &str,
    view0: (&[[f32; 2]], &Tensor),
    view2: (&[[f32; 2]], &Tensor),
    k0: &Intrinsics,
    k2: &Intrinsics,
    pose: &RelativePose,
    options: &EvalOptions,
) -> PairRecord {
    let matches = match_features(view0.0, view0.1, view2.0, view2.1, options.min_similarity);
    let estimate = relative_pose_from_matches(&matches, k0, k2, &options.pose);
    let record = match estimate {
        Ok(e) => PoseRecord {
            error_deg: Some(pose_angular_error(&e.pose, pose)),
            inliers: e.inliers.iter().filter(|&&b| b).count(),
        },
        Err(err) => {
            log::debug!("pair {id}: pose estimation failed: {err}");
            PoseRecord {
                error_deg: None,
                inliers: 0,
            }
        }
    };
    PairRecord {
        id: id.to_string(),
        keypoints: [view0.0.len(), view2.0.len()],
        matches: matches.len(),
        planar: None,
        pose: Some(record),
    }
}

/// Runs the network on both images of a planar sample.
pub fn evaluate_planar_sample(
    network: &HyKeyNetwork,
    s: &PlanarSample,
    options: &EvalOptions,
) -> Result<PairRecord, EvalError> {
    let a = network.infer(&s.image0, options.max_keypoints)?;
    let b = network.infer(&s.image1, options.max_keypoints)?;
    let geometry = PlanarGeometry::new(s.h01, (s.image0.width(), s.image0.height()))?
        .with_masks(None, s.mask1.clone());
    Ok(evaluate_planar_pair(
        &s.id,
        (&a.keypoints, &a.descriptors),
        (&b.keypoints, &b.descriptors),
        &geometry,
        options,
    ))
}

/// Runs the network on both views of a two-view sample.
pub fn evaluate_pose_sample(
    network: &HyKeyNetwork,
    s: &PoseSample,
    options: &EvalOptions,
) -> Result<PairRecord, EvalError> {
    let a = network.infer(&s.image0, options.max_keypoints)?;
    let b = network.infer(&s.image2, options.max_keypoints)?;
    Ok(evaluate_pose_pair(
        &s.id,
        (&a.keypoints, &a.descriptors),
        (&b.keypoints, &b.descriptors),
        &s.k0,
        &s.k2,
        &s.pose,
        options,
    ))
}

/// Runs the network on every planar sample and aggregates the report.
pub fn evaluate_homography(
    network: &HyKeyNetwork,
    samples: &[PlanarSample],
    options: &EvalOptions,
    config: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    let pairs = samples
        .iter()
        .map(|s| evaluate_planar_sample(network, s, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::aggregate(EvalMode::Homography, pairs, config))
}

/// Runs the network on every two-view sample and aggregates pose accuracy.
pub fn evaluate_pose(
    network: &HyKeyNetwork,
    samples: &[PoseSample],
    options: &EvalOptions,
    config: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    let pairs = samples
        .iter()
        .map(|s| evaluate_pose_sample(network, s, options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::aggregate(EvalMode::Pose, pairs, config))
}
