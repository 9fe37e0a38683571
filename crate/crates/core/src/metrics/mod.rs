//! Detection and matching quality under known geometry.
//!
//! Planar metrics (repeatability, matching score, mean matching accuracy and
//! homography accuracy) are evaluated at pixel thresholds and summarised by
//! the normalised area under the threshold curve. Relative-pose accuracy is
//! the fraction of pairs below angular thresholds.

mod pipeline;
mod report;

pub use pipeline::{
    evaluate_homography, evaluate_planar_pair, evaluate_planar_sample, evaluate_pose,
    evaluate_pose_pair, evaluate_pose_sample, match_features, EvalError, EvalOptions, PlanarSample,
    PoseSample,
};
pub use report::{
    curves_svg, EvalMode, EvalReport, MaaSummary, PairRecord, PlanarRecord, PoseRecord,
    ThresholdCurve,
};

use serde::{Deserialize, Serialize};

use crate::geometry::{
    estimate_homography_robust, Correspondence, Homography, Point, RobustConfig,
};
use crate::hsidata::ValidityMask;

/// Pixel thresholds of the planar curves.
pub const PIXEL_THRESHOLDS: [f64; 5] = [1.0, 3.0, 5.0, 10.0, 20.0];
/// Angular thresholds (degrees) of pose accuracy.
pub const POSE_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

/// Denominator of [`repeatability`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatabilityDenominator {
    /// Both directions counted, divided by the sum of covisible counts.
    #[default]
    Sum,
    /// Mean of the two directional counts over the smaller covisible count,
    /// capped at 1.
    Min,
}

/// Known planar relation between two images, with optional validity masks
/// (pixels without content are never covisible).
#[derive(Clone, Debug)]
pub struct PlanarGeometry {
    pub h01: Homography,
    h10: Homography,
    pub size0: (usize, usize),
    pub size1: (usize, usize),
    pub mask0: Option<ValidityMask>,
    pub mask1: Option<ValidityMask>,
}

fn inside(p: &Point, (w, h): (usize, usize), mask: Option<&ValidityMask>) -> bool {
    p.x >= 0.0
        && p.y >= 0.0
        && p.x <= (w.max(1) - 1) as f64
        && p.y <= (h.max(1) - 1) as f64
        && mask.is_none_or(|m| m.contains(p))
}

fn point(p: [f32; 2]) -> Point {
    Point::new(p[0] as f64, p[1] as f64)
}

impl PlanarGeometry {
    /// `size` is `(width, height)`, shared by both images.
    pub fn new(h01: Homography, size: (usize, usize)) -> crate::geometry::Result<Self> {
        Ok(Self {
            h10: h01.inverse()?,
            h01,
            size0: size,
            size1: size,
            mask0: None,
            mask1: None,
        })
    }

    pub fn with_masks(mut self, mask0: Option<ValidityMask>, mask1: Option<ValidityMask>) -> Self {
        self.mask0 = mask0;
        self.mask1 = mask1;
        self
    }

    pub fn h10(&self) -> &Homography {
        &self.h10
    }

    /// Projection of a view-0 point into view 1 when both ends are valid.
    pub fn covisible0(&self, p: [f32; 2]) -> Option<Point> {
        let p = point(p);
        if !inside(&p, self.size0, self.mask0.as_ref()) {
            return None;
        }
        let q = self.h01.apply(&p).ok()?;
        inside(&q, self.size1, self.mask1.as_ref()).then_some(q)
    }

    /// Projection of a view-1 point back into view 0 when both ends are valid.
    pub fn covisible1(&self, p: [f32; 2]) -> Option<Point> {
        let p = point(p);
        if !inside(&p, self.size1, self.mask1.as_ref()) {
            return None;
        }
        let q = self.h10.apply(&p).ok()?;
        inside(&q, self.size0, self.mask0.as_ref()).then_some(q)
    }

    pub fn covisible_counts(&self, kpts0: &[[f32; 2]], kpts1: &[[f32; 2]]) -> (usize, usize) {
        (
            kpts0
                .iter()
                .filter(|&&p| self.covisible0(p).is_some())
                .count(),
            kpts1
                .iter()
                .filter(|&&p| self.covisible1(p).is_some())
                .count(),
        )
    }
}

fn has_neighbour(q: &Point, targets: &[[f32; 2]], tau: f64) -> bool {
    targets.iter().any(|&t| (point(t) - q).norm() <= tau)
}

/// Fraction of covisible keypoints re-detected within `tau` px in the other
/// view, counted in both directions. `None` when nothing is covisible.
pub fn repeatability(
    kpts0: &[[f32; 2]],
    kpts1: &[[f32; 2]],
    geometry: &PlanarGeometry,
    tau: f64,
    denominator: RepeatabilityDenominator,
) -> Option<f64> {
    let (mut c0, mut c1, mut n0, mut n1) = (0usize, 0usize, 0usize, 0usize);
    for &p in kpts0 {
        if let Some(q) = geometry.covisible0(p) {
            c0 += 1;
            n0 += has_neighbour(&q, kpts1, tau) as usize;
        }
    }
    for &p in kpts1 {
        if let Some(q) = geometry.covisible1(p) {
            c1 += 1;
            n1 += has_neighbour(&q, kpts0, tau) as usize;
        }
    }
    match denominator {
        RepeatabilityDenominator::Sum => (c0 + c1 > 0).then(|| (n0 + n1) as f64 / (c0 + c1) as f64),
        RepeatabilityDenominator::Min => {
            (c0.min(c1) > 0).then(|| ((n0 + n1) as f64 / (2.0 * c0.min(c1) as f64)).min(1.0))
        }
    }
}

/// Reprojection error `|H p0 - p1|` of a match, infinite when `p0` maps to
/// infinity.
pub fn reprojection_error(m: &Correspondence, h01: &Homography) -> f64 {
    h01.apply(&m.a())
        .map_or(f64::INFINITY, |q| (q - m.b()).norm())
}

fn correct(matches: &[Correspondence], h01: &Homography, tau: f64) -> usize {
    matches
        .iter()
        .filter(|m| reprojection_error(m, h01) < tau)
        .count()
}

/// Correct matches over the smaller covisible keypoint count.
pub fn matching_score(
    matches: &[Correspondence],
    h01: &Homography,
    tau: f64,
    covisible: (usize, usize),
) -> Option<f64> {
    let d = covisible.0.min(covisible.1);
    (d > 0).then(|| (correct(matches, h01, tau) as f64 / d as f64).min(1.0))
}

/// Fraction of matches with reprojection error below `tau`.
pub fn mma(matches: &[Correspondence], h01: &Homography, tau: f64) -> Option<f64> {
    (!matches.is_empty()).then(|| correct(matches, h01, tau) as f64 / matches.len() as f64)
}

/// Mean corner displacement between the homography robustly estimated from
/// `matches` and the ground truth, over a `width x height` image. `None`
/// when estimation fails or there are fewer than four matches.
pub fn homography_corner_error(
    matches: &[Correspondence],
    h_gt: &Homography,
    width: usize,
    height: usize,
    config: &RobustConfig,
) -> Option<f64> {
    if matches.len() < 4 {
        return None;
    }
    let est = estimate_homography_robust(matches, config).ok()?;
    est.homography.corner_error(h_gt, width, height).ok()
}

/// 1 when the corner error is below `tau`, 0 otherwise (failures included).
pub fn mha(corner_error: Option<f64>, tau: f64) -> f64 {
    corner_error.is_some_and(|e| e < tau) as u8 as f64
}

/// Trapezoidal area under a piecewise-linear curve over
/// `[thresholds[0], thresholds[last]]`, normalised by the span.
pub fn auc_over(thresholds: &[f64], values: &[f64]) -> f64 {
    assert_eq!(thresholds.len(), values.len(), "one value per threshold");
    match thresholds.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let area: f64 = (1..n)
                .map(|k| 0.5 * (values[k] + values[k - 1]) * (thresholds[k] - thresholds[k - 1]))
                .sum();
            area / (thresholds[n - 1] - thresholds[0])
        }
    }
}

/// [`auc_over`] at [`PIXEL_THRESHOLDS`].
pub fn auc(values: &[f64]) -> f64 {
    auc_over(&PIXEL_THRESHOLDS, values)
}

/// Fraction of pairs with angular error below each threshold; failed
/// estimations are `None` and never count.
pub fn maa(errors_deg: &[Option<f64>], thresholds: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&t| {
            if errors_deg.is_empty() {
                return 0.0;
            }
            errors_deg
                .iter()
                .filter(|e| e.is_some_and(|e| e < t))
                .count() as f64
                / errors_deg.len() as f64
        })
        .collect()
}
