use nalgebra::{Matrix3, Vector2, Vector3};

use super::robust::{estimate_fundamental_robust, RobustConfig};
use super::{
    hartley_normalisation, homogeneous, null_vector9, Correspondence, GeometryError, Intrinsics,
    Point, RelativePose, Result,
};

/// Rank-2 epipolar matrix with unit Frobenius norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Normalises `m` to unit Frobenius norm. Rank is not enforced here; use
    /// [`FundamentalMatrix::rank2`] for that.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let n = m.norm();
        if !(n > 1e-300) || !n.is_finite() {
            return Err(GeometryError::EstimationFailure(
                "zero fundamental matrix".into(),
            ));
        }
        Ok(Self(m / n))
    }

    /// Closest rank-2 matrix in Frobenius norm, renormalised.
    pub fn rank2(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::EstimationFailure("SVD failed".into())),
        };
        let mut s = svd.singular_values;
        let (imin, _) = s
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        s[imin] = 0.0;
        Self::new(u * Matrix3::from_diagonal(&s) * v_t)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `x2^T F x0`.
    pub fn residual(&self, p0: &Point, p2: &Point) -> f64 {
        homogeneous(p2).dot(&(self.0 * homogeneous(p0)))
    }
}

/// Essential matrix with singular values (1, 1, 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Projects onto the essential manifold.
    pub fn project(m: Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::EstimationFailure("SVD failed".into())),
        };
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut s = Vector3::zeros();
        s[order[0]] = 1.0;
        s[order[1]] = 1.0;
        Ok(Self(u * Matrix3::from_diagonal(&s) * v_t))
    }

    pub fn from_pose(pose: &RelativePose) -> Self {
        Self(skew(&pose.translation) * pose.rotation)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Cross-product matrix `[t]x`.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `F02 = K2^-T [t02]x R02 K0^-1`, Frobenius-normalised.
pub fn compose_fundamental(
    k0: &Intrinsics,
    k2: &Intrinsics,
    pose: &RelativePose,
) -> Result<FundamentalMatrix> {
    k0.validate()?;
    k2.validate()?;
    if pose.translation.norm() <= 1e-9 {
        return Err(GeometryError::DegenerateMotion);
    }
    let f = k2.inverse().transpose() * skew(&pose.translation) * pose.rotation * k0.inverse();
    FundamentalMatrix::new(f)
}

/// First-order geometric error of a correspondence, in squared units of the
/// coordinates `F` is expressed in.
pub fn sampson_distance(f: &FundamentalMatrix, p0: &Point, p1: &Point) -> Result<f64> {
    if !(p0.x.is_finite() && p0.y.is_finite() && p1.x.is_finite() && p1.y.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let (x0, x1) = (homogeneous(p0), homogeneous(p1));
    let fx0 = f.0 * x0;
    let ftx1 = f.0.transpose() * x1;
    let num = x1.dot(&fx0);
    let den = fx0.x * fx0.x + fx0.y * fx0.y + ftx1.x * ftx1.x + ftx1.y * ftx1.y;
    if den < 1e-18 {
        return Err(GeometryError::EpipoleDegenerate);
    }
    Ok(num * num / den)
}

/// Normalised eight-point solver with optional per-match weights. Returns a
/// rank-2 matrix satisfying `p1^T F p0 ~ 0`.
pub fn eight_point(
    p0: &[Point],
    p1: &[Point],
    weights: Option<&[f64]>,
) -> Option<FundamentalMatrix> {
    if p0.len() < 8 || p0.len() != p1.len() {
        return None;
    }
    let t0 = hartley_normalisation(p0);
    let t1 = hartley_normalisation(p1);
    let mut rows = Vec::with_capacity(p0.len());
    for (i, (a, b)) in p0.iter().zip(p1).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w <= 0.0 {
            continue;
        }
        let x = t0 * homogeneous(a);
        let u = t1 * homogeneous(b);
        rows.push(
            [
                u.x * x.x,
                u.x * x.y,
                u.x,
                u.y * x.x,
                u.y * x.y,
                u.y,
                x.x,
                x.y,
                1.0,
            ]
            .map(|e| e * w),
        );
    }
    if rows.len() < 8 {
        return None;
    }
    let f = null_vector9(&rows)?;
    let fnorm = FundamentalMatrix::rank2(Matrix3::from_row_slice(f.as_slice())).ok()?;
    FundamentalMatrix::rank2(t1.transpose() * fnorm.0 * t0).ok()
}

/// `E = K2^T F K0`, projected to singular values (1, 1, 0).
pub fn essential_from_fundamental(
    f: &FundamentalMatrix,
    k0: &Intrinsics,
    k2: &Intrinsics,
) -> Result<EssentialMatrix> {
    EssentialMatrix::project(k2.matrix().transpose() * f.0 * k0.matrix())
}

/// Depths `(z0, z2)` of the linear two-view triangulation of a normalised
/// correspondence under `(r, t)`.
fn triangulate_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    x0: &Point,
    x2: &Point,
) -> Option<(f64, f64)> {
    // z2 * x2 = z0 * R x0 + t  =>  [R x0, -x2] [z0; z2] = -t
    let a = r * homogeneous(x0);
    let b = homogeneous(x2);
    let m = nalgebra::Matrix3x2::from_columns(&[a, -b]);
    let mtm = m.transpose() * m;
    let sol: Vector2<f64> = mtm.try_inverse()? * (m.transpose() * (-t));
    Some((sol.x, sol.y))
}

/// Picks the decomposition of `E` that places the most correspondences in
/// front of both cameras. Points are normalised camera coordinates; the
/// returned translation has unit length.
pub fn decompose_essential(
    e: &EssentialMatrix,
    matches: &[(Point, Point)],
) -> Result<RelativePose> {
    if matches.is_empty() {
        return Err(GeometryError::CheiralityAmbiguous);
    }
    let svd = e.0.svd(true, true);
    let (mut u, mut v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::EstimationFailure("SVD failed".into())),
    };
    // Order singular vectors so the null direction is last.
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    if imin != 2 {
        u.swap_columns(imin, 2);
        v_t.swap_rows(imin, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t: Vector3<f64> = u.column(2).into_owned();
    let candidates = [
        (u * w * v_t, t),
        (u * w * v_t, -t),
        (u * w.transpose() * v_t, t),
        (u * w.transpose() * v_t, -t),
    ];
    let mut best: Option<(usize, usize)> = None;
    let mut counts = [0usize; 4];
    for (ci, (r, t)) in candidates.iter().enumerate() {
        counts[ci] = matches
            .iter()
            .filter(|(a, b)| matches!(triangulate_depths(r, t, a, b), Some((z0, z2)) if z0 > 0.0 && z2 > 0.0))
            .count();
        if best.is_none_or(|(_, c)| counts[ci] > c) {
            best = Some((ci, counts[ci]));
        }
    }
    let (ci, count) = best.unwrap();
    if count == 0 || counts.iter().filter(|&&c| c == count).count() > 1 {
        return Err(GeometryError::CheiralityAmbiguous);
    }
    let (r, t) = candidates[ci];
    RelativePose::new(r, t.normalize())
}

/// Angular pose error in degrees: the larger of the rotation error and the
/// translation-direction error. The translation term is skipped when the
/// reference baseline vanishes.
pub fn pose_angular_error(estimated: &RelativePose, ground_truth: &RelativePose) -> f64 {
    let dr = estimated.rotation * ground_truth.rotation.transpose();
    let cos = ((dr.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let rot = cos.acos().to_degrees();
    let (te, tg) = (estimated.translation, ground_truth.translation);
    let trans = if tg.norm() < 1e-9 || te.norm() < 1e-12 {
        0.0
    } else {
        let c = (te.dot(&tg) / (te.norm() * tg.norm())).clamp(-1.0, 1.0);
        let a = c.acos().to_degrees();
        a.min(180.0 - a)
    };
    rot.max(trans)
}

/// Pixel coordinates rescaled into the "normalised pixel" frame
/// `f * K^-1 x`, where `f` is the mean focal length of both cameras. A
/// threshold of one unit there is commensurate with one pixel.
#[derive(Clone, Copy, Debug)]
pub struct NormalizedFrame {
    pub k0: Intrinsics,
    pub k2: Intrinsics,
    pub focal: f64,
}

impl NormalizedFrame {
    pub fn new(k0: Intrinsics, k2: Intrinsics) -> Self {
        Self {
            k0,
            k2,
            focal: 0.5 * (k0.mean_focal() + k2.mean_focal()),
        }
    }

    pub fn view0(&self, p: &Point) -> Point {
        self.k0.unproject(p) * self.focal
    }

    pub fn view2(&self, p: &Point) -> Point {
        self.k2.unproject(p) * self.focal
    }

    /// Fundamental matrix of this frame from a relative pose.
    pub fn fundamental(&self, pose: &RelativePose) -> Result<FundamentalMatrix> {
        let k = Intrinsics::new(self.focal, self.focal, 0.0, 0.0)?;
        compose_fundamental(&k, &k, pose)
    }

    fn essential(&self, f: &FundamentalMatrix) -> Result<EssentialMatrix> {
        let d = Matrix3::from_diagonal(&Vector3::new(self.focal, self.focal, 1.0));
        EssentialMatrix::project(d * f.0 * d)
    }
}

/// Result of [`relative_pose_from_matches`].
#[derive(Clone, Debug)]
pub struct PoseEstimate {
    pub pose: RelativePose,
    /// Fundamental matrix in the normalised-pixel frame.
    pub fundamental: FundamentalMatrix,
    pub inliers: Vec<bool>,
}

/// Robust relative pose from pixel matches: normalise by the intrinsics,
/// estimate F at the configured threshold, recover E and resolve the
/// four-fold ambiguity on the inliers.
pub fn relative_pose_from_matches(
    matches: &[Correspondence],
    k0: &Intrinsics,
    k2: &Intrinsics,
    config: &RobustConfig,
) -> Result<PoseEstimate> {
    let frame = NormalizedFrame::new(*k0, *k2);
    let normalised: Vec<Correspondence> = matches
        .iter()
        .map(|m| Correspondence::new(frame.view0(&m.a()), frame.view2(&m.b()), m.similarity))
        .collect();
    let robust = estimate_fundamental_robust(&normalised, config)?;
    let e = frame.essential(&robust.fundamental)?;
    let cam: Vec<(Point, Point)> = normalised
        .iter()
        .zip(&robust.inliers)
        .filter(|(_, &inl)| inl)
        .map(|(m, _)| (m.a() / frame.focal, m.b() / frame.focal))
        .collect();
    let pose = decompose_essential(&e, &cam)?;
    Ok(PoseEstimate {
        pose,
        fundamental: robust.fundamental,
        inliers: robust.inliers,
    })
}
