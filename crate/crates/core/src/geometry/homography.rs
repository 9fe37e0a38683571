use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{hartley_normalisation, homogeneous, null_vector9, GeometryError, Point, Result};

/// Planar projective map, scaled so the bottom-right entry is 1 when that
/// entry is non-zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let m = if m[(2, 2)].abs() > 1e-15 {
            m / m[(2, 2)]
        } else {
            m
        };
        let det = m.determinant();
        if det.abs() <= 1e-10 {
            return Err(GeometryError::DegenerateHomography(det));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or(GeometryError::DegenerateHomography(self.0.determinant()))?;
        Self::new(inv)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Self> {
        Self::new(self.0 * first.0)
    }

    pub fn apply(&self, p: &Point) -> Result<Point> {
        let v = self.0 * homogeneous(p);
        if v.z.abs() <= 1e-12 {
            return Err(GeometryError::PointAtInfinity(v.z));
        }
        Ok(Point::new(v.x / v.z, v.y / v.z))
    }

    /// Mean displacement of the four image corners between two homographies.
    pub fn corner_error(&self, other: &Homography, width: usize, height: usize) -> Result<f64> {
        let (w, h) = ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64);
        let corners = [
            Point::new(0.0, 0.0),
            Point::new(w, 0.0),
            Point::new(0.0, h),
            Point::new(w, h),
        ];
        let mut total = 0.0;
        for c in &corners {
            total += (self.apply(c)? - other.apply(c)?).norm();
        }
        Ok(total / 4.0)
    }
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = GeometryError;

    fn try_from(v: [f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&v))
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        let m = h.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

/// Normalised direct linear transform from `(src, dst)` pairs, optionally
/// weighted per pair. Needs at least four pairs.
pub fn dlt_homography(
    src: &[Point],
    dst: &[Point],
    weights: Option<&[f64]>,
) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let ts = hartley_normalisation(src);
    let td = hartley_normalisation(dst);
    let mut rows = Vec::with_capacity(2 * src.len());
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w <= 0.0 {
            continue;
        }
        let a = ts * homogeneous(s);
        let b = td * homogeneous(d);
        let (x, y) = (a.x / a.z, a.y / a.z);
        let (u, v) = (b.x / b.z, b.y / b.z);
        rows.push([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u].map(|e| e * w));
        rows.push([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v].map(|e| e * w));
    }
    if rows.len() < 8 {
        return None;
    }
    let h = null_vector9(&rows)?;
    let hn = Matrix3::from_row_slice(h.as_slice());
    let td_inv = td.try_inverse()?;
    let m = td_inv * hn * ts;
    if m[(2, 2)].abs() > 1e-15 {
        Some(m / m[(2, 2)])
    } else {
        Some(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_h() -> Homography {
        Homography::new(Matrix3::new(
            1.05, 0.08, 3.0, -0.04, 0.97, -2.0, 2e-4, -1e-4, 1.0,
        ))
        .unwrap()
    }

    #[test]
    fn identity_and_translation() {
        let p = Point::new(10.0, 20.0);
        assert_eq!(Homography::identity().apply(&p).unwrap(), p);
        let q = Homography::translation(3.0, 4.0)
            .apply(&Point::origin())
            .unwrap();
        assert_eq!(q, Point::new(3.0, 4.0));
    }

    #[test]
    fn apply_matches_homogeneous_oracle() {
        let h = sample_h();
        let m = h.matrix();
        let (x, y) = (17.3, -4.25);
        let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        let ex = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w;
        let ey = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w;
        let p = h.apply(&Point::new(x, y)).unwrap();
        assert!((p.x - ex).abs() < 1e-9 && (p.y - ey).abs() < 1e-9);
    }

    #[test]
    fn inverse_roundtrip() {
        let h = sample_h();
        let inv = h.inverse().unwrap();
        for p in [
            Point::new(0.0, 0.0),
            Point::new(31.0, 5.5),
            Point::new(-8.0, 40.0),
        ] {
            let back = inv.apply(&h.apply(&p).unwrap()).unwrap();
            assert!((back - p).norm() < 1e-9);
        }
    }

    #[test]
    fn point_at_infinity_is_an_error() {
        let h = Homography::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0)).unwrap();
        assert!(matches!(
            h.apply(&Point::new(-1.0, 0.0)),
            Err(GeometryError::PointAtInfinity(_))
        ));
    }

    #[test]
    fn singular_matrix_rejected() {
        assert!(Homography::new(Matrix3::zeros()).is_err());
    }

    #[test]
    fn dlt_recovers_exact_homography() {
        let h = sample_h();
        let src: Vec<Point> = (0..12)
            .map(|i| Point::new((i * 7 % 31) as f64, (i * 13 % 29) as f64))
            .collect();
        let dst: Vec<Point> = src.iter().map(|p| h.apply(p).unwrap()).collect();
        let est = Homography::new(dlt_homography(&src, &dst, None).unwrap()).unwrap();
        assert!(est.corner_error(&h, 32, 32).unwrap() < 1e-8);
    }
}
