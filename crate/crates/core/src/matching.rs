//! Descriptor similarity and mutual nearest neighbour matching.

use thiserror::Error;

use crate::geometry::{Correspondence, CorrespondenceSet, Point};
use crate::tensor::{gemm_strided, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("descriptor shapes {0:?} and {1:?} are incompatible")]
    DimensionMismatch(Vec<usize>, Vec<usize>),
    #[error("descriptor row {row} of set {set} has norm {norm}, expected 1")]
    NotUnitNorm { set: usize, row: usize, norm: f32 },
}

/// Tolerance on descriptor norms accepted by [`similarity`].
pub const UNIT_NORM_TOLERANCE: f32 = 1e-3;

/// Row-major `[rows, cols]` cosine similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl SimilarityMatrix {
    /// Builds a matrix from raw values; entries outside `[-1, 1]` (with a
    /// small rounding slack) are clamped.
    pub fn new(rows: usize, cols: usize, mut data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "similarity data length");
        for v in &mut data {
            *v = v.clamp(-1.0 - 1e-6, 1.0 + 1e-6);
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// A matched index pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub similarity: f32,
}

fn check_unit_rows(d: &Tensor, set: usize) -> Result<(), MatchingError> {
    let dim = d.shape()[1];
    for (row, v) in d.data().chunks(dim.max(1)).enumerate() {
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(MatchingError::NotUnitNorm { set, row, norm });
        }
    }
    Ok(())
}

/// `d0 · d1ᵀ` for unit-norm descriptor rows `[N0, D]` and `[N1, D]`.
pub fn similarity(d0: &Tensor, d1: &Tensor) -> Result<SimilarityMatrix, MatchingError> {
    let (s0, s1) = (d0.shape(), d1.shape());
    if s0.len() != 2 || s1.len() != 2 || s0[1] != s1[1] {
        return Err(MatchingError::DimensionMismatch(s0.to_vec(), s1.to_vec()));
    }
    check_unit_rows(d0, 0)?;
    check_unit_rows(d1, 1)?;
    let (n0, n1, dim) = (s0[0], s1[0], s0[1]);
    let mut data = vec![0.0; n0 * n1];
    if dim > 0 {
        gemm_strided(
            n0,
            dim,
            n1,
            d0.data(),
            [dim, 1],
            d1.data(),
            [1, dim],
            &mut data,
            [n1, 1],
            false,
        );
    }
    Ok(SimilarityMatrix::new(n0, n1, data))
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: impl Iterator<Item = f32>) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (k, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Mutual nearest neighbours: `(i, j)` survives when `j` is the best column
/// of row `i`, `i` the best row of column `j`, and the similarity reaches
/// `min_similarity` if one is given. Output is sorted by `i`.
pub fn mnn_match(m: &SimilarityMatrix, min_similarity: Option<f32>) -> Vec<Match> {
    if m.rows == 0 || m.cols == 0 {
        return vec![];
    }
    let col_best: Vec<usize> = (0..m.cols)
        .map(|j| argmax((0..m.rows).map(|i| m.get(i, j))).unwrap_or(0))
        .collect();
    (0..m.rows)
        .filter_map(|i| {
            let j = argmax(m.data[i * m.cols..(i + 1) * m.cols].iter().copied())?;
            let s = m.get(i, j);
            (col_best[j] == i && min_similarity.is_none_or(|t| s >= t)).then_some(Match {
                i,
                j,
                similarity: s,
            })
        })
        .collect()
}

/// Attaches keypoint coordinates to index matches.
pub fn to_correspondences(
    matches: &[Match],
    kpts0: &[[f32; 2]],
    kpts1: &[[f32; 2]],
) -> CorrespondenceSet {
    matches
        .iter()
        .map(|m| {
            let (a, b) = (kpts0[m.i], kpts1[m.j]);
            Correspondence::new(
                Point::new(a[0] as f64, a[1] as f64),
                Point::new(b[0] as f64, b[1] as f64),
                m.similarity as f64,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(m: &[Match]) -> Vec<(usize, usize)> {
        m.iter().map(|m| (m.i, m.j)).collect()
    }

    fn mat(rows: &[&[f32]]) -> SimilarityMatrix {
        SimilarityMatrix::new(rows.len(), rows[0].len(), rows.concat())
    }

    #[test]
    fn trivial_similarities() {
        let a = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let s = similarity(&a, &a).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn similarity_matches_dot_product_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let unit = |rng: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize| {
            let mut v: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for row in v.chunks_mut(d) {
                let n = row.iter().map(|x| x * x).sum::<f32>().sqrt();
                row.iter_mut().for_each(|x| *x /= n);
            }
            Tensor::new([n, d], v).unwrap()
        };
        let (a, b) = (unit(&mut rng, 7, 16), unit(&mut rng, 5, 16));
        let s = similarity(&a, &b).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                let dot: f64 = (0..16)
                    .map(|k| a.data()[i * 16 + k] as f64 * b.data()[j * 16 + k] as f64)
                    .sum();
                assert!((s.get(i, j) as f64 - dot).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes_and_norms() {
        let a = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new([1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            similarity(&a, &b),
            Err(MatchingError::DimensionMismatch(..))
        ));
        let c = Tensor::new([1, 2], vec![2.0, 0.0]).unwrap();
        assert!(matches!(
            similarity(&a, &c),
            Err(MatchingError::NotUnitNorm { set: 1, .. })
        ));
    }

    #[test]
    fn mnn_examples() {
        assert_eq!(
            pairs(&mnn_match(&mat(&[&[0.9, 0.1], &[0.2, 0.8]]), None)),
            vec![(0, 0), (1, 1)]
        );
        assert_eq!(
            pairs(&mnn_match(&mat(&[&[0.9, 0.95], &[0.2, 0.8]]), None)),
            vec![(0, 1)]
        );
        assert!(mnn_match(&SimilarityMatrix::new(0, 3, vec![]), None).is_empty());
        assert_eq!(
            pairs(&mnn_match(&mat(&[&[0.9, 0.1], &[0.2, 0.8]]), Some(0.85))),
            vec![(0, 0)]
        );
    }

    #[test]
    fn ties_prefer_lowest_index() {
        assert_eq!(
            pairs(&mnn_match(&mat(&[&[0.5, 0.5], &[0.5, 0.5]]), None)),
            vec![(0, 0)]
        );
    }

    #[test]
    fn diagonal_dominant_matches_fully() {
        let n = 9;
        let data = (0..n * n)
            .map(|k| if k / n == k % n { 0.9 } else { 0.1 })
            .collect();
        let m = mnn_match(&SimilarityMatrix::new(n, n, data), None);
        assert_eq!(pairs(&m), (0..n).map(|i| (i, i)).collect::<Vec<_>>());
    }

    fn matrix() -> impl Strategy<Value = SimilarityMatrix> {
        (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
            // Coarse grid of values so ties actually occur.
            prop::collection::vec((-4i32..=4).prop_map(|v| v as f32 / 4.0), r * c)
                .prop_map(move |d| SimilarityMatrix::new(r, c, d))
        })
    }

    proptest! {
        #[test]
        fn partial_injection(m in matrix()) {
            let out = mnn_match(&m, None);
            let mut is: Vec<_> = out.iter().map(|m| m.i).collect();
            let mut js: Vec<_> = out.iter().map(|m| m.j).collect();
            is.dedup();
            js.sort();
            js.dedup();
            prop_assert_eq!(is.len(), out.len());
            prop_assert_eq!(js.len(), out.len());
        }

        #[test]
        fn transpose_symmetry(m in matrix()) {
            let mut a: Vec<_> = mnn_match(&m, None).iter().map(|m| (m.i, m.j)).collect();
            let mut b: Vec<_> = mnn_match(&m.transpose(), None).iter().map(|m| (m.j, m.i)).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn extra_non_maximal_column_keeps_matches(m in matrix(), slack in 0.01f32..0.5) {
            let before = pairs(&mnn_match(&m, None));
            let mut data = Vec::new();
            for i in 0..m.rows() {
                let row = &m.data()[i * m.cols()..(i + 1) * m.cols()];
                data.extend_from_slice(row);
                data.push(row.iter().copied().fold(f32::NEG_INFINITY, f32::max) - slack);
            }
            let grown = SimilarityMatrix::new(m.rows(), m.cols() + 1, data);
            let after = pairs(&mnn_match(&grown, None));
            for p in before {
                prop_assert!(after.contains(&p));
            }
        }
    }
}
