use rand::Rng;

use super::{HyKeyConfig, ModelError, Result};
use crate::hsidata::ValidityMask;
use crate::tensor::{Tape, Tensor, Var};

/// Detections with sub-pixel `(x, y)` locations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Keypoints {
    pub points: Vec<[f32; 2]>,
    pub scores: Vec<f32>,
}

/// Training-time detections recorded on a tape.
#[derive(Clone, Debug)]
pub struct TrainKeypoints {
    /// `[N, 2]` refined `(x, y)`, differentiable w.r.t. the score map.
    pub points: Var,
    /// `[N, 1]` score-map values at the refined points.
    pub scores: Var,
    /// The first `detected` rows are local maxima, the rest random draws.
    pub detected: usize,
    /// Integer window centres `(x, y)`.
    pub centers: Vec<[usize; 2]>,
}

impl TrainKeypoints {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Strict local maxima over `(2r+1)^2` windows that fit inside the map,
/// sorted by score (descending, ties by row-major index). A pixel survives
/// when every other window pixel is lower, or equal with a larger index.
fn local_maxima(score: &[f32], h: usize, w: usize, r: usize, threshold: Option<f32>) -> Vec<usize> {
    let mut out = Vec::new();
    if h < 2 * r + 1 || w < 2 * r + 1 {
        return out;
    }
    for y in r..h - r {
        'px: for x in r..w - r {
            let i = y * w + x;
            let s = score[i];
            if threshold.is_some_and(|t| !(s > t)) {
                continue;
            }
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    let j = yy * w + xx;
                    if j != i && (score[j] > s || (score[j] == s && j < i)) {
                        continue 'px;
                    }
                }
            }
            out.push(i);
        }
    }
    out.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    out
}

/// Soft-argmax offset `(dx, dy)` of the window around `(cx, cy)`: the
/// expectation of the window offsets under `softmax(score / temperature)`.
pub fn refine_window(
    score: &[f32],
    w: usize,
    cx: usize,
    cy: usize,
    r: usize,
    temperature: f32,
) -> [f32; 2] {
    let ri = r as isize;
    let mut logits = Vec::with_capacity((2 * r + 1).pow(2));
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let j = (cy as isize + dy) as usize * w + (cx as isize + dx) as usize;
            logits.push((score[j] / temperature, dx as f32, dy as f32));
        }
    }
    let max = logits.iter().map(|l| l.0).fold(f32::NEG_INFINITY, f32::max);
    let (mut z, mut ex, mut ey) = (0f32, 0f32, 0f32);
    for (l, dx, dy) in logits {
        let e = (l - max).exp();
        z += e;
        ex += e * dx;
        ey += e * dy;
    }
    [ex / z, ey / z]
}

fn bilinear(score: &[f32], h: usize, w: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (lx, ly) = (x - x0 as f32, y - y0 as f32);
    let top = score[y0 * w + x0] * (1.0 - lx) + score[y0 * w + x1] * lx;
    let bot = score[y1 * w + x0] * (1.0 - lx) + score[y1 * w + x1] * lx;
    top * (1.0 - ly) + bot * ly
}

/// Evaluation-mode detection on an `[H, W]` score map: thresholded strict
/// local maxima, top `max_keypoints`, soft-argmax refinement.
pub fn detect_eval(
    score_map: &Tensor,
    config: &HyKeyConfig,
    max_keypoints: usize,
) -> Result<Keypoints> {
    if score_map.ndim() != 2 {
        return Err(ModelError::UnsupportedInput(format!(
            "score map {:?}",
            score_map.shape()
        )));
    }
    if !score_map.is_finite() {
        return Err(ModelError::UnsupportedInput("non-finite score map".into()));
    }
    let (h, w) = (score_map.shape()[0], score_map.shape()[1]);
    let s = score_map.data();
    let r = config.dkd_radius;
    let mut kp = Keypoints::default();
    for i in local_maxima(s, h, w, r, Some(config.score_threshold))
        .into_iter()
        .take(max_keypoints)
    {
        let (cx, cy) = (i % w, i / w);
        let [dx, dy] = refine_window(s, w, cx, cy, r, config.dkd_temperature);
        let p = [cx as f32 + dx, cy as f32 + dy];
        kp.scores.push(bilinear(s, h, w, p[0], p[1]));
        kp.points.push(p);
    }
    Ok(kp)
}

/// Training-mode detection on a `[1, H, W]` score map: the top
/// `train_detected` local maxima plus `train_random` uniform draws over
/// valid pixels away from the border, all refined differentiably.
pub fn detect_train<R: Rng>(
    tape: &mut Tape,
    score: Var,
    config: &HyKeyConfig,
    rng: &mut R,
    mask: Option<&ValidityMask>,
) -> Result<TrainKeypoints> {
    let shape = tape.shape(score).to_vec();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(ModelError::UnsupportedInput(format!("score map {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let r = config.dkd_radius;
    let values = tape.value(score).data();
    let valid = |i: usize| mask.is_none_or(|m| m.data[i]);
    let mut centers: Vec<[usize; 2]> = local_maxima(values, h, w, r, None)
        .into_iter()
        .filter(|&i| valid(i))
        .take(config.train_detected)
        .map(|i| [i % w, i / w])
        .collect();
    let detected = centers.len();
    let b = config.random_border.max(r);
    if h > 2 * b && w > 2 * b {
        let mut drawn = 0;
        let mut tries = 0;
        while drawn < config.train_random && tries < 20 * config.train_random {
            tries += 1;
            let (x, y) = (rng.random_range(b..w - b), rng.random_range(b..h - b));
            if valid(y * w + x) {
                centers.push([x, y]);
                drawn += 1;
            }
        }
    }
    if centers.is_empty() {
        return Err(ModelError::UnsupportedInput(format!(
            "no keypoints on a {h}x{w} map"
        )));
    }
    let n = centers.len();
    let k = (2 * r + 1).pow(2);
    let ri = r as isize;
    let mut indices = Vec::with_capacity(n * k);
    let mut offsets = Vec::with_capacity(2 * k);
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            offsets.extend([dx as f32, dy as f32]);
        }
    }
    for &[cx, cy] in &centers {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                indices.push((cy as isize + dy) as usize * w + (cx as isize + dx) as usize);
            }
        }
    }
    let windows = tape.gather(score, indices, &[n, k])?;
    let logits = tape.scale(windows, 1.0 / config.dkd_temperature)?;
    let weights = tape.softmax(logits, 1)?;
    let offsets = tape.constant(Tensor::new([k, 2], offsets)?);
    let shift = tape.matmul(weights, offsets)?;
    let base = tape.constant(Tensor::new(
        [n, 2],
        centers
            .iter()
            .flat_map(|c| [c[0] as f32, c[1] as f32])
            .collect(),
    )?);
    let points = tape.add(base, shift)?;
    let scores = tape.grid_sample2d(score, points)?;
    Ok(TrainKeypoints {
        points,
        scores,
        detected,
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> HyKeyConfig {
        HyKeyConfig::default()
    }

    #[test]
    fn isolated_peak_refines_to_centre() {
        let mut s = vec![0.2f32; 11 * 11];
        s[5 * 11 + 5] = 0.9;
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            s[((5 + dy) * 11 + 5 + dx) as usize] = 0.5;
        }
        let kp = detect_eval(&Tensor::new([11, 11], s).unwrap(), &cfg(), 1024).unwrap();
        assert_eq!(kp.points, vec![[5.0, 5.0]]);
        assert!((kp.scores[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn equal_neighbours_keep_lower_index() {
        let mut s = vec![0.0f32; 9 * 9];
        s[4 * 9 + 4] = 0.8;
        s[4 * 9 + 5] = 0.8;
        let m = local_maxima(&s, 9, 9, 2, Some(0.1));
        assert_eq!(m, vec![4 * 9 + 4]);
    }

    #[test]
    fn ramp_matches_brute_force_expectation() {
        let w = 7;
        let s: Vec<f32> = (0..w * w)
            .map(|i| 0.1 * (i % w) as f32 + 0.05 * (i / w) as f32)
            .collect();
        let t = 0.05f32;
        let got = refine_window(&s, w, 3, 3, 2, t);
        let (mut z, mut ex, mut ey) = (0f64, 0f64, 0f64);
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let v = s[((3 + dy) * w as i32 + 3 + dx) as usize] as f64;
                let e = (v / t as f64).exp();
                z += e;
                ex += e * dx as f64;
                ey += e * dy as f64;
            }
        }
        assert!((got[0] as f64 - ex / z).abs() < 1e-5);
        assert!((got[1] as f64 - ey / z).abs() < 1e-5);
        // sharpening pushes the estimate towards the max corner (2, 2)
        let sharp = refine_window(&s, w, 3, 3, 2, 0.002);
        assert!(sharp[0] > 1.99 && sharp[1] > 1.9);
    }

    #[test]
    fn threshold_and_cap() {
        let mut s = vec![0.05f32; 20 * 20];
        for (k, i) in [(5, 5), (5, 14), (14, 5), (14, 14)].iter().enumerate() {
            s[i.0 * 20 + i.1] = 0.5 + 0.1 * k as f32;
        }
        let map = Tensor::new([20, 20], s).unwrap();
        assert_eq!(detect_eval(&map, &cfg(), 1024).unwrap().points.len(), 4);
        let top2 = detect_eval(&map, &cfg(), 2).unwrap();
        assert_eq!(top2.points, vec![[14.0, 14.0], [5.0, 14.0]]);
        let flat = Tensor::full([20, 20], 0.05);
        assert!(detect_eval(&flat, &cfg(), 1024).unwrap().points.is_empty());
    }

    #[test]
    fn train_detection_counts_and_border() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Tensor::from_fn([1, 32, 32], |_| rng.random::<f32>());
        let mut tape = Tape::new();
        let v = tape.leaf(s);
        let kp = detect_train(&mut tape, v, &cfg(), &mut rng, None).unwrap();
        assert_eq!(kp.len(), kp.detected + 400);
        assert!(kp.detected > 0);
        for c in &kp.centers[kp.detected..] {
            assert!((4..28).contains(&c[0]) && (4..28).contains(&c[1]));
        }
        assert_eq!(tape.shape(kp.points), &[kp.len(), 2]);
        assert_eq!(tape.shape(kp.scores), &[kp.len(), 1]);
    }

    #[test]
    fn soft_argmax_gradient_sign_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = cfg();
        let (mut agree, mut total) = (0, 0);
        for _ in 0..40 {
            let s = Tensor::from_fn([1, 16, 16], |_| rng.random::<f32>());
            let mut tape = Tape::new();
            let v = tape.leaf(s.clone());
            let kp = detect_train(&mut tape, v, &c, &mut rng, None).unwrap();
            let xs = tape.narrow(kp.points, 1, 0, 1).unwrap();
            let sum = tape.sum(xs).unwrap();
            let g = tape.backward(sum).unwrap();
            let grad = g.get(v).unwrap().clone();
            let eps = 1e-2f32;
            for _ in 0..5 {
                let i = rng.random_range(0..256);
                if grad.data()[i].abs() < 1e-3 {
                    continue;
                }
                let (px, py) = ((i % 16) as isize, (i / 16) as isize);
                let eval = |delta: f32| {
                    let mut d = s.data().to_vec();
                    d[i] += delta;
                    kp.centers
                        .iter()
                        .filter(|cc| {
                            (cc[0] as isize - px).abs() <= 2 && (cc[1] as isize - py).abs() <= 2
                        })
                        .map(|cc| {
                            refine_window(&d, 16, cc[0], cc[1], 2, c.dkd_temperature)[0] as f64
                        })
                        .sum::<f64>()
                };
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps as f64);
                total += 1;
                if fd.signum() as f32 == grad.data()[i].signum() {
                    agree += 1;
                }
            }
        }
        assert!(total > 50);
        assert!(agree as f64 >= 0.99 * total as f64, "{agree}/{total}");
    }

    proptest! {
        #[test]
        fn eval_keypoints_are_strict_local_maxima(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = (12, 15);
            let s: Vec<f32> = (0..h * w).map(|_| (rng.random_range(0..20) as f32) / 20.0).collect();
            for i in local_maxima(&s, h, w, 2, Some(0.1)) {
                let (x, y) = (i % w, i / w);
                for yy in y - 1..=y + 1 {
                    for xx in x - 1..=x + 1 {
                        prop_assert!(s[yy * w + xx] <= s[i]);
                    }
                }
            }
        }
    }
}
