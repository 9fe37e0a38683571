//! The five training objectives and their weighted sum.
//!
//! Terms operate on tape values produced by the network and by training-mode
//! keypoint detection. A term with nothing to supervise (no correspondences,
//! no labels, a degenerate epipolar geometry) returns `Ok(None)`; the total
//! treats it as zero and records it in [`LossBreakdown::missing`].

use serde::{Deserialize, Serialize};

use crate::geometry::{Homography, NormalizedFrame, Point, RelativePose};
use crate::model::{HyKeyConfig, TrainKeypoints};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Multipliers of the five terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pk: f32,
    pub rp: f32,
    pub rel: f32,
    pub desc: f32,
    pub epi: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pk: 0.5,
            rp: 1.0,
            rel: 1.0,
            desc: 5.0,
            epi: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("loss weight {name} = {v} must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f32); 5] {
        [
            ("pk", self.pk),
            ("rp", self.rp),
            ("rel", self.rel),
            ("desc", self.desc),
            ("epi", self.epi),
        ]
    }
}

/// Constants of the individual terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Softmax temperature on cosine similarities for the descriptor and
    /// reliability terms.
    pub desc_temperature: f32,
    /// Softmax temperature of the soft assignment in the epipolar term.
    pub epi_temperature: f32,
    /// Keypoint score at which the confidence weight is one half.
    pub score_threshold: f32,
    /// Width of the confidence sigmoid.
    pub weight_scale: f32,
    /// Window radius and temperature of the peakiness term.
    pub pk_radius: usize,
    pub pk_temperature: f32,
    /// Re-detection radius (px) of the reprojection term.
    pub rp_radius: f32,
    /// Radius (px) for ground-truth descriptor labels.
    pub label_radius: f32,
    pub rp_huber: f32,
    /// Huber delta on the Sampson error, in normalised px².
    pub epi_huber: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            desc_temperature: 0.02,
            epi_temperature: 0.02,
            score_threshold: 0.1,
            weight_scale: 0.1,
            pk_radius: 2,
            pk_temperature: 0.1,
            rp_radius: 5.0,
            label_radius: 3.0,
            rp_huber: 1.0,
            epi_huber: 1.0,
        }
    }
}

impl LossConfig {
    /// Defaults with the score threshold and window softmax taken from the
    /// detector settings.
    pub fn for_model(model: &HyKeyConfig) -> Self {
        Self {
            score_threshold: model.score_threshold,
            pk_radius: model.dkd_radius,
            pk_temperature: model.dkd_temperature,
            ..Self::default()
        }
    }
}

const BCE_EPS: f32 = 1e-6;

fn invalid(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}

/// Bilinearly samples `[D, H, W]` descriptors at `[N, 2]` points and
/// normalises each row.
pub fn sample_descriptors(tape: &mut Tape, descriptors: Var, points: Var) -> Result<Var> {
    let d = tape.grid_sample2d(descriptors, points)?;
    tape.l2_normalize(d, 1)
}

/// Confidence weight `sigmoid((s - t_sc) / scale)`, detached so that it only
/// reweights a term instead of pushing scores down.
pub fn confidence_weight(tape: &mut Tape, scores: Var, config: &LossConfig) -> Result<Var> {
    let s = tape.detach(scores);
    let s = tape.add_scalar(s, -config.score_threshold)?;
    let s = tape.scale(s, 1.0 / config.weight_scale)?;
    tape.sigmoid(s)
}

fn point_rows(tape: &Tape, points: Var) -> Vec<[f32; 2]> {
    tape.value(points)
        .data()
        .chunks_exact(2)
        .map(|c| [c[0], c[1]])
        .collect()
}

fn row_indices(rows: impl IntoIterator<Item = usize>, width: usize) -> Vec<usize> {
    rows.into_iter()
        .flat_map(|r| (0..width).map(move |c| r * width + c))
        .collect()
}

/// Applies a homography to `[N, 2]` points on the tape.
pub fn project_points(tape: &mut Tape, points: Var, h: &Homography) -> Result<Var> {
    let n = tape.shape(points)[0];
    let ones = tape.constant(Tensor::full([n, 1], 1.0));
    let homog = tape.concat(&[points, ones], 1)?;
    let m = h.matrix();
    let ht = tape.constant(Tensor::from_fn([3, 3], |k| m[(k % 3, k / 3)] as f32));
    let p = tape.matmul(homog, ht)?;
    let xy = tape.narrow(p, 1, 0, 2)?;
    let w = tape.narrow(p, 1, 2, 1)?;
    tape.div(xy, w)
}

fn project(h: &Homography, p: [f32; 2]) -> Option<[f64; 2]> {
    h.apply(&Point::new(p[0] as f64, p[1] as f64))
        .ok()
        .map(|q| [q.x, q.y])
}

/// Index and distance of the closest target; ties go to the lowest index.
fn nearest(p: [f64; 2], targets: &[[f32; 2]]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, t) in targets.iter().enumerate() {
        let d = (p[0] - t[0] as f64).hypot(p[1] - t[1] as f64);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((j, d));
        }
    }
    best
}

/// Ground-truth pairs `(i, j)`: `H01 p0_i` and `p1_j` are mutual nearest
/// neighbours (the reverse direction through `H01⁻¹`) within `radius` px.
pub fn label_correspondences(
    pts0: &[[f32; 2]],
    pts1: &[[f32; 2]],
    h01: &Homography,
    radius: f32,
) -> Vec<(usize, usize)> {
    let Ok(h10) = h01.inverse() else {
        return vec![];
    };
    let radius = radius as f64;
    let back: Vec<Option<usize>> = pts1
        .iter()
        .map(|&p| {
            project(&h10, p)
                .and_then(|q| nearest(q, pts0))
                .filter(|&(_, d)| d <= radius)
                .map(|(i, _)| i)
        })
        .collect();
    pts0.iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let (j, d) = nearest(project(h01, p)?, pts1)?;
            (d <= radius && back[j] == Some(i)).then_some((i, j))
        })
        .collect()
}

/// Peakiness: expected distance of the window softmax from its centre,
/// weighted by keypoint confidence, averaged over detected keypoints whose
/// window fits inside the map.
pub fn loss_pk(
    tape: &mut Tape,
    score_map: Var,
    kp: &TrainKeypoints,
    config: &LossConfig,
) -> Result<Option<Var>> {
    let shape = tape.shape(score_map).to_vec();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let r = config.pk_radius;
    let kept: Vec<usize> = (0..kp.detected)
        .filter(|&k| {
            let [x, y] = kp.centers[k];
            x >= r && y >= r && x + r < w && y + r < h
        })
        .collect();
    if kept.is_empty() {
        return Ok(None);
    }
    let ri = r as isize;
    let side = 2 * r + 1;
    let mut norms = Vec::with_capacity(side * side);
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            norms.push(((dx * dx + dy * dy) as f32).sqrt());
        }
    }
    let mut indices = Vec::with_capacity(kept.len() * side * side);
    for &k in &kept {
        let [x, y] = kp.centers[k];
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                indices.push((y as isize + dy) as usize * w + (x as isize + dx) as usize);
            }
        }
    }
    let m = kept.len();
    let windows = tape.gather(score_map, indices, &[m, side * side])?;
    let logits = tape.scale(windows, 1.0 / config.pk_temperature)?;
    let p = tape.softmax(logits, 1)?;
    let norms = tape.constant(Tensor::new([side * side, 1], norms)?);
    let spread = tape.matmul(p, norms)?;
    let spread = tape.reshape(spread, &[m])?;
    let conf = confidence_weight(tape, kp.scores, config)?;
    let conf = tape.gather(conf, kept, &[m])?;
    let weighted = tape.mul(spread, conf)?;
    tape.mean(weighted).map(Some)
}

/// One direction of the reprojection term: keypoints of view a projected by
/// `h` and paired with the closest detection of view b within the radius.
fn reprojection_direction(
    tape: &mut Tape,
    a: (&TrainKeypoints, Var),
    b: (&TrainKeypoints, Var),
    h: &Homography,
    config: &LossConfig,
) -> Result<Option<Var>> {
    let (kpa, ca) = a;
    let (kpb, cb) = b;
    if kpa.detected == 0 || kpb.detected == 0 {
        return Ok(None);
    }
    let pa = tape.narrow(kpa.points, 0, 0, kpa.detected)?;
    let pb = tape.narrow(kpb.points, 0, 0, kpb.detected)?;
    let proj = project_points(tape, pa, h)?;
    let targets = point_rows(tape, pb);
    let pairs: Vec<(usize, usize)> = point_rows(tape, proj)
        .into_iter()
        .enumerate()
        .filter(|(_, p)| p[0].is_finite() && p[1].is_finite())
        .filter_map(|(i, p)| {
            let (j, d) = nearest([p[0] as f64, p[1] as f64], &targets)?;
            (d <= config.rp_radius as f64).then_some((i, j))
        })
        .collect();
    if pairs.is_empty() {
        return Ok(None);
    }
    let l = pairs.len();
    let from = tape.gather(proj, row_indices(pairs.iter().map(|p| p.0), 2), &[l, 2])?;
    let to = tape.gather(pb, row_indices(pairs.iter().map(|p| p.1), 2), &[l, 2])?;
    let e = tape.sub(from, to)?;
    let e2 = tape.square(e)?;
    let sq = tape.sum_axis(e2, 1, false)?;
    let sq = tape.add_scalar(sq, 1e-12)?;
    let dist = tape.sqrt(sq)?;
    let hub = tape.huber(dist, config.rp_huber)?;
    let wa = tape.gather(ca, pairs.iter().map(|p| p.0).collect(), &[l])?;
    let wb = tape.gather(cb, pairs.iter().map(|p| p.1).collect(), &[l])?;
    let w = tape.mul(wa, wb)?;
    let weighted = tape.mul(hub, w)?;
    tape.mean(weighted).map(Some)
}

/// Reprojection: Huber loss on the distance between projected and
/// re-detected keypoints, weighted by both confidences, averaged over the
/// two directions of the pair.
pub fn loss_rp(
    tape: &mut Tape,
    kp0: &TrainKeypoints,
    kp1: &TrainKeypoints,
    h01: &Homography,
    config: &LossConfig,
) -> Result<Option<Var>> {
    let h10 = h01
        .inverse()
        .map_err(|e| invalid("loss_rp", e.to_string()))?;
    let c0 = confidence_weight(tape, kp0.scores, config)?;
    let c1 = confidence_weight(tape, kp1.scores, config)?;
    let fwd = reprojection_direction(tape, (kp0, c0), (kp1, c1), h01, config)?;
    let bwd = reprojection_direction(tape, (kp1, c1), (kp0, c0), &h10, config)?;
    match (fwd, bwd) {
        (Some(a), Some(b)) => {
            let s = tape.add(a, b)?;
            tape.scale(s, 0.5).map(Some)
        }
        (a, b) => Ok(a.or(b)),
    }
}

/// Binary cross-entropy of scores `s` (`[L]`) against constant targets.
fn bce(tape: &mut Tape, s: Var, target: Vec<f32>) -> Result<Var> {
    let l = target.len();
    let not_target = target.iter().map(|r| 1.0 - r).collect();
    let r = tape.constant(Tensor::new([l], target)?);
    let nr = tape.constant(Tensor::new([l], not_target)?);
    let ls = tape.add_scalar(s, BCE_EPS)?;
    let ls = tape.log(ls)?;
    let ns = tape.neg(s)?;
    let l1s = tape.add_scalar(ns, 1.0 + BCE_EPS)?;
    let l1s = tape.log(l1s)?;
    let a = tape.mul(r, ls)?;
    let b = tape.mul(nr, l1s)?;
    let sum = tape.add(a, b)?;
    let m = tape.mean(sum)?;
    tape.neg(m)
}

/// Reliability: binary cross-entropy between each labelled keypoint's score
/// and its soft matchability, the (detached) softmax probability its
/// similarity row (view 0) or column (view 1) puts on the true partner.
pub fn loss_rel(
    tape: &mut Tape,
    scores0: Var,
    scores1: Var,
    similarity: Var,
    labels: &[(usize, usize)],
    config: &LossConfig,
) -> Result<Option<Var>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let cols = tape.shape(similarity)[1];
    let l = labels.len();
    let sim = tape.detach(similarity);
    let logits = tape.scale(sim, 1.0 / config.desc_temperature)?;
    let rows_p = tape.softmax(logits, 1)?;
    let cols_p = tape.softmax(logits, 0)?;
    let at = |tape: &Tape, p: Var| -> Vec<f32> {
        labels
            .iter()
            .map(|&(i, j)| tape.value(p).data()[i * cols + j])
            .collect()
    };
    let r0 = at(tape, rows_p);
    let r1 = at(tape, cols_p);
    let s0 = tape.gather(scores0, labels.iter().map(|p| p.0).collect(), &[l])?;
    let s1 = tape.gather(scores1, labels.iter().map(|p| p.1).collect(), &[l])?;
    let a = bce(tape, s0, r0)?;
    let b = bce(tape, s1, r1)?;
    let s = tape.add(a, b)?;
    tape.scale(s, 0.5).map(Some)
}

/// Descriptor term: symmetric softmax cross-entropy of `similarity / t` with
/// the labelled partners, over labelled rows and columns only.
pub fn loss_desc(
    tape: &mut Tape,
    similarity: Var,
    labels: &[(usize, usize)],
    config: &LossConfig,
) -> Result<Option<Var>> {
    if labels.is_empty() {
        return Ok(None);
    }
    let cols = tape.shape(similarity)[1];
    let l = labels.len();
    let idx: Vec<usize> = labels.iter().map(|&(i, j)| i * cols + j).collect();
    let logits = tape.scale(similarity, 1.0 / config.desc_temperature)?;
    let lr = tape.log_softmax(logits, 1)?;
    let lc = tape.log_softmax(logits, 0)?;
    let a = tape.gather(lr, idx.clone(), &[l])?;
    let b = tape.gather(lc, idx, &[l])?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    tape.scale(m, -0.5).map(Some)
}

/// Maps pixel points `[N, 2]` to normalised pixels `f̄ K⁻¹ x` on the tape.
fn normalise_points(
    tape: &mut Tape,
    points: Var,
    k: &crate::geometry::Intrinsics,
    focal: f64,
) -> Result<Var> {
    let scale = tape.constant(Tensor::new(
        [1, 2],
        vec![(focal / k.fx) as f32, (focal / k.fy) as f32],
    )?);
    let shift = tape.constant(Tensor::new(
        [1, 2],
        vec![(-focal * k.cx / k.fx) as f32, (-focal * k.cy / k.fy) as f32],
    )?);
    let p = tape.mul(points, scale)?;
    tape.add(p, shift)
}

/// Sampson errors `[N0, N2]` between every pair of (already normalised)
/// points under `f`.
pub fn sampson_matrix(
    tape: &mut Tape,
    x0: Var,
    x2: Var,
    f: &nalgebra::Matrix3<f64>,
) -> Result<Var> {
    let (n0, n2) = (tape.shape(x0)[0], tape.shape(x2)[0]);
    let ones0 = tape.constant(Tensor::full([n0, 1], 1.0));
    let ones2 = tape.constant(Tensor::full([n2, 1], 1.0));
    let h0 = tape.concat(&[x0, ones0], 1)?;
    let h2 = tape.concat(&[x2, ones2], 1)?;
    // Sampson error is invariant to the scale of F; pick one that keeps the
    // denominators near 1 so f32 stays well conditioned.
    let mut typical = 0.0;
    for (h, n, transpose) in [(h0, n0, false), (h2, n2, true)] {
        for p in tape.value(h).data().chunks_exact(3) {
            let v = nalgebra::Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            let l = if transpose { f.transpose() * v } else { f * v };
            typical += (l.x * l.x + l.y * l.y) / n as f64;
        }
    }
    let s = if typical > 0.0 {
        (2.0 / typical).sqrt()
    } else {
        1.0
    };
    let ft = tape.constant(Tensor::from_fn([3, 3], |k| (f[(k % 3, k / 3)] * s) as f32));
    let fm = tape.constant(Tensor::from_fn([3, 3], |k| (f[(k / 3, k % 3)] * s) as f32));
    let fx0 = tape.matmul(h0, ft)?;
    let ftx2 = tape.matmul(h2, fm)?;
    let h2t = tape.transpose(h2)?;
    let alg = tape.matmul(fx0, h2t)?;
    let num = tape.square(alg)?;
    let a = tape.narrow(fx0, 1, 0, 2)?;
    let a = tape.square(a)?;
    let a = tape.sum_axis(a, 1, true)?;
    let b = tape.narrow(ftx2, 1, 0, 2)?;
    let b = tape.square(b)?;
    let b = tape.sum_axis(b, 1, true)?;
    let b = tape.transpose(b)?;
    let den = tape.add(a, b)?;
    let den = tape.add_scalar(den, 1e-12)?;
    tape.div(num, den)
}

/// Epipolar term: expected Huber-Sampson error of the soft assignment
/// `softmax(similarity / t)` between views 0 and 2, averaged over the row and
/// column directions. Points are in pixels; the error is measured in
/// normalised pixels of `frame`.
#[allow(clippy::too_many_arguments)]
pub fn loss_epi(
    tape: &mut Tape,
    pts0: Var,
    pts2: Var,
    similarity: Var,
    frame: &NormalizedFrame,
    pose: &RelativePose,
    config: &LossConfig,
) -> Result<Option<Var>> {
    let Ok(f) = frame.fundamental(pose) else {
        return Ok(None);
    };
    let (n0, n2) = (tape.shape(pts0)[0], tape.shape(pts2)[0]);
    if n0 == 0 || n2 == 0 {
        return Ok(None);
    }
    let x0 = normalise_points(tape, pts0, &frame.k0, frame.focal)?;
    let x2 = normalise_points(tape, pts2, &frame.k2, frame.focal)?;
    let s = sampson_matrix(tape, x0, x2, f.matrix())?;
    let cost = tape.huber(s, config.epi_huber)?;
    let logits = tape.scale(similarity, 1.0 / config.epi_temperature)?;
    let p = tape.softmax(logits, 1)?;
    let q = tape.softmax(logits, 0)?;
    let a = tape.mul(p, cost)?;
    let a = tape.sum(a)?;
    let a = tape.scale(a, 1.0 / n0 as f32)?;
    let b = tape.mul(q, cost)?;
    let b = tape.sum(b)?;
    let b = tape.scale(b, 1.0 / n2 as f32)?;
    let s = tape.add(a, b)?;
    tape.scale(s, 0.5).map(Some)
}

/// When the epipolar term is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpipolarSchedule {
    /// Zero weight for epochs `1..=after_epoch`, then the configured weight.
    Delayed { after_epoch: usize },
    /// Never active (the noPE variant).
    Disabled,
}

impl EpipolarSchedule {
    pub fn active(&self, epoch: usize) -> bool {
        match *self {
            EpipolarSchedule::Delayed { after_epoch } => epoch > after_epoch,
            EpipolarSchedule::Disabled => false,
        }
    }
}

impl Default for EpipolarSchedule {
    fn default() -> Self {
        EpipolarSchedule::Delayed { after_epoch: 5 }
    }
}

/// Per-term scalars.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub pk: f32,
    pub rp: f32,
    pub rel: f32,
    pub desc: f32,
    pub epi: f32,
}

/// Term values for one sample or batch, the weights in effect and the
/// weighted contributions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: TermValues,
    pub weights: LossWeights,
    pub weighted: TermValues,
    pub total: f32,
    /// Terms that had nothing to supervise and counted as zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
}

impl LossBreakdown {
    /// Weighted sum of plain values under `weights` as they stand.
    pub fn from_terms(terms: TermValues, weights: LossWeights) -> Self {
        let weighted = TermValues {
            pk: weights.pk * terms.pk,
            rp: weights.rp * terms.rp,
            rel: weights.rel * terms.rel,
            desc: weights.desc * terms.desc,
            epi: weights.epi * terms.epi,
        };
        let total = weighted.pk + weighted.rp + weighted.rel + weighted.desc + weighted.epi;
        Self {
            terms,
            weights,
            weighted,
            total,
            missing: vec![],
        }
    }

    /// Component-wise mean of several breakdowns; `missing` is the union.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f32;
        let mut out = LossBreakdown::default();
        for b in items {
            for (acc, v) in [
                (&mut out.terms.pk, b.terms.pk),
                (&mut out.terms.rp, b.terms.rp),
                (&mut out.terms.rel, b.terms.rel),
                (&mut out.terms.desc, b.terms.desc),
                (&mut out.terms.epi, b.terms.epi),
                (&mut out.weighted.pk, b.weighted.pk),
                (&mut out.weighted.rp, b.weighted.rp),
                (&mut out.weighted.rel, b.weighted.rel),
                (&mut out.weighted.desc, b.weighted.desc),
                (&mut out.weighted.epi, b.weighted.epi),
                (&mut out.total, b.total),
            ] {
                *acc += v / n;
            }
            for m in &b.missing {
                if !out.missing.contains(m) {
                    out.missing.push(m.clone());
                }
            }
        }
        if let Some(b) = items.first() {
            out.weights = b.weights;
        }
        out
    }
}

/// Term handles on a tape; `None` marks a term with nothing to supervise.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub pk: Option<Var>,
    pub rp: Option<Var>,
    pub rel: Option<Var>,
    pub desc: Option<Var>,
    pub epi: Option<Var>,
}

/// Weights after applying the epipolar schedule for `epoch` (1-based).
pub fn effective_weights(
    weights: &LossWeights,
    schedule: EpipolarSchedule,
    epoch: usize,
) -> LossWeights {
    LossWeights {
        epi: if schedule.active(epoch) {
            weights.epi
        } else {
            0.0
        },
        ..*weights
    }
}

/// Weighted sum of the terms. The epipolar term only enters when the
/// schedule has activated it; otherwise its weight is reported as zero.
pub fn total_loss(
    tape: &mut Tape,
    terms: &LossTerms,
    weights: &LossWeights,
    schedule: EpipolarSchedule,
    epoch: usize,
) -> Result<(Var, LossBreakdown)> {
    let w = effective_weights(weights, schedule, epoch);
    let entries = [
        ("pk", terms.pk, w.pk),
        ("rp", terms.rp, w.rp),
        ("rel", terms.rel, w.rel),
        ("desc", terms.desc, w.desc),
        ("epi", terms.epi, w.epi),
    ];
    let mut values = [0.0f32; 5];
    let mut missing = Vec::new();
    let mut total: Option<Var> = None;
    for (k, (name, term, weight)) in entries.into_iter().enumerate() {
        let Some(v) = term else {
            if weight > 0.0 {
                missing.push(name.to_string());
            }
            continue;
        };
        values[k] = tape.value(v).item();
        if weight == 0.0 {
            continue;
        }
        let c = tape.scale(v, weight)?;
        total = Some(match total {
            Some(t) => tape.add(t, c)?,
            None => c,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let [pk, rp, rel, desc, epi] = values;
    let mut breakdown = LossBreakdown::from_terms(
        TermValues {
            pk,
            rp,
            rel,
            desc,
            epi,
        },
        w,
    );
    breakdown.total = tape.value(total).item();
    breakdown.missing = missing;
    Ok((total, breakdown))
}
