use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::epipolar::{eight_point, sampson_distance, FundamentalMatrix};
use super::homography::{dlt_homography, Homography};
use super::{Correspondence, GeometryError, Point, Result};
use nalgebra::Vector3;

/// Settings shared by the robust estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    /// Inlier threshold in pixels (or normalised pixels for F).
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    /// Inner refits per local-optimisation round.
    pub lo_iterations: usize,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self::fundamental()
    }
}

impl RobustConfig {
    pub fn homography(threshold: f64) -> Self {
        Self {
            threshold,
            confidence: 0.999,
            max_iterations: 2000,
            lo_iterations: 5,
            seed: 0,
        }
    }

    pub fn fundamental() -> Self {
        Self {
            threshold: 1.0,
            confidence: 0.99999,
            max_iterations: 5000,
            lo_iterations: 5,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) || !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(GeometryError::EstimationFailure(format!(
                "bad robust config: threshold {} confidence {}",
                self.threshold, self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RobustHomography {
    pub homography: Homography,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub iterations: usize,
    /// Inlier counts after each accepted local-optimisation step.
    pub lo_trace: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RobustFundamental {
    pub fundamental: FundamentalMatrix,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub iterations: usize,
    pub lo_trace: Vec<usize>,
}

fn required_iterations(
    inliers: usize,
    n: usize,
    sample_size: usize,
    confidence: f64,
    cap: usize,
) -> usize {
    let w = inliers as f64 / n as f64;
    let p = w.powi(sample_size as i32);
    if p >= 1.0 - 1e-12 {
        return 1;
    }
    if p <= 0.0 {
        return cap;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p).ln();
    if k.is_finite() {
        (k.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Candidate model with its residuals and quality. Higher `score` is better.
struct Scored<M> {
    model: M,
    score: f64,
    inliers: Vec<bool>,
    count: usize,
    weights: Vec<f64>,
}

trait Model: Copy {
    const SAMPLE: usize;
    fn fit(a: &[Point], b: &[Point], w: Option<&[f64]>) -> Option<Self>;
    /// Squared residual, `None` for points the model cannot evaluate.
    fn residual2(&self, a: &Point, b: &Point) -> Option<f64>;
    /// Row scale that turns the solver's algebraic error into the residual
    /// above, to first order around `self`.
    fn row_scale(&self, _a: &Point, _b: &Point) -> f64 {
        1.0
    }
}

impl Model for Homography {
    const SAMPLE: usize = 4;

    fn fit(a: &[Point], b: &[Point], w: Option<&[f64]>) -> Option<Self> {
        Homography::new(dlt_homography(a, b, w)?).ok()
    }

    fn residual2(&self, a: &Point, b: &Point) -> Option<f64> {
        self.apply(a).ok().map(|p| (p - b).norm_squared())
    }
}

impl Model for FundamentalMatrix {
    const SAMPLE: usize = 8;

    fn fit(a: &[Point], b: &[Point], w: Option<&[f64]>) -> Option<Self> {
        eight_point(a, b, w)
    }

    fn residual2(&self, a: &Point, b: &Point) -> Option<f64> {
        sampson_distance(self, a, b).ok()
    }

    fn row_scale(&self, a: &Point, b: &Point) -> f64 {
        let m = self.matrix();
        let (x0, x1) = (Vector3::new(a.x, a.y, 1.0), Vector3::new(b.x, b.y, 1.0));
        let (fx0, ftx1) = (m * x0, m.transpose() * x1);
        let den = fx0.x * fx0.x + fx0.y * fx0.y + ftx1.x * ftx1.x + ftx1.y * ftx1.y;
        if den > 1e-18 {
            1.0 / den.sqrt()
        } else {
            0.0
        }
    }
}

/// Scoring rule: plain truncated-quadratic MSAC, or MSAC weights
/// marginalised over a small grid of noise scales.
#[derive(Clone, Copy)]
enum Scoring {
    Msac,
    Marginalised,
}

const SIGMA_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

impl Scoring {
    /// Per-match weight in [0, 1] given a squared residual.
    fn weight(self, r2: f64, thr: f64) -> f64 {
        match self {
            Scoring::Msac => (1.0 - r2 / (thr * thr)).max(0.0),
            Scoring::Marginalised => {
                SIGMA_GRID
                    .iter()
                    .map(|k| {
                        let s2 = (k * thr).powi(2);
                        (1.0 - r2 / s2).max(0.0)
                    })
                    .sum::<f64>()
                    / SIGMA_GRID.len() as f64
            }
        }
    }
}

fn score<M: Model>(model: M, a: &[Point], b: &[Point], thr: f64, scoring: Scoring) -> Scored<M> {
    let thr2 = thr * thr;
    let mut inliers = vec![false; a.len()];
    let mut weights = vec![0.0; a.len()];
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..a.len() {
        if let Some(r2) = model.residual2(&a[i], &b[i]).filter(|r| r.is_finite()) {
            if r2 < thr2 {
                inliers[i] = true;
                count += 1;
            }
            weights[i] = scoring.weight(r2, thr);
            total += weights[i];
        }
    }
    Scored {
        model,
        score: total,
        inliers,
        count,
        weights,
    }
}

fn better<M>(cand: &Scored<M>, best: &Option<Scored<M>>) -> bool {
    match best {
        None => true,
        Some(b) => cand.score > b.score,
    }
}

/// Iteratively reweighted refits seeded from `start`. A refit is accepted
/// only if it improves the score without lowering the inlier count, so the
/// count is monotone along `trace`.
fn local_optimise<M: Model>(
    start: Scored<M>,
    a: &[Point],
    b: &[Point],
    config: &RobustConfig,
    scoring: Scoring,
    trace: &mut Vec<usize>,
) -> Scored<M> {
    let mut cur = start;
    for _ in 0..config.lo_iterations {
        let w: Vec<f64> = (0..a.len())
            .map(|i| {
                if cur.inliers[i] {
                    cur.weights[i].max(1e-3) * cur.model.row_scale(&a[i], &b[i])
                } else {
                    0.0
                }
            })
            .collect();
        let Some(model) = M::fit(a, b, Some(&w)) else {
            break;
        };
        let cand = score(model, a, b, config.threshold, scoring);
        if cand.score > cur.score && cand.count >= cur.count {
            cur = cand;
            trace.push(cur.count);
        } else {
            break;
        }
    }
    // Equal-weight least-squares refit on the inlier set.
    let (ia, ib): (Vec<Point>, Vec<Point>) = (0..a.len())
        .filter(|&i| cur.inliers[i])
        .map(|i| (a[i], b[i]))
        .unzip();
    let w: Vec<f64> = ia
        .iter()
        .zip(&ib)
        .map(|(p, q)| cur.model.row_scale(p, q))
        .collect();
    if let Some(model) = M::fit(&ia, &ib, Some(&w)) {
        let cand = score(model, a, b, config.threshold, scoring);
        if cand.count >= cur.count && cand.score >= cur.score {
            cur = cand;
            trace.push(cur.count);
        }
    }
    cur
}

/// Final reweighting at the noise scale the inliers actually show: a robust
/// (MAD) estimate of sigma, then Tukey-weighted refits cut at 3 sigma. Matches
/// that sit inside the threshold but far outside the inlier noise lose their
/// pull on the model. Kept unless it sheds more than a tenth of the inliers.
fn polish<M: Model>(
    start: Scored<M>,
    a: &[Point],
    b: &[Point],
    config: &RobustConfig,
    scoring: Scoring,
) -> Scored<M> {
    let mut cur = start;
    for _ in 0..config.lo_iterations.max(1) {
        let mut r: Vec<f64> = (0..a.len())
            .filter(|&i| cur.inliers[i])
            .filter_map(|i| cur.model.residual2(&a[i], &b[i]))
            .map(f64::sqrt)
            .collect();
        if r.len() < M::SAMPLE {
            break;
        }
        r.sort_by(f64::total_cmp);
        let sigma = (1.4826 * r[r.len() / 2]).max(1e-3 * config.threshold);
        let cut2 = (3.0 * sigma).powi(2);
        let w: Vec<f64> = (0..a.len())
            .map(|i| match cur.model.residual2(&a[i], &b[i]) {
                Some(r2) if r2 < cut2 => {
                    (1.0 - r2 / cut2).powi(2) * cur.model.row_scale(&a[i], &b[i])
                }
                _ => 0.0,
            })
            .collect();
        let Some(model) = M::fit(a, b, Some(&w)) else {
            break;
        };
        let cand = score(model, a, b, config.threshold, scoring);
        if 10 * cand.count < 9 * cur.count || cand.count < M::SAMPLE {
            break;
        }
        cur = cand;
    }
    cur
}

fn run<M: Model>(
    matches: &[Correspondence],
    config: &RobustConfig,
    scoring: Scoring,
) -> Result<(Scored<M>, usize, Vec<usize>)> {
    config.validate()?;
    let n = matches.len();
    if n < M::SAMPLE {
        return Err(GeometryError::EstimationFailure(format!(
            "{n} matches, at least {} required",
            M::SAMPLE
        )));
    }
    let a: Vec<Point> = matches.iter().map(|m| m.a()).collect();
    let b: Vec<Point> = matches.iter().map(|m| m.b()).collect();
    let valid: Vec<usize> = (0..n).filter(|&i| matches[i].is_finite()).collect();
    if valid.len() < M::SAMPLE {
        return Err(GeometryError::EstimationFailure(
            "too few finite matches".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<Scored<M>> = None;
    let mut trace = Vec::new();
    let mut needed = config.max_iterations;
    let mut iter = 0;
    let mut sa = [Point::origin(); 8];
    let mut sb = [Point::origin(); 8];
    while iter < needed.min(config.max_iterations) {
        iter += 1;
        for (k, idx) in sample(&mut rng, valid.len(), M::SAMPLE).iter().enumerate() {
            sa[k] = a[valid[idx]];
            sb[k] = b[valid[idx]];
        }
        let Some(model) = M::fit(&sa[..M::SAMPLE], &sb[..M::SAMPLE], None) else {
            continue;
        };
        let cand = score(model, &a, &b, config.threshold, scoring);
        if cand.count < M::SAMPLE || !better(&cand, &best) {
            continue;
        }
        let mut lo_trace = vec![cand.count];
        let cand = local_optimise(cand, &a, &b, config, scoring, &mut lo_trace);
        if better(&cand, &best) {
            needed = required_iterations(
                cand.count,
                valid.len(),
                M::SAMPLE,
                config.confidence,
                config.max_iterations,
            );
            best = Some(cand);
            trace = lo_trace;
        }
    }
    if let Scoring::Marginalised = scoring {
        best = best.map(|s| polish(s, &a, &b, config, scoring));
    }
    match best {
        Some(b) if b.count >= M::SAMPLE => Ok((b, iter, trace)),
        _ => Err(GeometryError::EstimationFailure("no consensus".into())),
    }
}

/// LO-RANSAC homography with MSAC scoring on the forward transfer error.
pub fn estimate_homography_robust(
    matches: &[Correspondence],
    config: &RobustConfig,
) -> Result<RobustHomography> {
    let (best, iterations, lo_trace) = run::<Homography>(matches, config, Scoring::Msac)?;
    Ok(RobustHomography {
        homography: best.model,
        num_inliers: best.count,
        inliers: best.inliers,
        iterations,
        lo_trace,
    })
}

/// LO-RANSAC fundamental matrix on Sampson residuals with noise-scale
/// marginalised weights. Coordinates should already be normalised so that
/// the threshold is meaningful.
pub fn estimate_fundamental_robust(
    matches: &[Correspondence],
    config: &RobustConfig,
) -> Result<RobustFundamental> {
    let (best, iterations, lo_trace) =
        run::<FundamentalMatrix>(matches, config, Scoring::Marginalised)?;
    Ok(RobustFundamental {
        fundamental: best.model,
        num_inliers: best.count,
        inliers: best.inliers,
        iterations,
        lo_trace,
    })
}
