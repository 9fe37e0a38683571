use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::texture::{catmull_rom, HeightField, SpectralTexture};
use super::{default_wavelengths, HsiCube, HsiError, Result};
use crate::geometry::{Correspondence, Homography, Intrinsics, Point, RelativePose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    Planar,
    Epipolar,
}

/// Photometric jitter applied to the second view of a pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricRanges {
    pub gain: (f64, f64),
    pub gamma: (f64, f64),
    /// Upper bound of the additive Gaussian noise std.
    pub noise_std: f64,
    /// Range of the smooth per-band multiplier.
    pub band_gain: (f64, f64),
}

impl Default for PhotometricRanges {
    fn default() -> Self {
        Self {
            gain: (0.7, 1.3),
            gamma: (0.8, 1.2),
            noise_std: 0.01,
            band_gain: (0.9, 1.1),
        }
    }
}

/// Homography sampling ranges. Rotation, translation and perspective are
/// symmetric bounds `[-v, v]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarRanges {
    pub rotation_deg: f64,
    pub scale: (f64, f64),
    /// Fraction of image width/height.
    pub translation_frac: f64,
    /// Per-pixel perspective coefficients.
    pub perspective: f64,
}

impl Default for PlanarRanges {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            scale: (0.8, 1.25),
            translation_frac: 0.1,
            perspective: 1e-4,
        }
    }
}

/// Camera and scene ranges for the posed second view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpipolarRanges {
    /// Baseline as a fraction of the mean scene depth.
    pub baseline_ratio: (f64, f64),
    /// Mean scene depth (mm).
    pub depth: (f64, f64),
    /// Focal length as a fraction of image width.
    pub focal_frac: (f64, f64),
    /// Peak relief as a fraction of depth; 0 gives a flat scene.
    pub relief: f64,
    /// Rotation of the second camera about its optical axis.
    pub roll_deg: f64,
    /// Offset of the second camera's look-at point, as a fraction of depth.
    pub look_jitter: f64,
}

impl Default for EpipolarRanges {
    fn default() -> Self {
        Self {
            baseline_ratio: (0.05, 0.3),
            depth: (40.0, 80.0),
            focal_frac: (0.8, 1.1),
            relief: 0.08,
            roll_deg: 10.0,
            look_jitter: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPairSpec {
    pub mode: PairMode,
    pub seed: u64,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub photometric: PhotometricRanges,
    pub planar: PlanarRanges,
    pub epipolar: EpipolarRanges,
}

impl SyntheticPairSpec {
    pub fn new(mode: PairMode, seed: u64, bands: usize, height: usize, width: usize) -> Self {
        Self {
            mode,
            seed,
            bands,
            height,
            width,
            photometric: PhotometricRanges::default(),
            planar: PlanarRanges::default(),
            epipolar: EpipolarRanges::default(),
        }
    }

    /// All ranges collapsed: identity warp, no jitter, zero baseline.
    pub fn identity(mode: PairMode, seed: u64, bands: usize, height: usize, width: usize) -> Self {
        Self {
            photometric: PhotometricRanges {
                gain: (1.0, 1.0),
                gamma: (1.0, 1.0),
                noise_std: 0.0,
                band_gain: (1.0, 1.0),
            },
            planar: PlanarRanges {
                rotation_deg: 0.0,
                scale: (1.0, 1.0),
                translation_frac: 0.0,
                perspective: 0.0,
            },
            epipolar: EpipolarRanges {
                baseline_ratio: (0.0, 0.0),
                relief: 0.0,
                roll_deg: 0.0,
                look_jitter: 0.0,
                ..EpipolarRanges::default()
            },
            ..Self::new(mode, seed, bands, height, width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(HsiError::InvalidSpec(what.to_string()));
        let range_ok = |r: (f64, f64)| r.0 >= 0.0 && r.1 >= r.0 && r.1.is_finite();
        let p = &self.photometric;
        if !(range_ok(p.gain) && range_ok(p.gamma) && range_ok(p.band_gain))
            || !(p.noise_std >= 0.0)
        {
            return bad("photometric ranges must be ordered and non-negative");
        }
        if p.gamma.0 <= 0.0 {
            return bad("gamma must be positive");
        }
        let g = &self.planar;
        if !(g.rotation_deg >= 0.0 && g.translation_frac >= 0.0 && g.perspective >= 0.0)
            || !range_ok(g.scale)
        {
            return bad("planar ranges must be ordered and non-negative");
        }
        if g.scale.0 <= 0.0 {
            return bad("scale range must exclude 0");
        }
        let e = &self.epipolar;
        if !(range_ok(e.baseline_ratio) && range_ok(e.depth) && range_ok(e.focal_frac))
            || !(e.relief >= 0.0 && e.roll_deg >= 0.0 && e.look_jitter >= 0.0)
        {
            return bad("epipolar ranges must be ordered and non-negative");
        }
        if e.depth.0 <= 0.0 || e.focal_frac.0 <= 0.0 {
            return bad("depth and focal ranges must exclude 0");
        }
        if self.bands == 0 || self.height < 2 || self.width < 2 {
            return bad("image must have at least one band and 2x2 pixels");
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..=r.1)
    } else {
        r.0
    }
}

fn symmetric<R: Rng>(rng: &mut R, v: f64) -> f64 {
    if v > 0.0 {
        rng.random_range(-v..=v)
    } else {
        0.0
    }
}

/// Pixels of a warped view whose source location falls inside the source.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl ValidityMask {
    pub fn all(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    /// Valid iff `H01^-1 (x, y)` lies in `[0, W-1] x [0, H-1]` of the source.
    pub fn from_homography(h01: &Homography, height: usize, width: usize) -> Self {
        let inv = h01.inverse().ok();
        let data = (0..height * width)
            .map(|i| {
                let p = Point::new((i % width) as f64, (i / width) as f64);
                inv.as_ref()
                    .and_then(|h| h.apply(&p).ok())
                    .is_some_and(|s| {
                        s.x >= 0.0
                            && s.y >= 0.0
                            && s.x <= (width - 1) as f64
                            && s.y <= (height - 1) as f64
                    })
            })
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Nearest-pixel lookup at a sub-pixel location; false outside.
    pub fn contains(&self, p: &Point) -> bool {
        let (x, y) = (p.x.round(), p.y.round());
        x >= 0.0
            && y >= 0.0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v).count() as f64 / self.data.len().max(1) as f64
    }
}

/// Gain, gamma, noise and smooth per-band gain, drawn once per pair.
struct Jitter {
    gain: f64,
    gamma: f64,
    noise: f64,
    band_gain: Vec<f64>,
}

impl Jitter {
    fn sample<R: Rng>(rng: &mut R, r: &PhotometricRanges, bands: usize) -> Self {
        let gain = uniform(rng, r.gain);
        let gamma = uniform(rng, r.gamma);
        let noise = uniform(rng, (0.0, r.noise_std));
        let ctrl: Vec<f64> = (0..4).map(|_| uniform(rng, r.band_gain)).collect();
        let band_gain = catmull_rom(&ctrl, bands)
            .into_iter()
            .map(|v| v.clamp(r.band_gain.0, r.band_gain.1))
            .collect();
        Self {
            gain,
            gamma,
            noise,
            band_gain,
        }
    }

    fn is_identity(&self) -> bool {
        self.gain == 1.0
            && self.gamma == 1.0
            && self.noise == 0.0
            && self.band_gain.iter().all(|&g| g == 1.0)
    }

    fn apply<R: Rng>(&self, rng: &mut R, cube: &mut HsiCube, mask: Option<&ValidityMask>) {
        if self.is_identity() {
            return;
        }
        let normal = Normal::new(0.0, self.noise.max(f64::MIN_POSITIVE)).expect("std is positive");
        for b in 0..cube.bands() {
            let g = self.gain * self.band_gain[b];
            for (i, v) in cube.band_mut(b).iter_mut().enumerate() {
                if mask.is_some_and(|m| !m.data[i]) {
                    continue;
                }
                let n = if self.noise > 0.0 {
                    normal.sample(rng)
                } else {
                    0.0
                };
                *v = (g * (*v as f64).powf(self.gamma) + n).clamp(0.0, 1.0) as f32;
            }
        }
    }
}

/// Procedural cube with region-wise spectra and fine spectral spots, seeded.
pub fn synthetic_cube(bands: usize, height: usize, width: usize, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 12.0;
    let tex = SpectralTexture::random(
        &mut rng,
        bands,
        [
            -margin,
            -margin,
            width as f64 + margin,
            height as f64 + margin,
        ],
        1.0,
    );
    let mut cube = HsiCube::zeros(bands, height, width);
    let mut px = vec![0.0f32; bands];
    for y in 0..height {
        for x in 0..width {
            tex.eval(x as f64, y as f64, &mut px);
            for (b, v) in px.iter().enumerate() {
                cube.band_mut(b)[y * width + x] = *v;
            }
        }
    }
    cube
}

#[derive(Clone, Debug)]
pub struct PlanarPair {
    pub image: HsiCube,
    pub h01: Homography,
    pub valid: ValidityMask,
}

fn sample_homography<R: Rng>(
    rng: &mut R,
    r: &PlanarRanges,
    height: usize,
    width: usize,
) -> Homography {
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    for _ in 0..1000 {
        let theta = symmetric(rng, r.rotation_deg).to_radians();
        let s = if r.scale.1 > r.scale.0 {
            rng.random_range(r.scale.0.ln()..=r.scale.1.ln()).exp()
        } else {
            r.scale.0
        };
        let tx = symmetric(rng, r.translation_frac) * width as f64;
        let ty = symmetric(rng, r.translation_frac) * height as f64;
        let p1 = symmetric(rng, r.perspective);
        let p2 = symmetric(rng, r.perspective);
        let (c, sn) = (theta.cos(), theta.sin());
        let a = Matrix3::new(s * c, -s * sn, tx, s * sn, s * c, ty, p1, p2, 1.0);
        let to = Matrix3::new(1.0, 0.0, cx, 0.0, 1.0, cy, 0.0, 0.0, 1.0);
        let from = Matrix3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
        let m = to * a * from;
        if m.determinant().abs() >= 1e-8 {
            if let Ok(h) = Homography::new(m) {
                return h;
            }
        }
    }
    Homography::identity()
}

/// Warps `base` by a random homography and applies photometric jitter.
/// Pixels without a source are zero and marked invalid.
pub fn generate_planar_pair(base: &HsiCube, spec: &SyntheticPairSpec) -> Result<PlanarPair> {
    spec.validate()?;
    if spec.mode != PairMode::Planar {
        return Err(HsiError::InvalidSpec(
            "planar pair requested with a non-planar spec".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = (base.height(), base.width());
    let h01 = sample_homography(&mut rng, &spec.planar, h, w);
    let jitter = Jitter::sample(&mut rng, &spec.photometric, base.bands());
    let image = warp_cube(base, &h01)?;
    let valid = ValidityMask::from_homography(&h01, h, w);
    let mut image = image;
    jitter.apply(&mut rng, &mut image, Some(&valid));
    Ok(PlanarPair { image, h01, valid })
}

/// Inverse-bilinear warp: `out(x) = src(H^-1 x)`, zero where undefined.
pub(crate) fn warp_cube(src: &HsiCube, h01: &Homography) -> Result<HsiCube> {
    let inv = h01
        .inverse()
        .map_err(|e| HsiError::InvalidSpec(format!("non-invertible homography: {e}")))?;
    let (h, w, bands) = (src.height(), src.width(), src.bands());
    let mut out = HsiCube::new(
        bands,
        h,
        w,
        src.wavelengths().to_vec(),
        vec![0.0; bands * h * w],
    )?;
    let mut px = vec![0.0f32; bands];
    for y in 0..h {
        for x in 0..w {
            let Ok(s) = inv.apply(&Point::new(x as f64, y as f64)) else {
                continue;
            };
            if src.sample(s.x, s.y, &mut px) {
                for (b, v) in px.iter().enumerate() {
                    out.band_mut(b)[y * w + x] = *v;
                }
            }
        }
    }
    Ok(out)
}

/// Two calibrated renders of a textured height field.
#[derive(Clone, Debug)]
pub struct EpipolarPair {
    pub i0: HsiCube,
    pub i2: HsiCube,
    pub k0: Intrinsics,
    pub k2: Intrinsics,
    /// `X2 = R X0 + t`, with camera 0 as the world frame.
    pub pose: RelativePose,
    pub surface: HeightField,
}

impl EpipolarPair {
    fn camera2_center(&self) -> Vector3<f64> {
        -(self.pose.rotation.transpose() * self.pose.translation)
    }

    /// Ground-truth location in view 2 of pixel `p0` of view 0, if the
    /// surface point is inside view 2 and not occluded.
    pub fn correspondence(&self, p0: &Point) -> Option<Point> {
        let d = self.k0.unproject(p0);
        let x = self.surface.intersect([0.0; 3], [d.x, d.y, 1.0])?;
        let xw = Vector3::from(x);
        let x2 = self.pose.rotation * xw + self.pose.translation;
        if x2.z <= 0.0 {
            return None;
        }
        let p2 = self.k2.project(&x2);
        let (w, h) = ((self.i2.width() - 1) as f64, (self.i2.height() - 1) as f64);
        if !(p2.x >= 0.0 && p2.y >= 0.0 && p2.x <= w && p2.y <= h) {
            return None;
        }
        let c2 = self.camera2_center();
        let ray = xw - c2;
        let hit = self.surface.intersect(c2.into(), ray.into())?;
        ((Vector3::from(hit) - xw).norm() < 1e-6 * self.surface.base).then_some(p2)
    }

    /// Ground-truth matches on a regular grid of view-0 pixels.
    pub fn correspondences(&self, step: usize) -> Vec<Correspondence> {
        let step = step.max(1);
        let mut out = Vec::new();
        for y in (0..self.i0.height()).step_by(step) {
            for x in (0..self.i0.width()).step_by(step) {
                let p0 = Point::new(x as f64, y as f64);
                if let Some(p2) = self.correspondence(&p0) {
                    out.push(Correspondence::from_points(p0, p2));
                }
            }
        }
        out
    }
}

fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, roll: f64) -> Option<Matrix3<f64>> {
    let f = (target - center).try_normalize(1e-12)?;
    let x = Vector3::y().cross(&f).try_normalize(1e-12)?;
    let y = f.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
    if roll == 0.0 {
        return Some(r);
    }
    Some(Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::z()), roll).matrix() * r)
}

fn render(
    tex: &SpectralTexture,
    surface: &HeightField,
    k: &Intrinsics,
    rotation: &Matrix3<f64>,
    center: &Vector3<f64>,
    height: usize,
    width: usize,
) -> (HsiCube, usize) {
    let bands = tex.bands();
    let mut cube = HsiCube::zeros(bands, height, width);
    let mut px = vec![0.0f32; bands];
    let rt = rotation.transpose();
    let mut misses = 0;
    for y in 0..height {
        for x in 0..width {
            let d = k.unproject(&Point::new(x as f64, y as f64));
            let dw = rt * Vector3::new(d.x, d.y, 1.0);
            match surface.intersect((*center).into(), dw.into()) {
                Some(p) => {
                    tex.eval(p[0], p[1], &mut px);
                    for (b, v) in px.iter().enumerate() {
                        cube.band_mut(b)[y * width + x] = *v;
                    }
                }
                None => misses += 1,
            }
        }
    }
    (cube, misses)
}

/// Renders a random textured scene from two pinhole cameras. Camera 0 sits
/// at the origin looking down +z; camera 2 is offset by a baseline drawn
/// relative to scene depth and aimed back at the scene.
pub fn generate_epipolar_pair(spec: &SyntheticPairSpec) -> Result<EpipolarPair> {
    spec.validate()?;
    if spec.mode != PairMode::Epipolar {
        return Err(HsiError::InvalidSpec(
            "epipolar pair requested with a non-epipolar spec".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = &spec.epipolar;
    let (h, w) = (spec.height, spec.width);
    for _ in 0..100 {
        let depth = uniform(&mut rng, r.depth);
        let f = uniform(&mut rng, r.focal_frac) * w as f64;
        let k = Intrinsics::new(f, f, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0)
            .map_err(|e| HsiError::InvalidSpec(e.to_string()))?;
        let unit = depth / f;
        let half = [0.5 * w as f64 * unit * 1.8, 0.5 * h as f64 * unit * 1.8];
        let extent = [-half[0], -half[1], half[0], half[1]];
        let surface = HeightField::random(&mut rng, depth, r.relief * depth, 0.4 * half[1], extent);
        let tex = SpectralTexture::random(&mut rng, spec.bands, extent, unit);

        let ratio = uniform(&mut rng, r.baseline_ratio);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let dz = rng.random_range(-0.3..=0.3);
        let dir = Vector3::new(phi.cos(), phi.sin(), dz).normalize();
        let c2 = dir * (ratio * depth);
        let target = Vector3::new(
            symmetric(&mut rng, r.look_jitter) * depth,
            symmetric(&mut rng, r.look_jitter) * depth,
            depth,
        );
        let roll = symmetric(&mut rng, r.roll_deg).to_radians();
        let Some(rot) = look_at(&c2, &target, roll) else {
            continue;
        };
        let pose = RelativePose::new(rot, -(rot * c2))
            .map_err(|e| HsiError::InvalidSpec(e.to_string()))?;

        let (i0, m0) = render(
            &tex,
            &surface,
            &k,
            &Matrix3::identity(),
            &Vector3::zeros(),
            h,
            w,
        );
        let (mut i2, m2) = render(&tex, &surface, &k, &rot, &c2, h, w);
        if m0 + m2 > (h * w) / 50 {
            continue;
        }
        let jitter = Jitter::sample(&mut rng, &spec.photometric, spec.bands);
        jitter.apply(&mut rng, &mut i2, None);
        let i0 = HsiCube::new(
            spec.bands,
            h,
            w,
            default_wavelengths(spec.bands),
            i0.data().to_vec(),
        )?;
        return Ok(EpipolarPair {
            i0,
            i2,
            k0: k,
            k2: k,
            pose,
            surface,
        });
    }
    Err(HsiError::InvalidSpec(
        "could not draw a non-degenerate camera pair".into(),
    ))
}
