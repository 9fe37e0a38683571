use rand::Rng;

/// Catmull-Rom interpolation of `ctrl` (uniform knots) at `n` evenly spaced
/// positions.
pub(crate) fn catmull_rom(ctrl: &[f64], n: usize) -> Vec<f64> {
    let m = ctrl.len();
    let at = |i: isize| ctrl[i.clamp(0, m as isize - 1) as usize];
    (0..n)
        .map(|k| {
            let t = if n > 1 {
                k as f64 * (m - 1) as f64 / (n - 1) as f64
            } else {
                0.0
            };
            let i = (t.floor() as isize).min(m as isize - 2);
            let u = t - i as f64;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            0.5 * (2.0 * p1
                + (-p0 + p2) * u
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
                + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u)
        })
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

#[derive(Clone, Debug)]
struct Blob {
    x: f64,
    y: f64,
    inv2s2: f64,
    signature: usize,
    amplitude: f64,
}

/// Uniform-grid bucketing so each lookup touches only nearby blobs.
#[derive(Clone, Debug)]
struct Grid {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl Grid {
    fn new(extent: [f64; 4], cell: f64, blobs: &[Blob], reach: impl Fn(&Blob) -> f64) -> Self {
        let nx = (((extent[2] - extent[0]) / cell).ceil() as usize).max(1);
        let ny = (((extent[3] - extent[1]) / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, b) in blobs.iter().enumerate() {
            let r = reach(b);
            let cx = |x: f64| (((x - extent[0]) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy = |y: f64| (((y - extent[1]) / cell).floor().max(0.0) as usize).min(ny - 1);
            for gy in cy(b.y - r)..=cy(b.y + r) {
                for gx in cx(b.x - r)..=cx(b.x + r) {
                    cells[gy * nx + gx].push(i as u32);
                }
            }
        }
        Self {
            x0: extent[0],
            y0: extent[1],
            cell,
            nx,
            ny,
            cells,
        }
    }

    fn lookup(&self, x: f64, y: f64) -> &[u32] {
        let gx = ((x - self.x0) / self.cell).floor();
        let gy = ((y - self.y0) / self.cell).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.nx as f64 || gy >= self.ny as f64 {
            return &[];
        }
        &self.cells[gy as usize * self.nx + gx as usize]
    }
}

/// Procedural spectral texture: a soft partition into regions with smooth
/// random spectra, overlaid with small spectrally distinct spots.
#[derive(Clone, Debug)]
pub struct SpectralTexture {
    bands: usize,
    signatures: Vec<Vec<f64>>,
    background: usize,
    regions: Vec<Blob>,
    spots: Vec<Blob>,
    region_grid: Grid,
    spot_grid: Grid,
}

/// Sharpness of the region partition.
const REGION_POWER: f64 = 4.0;

impl SpectralTexture {
    /// `extent` is `[x0, y0, x1, y1]` in texture units and `unit` is the
    /// size of one pixel in those units.
    pub fn random<R: Rng>(rng: &mut R, bands: usize, extent: [f64; 4], unit: f64) -> Self {
        let palette = rng.random_range(6..=10);
        let signatures: Vec<Vec<f64>> = (0..palette)
            .map(|_| {
                let ctrl: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..0.95)).collect();
                catmull_rom(&ctrl, bands)
            })
            .collect();
        let area = (extent[2] - extent[0]) * (extent[3] - extent[1]) / (unit * unit);
        let region_count = ((area / 300.0).ceil() as usize).max(4);
        let spot_count = ((area / 40.0).ceil() as usize).max(8);
        let blob = |rng: &mut R, smin: f64, smax: f64, amp: f64| {
            let s = rng.random_range(smin..smax) * unit;
            Blob {
                x: rng.random_range(extent[0]..extent[2]),
                y: rng.random_range(extent[1]..extent[3]),
                inv2s2: 1.0 / (2.0 * s * s),
                signature: rng.random_range(0..palette),
                amplitude: if amp > 0.0 {
                    rng.random_range(0.4..amp)
                } else {
                    1.0
                },
            }
        };
        let regions: Vec<Blob> = (0..region_count)
            .map(|_| blob(rng, 5.0, 12.0, 0.0))
            .collect();
        let spots: Vec<Blob> = (0..spot_count).map(|_| blob(rng, 0.9, 2.5, 0.95)).collect();
        let reach = |b: &Blob| 3.0 / (2.0 * b.inv2s2).sqrt();
        let region_grid = Grid::new(extent, 14.0 * unit, &regions, |b| 2.5 * reach(b));
        let spot_grid = Grid::new(extent, 6.0 * unit, &spots, reach);
        Self {
            bands,
            signatures,
            background: rng.random_range(0..palette),
            regions,
            spots,
            region_grid,
            spot_grid,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Spectrum at `(x, y)`; every value lies in [0, 1].
    pub fn eval(&self, x: f64, y: f64, out: &mut [f32]) {
        let mut mix = vec![0.0f64; self.bands];
        let mut logits: Vec<(f64, usize)> = self
            .region_grid
            .lookup(x, y)
            .iter()
            .map(|&i| {
                let b = &self.regions[i as usize];
                let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
                (-REGION_POWER * d2 * b.inv2s2, b.signature)
            })
            .collect();
        // The background acts as a distant region so the blend stays continuous.
        logits.push((-40.0, self.background));
        let max = logits.iter().map(|l| l.0).fold(-40.0, f64::max);
        let mut total = 0.0;
        for (l, s) in logits {
            let w = (l - max).exp();
            total += w;
            for (m, v) in mix.iter_mut().zip(&self.signatures[s]) {
                *m += w * v;
            }
        }
        if total > 0.0 {
            mix.iter_mut().for_each(|m| *m /= total);
        } else {
            mix.copy_from_slice(&self.signatures[self.background]);
        }
        for &i in self.spot_grid.lookup(x, y) {
            let b = &self.spots[i as usize];
            let d2 = (x - b.x).powi(2) + (y - b.y).powi(2);
            let g = b.amplitude * (-d2 * b.inv2s2).exp();
            if g > 1e-4 {
                for (m, v) in mix.iter_mut().zip(&self.signatures[b.signature]) {
                    *m = *m * (1.0 - g) + g * (1.0 - v);
                }
            }
        }
        for (o, m) in out.iter_mut().zip(mix) {
            *o = m.clamp(0.0, 1.0) as f32;
        }
    }
}

/// Surface `z = base + sum of Gaussian bumps` over world `(x, y)`.
#[derive(Clone, Debug)]
pub struct HeightField {
    pub base: f64,
    bumps: Vec<[f64; 4]>,
}

impl HeightField {
    pub fn flat(base: f64) -> Self {
        Self {
            base,
            bumps: vec![],
        }
    }

    /// Gentle relief with peak heights up to `amplitude` and bump widths
    /// around `width`, centred in `extent`.
    pub fn random<R: Rng>(
        rng: &mut R,
        base: f64,
        amplitude: f64,
        width: f64,
        extent: [f64; 4],
    ) -> Self {
        if amplitude <= 0.0 {
            return Self::flat(base);
        }
        let bumps = (0..rng.random_range(3..=6))
            .map(|_| {
                let s = rng.random_range(0.6 * width..1.4 * width);
                [
                    rng.random_range(extent[0]..extent[2]),
                    rng.random_range(extent[1]..extent[3]),
                    1.0 / (2.0 * s * s),
                    rng.random_range(-amplitude..amplitude),
                ]
            })
            .collect();
        Self { base, bumps }
    }

    pub fn z(&self, x: f64, y: f64) -> f64 {
        self.base
            + self
                .bumps
                .iter()
                .map(|b| b[3] * (-((x - b[0]).powi(2) + (y - b[1]).powi(2)) * b[2]).exp())
                .sum::<f64>()
    }

    pub fn is_flat(&self) -> bool {
        self.bumps.is_empty()
    }

    /// First intersection of the ray `origin + s * dir` (with `dir.z > 0`)
    /// with the surface, by fixed-point iteration on the ray parameter.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<[f64; 3]> {
        if !(dir[2] > 1e-9) {
            return None;
        }
        let mut s = (self.base - origin[2]) / dir[2];
        for _ in 0..100 {
            let (x, y) = (origin[0] + s * dir[0], origin[1] + s * dir[1]);
            let next = (self.z(x, y) - origin[2]) / dir[2];
            if (next - s).abs() < 1e-12 * s.abs().max(1.0) {
                s = next;
                break;
            }
            s = next;
        }
        let p = [
            origin[0] + s * dir[0],
            origin[1] + s * dir[1],
            origin[2] + s * dir[2],
        ];
        let residual = (p[2] - self.z(p[0], p[1])).abs();
        (s > 0.0 && residual < 1e-8 * self.base.abs().max(1.0)).then_some(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spline_interpolates_knots() {
        let ctrl = [0.2, 0.8, 0.4, 0.6, 0.3];
        let v = catmull_rom(&ctrl, 17);
        for (k, c) in ctrl.iter().enumerate() {
            assert!((v[4 * k] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn texture_values_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = SpectralTexture::random(&mut rng, 16, [0.0, 0.0, 64.0, 64.0], 1.0);
        let mut out = [0.0f32; 16];
        let mut spread = 0.0f32;
        for y in 0..64 {
            for x in 0..64 {
                t.eval(x as f64, y as f64, &mut out);
                assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
                spread = spread.max(out[0]);
            }
        }
        assert!(spread > 0.0);
    }

    #[test]
    fn flat_intersection() {
        let h = HeightField::flat(5.0);
        let p = h.intersect([0.0, 0.0, 0.0], [0.1, -0.2, 1.0]).unwrap();
        assert!((p[2] - 5.0).abs() < 1e-12 && (p[0] - 0.5).abs() < 1e-12);
        assert!(h.intersect([0.0; 3], [0.0, 0.0, -1.0]).is_none());
    }

    #[test]
    fn bumpy_intersection_lies_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = HeightField::random(&mut rng, 5.0, 0.3, 1.0, [-2.0, -2.0, 2.0, 2.0]);
        for i in 0..20 {
            let d = [(i as f64 - 10.0) * 0.03, 0.1, 1.0];
            let p = h.intersect([0.0, 0.0, 0.0], d).unwrap();
            assert!((p[2] - h.z(p[0], p[1])).abs() < 1e-8);
        }
    }
}
