use super::tape::needs;
use super::{dim_err, Result, Tape, Tensor, Var};

/// Source coordinate and blend weight for align-corners-false resizing.
pub(crate) fn bilinear_source(
    dst: usize,
    in_extent: usize,
    out_extent: usize,
) -> (usize, usize, f32) {
    let scale = in_extent as f32 / out_extent as f32;
    let src = ((dst as f32 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_extent - 1);
    let i1 = (i0 + 1).min(in_extent - 1);
    (i0, i1, src - i0 as f32)
}

impl Tape {
    /// Max pooling with kernel and stride (1, 2, 2) over `[C, S, H, W]`.
    /// Odd trailing rows/columns are dropped.
    pub fn maxpool3d_spatial(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 4 {
            return dim_err(
                "maxpool3d",
                format!("expected [C,S,H,W], got {:?}", xv.shape()),
            );
        }
        let [c, s, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return dim_err("maxpool3d", format!("spatial extent {h}x{w} too small"));
        }
        let planes = c * s;
        let mut out = vec![0f32; planes * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for p in 0..planes {
            let src = &xv.data()[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = (2 * y) * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (2 * y + dy) * w + 2 * xx + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    let o = (p * oh + y) * ow + xx;
                    out[o] = src[best];
                    argmax[o] = (p * h * w + best) as u32;
                }
            }
        }
        let out = Tensor::new([c, s, oh, ow], out)?;
        self.push("maxpool3d", out, &[x], move |nodes, _, g| {
            let mut d = Tensor::zeros(nodes[x.0].value.shape());
            for (&i, &gi) in argmax.iter().zip(g.data()) {
                d.data_mut()[i as usize] += gi;
            }
            vec![(x, d)]
        })
    }

    /// Mean over the spectral axis of `[C, S, H, W]`, giving `[C, H, W]`.
    pub fn spectral_mean(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 4 {
            return dim_err(
                "spectral_mean",
                format!("expected [C,S,H,W], got {shape:?}"),
            );
        }
        let s = self.sum_axis(x, 1, false)?;
        self.scale(s, 1.0 / shape[1] as f32)
    }

    /// Bilinear resize of `[C, H, W]` to `[C, out_h, out_w]` (align corners false).
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 || out_h == 0 || out_w == 0 {
            return dim_err(
                "upsample_bilinear",
                format!("{:?} -> ({out_h}, {out_w})", xv.shape()),
            );
        }
        let [c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2]];
        let rows: Vec<_> = (0..out_h).map(|y| bilinear_source(y, h, out_h)).collect();
        let cols: Vec<_> = (0..out_w).map(|x| bilinear_source(x, w, out_w)).collect();
        let mut out = vec![0f32; c * out_h * out_w];
        for ch in 0..c {
            let src = &xv.data()[ch * h * w..(ch + 1) * h * w];
            for (y, &(y0, y1, ly)) in rows.iter().enumerate() {
                for (xx, &(x0, x1, lx)) in cols.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    out[(ch * out_h + y) * out_w + xx] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        let out = Tensor::new([c, out_h, out_w], out)?;
        self.push("upsample_bilinear", out, &[x], move |_, _, g| {
            let mut d = vec![0f32; c * h * w];
            for ch in 0..c {
                let dst = &mut d[ch * h * w..(ch + 1) * h * w];
                for (y, &(y0, y1, ly)) in rows.iter().enumerate() {
                    for (xx, &(x0, x1, lx)) in cols.iter().enumerate() {
                        let gi = g.data()[(ch * out_h + y) * out_w + xx];
                        dst[y0 * w + x0] += gi * (1.0 - ly) * (1.0 - lx);
                        dst[y0 * w + x1] += gi * (1.0 - ly) * lx;
                        dst[y1 * w + x0] += gi * ly * (1.0 - lx);
                        dst[y1 * w + x1] += gi * ly * lx;
                    }
                }
            }
            vec![(x, Tensor::new([c, h, w], d).unwrap())]
        })
    }

    /// Bilinear lookup of `map` (`[D, H, W]`) at pixel coordinates `points`
    /// (`[N, 2]`, columns x then y), returning `[N, D]`. Points are clamped to
    /// the image; clamped coordinates receive zero gradient.
    pub fn grid_sample2d(&mut self, map: Var, points: Var) -> Result<Var> {
        let (mv, pv) = (self.value(map), self.value(points));
        if mv.ndim() != 3 || pv.ndim() != 2 || pv.shape()[1] != 2 {
            return dim_err(
                "grid_sample2d",
                format!("map {:?}, points {:?}", mv.shape(), pv.shape()),
            );
        }
        let [d, h, w] = [mv.shape()[0], mv.shape()[1], mv.shape()[2]];
        let n = pv.shape()[0];
        let taps: Vec<Tap> = pv
            .data()
            .chunks(2)
            .map(|p| Tap::new(p[0], p[1], w, h))
            .collect();
        let mut out = vec![0f32; n * d];
        for (k, t) in taps.iter().enumerate() {
            for ch in 0..d {
                out[k * d + ch] = t.sample(&mv.data()[ch * h * w..(ch + 1) * h * w], w);
            }
        }
        let out = Tensor::new([n, d], out)?;
        self.push("grid_sample2d", out, &[map, points], move |nodes, _, g| {
            let mut res = Vec::with_capacity(2);
            let mv = &nodes[map.0].value;
            if needs(nodes, map) {
                let mut dm = vec![0f32; d * h * w];
                for (k, t) in taps.iter().enumerate() {
                    for ch in 0..d {
                        let gi = g.data()[k * d + ch];
                        let plane = &mut dm[ch * h * w..(ch + 1) * h * w];
                        plane[t.y0 * w + t.x0] += gi * (1.0 - t.ly) * (1.0 - t.lx);
                        plane[t.y0 * w + t.x1] += gi * (1.0 - t.ly) * t.lx;
                        plane[t.y1 * w + t.x0] += gi * t.ly * (1.0 - t.lx);
                        plane[t.y1 * w + t.x1] += gi * t.ly * t.lx;
                    }
                }
                res.push((map, Tensor::new([d, h, w], dm).unwrap()));
            }
            if needs(nodes, points) {
                let mut dp = vec![0f32; n * 2];
                for (k, t) in taps.iter().enumerate() {
                    let (mut gx, mut gy) = (0f32, 0f32);
                    for ch in 0..d {
                        let gi = g.data()[k * d + ch];
                        let plane = &mv.data()[ch * h * w..(ch + 1) * h * w];
                        let (v00, v01) = (plane[t.y0 * w + t.x0], plane[t.y0 * w + t.x1]);
                        let (v10, v11) = (plane[t.y1 * w + t.x0], plane[t.y1 * w + t.x1]);
                        gx += gi * ((1.0 - t.ly) * (v01 - v00) + t.ly * (v11 - v10));
                        gy += gi * ((1.0 - t.lx) * (v10 - v00) + t.lx * (v11 - v01));
                    }
                    dp[2 * k] = if t.clamped_x { 0.0 } else { gx };
                    dp[2 * k + 1] = if t.clamped_y { 0.0 } else { gy };
                }
                res.push((points, Tensor::new([n, 2], dp).unwrap()));
            }
            res
        })
    }
}

struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    lx: f32,
    ly: f32,
    clamped_x: bool,
    clamped_y: bool,
}

impl Tap {
    fn new(x: f32, y: f32, w: usize, h: usize) -> Self {
        let (x0, x1, lx, clamped_x) = axis_tap(x, w);
        let (y0, y1, ly, clamped_y) = axis_tap(y, h);
        Self {
            x0,
            x1,
            y0,
            y1,
            lx,
            ly,
            clamped_x,
            clamped_y,
        }
    }

    fn sample(&self, plane: &[f32], w: usize) -> f32 {
        let top =
            plane[self.y0 * w + self.x0] * (1.0 - self.lx) + plane[self.y0 * w + self.x1] * self.lx;
        let bot =
            plane[self.y1 * w + self.x0] * (1.0 - self.lx) + plane[self.y1 * w + self.x1] * self.lx;
        top * (1.0 - self.ly) + bot * self.ly
    }
}

fn axis_tap(v: f32, extent: usize) -> (usize, usize, f32, bool) {
    let max = (extent - 1) as f32;
    let clamped = !(0.0..=max).contains(&v);
    let c = v.clamp(0.0, max);
    let i0 = (c.floor() as usize).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, c - i0 as f32, clamped)
}
