//! Convolution via im2col and sgemm, processed in column chunks so the
//! unfolded matrix never exceeds a few tens of megabytes.

use super::ops::gemm_strided;
use super::tape::needs;
use super::{dim_err, Result, Tape, Tensor, Var};

const CHUNK_COLUMNS: usize = 4096;

/// `floor((extent + 2*pad - kernel) / stride) + 1`, never below 1.
pub fn conv_output_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    let padded = extent + 2 * pad;
    if padded < kernel {
        return 1;
    }
    ((padded - kernel) / stride + 1).max(1)
}

/// Static geometry of one convolution over a `[C, D, H, W]` volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeometry {
    pub fn output(&self) -> [usize; 3] {
        [0, 1, 2]
            .map(|a| conv_output_extent(self.input[a], self.kernel[a], self.stride[a], self.pad[a]))
    }

    fn rows(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn columns(&self) -> usize {
        self.output().iter().product()
    }

    /// Unfold output columns `[p0, p0 + len)` into `col` (`rows x len`).
    fn im2col(&self, x: &[f32], p0: usize, len: usize, col: &mut [f32]) {
        let [d, h, w] = self.input;
        let [_, oh, ow] = self.output();
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let mut r = 0;
        for ci in 0..self.in_channels {
            let plane = &x[ci * d * h * w..(ci + 1) * d * h * w];
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let row = &mut col[r * len..(r + 1) * len];
                        for (k, slot) in row.iter_mut().enumerate() {
                            let p = p0 + k;
                            let ox = p % ow;
                            let oy = (p / ow) % oh;
                            let oz = p / (ow * oh);
                            let iz = (oz * sd + a) as isize - pd as isize;
                            let iy = (oy * sh + b) as isize - ph as isize;
                            let ix = (ox * sw + c) as isize - pw as isize;
                            *slot = if iz < 0
                                || iy < 0
                                || ix < 0
                                || iz >= d as isize
                                || iy >= h as isize
                                || ix >= w as isize
                            {
                                0.0
                            } else {
                                plane[(iz as usize * h + iy as usize) * w + ix as usize]
                            };
                        }
                        r += 1;
                    }
                }
            }
        }
    }

    /// Scatter-add of an unfolded gradient chunk back onto the input volume.
    fn col2im(&self, col: &[f32], p0: usize, len: usize, dx: &mut [f32]) {
        let [d, h, w] = self.input;
        let [_, oh, ow] = self.output();
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let mut r = 0;
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * d * h * w..(ci + 1) * d * h * w];
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let row = &col[r * len..(r + 1) * len];
                        for (k, &v) in row.iter().enumerate() {
                            let p = p0 + k;
                            let ox = p % ow;
                            let oy = (p / ow) % oh;
                            let oz = p / (ow * oh);
                            let iz = (oz * sd + a) as isize - pd as isize;
                            let iy = (oy * sh + b) as isize - ph as isize;
                            let ix = (ox * sw + c) as isize - pw as isize;
                            if iz >= 0
                                && iy >= 0
                                && ix >= 0
                                && iz < d as isize
                                && iy < h as isize
                                && ix < w as isize
                            {
                                plane[(iz as usize * h + iy as usize) * w + ix as usize] += v;
                            }
                        }
                        r += 1;
                    }
                }
            }
        }
    }
}

fn conv_forward(
    geo: &ConvGeometry,
    x: &[f32],
    weight: &[f32],
    bias: &[f32],
    c_out: usize,
) -> Vec<f32> {
    let (rows, cols) = (geo.rows(), geo.columns());
    let mut out = vec![0f32; c_out * cols];
    let mut col = vec![0f32; rows * CHUNK_COLUMNS.min(cols)];
    let mut p0 = 0;
    while p0 < cols {
        let len = CHUNK_COLUMNS.min(cols - p0);
        geo.im2col(x, p0, len, &mut col[..rows * len]);
        gemm_strided(
            c_out,
            rows,
            len,
            weight,
            [rows, 1],
            &col[..rows * len],
            [len, 1],
            &mut out[p0..],
            [cols, 1],
            false,
        );
        p0 += len;
    }
    for (co, b) in bias.iter().enumerate() {
        for v in &mut out[co * cols..(co + 1) * cols] {
            *v += b;
        }
    }
    out
}

/// Returns (d input, d weight, d bias); input/weight gradients only when asked.
fn conv_backward(
    geo: &ConvGeometry,
    x: &[f32],
    weight: &[f32],
    g: &[f32],
    c_out: usize,
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Vec<f32>) {
    let (rows, cols) = (geo.rows(), geo.columns());
    let mut dx = want_x.then(|| vec![0f32; x.len()]);
    let mut dw = want_w.then(|| vec![0f32; c_out * rows]);
    let db = (0..c_out)
        .map(|co| {
            g[co * cols..(co + 1) * cols]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>() as f32
        })
        .collect();
    let chunk = CHUNK_COLUMNS.min(cols);
    let mut col = vec![0f32; rows * chunk];
    let mut p0 = 0;
    while p0 < cols {
        let len = CHUNK_COLUMNS.min(cols - p0);
        let col = &mut col[..rows * len];
        if let Some(dw) = dw.as_mut() {
            geo.im2col(x, p0, len, col);
            // dW += G[:, chunk] * col^T
            gemm_strided(
                c_out,
                len,
                rows,
                &g[p0..],
                [cols, 1],
                col,
                [1, len],
                dw,
                [rows, 1],
                true,
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcol = W^T * G[:, chunk]
            gemm_strided(
                rows,
                c_out,
                len,
                weight,
                [1, rows],
                &g[p0..],
                [cols, 1],
                col,
                [len, 1],
                false,
            );
            geo.col2im(col, p0, len, dx);
        }
        p0 += len;
    }
    (dx, dw, db)
}

impl Tape {
    fn conv_generic(
        &mut self,
        op: &'static str,
        x: Var,
        weight: Var,
        bias: Var,
        geo: ConvGeometry,
        x_shape: Vec<usize>,
    ) -> Result<Var> {
        let c_out = self.value(weight).shape()[0];
        if self.value(bias).shape() != [c_out] {
            return dim_err(
                op,
                format!(
                    "bias shape {:?}, expected [{c_out}]",
                    self.value(bias).shape()
                ),
            );
        }
        let out_extent = geo.output();
        let data = conv_forward(
            &geo,
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            c_out,
        );
        let mut shape = vec![c_out];
        if x_shape.len() == 4 {
            shape.push(out_extent[0]);
        }
        shape.extend_from_slice(&out_extent[1..]);
        let out = Tensor::new(shape, data)?;
        self.push(op, out, &[x, weight, bias], move |nodes, _, g| {
            let (dx, dw, db) = conv_backward(
                &geo,
                nodes[x.0].value.data(),
                nodes[weight.0].value.data(),
                g.data(),
                c_out,
                needs(nodes, x),
                needs(nodes, weight),
            );
            let mut res = vec![(bias, Tensor::new([c_out], db).unwrap())];
            if let Some(dx) = dx {
                res.push((x, Tensor::new(x_shape.clone(), dx).unwrap()));
            }
            if let Some(dw) = dw {
                res.push((
                    weight,
                    Tensor::new(nodes[weight.0].value.shape(), dw).unwrap(),
                ));
            }
            res
        })
    }

    /// 3x3x3 convolution with padding 1 over `[C_in, S, H, W]`; weights are
    /// `[C_out, C_in, 3, 3, 3]` and `stride` is (spectral, row, column).
    pub fn conv3d(&mut self, x: Var, weight: Var, bias: Var, stride: [usize; 3]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        if xs.len() != 4 || ws.len() != 5 || ws[2..] != [3, 3, 3] {
            return dim_err("conv3d", format!("input {xs:?}, weights {ws:?}"));
        }
        if ws[1] != xs[0] {
            return dim_err(
                "conv3d",
                format!(
                    "weights expect {} input channels, input has {}",
                    ws[1], xs[0]
                ),
            );
        }
        if stride.contains(&0) {
            return dim_err("conv3d", "stride components must be >= 1");
        }
        let geo = ConvGeometry {
            in_channels: xs[0],
            input: [xs[1], xs[2], xs[3]],
            kernel: [3, 3, 3],
            stride,
            pad: [1, 1, 1],
        };
        self.conv_generic("conv3d", x, weight, bias, geo, xs)
    }

    /// 3x3 convolution, stride 1, padding 1 over `[C_in, H, W]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[2..] != [3, 3] {
            return dim_err("conv2d", format!("input {xs:?}, weights {ws:?}"));
        }
        if ws[1] != xs[0] {
            return dim_err(
                "conv2d",
                format!(
                    "weights expect {} input channels, input has {}",
                    ws[1], xs[0]
                ),
            );
        }
        let geo = ConvGeometry {
            in_channels: xs[0],
            input: [1, xs[1], xs[2]],
            kernel: [1, 3, 3],
            stride: [1, 1, 1],
            pad: [0, 1, 1],
        };
        self.conv_generic("conv2d", x, weight, bias, geo, xs)
    }
}
