use super::tape::needs;
use super::{dim_err, strides, Result, Tape, Tensor, TensorError, Var};

/// (outer, extent, inner) decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n {
            a[i + a.len() - n]
        } else {
            1
        };
        let db = if i + b.len() >= n {
            b[i + b.len() - n]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat input index for each element of the broadcast output.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<u32> {
    let n = out.len();
    let offset = n - input.len();
    let in_strides = strides(input);
    let mut bstrides = vec![0usize; n];
    for i in 0..input.len() {
        if input[i] != 1 {
            bstrides[i + offset] = in_strides[i];
        }
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat as u32);
        for d in (0..n).rev() {
            idx[d] += 1;
            flat += bstrides[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= bstrides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

impl Tape {
    fn unary<F, D>(&mut self, op: &'static str, x: Var, f: F, df: D) -> Result<Var>
    where
        F: Fn(f32) -> f32,
        D: Fn(f32, f32) -> f32 + 'static,
    {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push(op, out, &[x], move |nodes, y, g| {
            let xv = &nodes[x.0].value;
            let gx = xv
                .data()
                .iter()
                .zip(y.data())
                .zip(g.data())
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            vec![(x, Tensor::new(xv.shape(), gx).unwrap())]
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "relu",
            x,
            |v| v.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f32::exp, |_, y| y)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, f32::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary("sqrt", x, f32::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary("neg", x, |v| -v, |_, _| -1.0)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        self.unary("scale", x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Result<Var> {
        self.unary("add_scalar", x, move |v| v + c, |_, _| 1.0)
    }

    /// Huber penalty: `e^2/2` inside `delta`, linear with slope `delta` outside.
    pub fn huber(&mut self, x: Var, delta: f32) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(TensorError::InvalidArgument {
                op: "huber",
                detail: format!("delta must be positive, got {delta}"),
            });
        }
        self.unary(
            "huber",
            x,
            move |e| huber(e, delta),
            move |e, _| {
                if e.abs() <= delta {
                    e
                } else {
                    delta * e.signum()
                }
            },
        )
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: fn(f32, f32) -> f32,
        dfa: fn(f32, f32) -> f32,
        dfb: fn(f32, f32) -> f32,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            let out = Tensor::new(av.shape(), data)?;
            return self.push(op, out, &[a, b], move |nodes, _, g| {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let mut res = Vec::with_capacity(2);
                if needs(nodes, a) {
                    let d = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .zip(g.data())
                        .map(|((&x, &y), &gi)| gi * dfa(x, y))
                        .collect();
                    res.push((a, Tensor::new(av.shape(), d).unwrap()));
                }
                if needs(nodes, b) {
                    let d = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .zip(g.data())
                        .map(|((&x, &y), &gi)| gi * dfb(x, y))
                        .collect();
                    res.push((b, Tensor::new(bv.shape(), d).unwrap()));
                }
                res
            });
        }
        let Some(shape) = broadcast_shape(av.shape(), bv.shape()) else {
            return dim_err(
                op,
                format!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape()),
            );
        };
        let ia = broadcast_map(&shape, av.shape());
        let ib = broadcast_map(&shape, bv.shape());
        let data = ia
            .iter()
            .zip(&ib)
            .map(|(&i, &j)| f(av.data()[i as usize], bv.data()[j as usize]))
            .collect();
        let out = Tensor::new(shape, data)?;
        self.push(op, out, &[a, b], move |nodes, _, g| {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let mut res = Vec::with_capacity(2);
            if needs(nodes, a) {
                let mut d = Tensor::zeros(av.shape());
                for ((&i, &j), &gi) in ia.iter().zip(&ib).zip(g.data()) {
                    let (x, y) = (av.data()[i as usize], bv.data()[j as usize]);
                    d.data_mut()[i as usize] += gi * dfa(x, y);
                }
                res.push((a, d));
            }
            if needs(nodes, b) {
                let mut d = Tensor::zeros(bv.shape());
                for ((&i, &j), &gi) in ia.iter().zip(&ib).zip(g.data()) {
                    let (x, y) = (av.data()[i as usize], bv.data()[j as usize]);
                    d.data_mut()[j as usize] += gi * dfb(x, y);
                }
                res.push((b, d));
            }
            res
        })
    }

    /// Elementwise sum with numpy-style broadcasting. The same holds for
    /// [`sub`](Self::sub), [`mul`](Self::mul) and [`div`](Self::div).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            |_, y| 1.0 / y,
            |x, y| -x / (y * y),
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(
            "sum",
            Tensor::scalar(total as f32),
            &[x],
            move |nodes, _, g| vec![(x, Tensor::full(nodes[x.0].value.shape(), g.item()))],
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return dim_err("mean", "empty tensor");
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f32)
    }

    /// Sum over `axis`, keeping it as a singleton when `keepdim`.
    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return dim_err(
                "sum_axis",
                format!("axis {axis} for shape {:?}", xv.shape()),
            );
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut out = vec![0f32; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &xv.data()[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let out = Tensor::new(shape, out)?;
        self.push("sum_axis", out, &[x], move |nodes, _, g| {
            let xs = nodes[x.0].value.shape();
            let mut d = Tensor::zeros(xs);
            for o in 0..outer {
                for k in 0..len {
                    let dst = &mut d.data_mut()[(o * len + k) * inner..(o * len + k + 1) * inner];
                    dst.copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            vec![(x, d)]
        })
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return dim_err("softmax", format!("axis {axis} for shape {:?}", xv.shape()));
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let out = Tensor::new(
            xv.shape(),
            softmax_lanes(xv.data(), outer, len, inner, false),
        )?;
        self.push("softmax", out, &[x], move |_, y, g| {
            let mut d = vec![0f32; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: f32 = (0..len).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                    for k in 0..len {
                        d[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                    }
                }
            }
            vec![(x, Tensor::new(y.shape(), d).unwrap())]
        })
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return dim_err(
                "log_softmax",
                format!("axis {axis} for shape {:?}", xv.shape()),
            );
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let out = Tensor::new(
            xv.shape(),
            softmax_lanes(xv.data(), outer, len, inner, true),
        )?;
        self.push("log_softmax", out, &[x], move |_, y, g| {
            let mut d = vec![0f32; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let gsum: f32 = (0..len).map(|k| g.data()[at(k)]).sum();
                    for k in 0..len {
                        d[at(k)] = g.data()[at(k)] - y.data()[at(k)].exp() * gsum;
                    }
                }
            }
            vec![(x, Tensor::new(y.shape(), d).unwrap())]
        })
    }

    /// Unit-norm lanes along `axis`. Zero lanes map to zero vectors with a
    /// zero gradient.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return dim_err(
                "l2_normalize",
                format!("axis {axis} for shape {:?}", xv.shape()),
            );
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut norms = vec![0f32; outer * inner];
        let mut y = vec![0f32; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let n = (0..len)
                    .map(|k| {
                        let v = xv.data()[at(k)] as f64;
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt() as f32;
                norms[o * inner + i] = n;
                if n > 0.0 {
                    for k in 0..len {
                        y[at(k)] = xv.data()[at(k)] / n;
                    }
                } else {
                    log::debug!("l2_normalize: zero-norm lane at ({o}, {i})");
                }
            }
        }
        let out = Tensor::new(xv.shape(), y)?;
        self.push("l2_normalize", out, &[x], move |_, y, g| {
            let mut d = vec![0f32; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let n = norms[o * inner + i];
                    if n <= 0.0 {
                        continue;
                    }
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: f32 = (0..len).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                    for k in 0..len {
                        d[at(k)] = (g.data()[at(k)] - y.data()[at(k)] * dot) / n;
                    }
                }
            }
            vec![(x, Tensor::new(y.shape(), d).unwrap())]
        })
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return dim_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape()));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0f32; n * m];
        gemm(
            n,
            k,
            m,
            av.data(),
            [k, 1],
            bv.data(),
            [m, 1],
            &mut out,
            false,
        );
        let out = Tensor::new([n, m], out)?;
        self.push("matmul", out, &[a, b], move |nodes, _, g| {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let mut res = Vec::with_capacity(2);
            if needs(nodes, a) {
                // dA = G B^T
                let mut d = vec![0f32; n * k];
                gemm(n, m, k, g.data(), [m, 1], bv.data(), [1, m], &mut d, false);
                res.push((a, Tensor::new([n, k], d).unwrap()));
            }
            if needs(nodes, b) {
                // dB = A^T G
                let mut d = vec![0f32; k * m];
                gemm(k, n, m, av.data(), [1, k], g.data(), [m, 1], &mut d, false);
                res.push((b, Tensor::new([k, m], d).unwrap()));
            }
            res
        })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return dim_err("transpose", format!("expected 2-D, got {:?}", xv.shape()));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let out = Tensor::new([c, r], transpose2d(xv.data(), r, c))?;
        self.push("transpose", out, &[x], move |_, _, g| {
            vec![(x, Tensor::new([r, c], transpose2d(g.data(), c, r)).unwrap())]
        })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let old = xv.shape().to_vec();
        let out = xv.clone().reshape(shape.to_vec())?;
        self.push("reshape", out, &[x], move |_, _, g| {
            vec![(x, g.clone().reshape(old.clone()).unwrap())]
        })
    }

    /// `len` consecutive slices starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() || start + len > xv.shape()[axis] {
            return dim_err(
                "narrow",
                format!(
                    "[{start}, {}) on axis {axis} of {:?}",
                    start + len,
                    xv.shape()
                ),
            );
        }
        let (outer, full, inner) = split_axis(xv.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        self.push("narrow", out, &[x], move |nodes, _, g| {
            let mut d = Tensor::zeros(nodes[x.0].value.shape());
            for o in 0..outer {
                let base = (o * full + start) * inner;
                d.data_mut()[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![(x, d)]
        })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return dim_err("concat", "no inputs");
        };
        let ref_shape = self.value(first).shape().to_vec();
        if axis >= ref_shape.len() {
            return dim_err("concat", format!("axis {axis} for shape {ref_shape:?}"));
        }
        let mut extents = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            let compatible = s.len() == ref_shape.len()
                && s.iter()
                    .zip(&ref_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return dim_err("concat", format!("{s:?} vs {ref_shape:?} on axis {axis}"));
            }
            extents.push(s[axis]);
        }
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = split_axis(&ref_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &e) in xs.iter().zip(&extents) {
                let src = self.value(x).data();
                data.extend_from_slice(&src[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let inputs = xs.to_vec();
        self.push("concat", out, xs, move |nodes, _, g| {
            let mut grads: Vec<Vec<f32>> = extents
                .iter()
                .map(|&e| Vec::with_capacity(outer * e * inner))
                .collect();
            let mut cursor = 0;
            for _ in 0..outer {
                for (gv, &e) in grads.iter_mut().zip(&extents) {
                    gv.extend_from_slice(&g.data()[cursor..cursor + e * inner]);
                    cursor += e * inner;
                }
            }
            inputs
                .iter()
                .zip(grads)
                .filter(|(v, _)| needs(nodes, **v))
                .map(|(&v, gv)| (v, Tensor::new(nodes[v.0].value.shape(), gv).unwrap()))
                .collect()
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return dim_err("stack", "no inputs");
        };
        let mut shape = vec![1];
        shape.extend_from_slice(self.value(first).shape());
        let expanded = xs
            .iter()
            .map(|&x| self.reshape(x, &shape))
            .collect::<Result<Vec<_>>>()?;
        self.concat(&expanded, 0)
    }

    /// Index `i` of the leading axis, which is removed.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let shape = self.value(x).shape()[1..].to_vec();
        let n = self.narrow(x, 0, i, 1)?;
        self.reshape(n, &shape)
    }

    /// `out[k] = x.flat[indices[k]]`, reshaped to `shape`. Repeated indices
    /// accumulate gradient.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != indices.len() {
            return dim_err(
                "gather",
                format!("{} indices for shape {shape:?}", indices.len()),
            );
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return dim_err("gather", format!("index {bad} out of range {}", xv.len()));
        }
        let data = indices.iter().map(|&i| xv.data()[i]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        self.push("gather", out, &[x], move |nodes, _, g| {
            let mut d = Tensor::zeros(nodes[x.0].value.shape());
            for (&i, &gi) in indices.iter().zip(g.data()) {
                d.data_mut()[i] += gi;
            }
            vec![(x, d)]
        })
    }

    /// Batch normalisation over every axis except channel axis 1 of a
    /// `[B, C, H, W]` input. In training mode the batch statistics are used
    /// and returned (mean, unbiased variance) so the caller can update running
    /// estimates; otherwise `running` is applied as a fixed affine map.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f32], &[f32]),
        train: bool,
        eps: f32,
    ) -> Result<(Var, Option<(Vec<f32>, Vec<f32>)>)> {
        let xv = self.value(x);
        if xv.ndim() != 4 {
            return dim_err(
                "batchnorm2d",
                format!("expected [B,C,H,W], got {:?}", xv.shape()),
            );
        }
        let (b, c, plane) = (xv.shape()[0], xv.shape()[1], xv.shape()[2] * xv.shape()[3]);
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return dim_err("batchnorm2d", "affine parameters must have shape [C]");
        }
        if running.0.len() != c || running.1.len() != c {
            return dim_err("batchnorm2d", "running statistics must have length C");
        }
        let count = b * plane;
        let lane = move |ch: usize| {
            (0..b).flat_map(move |bi| (bi * c + ch) * plane..(bi * c + ch + 1) * plane)
        };
        let (mean, var, batch_stats) = if train {
            let mut mean = vec![0f32; c];
            let mut var = vec![0f32; c];
            let mut unbiased = vec![0f32; c];
            for ch in 0..c {
                let m = lane(ch).map(|i| xv.data()[i] as f64).sum::<f64>() / count as f64;
                let ss = lane(ch)
                    .map(|i| {
                        let d = xv.data()[i] as f64 - m;
                        d * d
                    })
                    .sum::<f64>();
                mean[ch] = m as f32;
                var[ch] = (ss / count as f64) as f32;
                unbiased[ch] = (ss / (count.max(2) - 1) as f64) as f32;
            }
            (mean.clone(), var, Some((mean, unbiased)))
        } else {
            (running.0.to_vec(), running.1.to_vec(), None)
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0f32; xv.len()];
        let mut y = vec![0f32; xv.len()];
        for ch in 0..c {
            for i in lane(ch) {
                xhat[i] = (xv.data()[i] - mean[ch]) * inv_std[ch];
                y[i] = gv[ch] * xhat[i] + bv[ch];
            }
        }
        let out = Tensor::new(xv.shape(), y)?;
        let var_out = self.push("batchnorm2d", out, &[x, gamma, beta], move |nodes, _, g| {
            let gam = nodes[gamma.0].value.data();
            let mut dgamma = vec![0f32; c];
            let mut dbeta = vec![0f32; c];
            let mut dx = vec![0f32; xhat.len()];
            for ch in 0..c {
                let (mut sg, mut sgx) = (0f64, 0f64);
                for i in lane(ch) {
                    sg += g.data()[i] as f64;
                    sgx += (g.data()[i] * xhat[i]) as f64;
                }
                dgamma[ch] = sgx as f32;
                dbeta[ch] = sg as f32;
                let k = gam[ch] * inv_std[ch];
                if train {
                    let (mg, mgx) = ((sg / count as f64) as f32, (sgx / count as f64) as f32);
                    for i in lane(ch) {
                        dx[i] = k * (g.data()[i] - mg - xhat[i] * mgx);
                    }
                } else {
                    for i in lane(ch) {
                        dx[i] = k * g.data()[i];
                    }
                }
            }
            let shape = nodes[x.0].value.shape();
            vec![
                (x, Tensor::new(shape, dx).unwrap()),
                (gamma, Tensor::new([c], dgamma).unwrap()),
                (beta, Tensor::new([c], dbeta).unwrap()),
            ]
        })?;
        Ok((var_out, batch_stats))
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn huber(e: f32, delta: f32) -> f32 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn softmax_lanes(x: &[f32], outer: usize, len: usize, inner: usize, log: bool) -> Vec<f32> {
    let mut y = vec![0f32; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = (0..len).map(|k| ((x[at(k)] - max) as f64).exp()).sum();
            let lz = z.ln() as f32;
            for k in 0..len {
                let s = x[at(k)] - max;
                y[at(k)] = if log {
                    s - lz
                } else {
                    ((s as f64).exp() / z) as f32
                };
            }
        }
    }
    y
}

fn transpose2d(x: &[f32], r: usize, c: usize) -> Vec<f32> {
    let mut out = vec![0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// `c (+)= a * b` for row-major `c` of shape `[m, n]`; `a` and `b` are given by
/// (row stride, column stride).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: [usize; 2],
    b: &[f32],
    b_strides: [usize; 2],
    c: &mut [f32],
    accumulate: bool,
) {
    gemm_strided(m, k, n, a, a_strides, b, b_strides, c, [n, 1], accumulate);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: [usize; 2],
    b: &[f32],
    b_strides: [usize; 2],
    c: &mut [f32],
    c_strides: [usize; 2],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides[0] + (k - 1) * a_strides[1]);
    assert!(k == 0 || b.len() > (k - 1) * b_strides[0] + (n - 1) * b_strides[1]);
    assert!(c.len() > (m - 1) * c_strides[0] + (n - 1) * c_strides[1]);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides[0] as isize,
            a_strides[1] as isize,
            b.as_ptr(),
            b_strides[0] as isize,
            b_strides[1] as isize,
            beta,
            c.as_mut_ptr(),
            c_strides[0] as isize,
            c_strides[1] as isize,
        );
    }
}
