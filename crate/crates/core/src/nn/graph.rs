//! Reverse-mode differentiation over NCHW `f32` tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over node indices is a valid
//! topological order for backpropagation.

use alloc::vec;
use alloc::vec::Vec;

use super::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, slope: f32 },
    Sigmoid { x: Var },
    AvgPool2 { x: Var },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2 { x: Var },
    Add { a: Var, b: Var },
    Concat { a: Var, b: Var },
    Reshape { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, inv_std: Vec<f32>, train: bool },
    GlobalAvgPool { x: Var },
}

/// Per-channel statistics of a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f32>,
}

#[derive(Debug, Default)]
pub struct Graph {
    shapes: Vec<Shape>,
    values: Vec<Vec<f32>>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Shape, value: Vec<f32>, op: Op, requires: bool) -> Var {
        debug_assert_eq!(shape.len(), value.len());
        self.shapes.push(shape);
        self.values.push(value);
        self.ops.push(op);
        self.requires.push(requires);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Constant input; gradients are not tracked.
    pub fn input(&mut self, shape: Shape, data: Vec<f32>) -> Var {
        assert_eq!(shape.len(), data.len(), "input buffer length");
        self.push(shape, data, Op::Leaf, false)
    }

    /// Leaf whose gradient is collected when `requires_grad` is set.
    pub fn leaf(&mut self, shape: Shape, data: Vec<f32>, requires_grad: bool) -> Var {
        assert_eq!(shape.len(), data.len(), "leaf buffer length");
        self.push(shape, data, Op::Leaf, requires_grad)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.shapes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads[v.0].take()
    }

    fn req(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        assert_eq!(xs.c, ws.c, "conv input channels");
        let k = ws.h;
        let (co, ho, wo) = (ws.n, conv_out(xs.h, k, stride, pad), conv_out(xs.w, k, stride, pad));
        let kk = xs.c * k * k;
        let plane = ho * wo;
        let mut out = vec![0.0f32; xs.n * co * plane];
        let mut cols = vec![0.0f32; kk * plane];
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let bv = &self.values[b.0];
        for n in 0..xs.n {
            im2col(&xv[n * xs.sample_len()..(n + 1) * xs.sample_len()], xs, k, stride, pad, ho, wo, &mut cols);
            let o = &mut out[n * co * plane..(n + 1) * co * plane];
            for c in 0..co {
                o[c * plane..(c + 1) * plane].fill(bv[c]);
            }
            gemm(co, kk, plane, wv, kk, 1, &cols, plane, 1, o, plane, 1.0);
        }
        let req = self.req(&[x, w, b]);
        self.push(Shape::new(xs.n, co, ho, wo), out, Op::Conv2d { x, w, b, stride, pad }, req)
    }

    /// Fully connected layer over the flattened per-sample features.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let (inp, outp) = (xs.sample_len(), ws.n);
        assert_eq!(ws.sample_len(), inp, "linear input features");
        let mut out = vec![0.0f32; xs.n * outp];
        let bv = &self.values[b.0];
        for row in out.chunks_mut(outp) {
            row.copy_from_slice(bv);
        }
        // y (n×out) += x (n×in) · Wᵀ (in×out)
        gemm(xs.n, inp, outp, &self.values[x.0], inp, 1, &self.values[w.0], 1, inp, &mut out, outp, 1.0);
        let req = self.req(&[x, w, b]);
        self.push(Shape::new(xs.n, outp, 1, 1), out, Op::Linear { x, w, b }, req)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.values[x.0].iter().map(|&v| if v > 0.0 { v } else { v * slope }).collect();
        let req = self.req(&[x]);
        self.push(self.shape(x), out, Op::LeakyRelu { x, slope }, req)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.values[x.0].iter().map(|&v| sigmoid(v)).collect();
        let req = self.req(&[x]);
        self.push(self.shape(x), out, Op::Sigmoid { x }, req)
    }

    /// 2×2 average pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (ho, wo) = (s.h / 2, s.w / 2);
        let xv = &self.values[x.0];
        let mut out = vec![0.0f32; s.n * s.c * ho * wo];
        for p in 0..s.n * s.c {
            let src = &xv[p * s.h * s.w..];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * s.w + 2 * ox;
                    out[p * ho * wo + oy * wo + ox] = 0.25 * (src[i] + src[i + 1] + src[i + s.w] + src[i + s.w + 1]);
                }
            }
        }
        let req = self.req(&[x]);
        self.push(Shape::new(s.n, s.c, ho, wo), out, Op::AvgPool2 { x }, req)
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (ho, wo) = (s.h / 2, s.w / 2);
        let xv = &self.values[x.0];
        let mut out = vec![0.0f32; s.n * s.c * ho * wo];
        let mut argmax = vec![0u32; out.len()];
        for p in 0..s.n * s.c {
            let base = p * s.h * s.w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = base + 2 * oy * s.w + 2 * ox;
                    let mut best = i;
                    for j in [i + 1, i + s.w, i + s.w + 1] {
                        if xv[j] > xv[best] {
                            best = j;
                        }
                    }
                    let o = p * ho * wo + oy * wo + ox;
                    out[o] = xv[best];
                    argmax[o] = best as u32;
                }
            }
        }
        let req = self.req(&[x]);
        self.push(Shape::new(s.n, s.c, ho, wo), out, Op::MaxPool2 { x, argmax }, req)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (ho, wo) = (s.h * 2, s.w * 2);
        let xv = &self.values[x.0];
        let mut out = vec![0.0f32; s.n * s.c * ho * wo];
        for p in 0..s.n * s.c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[p * ho * wo + oy * wo + ox] = xv[p * s.h * s.w + (oy / 2) * s.w + ox / 2];
                }
            }
        }
        let req = self.req(&[x]);
        self.push(Shape::new(s.n, s.c, ho, wo), out, Op::Upsample2 { x }, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.values[a.0].iter().zip(&self.values[b.0]).map(|(x, y)| x + y).collect();
        let req = self.req(&[a, b]);
        self.push(self.shape(a), out, Op::Add { a, b }, req)
    }

    /// Channel-wise concatenation of two tensors with equal n, h, w.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat shapes");
        let (la, lb) = (sa.sample_len(), sb.sample_len());
        let mut out = Vec::with_capacity(sa.len() + sb.len());
        for n in 0..sa.n {
            out.extend_from_slice(&self.values[a.0][n * la..(n + 1) * la]);
            out.extend_from_slice(&self.values[b.0][n * lb..(n + 1) * lb]);
        }
        let req = self.req(&[a, b]);
        self.push(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), out, Op::Concat { a, b }, req)
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Var {
        assert_eq!(self.shape(x).len(), shape.len(), "reshape length");
        let out = self.values[x.0].clone();
        let req = self.req(&[x]);
        self.push(shape, out, Op::Reshape { x }, req)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let plane = s.h * s.w;
        let out = self.values[x.0]
            .chunks(plane)
            .map(|c| c.iter().sum::<f32>() / plane as f32)
            .collect();
        let req = self.req(&[x]);
        self.push(Shape::new(s.n, s.c, 1, 1), out, Op::GlobalAvgPool { x }, req)
    }

    /// Batch normalization with batch statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> (Var, BatchStats) {
        let s = self.shape(x);
        let m = (s.n * s.h * s.w) as f64;
        let plane = s.h * s.w;
        let xv = &self.values[x.0];
        let mut mean = vec![0.0f32; s.c];
        let mut var_b = vec![0.0f32; s.c];
        let mut var_u = vec![0.0f32; s.c];
        for c in 0..s.c {
            let mut sum = 0.0f64;
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                sum += xv[off..off + plane].iter().map(|&v| v as f64).sum::<f64>();
            }
            let mu = sum / m;
            let mut sq = 0.0f64;
            for n in 0..s.n {
                let off = (n * s.c + c) * plane;
                sq += xv[off..off + plane].iter().map(|&v| (v as f64 - mu) * (v as f64 - mu)).sum::<f64>();
            }
            mean[c] = mu as f32;
            var_b[c] = (sq / m) as f32;
            var_u[c] = if m > 1.0 { (sq / (m - 1.0)) as f32 } else { 0.0 };
        }
        let inv_std: Vec<f32> = var_b.iter().map(|&v| 1.0 / libm::sqrtf(v + eps)).collect();
        let v = self.normalize_channels(x, gamma, beta, &mean, inv_std, true);
        (v, BatchStats { mean, var: var_u })
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f32], var: &[f32], eps: f32) -> Var {
        let inv_std = var.iter().map(|&v| 1.0 / libm::sqrtf(v + eps)).collect();
        self.normalize_channels(x, gamma, beta, mean, inv_std, false)
    }

    fn normalize_channels(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f32], inv_std: Vec<f32>, train: bool) -> Var {
        let s = self.shape(x);
        let plane = s.h * s.w;
        let xv = &self.values[x.0];
        let g = &self.values[gamma.0];
        let b = &self.values[beta.0];
        let mut xhat = vec![0.0f32; s.len()];
        let mut out = vec![0.0f32; s.len()];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                for i in off..off + plane {
                    let h = (xv[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + b[c];
                }
            }
        }
        let req = self.req(&[x, gamma, beta]);
        self.push(
            s,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            req,
        )
    }

    /// Backpropagates `seed` (the gradient of a scalar objective with respect
    /// to `out`) through every node that requires a gradient.
    pub fn backward(&mut self, out: Var, seed: &[f32]) {
        self.backward_many(&[(out, seed)]);
    }

    /// Backpropagates several output gradients in one sweep.
    pub fn backward_many(&mut self, seeds: &[(Var, &[f32])]) {
        let mut last = None;
        for &(out, seed) in seeds {
            assert_eq!(seed.len(), self.values[out.0].len(), "seed gradient length");
            if !self.requires[out.0] {
                continue;
            }
            accumulate(&mut self.grads, out, seed.len(), |g| {
                for (d, s) in g.iter_mut().zip(seed) {
                    *d += s;
                }
            });
            last = last.max(Some(out.0));
        }
        let Some(last) = last else { return };
        for i in (0..=last).rev() {
            if !self.requires[i] {
                continue;
            }
            let Some(gy) = self.grads[i].take() else { continue };
            self.backward_node(i, &gy);
            self.grads[i] = Some(gy);
        }
    }

    fn backward_node(&mut self, i: usize, gy: &[f32]) {
        let Graph {
            shapes,
            values,
            ops,
            requires,
            grads,
        } = self;
        let wants = |v: &Var| requires[v.0];
        match &ops[i] {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (x, w, b, stride, pad) = (*x, *w, *b, *stride, *pad);
                let xs = shapes[x.0];
                let ws = shapes[w.0];
                let ys = shapes[i];
                let k = ws.h;
                let (co, plane, kk) = (ws.n, ys.h * ys.w, xs.c * k * k);
                if wants(&b) {
                    accumulate(grads, b, co, |gb| {
                        for n in 0..xs.n {
                            for c in 0..co {
                                let off = (n * co + c) * plane;
                                gb[c] += gy[off..off + plane].iter().sum::<f32>();
                            }
                        }
                    });
                }
                let need_w = wants(&w);
                let need_x = wants(&x);
                if !need_w && !need_x {
                    return;
                }
                let mut cols = vec![0.0f32; kk * plane];
                let mut dcols = vec![0.0f32; if need_x { kk * plane } else { 0 }];
                let mut gw_acc = if need_w { Some(vec![0.0f32; ws.len()]) } else { None };
                let mut gx_acc = if need_x { Some(vec![0.0f32; xs.len()]) } else { None };
                let xv = &values[x.0];
                let wv = &values[w.0];
                for n in 0..xs.n {
                    let gyn = &gy[n * co * plane..(n + 1) * co * plane];
                    if let Some(gw) = gw_acc.as_mut() {
                        im2col(&xv[n * xs.sample_len()..(n + 1) * xs.sample_len()], xs, k, stride, pad, ys.h, ys.w, &mut cols);
                        // dW (co×kk) += dY (co×plane) · colsᵀ (plane×kk)
                        gemm(co, plane, kk, gyn, plane, 1, &cols, 1, plane, gw, kk, 1.0);
                    }
                    if let Some(gx) = gx_acc.as_mut() {
                        dcols.fill(0.0);
                        // dcols (kk×plane) = Wᵀ (kk×co) · dY (co×plane)
                        gemm(kk, co, plane, wv, 1, kk, gyn, plane, 1, &mut dcols, plane, 0.0);
                        col2im(&dcols, xs, k, stride, pad, ys.h, ys.w, &mut gx[n * xs.sample_len()..(n + 1) * xs.sample_len()]);
                    }
                }
                if let Some(gw) = gw_acc {
                    add_into(grads, w, &gw);
                }
                if let Some(gx) = gx_acc {
                    add_into(grads, x, &gx);
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = shapes[x.0];
                let (inp, outp) = (xs.sample_len(), shapes[w.0].n);
                if wants(&b) {
                    accumulate(grads, b, outp, |gb| {
                        for row in gy.chunks(outp) {
                            for (d, g) in gb.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                    });
                }
                if wants(&w) {
                    let xv = &values[x.0];
                    accumulate(grads, w, outp * inp, |gw| {
                        // dW (out×in) += dYᵀ (out×n) · X (n×in)
                        gemm(outp, xs.n, inp, gy, 1, outp, xv, inp, 1, gw, inp, 1.0);
                    });
                }
                if wants(&x) {
                    let wv = &values[w.0];
                    accumulate(grads, x, xs.len(), |gx| {
                        // dX (n×in) += dY (n×out) · W (out×in)
                        gemm(xs.n, outp, inp, gy, outp, 1, wv, inp, 1, gx, inp, 1.0);
                    });
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &values[x.0];
                let slope = *slope;
                accumulate(grads, *x, xv.len(), |gx| {
                    for ((d, &g), &v) in gx.iter_mut().zip(gy).zip(xv) {
                        *d += if v > 0.0 { g } else { g * slope };
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = &values[i];
                accumulate(grads, *x, yv.len(), |gx| {
                    for ((d, &g), &y) in gx.iter_mut().zip(gy).zip(yv) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            Op::AvgPool2 { x } => {
                let s = shapes[x.0];
                let (ho, wo) = (s.h / 2, s.w / 2);
                accumulate(grads, *x, s.len(), |gx| {
                    for p in 0..s.n * s.c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = 0.25 * gy[p * ho * wo + oy * wo + ox];
                                let j = p * s.h * s.w + 2 * oy * s.w + 2 * ox;
                                gx[j] += g;
                                gx[j + 1] += g;
                                gx[j + s.w] += g;
                                gx[j + s.w + 1] += g;
                            }
                        }
                    }
                });
            }
            Op::MaxPool2 { x, argmax } => {
                let len = shapes[x.0].len();
                accumulate(grads, *x, len, |gx| {
                    for (&j, &g) in argmax.iter().zip(gy) {
                        gx[j as usize] += g;
                    }
                });
            }
            Op::Upsample2 { x } => {
                let s = shapes[x.0];
                let (ho, wo) = (s.h * 2, s.w * 2);
                accumulate(grads, *x, s.len(), |gx| {
                    for p in 0..s.n * s.c {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                gx[p * s.h * s.w + (oy / 2) * s.w + ox / 2] += gy[p * ho * wo + oy * wo + ox];
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(&v) {
                        add_into(grads, v, gy);
                    }
                }
            }
            Op::Concat { a, b } => {
                let (a, b) = (*a, *b);
                let (sa, sb) = (shapes[a.0], shapes[b.0]);
                let (la, lb) = (sa.sample_len(), sb.sample_len());
                if wants(&a) {
                    accumulate(grads, a, sa.len(), |ga| {
                        for n in 0..sa.n {
                            let src = &gy[n * (la + lb)..n * (la + lb) + la];
                            for (d, s) in ga[n * la..(n + 1) * la].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                }
                if wants(&b) {
                    accumulate(grads, b, sb.len(), |gb| {
                        for n in 0..sb.n {
                            let src = &gy[n * (la + lb) + la..(n + 1) * (la + lb)];
                            for (d, s) in gb[n * lb..(n + 1) * lb].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                }
            }
            Op::Reshape { x } => add_into(grads, *x, gy),
            Op::GlobalAvgPool { x } => {
                let s = shapes[x.0];
                let plane = s.h * s.w;
                accumulate(grads, *x, s.len(), |gx| {
                    for (p, &g) in gy.iter().enumerate() {
                        let g = g / plane as f32;
                        for d in &mut gx[p * plane..(p + 1) * plane] {
                            *d += g;
                        }
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = shapes[x.0];
                let plane = s.h * s.w;
                let m = (s.n * plane) as f32;
                let gv = &values[gamma.0];
                let mut sum_g = vec![0.0f32; s.c];
                let mut sum_gx = vec![0.0f32; s.c];
                for n in 0..s.n {
                    for c in 0..s.c {
                        let off = (n * s.c + c) * plane;
                        for j in off..off + plane {
                            sum_g[c] += gy[j];
                            sum_gx[c] += gy[j] * xhat[j];
                        }
                    }
                }
                if wants(beta) {
                    add_into(grads, *beta, &sum_g);
                }
                if wants(gamma) {
                    add_into(grads, *gamma, &sum_gx);
                }
                if wants(x) {
                    let train = *train;
                    accumulate(grads, *x, s.len(), |gx| {
                        for n in 0..s.n {
                            for c in 0..s.c {
                                let off = (n * s.c + c) * plane;
                                let k = gv[c] * inv_std[c];
                                for j in off..off + plane {
                                    gx[j] += if train {
                                        k * (gy[j] - sum_g[c] / m - xhat[j] * sum_gx[c] / m)
                                    } else {
                                        k * gy[j]
                                    };
                                }
                            }
                        }
                    });
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::expf(-v))
    } else {
        let e = libm::expf(v);
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], v: Var, len: usize, f: impl FnOnce(&mut [f32])) {
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

fn add_into(grads: &mut [Option<Vec<f32>>], v: Var, src: &[f32]) {
    match &mut grads[v.0] {
        Some(g) => {
            for (d, s) in g.iter_mut().zip(src) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(src.to_vec()),
    }
}

fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - k) / stride + 1
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], s: Shape, k: usize, stride: usize, pad: usize, ho: usize, wo: usize, cols: &mut [f32]) {
    let plane = ho * wo;
    for c in 0..s.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * plane..][..plane];
                let (lo, hi) = valid_range(kx, pad, stride, s.w, wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy as usize >= s.h || lo >= hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[c * s.h * s.w + iy as usize * s.w..][..s.w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    let start = lo * stride + kx - pad;
                    if stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, v) in dst[lo..hi].iter_mut().zip(src[start..].iter().step_by(stride)) {
                            *d = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose input column `o·stride + kx − pad` is in bounds.
fn valid_range(kx: usize, pad: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    let hi = if w + pad > kx { (w + pad - kx).div_ceil(stride).min(wo) } else { 0 };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f32], s: Shape, k: usize, stride: usize, pad: usize, ho: usize, wo: usize, gx: &mut [f32]) {
    let plane = ho * wo;
    for c in 0..s.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * plane..][..plane];
                let (lo, hi) = valid_range(kx, pad, stride, s.w, wo);
                if lo >= hi {
                    continue;
                }
                let start = lo * stride + kx - pad;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    let dst = &mut gx[c * s.h * s.w + iy as usize * s.w..][..s.w];
                    let src = &row[oy * wo + lo..oy * wo + hi];
                    if stride == 1 {
                        for (d, v) in dst[start..start + hi - lo].iter_mut().zip(src) {
                            *d += v;
                        }
                    } else {
                        for (d, v) in dst[start..].iter_mut().step_by(stride).zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = a·b + beta·c` for row/column-strided `f32` matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
    rsc: usize,
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    assert!(b.len() >= (k.max(1) - 1) * rsb + (n - 1) * csb + 1 || k == 0);
    assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}
