//! Differentiable operations on [`Var`].

use std::rc::Rc;

use crate::error::{invalid, mismatch, Error, Result};

use super::array::Tensor;
use super::graph::Var;
use super::linalg::{col2im, gemm, im2col, ConvGeom, Trans};
use super::scalar::Scalar;

/// Pointwise operators accepted by [`Var::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pointwise {
    Scale(f64),
    AddScalar(f64),
    Tanh,
    Relu,
    LeakyRelu(f64),
    Abs,
}

impl<'g, S: Scalar> Var<'g, S> {
    fn unary(
        self,
        f: impl Fn(S) -> S,
        df: impl Fn(S, S) -> S + 'static,
    ) -> Var<'g, S> {
        let x = self.value();
        let y = Rc::new(x.map(f));
        let y_saved = Rc::clone(&y);
        self.graph.record((*y).clone(), &[self], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(y_saved.data()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    pub fn elementwise(self, op: Pointwise) -> Var<'g, S> {
        match op {
            Pointwise::Scale(k) => {
                let k = S::of(k);
                self.unary(move |x| x * k, move |_, _| k)
            }
            Pointwise::AddScalar(k) => {
                let k = S::of(k);
                self.unary(move |x| x + k, |_, _| S::one())
            }
            Pointwise::Tanh => self.unary(|x| x.tanh(), |_, y| S::one() - y * y),
            Pointwise::Relu => self.unary(
                |x| if x > S::zero() { x } else { S::zero() },
                |x, _| if x > S::zero() { S::one() } else { S::zero() },
            ),
            Pointwise::LeakyRelu(slope) => {
                let a = S::of(slope);
                self.unary(
                    move |x| if x > S::zero() { x } else { a * x },
                    move |x, _| if x > S::zero() { S::one() } else { a },
                )
            }
            Pointwise::Abs => self.unary(
                |x| x.abs(),
                |x, _| {
                    if x > S::zero() {
                        S::one()
                    } else if x < S::zero() {
                        -S::one()
                    } else {
                        S::zero()
                    }
                },
            ),
        }
    }

    pub fn scale(self, k: f64) -> Var<'g, S> {
        self.elementwise(Pointwise::Scale(k))
    }

    pub fn add_scalar(self, k: f64) -> Var<'g, S> {
        self.elementwise(Pointwise::AddScalar(k))
    }

    pub fn tanh(self) -> Var<'g, S> {
        self.elementwise(Pointwise::Tanh)
    }

    pub fn relu(self) -> Var<'g, S> {
        self.elementwise(Pointwise::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g, S> {
        self.elementwise(Pointwise::LeakyRelu(slope))
    }

    pub fn abs(self) -> Var<'g, S> {
        self.elementwise(Pointwise::Abs)
    }

    fn same_shape(&self, other: &Var<'g, S>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(mismatch(op, &a, &b));
        }
        Ok(())
    }

    pub fn add(self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        self.same_shape(&other, "add")?;
        let y = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self
            .graph
            .record(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        self.same_shape(&other, "sub")?;
        let y = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self
            .graph
            .record(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        self.same_shape(&other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, |x, y| x * y);
        Ok(self.graph.record(y, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |g, b| g * b)),
                needs[1].then(|| g.zip_map(&a, |g, a| g * a)),
            ]
        }))
    }

    /// Multiplies every element by a one-element variable (a learnable gain).
    pub fn scale_by(self, gain: Var<'g, S>) -> Result<Var<'g, S>> {
        let k = gain.value();
        if k.numel() != 1 {
            return Err(invalid("scale_by", format!("gain must have one element, got {:?}", k.shape())));
        }
        let x = self.value();
        let kv = k.item();
        let y = x.map(|v| v * kv);
        let gain_shape = k.shape().to_vec();
        Ok(self.graph.record(y, &[self, gain], move |g, needs| {
            vec![
                needs[0].then(|| g.map(|v| v * kv)),
                needs[1].then(|| {
                    let s: S = g.data().iter().zip(x.data()).map(|(&g, &x)| g * x).sum();
                    Tensor::from_parts(gain_shape.clone(), vec![s])
                }),
            ]
        }))
    }

    /// `[C,H,W] * [1,H,W]`, broadcasting the plane over channels.
    pub fn mul_plane(self, plane: Var<'g, S>) -> Result<Var<'g, S>> {
        let x = self.value();
        let m = plane.value();
        let [c, h, w] = x.dims3("mul_plane")?;
        if m.shape() != [1, h, w] {
            return Err(mismatch("mul_plane", x.shape(), m.shape()));
        }
        let hw = h * w;
        let mut y = Vec::with_capacity(c * hw);
        for ch in 0..c {
            y.extend(x.data()[ch * hw..(ch + 1) * hw].iter().zip(m.data()).map(|(&a, &b)| a * b));
        }
        Ok(self.graph.record(
            Tensor::from_parts(vec![c, h, w], y),
            &[self, plane],
            move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut out = g.clone();
                    for ch in 0..c {
                        for (o, &mv) in out.data_mut()[ch * hw..(ch + 1) * hw].iter_mut().zip(m.data()) {
                            *o *= mv;
                        }
                    }
                    out
                });
                let gm = needs[1].then(|| {
                    let mut acc = vec![S::zero(); hw];
                    for ch in 0..c {
                        let gs = &g.data()[ch * hw..(ch + 1) * hw];
                        let xs = &x.data()[ch * hw..(ch + 1) * hw];
                        for ((a, &gv), &xv) in acc.iter_mut().zip(gs).zip(xs) {
                            *a += gv * xv;
                        }
                    }
                    Tensor::from_parts(vec![1, h, w], acc)
                });
                vec![gx, gm]
            },
        ))
    }

    pub fn sum(self) -> Var<'g, S> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph.record(Tensor::scalar(x.sum()), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Var<'g, S> {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as f64)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, S>> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        Ok(self.graph.record(y, &[self], move |g, _| {
            vec![Some(Tensor::from_parts(orig.clone(), g.data().to_vec()))]
        }))
    }

    pub fn transpose(self) -> Result<Var<'g, S>> {
        let y = self.value().transpose()?;
        Ok(self.graph.record(y, &[self], |g, _| {
            vec![Some(g.transpose().expect("gradient of a matrix is a matrix"))]
        }))
    }

    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'g, S>> {
        let x = self.value();
        let y = x.slice_channels(start, len)?;
        let [c, h, w] = x.dims3("slice_channels")?;
        Ok(self.graph.record(y, &[self], move |g, _| {
            let plane = h * w;
            let mut out = Tensor::zeros(&[c, h, w]);
            out.data_mut()[start * plane..(start + len) * plane].copy_from_slice(g.data());
            vec![Some(out)]
        }))
    }

    pub fn matmul(self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let (a, b) = (self.value(), other.value());
        let [m, k] = a.dims2("matmul")?;
        let [k2, n] = b.dims2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let mut y = vec![S::zero(); m * n];
        gemm(m, k, n, a.data(), Trans::No, b.data(), Trans::No, &mut y, false);
        Ok(self.graph.record(
            Tensor::from_parts(vec![m, n], y),
            &[self, other],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut out = vec![S::zero(); m * k];
                    gemm(m, n, k, g.data(), Trans::No, b.data(), Trans::Yes, &mut out, false);
                    Tensor::from_parts(vec![m, k], out)
                });
                let gb = needs[1].then(|| {
                    let mut out = vec![S::zero(); k * n];
                    gemm(k, m, n, a.data(), Trans::Yes, g.data(), Trans::No, &mut out, false);
                    Tensor::from_parts(vec![k, n], out)
                });
                vec![ga, gb]
            },
        ))
    }

    /// Row-wise softmax of a matrix, computed with max subtraction.
    pub fn softmax_rows(self) -> Result<Var<'g, S>> {
        let x = self.value();
        let [r, c] = x.dims2("softmax_rows")?;
        if !x.is_finite() {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let y = Rc::new(softmax_lanes(&x, r, c, 1, c));
        let saved = Rc::clone(&y);
        Ok(self.graph.record((*y).clone(), &[self], move |g, _| {
            vec![Some(softmax_lanes_backward(&saved, g, r, c, 1, c))]
        }))
    }

    /// Softmax across the channel axis of `[C,H,W]`, independently per pixel.
    pub fn softmax_channels(self) -> Result<Var<'g, S>> {
        let x = self.value();
        let [c, h, w] = x.dims3("softmax_channels")?;
        if !x.is_finite() {
            return Err(Error::NonFinite { op: "softmax_channels" });
        }
        let hw = h * w;
        let y = Rc::new(softmax_lanes(&x, hw, c, hw, 1));
        let saved = Rc::clone(&y);
        Ok(self.graph.record((*y).clone(), &[self], move |g, _| {
            vec![Some(softmax_lanes_backward(&saved, g, hw, c, hw, 1))]
        }))
    }

    /// 2-D convolution of `[Cin,H,W]` (or a batch `[B,Cin,H,W]`) with
    /// `[Cout,Cin,k,k]`, zero padding.
    pub fn conv2d(
        self,
        weight: Var<'g, S>,
        bias: Option<Var<'g, S>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, S>> {
        let x = self.value();
        let w = weight.value();
        let (batch, [cin, h, wd]) = match x.shape()[..] {
            [b, c, h, w] if b > 0 => (Some(b), [c, h, w]),
            _ => (None, x.dims3("conv2d")?),
        };
        let n = batch.unwrap_or(1);
        let (cout, k) = match w.shape()[..] {
            [co, ci, k1, k2] if ci == cin && k1 == k2 && k1 >= 1 => (co, k1),
            _ => return Err(mismatch("conv2d", x.shape(), w.shape())),
        };
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(invalid(
                "conv2d",
                format!("kernel {k} stride {stride} pad {pad} does not fit input {:?}", x.shape()),
            ));
        }
        check_bias("conv2d", bias, cout)?;
        let geom = ConvGeom::new(cin, h, wd, k, stride, pad);
        let (rows, cols) = (geom.rows(), geom.cols());
        let plane = cin * h * wd;
        // Columns of every item side by side: one GEMM for the whole batch.
        let col = if n == 1 {
            im2col(x.data(), &geom)
        } else {
            let mut all = vec![S::zero(); rows * n * cols];
            for b in 0..n {
                let item = im2col(&x.data()[b * plane..(b + 1) * plane], &geom);
                for r in 0..rows {
                    all[(r * n + b) * cols..(r * n + b + 1) * cols].copy_from_slice(&item[r * cols..(r + 1) * cols]);
                }
            }
            all
        };
        let mut y = vec![S::zero(); cout * n * cols];
        gemm(cout, rows, n * cols, w.data(), Trans::No, &col, Trans::No, &mut y, false);
        if let Some(b) = bias {
            add_channel_bias(&mut y, b.value().data(), n * cols);
        }
        let shape = match batch {
            Some(b) => vec![b, cout, geom.out_h, geom.out_w],
            None => vec![cout, geom.out_h, geom.out_w],
        };
        let out = Tensor::from_parts(shape, swap_outer(&y, cout, n, cols));
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let in_shape = x.shape().to_vec();
        Ok(self.graph.record(out, &parents, move |g, needs| {
            let gm = swap_outer(g.data(), n, cout, cols);
            let mut grads = Vec::with_capacity(3);
            grads.push(needs[0].then(|| {
                let mut dcol = vec![S::zero(); rows * n * cols];
                gemm(rows, cout, n * cols, w.data(), Trans::Yes, &gm, Trans::No, &mut dcol, false);
                let mut dx = Vec::with_capacity(n * plane);
                let mut item = vec![S::zero(); rows * cols];
                for b in 0..n {
                    for r in 0..rows {
                        item[r * cols..(r + 1) * cols].copy_from_slice(&dcol[(r * n + b) * cols..(r * n + b + 1) * cols]);
                    }
                    dx.extend(col2im(&item, &geom));
                }
                Tensor::from_parts(in_shape.clone(), dx)
            }));
            grads.push(needs[1].then(|| {
                let mut dw = vec![S::zero(); cout * rows];
                gemm(cout, n * cols, rows, &gm, Trans::No, &col, Trans::Yes, &mut dw, false);
                Tensor::from_parts(vec![cout, cin, k, k], dw)
            }));
            if needs.len() > 2 {
                grads.push(needs[2].then(|| channel_sums(&gm, cout, n * cols)));
            }
            grads
        }))
    }

    /// Transposed convolution of `[Cin,H,W]` with `[Cin,Cout,k,k]`; output is
    /// `[Cout, (H-1)*stride - 2*pad + k, ...]`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'g, S>,
        bias: Option<Var<'g, S>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, S>> {
        let x = self.value();
        let w = weight.value();
        let [cin, h, wd] = x.dims3("conv_transpose2d")?;
        let (cout, k) = match w.shape()[..] {
            [ci, co, k1, k2] if ci == cin && k1 == k2 && k1 >= 1 => (co, k1),
            _ => return Err(mismatch("conv_transpose2d", x.shape(), w.shape())),
        };
        if stride == 0 || (h - 1) * stride + k <= 2 * pad || (wd - 1) * stride + k <= 2 * pad {
            return Err(invalid("conv_transpose2d", "padding exceeds output extent"));
        }
        check_bias("conv_transpose2d", bias, cout)?;
        let out_h = (h - 1) * stride + k - 2 * pad;
        let out_w = (wd - 1) * stride + k - 2 * pad;
        let geom = ConvGeom {
            channels: cout,
            height: out_h,
            width: out_w,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let rows = geom.rows();
        let cols = h * wd;
        let mut col = vec![S::zero(); rows * cols];
        gemm(rows, cin, cols, w.data(), Trans::Yes, x.data(), Trans::No, &mut col, false);
        let mut y = col2im(&col, &geom);
        if let Some(b) = bias {
            add_channel_bias(&mut y, b.value().data(), out_h * out_w);
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let out = Tensor::from_parts(vec![cout, out_h, out_w], y);
        Ok(self.graph.record(out, &parents, move |g, needs| {
            let gcol = im2col(g.data(), &geom);
            let mut grads = Vec::with_capacity(3);
            grads.push(needs[0].then(|| {
                let mut dx = vec![S::zero(); cin * cols];
                gemm(cin, rows, cols, w.data(), Trans::No, &gcol, Trans::No, &mut dx, false);
                Tensor::from_parts(vec![cin, h, wd], dx)
            }));
            grads.push(needs[1].then(|| {
                let mut dw = vec![S::zero(); cin * rows];
                gemm(cin, cols, rows, x.data(), Trans::No, &gcol, Trans::Yes, &mut dw, false);
                Tensor::from_parts(vec![cin, cout, k, k], dw)
            }));
            if needs.len() > 2 {
                grads.push(needs[2].then(|| channel_sums(g.data(), cout, out_h * out_w)));
            }
            grads
        }))
    }

    /// Per-channel normalization of `[C,H,W]` followed by an affine map.
    pub fn instance_norm(self, gamma: Var<'g, S>, beta: Var<'g, S>, eps: f64) -> Result<Var<'g, S>> {
        let x = self.value();
        let [c, h, w] = x.dims3("instance_norm")?;
        let hw = h * w;
        if hw < 2 {
            return Err(invalid("instance_norm", "needs at least two positions per channel"));
        }
        let (gm, bt) = (gamma.value(), beta.value());
        if gm.shape() != [c] || bt.shape() != [c] {
            return Err(mismatch("instance_norm", x.shape(), gm.shape()));
        }
        let n = S::of(hw as f64);
        let eps = S::of(eps);
        let mut xhat = vec![S::zero(); c * hw];
        let mut inv_std = vec![S::zero(); c];
        let mut y = vec![S::zero(); c * hw];
        for ch in 0..c {
            let xs = &x.data()[ch * hw..(ch + 1) * hw];
            let mean = xs.iter().copied().sum::<S>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for i in 0..hw {
                let xh = (xs[i] - mean) * is;
                xhat[ch * hw + i] = xh;
                y[ch * hw + i] = gm.data()[ch] * xh + bt.data()[ch];
            }
        }
        let out = Tensor::from_parts(vec![c, h, w], y);
        Ok(self.graph.record(out, &[self, gamma, beta], move |g, needs| {
            let gd = g.data();
            let mut dx = vec![S::zero(); c * hw];
            let mut dgamma = vec![S::zero(); c];
            let mut dbeta = vec![S::zero(); c];
            for ch in 0..c {
                let range = ch * hw..(ch + 1) * hw;
                let (gs, xh) = (&gd[range.clone()], &xhat[range.clone()]);
                let sum_g: S = gs.iter().copied().sum();
                let sum_gx: S = gs.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                dgamma[ch] = sum_gx;
                dbeta[ch] = sum_g;
                let scale = gm.data()[ch] * inv_std[ch] / n;
                for i in 0..hw {
                    dx[ch * hw + i] = scale * (n * gs[i] - sum_g - xh[i] * sum_gx);
                }
            }
            vec![
                needs[0].then(|| Tensor::from_parts(vec![c, h, w], dx)),
                needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        }))
    }

    /// Mean binary cross-entropy of logits against a constant label.
    pub fn bce_with_logits(self, target: f64) -> Var<'g, S> {
        let x = self.value();
        let z = S::of(target);
        let n = S::of(x.numel() as f64);
        let loss: S = x
            .data()
            .iter()
            .map(|&v| v.max(S::zero()) - v * z + (S::one() + (-v.abs()).exp()).ln())
            .sum::<S>()
            / n;
        self.graph.record(Tensor::scalar(loss), &[self], move |g, _| {
            let gv = g.item() / n;
            vec![Some(x.map(|v| {
                let sig = S::one() / (S::one() + (-v).exp());
                gv * (sig - z)
            }))]
        })
    }
}

/// Channel-wise concatenation of `[Ci,H,W]` variables.
pub fn concat_channels<'g, S: Scalar>(parts: &[Var<'g, S>]) -> Result<Var<'g, S>> {
    let first = parts.first().ok_or_else(|| invalid("concat_channels", "no operands"))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Tensor<S>> = values.iter().map(|v| v.as_ref()).collect();
    let y = Tensor::concat_channels(&refs)?;
    let splits: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(first.graph.record(y, parts, move |g, needs| {
        let mut offset = 0;
        splits
            .iter()
            .zip(needs)
            .map(|(shape, &need)| {
                let len: usize = shape.iter().product();
                let out = need.then(|| Tensor::from_parts(shape.clone(), g.data()[offset..offset + len].to_vec()));
                offset += len;
                out
            })
            .collect()
    }))
}

/// Reorders `[a, b, len]` blocks into `[b, a, len]`.
fn swap_outer<S: Scalar>(x: &[S], a: usize, b: usize, len: usize) -> Vec<S> {
    if a == 1 || b == 1 {
        return x.to_vec();
    }
    let mut out = Vec::with_capacity(x.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&x[(i * b + j) * len..(i * b + j + 1) * len]);
        }
    }
    out
}

fn check_bias<S: Scalar>(op: &'static str, bias: Option<Var<'_, S>>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        let shape = b.shape();
        if shape != [cout] {
            return Err(mismatch(op, &[cout], &shape));
        }
    }
    Ok(())
}

fn add_channel_bias<S: Scalar>(y: &mut [S], bias: &[S], plane: usize) {
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn channel_sums<S: Scalar>(g: &[S], channels: usize, plane: usize) -> Tensor<S> {
    Tensor::from_parts(
        vec![channels],
        g.chunks(plane).map(|c| c.iter().copied().sum()).collect(),
    )
}

/// Softmax over `lanes` independent lanes of `len` elements; lane `l`
/// element `i` lives at `l * lane_stride + i * elem_stride`.
fn softmax_lanes<S: Scalar>(x: &Tensor<S>, lanes: usize, len: usize, elem_stride: usize, lane_stride: usize) -> Tensor<S> {
    let xd = x.data();
    let mut y = vec![S::zero(); xd.len()];
    for l in 0..lanes {
        let idx = |i: usize| l * lane_stride + i * elem_stride;
        let max = (0..len).map(|i| xd[idx(i)]).fold(S::neg_infinity(), S::max);
        let mut total = S::zero();
        for i in 0..len {
            let e = (xd[idx(i)] - max).exp();
            y[idx(i)] = e;
            total += e;
        }
        for i in 0..len {
            y[idx(i)] = y[idx(i)] / total;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), y)
}

fn softmax_lanes_backward<S: Scalar>(
    y: &Tensor<S>,
    g: &Tensor<S>,
    lanes: usize,
    len: usize,
    elem_stride: usize,
    lane_stride: usize,
) -> Tensor<S> {
    let (yd, gd) = (y.data(), g.data());
    let mut dx = vec![S::zero(); yd.len()];
    for l in 0..lanes {
        let idx = |i: usize| l * lane_stride + i * elem_stride;
        let dot: S = (0..len).map(|i| yd[idx(i)] * gd[idx(i)]).sum();
        for i in 0..len {
            dx[idx(i)] = yd[idx(i)] * (gd[idx(i)] - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}
