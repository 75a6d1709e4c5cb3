//! Scalar-loop reference implementations used as test oracles. The
//! references in this file never call the library; `compare` runs both.
#![allow(dead_code)]

pub mod compare;

/// Dense row-major matrix / image tensor with explicit shape.
#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }
}

pub fn matmul(a: &Arr, b: &Arr) -> Arr {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    assert_eq!(k, b.shape[0]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data[i * k + p] * b.data[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    Arr::new(&[m, n], out)
}

/// `x`: [Cin,H,W], `w`: [Cout,Cin,k,k], zero padding.
pub fn conv2d(x: &Arr, w: &Arr, bias: Option<&[f64]>, stride: usize, pad: usize) -> Arr {
    let (cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (cout, k) = (w.shape[0], w.shape[2]);
    assert_eq!(w.shape[1], cin);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias.map_or(0.0, |b| b[o]);
                for c in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            s += w.data[((o * cin + c) * k + ky) * k + kx] * x.at3(c, iy as usize, ix as usize);
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    Arr::new(&[cout, oh, ow], out)
}

pub fn softmax_rows(a: &Arr) -> Arr {
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &a.data[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for j in 0..c {
            out[i * c + j] = (row[j] - m).exp() / z;
        }
    }
    Arr::new(&[r, c], out)
}

/// 1x1 convolution without bias: `out[o,p] = sum_k w[o,k] x[k,p]`.
pub fn embed(x: &Arr, w: &Arr) -> Arr {
    let (c, n) = (x.shape[0], x.shape[1] * x.shape[2]);
    let cout = w.shape[0];
    let mut out = vec![0.0; cout * n];
    for o in 0..cout {
        for p in 0..n {
            for k in 0..c {
                out[o * n + p] += w.data[o * c + k] * x.data[k * n + p];
            }
        }
    }
    Arr::new(&[cout, x.shape[1], x.shape[2]], out)
}

/// `P[j][i] = exp(q_j . k_i) / sum_i' exp(q_j . k_i')` over positions.
pub fn correlation(query: &Arr, key: &Arr) -> Vec<Vec<f64>> {
    let c = query.shape[0];
    let n = query.shape[1] * query.shape[2];
    let mut p = vec![vec![0.0; n]; n];
    for j in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|i| (0..c).map(|k| query.data[k * n + j] * key.data[k * n + i]).sum())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for i in 0..n {
            p[j][i] = (logits[i] - m).exp() / z;
        }
    }
    p
}

/// `gain * sum_i value[:, i] P[j][i] + residual[:, j]`.
fn attend(value: &Arr, p: &[Vec<f64>], gain: f64, residual: &Arr) -> Arr {
    let c = value.shape[0];
    let n = value.shape[1] * value.shape[2];
    let mut out = residual.data.clone();
    for o in 0..c {
        for j in 0..n {
            let s: f64 = (0..n).map(|i| value.data[o * n + i] * p[j][i]).sum();
            out[o * n + j] += gain * s;
        }
    }
    Arr::new(&residual.shape, out)
}

/// Appearance update; weights are 1x1 kernels stored `[c,c]`.
pub fn sa_block(app: &Arr, shape: &Arr, wa: &Arr, wb: &Arr, wc: &Arr, alpha: f64) -> Arr {
    let p = correlation(&embed(app, wc), &embed(shape, wb));
    attend(&embed(app, wa), &p, alpha, app)
}

/// Shape update returning `(pre_merge, merged)`.
#[allow(clippy::too_many_arguments)]
pub fn as_block(
    shape: &Arr,
    app_prev: &Arr,
    app_new: &Arr,
    wd: &Arr,
    we: &Arr,
    wh: &Arr,
    beta: f64,
    merge_w: &Arr,
    merge_b: &[f64],
) -> (Arr, Arr) {
    let q = correlation(&embed(shape, wh), &embed(app_prev, we));
    let pre = attend(&embed(shape, wd), &q, beta, shape);
    let mut cat = pre.data.clone();
    cat.extend_from_slice(&app_new.data);
    let cat = Arr::new(&[2 * shape.shape[0], shape.shape[1], shape.shape[2]], cat);
    let merged = conv2d(&cat, merge_w, Some(merge_b), 1, 1);
    (pre, merged)
}

/// Per-element `-(t ln s + (1-t) ln(1-s))`, `s = 1/(1+e^-x)`, averaged.
pub fn bce_mean(logits: &[f64], target: f64) -> f64 {
    logits
        .iter()
        .map(|&x| {
            let s = 1.0 / (1.0 + (-x).exp());
            -(target * s.ln() + (1.0 - target) * (1.0 - s).ln())
        })
        .sum::<f64>()
        / logits.len() as f64
}

/// Direct windowed SSIM: 2-D Gaussian weights, variances from centered
/// sums, valid windows only. Inputs in `[-1,1]`, compared on `[0,1]`.
pub fn ssim(a: &Arr, b: &Arr) -> f64 {
    const WIN: usize = 11;
    let sigma = 1.5f64;
    let mut wts = [[0.0f64; WIN]; WIN];
    let mut total = 0.0;
    for (y, row) in wts.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (ch, h, w) = (a.shape[0], a.shape[1], a.shape[2]);
    let unit = |arr: &Arr, c, y, x| (arr.at3(c, y, x) + 1.0) / 2.0;
    let mut acc = 0.0;
    let mut count = 0;
    for c in 0..ch {
        for y0 in 0..=h - WIN {
            for x0 in 0..=w - WIN {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let g = wts[dy][dx] / total;
                        ma += g * unit(a, c, y0 + dy, x0 + dx);
                        mb += g * unit(b, c, y0 + dy, x0 + dx);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let g = wts[dy][dx] / total;
                        let da = unit(a, c, y0 + dy, x0 + dx) - ma;
                        let db = unit(b, c, y0 + dy, x0 + dx) - mb;
                        va += g * da * da;
                        vb += g * db * db;
                        cov += g * da * db;
                    }
                }
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// Central differences of a scalar function of a flat vector.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Small deterministic generator so oracle inputs don't depend on the
/// library's RNG.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn arr(&mut self, shape: &[usize], lo: f64, hi: f64) -> Arr {
        Arr::new(shape, self.vec(shape.iter().product(), lo, hi))
    }
}
