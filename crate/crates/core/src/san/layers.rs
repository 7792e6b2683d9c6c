//! Forward and backward kernels for the layers of the patch classifier.
//! Feature maps are `[N, C, H, W]`; dense activations are `[N, F]`.

use super::tensor::Tensor;

/// Stride-1 2-D convolution with zero padding.
/// `weight` is `[C_out, C_in, K_h, K_w]`, `bias` is `[C_out]`.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, pad: usize) -> Tensor {
    let [n, cin, _, _] = x.dims4();
    let [cout, wcin, kh, kw] = weight.dims4();
    assert_eq!(cin, wcin, "conv input channels");
    let geo = ConvGeometry::new(x, weight, pad);
    let cols = im2col(x.data(), &geo);
    let (k, np, plane) = (cin * kh * kw, n * geo.plane(), geo.plane());
    let wd = weight.data();
    let mut out = vec![0.0; n * cout * plane];
    let mut acc = vec![0.0; np];
    for co in 0..cout {
        acc.fill(bias.data()[co]);
        for (r, &wv) in wd[co * k..(co + 1) * k].iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            for (a, &c) in acc.iter_mut().zip(&cols[r * np..(r + 1) * np]) {
                *a += wv * c;
            }
        }
        for ni in 0..n {
            out[(ni * cout + co) * plane..][..plane].copy_from_slice(&acc[ni * plane..(ni + 1) * plane]);
        }
    }
    Tensor::from_vec(&[n, cout, geo.ho, geo.wo], out).expect("conv output shape")
}

/// Shape bookkeeping shared by the convolution kernels.
struct ConvGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(x: &Tensor, weight: &Tensor, pad: usize) -> Self {
        let [n, cin, h, w] = x.dims4();
        let [_, _, kh, kw] = weight.dims4();
        Self {
            n,
            cin,
            h,
            w,
            kh,
            kw,
            pad,
            ho: h + 2 * pad + 1 - kh,
            wo: w + 2 * pad + 1 - kw,
        }
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unrolls the input into a `[C_in·K_h·K_w, N·H_out·W_out]` matrix; padded
/// positions stay zero.
fn im2col(xd: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let np = g.n * g.plane();
    let mut cols = vec![0.0; g.cin * g.kh * g.kw * np];
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            let (y0, y1) = valid_range(ky, g.pad, g.h, g.ho);
            for kx in 0..g.kw {
                let (x0, x1) = valid_range(kx, g.pad, g.w, g.wo);
                if y0 >= y1 || x0 >= x1 {
                    continue;
                }
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &mut cols[r * np..(r + 1) * np];
                for ni in 0..g.n {
                    let xin = &xd[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    for y in y0..y1 {
                        let iy = y + ky - g.pad;
                        let ix0 = x0 + kx - g.pad;
                        let dst = ni * g.plane() + y * g.wo;
                        row[dst + x0..dst + x1].copy_from_slice(&xin[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input.
fn col2im(cols: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let np = g.n * g.plane();
    let mut dx = vec![0.0; g.n * g.cin * g.h * g.w];
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            let (y0, y1) = valid_range(ky, g.pad, g.h, g.ho);
            for kx in 0..g.kw {
                let (x0, x1) = valid_range(kx, g.pad, g.w, g.wo);
                if y0 >= y1 || x0 >= x1 {
                    continue;
                }
                let r = (ci * g.kh + ky) * g.kw + kx;
                let row = &cols[r * np..(r + 1) * np];
                for ni in 0..g.n {
                    let dxin = &mut dx[(ni * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    for y in y0..y1 {
                        let iy = y + ky - g.pad;
                        let ix0 = x0 + kx - g.pad;
                        let src = ni * g.plane() + y * g.wo;
                        for (d, &c) in dxin[iy * g.w + ix0..iy * g.w + ix0 + (x1 - x0)].iter_mut().zip(&row[src + x0..src + x1]) {
                            *d += c;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Output positions `o` for which input index `o + k - pad` lies in `0..len`.
#[inline]
fn valid_range(k: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out_len);
    (lo, hi)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, pad: usize, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [n, cin, _, _] = x.dims4();
    let [cout, _, kh, kw] = weight.dims4();
    let geo = ConvGeometry::new(x, weight, pad);
    let plane = geo.plane();
    let (k, np) = (cin * kh * kw, n * plane);
    let cols = im2col(x.data(), &geo);
    let wd = weight.data();
    let gd = dout.data();
    let mut dw = vec![0.0; wd.len()];
    let mut db = vec![0.0; cout];
    let mut dcols = vec![0.0; k * np];
    let mut g = vec![0.0; np];
    for co in 0..cout {
        for ni in 0..n {
            g[ni * plane..(ni + 1) * plane].copy_from_slice(&gd[(ni * cout + co) * plane..][..plane]);
        }
        db[co] = g.iter().sum();
        for r in 0..k {
            let row = &cols[r * np..(r + 1) * np];
            dw[co * k + r] = row.iter().zip(&g).map(|(a, b)| a * b).sum();
            let wv = wd[co * k + r];
            if wv != 0.0 {
                for (d, &gv) in dcols[r * np..(r + 1) * np].iter_mut().zip(&g) {
                    *d += wv * gv;
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), col2im(&dcols, &geo)).unwrap(),
        Tensor::from_vec(weight.shape(), dw).unwrap(),
        Tensor::from_vec(&[cout], db).unwrap(),
    )
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch statistics and normalized activations kept for the
/// backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Tensor,
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Elements per channel, N·H·W.
    pub count: usize,
}

/// Batch normalization using the statistics of this batch.
pub fn batchnorm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, BnCache) {
    let [n, c, h, w] = x.dims4();
    let plane = h * w;
    let m = n * plane;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut s = 0.0;
        for ni in 0..n {
            s += xd[(ni * c + ci) * plane..][..plane].iter().sum::<f64>();
        }
        let mu = s / m as f64;
        let mut v = 0.0;
        for ni in 0..n {
            v += xd[(ni * c + ci) * plane..][..plane]
                .iter()
                .map(|&t| (t - mu) * (t - mu))
                .sum::<f64>();
        }
        mean[ci] = mu;
        var[ci] = v / m as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            for i in base..base + plane {
                let xh = (xd[i] - mean[ci]) * inv_std[ci];
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), out).unwrap(),
        BnCache {
            xhat: Tensor::from_vec(x.shape(), xhat).unwrap(),
            mean,
            var,
            inv_std,
            count: m,
        },
    )
}

/// Batch normalization with fixed running statistics.
pub fn batchnorm_eval(x: &Tensor, gamma: &Tensor, beta: &Tensor, running_mean: &Tensor, running_var: &Tensor) -> Tensor {
    let [n, c, h, w] = x.dims4();
    let plane = h * w;
    let mut out = x.data().to_vec();
    for ni in 0..n {
        for ci in 0..c {
            let inv = 1.0 / (running_var.data()[ci] + BN_EPS).sqrt();
            let (g, b, mu) = (gamma.data()[ci], beta.data()[ci], running_mean.data()[ci]);
            for v in &mut out[(ni * c + ci) * plane..][..plane] {
                *v = g * (*v - mu) * inv + b;
            }
        }
    }
    Tensor::from_vec(x.shape(), out).unwrap()
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward(dy: &Tensor, gamma: &Tensor, cache: &BnCache) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = dy.dims4();
    let plane = h * w;
    let m = cache.count as f64;
    let dyd = dy.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                dgamma[ci] += dyd[i] * xh[i];
                dbeta[ci] += dyd[i];
            }
        }
    }
    // dx = γ·inv_std/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
    let mut dx = vec![0.0; dyd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let k = gamma.data()[ci] * cache.inv_std[ci] / m;
            for i in base..base + plane {
                dx[i] = k * (m * dyd[i] - dbeta[ci] - xh[i] * dgamma[ci]);
            }
        }
    }
    (
        Tensor::from_vec(dy.shape(), dx).unwrap(),
        Tensor::from_vec(&[c], dgamma).unwrap(),
        Tensor::from_vec(&[c], dbeta).unwrap(),
    )
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v.max(0.0)).collect()).unwrap()
}

/// Gradient through ReLU given the layer's output.
pub fn relu_backward(out: &Tensor, dout: &Tensor) -> Tensor {
    Tensor::from_vec(
        out.shape(),
        out.data()
            .iter()
            .zip(dout.data())
            .map(|(&o, &g)| if o > 0.0 { g } else { 0.0 })
            .collect(),
    )
    .unwrap()
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled map and, per output element, the flat input index of
/// the selected maximum (first maximum in raster order on ties).
pub fn maxpool2_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.dims4();
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_i = base + (2 * oy) * w + 2 * ox;
                let mut best = xd[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[i] > best {
                        best = xd[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (Tensor::from_vec(&[n, c, ho, wo], out).unwrap(), arg)
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    dx
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    /// `[N, 2, H, W]`: channel mean then channel max.
    pub pooled: Tensor,
    /// Channel index of the maximum at each `(n, y, x)`.
    pub max_channel: Vec<usize>,
    /// Sigmoid attention map, `[N, 1, H, W]`.
    pub attention: Tensor,
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Spatial attention: pool over channels (mean and max), convolve the
/// two-channel map to one channel with `weight` (`[1, 2, K, K]`, same
/// padding), squash with a sigmoid and scale every input channel by it.
pub fn spatial_attention_forward(f: &Tensor, weight: &Tensor, bias: &Tensor) -> (Tensor, AttentionCache) {
    let [n, c, h, w] = f.dims4();
    let plane = h * w;
    let fd = f.data();
    let mut pooled = vec![0.0; n * 2 * plane];
    let mut max_channel = vec![0usize; n * plane];
    for ni in 0..n {
        for p in 0..plane {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            let mut best_c = 0;
            for ci in 0..c {
                let v = fd[(ni * c + ci) * plane + p];
                sum += v;
                if v > best {
                    best = v;
                    best_c = ci;
                }
            }
            pooled[(ni * 2) * plane + p] = sum / c as f64;
            pooled[(ni * 2 + 1) * plane + p] = best;
            max_channel[ni * plane + p] = best_c;
        }
    }
    let pooled = Tensor::from_vec(&[n, 2, h, w], pooled).unwrap();
    let [_, _, k, _] = weight.dims4();
    let logits = conv2d_forward(&pooled, weight, bias, k / 2);
    let attention = Tensor::from_vec(logits.shape(), logits.data().iter().map(|&v| sigmoid(v)).collect()).unwrap();
    let ad = attention.data();
    let mut out = vec![0.0; fd.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for p in 0..plane {
                out[base + p] = fd[base + p] * ad[ni * plane + p];
            }
        }
    }
    (
        Tensor::from_vec(f.shape(), out).unwrap(),
        AttentionCache {
            pooled,
            max_channel,
            attention,
        },
    )
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn spatial_attention_backward(
    f: &Tensor,
    weight: &Tensor,
    cache: &AttentionCache,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [n, c, h, w] = f.dims4();
    let plane = h * w;
    let fd = f.data();
    let gd = dout.data();
    let ad = cache.attention.data();
    let mut df = vec![0.0; fd.len()];
    let mut dlogit = vec![0.0; n * plane];
    for ni in 0..n {
        for p in 0..plane {
            let a = ad[ni * plane + p];
            let mut da = 0.0;
            for ci in 0..c {
                let i = (ni * c + ci) * plane + p;
                df[i] = gd[i] * a;
                da += gd[i] * fd[i];
            }
            dlogit[ni * plane + p] = da * a * (1.0 - a);
        }
    }
    let dlogit = Tensor::from_vec(&[n, 1, h, w], dlogit).unwrap();
    let [_, _, k, _] = weight.dims4();
    let (dpooled, dw, db) = conv2d_backward(&cache.pooled, weight, k / 2, &dlogit);
    let dp = dpooled.data();
    for ni in 0..n {
        for p in 0..plane {
            let davg = dp[(ni * 2) * plane + p] / c as f64;
            for ci in 0..c {
                df[(ni * c + ci) * plane + p] += davg;
            }
            let cm = cache.max_channel[ni * plane + p];
            df[(ni * c + cm) * plane + p] += dp[(ni * 2 + 1) * plane + p];
        }
    }
    (Tensor::from_vec(f.shape(), df).unwrap(), dw, db)
}

/// `x` is `[N, in]`, `weight` is `[out, in]`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let [n, fin] = x.dims2();
    let [fout, wfin] = weight.dims2();
    assert_eq!(fin, wfin, "linear input features");
    let mut out = vec![0.0; n * fout];
    for ni in 0..n {
        let xr = &x.data()[ni * fin..][..fin];
        for o in 0..fout {
            let wr = &weight.data()[o * fin..][..fin];
            out[ni * fout + o] = bias.data()[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Tensor::from_vec(&[n, fout], out).unwrap()
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn linear_backward(x: &Tensor, weight: &Tensor, dout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [n, fin] = x.dims2();
    let [fout, _] = weight.dims2();
    let mut dx = vec![0.0; n * fin];
    let mut dw = vec![0.0; fout * fin];
    let mut db = vec![0.0; fout];
    for ni in 0..n {
        let xr = &x.data()[ni * fin..][..fin];
        let dxr = &mut dx[ni * fin..][..fin];
        for o in 0..fout {
            let g = dout.data()[ni * fout + o];
            db[o] += g;
            let wr = &weight.data()[o * fin..][..fin];
            let dwr = &mut dw[o * fin..][..fin];
            for i in 0..fin {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    (
        Tensor::from_vec(&[n, fin], dx).unwrap(),
        Tensor::from_vec(&[fout, fin], dw).unwrap(),
        Tensor::from_vec(&[fout], db).unwrap(),
    )
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let [n, k] = logits.dims2();
    let mut out = vec![0.0; n * k];
    for ni in 0..n {
        let row = &logits.data()[ni * k..][..k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out[ni * k + j] = e;
            s += e;
        }
        for v in &mut out[ni * k..][..k] {
            *v /= s;
        }
    }
    Tensor::from_vec(&[n, k], out).unwrap()
}

/// Generic softmax Jacobian-vector product: given probabilities and
/// ∂L/∂p, returns ∂L/∂z = p ⊙ (∂L/∂p − ⟨∂L/∂p, p⟩).
pub fn softmax_backward(probs: &Tensor, dprobs: &Tensor) -> Tensor {
    let [n, k] = probs.dims2();
    let mut out = vec![0.0; n * k];
    for ni in 0..n {
        let p = &probs.data()[ni * k..][..k];
        let g = &dprobs.data()[ni * k..][..k];
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..k {
            out[ni * k + j] = p[j] * (g[j] - dot);
        }
    }
    Tensor::from_vec(&[n, k], out).unwrap()
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Mean negative log-likelihood of the true class.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> f64 {
    let [n, k] = probs.dims2();
    assert_eq!(n, labels.len(), "one label per row");
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.data()[i * k + y].max(PROB_FLOOR).ln())
        .sum::<f64>()
        / n as f64
}

/// ∂L/∂p for the mean cross-entropy: −y / (p·N).
pub fn cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Tensor {
    let [n, k] = probs.dims2();
    let mut g = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        g[i * k + y] = -1.0 / (probs.data()[i * k + y].max(PROB_FLOOR) * n as f64);
    }
    Tensor::from_vec(&[n, k], g).unwrap()
}

/// Closed-form gradient of softmax + mean cross-entropy w.r.t. the logits:
/// (p − y) / N.
pub fn softmax_cross_entropy_logit_grad(probs: &Tensor, labels: &[usize]) -> Tensor {
    let [n, k] = probs.dims2();
    let mut g = probs.data().to_vec();
    for (i, &y) in labels.iter().enumerate() {
        g[i * k + y] -= 1.0;
    }
    for v in &mut g {
        *v /= n as f64;
    }
    Tensor::from_vec(&[n, k], g).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct definition of convolution, independent of the row-slicing kernel.
    fn conv_naive(x: &Tensor, w: &Tensor, b: &Tensor, pad: i64) -> Tensor {
        let [n, cin, h, wd] = x.dims4();
        let [cout, _, kh, kw] = w.dims4();
        let ho = h + 2 * pad as usize + 1 - kh;
        let wo = wd + 2 * pad as usize + 1 - kw;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for ni in 0..n {
            for co in 0..cout {
                for y in 0..ho {
                    for xo in 0..wo {
                        let mut s = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = y as i64 + ky as i64 - pad;
                                    let ix = xo as i64 + kx as i64 - pad;
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                        continue;
                                    }
                                    s += w.data()[((co * cin + ci) * kh + ky) * kw + kx]
                                        * x.data()[((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((ni * cout + co) * ho + y) * wo + xo] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(h, w, k, pad) in &[(5, 5, 3, 1), (2, 2, 7, 3), (4, 3, 3, 0), (1, 1, 3, 1)] {
            let x = random(&[2, 3, h, w], &mut rng);
            let wt = random(&[4, 3, k, k], &mut rng);
            let b = random(&[4], &mut rng);
            let fast = conv2d_forward(&x, &wt, &b, pad);
            let slow = conv_naive(&x, &wt, &b, pad as i64);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(h, w, k, pad) in &[(5, 5, 3, 1), (2, 2, 7, 3), (4, 3, 3, 0)] {
            let x = random(&[2, 3, h, w], &mut rng);
            let wt = random(&[4, 3, k, k], &mut rng);
            let b = random(&[4], &mut rng);
            let out = conv2d_forward(&x, &wt, &b, pad);
            let g = random(out.shape(), &mut rng);
            let objective = |x: &Tensor, wt: &Tensor, b: &Tensor| -> f64 {
                conv2d_forward(x, wt, b, pad).data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
            };
            let (dx, dw, db) = conv2d_backward(&x, &wt, pad, &g);
            let eps = 1e-4;
            let probe = |t: &Tensor, grad: &Tensor, which: usize| {
                for i in 0..t.len() {
                    let mut p = t.clone();
                    let mut m = t.clone();
                    p.data_mut()[i] += eps;
                    m.data_mut()[i] -= eps;
                    let f = |t: &Tensor| match which {
                        0 => objective(t, &wt, &b),
                        1 => objective(&x, t, &b),
                        _ => objective(&x, &wt, t),
                    };
                    let num = (f(&p) - f(&m)) / (2.0 * eps);
                    assert!((num - grad.data()[i]).abs() < 1e-7, "tensor {which} index {i}: {num} vs {}", grad.data()[i]);
                }
            };
            probe(&x, &dx, 0);
            probe(&wt, &dw, 1);
            probe(&b, &db, 2);
        }
    }

    #[test]
    fn maxpool_floors_odd_sizes() {
        let x = Tensor::from_vec(&[1, 1, 5, 5], (0..25).map(|v| v as f64).collect()).unwrap();
        let (y, arg) = maxpool2_forward(&x);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[6.0, 8.0, 16.0, 18.0]);
        assert_eq!(arg, vec![6, 8, 16, 18]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let z = Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 1000.0, -1000.0, 3.0, 1.0]).unwrap();
        let p = softmax(&z);
        for r in 0..3 {
            assert!((p.data()[2 * r] + p.data()[2 * r + 1] - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.data()[0], 0.5);
    }

    #[test]
    fn cross_entropy_cases() {
        let perfect = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(cross_entropy(&perfect, &[0, 1]), 0.0);
        let uniform = Tensor::filled(&[3, 2], 0.5);
        assert!((cross_entropy(&uniform, &[0, 1, 1]) - std::f64::consts::LN_2).abs() < 1e-15);
        let p = Tensor::from_vec(&[2, 2], vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        let expected = -(0.9f64.ln() + 0.5f64.ln()) / 2.0;
        assert!((cross_entropy(&p, &[1, 0]) - expected).abs() < 1e-15);
        assert!((expected - 0.3993).abs() < 5e-5);
    }

    #[test]
    fn logit_gradient_closed_form_equals_chain_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let z = random(&[6, 2], &mut rng);
            let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..2)).collect();
            let p = softmax(&z);
            let chain = softmax_backward(&p, &cross_entropy_backward(&p, &labels));
            let closed = softmax_cross_entropy_logit_grad(&p, &labels);
            for (a, b) in chain.data().iter().zip(closed.data()) {
                assert!((a - b).abs() < 1e-15, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn attention_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random(&[2, 3, 4, 4], &mut rng);
        let w = Tensor::zeros(&[1, 2, 7, 7]);
        let (out, _) = spatial_attention_forward(&f, &w, &Tensor::filled(&[1], 1e3));
        assert_eq!(out, f);
        let (out, _) = spatial_attention_forward(&f, &w, &Tensor::filled(&[1], -1e3));
        assert!(out.data().iter().all(|&v| v == 0.0 || v.abs() < 1e-300));
    }

    #[test]
    fn single_channel_pools_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random(&[1, 1, 3, 3], &mut rng);
        let w = random(&[1, 2, 7, 7], &mut rng);
        let (_, cache) = spatial_attention_forward(&f, &w, &Tensor::zeros(&[1]));
        assert_eq!(&cache.pooled.data()[..9], f.data());
        assert_eq!(&cache.pooled.data()[9..], f.data());
    }

    #[test]
    fn attention_never_amplifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let f = random(&[2, 4, 3, 3], &mut rng);
            let w = random(&[1, 2, 7, 7], &mut rng);
            let b = random(&[1], &mut rng);
            let (out, _) = spatial_attention_forward(&f, &w, &b);
            for (o, i) in out.data().iter().zip(f.data()) {
                assert!(o.abs() <= i.abs());
            }
        }
    }
}
