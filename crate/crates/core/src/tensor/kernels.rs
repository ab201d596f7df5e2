//! Raw numeric kernels shared by the tape and by plain (untaped) callers.
//!
//! All kernels take explicit dimensions and flat row-major buffers. Summation
//! orders are fixed, so results are bit-deterministic for a given input
//! regardless of thread count: rayon only ever splits work along axes whose
//! partial results land in disjoint output regions.

use rayon::prelude::*;

use super::Scalar;

/// Output spatial size of a convolution/pooling window sweep.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Copy one `[C,H,W]` sample into a zero-padded `[C,H+2p,W+2p]` buffer.
fn pad_sample<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, pad: usize, out: &mut [S]) {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    out.fill(S::zero());
    for ch in 0..c {
        for row in 0..h {
            let src = &x[(ch * h + row) * w..(ch * h + row) * w + w];
            let dst_start = (ch * hp + row + pad) * wp + pad;
            out[dst_start..dst_start + w].copy_from_slice(src);
        }
    }
}

/// Cross-correlation of `x:[B,Cin,H,W]` with `k:[Cout,Cin,K,K]`.
///
/// `out` must be `[B,Cout,OH,OW]`. Stride 1 takes a vectorizable
/// accumulate-over-rows path; other strides fall back to plain loops.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kernel: &[S],
    c_out: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    out: &mut [S],
) {
    let oh = conv_out_dim(h, ksize, stride, pad);
    let ow = conv_out_dim(w, ksize, stride, pad);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let sample_in = c_in * h * w;
    let sample_out = c_out * oh * ow;

    out.par_chunks_mut(sample_out)
        .zip(x.par_chunks(sample_in))
        .take(batch)
        .for_each(|(out_s, x_s)| {
            let mut padded = vec![S::zero(); c_in * hp * wp];
            pad_sample(x_s, c_in, h, w, pad, &mut padded);
            for o in 0..c_out {
                let out_plane = &mut out_s[o * oh * ow..(o + 1) * oh * ow];
                out_plane.fill(S::zero());
                for c in 0..c_in {
                    for ky in 0..ksize {
                        for kx in 0..ksize {
                            let weight = kernel[((o * c_in + c) * ksize + ky) * ksize + kx];
                            if stride == 1 {
                                for oy in 0..oh {
                                    let in_row = &padded[(c * hp + oy + ky) * wp + kx..];
                                    let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                                    for (dst, src) in out_row.iter_mut().zip(&in_row[..ow]) {
                                        *dst += weight * *src;
                                    }
                                }
                            } else {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        out_plane[oy * ow + ox] +=
                                            weight * padded[(c * hp + iy) * wp + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

/// Gradient of [`conv2d_forward`] w.r.t. its input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input<S: Scalar>(
    grad_out: &[S],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kernel: &[S],
    c_out: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    grad_x: &mut [S],
) {
    let oh = conv_out_dim(h, ksize, stride, pad);
    let ow = conv_out_dim(w, ksize, stride, pad);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let sample_in = c_in * h * w;
    let sample_out = c_out * oh * ow;

    grad_x
        .par_chunks_mut(sample_in)
        .zip(grad_out.par_chunks(sample_out))
        .take(batch)
        .for_each(|(gx_s, go_s)| {
            let mut gpad = vec![S::zero(); c_in * hp * wp];
            for o in 0..c_out {
                let go_plane = &go_s[o * oh * ow..(o + 1) * oh * ow];
                for c in 0..c_in {
                    for ky in 0..ksize {
                        for kx in 0..ksize {
                            let weight = kernel[((o * c_in + c) * ksize + ky) * ksize + kx];
                            if stride == 1 {
                                for oy in 0..oh {
                                    let g_row = &go_plane[oy * ow..(oy + 1) * ow];
                                    let base = (c * hp + oy + ky) * wp + kx;
                                    let dst = &mut gpad[base..base + ow];
                                    for (d, g) in dst.iter_mut().zip(g_row) {
                                        *d += weight * *g;
                                    }
                                }
                            } else {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        gpad[(c * hp + iy) * wp + ix] +=
                                            weight * go_plane[oy * ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            // Crop the padding back off.
            for c in 0..c_in {
                for row in 0..h {
                    let src = (c * hp + row + pad) * wp + pad;
                    let dst = (c * h + row) * w;
                    for col in 0..w {
                        gx_s[dst + col] += gpad[src + col];
                    }
                }
            }
        });
}

/// Gradient of [`conv2d_forward`] w.r.t. the kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernel<S: Scalar>(
    grad_out: &[S],
    x: &[S],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    grad_k: &mut [S],
) {
    let oh = conv_out_dim(h, ksize, stride, pad);
    let ow = conv_out_dim(w, ksize, stride, pad);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let sample_out = c_out * oh * ow;

    // One padded copy of the whole batch, shared read-only across threads.
    let mut padded = vec![S::zero(); batch * c_in * hp * wp];
    for b in 0..batch {
        pad_sample(
            &x[b * c_in * h * w..(b + 1) * c_in * h * w],
            c_in,
            h,
            w,
            pad,
            &mut padded[b * c_in * hp * wp..(b + 1) * c_in * hp * wp],
        );
    }

    grad_k
        .par_chunks_mut(c_in * ksize * ksize)
        .take(c_out)
        .enumerate()
        .for_each(|(o, gk_o)| {
            for c in 0..c_in {
                for ky in 0..ksize {
                    for kx in 0..ksize {
                        let mut acc = S::zero();
                        for b in 0..batch {
                            let go_plane = &grad_out[b * sample_out + o * oh * ow..];
                            let pad_base = (b * c_in + c) * hp * wp;
                            if stride == 1 {
                                for oy in 0..oh {
                                    let g_row = &go_plane[oy * ow..(oy + 1) * ow];
                                    let p_row =
                                        &padded[pad_base + (oy + ky) * wp + kx..][..ow];
                                    let mut row_acc = S::zero();
                                    for (g, p) in g_row.iter().zip(p_row) {
                                        row_acc += *g * *p;
                                    }
                                    acc += row_acc;
                                }
                            } else {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        acc += go_plane[oy * ow + ox]
                                            * padded[pad_base + iy * wp + ix];
                                    }
                                }
                            }
                        }
                        gk_o[(c * ksize + ky) * ksize + kx] += acc;
                    }
                }
            }
        });
}

/// Per-channel statistics saved by the batchnorm forward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<S> {
    pub mean: Vec<S>,
    pub inv_std: Vec<S>,
    pub training: bool,
}

/// Batch normalization over `[B,C,H,W]`, channel-wise.
///
/// Training mode normalizes by biased batch statistics and folds the batch
/// mean/variance into the running buffers with `momentum` (running variance
/// uses the unbiased estimate). Eval mode normalizes by the running buffers.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    gamma: &[S],
    beta: &[S],
    running_mean: &mut [S],
    running_var: &mut [S],
    momentum: S,
    eps: S,
    training: bool,
    out: &mut [S],
) -> BnSaved<S> {
    let plane = h * w;
    let n = batch * plane;
    let mut mean = vec![S::zero(); c];
    let mut inv_std = vec![S::zero(); c];

    for ch in 0..c {
        let (m, v) = if training {
            let mut sum = S::zero();
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                for i in 0..plane {
                    sum += x[base + i];
                }
            }
            let m = sum / S::from_f64(n as f64);
            let mut sq = S::zero();
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                for i in 0..plane {
                    let d = x[base + i] - m;
                    sq += d * d;
                }
            }
            let var = sq / S::from_f64(n as f64);
            let unbiased = if n > 1 {
                sq / S::from_f64((n - 1) as f64)
            } else {
                var
            };
            running_mean[ch] = (S::one() - momentum) * running_mean[ch] + momentum * m;
            running_var[ch] = (S::one() - momentum) * running_var[ch] + momentum * unbiased;
            (m, var)
        } else {
            (running_mean[ch], running_var[ch])
        };
        mean[ch] = m;
        inv_std[ch] = S::one() / (v + eps).sqrt();
    }

    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let (m, is, g, be) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in 0..plane {
                out[base + i] = g * (x[base + i] - m) * is + be;
            }
        }
    }

    BnSaved { mean, inv_std, training }
}

/// Backward pass of batch normalization.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward<S: Scalar>(
    grad_out: &[S],
    x: &[S],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    gamma: &[S],
    saved: &BnSaved<S>,
    grad_x: &mut [S],
    grad_gamma: &mut [S],
    grad_beta: &mut [S],
) {
    let plane = h * w;
    let n = batch * plane;
    let n_s = S::from_f64(n as f64);

    for ch in 0..c {
        let (m, is) = (saved.mean[ch], saved.inv_std[ch]);
        let mut sum_dy = S::zero();
        let mut sum_dy_xhat = S::zero();
        for b in 0..batch {
            let base = (b * c + ch) * plane;
            for i in 0..plane {
                let dy = grad_out[base + i];
                let xhat = (x[base + i] - m) * is;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
            }
        }
        grad_beta[ch] += sum_dy;
        grad_gamma[ch] += sum_dy_xhat;

        let g_is = gamma[ch] * is;
        if saved.training {
            let mean_dy = sum_dy / n_s;
            let mean_dy_xhat = sum_dy_xhat / n_s;
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                for i in 0..plane {
                    let dy = grad_out[base + i];
                    let xhat = (x[base + i] - m) * is;
                    grad_x[base + i] += g_is * (dy - mean_dy - xhat * mean_dy_xhat);
                }
            }
        } else {
            // Running statistics are constants in eval mode.
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                for i in 0..plane {
                    grad_x[base + i] += g_is * grad_out[base + i];
                }
            }
        }
    }
}

pub fn relu_forward<S: Scalar>(x: &[S], out: &mut [S]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = if *v > S::zero() { *v } else { S::zero() };
    }
}

pub fn relu_backward<S: Scalar>(grad_out: &[S], x: &[S], grad_x: &mut [S]) {
    for ((g, v), d) in grad_x.iter_mut().zip(x).zip(grad_out) {
        if *v > S::zero() {
            *g += *d;
        }
    }
}

pub fn sigmoid_forward<S: Scalar>(x: &[S], out: &mut [S]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = S::one() / (S::one() + (-*v).exp());
    }
}

/// Backward through sigmoid given the saved forward output `y`.
pub fn sigmoid_backward<S: Scalar>(grad_out: &[S], y: &[S], grad_x: &mut [S]) {
    for ((g, y), d) in grad_x.iter_mut().zip(y).zip(grad_out) {
        *g += *d * *y * (S::one() - *y);
    }
}

/// Mean pooling with a `k`-wide square window; trailing rows/cols that do not
/// fill a window are dropped.
#[allow(clippy::too_many_arguments)]
pub fn avgpool_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    out: &mut [S],
) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let inv = S::one() / S::from_f64((k * k) as f64);
    for bc in 0..batch * c {
        let x_plane = &x[bc * h * w..(bc + 1) * h * w];
        let out_plane = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = S::zero();
                for ky in 0..k {
                    for kx in 0..k {
                        acc += x_plane[(oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                out_plane[oy * ow + ox] = acc * inv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn avgpool_backward<S: Scalar>(
    grad_out: &[S],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    grad_x: &mut [S],
) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let inv = S::one() / S::from_f64((k * k) as f64);
    for bc in 0..batch * c {
        let go_plane = &grad_out[bc * oh * ow..(bc + 1) * oh * ow];
        let gx_plane = &mut grad_x[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = go_plane[oy * ow + ox] * inv;
                for ky in 0..k {
                    for kx in 0..k {
                        gx_plane[(oy * stride + ky) * w + ox * stride + kx] += g;
                    }
                }
            }
        }
    }
}

/// Global mean per `(b, c)` plane; output is `[B,C,1,1]`.
pub fn adaptive_avgpool_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    out: &mut [S],
) {
    let plane = h * w;
    let inv = S::one() / S::from_f64(plane as f64);
    for bc in 0..batch * c {
        let mut acc = S::zero();
        for v in &x[bc * plane..(bc + 1) * plane] {
            acc += *v;
        }
        out[bc] = acc * inv;
    }
}

pub fn adaptive_avgpool_backward<S: Scalar>(
    grad_out: &[S],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    grad_x: &mut [S],
) {
    let plane = h * w;
    let inv = S::one() / S::from_f64(plane as f64);
    for bc in 0..batch * c {
        let g = grad_out[bc] * inv;
        for v in &mut grad_x[bc * plane..(bc + 1) * plane] {
            *v += g;
        }
    }
}

/// Affine map `y[b,o] = Σ_d x[b,d]·w[d,o] + bias[o]`.
pub fn fc_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    d_in: usize,
    weight: &[S],
    bias: &[S],
    d_out: usize,
    out: &mut [S],
) {
    for b in 0..batch {
        for o in 0..d_out {
            let mut acc = bias[o];
            for d in 0..d_in {
                acc += x[b * d_in + d] * weight[d * d_out + o];
            }
            out[b * d_out + o] = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn fc_backward<S: Scalar>(
    grad_out: &[S],
    x: &[S],
    batch: usize,
    d_in: usize,
    weight: &[S],
    d_out: usize,
    grad_x: &mut [S],
    grad_w: &mut [S],
    grad_b: &mut [S],
) {
    for b in 0..batch {
        for o in 0..d_out {
            let g = grad_out[b * d_out + o];
            grad_b[o] += g;
            for d in 0..d_in {
                grad_x[b * d_in + d] += g * weight[d * d_out + o];
                grad_w[d * d_out + o] += g * x[b * d_in + d];
            }
        }
    }
}

/// Mean binary cross-entropy with logits, in the numerically stable
/// `max(x,0) − x·y + ln(1 + e^{−|x|})` form.
pub fn bce_with_logits<S: Scalar>(logits: &[S], labels: &[S]) -> S {
    let mut acc = S::zero();
    for (x, y) in logits.iter().zip(labels) {
        let pos = if *x > S::zero() { *x } else { S::zero() };
        acc += pos - *x * *y + (S::one() + (-x.abs()).exp()).ln();
    }
    acc / S::from_f64(logits.len() as f64)
}

/// `dL/dlogit = (σ(logit) − label) / n` for the mean-reduced BCE.
pub fn bce_with_logits_backward<S: Scalar>(
    grad_out: S,
    logits: &[S],
    labels: &[S],
    grad_logits: &mut [S],
) {
    let inv_n = S::one() / S::from_f64(logits.len() as f64);
    for ((g, x), y) in grad_logits.iter_mut().zip(logits).zip(labels) {
        let sig = S::one() / (S::one() + (-*x).exp());
        *g += grad_out * (sig - *y) * inv_n;
    }
}
