//! 2-D discrete Fourier transforms.
//!
//! Forward transform is unnormalized; the inverse applies `1/(H·W)`. This
//! convention is load-bearing: group-energy magnitudes downstream scale with
//! it. Power-of-two sizes take an iterative radix-2 path, everything else a
//! direct O(N²) per-axis transform.

use rayon::prelude::*;

use super::{Dims4, Scalar, Tensor};
use crate::error::{Error, Result};

/// Complex-valued tensor stored as separate real/imaginary planes.
#[derive(Clone, Debug)]
pub struct ComplexTensor<S> {
    pub shape: Vec<usize>,
    pub re: Vec<S>,
    pub im: Vec<S>,
}

impl<S: Scalar> ComplexTensor<S> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        ComplexTensor { shape, re: vec![S::zero(); n], im: vec![S::zero(); n] }
    }

    pub fn numel(&self) -> usize {
        self.re.len()
    }

    /// Elementwise magnitudes `sqrt(re² + im²)`.
    pub fn magnitude(&self) -> Vec<S> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| (*r * *r + *i * *i).sqrt())
            .collect()
    }
}

fn is_pow2(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Precomputed per-axis transform tables.
enum AxisPlan<S> {
    Radix2 { twiddle_re: Vec<S>, twiddle_im: Vec<S> },
    Naive { cos: Vec<S>, sin: Vec<S> },
}

impl<S: Scalar> AxisPlan<S> {
    fn new(n: usize, inverse: bool) -> Self {
        let sign = if inverse { 1.0 } else { -1.0 };
        if is_pow2(n) {
            let half = (n / 2).max(1);
            let mut twiddle_re = Vec::with_capacity(half);
            let mut twiddle_im = Vec::with_capacity(half);
            for j in 0..half {
                let ang = sign * 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                twiddle_re.push(S::from_f64(ang.cos()));
                twiddle_im.push(S::from_f64(ang.sin()));
            }
            AxisPlan::Radix2 { twiddle_re, twiddle_im }
        } else {
            let mut cos = Vec::with_capacity(n);
            let mut sin = Vec::with_capacity(n);
            for j in 0..n {
                let ang = sign * 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                cos.push(S::from_f64(ang.cos()));
                sin.push(S::from_f64(ang.sin()));
            }
            AxisPlan::Naive { cos, sin }
        }
    }

    /// Transform one length-`n` signal in place (unnormalized).
    fn run(&self, re: &mut [S], im: &mut [S]) {
        let n = re.len();
        match self {
            AxisPlan::Radix2 { twiddle_re, twiddle_im } => {
                // Bit-reversal permutation.
                let bits = n.trailing_zeros();
                for i in 0..n {
                    let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
                    if j > i {
                        re.swap(i, j);
                        im.swap(i, j);
                    }
                }
                let mut len = 2;
                while len <= n {
                    let step = n / len;
                    let half = len / 2;
                    let mut start = 0;
                    while start < n {
                        for j in 0..half {
                            let (wr, wi) = (twiddle_re[j * step], twiddle_im[j * step]);
                            let (a, b) = (start + j, start + j + half);
                            let tr = wr * re[b] - wi * im[b];
                            let ti = wr * im[b] + wi * re[b];
                            re[b] = re[a] - tr;
                            im[b] = im[a] - ti;
                            re[a] += tr;
                            im[a] += ti;
                        }
                        start += len;
                    }
                    len <<= 1;
                }
            }
            AxisPlan::Naive { cos, sin } => {
                let mut out_re = vec![S::zero(); n];
                let mut out_im = vec![S::zero(); n];
                for k in 0..n {
                    let mut ar = S::zero();
                    let mut ai = S::zero();
                    for t in 0..n {
                        let idx = (k * t) % n;
                        let (c, s) = (cos[idx], sin[idx]);
                        ar += re[t] * c - im[t] * s;
                        ai += re[t] * s + im[t] * c;
                    }
                    out_re[k] = ar;
                    out_im[k] = ai;
                }
                re.copy_from_slice(&out_re);
                im.copy_from_slice(&out_im);
            }
        }
    }
}

/// Unnormalized 2-D DFT over every `h×w` plane of a contiguous buffer,
/// in place. `inverse` flips the exponent sign but applies no scaling.
pub fn fft2_planes_raw<S: Scalar>(re: &mut [S], im: &mut [S], h: usize, w: usize, inverse: bool) {
    let row_plan = AxisPlan::<S>::new(w, inverse);
    let col_plan = AxisPlan::<S>::new(h, inverse);
    let plane = h * w;

    re.par_chunks_mut(plane)
        .zip(im.par_chunks_mut(plane))
        .for_each(|(p_re, p_im)| {
            for y in 0..h {
                row_plan.run(&mut p_re[y * w..(y + 1) * w], &mut p_im[y * w..(y + 1) * w]);
            }
            let mut col_re = vec![S::zero(); h];
            let mut col_im = vec![S::zero(); h];
            for x in 0..w {
                for y in 0..h {
                    col_re[y] = p_re[y * w + x];
                    col_im[y] = p_im[y * w + x];
                }
                col_plan.run(&mut col_re, &mut col_im);
                for y in 0..h {
                    p_re[y * w + x] = col_re[y];
                    p_im[y * w + x] = col_im[y];
                }
            }
        });
}

/// Forward 2-D DFT of a real `[B,C,H,W]` tensor (unnormalized).
pub fn fft2<S: Scalar>(x: &Tensor<S>) -> Result<ComplexTensor<S>> {
    let dims = Dims4::of(&x.shape, "fft2")?;
    let mut out = ComplexTensor::zeros(x.shape.clone());
    out.re.copy_from_slice(&x.data);
    fft2_planes_raw(&mut out.re, &mut out.im, dims.h, dims.w, false);
    Ok(out)
}

/// Inverse 2-D DFT with `1/(H·W)` normalization.
pub fn ifft2<S: Scalar>(z: &ComplexTensor<S>) -> Result<ComplexTensor<S>> {
    let dims = Dims4::of(&z.shape, "ifft2")?;
    let mut out = z.clone();
    fft2_planes_raw(&mut out.re, &mut out.im, dims.h, dims.w, true);
    let scale = S::one() / S::from_f64((dims.h * dims.w) as f64);
    for v in out.re.iter_mut().chain(out.im.iter_mut()) {
        *v *= scale;
    }
    Ok(out)
}

/// Index permutation placing the DC bin at `(⌊H/2⌋, ⌊W/2⌋)`.
pub(crate) fn shift_planes<S: Scalar>(
    src_re: &[S],
    src_im: &[S],
    h: usize,
    w: usize,
    sy: usize,
    sx: usize,
    dst_re: &mut [S],
    dst_im: &mut [S],
) {
    let plane = h * w;
    for p in 0..src_re.len() / plane {
        let base = p * plane;
        for y in 0..h {
            let ty = (y + sy) % h;
            for x in 0..w {
                let tx = (x + sx) % w;
                dst_re[base + ty * w + tx] = src_re[base + y * w + x];
                dst_im[base + ty * w + tx] = src_im[base + y * w + x];
            }
        }
    }
}

/// Rotate every plane so the DC bin moves to the center `(⌊H/2⌋, ⌊W/2⌋)`.
pub fn fftshift<S: Scalar>(z: &ComplexTensor<S>) -> Result<ComplexTensor<S>> {
    let dims = Dims4::of(&z.shape, "fftshift")?;
    let mut out = ComplexTensor::zeros(z.shape.clone());
    shift_planes(&z.re, &z.im, dims.h, dims.w, dims.h / 2, dims.w / 2, &mut out.re, &mut out.im);
    Ok(out)
}

/// Inverse of [`fftshift`] (identical for even dimensions).
pub fn ifftshift<S: Scalar>(z: &ComplexTensor<S>) -> Result<ComplexTensor<S>> {
    let dims = Dims4::of(&z.shape, "ifftshift")?;
    let mut out = ComplexTensor::zeros(z.shape.clone());
    let sy = dims.h - dims.h / 2;
    let sx = dims.w - dims.w / 2;
    shift_planes(&z.re, &z.im, dims.h, dims.w, sy % dims.h, sx % dims.w, &mut out.re, &mut out.im);
    Ok(out)
}

/// Gradient of the forward DFT w.r.t. its real input: the real part of the
/// adjoint (= unnormalized inverse) transform of the output cotangent.
pub(crate) fn fft2_adjoint_real<S: Scalar>(
    grad_re: &[S],
    grad_im: &[S],
    h: usize,
    w: usize,
) -> Vec<S> {
    let mut re = grad_re.to_vec();
    let mut im = grad_im.to_vec();
    fft2_planes_raw(&mut re, &mut im, h, w, true);
    re
}

/// Convenience constructor for a single-plane `[1,1,H,W]` real tensor.
pub fn plane_tensor<S: Scalar>(data: Vec<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    if data.len() != h * w {
        return Err(Error::shape("plane_tensor", h * w, data.len()));
    }
    Tensor::new(vec![1, 1, h, w], data)
}
