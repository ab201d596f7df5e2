//! Reverse-mode differentiation tape.
//!
//! Ops execute eagerly and are recorded in execution order together with the
//! saved values their backward rules need. [`Tape::backward`] walks the
//! record strictly in reverse, accumulates cotangents additively, writes
//! parameter gradients into the [`ParamStore`] and consumes the tape.

use std::collections::HashMap;

use super::fft::{fft2_adjoint_real, fft2_planes_raw, shift_planes};
use super::kernels::{self, BnSaved};
use super::params::{ParamId, ParamStore};
use super::{assert_all_finite, ComplexTensor, Dims4, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

/// Buffer of a tape node: real activations or a complex spectrum.
#[derive(Clone, Debug)]
enum Payload<S> {
    Real(Vec<S>),
    Complex { re: Vec<S>, im: Vec<S> },
}

impl<S: Scalar> Payload<S> {
    fn zeros_like(&self) -> Payload<S> {
        match self {
            Payload::Real(v) => Payload::Real(vec![S::zero(); v.len()]),
            Payload::Complex { re, .. } => Payload::Complex {
                re: vec![S::zero(); re.len()],
                im: vec![S::zero(); re.len()],
            },
        }
    }

    fn as_real(&self) -> &[S] {
        match self {
            Payload::Real(v) => v,
            Payload::Complex { .. } => panic!("expected real payload"),
        }
    }

    fn as_complex(&self) -> (&[S], &[S]) {
        match self {
            Payload::Complex { re, im } => (re, im),
            Payload::Real(_) => panic!("expected complex payload"),
        }
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Conv2d { x: TensorId, k: TensorId, stride: usize, pad: usize },
    BatchNorm { x: TensorId, gamma: TensorId, beta: TensorId, saved: BnSaved<S> },
    Relu { x: TensorId },
    Sigmoid { x: TensorId },
    AvgPool { x: TensorId, k: usize, stride: usize },
    AdaptiveAvgPool { x: TensorId },
    Reshape { x: TensorId },
    Fc { x: TensorId, w: TensorId, b: TensorId },
    ConcatChannels { a: TensorId, b: TensorId },
    Fft2 { x: TensorId },
    FftShift { z: TensorId },
    /// Complex spectrum scaled elementwise by a real `[H,W]` map, broadcast
    /// over batch and channels.
    SpectrumScale { z: TensorId, s: TensorId },
    /// Sum of complex magnitudes per channel group: `[B,C,H,W] -> [B,G]`.
    GroupEnergy { z: TensorId, groups: usize, norm_div: S },
    /// `y[b,g] = x[b,g] * w[g]`.
    RowScale { x: TensorId, w: TensorId },
    /// Every channel of group `g` in sample `b` scaled by `gain[b,g]`.
    ChannelScale { x: TensorId, gain: TensorId },
    Bce { logits: TensorId, labels: Vec<S> },
    Sum { x: TensorId },
    Mul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Scale { x: TensorId, factor: S },
}

struct Node<S> {
    shape: Vec<usize>,
    value: Payload<S>,
    grad: Option<Payload<S>>,
    needs_grad: bool,
    param: Option<ParamId>,
    op: Op<S>,
}

/// Gradients of non-parameter leaves marked `requires_grad`, returned by
/// [`Tape::backward`].
pub struct Gradients<S> {
    by_id: HashMap<usize, Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn of(&self, id: TensorId) -> Option<&[S]> {
        self.by_id.get(&id.0).map(|v| v.as_slice())
    }
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, value: Payload<S>, needs_grad: bool, op: Op<S>) -> TensorId {
        self.nodes.push(Node { shape, value, grad: None, needs_grad, param: None, op });
        TensorId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        self.nodes[id.0].value.as_real()
    }

    pub fn complex_data(&self, id: TensorId) -> (&[S], &[S]) {
        self.nodes[id.0].value.as_complex()
    }

    pub fn to_tensor(&self, id: TensorId) -> Tensor<S> {
        Tensor {
            shape: self.shape(id).to_vec(),
            data: self.data(id).to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn to_complex_tensor(&self, id: TensorId) -> ComplexTensor<S> {
        let (re, im) = self.complex_data(id);
        ComplexTensor { shape: self.shape(id).to_vec(), re: re.to_vec(), im: im.to_vec() }
    }

    /// Record a host tensor as a leaf. Gradient is tracked (and later
    /// retrievable from [`Gradients`]) only when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<S>) -> TensorId {
        self.push(t.shape.clone(), Payload::Real(t.data.clone()), t.requires_grad, Op::Leaf)
    }

    pub fn leaf_owned(&mut self, shape: Vec<usize>, data: Vec<S>) -> TensorId {
        self.push(shape, Payload::Real(data), false, Op::Leaf)
    }

    pub fn complex_leaf(&mut self, z: &ComplexTensor<S>) -> TensorId {
        self.push(
            z.shape.clone(),
            Payload::Complex { re: z.re.clone(), im: z.im.clone() },
            false,
            Op::Leaf,
        )
    }

    /// Lease a parameter from the store. Trainable parameters participate in
    /// the backward pass and receive their gradient at the end of it.
    pub fn param(&mut self, store: &ParamStore<S>, pid: ParamId) -> TensorId {
        let p = store.get(pid);
        let id = self.push(
            p.shape.clone(),
            Payload::Real(p.value.clone()),
            p.trainable,
            Op::Leaf,
        );
        self.nodes[id.0].param = Some(pid);
        id
    }

    fn any_needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    // ── Network ops ──────────────────────────────────────────────────

    /// Cross-correlation; `H' = (H + 2·pad − k)/stride + 1`.
    pub fn conv2d(&mut self, x: TensorId, k: TensorId, stride: usize, pad: usize) -> Result<TensorId> {
        let d = Dims4::of(self.shape(x), "conv2d input")?;
        let ks = self.shape(k).to_vec();
        if ks.len() != 4 || ks[2] != ks[3] {
            return Err(Error::shape("conv2d kernel", "[O,C,k,k]", &ks));
        }
        if ks[1] != d.c {
            return Err(Error::shape("conv2d channels", d.c, ks[1]));
        }
        if ks[2] % 2 == 0 {
            return Err(Error::InvalidArgument(format!("conv2d kernel size {} must be odd", ks[2])));
        }
        if stride == 0 || d.h + 2 * pad < ks[2] || d.w + 2 * pad < ks[2] {
            return Err(Error::InvalidArgument(format!(
                "conv2d: window {}x{} does not fit input {}x{} with pad {pad}",
                ks[2], ks[2], d.h, d.w
            )));
        }
        let oh = kernels::conv_out_dim(d.h, ks[2], stride, pad);
        let ow = kernels::conv_out_dim(d.w, ks[2], stride, pad);
        let mut out = vec![S::zero(); d.b * ks[0] * oh * ow];
        kernels::conv2d_forward(
            self.data(x), d.b, d.c, d.h, d.w, self.data(k), ks[0], ks[2], stride, pad, &mut out,
        );
        assert_all_finite(&out, "conv2d");
        let needs = self.any_needs_grad(&[x, k]);
        Ok(self.push(vec![d.b, ks[0], oh, ow], Payload::Real(out), needs, Op::Conv2d { x, k, stride, pad }))
    }

    /// Channel-wise batch normalization. Training mode consumes batch
    /// statistics and updates the running buffers in place.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &mut [S],
        running_var: &mut [S],
        momentum: S,
        eps: S,
        training: bool,
    ) -> Result<TensorId> {
        let d = Dims4::of(self.shape(x), "batchnorm2d input")?;
        if running_mean.len() != d.c || self.data(gamma).len() != d.c || self.data(beta).len() != d.c {
            return Err(Error::shape("batchnorm2d stats", d.c, running_mean.len()));
        }
        if training && d.b == 0 {
            return Err(Error::InvalidArgument("batchnorm2d: zero-size batch in training mode".into()));
        }
        let mut out = vec![S::zero(); d.numel()];
        let saved = kernels::batchnorm_forward(
            self.data(x), d.b, d.c, d.h, d.w,
            self.data(gamma), self.data(beta),
            running_mean, running_var, momentum, eps, training, &mut out,
        );
        assert_all_finite(&out, "batchnorm2d");
        let needs = self.any_needs_grad(&[x, gamma, beta]);
        Ok(self.push(d.to_vec(), Payload::Real(out), needs, Op::BatchNorm { x, gamma, beta, saved }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let mut out = vec![S::zero(); self.data(x).len()];
        kernels::relu_forward(self.data(x), &mut out);
        let needs = self.nodes[x.0].needs_grad;
        self.push(self.shape(x).to_vec(), Payload::Real(out), needs, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let mut out = vec![S::zero(); self.data(x).len()];
        kernels::sigmoid_forward(self.data(x), &mut out);
        let needs = self.nodes[x.0].needs_grad;
        self.push(self.shape(x).to_vec(), Payload::Real(out), needs, Op::Sigmoid { x })
    }

    pub fn avgpool2d(&mut self, x: TensorId, k: usize, stride: usize) -> Result<TensorId> {
        let d = Dims4::of(self.shape(x), "avgpool2d input")?;
        if d.h < k || d.w < k {
            return Err(Error::InvalidArgument(format!(
                "avgpool2d: {}x{} window does not fit {}x{} input",
                k, k, d.h, d.w
            )));
        }
        let oh = (d.h - k) / stride + 1;
        let ow = (d.w - k) / stride + 1;
        let mut out = vec![S::zero(); d.b * d.c * oh * ow];
        kernels::avgpool_forward(self.data(x), d.b, d.c, d.h, d.w, k, stride, &mut out);
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(vec![d.b, d.c, oh, ow], Payload::Real(out), needs, Op::AvgPool { x, k, stride }))
    }

    pub fn adaptive_avgpool(&mut self, x: TensorId) -> Result<TensorId> {
        let d = Dims4::of(self.shape(x), "adaptive_avgpool input")?;
        let mut out = vec![S::zero(); d.b * d.c];
        kernels::adaptive_avgpool_forward(self.data(x), d.b, d.c, d.h, d.w, &mut out);
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(vec![d.b, d.c, 1, 1], Payload::Real(out), needs, Op::AdaptiveAvgPool { x }))
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let n: usize = shape.iter().product();
        if n != self.data(x).len() {
            return Err(Error::shape("reshape", self.data(x).len(), n));
        }
        let needs = self.nodes[x.0].needs_grad;
        let value = Payload::Real(self.data(x).to_vec());
        Ok(self.push(shape, value, needs, Op::Reshape { x }))
    }

    pub fn fully_connected(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.data(b).len() != ws[1] {
            return Err(Error::shape("fully_connected", "[B,D]x[D,O]+[O]", (&xs, &ws)));
        }
        let (batch, d_in, d_out) = (xs[0], xs[1], ws[1]);
        let mut out = vec![S::zero(); batch * d_out];
        kernels::fc_forward(self.data(x), batch, d_in, self.data(w), self.data(b), d_out, &mut out);
        assert_all_finite(&out, "fully_connected");
        let needs = self.any_needs_grad(&[x, w, b]);
        Ok(self.push(vec![batch, d_out], Payload::Real(out), needs, Op::Fc { x, w, b }))
    }

    /// Concatenate along the channel dimension: `a` occupies the leading
    /// channels, `b` the trailing ones. Order is frozen.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let da = Dims4::of(self.shape(a), "concat_channels lhs")?;
        let db = Dims4::of(self.shape(b), "concat_channels rhs")?;
        if da.b != db.b || da.h != db.h || da.w != db.w {
            return Err(Error::shape("concat_channels", da.to_vec(), db.to_vec()));
        }
        let plane = da.h * da.w;
        let mut out = vec![S::zero(); da.b * (da.c + db.c) * plane];
        let (va, vb) = (self.data(a), self.data(b));
        for s in 0..da.b {
            let dst = s * (da.c + db.c) * plane;
            out[dst..dst + da.c * plane]
                .copy_from_slice(&va[s * da.c * plane..(s + 1) * da.c * plane]);
            out[dst + da.c * plane..dst + (da.c + db.c) * plane]
                .copy_from_slice(&vb[s * db.c * plane..(s + 1) * db.c * plane]);
        }
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(
            vec![da.b, da.c + db.c, da.h, da.w],
            Payload::Real(out),
            needs,
            Op::ConcatChannels { a, b },
        ))
    }

    // ── Spectrum ops ─────────────────────────────────────────────────

    /// Unnormalized forward DFT of a real `[B,C,H,W]` tensor.
    pub fn fft2(&mut self, x: TensorId) -> Result<TensorId> {
        let d = Dims4::of(self.shape(x), "fft2 input")?;
        let mut re = self.data(x).to_vec();
        let mut im = vec![S::zero(); re.len()];
        fft2_planes_raw(&mut re, &mut im, d.h, d.w, false);
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(d.to_vec(), Payload::Complex { re, im }, needs, Op::Fft2 { x }))
    }

    /// Rotate each spectrum so DC sits at `(⌊H/2⌋, ⌊W/2⌋)`.
    pub fn fftshift(&mut self, z: TensorId) -> Result<TensorId> {
        let d = Dims4::of(self.shape(z), "fftshift input")?;
        let (re, im) = self.complex_data(z);
        let mut out_re = vec![S::zero(); re.len()];
        let mut out_im = vec![S::zero(); im.len()];
        shift_planes(re, im, d.h, d.w, d.h / 2, d.w / 2, &mut out_re, &mut out_im);
        let needs = self.nodes[z.0].needs_grad;
        Ok(self.push(
            d.to_vec(),
            Payload::Complex { re: out_re, im: out_im },
            needs,
            Op::FftShift { z },
        ))
    }

    /// Multiply a complex spectrum by a real `[H,W]` map (the same map for
    /// every batch element and channel).
    pub fn scale_spectrum(&mut self, z: TensorId, s: TensorId) -> Result<TensorId> {
        let d = Dims4::of(self.shape(z), "scale_spectrum input")?;
        let ss = self.shape(s).to_vec();
        if ss != [d.h, d.w] {
            return Err(Error::shape("scale_spectrum map", [d.h, d.w], &ss));
        }
        let (re, im) = self.complex_data(z);
        let map = self.data(s);
        let plane = d.h * d.w;
        let mut out_re = vec![S::zero(); re.len()];
        let mut out_im = vec![S::zero(); im.len()];
        for p in 0..d.b * d.c {
            for i in 0..plane {
                out_re[p * plane + i] = re[p * plane + i] * map[i];
                out_im[p * plane + i] = im[p * plane + i] * map[i];
            }
        }
        let needs = self.any_needs_grad(&[z, s]);
        Ok(self.push(
            d.to_vec(),
            Payload::Complex { re: out_re, im: out_im },
            needs,
            Op::SpectrumScale { z, s },
        ))
    }

    /// Per-group spectral energy `E[b,g] = Σ |z|` over the group's channels
    /// and all bins, optionally divided by `H·W·C/G`.
    pub fn group_energy(&mut self, z: TensorId, groups: usize, normalize: bool) -> Result<TensorId> {
        let d = Dims4::of(self.shape(z), "group_energy input")?;
        if groups == 0 || d.c % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "group_energy: {} channels not divisible into {} groups",
                d.c, groups
            )));
        }
        let per_group = d.c / groups;
        let plane = d.h * d.w;
        let norm_div = if normalize {
            S::from_f64((d.h * d.w * per_group) as f64)
        } else {
            S::one()
        };
        let (re, im) = self.complex_data(z);
        let mut out = vec![S::zero(); d.b * groups];
        for b in 0..d.b {
            for g in 0..groups {
                let mut acc = S::zero();
                for c in g * per_group..(g + 1) * per_group {
                    let base = (b * d.c + c) * plane;
                    for i in 0..plane {
                        let (r, q) = (re[base + i], im[base + i]);
                        acc += (r * r + q * q).sqrt();
                    }
                }
                out[b * groups + g] = acc / norm_div;
            }
        }
        assert_all_finite(&out, "group_energy");
        let needs = self.nodes[z.0].needs_grad;
        Ok(self.push(vec![d.b, groups], Payload::Real(out), needs, Op::GroupEnergy { z, groups, norm_div }))
    }

    /// `y[b,g] = x[b,g] · w[g]`.
    pub fn scale_rows(&mut self, x: TensorId, w: TensorId) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws != [xs[1]] {
            return Err(Error::shape("scale_rows", "[B,G]x[G]", (&xs, &ws)));
        }
        let (batch, g) = (xs[0], xs[1]);
        let xv = self.data(x);
        let wv = self.data(w);
        let mut out = vec![S::zero(); batch * g];
        for b in 0..batch {
            for j in 0..g {
                out[b * g + j] = xv[b * g + j] * wv[j];
            }
        }
        let needs = self.any_needs_grad(&[x, w]);
        Ok(self.push(xs, Payload::Real(out), needs, Op::RowScale { x, w }))
    }

    /// Scale every channel of group `g` in sample `b` by `gain[b,g]`.
    pub fn scale_channels(&mut self, x: TensorId, gain: TensorId) -> Result<TensorId> {
        let d = Dims4::of(self.shape(x), "scale_channels input")?;
        let gs = self.shape(gain).to_vec();
        if gs.len() != 2 || gs[0] != d.b || d.c % gs[1] != 0 {
            return Err(Error::shape("scale_channels gain", format!("[{},G | G divides {}]", d.b, d.c), &gs));
        }
        let groups = gs[1];
        let per_group = d.c / groups;
        let plane = d.h * d.w;
        let xv = self.data(x);
        let gv = self.data(gain);
        let mut out = vec![S::zero(); xv.len()];
        for b in 0..d.b {
            for c in 0..d.c {
                let gval = gv[b * groups + c / per_group];
                let base = (b * d.c + c) * plane;
                for i in 0..plane {
                    out[base + i] = xv[base + i] * gval;
                }
            }
        }
        let needs = self.any_needs_grad(&[x, gain]);
        Ok(self.push(d.to_vec(), Payload::Real(out), needs, Op::ChannelScale { x, gain }))
    }

    // ── Losses and reductions ────────────────────────────────────────

    /// Mean binary cross-entropy with logits; `labels[i] ∈ {0, 1}`.
    pub fn bce_with_logits(&mut self, logits: TensorId, labels: &[S]) -> Result<TensorId> {
        let ls = self.shape(logits).to_vec();
        let n: usize = ls.iter().product();
        if n != labels.len() {
            return Err(Error::shape("bce_with_logits labels", n, labels.len()));
        }
        let loss = kernels::bce_with_logits(self.data(logits), labels);
        let needs = self.nodes[logits.0].needs_grad;
        Ok(self.push(
            vec![1],
            Payload::Real(vec![loss]),
            needs,
            Op::Bce { logits, labels: labels.to_vec() },
        ))
    }

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let mut acc = S::zero();
        for v in self.data(x) {
            acc += *v;
        }
        let needs = self.nodes[x.0].needs_grad;
        self.push(vec![1], Payload::Real(vec![acc]), needs, Op::Sum { x })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x * *y).collect();
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), Payload::Real(out), needs, Op::Mul { a, b }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<S> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| *x + *y).collect();
        let needs = self.any_needs_grad(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), Payload::Real(out), needs, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: TensorId, factor: S) -> TensorId {
        let out: Vec<S> = self.data(x).iter().map(|v| *v * factor).collect();
        let needs = self.nodes[x.0].needs_grad;
        self.push(self.shape(x).to_vec(), Payload::Real(out), needs, Op::Scale { x, factor })
    }

    // ── Backward ─────────────────────────────────────────────────────

    fn add_real_grad(&mut self, id: TensorId, delta: &[S]) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        let grad = node.grad.get_or_insert_with(|| node.value.zeros_like());
        match grad {
            Payload::Real(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += *d;
                }
            }
            Payload::Complex { .. } => panic!("real cotangent for complex node"),
        }
    }

    fn add_complex_grad(&mut self, id: TensorId, dre: &[S], dim: &[S]) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        let grad = node.grad.get_or_insert_with(|| node.value.zeros_like());
        match grad {
            Payload::Complex { re, im } => {
                for (a, d) in re.iter_mut().zip(dre) {
                    *a += *d;
                }
                for (a, d) in im.iter_mut().zip(dim) {
                    *a += *d;
                }
            }
            Payload::Real(_) => panic!("complex cotangent for real node"),
        }
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients accumulate
    /// into `store`; gradients of `requires_grad` leaves are returned. The
    /// tape is consumed.
    pub fn backward(mut self, loss: TensorId, store: &mut ParamStore<S>) -> Result<Gradients<S>> {
        if self.data(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.nodes[loss.0].grad = Some(Payload::Real(vec![S::one()]));

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let grad = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    // Terminal; re-attach so the post-pass can read it.
                    self.nodes[i].grad = Some(grad);
                }
                Op::Conv2d { x, k, stride, pad } => {
                    let g = grad.as_real();
                    let d = Dims4::of(&self.nodes[x.0].shape, "conv2d backward").unwrap();
                    let ks = self.nodes[k.0].shape.clone();
                    if self.nodes[x.0].needs_grad {
                        let mut gx = vec![S::zero(); d.numel()];
                        kernels::conv2d_backward_input(
                            g, d.b, d.c, d.h, d.w,
                            self.nodes[k.0].value.as_real(),
                            ks[0], ks[2], stride, pad, &mut gx,
                        );
                        self.add_real_grad(x, &gx);
                    }
                    if self.nodes[k.0].needs_grad {
                        let mut gk = vec![S::zero(); ks.iter().product()];
                        kernels::conv2d_backward_kernel(
                            g,
                            self.nodes[x.0].value.as_real(),
                            d.b, d.c, d.h, d.w, ks[0], ks[2], stride, pad, &mut gk,
                        );
                        self.add_real_grad(k, &gk);
                    }
                }
                Op::BatchNorm { x, gamma, beta, saved } => {
                    let g = grad.as_real();
                    let d = Dims4::of(&self.nodes[x.0].shape, "batchnorm backward").unwrap();
                    let mut gx = vec![S::zero(); d.numel()];
                    let mut gg = vec![S::zero(); d.c];
                    let mut gb = vec![S::zero(); d.c];
                    kernels::batchnorm_backward(
                        g,
                        self.nodes[x.0].value.as_real(),
                        d.b, d.c, d.h, d.w,
                        self.nodes[gamma.0].value.as_real(),
                        &saved,
                        &mut gx, &mut gg, &mut gb,
                    );
                    if self.nodes[x.0].needs_grad {
                        self.add_real_grad(x, &gx);
                    }
                    self.add_real_grad(gamma, &gg);
                    self.add_real_grad(beta, &gb);
                }
                Op::Relu { x } => {
                    let g = grad.as_real();
                    let mut gx = vec![S::zero(); g.len()];
                    kernels::relu_backward(g, self.nodes[x.0].value.as_real(), &mut gx);
                    self.add_real_grad(x, &gx);
                }
                Op::Sigmoid { x } => {
                    let g = grad.as_real();
                    let mut gx = vec![S::zero(); g.len()];
                    kernels::sigmoid_backward(g, self.nodes[i].value.as_real(), &mut gx);
                    self.add_real_grad(x, &gx);
                }
                Op::AvgPool { x, k, stride } => {
                    let g = grad.as_real();
                    let d = Dims4::of(&self.nodes[x.0].shape, "avgpool backward").unwrap();
                    let mut gx = vec![S::zero(); d.numel()];
                    kernels::avgpool_backward(g, d.b, d.c, d.h, d.w, k, stride, &mut gx);
                    self.add_real_grad(x, &gx);
                }
                Op::AdaptiveAvgPool { x } => {
                    let g = grad.as_real();
                    let d = Dims4::of(&self.nodes[x.0].shape, "adaptive pool backward").unwrap();
                    let mut gx = vec![S::zero(); d.numel()];
                    kernels::adaptive_avgpool_backward(g, d.b, d.c, d.h, d.w, &mut gx);
                    self.add_real_grad(x, &gx);
                }
                Op::Reshape { x } => {
                    self.add_real_grad(x, grad.as_real());
                }
                Op::Fc { x, w, b } => {
                    let g = grad.as_real();
                    let xs = self.nodes[x.0].shape.clone();
                    let ws = self.nodes[w.0].shape.clone();
                    let mut gx = vec![S::zero(); xs[0] * xs[1]];
                    let mut gw = vec![S::zero(); ws[0] * ws[1]];
                    let mut gb = vec![S::zero(); ws[1]];
                    kernels::fc_backward(
                        g,
                        self.nodes[x.0].value.as_real(),
                        xs[0], xs[1],
                        self.nodes[w.0].value.as_real(),
                        ws[1],
                        &mut gx, &mut gw, &mut gb,
                    );
                    if self.nodes[x.0].needs_grad {
                        self.add_real_grad(x, &gx);
                    }
                    self.add_real_grad(w, &gw);
                    self.add_real_grad(b, &gb);
                }
                Op::ConcatChannels { a, b } => {
                    let g = grad.as_real();
                    let da = Dims4::of(&self.nodes[a.0].shape, "concat backward").unwrap();
                    let db = Dims4::of(&self.nodes[b.0].shape, "concat backward").unwrap();
                    let plane = da.h * da.w;
                    let mut ga = vec![S::zero(); da.numel()];
                    let mut gb = vec![S::zero(); db.numel()];
                    for s in 0..da.b {
                        let src = s * (da.c + db.c) * plane;
                        ga[s * da.c * plane..(s + 1) * da.c * plane]
                            .copy_from_slice(&g[src..src + da.c * plane]);
                        gb[s * db.c * plane..(s + 1) * db.c * plane]
                            .copy_from_slice(&g[src + da.c * plane..src + (da.c + db.c) * plane]);
                    }
                    self.add_real_grad(a, &ga);
                    self.add_real_grad(b, &gb);
                }
                Op::Fft2 { x } => {
                    let (gre, gim) = grad.as_complex();
                    let d = Dims4::of(&self.nodes[x.0].shape, "fft2 backward").unwrap();
                    let gx = fft2_adjoint_real(gre, gim, d.h, d.w);
                    self.add_real_grad(x, &gx);
                }
                Op::FftShift { z } => {
                    let (gre, gim) = grad.as_complex();
                    let d = Dims4::of(&self.nodes[z.0].shape, "fftshift backward").unwrap();
                    let mut ore = vec![S::zero(); gre.len()];
                    let mut oim = vec![S::zero(); gim.len()];
                    // Adjoint of an index permutation is its inverse shift.
                    let sy = (d.h - d.h / 2) % d.h.max(1);
                    let sx = (d.w - d.w / 2) % d.w.max(1);
                    shift_planes(gre, gim, d.h, d.w, sy, sx, &mut ore, &mut oim);
                    self.add_complex_grad(z, &ore, &oim);
                }
                Op::SpectrumScale { z, s } => {
                    let (gre, gim) = grad.as_complex();
                    let d = Dims4::of(&self.nodes[z.0].shape, "scale_spectrum backward").unwrap();
                    let plane = d.h * d.w;
                    let map = self.nodes[s.0].value.as_real().to_vec();
                    if self.nodes[z.0].needs_grad {
                        let mut zre = vec![S::zero(); gre.len()];
                        let mut zim = vec![S::zero(); gim.len()];
                        for p in 0..d.b * d.c {
                            for j in 0..plane {
                                zre[p * plane + j] = gre[p * plane + j] * map[j];
                                zim[p * plane + j] = gim[p * plane + j] * map[j];
                            }
                        }
                        self.add_complex_grad(z, &zre, &zim);
                    }
                    if self.nodes[s.0].needs_grad {
                        let (re, im) = self.nodes[z.0].value.as_complex();
                        let mut gs = vec![S::zero(); plane];
                        for p in 0..d.b * d.c {
                            for j in 0..plane {
                                gs[j] += gre[p * plane + j] * re[p * plane + j]
                                    + gim[p * plane + j] * im[p * plane + j];
                            }
                        }
                        self.add_real_grad(s, &gs);
                    }
                }
                Op::GroupEnergy { z, groups, norm_div } => {
                    let g = grad.as_real();
                    let d = Dims4::of(&self.nodes[z.0].shape, "group_energy backward").unwrap();
                    let per_group = d.c / groups;
                    let plane = d.h * d.w;
                    let (re, im) = self.nodes[z.0].value.as_complex();
                    let mut zre = vec![S::zero(); re.len()];
                    let mut zim = vec![S::zero(); im.len()];
                    for b in 0..d.b {
                        for c in 0..d.c {
                            let upstream = g[b * groups + c / per_group] / norm_div;
                            let base = (b * d.c + c) * plane;
                            for j in 0..plane {
                                let (r, q) = (re[base + j], im[base + j]);
                                let mag = (r * r + q * q).sqrt();
                                if mag > S::zero() {
                                    zre[base + j] = upstream * r / mag;
                                    zim[base + j] = upstream * q / mag;
                                }
                            }
                        }
                    }
                    self.add_complex_grad(z, &zre, &zim);
                }
                Op::RowScale { x, w } => {
                    let g = grad.as_real();
                    let xs = self.nodes[x.0].shape.clone();
                    let (batch, gdim) = (xs[0], xs[1]);
                    if self.nodes[x.0].needs_grad {
                        let wv = self.nodes[w.0].value.as_real();
                        let gx: Vec<S> = g
                            .iter()
                            .enumerate()
                            .map(|(idx, d)| *d * wv[idx % gdim])
                            .collect();
                        self.add_real_grad(x, &gx);
                    }
                    if self.nodes[w.0].needs_grad {
                        let xv = self.nodes[x.0].value.as_real();
                        let mut gw = vec![S::zero(); gdim];
                        for b in 0..batch {
                            for j in 0..gdim {
                                gw[j] += g[b * gdim + j] * xv[b * gdim + j];
                            }
                        }
                        self.add_real_grad(w, &gw);
                    }
                }
                Op::ChannelScale { x, gain } => {
                    let g = grad.as_real();
                    let d = Dims4::of(&self.nodes[x.0].shape, "scale_channels backward").unwrap();
                    let groups = self.nodes[gain.0].shape[1];
                    let per_group = d.c / groups;
                    let plane = d.h * d.w;
                    if self.nodes[x.0].needs_grad {
                        let gv = self.nodes[gain.0].value.as_real();
                        let mut gx = vec![S::zero(); d.numel()];
                        for b in 0..d.b {
                            for c in 0..d.c {
                                let gval = gv[b * groups + c / per_group];
                                let base = (b * d.c + c) * plane;
                                for j in 0..plane {
                                    gx[base + j] = g[base + j] * gval;
                                }
                            }
                        }
                        self.add_real_grad(x, &gx);
                    }
                    if self.nodes[gain.0].needs_grad {
                        let xv = self.nodes[x.0].value.as_real();
                        let mut gg = vec![S::zero(); d.b * groups];
                        for b in 0..d.b {
                            for c in 0..d.c {
                                let base = (b * d.c + c) * plane;
                                let mut acc = S::zero();
                                for j in 0..plane {
                                    acc += g[base + j] * xv[base + j];
                                }
                                gg[b * groups + c / per_group] += acc;
                            }
                        }
                        self.add_real_grad(gain, &gg);
                    }
                }
                Op::Bce { logits, labels } => {
                    let g = grad.as_real()[0];
                    let lv = self.nodes[logits.0].value.as_real();
                    let mut gl = vec![S::zero(); lv.len()];
                    kernels::bce_with_logits_backward(g, lv, &labels, &mut gl);
                    self.add_real_grad(logits, &gl);
                }
                Op::Sum { x } => {
                    let g = grad.as_real()[0];
                    let gx = vec![g; self.nodes[x.0].value.as_real().len()];
                    self.add_real_grad(x, &gx);
                }
                Op::Mul { a, b } => {
                    let g = grad.as_real().to_vec();
                    if self.nodes[a.0].needs_grad {
                        let bv = self.nodes[b.0].value.as_real();
                        let ga: Vec<S> = g.iter().zip(bv).map(|(d, v)| *d * *v).collect();
                        self.add_real_grad(a, &ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let av = self.nodes[a.0].value.as_real();
                        let gb: Vec<S> = g.iter().zip(av).map(|(d, v)| *d * *v).collect();
                        self.add_real_grad(b, &gb);
                    }
                }
                Op::Add { a, b } => {
                    let g = grad.as_real();
                    self.add_real_grad(a, g);
                    self.add_real_grad(b, g);
                }
                Op::Scale { x, factor } => {
                    let gx: Vec<S> = grad.as_real().iter().map(|d| *d * factor).collect();
                    self.add_real_grad(x, &gx);
                }
            }
        }

        // Hand leaf gradients out: parameters into the store, plain
        // requires_grad leaves into the returned map.
        let mut by_id = HashMap::new();
        for (idx, node) in self.nodes.iter_mut().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                continue;
            }
            if let Some(Payload::Real(g)) = node.grad.take() {
                match node.param {
                    Some(pid) => store.accumulate_grad(pid, &g),
                    None => {
                        by_id.insert(idx, g);
                    }
                }
            }
        }
        Ok(Gradients { by_id })
    }
}
