//! Learnable frequency attention: distance-initialized spectral masks plus
//! group-energy channel recalibration.
//!
//! Each branch owns a soft mask over the centered spectrum and a per-group
//! weight vector. Features are transformed `F → fftshift(fft2(F))`, scaled by
//! `σ(mask)`, reduced to per-group magnitude sums `E`, and the spatial
//! features are rescaled channel-wise by `relu(W·E)`. The spectrum is never
//! inverted back: it only drives the gains.
//!
//! Mask initialization embeds the geometric prior: with `D` the normalized
//! center distance, the rich branch starts at `α·D + α` (high frequencies
//! favored) and the poor branch at `α·(1−D) + α` (low frequencies favored).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, TensorId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreqAttentionConfig {
    /// Number of channel groups G; must divide the feature channel count.
    pub groups: usize,
    /// Mask initialization scale α.
    pub alpha: f64,
    /// Divide group energies by `H·W·(C/G)` to keep gains O(1).
    pub energy_norm: bool,
}

impl Default for FreqAttentionConfig {
    fn default() -> Self {
        FreqAttentionConfig { groups: 8, alpha: 0.5, energy_norm: true }
    }
}

impl FreqAttentionConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.groups == 0 || channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "groups {} must divide channel count {channels}",
                self.groups
            )));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha {} must be positive", self.alpha)));
        }
        Ok(())
    }
}

/// Which branch's parameters to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Texture-rich branch: high-frequency-leaning mask.
    Rich,
    /// Texture-poor branch: low-frequency-leaning mask.
    Poor,
}

/// Normalized Euclidean distance from the spectrum center, `[H,W]` in `[0,1]`.
/// The center is `(⌊H/2⌋, ⌊W/2⌋)` (the DC bin after fftshift); normalization
/// is by the farthest of the four corners.
pub fn distance_matrix<S: Scalar>(h: usize, w: usize) -> Tensor<S> {
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let corner = |y: f64, x: f64| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
    let r_max = [
        corner(0.0, 0.0),
        corner(0.0, (w - 1) as f64),
        corner((h - 1) as f64, 0.0),
        corner((h - 1) as f64, (w - 1) as f64),
    ]
    .into_iter()
    .fold(0.0f64, f64::max)
    .max(f64::MIN_POSITIVE);

    Tensor::from_fn(vec![h, w], |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        S::from_f64(((y - cy).powi(2) + (x - cx).powi(2)).sqrt() / r_max)
    })
}

/// Initial masks: `(α·D + α, α·(1−D) + α)`.
pub fn init_masks<S: Scalar>(distance: &Tensor<S>, alpha: f64) -> (Tensor<S>, Tensor<S>) {
    let a = S::from_f64(alpha);
    let high = Tensor::from_fn(distance.shape.clone(), |i| a * distance.data[i] + a);
    let low = Tensor::from_fn(distance.shape.clone(), |i| {
        a * (S::one() - distance.data[i]) + a
    });
    (high, low)
}

/// The four trainable tensors of the attention module plus their spatial
/// size. Branches share no parameters.
#[derive(Clone, Debug)]
pub struct FreqAttentionParams {
    pub mask_high: ParamId,
    pub mask_low: ParamId,
    pub weight_high: ParamId,
    pub weight_low: ParamId,
    pub mask_height: usize,
    pub mask_width: usize,
}

impl FreqAttentionParams {
    /// Register masks (distance-initialized) and group weights (all ones).
    pub fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        cfg: &FreqAttentionConfig,
        h: usize,
        w: usize,
    ) -> Self {
        let d = distance_matrix::<S>(h, w);
        let (high, low) = init_masks(&d, cfg.alpha);
        let ones = vec![S::one(); cfg.groups];
        FreqAttentionParams {
            mask_high: store.add_trainable("freq_attention.mask_high", vec![h, w], high.data),
            mask_low: store.add_trainable("freq_attention.mask_low", vec![h, w], low.data),
            weight_high: store.add_trainable("freq_attention.weight_high", vec![cfg.groups], ones.clone()),
            weight_low: store.add_trainable("freq_attention.weight_low", vec![cfg.groups], ones),
            mask_height: h,
            mask_width: w,
        }
    }

    pub fn branch_ids(&self, branch: Branch) -> (ParamId, ParamId) {
        match branch {
            Branch::Rich => (self.mask_high, self.weight_high),
            Branch::Poor => (self.mask_low, self.weight_low),
        }
    }
}

/// Result of one branch pass.
pub struct BranchOutput {
    pub features: TensorId,
    /// Per-group energies `[B,G]`; `None` when the branch was bypassed.
    pub energies: Option<TensorId>,
}

/// Recalibrate one branch's features. With `bypass` the input passes through
/// untouched and the branch parameters join no computation at all.
pub fn branch_forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &FreqAttentionParams,
    cfg: &FreqAttentionConfig,
    branch: Branch,
    features: TensorId,
    bypass: bool,
) -> Result<BranchOutput> {
    if bypass {
        return Ok(BranchOutput { features, energies: None });
    }
    let shape = tape.shape(features).to_vec();
    if shape.len() != 4 || shape[2] != params.mask_height || shape[3] != params.mask_width {
        return Err(Error::shape(
            "freq_attention features vs mask",
            [params.mask_height, params.mask_width],
            &shape,
        ));
    }
    let (mask_pid, weight_pid) = params.branch_ids(branch);
    let mask = tape.param(store, mask_pid);
    let weight = tape.param(store, weight_pid);

    let spectrum = tape.fft2(features)?;
    let centered = tape.fftshift(spectrum)?;
    let soft_mask = tape.sigmoid(mask);
    let screened = tape.scale_spectrum(centered, soft_mask)?;
    let energies = tape.group_energy(screened, cfg.groups, cfg.energy_norm)?;
    let weighted = tape.scale_rows(energies, weight)?;
    let gains = tape.relu(weighted);
    let recalibrated = tape.scale_channels(features, gains)?;
    Ok(BranchOutput { features: recalibrated, energies: Some(energies) })
}

/// Ablation switches: a bypassed branch becomes the identity and its
/// parameters receive no gradient.
#[derive(Clone, Copy, Debug, Default)]
pub struct BranchBypass {
    pub rich: bool,
    pub poor: bool,
}

/// Full dual-branch pass: rich features use the high-frequency mask and
/// weights, poor features the low-frequency ones.
#[allow(clippy::too_many_arguments)]
pub fn attention_forward<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &FreqAttentionParams,
    cfg: &FreqAttentionConfig,
    rich: TensorId,
    poor: TensorId,
    bypass: BranchBypass,
) -> Result<(BranchOutput, BranchOutput)> {
    let rich_out = branch_forward(tape, store, params, cfg, Branch::Rich, rich, bypass.rich)?;
    let poor_out = branch_forward(tape, store, params, cfg, Branch::Poor, poor, bypass.poor)?;
    Ok((rich_out, poor_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_features(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn distance_matrix_center_and_corner_values() {
        for (h, w) in [(8, 8), (16, 12), (7, 9), (4, 4)] {
            let d = distance_matrix::<f64>(h, w);
            assert_eq!(d.data[(h / 2) * w + w / 2], 0.0, "{h}x{w} center");
            let max = d.data.iter().cloned().fold(0.0f64, f64::max);
            assert!((max - 1.0).abs() < 1e-12, "{h}x{w} max {max}");
            assert!(d.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn distance_matrix_hand_values_4x4() {
        let d = distance_matrix::<f64>(4, 4);
        assert!((d.data[0] - 1.0).abs() < 1e-12, "D(0,0) = sqrt(8)/sqrt(8)");
        let expected = 2.0 / 8.0f64.sqrt();
        assert!((d.data[2 * 4] - expected).abs() < 1e-12, "D(2,0) = 2/sqrt(8)");
    }

    #[test]
    fn distance_matrix_symmetric_under_180_rotation_for_even_dims() {
        let (h, w) = (8, 6);
        let d = distance_matrix::<f64>(h, w);
        let (cy, cx) = (h / 2, w / 2);
        for y in 0..h {
            for x in 0..w {
                let ry = (2 * cy).checked_sub(y).filter(|v| *v < h);
                let rx = (2 * cx).checked_sub(x).filter(|v| *v < w);
                if let (Some(ry), Some(rx)) = (ry, rx) {
                    assert!((d.data[y * w + x] - d.data[ry * w + rx]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mask_init_identities() {
        let alpha = 0.5;
        let d = distance_matrix::<f64>(16, 16);
        let (high, low) = init_masks(&d, alpha);
        let center = (16 / 2) * 16 + 16 / 2;
        assert!((high.data[center] - alpha).abs() < 1e-15, "center M_high = α");
        assert!((low.data[center] - 2.0 * alpha).abs() < 1e-15, "center M_low = 2α");
        assert!((high.data[0] - 2.0 * alpha).abs() < 1e-15, "corner M_high = 2α");
        assert!((low.data[0] - alpha).abs() < 1e-15, "corner M_low = α");
        for i in 0..high.numel() {
            assert!(
                (high.data[i] + low.data[i] - 3.0 * alpha).abs() < 1e-12,
                "M_high + M_low != 3α at {i}"
            );
        }
    }

    #[test]
    fn mask_init_monotone_in_distance() {
        let d = distance_matrix::<f64>(12, 10);
        let (high, low) = init_masks(&d, 0.5);
        for i in 0..d.numel() {
            for j in 0..d.numel() {
                if d.data[i] < d.data[j] {
                    assert!(high.data[i] <= high.data[j], "M_high not non-decreasing");
                    assert!(low.data[i] >= low.data[j], "M_low not non-increasing");
                }
            }
        }
    }

    fn setup(
        groups: usize,
        h: usize,
        w: usize,
        alpha: f64,
    ) -> (ParamStore<f64>, FreqAttentionParams, FreqAttentionConfig) {
        let cfg = FreqAttentionConfig { groups, alpha, energy_norm: true };
        let mut store = ParamStore::new();
        let params = FreqAttentionParams::init(&mut store, &cfg, h, w);
        (store, params, cfg)
    }

    #[test]
    fn zero_mask_halves_the_spectrum_and_large_mask_saturates() {
        let (mut store, params, cfg) = setup(2, 8, 8, 0.5);
        let f = random_features(vec![1, 4, 8, 8], 3);

        for (fill, factor, tol) in [(0.0, 0.5, 1e-12), (30.0, 1.0, 1e-9)] {
            store.value_mut(params.mask_high).fill(fill);
            let mut tape = Tape::new();
            let fi = tape.leaf(&f);
            let out = branch_forward(&mut tape, &store, &params, &cfg, Branch::Rich, fi, false)
                .unwrap();
            // Reconstruct the screened spectrum the branch produced: compare
            // against factor · fftshift(fft2(f)).
            let z = crate::tensor::fft::fft2(&f).unwrap();
            let zs = crate::tensor::fft::fftshift(&z).unwrap();
            let e = tape.data(out.energies.unwrap());
            let mut expected = vec![0.0f64; e.len()];
            let per_group = 4 / cfg.groups;
            let plane = 64.0;
            for g in 0..cfg.groups {
                let mut acc = 0.0;
                for c in g * per_group..(g + 1) * per_group {
                    for i in 0..64 {
                        let idx = c * 64 + i;
                        acc += factor * (zs.re[idx].powi(2) + zs.im[idx].powi(2)).sqrt();
                    }
                }
                expected[g] = acc / (plane * per_group as f64);
            }
            for i in 0..e.len() {
                assert!(
                    (e[i] - expected[i]).abs() < tol,
                    "fill {fill}: E[{i}] {} vs {}",
                    e[i],
                    expected[i]
                );
            }
        }
    }

    #[test]
    fn group_energy_matches_magnitude_sum_oracle() {
        let (store, params, cfg) = setup(4, 8, 8, 0.5);
        let f = random_features(vec![2, 8, 8, 8], 7);
        let mut tape = Tape::new();
        let fi = tape.leaf(&f);
        let out = branch_forward(&mut tape, &store, &params, &cfg, Branch::Poor, fi, false).unwrap();
        let e = tape.data(out.energies.unwrap()).to_vec();

        // Triple-loop oracle over an independently computed masked spectrum.
        let z = crate::tensor::fft::fft2(&f).unwrap();
        let zs = crate::tensor::fft::fftshift(&z).unwrap();
        let mask = store.value(params.mask_low);
        let per_group = 8 / cfg.groups;
        let norm = 64.0 * per_group as f64;
        for b in 0..2 {
            for g in 0..cfg.groups {
                let mut acc = 0.0;
                for c in g * per_group..(g + 1) * per_group {
                    for i in 0..64 {
                        let idx = (b * 8 + c) * 64 + i;
                        let s = 1.0 / (1.0 + (-mask[i]).exp());
                        acc += ((zs.re[idx] * s).powi(2) + (zs.im[idx] * s).powi(2)).sqrt();
                    }
                }
                let got = e[b * cfg.groups + g];
                let want = acc / norm;
                assert!((got - want).abs() < 1e-9, "E[{b},{g}]: {got} vs {want}");
            }
        }
    }

    #[test]
    fn energies_invariant_under_cyclic_translation() {
        let (store, params, cfg) = setup(4, 8, 8, 0.5);
        let f = random_features(vec![1, 4, 8, 8], 11);
        // Cyclic shift by (3, 5).
        let mut shifted = f.clone();
        for c in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    shifted.data[c * 64 + ((y + 3) % 8) * 8 + (x + 5) % 8] =
                        f.data[c * 64 + y * 8 + x];
                }
            }
        }
        let energies = |t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let fi = tape.leaf(t);
            let out =
                branch_forward(&mut tape, &store, &params, &cfg, Branch::Rich, fi, false).unwrap();
            tape.data(out.energies.unwrap()).to_vec()
        };
        let (e0, e1) = (energies(&f), energies(&shifted));
        for i in 0..e0.len() {
            assert!((e0[i] - e1[i]).abs() < 1e-6, "E[{i}] moved under translation");
        }
    }

    #[test]
    fn bypass_is_exact_identity_and_shapes_are_preserved() {
        let (store, params, cfg) = setup(8, 8, 8, 0.5);
        let rich = random_features(vec![2, 32, 8, 8], 13);
        let poor = random_features(vec![2, 32, 8, 8], 14);
        let mut tape = Tape::new();
        let ri = tape.leaf(&rich);
        let pi = tape.leaf(&poor);
        let (ro, po) = attention_forward(
            &mut tape,
            &store,
            &params,
            &cfg,
            ri,
            pi,
            BranchBypass { rich: true, poor: true },
        )
        .unwrap();
        assert_eq!(tape.data(ro.features), rich.data.as_slice());
        assert_eq!(tape.data(po.features), poor.data.as_slice());
        assert!(ro.energies.is_none() && po.energies.is_none());

        let (ro, po) = attention_forward(
            &mut tape,
            &store,
            &params,
            &cfg,
            ri,
            pi,
            BranchBypass::default(),
        )
        .unwrap();
        assert_eq!(tape.shape(ro.features), &[2, 32, 8, 8]);
        assert_eq!(tape.shape(po.features), &[2, 32, 8, 8]);
    }

    #[test]
    fn gradients_reach_all_four_parameter_groups() {
        let (mut store, params, cfg) = setup(8, 8, 8, 0.5);
        let rich = random_features(vec![2, 32, 8, 8], 15);
        let poor = random_features(vec![2, 32, 8, 8], 16);
        let mut tape = Tape::new();
        let ri = tape.leaf(&rich);
        let pi = tape.leaf(&poor);
        let (ro, po) =
            attention_forward(&mut tape, &store, &params, &cfg, ri, pi, BranchBypass::default())
                .unwrap();
        let sr = tape.mul(ro.features, ro.features).unwrap();
        let sp = tape.mul(po.features, po.features).unwrap();
        let s1 = tape.sum(sr);
        let s2 = tape.sum(sp);
        let loss = tape.add(s1, s2).unwrap();
        tape.backward(loss, &mut store).unwrap();
        for pid in [params.mask_high, params.mask_low, params.weight_high, params.weight_low] {
            let g = store.grad(pid);
            assert!(
                g.iter().any(|v| v.abs() > 1e-12),
                "{}: dead parameter at init",
                store.get(pid).name
            );
        }
    }

    #[test]
    fn branch_gradients_match_finite_differences() {
        let cfg = FreqAttentionConfig { groups: 2, alpha: 0.5, energy_norm: true };
        let feat = random_features(vec![1, 4, 6, 6], 17);

        let loss_with = |mask: &[f64], weight: &[f64], want_grads: bool| {
            let mut store = ParamStore::new();
            let m = store.add_trainable("m", vec![6, 6], mask.to_vec());
            let w = store.add_trainable("w", vec![2], weight.to_vec());
            let params = FreqAttentionParams {
                mask_high: m,
                mask_low: m,
                weight_high: w,
                weight_low: w,
                mask_height: 6,
                mask_width: 6,
            };
            let mut tape = Tape::new();
            let fi = tape.leaf(&feat);
            let out =
                branch_forward(&mut tape, &store, &params, &cfg, Branch::Rich, fi, false).unwrap();
            let sq = tape.mul(out.features, out.features).unwrap();
            let loss = tape.sum(sq);
            let lv = tape.data(loss)[0];
            if want_grads {
                tape.backward(loss, &mut store).unwrap();
                (lv, Some((store.grad(m).to_vec(), store.grad(w).to_vec())))
            } else {
                (lv, None)
            }
        };

        let d = distance_matrix::<f64>(6, 6);
        let (mask0, _) = init_masks(&d, 0.5);
        let weight0 = vec![1.0, 0.8];
        let (_, grads) = loss_with(&mask0.data, &weight0, true);
        let (gm, gw) = grads.unwrap();

        let h = 1e-5;
        for i in [0usize, 7, 21, 35] {
            let mut plus = mask0.data.clone();
            plus[i] += h;
            let mut minus = mask0.data.clone();
            minus[i] -= h;
            let fd = (loss_with(&plus, &weight0, false).0 - loss_with(&minus, &weight0, false).0)
                / (2.0 * h);
            let rel = (gm[i] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-3, "mask grad [{i}]: {} vs FD {fd}", gm[i]);
        }
        for i in 0..2 {
            let mut plus = weight0.clone();
            plus[i] += h;
            let mut minus = weight0.clone();
            minus[i] -= h;
            let fd = (loss_with(&mask0.data, &plus, false).0
                - loss_with(&mask0.data, &minus, false).0)
                / (2.0 * h);
            let rel = (gw[i] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-3, "weight grad [{i}]: {} vs FD {fd}", gw[i]);
        }
    }
}
