//! The full detector network and its cascaded discriminator.
//!
//! Two encoders (one per view) compress 90-channel high-pass residuals into
//! 32-channel feature maps, frequency attention recalibrates them, the two
//! branches are concatenated to 64 channels and a cascade of Conv-BN-ReLU
//! blocks with interleaved 2×2 average pooling reduces them to a single
//! logit. Discriminator convolutions are 9×9 (stride 1, padded); encoder
//! convolutions 3×3. The default-config trainable parameter total is
//! 1,096,113 and is frozen as a regression constant in the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::Ablation;
use crate::error::{Error, Result};
use crate::freq_attention::{
    attention_forward, BranchBypass, FreqAttentionConfig, FreqAttentionParams,
};
use crate::smash::ViewPair;
use crate::srm::{apply_srm, SrmFilterBank, RESIDUAL_CHANNELS};
use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, TensorId};

/// Channel width of each branch after encoding.
pub const FEATURE_CHANNELS: usize = 32;
/// Channel width after fusing the two branches.
pub const FUSED_CHANNELS: usize = 2 * FEATURE_CHANNELS;
/// Number of Conv-BN-ReLU blocks in the cascade.
pub const CASCADE_BLOCKS: usize = 10;
/// Cascade blocks followed by a 2×2 stride-2 average pooling stage.
pub const POOL_AFTER_BLOCK: [usize; 3] = [3, 5, 7];

/// Architecture parameters; serialized into checkpoints and hashed so a
/// checkpoint can only be loaded into the model it was trained as.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spatial size of the input views (masks are sized to it).
    pub view_size: usize,
    pub attention: FreqAttentionConfig,
    pub ablation: Ablation,
    /// Discriminator convolution kernel size.
    pub disc_kernel: usize,
    /// Encoder convolution kernel size.
    pub enc_kernel: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ModelConfig {
    pub fn new(view_size: usize, attention: FreqAttentionConfig, ablation: Ablation) -> Self {
        ModelConfig {
            view_size,
            attention,
            ablation,
            disc_kernel: 9,
            enc_kernel: 3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention.validate(FEATURE_CHANNELS)?;
        if self.disc_kernel % 2 == 0 || self.enc_kernel % 2 == 0 {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if self.view_size < 8 {
            return Err(Error::Config(format!(
                "view_size {} too small for three 2x pooling stages (need ≥ 8)",
                self.view_size
            )));
        }
        Ok(())
    }

    pub fn bypass(&self) -> BranchBypass {
        match self.ablation {
            Ablation::Full => BranchBypass { rich: false, poor: false },
            Ablation::NoLfa => BranchBypass { rich: true, poor: true },
            Ablation::NoLow => BranchBypass { rich: false, poor: true },
            Ablation::NoHigh => BranchBypass { rich: true, poor: false },
        }
    }
}

/// One Conv-BN-ReLU unit.
#[derive(Clone, Debug)]
struct ConvBnBlock {
    conv_w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    run_mean: ParamId,
    run_var: ParamId,
    pad: usize,
}

impl ConvBnBlock {
    fn init<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights: Vec<S> = (0..c_out * c_in * k * k)
            .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        ConvBnBlock {
            conv_w: store.add_trainable(&format!("{name}.conv.weight"), vec![c_out, c_in, k, k], weights),
            gamma: store.add_trainable(&format!("{name}.bn.gamma"), vec![c_out], vec![S::one(); c_out]),
            beta: store.add_trainable(&format!("{name}.bn.beta"), vec![c_out], vec![S::zero(); c_out]),
            run_mean: store.add_buffer(&format!("{name}.bn.running_mean"), vec![c_out], vec![S::zero(); c_out]),
            run_var: store.add_buffer(&format!("{name}.bn.running_var"), vec![c_out], vec![S::one(); c_out]),
            pad: (k - 1) / 2,
        }
    }

    fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &mut ParamStore<S>,
        x: TensorId,
        momentum: f64,
        eps: f64,
        training: bool,
    ) -> Result<TensorId> {
        let w = tape.param(store, self.conv_w);
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let conv = tape.conv2d(x, w, 1, self.pad)?;
        let mut rm = store.value(self.run_mean).to_vec();
        let mut rv = store.value(self.run_var).to_vec();
        let bn = tape.batchnorm2d(
            conv,
            g,
            b,
            &mut rm,
            &mut rv,
            S::from_f64(momentum),
            S::from_f64(eps),
            training,
        )?;
        if training {
            store.load_value(self.run_mean, rm)?;
            store.load_value(self.run_var, rv)?;
        }
        Ok(tape.relu(bn))
    }
}

/// A single prediction: raw logit, fake probability and the 0.5-threshold
/// label (`true` = fake).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub logit: f64,
    pub prob: f64,
    pub label_hat: bool,
}

impl Prediction {
    pub fn from_logit(logit: f64) -> Self {
        let prob = 1.0 / (1.0 + (-logit).exp());
        Prediction { logit, prob, label_hat: prob >= 0.5 }
    }
}

/// Everything the forward pass exposes to callers.
#[derive(Debug)]
pub struct ForwardOutput {
    /// `[B,1]` raw logits.
    pub logits: TensorId,
    /// `[B,32]` penultimate pooled features (pre-FC).
    pub pooled: TensorId,
    /// Per-group energies of each branch, when the branch was active.
    pub energies_rich: Option<TensorId>,
    pub energies_poor: Option<TensorId>,
}

/// The full network: per-branch residual encoders, frequency attention and
/// the cascaded discriminator.
pub struct Detector<S: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub bank: SrmFilterBank,
    enc_rich: ConvBnBlock,
    enc_poor: ConvBnBlock,
    attention: FreqAttentionParams,
    cascade: Vec<ConvBnBlock>,
    fc_w: ParamId,
    fc_b: ParamId,
}

impl<S: Scalar> Detector<S> {
    /// Build with fan-in-scaled uniform weight init from the given seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x6d6f64656c);

        let enc_rich = ConvBnBlock::init(
            &mut store, "encoder_rich", RESIDUAL_CHANNELS, FEATURE_CHANNELS, config.enc_kernel, &mut rng,
        );
        let enc_poor = ConvBnBlock::init(
            &mut store, "encoder_poor", RESIDUAL_CHANNELS, FEATURE_CHANNELS, config.enc_kernel, &mut rng,
        );
        let attention =
            FreqAttentionParams::init(&mut store, &config.attention, config.view_size, config.view_size);

        let mut cascade = Vec::with_capacity(CASCADE_BLOCKS);
        for i in 0..CASCADE_BLOCKS {
            let c_in = if i == 0 { FUSED_CHANNELS } else { FEATURE_CHANNELS };
            cascade.push(ConvBnBlock::init(
                &mut store,
                &format!("cascade.block{i:02}"),
                c_in,
                FEATURE_CHANNELS,
                config.disc_kernel,
                &mut rng,
            ));
        }

        let bound = 1.0 / (FEATURE_CHANNELS as f64).sqrt();
        let fc_weights: Vec<S> =
            (0..FEATURE_CHANNELS).map(|_| S::from_f64(rng.gen_range(-bound..bound))).collect();
        let fc_w = store.add_trainable("head.fc.weight", vec![FEATURE_CHANNELS, 1], fc_weights);
        let fc_b = store.add_trainable("head.fc.bias", vec![1], vec![S::zero()]);

        Ok(Detector {
            config,
            store,
            bank: SrmFilterBank::build(),
            enc_rich,
            enc_poor,
            attention,
            cascade,
            fc_w,
            fc_b,
        })
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.store.trainable_param_count()
    }

    pub fn attention_params(&self) -> &FreqAttentionParams {
        &self.attention
    }

    /// Stack per-image view pairs into `[B,3,V,V]` batch tensors.
    pub fn stack_views(views: &[ViewPair<S>]) -> Result<(Tensor<S>, Tensor<S>)> {
        if views.is_empty() {
            return Err(Error::InvalidArgument("empty view batch".into()));
        }
        let shape = &views[0].rich.shape;
        let (h, w) = (shape[2], shape[3]);
        let plane = 3 * h * w;
        let mut rich = Tensor::zeros(vec![views.len(), 3, h, w]);
        let mut poor = rich.clone();
        for (i, v) in views.iter().enumerate() {
            if v.rich.shape != *shape || v.poor.shape != *shape {
                return Err(Error::shape("stack_views", shape, &v.rich.shape));
            }
            rich.data[i * plane..(i + 1) * plane].copy_from_slice(&v.rich.data);
            poor.data[i * plane..(i + 1) * plane].copy_from_slice(&v.poor.data);
        }
        Ok((rich, poor))
    }

    fn encode_branch(
        &mut self,
        tape: &mut Tape<S>,
        view: &Tensor<S>,
        rich: bool,
        training: bool,
    ) -> Result<TensorId> {
        let residuals = apply_srm(view, &self.bank)?;
        let res_id = tape.leaf(&residuals);
        let block = if rich { self.enc_rich.clone() } else { self.enc_poor.clone() };
        block.forward(
            tape,
            &mut self.store,
            res_id,
            self.config.bn_momentum,
            self.config.bn_eps,
            training,
        )
    }

    /// Full forward pass over a stacked batch of views.
    pub fn forward(
        &mut self,
        tape: &mut Tape<S>,
        rich_views: &Tensor<S>,
        poor_views: &Tensor<S>,
        training: bool,
    ) -> Result<ForwardOutput> {
        let f_rich = self.encode_branch(tape, rich_views, true, training)?;
        let f_poor = self.encode_branch(tape, poor_views, false, training)?;

        let bypass = self.config.bypass();
        let (rich_out, poor_out) = attention_forward(
            tape,
            &self.store,
            &self.attention,
            &self.config.attention,
            f_rich,
            f_poor,
            bypass,
        )?;

        let mut x = tape.concat_channels(rich_out.features, poor_out.features)?;
        let mut pool_stage = 0usize;
        for (i, block) in self.cascade.clone().iter().enumerate() {
            x = block.forward(tape, &mut self.store, x, self.config.bn_momentum, self.config.bn_eps, training)?;
            if POOL_AFTER_BLOCK.contains(&i) {
                pool_stage += 1;
                let dims = tape.shape(x);
                if dims[2] < 2 || dims[3] < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "spatial dims {}x{} too small at pooling stage {pool_stage}",
                        dims[2], dims[3]
                    )));
                }
                x = tape.avgpool2d(x, 2, 2)?;
            }
        }
        let pooled4 = tape.adaptive_avgpool(x)?;
        let batch = tape.shape(pooled4)[0];
        let pooled = tape.reshape(pooled4, vec![batch, FEATURE_CHANNELS])?;
        let w = tape.param(&self.store, self.fc_w);
        let b = tape.param(&self.store, self.fc_b);
        let logits = tape.fully_connected(pooled, w, b)?;

        Ok(ForwardOutput {
            logits,
            pooled,
            energies_rich: rich_out.energies,
            energies_poor: poor_out.energies,
        })
    }

    /// Forward plus mean BCE loss. `labels[i] = 1` marks a fake sample.
    pub fn forward_loss(
        &mut self,
        tape: &mut Tape<S>,
        rich_views: &Tensor<S>,
        poor_views: &Tensor<S>,
        labels: &[S],
        training: bool,
    ) -> Result<(TensorId, ForwardOutput)> {
        let out = self.forward(tape, rich_views, poor_views, training)?;
        let loss = tape.bce_with_logits(out.logits, labels)?;
        Ok((loss, out))
    }

    /// Eval-mode predictions for a batch of view pairs.
    pub fn predict(&mut self, views: &[ViewPair<S>]) -> Result<Vec<Prediction>> {
        let (rich, poor) = Self::stack_views(views)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &rich, &poor, false)?;
        Ok(tape
            .data(out.logits)
            .iter()
            .map(|l| Prediction::from_logit(l.as_f64()))
            .collect())
    }

    /// Eval-mode penultimate features, one row of 32 per sample.
    pub fn features(&mut self, views: &[ViewPair<S>]) -> Result<Vec<Vec<f64>>> {
        let (rich, poor) = Self::stack_views(views)?;
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &rich, &poor, false)?;
        let data = tape.data(out.pooled);
        Ok(data
            .chunks(FEATURE_CHANNELS)
            .map(|row| row.iter().map(|v| v.as_f64()).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig::new(8, FreqAttentionConfig::default(), Ablation::Full)
    }

    fn random_views(batch: usize, v: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rich = Tensor::from_fn(vec![batch, 3, v, v], |_| rng.gen_range(0.0..1.0));
        let poor = Tensor::from_fn(vec![batch, 3, v, v], |_| rng.gen_range(0.0..1.0));
        (rich, poor)
    }

    #[test]
    fn default_parameter_count_is_frozen() {
        // Regression constant: 9×9 discriminator convs, per-branch 3×3
        // encoders, 256×256 masks, G=8 weights, FC head.
        let cfg = ModelConfig::new(256, FreqAttentionConfig::default(), Ablation::Full);
        let model = Detector::<f32>::new(cfg, 0).unwrap();
        assert_eq!(model.param_count(), 1_096_113);
    }

    #[test]
    fn logits_have_batch_rows_and_zero_input_gives_half_probability() {
        let mut model = Detector::<f64>::new(tiny_config(), 1).unwrap();
        let rich = Tensor::zeros(vec![2, 3, 8, 8]);
        let poor = Tensor::zeros(vec![2, 3, 8, 8]);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &rich, &poor, false).unwrap();
        assert_eq!(tape.shape(out.logits), &[2, 1]);
        for l in tape.data(out.logits) {
            let p = Prediction::from_logit(*l);
            assert_eq!(*l, 0.0, "zero input must reach the head as exact zero");
            assert_eq!(p.prob, 0.5);
        }
    }

    #[test]
    fn forward_is_deterministic_in_eval_mode() {
        let mut model = Detector::<f64>::new(tiny_config(), 2).unwrap();
        let (rich, poor) = random_views(2, 8, 3);
        let run = |m: &mut Detector<f64>| {
            let mut tape = Tape::new();
            let out = m.forward(&mut tape, &rich, &poor, false).unwrap();
            tape.data(out.logits).to_vec()
        };
        assert_eq!(run(&mut model), run(&mut model), "eval forward must be bit-stable");
    }

    #[test]
    fn too_small_views_name_the_failing_pool_stage() {
        // Bypassed attention skips the mask-size check, so undersized views
        // reach the cascade and must fail at a named pooling stage.
        let mut cfg = tiny_config();
        cfg.ablation = Ablation::NoLfa;
        let mut model = Detector::<f64>::new(cfg, 4).unwrap();
        // 4×4 inputs survive one pool (→2×2), the second (→1×1), then fail.
        let (rich, poor) = random_views(1, 4, 5);
        let mut tape = Tape::new();
        let err = model.forward(&mut tape, &rich, &poor, false).unwrap_err();
        assert!(err.to_string().contains("pooling stage 3"), "got: {err}");
    }

    #[test]
    fn scaling_fc_weight_preserves_predicted_labels() {
        let mut model = Detector::<f64>::new(tiny_config(), 6).unwrap();
        let (rich, poor) = random_views(4, 8, 7);
        let logits = |m: &mut Detector<f64>| {
            let mut tape = Tape::new();
            let out = m.forward(&mut tape, &rich, &poor, false).unwrap();
            tape.data(out.logits).to_vec()
        };
        let before = logits(&mut model);
        let fc = model.fc_w;
        for v in model.store.value_mut(fc) {
            *v *= 7.5;
        }
        let after = logits(&mut model);
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(
                Prediction::from_logit(*a).label_hat,
                Prediction::from_logit(*b).label_hat,
                "positive scaling flipped a label"
            );
        }
    }

    #[test]
    fn fused_channel_order_is_rich_then_poor() {
        // Bypassed attention keeps encoder outputs intact, so the fused map
        // must carry the rich encoding in channels [0,32).
        let mut cfg = tiny_config();
        cfg.ablation = Ablation::NoLfa;
        let mut model = Detector::<f64>::new(cfg, 8).unwrap();
        let (rich, poor) = random_views(1, 8, 9);
        let mut tape = Tape::new();
        let f_rich = model.encode_branch(&mut tape, &rich, true, false).unwrap();
        let f_poor = model.encode_branch(&mut tape, &poor, false, false).unwrap();
        let fused = tape.concat_channels(f_rich, f_poor).unwrap();
        let plane = 64;
        assert_eq!(tape.data(fused)[..plane], tape.data(f_rich)[..plane]);
        assert_eq!(tape.data(fused)[32 * plane..33 * plane], tape.data(f_poor)[..plane]);
    }

    #[test]
    fn training_updates_running_stats_eval_does_not() {
        let mut model = Detector::<f64>::new(tiny_config(), 10).unwrap();
        let (rich, poor) = random_views(2, 8, 11);
        let rm_id = model.store.id_by_name("cascade.block00.bn.running_mean").unwrap();
        let before = model.store.value(rm_id).to_vec();
        let mut tape = Tape::new();
        model.forward(&mut tape, &rich, &poor, false).unwrap();
        assert_eq!(model.store.value(rm_id), before.as_slice(), "eval touched running stats");
        let mut tape = Tape::new();
        model.forward(&mut tape, &rich, &poor, true).unwrap();
        assert_ne!(model.store.value(rm_id), before.as_slice(), "training must update stats");
    }
}
