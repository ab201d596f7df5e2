//! Image decoding, normalization, training-time augmentation and the
//! degradations used for robustness evaluation.
//!
//! Every operation is pure given `(input, seed)`; reference behaviors are
//! pinned down so runs reproduce bit-for-bit: blur radius is `ceil(3σ)` with
//! clamp-to-edge handling, bilinear resampling uses half-pixel centers
//! (align-corners = false), JPEG goes through a standard baseline codec.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape("ImageU8::new", width * height * 3, data.len()));
        }
        Ok(ImageU8 { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        ImageU8 { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Unweighted RGB mean as an 8-bit grayscale plane.
    pub fn to_gray(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .map(|p| ((p[0] as u16 + p[1] as u16 + p[2] as u16) as f64 / 3.0).round() as u8)
            .collect()
    }

    fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("dimensions checked at construction")
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        ImageU8 {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            data: rgb.into_raw(),
        }
    }
}

/// Decode a PNG or JPEG from disk. Grayscale is promoted to RGB, alpha dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(ImageU8::from_dynamic(img))
}

pub fn save_png(img: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.to_rgb_image()
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::ImageCodec(format!("writing {}: {e}", path.display())))
}

/// Scale to `[0,1]`, channel-planar `[1,3,H,W]` with R,G,B plane order.
pub fn to_tensor<S: Scalar>(img: &ImageU8) -> Tensor<S> {
    let (w, h) = (img.width, img.height);
    let mut data = vec![S::zero(); 3 * w * h];
    let inv = S::from_f64(1.0 / 255.0);
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            for c in 0..3 {
                data[c * h * w + y * w + x] = S::from_f64(p[c] as f64) * inv;
            }
        }
    }
    Tensor { shape: vec![1, 3, h, w], data, requires_grad: false, grad: None }
}

/// Encode to baseline JPEG at the given quality factor and decode back.
pub fn jpeg_reencode(img: &ImageU8, qf: u8) -> Result<ImageU8> {
    if !(1..=100).contains(&qf) {
        return Err(Error::InvalidArgument(format!("jpeg quality {qf} outside [1,100]")));
    }
    let mut buf = Vec::new();
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(Cursor::new(&mut buf), qf);
    img.to_rgb_image()
        .write_with_encoder(encoder)
        .map_err(|e| Error::ImageCodec(format!("jpeg encode: {e}")))?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(|e| Error::ImageCodec(format!("jpeg decode: {e}")))?;
    Ok(ImageU8::from_dynamic(decoded))
}

fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut w: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Separable Gaussian blur, kernel radius `ceil(3σ)`, clamp-to-edge.
/// `sigma = 0` is the identity.
pub fn gaussian_blur(img: &ImageU8, sigma: f64) -> ImageU8 {
    if sigma <= 0.0 {
        return img.clone();
    }
    let weights = gaussian_weights(sigma);
    let radius = weights.len() / 2;
    let (w, h) = (img.width, img.height);

    // Horizontal pass into f64, vertical pass back to u8.
    let mut tmp = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sx = (x as isize + k as isize - radius as isize).clamp(0, w as isize - 1);
                    acc += wt * img.data[(y * w + sx as usize) * 3 + c] as f64;
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sy = (y as isize + k as isize - radius as isize).clamp(0, h as isize - 1);
                    acc += wt * tmp[(sy as usize * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageU8 { width: w, height: h, data: out }
}

/// Bilinear downscale by factor `r ∈ (0,1]`; output dims are `round(dim·r)`.
/// Sample positions follow the half-pixel-center convention.
pub fn downsample_bilinear(img: &ImageU8, r: f64) -> Result<ImageU8> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("scale factor {r} outside (0,1]")));
    }
    let ow = (img.width as f64 * r).round() as usize;
    let oh = (img.height as f64 * r).round() as usize;
    if ow == 0 || oh == 0 {
        return Err(Error::InvalidArgument(format!(
            "downsample of {}x{} at r={r} collapses to zero size",
            img.width, img.height
        )));
    }
    if (ow, oh) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / ow as f64;
    let sy = img.height as f64 / oh as f64;
    let mut out = vec![0u8; ow * oh * 3];
    for y in 0..oh {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, img.height as f64 - 1.0);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = src_y - y0 as f64;
        for x in 0..ow {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, img.width as f64 - 1.0);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = src_x - x0 as f64;
            for c in 0..3 {
                let p00 = img.data[(y0 * img.width + x0) * 3 + c] as f64;
                let p01 = img.data[(y0 * img.width + x1) * 3 + c] as f64;
                let p10 = img.data[(y1 * img.width + x0) * 3 + c] as f64;
                let p11 = img.data[(y1 * img.width + x1) * 3 + c] as f64;
                let v = p00 * (1.0 - fx) * (1.0 - fy)
                    + p01 * fx * (1.0 - fy)
                    + p10 * (1.0 - fx) * fy
                    + p11 * fx * fy;
                out[(y * ow + x) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageU8::new(ow, oh, out)
}

/// Training-time augmentation policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Probability that any augmentation fires at all.
    pub trigger_prob: f64,
    /// Inclusive JPEG quality range.
    pub jpeg_q_range: (u8, u8),
    /// Blur σ range in pixels.
    pub blur_sigma_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            trigger_prob: 0.10,
            jpeg_q_range: (70, 100),
            blur_sigma_range: (0.0, 1.0),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.trigger_prob) {
            return Err(Error::Config(format!("trigger_prob {} outside [0,1]", self.trigger_prob)));
        }
        if self.jpeg_q_range.0 > self.jpeg_q_range.1 || self.blur_sigma_range.0 > self.blur_sigma_range.1 {
            return Err(Error::Config("augmentation ranges must be non-empty".into()));
        }
        Ok(())
    }
}

/// With probability `trigger_prob`, apply exactly one augmentation chosen
/// uniformly between JPEG re-encoding and Gaussian blur; otherwise identity.
pub fn augment(img: &ImageU8, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<ImageU8> {
    if rng.gen::<f64>() >= cfg.trigger_prob {
        return Ok(img.clone());
    }
    if rng.gen::<bool>() {
        let q = rng.gen_range(cfg.jpeg_q_range.0..=cfg.jpeg_q_range.1);
        jpeg_reencode(img, q)
    } else {
        let sigma = rng.gen_range(cfg.blur_sigma_range.0..=cfg.blur_sigma_range.1);
        Ok(gaussian_blur(img, sigma))
    }
}

/// One robustness degradation, applied to the full image before any
/// patch-level processing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradeSpec {
    Jpeg { qf: u8 },
    GaussianBlur { sigma: f64 },
    Downsample { r: f64 },
}

impl DegradeSpec {
    pub fn apply(&self, img: &ImageU8) -> Result<ImageU8> {
        match *self {
            DegradeSpec::Jpeg { qf } => jpeg_reencode(img, qf),
            DegradeSpec::GaussianBlur { sigma } => {
                if sigma < 0.0 {
                    return Err(Error::InvalidArgument(format!("blur sigma {sigma} < 0")));
                }
                Ok(gaussian_blur(img, sigma))
            }
            DegradeSpec::Downsample { r } => downsample_bilinear(img, r),
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            DegradeSpec::Jpeg { qf } => format!("jpeg_qf{qf}"),
            DegradeSpec::GaussianBlur { sigma } => format!("blur_sigma{sigma}"),
            DegradeSpec::Downsample { r } => format!("downsample_r{r}"),
        }
    }

    /// Parse `jpeg:95`, `blur:1.0` or `down:0.5`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, val) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("degradation `{s}`: expected kind:value")))?;
        match kind {
            "jpeg" => {
                let qf: u8 = val
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad quality `{val}`")))?;
                if !(1..=100).contains(&qf) {
                    return Err(Error::InvalidArgument(format!("jpeg quality {qf} outside [1,100]")));
                }
                Ok(DegradeSpec::Jpeg { qf })
            }
            "blur" => {
                let sigma: f64 = val
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad sigma `{val}`")))?;
                Ok(DegradeSpec::GaussianBlur { sigma })
            }
            "down" => {
                let r: f64 = val
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad scale `{val}`")))?;
                Ok(DegradeSpec::Downsample { r })
            }
            other => Err(Error::InvalidArgument(format!("unknown degradation kind `{other}`"))),
        }
    }
}

/// Peak signal-to-noise ratio in dB between two equally-sized images.
pub fn psnr(a: &ImageU8, b: &ImageU8) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height), "psnr size mismatch");
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn noise_image(w: usize, h: usize, seed: u64) -> ImageU8 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.gen()).collect();
        ImageU8::new(w, h, data).unwrap()
    }

    fn gradient_image(w: usize, h: usize) -> ImageU8 {
        let mut img = ImageU8::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                let v = ((x + y) * 255 / (w + h - 2)) as u8;
                img.set_pixel(x, y, [v, v, v.saturating_add(10)]);
            }
        }
        img
    }

    #[test]
    fn png_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.png");
        let img = ImageU8::new(2, 2, vec![
            255, 0, 0, 0, 255, 0,
            0, 0, 255, 17, 34, 51,
        ])
        .unwrap();
        save_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn truncated_file_is_an_error_not_a_panic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.png");
        std::fs::write(&path, [0x89, b'P', b'N', b'G', 0x0d]).unwrap();
        assert!(load_image(&path).is_err());
        assert!(load_image(dir.path().join("missing.png")).is_err());
    }

    #[test]
    fn jpeg_decode_agrees_with_independent_decoder() {
        // Luma-only fixture: IDCT rounding is the only degree of freedom the
        // two decoders have, and the standard's compliance bound keeps them
        // within ±1 LSB of each other.
        let img = gaussian_blur(&noise_image(40, 32, 5), 2.0);
        let gray = image::GrayImage::from_raw(40, 32, img.to_gray()).unwrap();
        let mut buf = Vec::new();
        let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(Cursor::new(&mut buf), 90);
        gray.write_with_encoder(enc).unwrap();

        let ours = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
            .unwrap()
            .to_luma8()
            .into_raw();

        let mut dec = jpeg_decoder::Decoder::new(Cursor::new(&buf));
        let other = dec.decode().unwrap();
        assert_eq!(other.len(), ours.len());
        for (i, (a, b)) in ours.iter().zip(&other).enumerate() {
            assert!(
                (*a as i16 - *b as i16).abs() <= 1,
                "byte {i}: {a} vs {b} differ by more than 1 LSB"
            );
        }
    }

    #[test]
    fn jpeg_rgb_decode_agrees_with_independent_decoder_within_latitude() {
        // With chroma in play the two bundled decoders use different
        // upsampling filters; their observed disagreement stays within ±2.
        let img = gaussian_blur(&noise_image(40, 32, 5), 2.0);
        let mut buf = Vec::new();
        let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(Cursor::new(&mut buf), 90);
        img.to_rgb_image().write_with_encoder(enc).unwrap();

        let ours = ImageU8::from_dynamic(
            image::load_from_memory_with_format(&buf, ImageFormat::Jpeg).unwrap(),
        );
        let mut dec = jpeg_decoder::Decoder::new(Cursor::new(&buf));
        let other = dec.decode().unwrap();
        for (i, (a, b)) in ours.data.iter().zip(&other).enumerate() {
            assert!(
                (*a as i16 - *b as i16).abs() <= 2,
                "byte {i}: {a} vs {b} differ beyond decoder latitude"
            );
        }
    }

    #[test]
    fn to_tensor_scaling() {
        let img = ImageU8::new(2, 1, vec![0, 128, 255, 255, 0, 128]).unwrap();
        let t = to_tensor::<f64>(&img);
        assert_eq!(t.shape, vec![1, 3, 1, 2]);
        assert_eq!(t.data[0], 0.0); // R plane, pixel 0
        assert_eq!(t.data[1], 1.0); // R plane, pixel 1
        assert!((t.data[2] - 128.0 / 255.0).abs() < 1e-12); // G plane, pixel 0
        assert_eq!(t.data[4], 1.0); // B plane, pixel 0
    }

    #[test]
    fn jpeg_reencode_preserves_odd_dimensions() {
        let img = noise_image(31, 17, 6);
        let out = jpeg_reencode(&img, 80).unwrap();
        assert_eq!((out.width, out.height), (31, 17));
    }

    #[test]
    fn jpeg_qf100_on_smooth_gradient_keeps_psnr_high() {
        let img = gradient_image(64, 64);
        let out = jpeg_reencode(&img, 100).unwrap();
        let db = psnr(&img, &out);
        // Regression baseline: observed ≈ 58 dB with the bundled codec.
        assert!(db > 40.0, "psnr {db} dB too low for qf=100");
    }

    #[test]
    fn jpeg_qf95_recompression_is_near_idempotent() {
        let img = gaussian_blur(&noise_image(48, 48, 7), 1.5);
        let first = jpeg_reencode(&img, 95).unwrap();
        let second = jpeg_reencode(&first, 95).unwrap();
        assert!(
            psnr(&second, &first) > psnr(&first, &img),
            "second pass should disturb less than the first"
        );
    }

    #[test]
    fn blur_identity_cases() {
        let img = noise_image(16, 12, 8);
        assert_eq!(gaussian_blur(&img, 0.0), img);
        let flat = ImageU8::filled(9, 9, [55, 200, 7]);
        assert_eq!(gaussian_blur(&flat, 1.7), flat);
    }

    #[test]
    fn blur_impulse_matches_direct_2d_kernel_oracle() {
        let mut img = ImageU8::filled(15, 15, [0, 0, 0]);
        img.set_pixel(7, 7, [255, 255, 255]);
        let sigma = 1.0;
        let out = gaussian_blur(&img, sigma);

        let weights = gaussian_weights(sigma);
        let radius = weights.len() / 2;
        for y in 0..15usize {
            for x in 0..15usize {
                let dy = y.abs_diff(7);
                let dx = x.abs_diff(7);
                let expected = if dy <= radius && dx <= radius {
                    (weights[radius + dy] * weights[radius + dx] * 255.0).round() as i16
                } else {
                    0
                };
                let got = out.pixel(x, y)[0] as i16;
                assert!(
                    (got - expected).abs() <= 1,
                    "({x},{y}): got {got}, 2-D oracle {expected}"
                );
            }
        }
    }

    #[test]
    fn blur_approximately_preserves_mean() {
        let img = noise_image(32, 32, 9);
        let out = gaussian_blur(&img, 1.0);
        let mean = |i: &ImageU8| i.data.iter().map(|v| *v as f64).sum::<f64>() / i.data.len() as f64;
        assert!((mean(&img) - mean(&out)).abs() < 0.5, "mean drift too large");
    }

    #[test]
    fn downsample_identity_and_two_by_two_mean() {
        let img = noise_image(10, 8, 10);
        assert_eq!(downsample_bilinear(&img, 1.0).unwrap(), img);

        let mut two = ImageU8::filled(2, 2, [0, 0, 0]);
        two.set_pixel(1, 0, [255, 255, 255]);
        two.set_pixel(1, 1, [255, 255, 255]);
        let one = downsample_bilinear(&two, 0.5).unwrap();
        assert_eq!((one.width, one.height), (1, 1));
        // Mean of the four contributors is 127.5; rounds to 128.
        assert_eq!(one.pixel(0, 0), [128, 128, 128]);
    }

    #[test]
    fn downsample_matches_direct_formula_oracle() {
        let img = noise_image(8, 8, 11);
        let out = downsample_bilinear(&img, 0.5).unwrap();
        assert_eq!((out.width, out.height), (4, 4));
        for y in 0..4usize {
            for x in 0..4usize {
                for c in 0..3 {
                    let sy = (y as f64 + 0.5) * 2.0 - 0.5;
                    let sx = (x as f64 + 0.5) * 2.0 - 0.5;
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let at = |yy: usize, xx: usize| img.data[(yy.min(7) * 8 + xx.min(7)) * 3 + c] as f64;
                    let v = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                        + at(y0, x0 + 1) * fx * (1.0 - fy)
                        + at(y0 + 1, x0) * (1.0 - fx) * fy
                        + at(y0 + 1, x0 + 1) * fx * fy;
                    assert_eq!(out.data[(y * 4 + x) * 3 + c], v.round() as u8);
                }
            }
        }
    }

    #[test]
    fn downsample_to_zero_size_is_rejected() {
        let img = noise_image(3, 3, 12);
        assert!(downsample_bilinear(&img, 0.1).is_err());
    }

    #[test]
    fn augment_never_fires_at_zero_probability() {
        let img = noise_image(20, 20, 13);
        let cfg = AugmentConfig { trigger_prob: 0.0, ..Default::default() };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(augment(&img, &cfg, &mut rng).unwrap(), img);
        }
    }

    #[test]
    fn augment_is_deterministic_under_fixed_seed() {
        let img = noise_image(24, 24, 14);
        let cfg = AugmentConfig { trigger_prob: 1.0, ..Default::default() };
        let one = augment(&img, &cfg, &mut ChaCha12Rng::seed_from_u64(99)).unwrap();
        let two = augment(&img, &cfg, &mut ChaCha12Rng::seed_from_u64(99)).unwrap();
        assert_eq!(one, two);
        assert_ne!(one, img, "trigger_prob=1 must alter a noise image");
    }

    #[test]
    fn augment_trigger_rate_satisfies_binomial_bound() {
        let img = ImageU8::filled(8, 8, [100, 150, 200]);
        let cfg = AugmentConfig { trigger_prob: 0.10, ..Default::default() };
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let mut fired = 0usize;
        // Count trigger decisions by replaying the same draw the sampler uses.
        for _ in 0..10_000 {
            if rng.gen::<f64>() < cfg.trigger_prob {
                fired += 1;
                let _ = rng.gen::<bool>();
            }
        }
        // 1000 ± 3·sqrt(900)
        assert!((910..=1090).contains(&fired), "fired {fired} times");
    }

    #[test]
    fn degradations_preserve_channels_and_dims_except_downsample() {
        let img = noise_image(33, 21, 15);
        for spec in [
            DegradeSpec::Jpeg { qf: 95 },
            DegradeSpec::GaussianBlur { sigma: 1.0 },
        ] {
            let out = spec.apply(&img).unwrap();
            assert_eq!((out.width, out.height), (img.width, img.height), "{spec:?}");
            assert_eq!(out.data.len(), out.width * out.height * 3);
        }
        let down = DegradeSpec::Downsample { r: 0.5 }.apply(&img).unwrap();
        assert_eq!((down.width, down.height), (17, 11));
    }

    #[test]
    fn degrade_spec_parsing() {
        assert_eq!(DegradeSpec::parse("jpeg:95").unwrap(), DegradeSpec::Jpeg { qf: 95 });
        assert_eq!(
            DegradeSpec::parse("blur:1.0").unwrap(),
            DegradeSpec::GaussianBlur { sigma: 1.0 }
        );
        assert_eq!(DegradeSpec::parse("down:0.5").unwrap(), DegradeSpec::Downsample { r: 0.5 });
        assert!(DegradeSpec::parse("sharpen:2").is_err());
        assert!(DegradeSpec::parse("jpeg:0").is_err());
    }
}
