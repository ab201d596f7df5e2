//! Semantic smashing: crop an image into patches, score their texture, and
//! rebuild texture-rich / texture-poor views.
//!
//! Scoring is the four-directional absolute first-difference sum, computed
//! exactly on 8-bit intensities. View assembly is fully deterministic: sort
//! descending by score with `(row, col)` origin tie-break, tile the top g²
//! patches in raster order for the rich view and the bottom g² (ascending)
//! for the poor view.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_pipeline::ImageU8;
use crate::tensor::{Scalar, Tensor};

/// One cropped patch: origin in the source image, interleaved RGB pixels and
/// its texture-diversity score.
#[derive(Clone, Debug)]
pub struct Patch {
    pub row0: usize,
    pub col0: usize,
    pub pixels: Vec<u8>,
    pub score: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SmashConfig {
    /// Patch side length M.
    pub patch_size: usize,
    /// Number of patches N sampled per image.
    pub patch_count: usize,
    /// Selection ratio in percent; the concrete per-view patch count is the
    /// exact tile count `(view_size/patch_size)²` ≈ `patch_count·ratio/100`.
    pub select_ratio_percent: u32,
    /// Side length of each reconstructed view.
    pub view_size: usize,
}

impl Default for SmashConfig {
    fn default() -> Self {
        SmashConfig {
            patch_size: 32,
            patch_count: 192,
            select_ratio_percent: 33,
            view_size: 256,
        }
    }
}

impl SmashConfig {
    /// Tiles per view side.
    pub fn grid(&self) -> usize {
        self.view_size / self.patch_size
    }

    /// Patches per view (g²).
    pub fn patches_per_view(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::Config("patch_size must be ≥ 2".into()));
        }
        if self.view_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "view_size {} is not a multiple of patch_size {}",
                self.view_size, self.patch_size
            )));
        }
        if self.select_ratio_percent == 0 || self.select_ratio_percent > 100 {
            return Err(Error::Config("select_ratio_percent outside (0,100]".into()));
        }
        if self.patch_count < 2 * self.patches_per_view() {
            return Err(Error::Config(format!(
                "patch_count {} < 2·g² = {}: rich and poor views would overlap in rank",
                self.patch_count,
                2 * self.patches_per_view()
            )));
        }
        Ok(())
    }
}

/// How patch origins were drawn for one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Distinct cells of an axis-aligned grid at a random offset; patches are
    /// pairwise non-overlapping.
    GridNonOverlapping,
    /// Independent uniform origins; overlap possible. Used when the image has
    /// fewer grid cells than requested patches.
    UniformIid,
}

/// The two reconstructed views, scaled to `[0,1]`, `[1,3,V,V]` each.
#[derive(Clone, Debug)]
pub struct ViewPair<S> {
    pub rich: Tensor<S>,
    pub poor: Tensor<S>,
}

/// Four-directional absolute first-difference texture score of an `M×M`
/// interleaved-RGB patch: horizontal, vertical, diagonal and anti-diagonal
/// neighbor differences summed over all valid pairs and all three channels.
pub fn texture_diversity(pixels: &[u8], m: usize) -> u64 {
    assert_eq!(pixels.len(), m * m * 3, "patch buffer size");
    let at = |y: usize, x: usize, c: usize| pixels[(y * m + x) * 3 + c] as i64;
    let mut total = 0i64;
    for c in 0..3 {
        for y in 0..m {
            for x in 0..m - 1 {
                total += (at(y, x + 1, c) - at(y, x, c)).abs();
            }
        }
        for y in 0..m - 1 {
            for x in 0..m {
                total += (at(y + 1, x, c) - at(y, x, c)).abs();
            }
        }
        for y in 0..m - 1 {
            for x in 0..m - 1 {
                total += (at(y + 1, x + 1, c) - at(y, x, c)).abs();
                total += (at(y + 1, x, c) - at(y, x + 1, c)).abs();
            }
        }
    }
    total as u64
}

fn extract_patch(img: &ImageU8, row0: usize, col0: usize, m: usize) -> Patch {
    let mut pixels = Vec::with_capacity(m * m * 3);
    for y in 0..m {
        let src = ((row0 + y) * img.width + col0) * 3;
        pixels.extend_from_slice(&img.data[src..src + m * 3]);
    }
    let score = texture_diversity(&pixels, m);
    Patch { row0, col0, pixels, score }
}

/// Draw `patch_count` patches. If the image admits at least that many
/// non-overlapping `M×M` grid cells, sample distinct cells of a grid anchored
/// at a random offset; otherwise fall back to independent uniform origins.
pub fn sample_patches(
    img: &ImageU8,
    cfg: &SmashConfig,
    rng: &mut impl Rng,
) -> Result<(Vec<Patch>, SampleMode)> {
    let m = cfg.patch_size;
    if img.height < m || img.width < m {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than patch size {m}",
            img.width, img.height
        )));
    }
    let cells_y = img.height / m;
    let cells_x = img.width / m;

    if cells_y * cells_x >= cfg.patch_count {
        let off_y = rng.gen_range(0..=img.height - cells_y * m);
        let off_x = rng.gen_range(0..=img.width - cells_x * m);
        let mut cells: Vec<usize> = (0..cells_y * cells_x).collect();
        cells.shuffle(rng);
        cells.truncate(cfg.patch_count);
        let patches = cells
            .into_iter()
            .map(|cell| {
                let row0 = off_y + (cell / cells_x) * m;
                let col0 = off_x + (cell % cells_x) * m;
                extract_patch(img, row0, col0, m)
            })
            .collect();
        Ok((patches, SampleMode::GridNonOverlapping))
    } else {
        let patches = (0..cfg.patch_count)
            .map(|_| {
                let row0 = rng.gen_range(0..=img.height - m);
                let col0 = rng.gen_range(0..=img.width - m);
                extract_patch(img, row0, col0, m)
            })
            .collect();
        Ok((patches, SampleMode::UniformIid))
    }
}

/// Indices into `patches` sorted by descending score, ties broken by
/// ascending `(row0, col0)`.
fn ranked_indices(patches: &[Patch]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..patches.len()).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (&patches[a], &patches[b]);
        pb.score
            .cmp(&pa.score)
            .then(pa.row0.cmp(&pb.row0))
            .then(pa.col0.cmp(&pb.col0))
    });
    idx
}

fn tile_view<S: Scalar>(patches: &[Patch], order: &[usize], cfg: &SmashConfig) -> Tensor<S> {
    let (m, g, v) = (cfg.patch_size, cfg.grid(), cfg.view_size);
    let mut data = vec![S::zero(); 3 * v * v];
    let inv = S::from_f64(1.0 / 255.0);
    for (rank, &pi) in order.iter().enumerate() {
        let (ty, tx) = (rank / g, rank % g);
        let patch = &patches[pi];
        for y in 0..m {
            for x in 0..m {
                let base = (y * m + x) * 3;
                let (vy, vx) = (ty * m + y, tx * m + x);
                for c in 0..3 {
                    data[c * v * v + vy * v + vx] =
                        S::from_f64(patch.pixels[base + c] as f64) * inv;
                }
            }
        }
    }
    Tensor { shape: vec![1, 3, v, v], data, requires_grad: false, grad: None }
}

/// Rank order used for the two views: `(rich tile order, poor tile order)`.
pub fn view_orders(patches: &[Patch], cfg: &SmashConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let per_view = cfg.patches_per_view();
    if patches.len() < 2 * per_view {
        return Err(Error::InvalidArgument(format!(
            "{} patches cannot fill two disjoint views of {per_view}",
            patches.len()
        )));
    }
    let ranked = ranked_indices(patches);
    let rich = ranked[..per_view].to_vec();
    let poor: Vec<usize> = ranked.iter().rev().take(per_view).copied().collect();
    Ok((rich, poor))
}

/// Assemble the texture-rich and texture-poor views.
pub fn build_views<S: Scalar>(patches: &[Patch], cfg: &SmashConfig) -> Result<ViewPair<S>> {
    let (rich_order, poor_order) = view_orders(patches, cfg)?;
    Ok(ViewPair {
        rich: tile_view(patches, &rich_order, cfg),
        poor: tile_view(patches, &poor_order, cfg),
    })
}

/// Patch sampling plus view assembly; returns the views, the patches and the
/// sampling mode for run metadata.
pub fn smash<S: Scalar>(
    img: &ImageU8,
    cfg: &SmashConfig,
    rng: &mut impl Rng,
) -> Result<(ViewPair<S>, Vec<Patch>, SampleMode)> {
    let (patches, mode) = sample_patches(img, cfg, rng)?;
    let views = build_views(&patches, cfg)?;
    Ok((views, patches, mode))
}

/// Mean patch score of an image under the given config ("texture richness").
pub fn mean_texture_score(patches: &[Patch]) -> f64 {
    if patches.is_empty() {
        return 0.0;
    }
    patches.iter().map(|p| p.score as f64).sum::<f64>() / patches.len() as f64
}
