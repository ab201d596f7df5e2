//! Fixed high-pass residual extraction.
//!
//! A bank of 30 integer 5×5 kernels — directional first/second/third-order
//! differences plus two square laplacian-style kernels — is applied depthwise
//! to each RGB channel, mapping `[B,3,H,W]` into a 90-channel residual space.
//! Kernels are fixed (no gradient) and every one sums to zero, so constant
//! inputs produce exactly zero residuals. Padding clamps to the edge, which
//! keeps that property on borders too.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Dims4, Scalar, Tensor};

pub const KERNEL_SIZE: usize = 5;
pub const BANK_SIZE: usize = 30;
/// Output channel count: 30 kernels × 3 color channels, kernel-major
/// (`out_ch = kernel_idx·3 + rgb`). This layout is frozen.
pub const RESIDUAL_CHANNELS: usize = BANK_SIZE * 3;

/// One fixed high-pass kernel with its provenance tag.
#[derive(Clone, Debug)]
pub struct SrmKernel {
    /// Base pattern id, `'a'..='g'`.
    pub base: char,
    /// Direction label (`"e"`, `"ne"`, …) or `"-"` for symmetric kernels.
    pub direction: &'static str,
    pub coeffs: [[i32; KERNEL_SIZE]; KERNEL_SIZE],
}

/// The immutable 30-kernel bank.
#[derive(Clone, Debug)]
pub struct SrmFilterBank {
    kernels: Vec<SrmKernel>,
}

/// Compass directions in the order the directional variants are generated:
/// ↗ → ↘ ↓ ↙ ← ↖ ↑ as `(row_delta, col_delta)`.
const DIRS8: [(&str, i32, i32); 8] = [
    ("ne", -1, 1),
    ("e", 0, 1),
    ("se", 1, 1),
    ("s", 1, 0),
    ("sw", 1, -1),
    ("w", 0, -1),
    ("nw", -1, -1),
    ("n", -1, 0),
];

const CENTER: i32 = 2;

fn put(k: &mut [[i32; 5]; 5], dy: i32, dx: i32, v: i32) {
    k[(CENTER + dy) as usize][(CENTER + dx) as usize] = v;
}

fn rot90cw(k: &[[i32; 5]; 5]) -> [[i32; 5]; 5] {
    let mut out = [[0i32; 5]; 5];
    for (y, row) in out.iter_mut().enumerate() {
        for (x, cell) in row.iter_mut().enumerate() {
            *cell = k[4 - x][y];
        }
    }
    out
}

impl SrmFilterBank {
    /// Build the canonical bank: 8 first-order + 8 third-order + 4
    /// second-order directional kernels, 4 rotations each of the half-window
    /// 3×3 and 5×5 edge kernels, and the two symmetric square kernels.
    pub fn build() -> Self {
        let mut kernels = Vec::with_capacity(BANK_SIZE);

        // First-order difference: +1 one step along the direction, −1 center.
        for (label, dy, dx) in DIRS8 {
            let mut k = [[0i32; 5]; 5];
            put(&mut k, dy, dx, 1);
            put(&mut k, 0, 0, -1);
            kernels.push(SrmKernel { base: 'a', direction: label, coeffs: k });
        }

        // Third-order difference along the direction: −1, +3, −3(center), +1.
        for (label, dy, dx) in DIRS8 {
            let mut k = [[0i32; 5]; 5];
            put(&mut k, 2 * dy, 2 * dx, -1);
            put(&mut k, dy, dx, 3);
            put(&mut k, 0, 0, -3);
            put(&mut k, -dy, -dx, 1);
            kernels.push(SrmKernel { base: 'b', direction: label, coeffs: k });
        }

        // Symmetric second-order difference: one axis per variant.
        for (label, dy, dx) in [("e", 0, 1), ("s", 1, 0), ("ne", -1, 1), ("se", 1, 1)] {
            let mut k = [[0i32; 5]; 5];
            put(&mut k, dy, dx, 1);
            put(&mut k, 0, 0, -2);
            put(&mut k, -dy, -dx, 1);
            kernels.push(SrmKernel { base: 'c', direction: label, coeffs: k });
        }

        // Half-window 3×3 edge kernel and its 90° rotations.
        let d_base = [
            [0, 0, 0, 0, 0],
            [0, -1, 2, -1, 0],
            [0, 2, -4, 2, 0],
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
        ];
        let mut k = d_base;
        for label in ["e", "s", "w", "n"] {
            kernels.push(SrmKernel { base: 'd', direction: label, coeffs: k });
            k = rot90cw(&k);
        }

        // Half-window 5×5 edge kernel; four rotations bring the bank to 30.
        let e_base = [
            [-1, 2, -2, 2, -1],
            [2, -6, 8, -6, 2],
            [-2, 8, -12, 8, -2],
            [0, 0, 0, 0, 0],
            [0, 0, 0, 0, 0],
        ];
        let mut k = e_base;
        for label in ["e", "s", "w", "n"] {
            kernels.push(SrmKernel { base: 'e', direction: label, coeffs: k });
            k = rot90cw(&k);
        }

        // Square 3×3 laplacian-style kernel.
        kernels.push(SrmKernel {
            base: 'f',
            direction: "-",
            coeffs: [
                [0, 0, 0, 0, 0],
                [0, -1, 2, -1, 0],
                [0, 2, -4, 2, 0],
                [0, -1, 2, -1, 0],
                [0, 0, 0, 0, 0],
            ],
        });

        // Square 5×5 kernel.
        kernels.push(SrmKernel {
            base: 'g',
            direction: "-",
            coeffs: [
                [-1, 2, -2, 2, -1],
                [2, -6, 8, -6, 2],
                [-2, 8, -12, 8, -2],
                [2, -6, 8, -6, 2],
                [-1, 2, -2, 2, -1],
            ],
        });

        debug_assert_eq!(kernels.len(), BANK_SIZE);
        SrmFilterBank { kernels }
    }

    pub fn kernels(&self) -> &[SrmKernel] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// All 30 kernels as CSV: one header line per kernel followed by its five
    /// coefficient rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in &self.kernels {
            out.push_str(&format!("kernel,{},{}\n", k.base, k.direction));
            for row in &k.coeffs {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
        out
    }
}

impl Default for SrmFilterBank {
    fn default() -> Self {
        Self::build()
    }
}

/// Depthwise residual extraction: every kernel convolved with every color
/// channel (stride 1, clamp-to-edge padding 2) into `[B,90,H,W]`, channel
/// layout kernel-major. Purely functional; kernels receive no gradient.
pub fn apply_srm<S: Scalar>(input: &Tensor<S>, bank: &SrmFilterBank) -> Result<Tensor<S>> {
    let d = Dims4::of(&input.shape, "apply_srm input")?;
    if d.c != 3 {
        return Err(Error::shape("apply_srm channels", 3usize, d.c));
    }
    let coeffs: Vec<[[S; 5]; 5]> = bank
        .kernels
        .iter()
        .map(|k| {
            let mut out = [[S::zero(); 5]; 5];
            for y in 0..5 {
                for x in 0..5 {
                    out[y][x] = S::from_f64(k.coeffs[y][x] as f64);
                }
            }
            out
        })
        .collect();

    let plane = d.h * d.w;
    let mut data = vec![S::zero(); d.b * RESIDUAL_CHANNELS * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(idx, out_plane)| {
        let b = idx / RESIDUAL_CHANNELS;
        let oc = idx % RESIDUAL_CHANNELS;
        let (ki, color) = (oc / 3, oc % 3);
        let k = &coeffs[ki];
        let src = &input.data[(b * 3 + color) * plane..(b * 3 + color + 1) * plane];
        let (h, w) = (d.h as i64, d.w as i64);
        for y in 0..d.h {
            for x in 0..d.w {
                // Zero-sum kernels allow centering on the anchor pixel, which
                // keeps constant inputs at exactly zero in floating point.
                let center = src[y * d.w + x];
                let mut acc = S::zero();
                for (ky, krow) in k.iter().enumerate() {
                    let iy = (y as i64 + ky as i64 - 2).clamp(0, h - 1) as usize;
                    for (kx, &kv) in krow.iter().enumerate() {
                        let ix = (x as i64 + kx as i64 - 2).clamp(0, w - 1) as usize;
                        acc += kv * (src[iy * d.w + ix] - center);
                    }
                }
                out_plane[y * d.w + x] = acc;
            }
        }
    });
    Tensor::new(vec![d.b, RESIDUAL_CHANNELS, d.h, d.w], data)
}
