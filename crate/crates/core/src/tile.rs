//! Spatial machinery: non-overlapping patch sets, shifted-window tilings,
//! per-coordinate pixel interaction, interleaved relocation, and
//! overlap-average fusion.

use rayon::prelude::*;

use crate::error::{CutError, Result};
use crate::latent::{Latent, Shape};
use crate::rng::{Purpose, StreamRng};

/// Placement of shifted-window tiles over a canvas, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSpec {
    pub canvas_h: usize,
    pub canvas_w: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    /// `(top, left)` of each tile.
    pub rects: Vec<(usize, usize)>,
}

impl TileSpec {
    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    /// Number of tiles covering each canvas cell, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.canvas_h * self.canvas_w];
        for &(top, left) in &self.rects {
            for r in top..top + self.patch_h {
                for c in left..left + self.patch_w {
                    counts[r * self.canvas_w + c] += 1;
                }
            }
        }
        counts
    }
}

/// `L1` equally shaped patches destined for an `h_scale x w_scale` interleave.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    patches: Vec<Latent>,
    h_scale: usize,
    w_scale: usize,
}

impl PatchSet {
    pub fn new(patches: Vec<Latent>, h_scale: usize, w_scale: usize) -> Result<Self> {
        if h_scale == 0 || w_scale == 0 {
            return Err(CutError::Invariant("scale factors must be positive".into()));
        }
        if patches.len() != h_scale * w_scale {
            return Err(CutError::Invariant(format!(
                "{} patches cannot fill a {h_scale}x{w_scale} interleave",
                patches.len()
            )));
        }
        let shape = patches[0].shape();
        if let Some(bad) = patches.iter().find(|p| p.shape() != shape) {
            return Err(CutError::Invariant(format!(
                "patch shapes differ: {shape} vs {}",
                bad.shape()
            )));
        }
        Ok(PatchSet {
            patches,
            h_scale,
            w_scale,
        })
    }

    pub fn patches(&self) -> &[Latent] {
        &self.patches
    }

    pub fn patches_mut(&mut self) -> &mut [Latent] {
        &mut self.patches
    }

    pub fn into_patches(self) -> Vec<Latent> {
        self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn scales(&self) -> (usize, usize) {
        (self.h_scale, self.w_scale)
    }

    pub fn patch_shape(&self) -> Shape {
        self.patches[0].shape()
    }

    pub fn canvas_shape(&self) -> Shape {
        let s = self.patch_shape();
        Shape::new(s.h * self.h_scale, s.w * self.w_scale, s.c)
    }

    /// Replaces the contents with `L1` copies of the first patch.
    pub fn replicate_first(&mut self) {
        let first = self.patches[0].clone();
        for p in &mut self.patches[1..] {
            p.clone_from(&first);
        }
    }
}

fn scale_factor(canvas: usize, patch: usize, field: &str) -> Result<usize> {
    if patch == 0 || canvas == 0 {
        return Err(CutError::config(field, "sizes must be positive"));
    }
    if !canvas.is_multiple_of(patch) {
        let lo = canvas / patch * patch;
        let hi = lo + patch;
        return Err(CutError::config(
            field,
            format!(
                "target {canvas} is not a multiple of the base {patch}; use {} or {hi}",
                lo.max(patch)
            ),
        ));
    }
    Ok(canvas / patch)
}

/// Draws `(canvas_h * canvas_w) / (h * w)` patches of i.i.d. standard normals.
/// Patch `i` reads stream `(seed, PatchNoise, i)` in row-major order.
pub fn sample_patchset(seed: u64, canvas_h: usize, canvas_w: usize, patch: Shape) -> Result<PatchSet> {
    let hs = scale_factor(canvas_h, patch.h, "target_h")?;
    let ws = scale_factor(canvas_w, patch.w, "target_w")?;
    let patches = (0..hs * ws)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamRng::new(seed, Purpose::PatchNoise, i as u64);
            Latent::from_fn(patch, |_, _, _| rng.standard_normal())
        })
        .collect();
    PatchSet::new(patches, hs, ws)
}

/// Rects at `(i * stride_h, j * stride_w)`; the extents must divide evenly.
pub fn shifted_window_tiles(
    canvas_h: usize,
    canvas_w: usize,
    patch_h: usize,
    patch_w: usize,
    stride_h: usize,
    stride_w: usize,
) -> Result<TileSpec> {
    if patch_h == 0 || patch_w == 0 {
        return Err(CutError::config("base", "patch size must be positive"));
    }
    if stride_h == 0 || stride_w == 0 {
        return Err(CutError::config("stride", "strides must be positive"));
    }
    if patch_h > canvas_h || patch_w > canvas_w {
        return Err(CutError::config(
            "target",
            format!("canvas {canvas_h}x{canvas_w} is smaller than the {patch_h}x{patch_w} window"),
        ));
    }
    if !(canvas_h - patch_h).is_multiple_of(stride_h) {
        return Err(CutError::config(
            "stride_h",
            format!(
                "{} rows of slack are not a multiple of stride {stride_h}",
                canvas_h - patch_h
            ),
        ));
    }
    if !(canvas_w - patch_w).is_multiple_of(stride_w) {
        return Err(CutError::config(
            "stride_w",
            format!(
                "{} columns of slack are not a multiple of stride {stride_w}",
                canvas_w - patch_w
            ),
        ));
    }
    let rows = (canvas_h - patch_h) / stride_h + 1;
    let cols = (canvas_w - patch_w) / stride_w + 1;
    let rects = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i * stride_h, j * stride_w)))
        .collect();
    Ok(TileSpec {
        canvas_h,
        canvas_w,
        patch_h,
        patch_w,
        stride_h,
        stride_w,
        rects,
    })
}

/// At every coordinate, redistributes the `L1` channel vectors across patches
/// by a uniform permutation from stream `(seed, Interaction, step)`.
/// Coordinates are visited row-major; patch `i` receives the vector that patch
/// `perm[i]` held.
pub fn pixel_interaction(ps: &PatchSet, seed: u64, step: usize) -> PatchSet {
    let n = ps.len();
    if n == 1 {
        return ps.clone();
    }
    let shape = ps.patch_shape();
    let mut rng = StreamRng::new(seed, Purpose::Interaction, step as u64);
    let mut out = ps.clone();
    for r in 0..shape.h {
        for c in 0..shape.w {
            let perm = rng.permutation(n);
            for (dst, &src) in perm.iter().enumerate() {
                out.patches[dst]
                    .pixel_mut(r, c)
                    .copy_from_slice(ps.patches[src].pixel(r, c));
            }
        }
    }
    out
}

/// Interleaves the patch set into one canvas. Canvas cell `(x, y)` (0-based)
/// takes patch `(x % h_s) * w_s + (y % w_s)` at in-patch coordinate
/// `(x / h_s, y / w_s)`, so same-position pixels of all patches sit in one
/// `h_s x w_s` block.
pub fn pixel_relocation(ps: &PatchSet) -> Latent {
    let (hs, ws) = ps.scales();
    let canvas = ps.canvas_shape();
    let mut out = Latent::zeros(canvas);
    for x in 0..canvas.h {
        for y in 0..canvas.w {
            let p = (x % hs) * ws + (y % ws);
            out.pixel_mut(x, y).copy_from_slice(ps.patches[p].pixel(x / hs, y / ws));
        }
    }
    out
}

/// Exact inverse of [`pixel_relocation`].
pub fn pixel_gather(canvas: &Latent, h_scale: usize, w_scale: usize) -> Result<PatchSet> {
    let s = canvas.shape();
    if h_scale == 0 || w_scale == 0 || !s.h.is_multiple_of(h_scale) || !s.w.is_multiple_of(w_scale) {
        return Err(CutError::config(
            "scale",
            format!("{s} canvas does not split into {h_scale}x{w_scale} blocks"),
        ));
    }
    let patch = Shape::new(s.h / h_scale, s.w / w_scale, s.c);
    let patches = (0..h_scale * w_scale)
        .map(|p| {
            let (dr, dc) = (p / w_scale, p % w_scale);
            let mut out = Latent::zeros(patch);
            for r in 0..patch.h {
                for c in 0..patch.w {
                    out.pixel_mut(r, c)
                        .copy_from_slice(canvas.pixel(r * h_scale + dr, c * w_scale + dc));
                }
            }
            out
        })
        .collect();
    PatchSet::new(patches, h_scale, w_scale)
}

pub fn extract_tiles(canvas: &Latent, spec: &TileSpec) -> Result<Vec<Latent>> {
    let s = canvas.shape();
    if s.h != spec.canvas_h || s.w != spec.canvas_w {
        return Err(CutError::Invariant(format!(
            "canvas {s} does not match tiling of {}x{}",
            spec.canvas_h, spec.canvas_w
        )));
    }
    spec.rects
        .iter()
        .map(|&(top, left)| canvas.crop(top, left, spec.patch_h, spec.patch_w))
        .collect()
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Per-cell mean over covering tiles. Tiles are summed in rect order into a
/// compensated (hi, lo) accumulator and each cell is divided once, with the
/// division remainder folded back in. Averaging `k` copies of one value
/// therefore returns that value bit for bit, for any `k`.
pub fn fuse_overlaps(tiles: &[Latent], spec: &TileSpec) -> Result<Latent> {
    if tiles.len() != spec.len() {
        return Err(CutError::Invariant(format!(
            "{} tiles for a tiling of {}",
            tiles.len(),
            spec.len()
        )));
    }
    let c = tiles.first().map_or(1, |t| t.shape().c);
    let want = Shape::new(spec.patch_h, spec.patch_w, c);
    if let Some(bad) = tiles.iter().find(|t| t.shape() != want) {
        return Err(CutError::Invariant(format!("tile {} is not {want}", bad.shape())));
    }
    let canvas = Shape::new(spec.canvas_h, spec.canvas_w, c);
    // -0.0 is the additive identity for every value, signed zeros included.
    let mut hi = Latent::filled(canvas, -0.0);
    let mut lo = vec![0.0f64; canvas.len()];
    for (tile, &(top, left)) in tiles.iter().zip(&spec.rects) {
        for r in 0..spec.patch_h {
            let dst = hi.offset(top + r, left);
            let row = &tile.as_slice()[r * spec.patch_w * c..(r + 1) * spec.patch_w * c];
            let hs = &mut hi.as_mut_slice()[dst..dst + row.len()];
            for ((h, l), &v) in hs.iter_mut().zip(&mut lo[dst..dst + row.len()]).zip(row) {
                let (s, e) = two_sum(*h, v);
                *h = s;
                *l += e;
            }
        }
    }
    let counts = spec.coverage();
    for (cell, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(CutError::Invariant(format!(
                "cell ({}, {}) is not covered by any tile",
                cell / spec.canvas_w,
                cell % spec.canvas_w
            )));
        }
        if n == 1 {
            continue;
        }
        let k = f64::from(n);
        let span = cell * c..(cell + 1) * c;
        for (h, &l) in hi.as_mut_slice()[span.clone()].iter_mut().zip(&lo[span]) {
            let (s, e) = two_sum(*h, l);
            let q = s / k;
            let rem = (-q).mul_add(k, s);
            *h = q + (rem + e) / k;
        }
    }
    Ok(hi)
}
