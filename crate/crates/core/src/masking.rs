//! MAE-style mask sampling, reconstruction and the 9-channel stack.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    Random,
    Block,
    Grid,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Random => "random",
            MaskKind::Block => "block",
            MaskKind::Grid => "grid",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MaskKind::Random),
            "block" => Ok(MaskKind::Block),
            "grid" => Ok(MaskKind::Grid),
            _ => Err(Error::contract(format!(
                "unknown mask kind {s:?} (allowed: random, block, grid)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskStrategy {
    pub kind: MaskKind,
    /// Fraction of cells hidden; ignored for [`MaskKind::Grid`].
    pub mask_ratio: f64,
    /// Side length of one masking cell in pixels.
    pub patch: usize,
}

impl MaskStrategy {
    pub fn new(kind: MaskKind, mask_ratio: f64, patch: usize) -> Result<Self> {
        if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
            return Err(Error::contract(format!(
                "mask_ratio must lie in (0, 1), got {mask_ratio}"
            )));
        }
        if patch == 0 {
            return Err(Error::contract("mask patch must be positive"));
        }
        Ok(Self {
            kind,
            mask_ratio,
            patch,
        })
    }

    /// The three strategies in stacking order: random, block, grid.
    pub fn defaults(patch: usize) -> [MaskStrategy; 3] {
        [
            MaskStrategy {
                kind: MaskKind::Random,
                mask_ratio: 0.75,
                patch,
            },
            MaskStrategy {
                kind: MaskKind::Block,
                mask_ratio: 0.75,
                patch,
            },
            MaskStrategy {
                kind: MaskKind::Grid,
                mask_ratio: 0.5,
                patch,
            },
        ]
    }
}

/// Pixel-resolution mask; `true` means hidden.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    hidden: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, hidden: Vec<bool>) -> Result<Self> {
        if hidden.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} entries, got {}",
                height * width,
                hidden.len()
            )));
        }
        Ok(Self {
            height,
            width,
            hidden,
        })
    }

    pub fn none(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            hidden: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_hidden(&self, y: usize, x: usize) -> bool {
        self.hidden[y * self.width + x]
    }

    pub fn hidden(&self) -> &[bool] {
        &self.hidden
    }

    pub fn hidden_fraction(&self) -> f64 {
        self.hidden.iter().filter(|&&h| h).count() as f64 / self.hidden.len() as f64
    }

    fn from_cells(height: usize, width: usize, patch: usize, cells: &[bool], gw: usize) -> Self {
        let mut hidden = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                hidden.push(cells[(y / patch) * gw + x / patch]);
            }
        }
        Self {
            height,
            width,
            hidden,
        }
    }
}

/// Samples a mask; a pure function of `(strategy, height, width, seed)`.
pub fn sample_mask(strategy: &MaskStrategy, height: usize, width: usize, seed: u64) -> Result<BinaryMask> {
    let p = strategy.patch;
    if p == 0 || height % p != 0 || width % p != 0 {
        return Err(Error::contract(format!(
            "image {height}x{width} is not divisible by mask patch {p}"
        )));
    }
    let (gh, gw) = (height / p, width / p);
    let n = gh * gw;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![false; n];
    match strategy.kind {
        MaskKind::Grid => {
            for cy in 0..gh {
                for cx in 0..gw {
                    cells[cy * gw + cx] = (cy + cx) % 2 == 0;
                }
            }
        }
        MaskKind::Random => {
            let count = ((strategy.mask_ratio * n as f64).round() as usize).min(n);
            for i in sample(&mut rng, n, count) {
                cells[i] = true;
            }
        }
        MaskKind::Block => {
            let target = strategy.mask_ratio * n as f64;
            let (bh, bw) = block_dims(gh, gw, target, &mut rng);
            let y0 = centered_offset(gh - bh, &mut rng);
            let x0 = centered_offset(gw - bw, &mut rng);
            for cy in y0..y0 + bh {
                for cx in x0..x0 + bw {
                    cells[cy * gw + cx] = true;
                }
            }
        }
    }
    Ok(BinaryMask::from_cells(height, width, p, &cells, gw))
}

/// Rectangle `(rows, cols)` whose area is closest to `target`; ties are
/// broken at random so the block shape varies with the seed.
fn block_dims(gh: usize, gw: usize, target: f64, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let mut best = f64::INFINITY;
    let mut options = Vec::new();
    for bh in 1..=gh {
        for bw in 1..=gw {
            let err = ((bh * bw) as f64 - target).abs();
            if err < best - 1e-9 {
                best = err;
                options.clear();
            }
            if (err - best).abs() <= 1e-9 {
                options.push((bh, bw));
            }
        }
    }
    options[rng.gen_range(0..options.len())]
}

/// Offset in `0..=slack` drawn from a triangular distribution peaked at the centre.
fn centered_offset(slack: usize, rng: &mut ChaCha8Rng) -> usize {
    if slack == 0 {
        return 0;
    }
    let a = rng.gen_range(0..=slack);
    let b = rng.gen_range(0..=slack);
    (a + b + rng.gen_range(0..=1)) / 2
}

/// Fills hidden pixels of an image. Visible pixels must pass through unchanged
/// and outputs must stay in `[0, 1]`.
pub trait Reconstructor: Send + Sync {
    fn reconstruct(&self, image: &Image, mask: &BinaryMask) -> Result<Image>;
}

/// Replaces hidden pixels with the per-channel mean of the visible ones.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanFill;

impl Reconstructor for MeanFill {
    fn reconstruct(&self, image: &Image, mask: &BinaryMask) -> Result<Image> {
        mean_fill_reconstruct(image, mask)
    }
}

pub fn mean_fill_reconstruct(image: &Image, mask: &BinaryMask) -> Result<Image> {
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(Error::shape(format!(
            "image {}x{} and mask {}x{} differ",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        )));
    }
    let c = image.channels();
    let mut sums = vec![0.0; c];
    let mut visible = 0usize;
    for (px, &h) in image.data().chunks(c).zip(mask.hidden()) {
        if !h {
            visible += 1;
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
    }
    if visible == 0 {
        return Err(Error::contract("cannot mean-fill a fully masked image"));
    }
    let means: Vec<f64> = sums.iter().map(|s| s / visible as f64).collect();
    let mut out = image.clone();
    for (px, &h) in out.data_mut().chunks_mut(c).zip(mask.hidden()) {
        if h {
            px.copy_from_slice(&means);
        }
    }
    Ok(out)
}

/// Stacks the three reconstructions as channels 0-2, 3-5 and 6-8.
pub fn mae_channel_concat(
    image: &Image,
    recon_random: &Image,
    recon_block: &Image,
    recon_grid: &Image,
) -> Result<Image> {
    for (name, r) in [
        ("random", recon_random),
        ("block", recon_block),
        ("grid", recon_grid),
    ] {
        if !r.same_dims(image) || r.channels() != 3 {
            return Err(Error::shape(format!(
                "{name} reconstruction is {}x{}x{}, expected {}x{}x3",
                r.height(),
                r.width(),
                r.channels(),
                image.height(),
                image.width()
            )));
        }
    }
    if image.channels() != 3 {
        return Err(Error::shape("original image must have 3 channels"));
    }
    Image::concat_channels(&[recon_random, recon_block, recon_grid])
}

/// Samples all three masks, reconstructs, and stacks to `H x W x 9`.
pub fn mae_stack(
    image: &Image,
    reconstructor: &dyn Reconstructor,
    strategies: &[MaskStrategy; 3],
    seed: u64,
) -> Result<Image> {
    let mut recons = Vec::with_capacity(3);
    for (i, s) in strategies.iter().enumerate() {
        let mask = sample_mask(s, image.height(), image.width(), seed.wrapping_add(i as u64))?;
        recons.push(reconstructor.reconstruct(image, &mask)?);
    }
    mae_channel_concat(image, &recons[0], &recons[1], &recons[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell_count(m: &BinaryMask, patch: usize) -> usize {
        let mut n = 0;
        for cy in 0..m.height() / patch {
            for cx in 0..m.width() / patch {
                if m.is_hidden(cy * patch, cx * patch) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn grid_is_checkerboard() {
        let s = MaskStrategy::new(MaskKind::Grid, 0.3, 2).unwrap();
        let m = sample_mask(&s, 4, 4, 1).unwrap();
        assert_eq!(cell_count(&m, 2), 2);
        assert!(m.is_hidden(0, 0) && m.is_hidden(3, 3));
        assert!(!m.is_hidden(0, 2) && !m.is_hidden(2, 0));
    }

    #[test]
    fn random_hits_the_rounded_count() {
        let s = MaskStrategy::new(MaskKind::Random, 0.75, 2).unwrap();
        for seed in 0..20 {
            let m = sample_mask(&s, 8, 8, seed).unwrap();
            assert_eq!(cell_count(&m, 2), 12);
        }
    }

    #[test]
    fn masks_are_deterministic() {
        for s in MaskStrategy::defaults(8) {
            let a = sample_mask(&s, 64, 32, 42).unwrap();
            let b = sample_mask(&s, 64, 32, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn indivisible_dims_rejected() {
        let s = MaskStrategy::new(MaskKind::Random, 0.5, 3).unwrap();
        assert!(matches!(sample_mask(&s, 8, 8, 0), Err(Error::Contract(_))));
        assert!(MaskStrategy::new(MaskKind::Random, 1.0, 3).is_err());
    }

    #[test]
    fn block_is_single_rectangle_near_ratio() {
        let s = MaskStrategy::new(MaskKind::Block, 0.75, 8).unwrap();
        for seed in 0..50 {
            let m = sample_mask(&s, 64, 32, seed).unwrap();
            let (gh, gw) = (8, 4);
            let cells: Vec<(usize, usize)> = (0..gh)
                .flat_map(|y| (0..gw).map(move |x| (y, x)))
                .filter(|&(y, x)| m.is_hidden(y * 8, x * 8))
                .collect();
            assert!((cells.len() as f64 - 24.0).abs() <= 1.0);
            let ymin = cells.iter().map(|c| c.0).min().unwrap();
            let ymax = cells.iter().map(|c| c.0).max().unwrap();
            let xmin = cells.iter().map(|c| c.1).min().unwrap();
            let xmax = cells.iter().map(|c| c.1).max().unwrap();
            assert_eq!((ymax - ymin + 1) * (xmax - xmin + 1), cells.len());
        }
    }

    #[test]
    fn mean_fill_cases() {
        let img = Image::new(1, 3, 3, (0..9).map(|i| i as f64 / 10.0).collect()).unwrap();
        let none = BinaryMask::none(1, 3);
        assert_eq!(mean_fill_reconstruct(&img, &none).unwrap(), img);

        let constant = Image::new(2, 2, 3, vec![0.4; 12]).unwrap();
        let m = BinaryMask::new(2, 2, vec![true, false, true, false]).unwrap();
        assert_eq!(mean_fill_reconstruct(&constant, &m).unwrap(), constant);

        let two = Image::new(1, 2, 1, vec![0.2, 0.9]).unwrap();
        let m = BinaryMask::new(1, 2, vec![false, true]).unwrap();
        assert_eq!(mean_fill_reconstruct(&two, &m).unwrap().data(), &[0.2, 0.2]);

        let all = BinaryMask::new(1, 2, vec![true, true]).unwrap();
        assert!(mean_fill_reconstruct(&two, &all).is_err());
    }

    #[test]
    fn channel_concat_layout() {
        let h = 4;
        let w = 2;
        let img = Image::new(h, w, 3, vec![0.5; h * w * 3]).unwrap();
        let r = Image::new(h, w, 3, (0..24).map(|i| i as f64 / 24.0).collect()).unwrap();
        let b = Image::new(h, w, 3, vec![0.25; 24]).unwrap();
        let out = mae_channel_concat(&img, &r, &b, &r).unwrap();
        assert_eq!(out.channels(), 9);
        assert_eq!(out.channel_slice(3, 3).unwrap(), b);
        let same = mae_channel_concat(&img, &r, &r, &r).unwrap();
        for k in 0..3 {
            assert_eq!(same.channel_slice(3 * k, 3).unwrap(), r);
        }
        let small = Image::new(2, 2, 3, vec![0.0; 12]).unwrap();
        assert!(mae_channel_concat(&img, &small, &b, &r).is_err());
    }
}
