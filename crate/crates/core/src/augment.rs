//! Training-time views: mirroring, small translations and photometric jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dem2::{shift_image, shift_mask, shift_offset};
use crate::image::{Image, PartMask};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Views per training image; view 0 is the image itself.
    pub views: usize,
    pub max_shift: usize,
    /// Per-channel gain spread and global offset spread of the jitter.
    pub gain: f64,
    pub offset: f64,
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            views: 1,
            max_shift: 0,
            gain: 0.0,
            offset: 0.0,
        }
    }
}

/// View `v` of an image and its mask. Odd views are mirrored, views from 2 on
/// are translated, and every view but 0 gets gain and offset jitter.
pub fn view(image: &Image, mask: &PartMask, cfg: &AugmentConfig, v: usize, seed: u64) -> (Image, PartMask) {
    if v == 0 {
        return (image.clone(), mask.clone());
    }
    let (mut img, mut m) = if v % 2 == 1 {
        (image.flip_horizontal(), mask.flip_horizontal())
    } else {
        (image.clone(), mask.clone())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if v >= 2 && cfg.max_shift > 0 {
        let (dx, dy) = shift_offset(cfg.max_shift, rng.gen());
        img = shift_image(&img, dx, dy);
        m = shift_mask(&m, dx, dy);
    }
    if cfg.gain > 0.0 || cfg.offset > 0.0 {
        let c = img.channels();
        let gains: Vec<f64> = (0..c)
            .map(|_| 1.0 + cfg.gain * rng.gen_range(-1.0..=1.0))
            .collect();
        let off = cfg.offset * rng.gen_range(-1.0..=1.0);
        for px in img.data_mut().chunks_mut(c) {
            for (x, g) in px.iter_mut().zip(&gains) {
                *x = (*x * g + off).clamp(0.0, 1.0);
            }
        }
    }
    (img, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_zero_is_identity_and_views_are_deterministic() {
        let img = Image::new(8, 8, 3, (0..192).map(|i| i as f64 / 192.0).collect()).unwrap();
        let mask = PartMask::new(8, 8, (0..64).map(|i| (i % 5) as u8).collect()).unwrap();
        let cfg = AugmentConfig {
            views: 4,
            max_shift: 1,
            gain: 0.2,
            offset: 0.1,
        };
        assert_eq!(view(&img, &mask, &cfg, 0, 3), (img.clone(), mask.clone()));
        assert_eq!(view(&img, &mask, &cfg, 3, 3), view(&img, &mask, &cfg, 3, 3));
        let (v1, m1) = view(&img, &mask, &AugmentConfig { views: 2, ..AugmentConfig::none() }, 1, 0);
        assert_eq!(v1, img.flip_horizontal());
        assert_eq!(m1, mask.flip_horizontal());
        let (j, _) = view(&img, &mask, &cfg, 2, 9);
        assert!(j.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
