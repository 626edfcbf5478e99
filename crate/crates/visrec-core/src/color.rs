//! LAB color histogram features and the border-seed foreground mask.
//!
//! The histogram is a bag-of-pixels statistic over the image foreground:
//! sRGB pixels are converted to CIELAB (D65), binned 8x8x8 over
//! `L in [0,100]`, `a,b in [-110,110]`, and L1-normalized.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::Image;

pub const HIST_BINS_PER_AXIS: usize = 8;
pub const HIST_DIM: usize = HIST_BINS_PER_AXIS * HIST_BINS_PER_AXIS * HIST_BINS_PER_AXIS;

/// Per-channel tolerance for treating a pixel as background during the
/// border-seed flood fill.
pub const MASK_TOLERANCE: u8 = 12;

/// sRGB (0..=255 per channel) to CIELAB under the D65 white point.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f32; 3] {
    fn linearize(c: u8) -> f64 {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let r = linearize(rgb[0]);
    let g = linearize(rgb[1]);
    let b = linearize(rgb[2]);

    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    fn f(t: f64) -> f64 {
        if t > EPS {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    }
    let fx = f(x / WHITE[0]);
    let fy = f(y / WHITE[1]);
    let fz = f(z / WHITE[2]);

    [
        (116.0 * fy - 16.0) as f32,
        (500.0 * (fx - fy)) as f32,
        (200.0 * (fy - fz)) as f32,
    ]
}

/// Bin index for a LAB triple in the fixed 8x8x8 grid.
pub fn lab_bin(lab: [f32; 3]) -> usize {
    let n = HIST_BINS_PER_AXIS as f32;
    let clamp = |v: f32| -> usize { (v.max(0.0) as usize).min(HIST_BINS_PER_AXIS - 1) };
    let l = clamp(lab[0] / 100.0 * n);
    let a = clamp((lab[1] + 110.0) / 220.0 * n);
    let b = clamp((lab[2] + 110.0) / 220.0 * n);
    (l * HIST_BINS_PER_AXIS + a) * HIST_BINS_PER_AXIS + b
}

/// Foreground mask from a border-seed flood fill.
///
/// Seeds are border pixels close to the per-channel median border color;
/// the fill grows through 4-connected pixels that stay within
/// [`MASK_TOLERANCE`] of that anchor color, and everything the fill never
/// reaches is foreground.
#[derive(Debug, Clone)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    foreground: Vec<bool>,
    foreground_count: usize,
}

impl ForegroundMask {
    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.foreground[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground_count
    }

    pub fn is_empty(&self) -> bool {
        self.foreground_count == 0
    }

    pub fn whole_image(width: usize, height: usize) -> Self {
        ForegroundMask {
            width,
            height,
            foreground: vec![true; width * height],
            foreground_count: width * height,
        }
    }
}

fn within_tolerance(a: [u8; 3], b: [u8; 3], tol: u8) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|(&x, &y)| x.abs_diff(y) <= tol)
}

pub fn foreground_mask(image: &Image, tol: u8) -> ForegroundMask {
    let (w, h) = (image.width(), image.height());

    // Median border color per channel anchors the fill.
    let mut border: Vec<[u8; 3]> = Vec::with_capacity(2 * (w + h));
    for x in 0..w {
        border.push(image.pixel(x, 0));
        border.push(image.pixel(x, h - 1));
    }
    for y in 1..h.saturating_sub(1) {
        border.push(image.pixel(0, y));
        border.push(image.pixel(w - 1, y));
    }
    let mut anchor = [0u8; 3];
    for c in 0..3 {
        let mut vals: Vec<u8> = border.iter().map(|p| p[c]).collect();
        vals.sort_unstable();
        anchor[c] = vals[vals.len() / 2];
    }

    let mut background = vec![false; w * h];
    let mut queue = VecDeque::new();
    for x in 0..w {
        for y in [0, h - 1] {
            if within_tolerance(image.pixel(x, y), anchor, tol) && !background[y * w + x] {
                background[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    for y in 0..h {
        for x in [0, w - 1] {
            if within_tolerance(image.pixel(x, y), anchor, tol) && !background[y * w + x] {
                background[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let neighbors = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbors {
            if nx < w && ny < h && !background[ny * w + nx] {
                if within_tolerance(image.pixel(nx, ny), anchor, tol) {
                    background[ny * w + nx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }

    let foreground: Vec<bool> = background.iter().map(|&b| !b).collect();
    let foreground_count = foreground.iter().filter(|&&f| f).count();
    ForegroundMask {
        width: w,
        height: h,
        foreground,
        foreground_count,
    }
}

/// L1-normalized LAB color histogram of the image foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHist {
    bins: Vec<f32>,
    /// Set when the foreground mask was degenerate and the whole image was
    /// histogrammed instead.
    pub used_whole_image: bool,
}

impl ColorHist {
    pub fn bins(&self) -> &[f32] {
        &self.bins
    }

    /// L1 distance between two histograms.
    pub fn l1_distance(&self, other: &ColorHist) -> f64 {
        self.bins
            .iter()
            .zip(&other.bins)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum()
    }
}

pub fn colorhist_features(image: &Image) -> Result<ColorHist> {
    let mask = foreground_mask(image, MASK_TOLERANCE);
    let (mask, used_whole_image) = if mask.is_empty() {
        (
            ForegroundMask::whole_image(image.width(), image.height()),
            true,
        )
    } else {
        (mask, false)
    };

    let mut counts = vec![0u64; HIST_DIM];
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.is_foreground(x, y) {
                counts[lab_bin(srgb_to_lab(image.pixel(x, y)))] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Image("histogram over empty pixel set".into()));
    }
    let bins = counts
        .iter()
        .map(|&c| (c as f64 / total as f64) as f32)
        .collect();
    Ok(ColorHist {
        bins,
        used_whole_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn uniform_image_single_bin() {
        let img = Image::filled(8, 8, [200, 10, 10]);
        let hist = colorhist_features(&img).unwrap();
        // A solid image has no foreground under the border-seed fill, so the
        // whole-image fallback kicks in.
        assert!(hist.used_whole_image);
        let nonzero: Vec<_> = hist
            .bins()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(*nonzero[0].1, 1.0);
    }

    #[test]
    fn histogram_sums_to_one() {
        let mut img = Image::filled(16, 16, [255, 255, 255]);
        for y in 4..12 {
            for x in 4..12 {
                img.set_pixel(x, y, [(x * 16) as u8, (y * 16) as u8, 128]);
            }
        }
        let hist = colorhist_features(&img).unwrap();
        let sum: f64 = hist.bins().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    /// Derived from direct bin computation for the two LAB points:
    /// red (255,0,0) -> L=53.24, a=80.09, b=67.20 -> bins (4,6,6) -> 310;
    /// blue (0,0,255) -> L=32.30, a=79.19, b=-107.86 -> bins (2,6,0) -> 176.
    #[test]
    fn half_red_half_blue_two_bins() {
        let mut img = Image::filled(8, 8, [255, 0, 0]);
        for y in 4..8 {
            for x in 0..8 {
                img.set_pixel(x, y, [0, 0, 255]);
            }
        }
        // The border median lands between the two halves, so neither half is
        // background and every pixel counts as foreground.
        let hist = colorhist_features(&img).unwrap();
        assert_eq!(hist.bins()[310], 0.5);
        assert_eq!(hist.bins()[176], 0.5);
        assert_eq!(hist.bins().iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn mask_separates_centered_object() {
        let mut img = Image::filled(16, 16, [240, 240, 240]);
        for y in 5..11 {
            for x in 5..11 {
                img.set_pixel(x, y, [10, 20, 200]);
            }
        }
        let mask = foreground_mask(&img, MASK_TOLERANCE);
        assert_eq!(mask.foreground_count(), 36);
        assert!(mask.is_foreground(5, 5));
        assert!(!mask.is_foreground(0, 0));
    }

    impl ColorHist {
        fn assert_close(&self, other: &ColorHist) {
            assert_eq!(self.bins(), other.bins());
        }
    }

    /// Permuting pixels inside the masked region leaves the histogram
    /// unchanged: it is a bag-of-pixels statistic.
    #[test]
    fn histogram_invariant_under_pixel_permutation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut object: Vec<[u8; 3]> = (0..36u32)
            .map(|i| {
                [
                    (40 + i * 5) as u8,
                    (220 - i * 4) as u8,
                    ((i * 37) % 200) as u8,
                ]
            })
            .collect();

        let render = |object: &[[u8; 3]]| {
            let mut img = Image::filled(16, 16, [245, 245, 245]);
            for (i, &rgb) in object.iter().enumerate() {
                img.set_pixel(5 + i % 6, 5 + i / 6, rgb);
            }
            img
        };

        let h1 = colorhist_features(&render(&object)).unwrap();
        object.shuffle(&mut rng);
        let h2 = colorhist_features(&render(&object)).unwrap();
        // The mask (the 6x6 block) is identical in both renders.
        h1.assert_close(&h2);
        assert!(!h1.used_whole_image);
    }
}
