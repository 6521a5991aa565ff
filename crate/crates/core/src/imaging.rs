//! Pixel primitives: crop, outline drawing, masked MSE, sharpness.
//!
//! Images are 8-bit RGB; any alpha channel is dropped on load. Masks are
//! binary and stored as single-channel PNG (0 outside, 255 inside).

use image::{GrayImage, Luma, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::BBox;

/// Binary mask aligned to an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn from_rect(width: u32, height: u32, rect: BBox) -> Self {
        Self::from_fn(width, height, |x, y| rect.contains(x, y))
    }

    /// Any nonzero gray value counts as inside.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] != 0)
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let i = self.idx(x, y);
        self.bits[i] = v;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|b| **b).count() as u64
    }

    pub fn iter_on(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i as u32) % w, (i as u32) / w))
    }

    /// Tight bounding box of the on-pixels, `None` for an empty mask.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for (x, y) in self.iter_on() {
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        any.then(|| BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    /// Sets every pixel of `rect` and returns how many were newly switched on.
    pub fn fill_rect(&mut self, rect: BBox) -> u64 {
        let mut added = 0;
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                let i = self.idx(x, y);
                if !self.bits[i] {
                    self.bits[i] = true;
                    added += 1;
                }
            }
        }
        added
    }

    /// Counts pixels of `rect` not yet on.
    pub fn count_off_in(&self, rect: BBox) -> u64 {
        let mut n = 0;
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                if !self.get(x, y) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"mask");
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        let packed: Vec<u8> = self.bits.iter().map(|b| u8::from(*b)).collect();
        h.update(&packed);
        hex::encode(h.finalize())
    }
}

/// Summed-area table over a mask for O(1) rectangle counts.
pub struct IntegralMask {
    width: usize,
    sums: Vec<u64>,
}

impl IntegralMask {
    pub fn new(mask: &Mask) -> Self {
        let w = mask.width as usize + 1;
        let h = mask.height as usize + 1;
        let mut sums = vec![0u64; w * h];
        for y in 0..mask.height as usize {
            let mut row = 0u64;
            for x in 0..mask.width as usize {
                row += u64::from(mask.get(x as u32, y as u32));
                sums[(y + 1) * w + (x + 1)] = sums[y * w + (x + 1)] + row;
            }
        }
        Self { width: w, sums }
    }

    pub fn count(&self, r: BBox) -> u64 {
        let w = self.width;
        let (x0, y0) = (r.x as usize, r.y as usize);
        let (x1, y1) = (x0 + r.w as usize, y0 + r.h as usize);
        self.sums[y1 * w + x1] + self.sums[y0 * w + x0]
            - self.sums[y0 * w + x1]
            - self.sums[y1 * w + x0]
    }
}

/// SHA-256 over dimensions and raw RGB bytes.
pub fn content_hash(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(b"rgb8");
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

pub fn crop(img: &RgbImage, bbox: BBox) -> Result<RgbImage> {
    bbox.check_within(img.width(), img.height())?;
    Ok(image::imageops::crop_imm(img, bbox.x, bbox.y, bbox.w, bbox.h).to_image())
}

/// Mean over masked pixels of the channel-averaged squared difference, in 0–255 units.
pub fn masked_mse(a: &RgbImage, b: &RgbImage, region: &Mask) -> Result<f64> {
    if a.dimensions() != b.dimensions() || a.dimensions() != region.dims() {
        return Err(Error::domain(format!(
            "dimension mismatch: {:?} vs {:?} vs mask {:?}",
            a.dimensions(),
            b.dimensions(),
            region.dims()
        )));
    }
    let mut total = 0u64;
    let mut count = 0u64;
    for (x, y) in region.iter_on() {
        let pa = a.get_pixel(x, y);
        let pb = b.get_pixel(x, y);
        for c in 0..3 {
            let d = i64::from(pa[c]) - i64::from(pb[c]);
            total += (d * d) as u64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::domain("empty mask"));
    }
    Ok(total as f64 / (3.0 * count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutlineStyle {
    pub color: [u8; 3],
    pub thickness: u32,
}

impl Default for OutlineStyle {
    fn default() -> Self {
        Self {
            color: [255, 0, 0],
            thickness: 3,
        }
    }
}

/// Copies `img` and paints a rectangle outline along the inner edge of `bbox`.
pub fn draw_bbox(img: &RgbImage, bbox: BBox, style: OutlineStyle) -> Result<RgbImage> {
    bbox.check_within(img.width(), img.height())?;
    let mut out = img.clone();
    let t = style.thickness.max(1);
    for y in bbox.y..bbox.y + bbox.h {
        for x in bbox.x..bbox.x + bbox.w {
            if on_outline(bbox, t, x, y) {
                out.put_pixel(x, y, Rgb(style.color));
            }
        }
    }
    Ok(out)
}

pub fn on_outline(bbox: BBox, thickness: u32, x: u32, y: u32) -> bool {
    let dx = (x - bbox.x).min(bbox.x + bbox.w - 1 - x);
    let dy = (y - bbox.y).min(bbox.y + bbox.h - 1 - y);
    dx < thickness || dy < thickness
}

pub fn luma(p: &Rgb<u8>) -> f64 {
    (299.0 * f64::from(p[0]) + 587.0 * f64::from(p[1]) + 114.0 * f64::from(p[2])) / 1000.0
}

/// Variance of the 3×3 Laplacian response over interior pixels of the luma plane.
pub fn blur_score(img: &RgbImage) -> f64 {
    let (w, h) = img.dimensions();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let gray: Vec<f64> = img.pixels().map(luma).collect();
    let at = |x: u32, y: u32| gray[(y * w + x) as usize];
    let mut responses = Vec::with_capacity(((w - 2) * (h - 2)) as usize);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
            responses.push(r);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    responses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
}

/// Side-by-side concatenation, top-aligned, black padding.
pub fn hconcat(a: &RgbImage, b: &RgbImage) -> RgbImage {
    let h = a.height().max(b.height());
    let mut out = RgbImage::new(a.width() + b.width(), h);
    image::imageops::replace(&mut out, a, 0, 0);
    image::imageops::replace(&mut out, b, i64::from(a.width()), 0);
    out
}

/// Copies `patch` pixels from `generated` into `original` and leaves the rest untouched.
pub fn composite(original: &RgbImage, generated: &RgbImage, patch: &Mask) -> Result<RgbImage> {
    if original.dimensions() != generated.dimensions() || original.dimensions() != patch.dims() {
        return Err(Error::domain("composite: dimension mismatch"));
    }
    let mut out = original.clone();
    for (x, y) in patch.iter_on() {
        out.put_pixel(x, y, *generated.get_pixel(x, y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
    }

    #[test]
    fn full_frame_crop_is_identity() {
        let img = random_image(100, 100, 1);
        let out = crop(&img, BBox::new(0, 0, 100, 100)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn crop_offset() {
        let img = random_image(100, 100, 2);
        let out = crop(&img, BBox::new(10, 10, 20, 20)).unwrap();
        assert_eq!(out.dimensions(), (20, 20));
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(10, 10));
        assert_eq!(out.get_pixel(19, 19), img.get_pixel(29, 29));
    }

    #[test]
    fn crop_rejects_degenerate_and_oob() {
        let img = random_image(10, 10, 3);
        assert!(crop(&img, BBox::new(0, 0, 0, 5)).is_err());
        assert!(crop(&img, BBox::new(5, 5, 6, 2)).is_err());
    }

    #[test]
    fn mse_identical_is_zero() {
        let img = random_image(16, 16, 4);
        let m = Mask::from_rect(16, 16, BBox::new(2, 2, 5, 5));
        assert_eq!(masked_mse(&img, &img, &m).unwrap(), 0.0);
    }

    #[test]
    fn mse_single_pixel_single_channel() {
        let a = RgbImage::from_pixel(4, 4, Rgb([10, 10, 10]));
        let mut b = a.clone();
        b.put_pixel(1, 2, Rgb([10, 17, 10]));
        let m = Mask::from_rect(4, 4, BBox::new(1, 2, 1, 1));
        assert_eq!(masked_mse(&a, &b, &m).unwrap(), 49.0 / 3.0);
    }

    #[test]
    fn mse_matches_per_pixel_loop() {
        for seed in 0..20 {
            let a = random_image(8, 8, seed);
            let b = random_image(8, 8, seed + 1000);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let mut m = Mask::from_fn(8, 8, |_, _| rng.random_bool(0.5));
            m.set(0, 0, true);
            // oracle: plain nested loops over every pixel
            let mut sum = 0.0f64;
            let mut n = 0.0f64;
            for y in 0..8 {
                for x in 0..8 {
                    if m.get(x, y) {
                        let mut px = 0.0;
                        for c in 0..3 {
                            let d = f64::from(a.get_pixel(x, y)[c]) - f64::from(b.get_pixel(x, y)[c]);
                            px += d * d;
                        }
                        sum += px / 3.0;
                        n += 1.0;
                    }
                }
            }
            let got = masked_mse(&a, &b, &m).unwrap();
            assert!((got - sum / n).abs() < 1e-9, "seed {seed}: {got} vs {}", sum / n);
        }
    }

    #[test]
    fn mse_errors() {
        let a = random_image(4, 4, 5);
        let b = random_image(4, 5, 6);
        assert!(masked_mse(&a, &b, &Mask::from_rect(4, 4, BBox::new(0, 0, 1, 1))).is_err());
        assert!(masked_mse(&a, &a, &Mask::empty(4, 4)).is_err());
    }

    #[test]
    fn outline_leaves_interior_untouched() {
        let img = random_image(40, 40, 8);
        let style = OutlineStyle::default();
        let bbox = BBox::new(5, 6, 20, 18);
        let out = draw_bbox(&img, bbox, style).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                let inside = bbox.contains(x, y);
                if inside && on_outline(bbox, style.thickness, x, y) {
                    assert_eq!(out.get_pixel(x, y).0, style.color);
                } else {
                    assert_eq!(out.get_pixel(x, y), img.get_pixel(x, y));
                }
            }
        }
        // strictly inside the band
        assert_eq!(out.get_pixel(5 + 3, 6 + 3), img.get_pixel(8, 9));
        assert!(draw_bbox(&img, BBox::new(30, 30, 20, 5), style).is_err());
    }

    #[test]
    fn outline_is_idempotent() {
        let img = random_image(32, 32, 9);
        let bbox = BBox::new(3, 4, 10, 12);
        let once = draw_bbox(&img, bbox, OutlineStyle::default()).unwrap();
        let twice = draw_bbox(&once, bbox, OutlineStyle::default()).unwrap();
        assert_eq!(content_hash(&once), content_hash(&twice));
    }

    #[test]
    fn constant_image_has_zero_blur_score() {
        let img = RgbImage::from_pixel(20, 20, Rgb([90, 120, 30]));
        assert_eq!(blur_score(&img), 0.0);
        assert!(blur_score(&random_image(20, 20, 10)) > 100.0);
    }

    #[test]
    fn integral_counts() {
        let m = Mask::from_fn(10, 8, |x, y| (x + y) % 3 == 0);
        let ii = IntegralMask::new(&m);
        let r = BBox::new(2, 1, 5, 4);
        let brute = (1..5)
            .flat_map(|y| (2..7).map(move |x| (x, y)))
            .filter(|&(x, y)| m.get(x, y))
            .count() as u64;
        assert_eq!(ii.count(r), brute);
        assert_eq!(ii.count(BBox::full(10, 8)), m.area());
    }

    #[test]
    fn mask_roundtrip_and_bbox() {
        let m = Mask::from_rect(12, 9, BBox::new(3, 2, 4, 5));
        assert_eq!(Mask::from_gray(&m.to_gray()), m);
        assert_eq!(m.tight_bbox(), Some(BBox::new(3, 2, 4, 5)));
        assert_eq!(Mask::empty(3, 3).tight_bbox(), None);
    }

    proptest! {
        #[test]
        fn crop_composes(
            x in 0u32..20, y in 0u32..20, w in 1u32..20, h in 1u32..20,
            cx in 0u32..10, cy in 0u32..10, cw in 1u32..10, ch in 1u32..10,
        ) {
            let img = random_image(40, 40, 11);
            let outer = BBox::new(x, y, w, h);
            let inner = BBox::new(cx, cy, cw, ch);
            prop_assume!(inner.check_within(w, h).is_ok());
            let twice = crop(&crop(&img, outer).unwrap(), inner).unwrap();
            let direct = crop(&img, outer.compose(inner)).unwrap();
            prop_assert_eq!(twice, direct);
        }

        #[test]
        fn mse_symmetric_nonneg(seed in 0u64..1000) {
            let a = random_image(6, 6, seed);
            let mut b = a.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let m = Mask::from_fn(6, 6, |x, y| (x * y + seed as u32).is_multiple_of(2));
            let touch = rng.random_bool(0.5);
            if touch {
                b.put_pixel(1, 1, Rgb([rng.random(), rng.random(), rng.random()]));
            }
            let ab = masked_mse(&a, &b, &m).unwrap();
            let ba = masked_mse(&b, &a, &m).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            let agree = m.iter_on().all(|(x, y)| a.get_pixel(x, y) == b.get_pixel(x, y));
            prop_assert_eq!(ab == 0.0, agree);
        }
    }
}
