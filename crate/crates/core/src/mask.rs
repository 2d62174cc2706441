//! Packed binary masks and exact mask algebra.
//!
//! A [`BinaryMask`] stores one bit per pixel in row-major order, packed into
//! `u64` words. Area, intersection and union run word-at-a-time with
//! `count_ones`, which keeps full-page (~10⁶ pixel) operations cheap.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const WORD_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask dimensions must be positive, got {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("mask dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: u32,
        left_h: u32,
        right_w: u32,
        right_h: u32,
    },
    #[error("region {0:?} does not fit inside a {1}x{2} mask")]
    OutOfBounds(BoundingBox, u32, u32),
}

/// Axis-aligned pixel box, top-left origin, x rightward and y downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    /// Continuous-coordinate center of the box.
    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.x) + f64::from(self.w) / 2.0,
            f64::from(self.y) + f64::from(self.h) / 2.0,
        )
    }

    /// True when `other` lies inside `self`. Empty boxes are contained everywhere.
    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.is_empty()
            || (other.x >= self.x
                && other.y >= self.y
                && other.right() <= self.right()
                && other.bottom() <= self.bottom())
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.right() && y < self.bottom()
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }
}

/// Per-pixel instance footprint over a page raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    /// All-zero mask.
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::InvalidDimensions { width, height });
        }
        let n = width as usize * height as usize;
        Ok(Self {
            width,
            height,
            words: vec![0; n.div_ceil(WORD_BITS)],
        })
    }

    pub fn full(width: u32, height: u32) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        m.words.iter_mut().for_each(|w| *w = !0);
        m.clear_tail();
        Ok(m)
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }

    /// Mask with the given box set, clipped to the raster.
    pub fn from_rect(width: u32, height: u32, rect: BoundingBox) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        let x1 = rect.right().min(width);
        let y1 = rect.bottom().min(height);
        if rect.x < x1 {
            for y in rect.y..y1 {
                m.set_span(y, rect.x, x1);
            }
        }
        Ok(m)
    }

    /// Builds a mask from row-major bytes, any non-zero byte being a set pixel.
    pub fn from_row_major_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self, MaskError> {
        let mut m = Self::new(width, height)?;
        assert_eq!(bytes.len(), m.pixel_count(), "byte buffer length must be width*height");
        for (i, &b) in bytes.iter().enumerate() {
            if b != 0 {
                m.words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Ok(m)
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

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        let bit = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= bit;
        } else {
            self.words[i / WORD_BITS] &= !bit;
        }
    }

    /// Sets pixels `x0..x1` of row `y`.
    fn set_span(&mut self, y: u32, x0: u32, x1: u32) {
        let start = self.index(x0, y);
        let end = start + (x1 - x0) as usize;
        let mut i = start;
        while i < end {
            let word = i / WORD_BITS;
            let lo = i % WORD_BITS;
            let hi = (end - word * WORD_BITS).min(WORD_BITS);
            let bits = if hi - lo == WORD_BITS {
                !0
            } else {
                ((1u64 << (hi - lo)) - 1) << lo
            };
            self.words[word] |= bits;
            i = word * WORD_BITS + hi;
        }
    }

    fn clear_tail(&mut self) {
        let n = self.pixel_count();
        let rem = n % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn check_same(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> Result<u64, MaskError> {
        self.check_same(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum())
    }

    pub fn union_area(&self, other: &BinaryMask) -> Result<u64, MaskError> {
        self.check_same(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| u64::from((a | b).count_ones()))
            .sum())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        let mut out = self.clone();
        out.union_in_place(other)?;
        Ok(out)
    }

    pub fn union_in_place(&mut self, other: &BinaryMask) -> Result<(), MaskError> {
        self.check_same(other)?;
        self.words
            .iter_mut()
            .zip(&other.words)
            .for_each(|(a, b)| *a |= b);
        Ok(())
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.words
            .iter_mut()
            .zip(&other.words)
            .for_each(|(a, b)| *a &= b);
        Ok(out)
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.words
            .iter_mut()
            .zip(&other.words)
            .for_each(|(a, b)| *a &= !b);
        Ok(out)
    }

    /// Intersection over union. Two empty masks agree perfectly (1.0).
    pub fn iou(&self, other: &BinaryMask) -> Result<f64, MaskError> {
        let inter = self.intersection_area(other)?;
        let union = self.union_area(other)?;
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Intersection over the smaller of the two areas.
    ///
    /// Both empty gives 1.0; exactly one empty gives 0.0.
    pub fn ios(&self, other: &BinaryMask) -> Result<f64, MaskError> {
        let inter = self.intersection_area(other)?;
        let (a, b) = (self.area(), other.area());
        match (a, b) {
            (0, 0) => Ok(1.0),
            (0, _) | (_, 0) => Ok(0.0),
            _ => Ok(inter as f64 / a.min(b) as f64),
        }
    }

    /// Tight box over set pixels; `(0,0,0,0)` for an empty mask.
    pub fn bbox(&self) -> BoundingBox {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for (x, y) in self.iter_ones() {
            any = true;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if !any {
            return BoundingBox::default();
        }
        BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    /// Set pixels as `(x, y)`, in row-major order.
    pub fn iter_ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * WORD_BITS + tz;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    /// Copies the pixels under `region` into a new mask of the region's size.
    pub fn crop(&self, region: BoundingBox) -> Result<BinaryMask, MaskError> {
        if region.is_empty() || !region.fits_within(self.width, self.height) {
            return Err(MaskError::OutOfBounds(region, self.width, self.height));
        }
        let mut out = BinaryMask::new(region.w, region.h)?;
        for y in 0..region.h {
            for x in 0..region.w {
                if self.get(region.x + x, region.y + y) {
                    out.set(x, y, true);
                }
            }
        }
        Ok(out)
    }

    /// Places this mask at `(x0, y0)` on an empty `width`×`height` canvas.
    ///
    /// Pixels falling outside the canvas are dropped. No resampling happens.
    pub fn paste_onto(&self, width: u32, height: u32, x0: u32, y0: u32) -> Result<BinaryMask, MaskError> {
        let mut out = BinaryMask::new(width, height)?;
        for (x, y) in self.iter_ones() {
            let (px, py) = (x0 + x, y0 + y);
            if px < width && py < height {
                out.set(px, py, true);
            }
        }
        Ok(out)
    }

    /// Square-window dilation with the given radius (Chebyshev distance).
    pub fn dilate(&self, radius: u32) -> BinaryMask {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let bb = self.bbox();
        let mut horiz = BinaryMask::new(self.width, self.height).expect("dims already valid");
        for y in bb.y..bb.bottom() {
            for (a, b) in self.row_runs(y, bb.x, bb.right()) {
                let lo = a.saturating_sub(radius);
                let hi = (b + radius + 1).min(self.width);
                horiz.set_span(y, lo, hi);
            }
        }
        let x_lo = bb.x.saturating_sub(radius);
        let x_hi = (bb.right() + radius).min(self.width);
        let mut out = BinaryMask::new(self.width, self.height).expect("dims already valid");
        for x in x_lo..x_hi {
            for (a, b) in horiz.col_runs(x, bb.y, bb.bottom()) {
                let lo = a.saturating_sub(radius);
                let hi = (b + radius + 1).min(self.height);
                for y in lo..hi {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    /// Square-window erosion with the given radius. The canvas border does not
    /// erode: the window is clipped to the raster.
    pub fn erode(&self, radius: u32) -> BinaryMask {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let bb = self.bbox();
        let mut horiz = BinaryMask::new(self.width, self.height).expect("dims already valid");
        for y in bb.y..bb.bottom() {
            for (a, b) in self.row_runs(y, bb.x, bb.right()) {
                if let Some((lo, hi)) = erode_run(a, b, self.width, radius) {
                    horiz.set_span(y, lo, hi + 1);
                }
            }
        }
        let mut out = BinaryMask::new(self.width, self.height).expect("dims already valid");
        for x in bb.x..bb.right() {
            for (a, b) in horiz.col_runs(x, bb.y, bb.bottom()) {
                if let Some((lo, hi)) = erode_run(a, b, self.height, radius) {
                    for y in lo..=hi {
                        out.set(x, y, true);
                    }
                }
            }
        }
        out
    }

    /// Inclusive runs `(start, end)` of set pixels in row `y` within `[x0, x1)`.
    fn row_runs(&self, y: u32, x0: u32, x1: u32) -> Vec<(u32, u32)> {
        let mut runs = Vec::new();
        let mut start = None;
        for x in x0..x1 {
            match (self.get(x, y), start) {
                (true, None) => start = Some(x),
                (false, Some(s)) => {
                    runs.push((s, x - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, x1 - 1));
        }
        runs
    }

    fn col_runs(&self, x: u32, y0: u32, y1: u32) -> Vec<(u32, u32)> {
        let mut runs = Vec::new();
        let mut start = None;
        for y in y0..y1 {
            match (self.get(x, y), start) {
                (true, None) => start = Some(y),
                (false, Some(s)) => {
                    runs.push((s, y - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, y1 - 1));
        }
        runs
    }
}

/// Shrinks the inclusive run `[a, b]` of a line of length `len` by `r`,
/// leaving ends that touch the line border in place.
fn erode_run(a: u32, b: u32, len: u32, r: u32) -> Option<(u32, u32)> {
    let lo = if a == 0 { 0 } else { i64::from(a) + i64::from(r) };
    let hi = if b + 1 == len { i64::from(b) } else { i64::from(b) - i64::from(r) };
    (lo <= hi).then_some((lo as u32, hi as u32))
}
