use crate::mask::{BinaryMask, MaskError};

use super::{Image, PreprocessError, TransformRecord};

/// Largest accepted small-rotation angle in degrees.
pub const MAX_SMALL_ROTATION_DEG: f64 = 45.0;

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

pub(super) fn resize_bilinear(img: &Image, nw: u32, nh: u32) -> Image {
    let (w, h) = img.dimensions();
    if (w, h) == (nw, nh) {
        return img.clone();
    }
    let rx = w as f32 / nw as f32;
    let ry = h as f32 / nh as f32;
    Image::from_fn(nw, nh, |x, y| {
        let fx = ((x as f32 + 0.5) * rx - 0.5).clamp(0.0, (w - 1) as f32);
        let fy = ((y as f32 + 0.5) * ry - 0.5).clamp(0.0, (h - 1) as f32);
        let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        let p00 = img.get_pixel(x0, y0).0;
        let p10 = img.get_pixel(x1, y0).0;
        let p01 = img.get_pixel(x0, y1).0;
        let p11 = img.get_pixel(x1, y1).0;
        image::Rgb(std::array::from_fn(|c| {
            let top = lerp(f32::from(p00[c]), f32::from(p10[c]), tx);
            let bottom = lerp(f32::from(p01[c]), f32::from(p11[c]), tx);
            lerp(top, bottom, ty).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// Nearest-neighbour resample: output pixel `x` reads source `floor((x + 0.5) * ratio_x)`.
fn resample_mask(
    mask: &BinaryMask,
    out_w: u32,
    out_h: u32,
    ratio_x: f64,
    ratio_y: f64,
) -> Result<BinaryMask, MaskError> {
    let (w, h) = mask.dims();
    let src_x: Vec<Option<u32>> = (0..out_w)
        .map(|x| {
            let s = ((f64::from(x) + 0.5) * ratio_x).floor() as u32;
            (s < w).then_some(s)
        })
        .collect();
    let src_y: Vec<Option<u32>> = (0..out_h)
        .map(|y| {
            let s = ((f64::from(y) + 0.5) * ratio_y).floor() as u32;
            (s < h).then_some(s)
        })
        .collect();
    let mut out = BinaryMask::new(out_w, out_h)?;
    let bb = mask.bbox();
    if bb.is_empty() {
        return Ok(out);
    }
    for (y, sy) in src_y.iter().enumerate() {
        let Some(sy) = *sy else { continue };
        if sy < bb.y || sy >= bb.bottom() {
            continue;
        }
        for (x, sx) in src_x.iter().enumerate() {
            if let Some(sx) = *sx {
                if mask.get(sx, sy) {
                    out.set(x as u32, y as u32, true);
                }
            }
        }
    }
    Ok(out)
}

pub(super) fn resize_mask_nearest(mask: &BinaryMask, nw: u32, nh: u32) -> Result<BinaryMask, MaskError> {
    let (w, h) = mask.dims();
    resample_mask(mask, nw, nh, f64::from(w) / f64::from(nw), f64::from(h) / f64::from(nh))
}

/// Inverse of a forward scale from `orig` to `scaled` dims, tolerating a
/// source mask that was clipped smaller than `scaled`.
pub(super) fn resize_mask_nearest_to_scale(
    mask: &BinaryMask,
    orig_w: u32,
    orig_h: u32,
    scaled_w: u32,
    scaled_h: u32,
) -> Result<BinaryMask, PreprocessError> {
    Ok(resample_mask(
        mask,
        orig_w,
        orig_h,
        f64::from(scaled_w) / f64::from(orig_w),
        f64::from(scaled_h) / f64::from(orig_h),
    )?)
}

/// Destination coordinates of source `(x, y)` after `turns` clockwise quarter turns.
fn quarter_map(x: u32, y: u32, w: u32, h: u32, turns: u8) -> (u32, u32) {
    match turns % 4 {
        0 => (x, y),
        1 => (h - 1 - y, x),
        2 => (w - 1 - x, h - 1 - y),
        _ => (y, w - 1 - x),
    }
}

pub(super) fn rotate_quarter_image(img: &Image, turns: u8) -> Image {
    match turns % 4 {
        0 => img.clone(),
        1 => image::imageops::rotate90(img),
        2 => image::imageops::rotate180(img),
        _ => image::imageops::rotate270(img),
    }
}

pub(super) fn rotate_quarter_mask(mask: &BinaryMask, turns: u8) -> BinaryMask {
    let (w, h) = mask.dims();
    let (nw, nh) = if turns % 2 == 1 { (h, w) } else { (w, h) };
    let mut out = BinaryMask::new(nw, nh).expect("dims already valid");
    for (x, y) in mask.iter_ones() {
        let (nx, ny) = quarter_map(x, y, w, h, turns);
        out.set(nx, ny, true);
    }
    out
}

/// Source position (continuous, pixel centres at +0.5) of destination pixel
/// `(x, y)` under a clockwise rotation by `deg` about the canvas centre.
struct InverseRotation {
    cos: f64,
    sin: f64,
    cx: f64,
    cy: f64,
}

impl InverseRotation {
    fn new(w: u32, h: u32, deg: f64) -> Self {
        let rad = deg.to_radians();
        Self {
            cos: rad.cos(),
            sin: rad.sin(),
            cx: f64::from(w) / 2.0,
            cy: f64::from(h) / 2.0,
        }
    }

    fn source(&self, x: u32, y: u32) -> (f64, f64) {
        let dx = f64::from(x) + 0.5 - self.cx;
        let dy = f64::from(y) + 0.5 - self.cy;
        (
            self.cx + self.cos * dx + self.sin * dy,
            self.cy - self.sin * dx + self.cos * dy,
        )
    }
}

pub(super) fn rotate_image(img: &Image, deg: f64, fill: [u8; 3]) -> Image {
    let (w, h) = img.dimensions();
    let rot = InverseRotation::new(w, h, deg);
    let fetch = |x: i64, y: i64| -> [u8; 3] {
        if x < 0 || y < 0 || x >= i64::from(w) || y >= i64::from(h) {
            fill
        } else {
            img.get_pixel(x as u32, y as u32).0
        }
    };
    Image::from_fn(w, h, |x, y| {
        let (sx, sy) = rot.source(x, y);
        let (fx, fy) = (sx - 0.5, sy - 0.5);
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = ((fx - x0) as f32, (fy - y0) as f32);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let p00 = fetch(x0, y0);
        let p10 = fetch(x0 + 1, y0);
        let p01 = fetch(x0, y0 + 1);
        let p11 = fetch(x0 + 1, y0 + 1);
        image::Rgb(std::array::from_fn(|c| {
            let top = lerp(f32::from(p00[c]), f32::from(p10[c]), tx);
            let bottom = lerp(f32::from(p01[c]), f32::from(p11[c]), tx);
            lerp(top, bottom, ty).round().clamp(0.0, 255.0) as u8
        }))
    })
}

pub(super) fn rotate_mask(mask: &BinaryMask, deg: f64) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = BinaryMask::new(w, h).expect("dims already valid");
    if mask.is_empty() {
        return out;
    }
    // Only destination pixels near the rotated source box can be set.
    let bb = mask.bbox();
    let fwd = InverseRotation::new(w, h, -deg);
    let corners = [
        (bb.x, bb.y),
        (bb.right() - 1, bb.y),
        (bb.x, bb.bottom() - 1),
        (bb.right() - 1, bb.bottom() - 1),
    ];
    let (mut x_lo, mut y_lo, mut x_hi, mut y_hi) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for (cx, cy) in corners {
        let (px, py) = fwd.source(cx, cy);
        x_lo = x_lo.min(px);
        y_lo = y_lo.min(py);
        x_hi = x_hi.max(px);
        y_hi = y_hi.max(py);
    }
    let clamp = |v: f64, hi: u32| v.clamp(0.0, f64::from(hi)) as u32;
    let (x_lo, x_hi) = (clamp(x_lo - 2.0, w), clamp(x_hi + 2.0, w));
    let (y_lo, y_hi) = (clamp(y_lo - 2.0, h), clamp(y_hi + 2.0, h));
    let rot = InverseRotation::new(w, h, deg);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (sx, sy) = rot.source(x, y);
            if sx >= 0.0 && sy >= 0.0 {
                let (ix, iy) = (sx.floor() as u32, sy.floor() as u32);
                if ix < w && iy < h && mask.get(ix, iy) {
                    out.set(x, y, true);
                }
            }
        }
    }
    out
}

pub(super) fn flip_image(mut img: Image, horizontal: bool, vertical: bool) -> Image {
    if horizontal {
        image::imageops::flip_horizontal_in_place(&mut img);
    }
    if vertical {
        image::imageops::flip_vertical_in_place(&mut img);
    }
    img
}

pub(super) fn flip_mask(mask: &BinaryMask, horizontal: bool, vertical: bool) -> BinaryMask {
    if !horizontal && !vertical {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let mut out = BinaryMask::new(w, h).expect("dims already valid");
    for (x, y) in mask.iter_ones() {
        let nx = if horizontal { w - 1 - x } else { x };
        let ny = if vertical { h - 1 - y } else { y };
        out.set(nx, ny, true);
    }
    out
}

/// Rotates an image and its masks clockwise by `theta_deg` about the canvas
/// centre, keeping the canvas size. Uncovered corners take `fill`.
pub fn rotate_small(
    img: &Image,
    masks: &[BinaryMask],
    theta_deg: f64,
    fill: [u8; 3],
) -> Result<(Image, Vec<BinaryMask>, TransformRecord), PreprocessError> {
    if !(theta_deg.abs() <= MAX_SMALL_ROTATION_DEG) {
        return Err(PreprocessError::RotationTooLarge(theta_deg));
    }
    let rec = TransformRecord {
        rotation_deg: theta_deg,
        ..TransformRecord::identity()
    };
    if theta_deg == 0.0 {
        return Ok((img.clone(), masks.to_vec(), rec));
    }
    let out = rotate_image(img, theta_deg, fill);
    let masks = masks.iter().map(|m| rotate_mask(m, theta_deg)).collect();
    Ok((out, masks, rec))
}

/// Exact rotation by `k` clockwise quarter turns. Pixel `(row r, col c)` moves
/// to `(row c, col height-1-r)` for `k = 1`.
pub fn rotate_discrete(img: &Image, masks: &[BinaryMask], k: u8) -> (Image, Vec<BinaryMask>, TransformRecord) {
    let k = k % 4;
    let rec = TransformRecord {
        rotation_deg: 90.0 * f64::from(k),
        ..TransformRecord::identity()
    };
    let out = rotate_quarter_image(img, k);
    let masks = masks.iter().map(|m| rotate_quarter_mask(m, k)).collect();
    (out, masks, rec)
}

pub fn flip(
    img: &Image,
    masks: &[BinaryMask],
    horizontal: bool,
    vertical: bool,
) -> (Image, Vec<BinaryMask>, TransformRecord) {
    let rec = TransformRecord {
        flip_h: horizontal,
        flip_v: vertical,
        ..TransformRecord::identity()
    };
    let out = flip_image(img.clone(), horizontal, vertical);
    let masks = masks.iter().map(|m| flip_mask(m, horizontal, vertical)).collect();
    (out, masks, rec)
}
