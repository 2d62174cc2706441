use super::{Image, PreprocessError};

/// Luma weights for R, G, B.
pub const GRAY_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

pub fn grayscale(px: [f32; 3]) -> f32 {
    GRAY_WEIGHTS[0] * px[0] + GRAY_WEIGHTS[1] * px[1] + GRAY_WEIGHTS[2] * px[2]
}

fn blend(a: f32, b: f32, factor: f32) -> f32 {
    (factor * a + (1.0 - factor) * b).clamp(0.0, 255.0)
}

/// Brightness, then contrast, then saturation, each clamped to `[0, 255]`.
///
/// Brightness scales samples. Contrast blends toward the mean grayscale value
/// of the whole image; saturation blends toward each pixel's own grayscale.
/// A factor of 1.0 leaves its stage unchanged. Contrast and saturation accept 0,
/// giving a flat image and a grayscale image respectively.
pub fn adjust_photometric(
    img: &Image,
    brightness: f64,
    contrast: f64,
    saturation: f64,
) -> Result<Image, PreprocessError> {
    if !(brightness > 0.0 && contrast >= 0.0 && saturation >= 0.0) {
        return Err(PreprocessError::InvalidFactor);
    }
    if brightness == 1.0 && contrast == 1.0 && saturation == 1.0 {
        return Ok(img.clone());
    }
    let (b, c, s) = (brightness as f32, contrast as f32, saturation as f32);
    let mut px: Vec<[f32; 3]> = img
        .pixels()
        .map(|p| p.0.map(|v| (f32::from(v) * b).clamp(0.0, 255.0)))
        .collect();
    if c != 1.0 {
        let n = px.len().max(1) as f64;
        let mean = (px.iter().map(|p| f64::from(grayscale(*p))).sum::<f64>() / n) as f32;
        px.iter_mut().for_each(|p| *p = p.map(|v| blend(v, mean, c)));
    }
    if s != 1.0 {
        px.iter_mut().for_each(|p| {
            let g = grayscale(*p);
            *p = p.map(|v| blend(v, g, s));
        });
    }
    let raw = px.iter().flat_map(|p| p.map(|v| v.round() as u8)).collect();
    Ok(Image::from_raw(img.width(), img.height(), raw).expect("buffer length matches dimensions"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn colorful() -> Image {
        Image::from_fn(16, 8, |x, y| image::Rgb([(x * 15) as u8, (y * 30) as u8, ((x * y) % 256) as u8]))
    }

    #[test]
    fn unit_factors_are_identity() {
        let img = colorful();
        assert_eq!(adjust_photometric(&img, 1.0, 1.0, 1.0).unwrap(), img);
    }

    #[test]
    fn brightness_scales_and_clamps() {
        let img = Image::from_raw(2, 1, vec![100, 100, 100, 200, 200, 200]).unwrap();
        let out = adjust_photometric(&img, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(out.get_pixel(0, 0).0, [200; 3]);
        assert_eq!(out.get_pixel(1, 0).0, [255; 3]);
    }

    #[test]
    fn zero_saturation_is_gray() {
        let img = colorful();
        let out = adjust_photometric(&img, 1.0, 1.0, 0.0).unwrap();
        for (src, p) in img.pixels().zip(out.pixels()) {
            assert_eq!(p.0[0], p.0[1]);
            assert_eq!(p.0[1], p.0[2]);
            let g = 0.299 * f64::from(src.0[0]) + 0.587 * f64::from(src.0[1]) + 0.114 * f64::from(src.0[2]);
            assert!((f64::from(p.0[0]) - g).abs() <= 0.5 + 1e-3);
        }
    }

    #[test]
    fn zero_contrast_flattens_to_mean() {
        let img = colorful();
        let out = adjust_photometric(&img, 1.0, 0.0, 1.0).unwrap();
        let first = out.get_pixel(0, 0).0;
        assert!(out.pixels().all(|p| p.0 == first));
    }

    #[test]
    fn non_positive_factor_rejected() {
        assert!(adjust_photometric(&colorful(), 0.0, 1.0, 1.0).is_err());
        assert!(adjust_photometric(&colorful(), 1.0, -1.0, 1.0).is_err());
    }
}
