use super::ImageGrid;
use crate::error::{Error, Result};

// D65 reference white
const XN: f64 = 0.950_47;
const YN: f64 = 1.0;
const ZN: f64 = 1.088_83;

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Unscaled CIELAB `(L, a, b)` of one sRGB triple.
#[inline]
pub(crate) fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0]);
    let g = srgb_to_linear(rgb[1]);
    let b = srgb_to_linear(rgb[2]);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let fx = lab_f(x / XN);
    let fy = lab_f(y / YN);
    let fz = lab_f(z / ZN);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Scale unscaled Lab into the `[0,1]` storage convention.
#[inline]
pub(crate) fn scale_lab(lab: [f64; 3]) -> [f64; 3] {
    [
        (lab[0] / 100.0).clamp(0.0, 1.0),
        ((lab[1] + 128.0) / 255.0).clamp(0.0, 1.0),
        ((lab[2] + 128.0) / 255.0).clamp(0.0, 1.0),
    ]
}

/// Inverse of [`scale_lab`].
#[inline]
pub(crate) fn unscale_lab(s: [f64; 3]) -> [f64; 3] {
    [s[0] * 100.0, s[1] * 255.0 - 128.0, s[2] * 255.0 - 128.0]
}

/// Convert a 3-channel sRGB grid to CIELAB (D65), stored as
/// `L/100, (a+128)/255, (b+128)/255`.
pub fn rgb_to_lab(img: &ImageGrid) -> Result<ImageGrid> {
    if img.channels() != 3 {
        return Err(Error::dim(format!(
            "rgb_to_lab needs 3 channels, got {}",
            img.channels()
        )));
    }
    let n = img.pixels();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let lab = scale_lab(srgb_to_lab(img.rgb_at(i)));
        for c in 0..3 {
            out[c * n + i] = lab[c];
        }
    }
    Ok(ImageGrid::from_raw(img.height(), img.width(), 3, out))
}
