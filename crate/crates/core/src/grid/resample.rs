use super::ImageGrid;
use crate::error::{Error, Result};

/// Two-tap linear interpolation weights along one axis, half-pixel-centre
/// aligned: output `d` samples input coordinate `(d + 0.5) * in / out - 0.5`.
#[derive(Debug, Clone)]
pub struct Taps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    /// Weight of `hi`; `lo` gets `1 - frac`.
    pub frac: Vec<f64>,
}

impl Taps {
    pub fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for d in 0..output {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(src - i0 as f64);
        }
        Self { lo, hi, frac }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }
}

/// Bilinear resize of one row-major plane.
pub fn resize_plane(src: &[f64], h: usize, w: usize, new_h: usize, new_w: usize) -> Vec<f64> {
    if h == new_h && w == new_w {
        return src.to_vec();
    }
    let ty = Taps::new(h, new_h);
    let tx = Taps::new(w, new_w);
    let mut out = vec![0.0; new_h * new_w];
    for y in 0..new_h {
        let (r0, r1, fy) = (ty.lo[y] * w, ty.hi[y] * w, ty.frac[y]);
        for x in 0..new_w {
            let (c0, c1, fx) = (tx.lo[x], tx.hi[x], tx.frac[x]);
            let top = src[r0 + c0] * (1.0 - fx) + src[r0 + c1] * fx;
            let bot = src[r1 + c0] * (1.0 - fx) + src[r1 + c1] * fx;
            out[y * new_w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Transpose of [`resize_plane`]: maps a gradient on the resized plane back
/// onto the source plane.
pub fn resize_plane_adjoint(
    grad: &[f64],
    h: usize,
    w: usize,
    new_h: usize,
    new_w: usize,
) -> Vec<f64> {
    if h == new_h && w == new_w {
        return grad.to_vec();
    }
    let ty = Taps::new(h, new_h);
    let tx = Taps::new(w, new_w);
    let mut out = vec![0.0; h * w];
    for y in 0..new_h {
        let (r0, r1, fy) = (ty.lo[y] * w, ty.hi[y] * w, ty.frac[y]);
        for x in 0..new_w {
            let (c0, c1, fx) = (tx.lo[x], tx.hi[x], tx.frac[x]);
            let g = grad[y * new_w + x];
            out[r0 + c0] += g * (1.0 - fy) * (1.0 - fx);
            out[r0 + c1] += g * (1.0 - fy) * fx;
            out[r1 + c0] += g * fy * (1.0 - fx);
            out[r1 + c1] += g * fy * fx;
        }
    }
    out
}

/// Bilinear resize with half-pixel-centre alignment. Same-size resizes
/// return an exact copy.
pub fn resize_bilinear(img: &ImageGrid, new_h: usize, new_w: usize) -> Result<ImageGrid> {
    if new_h == 0 || new_w == 0 {
        return Err(Error::dim(format!("resize target {new_h}x{new_w}")));
    }
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(new_h * new_w * img.channels());
    for c in 0..img.channels() {
        let plane = resize_plane(img.channel(c), h, w, new_h, new_w);
        // convex combinations can drift a ulp past the inputs
        data.extend(plane.into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Ok(ImageGrid::from_raw(new_h, new_w, img.channels(), data))
}

/// Nearest-neighbour resize for label planes (no new values are invented).
pub fn resize_nearest_labels<T: Copy>(
    src: &[T],
    h: usize,
    w: usize,
    new_h: usize,
    new_w: usize,
) -> Vec<T> {
    let pick = |d: usize, input: usize, output: usize| {
        (((d as f64 + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1)
    };
    let mut out = Vec::with_capacity(new_h * new_w);
    for y in 0..new_h {
        let sy = pick(y, h, new_h);
        for x in 0..new_w {
            out.push(src[sy * w + pick(x, w, new_w)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_fixed() {
        let g = ImageGrid::filled(3, 5, 1, 0.3).unwrap();
        let r = resize_bilinear(&g, 7, 2).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn identity_is_bit_exact() {
        let g = ImageGrid::new(2, 2, 1, vec![0.1, 0.7, 0.3, 0.9]).unwrap();
        assert_eq!(resize_bilinear(&g, 2, 2).unwrap(), g);
    }

    #[test]
    fn two_by_two_checkerboard_upsampled() {
        // Half-pixel centres: output coordinate d maps to (d + 0.5)/2 - 0.5,
        // i.e. -0.25, 0.25, 0.75, 1.25 clamped to [0, 1] -> 0, .25, .75, 1.
        let g = ImageGrid::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&g, 4, 4).unwrap();
        let t = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let (fy, fx) = (t[y], t[x]);
                let expect = (1.0 - fy) * fx + fy * (1.0 - fx);
                assert!((r.get(0, y, x) - expect).abs() < 1e-12);
            }
        }
        assert!((r.get(0, 0, 1) - 0.25).abs() < 1e-12);
        assert!((r.get(0, 1, 1) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn zero_target_rejected() {
        let g = ImageGrid::filled(2, 2, 1, 0.5).unwrap();
        assert!(resize_bilinear(&g, 0, 3).is_err());
    }

    #[test]
    fn adjoint_matches_inner_product() {
        // <R x, y> == <x, R^T y>
        let (h, w, nh, nw) = (5, 4, 3, 7);
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let y: Vec<f64> = (0..nh * nw).map(|i| ((i * 13) % 7) as f64 / 7.0 - 0.5).collect();
        let rx = resize_plane(&x, h, w, nh, nw);
        let rty = resize_plane_adjoint(&y, h, w, nh, nw);
        let a: f64 = rx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let b: f64 = x.iter().zip(&rty).map(|(a, b)| a * b).sum();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn nearest_preserves_label_set() {
        let src = [0u8, 128, 255, 0];
        let out = resize_nearest_labels(&src, 2, 2, 5, 3);
        assert!(out.iter().all(|v| src.contains(v)));
        assert_eq!(resize_nearest_labels(&src, 2, 2, 2, 2), src.to_vec());
    }
}
