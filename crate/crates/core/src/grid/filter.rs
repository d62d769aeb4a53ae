use super::{ImageGrid, SaliencyMap};
use crate::error::{Error, Result};

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Mean over a `k x k` window with replicate padding, applied to a
/// row-major plane. Separable: rows, then columns.
pub fn box_filter(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let norm = 1.0 / k as f64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for o in -r..=r {
                s += row[clamp_idx(x as isize + o, w)];
            }
            tmp[y * w + x] = s * norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for o in -r..=r {
                s += tmp[clamp_idx(y as isize + o, h) * w + x];
            }
            out[y * w + x] = s * norm;
        }
    }
    out
}

/// Transpose of [`box_filter`].
pub fn box_filter_adjoint(grad: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let norm = 1.0 / k as f64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x] * norm;
            for o in -r..=r {
                tmp[clamp_idx(y as isize + o, h) * w + x] += g;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x] * norm;
            for o in -r..=r {
                out[y * w + clamp_idx(x as isize + o, w)] += g;
            }
        }
    }
    out
}

/// Mean of each pixel's `k x k` neighbourhood, replicate padding, same size.
pub fn avg_pool(map: &SaliencyMap, k: usize) -> Result<SaliencyMap> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::param(format!("avg_pool window must be odd, got {k}")));
    }
    if k == 1 {
        return Ok(map.clone());
    }
    let v = box_filter(map.values(), map.height(), map.width(), k);
    Ok(SaliencyMap::from_raw(
        map.height(),
        map.width(),
        v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect(),
    ))
}

/// Forward differences along x and y; the last column (row) is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

/// `dx[i,j] = img[i,j+1] - img[i,j]`, `dy[i,j] = img[i+1,j] - img[i,j]`.
/// With more than one channel, the result is the mean absolute per-channel
/// difference.
pub fn spatial_gradients(img: &ImageGrid) -> GradientField {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for c in 0..ch {
        let p = img.channel(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let gx = if x + 1 < w { p[i + 1] - p[i] } else { 0.0 };
                let gy = if y + 1 < h { p[i + w] - p[i] } else { 0.0 };
                if ch == 1 {
                    dx[i] = gx;
                    dy[i] = gy;
                } else {
                    dx[i] += gx.abs();
                    dy[i] += gy.abs();
                }
            }
        }
    }
    if ch > 1 {
        let inv = 1.0 / ch as f64;
        dx.iter_mut().chain(dy.iter_mut()).for_each(|v| *v *= inv);
    }
    GradientField {
        height: h,
        width: w,
        dx,
        dy,
    }
}
