//! Image containers and the small set of per-pixel utilities every other
//! module builds on.
//!
//! All grids are stored planar: the whole of channel 0 in row-major order,
//! then channel 1, and so on.

pub(crate) mod color;
mod filter;
mod resample;

pub use color::rgb_to_lab;
pub use filter::{avg_pool, box_filter, box_filter_adjoint, spatial_gradients, GradientField};
pub use resample::{
    resize_bilinear, resize_nearest_labels, resize_plane, resize_plane_adjoint, Taps,
};

use crate::error::{Error, Result};

/// Label value for pixels without annotation.
pub const UNKNOWN: u8 = 0;
/// Label value for foreground scribble pixels.
pub const FOREGROUND: u8 = 1;
/// Label value for background scribble pixels.
pub const BACKGROUND: u8 = 2;

/// Multi-channel floating image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    /// Build a grid from planar data, validating length and range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::dim(format!(
                "empty image {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "data length {} != {height}*{width}*{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Range(format!("image value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constructor for data already known to be in range.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Replicate a single-channel plane into three identical channels.
    pub fn gray_to_rgb(gray: &[f64], height: usize, width: usize) -> Result<Self> {
        if gray.len() != height * width {
            return Err(Error::dim("gray plane length mismatch"));
        }
        let mut data = Vec::with_capacity(gray.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(gray);
        }
        Self::new(height, width, 3, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Colour of pixel `i` (row-major index) as a fixed array; channels past
    /// the third are ignored and missing ones repeat channel 0.
    #[inline]
    pub fn rgb_at(&self, i: usize) -> [f64; 3] {
        let n = self.pixels();
        let c = |k: usize| self.data[k.min(self.channels - 1) * n + i];
        [c(0), c(1), c(2)]
    }

    pub fn same_dims<T: Dims>(&self, other: &T) -> bool {
        self.height == other.height() && self.width == other.width()
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.data.clone();
        transform_planes(&self.data, &mut out, self.height, self.width, self.channels, |y, x| {
            (y, self.width - 1 - x)
        });
        Self::from_raw(self.height, self.width, self.channels, out)
    }

    /// Rotate by 90 degrees counter-clockwise `quarter_turns` times. Only
    /// square images are supported.
    pub fn rotate90(&self, quarter_turns: usize) -> Result<Self> {
        let data = rotate_planes(&self.data, self.height, self.width, self.channels, quarter_turns)?;
        Ok(Self::from_raw(self.height, self.width, self.channels, data))
    }
}

/// Per-pixel ternary scribble annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ScribbleMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "scribble length {} != {height}*{width}",
                labels.len()
            )));
        }
        if let Some(v) = labels.iter().find(|&&v| v > BACKGROUND) {
            return Err(Error::Range(format!("scribble label {v} not in {{0,1,2}}")));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn unknown(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![UNKNOWN; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn set(&mut self, i: usize, label: u8) {
        assert!(label <= BACKGROUND, "invalid scribble label {label}");
        self.labels[i] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.labels.clone();
        transform_planes(&self.labels, &mut out, self.height, self.width, 1, |y, x| {
            (y, self.width - 1 - x)
        });
        Self {
            labels: out,
            ..*self
        }
    }

    pub fn rotate90(&self, quarter_turns: usize) -> Result<Self> {
        let labels = rotate_planes(&self.labels, self.height, self.width, 1, quarter_turns)?;
        Ok(Self { labels, ..*self })
    }
}

/// Per-pixel score in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("empty saliency map"));
        }
        if values.len() != height * width {
            return Err(Error::dim(format!(
                "map length {} != {height}*{width}",
                values.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::Range(format!("saliency value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    /// Build from arbitrary finite values by clamping into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(
            height,
            width,
            values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// View as a one-channel image.
    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid::from_raw(self.height, self.width, 1, self.values.clone())
    }

    /// Threshold into a `{0,1}` map (`v >= threshold` is foreground).
    pub fn binarize(&self, threshold: f64) -> SaliencyMap {
        let v = self
            .values
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect();
        Self::from_raw(self.height, self.width, v)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.values.clone();
        transform_planes(&self.values, &mut out, self.height, self.width, 1, |y, x| {
            (y, self.width - 1 - x)
        });
        Self::from_raw(self.height, self.width, out)
    }

    pub fn rotate90(&self, quarter_turns: usize) -> Result<Self> {
        let values = rotate_planes(&self.values, self.height, self.width, 1, quarter_turns)?;
        Ok(Self::from_raw(self.height, self.width, values))
    }
}

/// Anything with a pixel extent.
pub trait Dims {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
}

macro_rules! impl_dims {
    ($($t:ty),*) => {$(
        impl Dims for $t {
            fn height(&self) -> usize { self.height }
            fn width(&self) -> usize { self.width }
        }
    )*};
}
impl_dims!(ImageGrid, ScribbleMap, SaliencyMap);

pub(crate) fn check_same_dims(a: &impl Dims, b: &impl Dims, what: &str) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::dim(format!(
            "{what}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// out[c][y][x] = src[c][map(y, x)]
fn transform_planes<T: Copy>(
    src: &[T],
    out: &mut [T],
    h: usize,
    w: usize,
    channels: usize,
    map: impl Fn(usize, usize) -> (usize, usize),
) {
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = map(y, x);
                out[base + y * w + x] = src[base + sy * w + sx];
            }
        }
    }
}

fn rotate_planes<T: Copy>(
    src: &[T],
    h: usize,
    w: usize,
    channels: usize,
    quarter_turns: usize,
) -> Result<Vec<T>> {
    let turns = quarter_turns % 4;
    if turns == 0 {
        return Ok(src.to_vec());
    }
    if h != w {
        return Err(Error::dim("rotate90 requires a square grid"));
    }
    let n = h;
    let mut out = src.to_vec();
    // counter-clockwise: out[y][x] = src[x][n-1-y]
    transform_planes(src, &mut out, n, n, channels, |y, x| match turns {
        1 => (x, n - 1 - y),
        2 => (n - 1 - y, n - 1 - x),
        _ => (n - 1 - x, y),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(ImageGrid::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageGrid::new(1, 2, 1, vec![0.5]).is_err());
        assert!(ImageGrid::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn scribble_rejects_invalid_label() {
        assert!(ScribbleMap::new(1, 2, vec![0, 3]).is_err());
        assert!(ScribbleMap::new(1, 2, vec![1, 2]).is_ok());
    }

    #[test]
    fn planar_layout() {
        let g = ImageGrid::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(g.get(1, 0, 1), 0.4);
        assert_eq!(g.rgb_at(1), [0.2, 0.4, 0.6]);
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let m = SaliencyMap::new(3, 3, (0..9).map(|v| v as f64 / 8.0).collect()).unwrap();
        let r = m.rotate90(1).unwrap();
        assert_ne!(r, m);
        // top-left of a CCW rotation is the old top-right
        assert_eq!(r.get(0, 0), m.get(0, 2));
        assert_eq!(r.rotate90(3).unwrap(), m);
        assert_eq!(m.flip_horizontal().flip_horizontal(), m);
    }
}
