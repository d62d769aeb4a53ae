//! Pixel-adaptive refinement (PAR) of averaged predictions.
//!
//! A row-stochastic affinity kernel is built from the RGB image: each pixel
//! sees itself plus its 8-neighbourhood at several dilations, weighted by
//! colour and spatial proximity. Refinement repeatedly replaces every pixel
//! by the kernel-weighted mean of its neighbours.
//!
//! Neighbours are stored sorted by `(dy, |dx|, dx)` and summed in mirror
//! pairs, which makes the kernel and the refinement exactly equivariant
//! under a horizontal flip of all inputs.

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, ImageGrid, SaliencyMap};
use crate::par;

/// How neighbourhoods that cross the image border are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Clamp coordinates into the image.
    Replicate,
    /// Wrap around (torus). Used to check mass conservation.
    Wrap,
}

/// PAR settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParParams {
    pub sigma_color: f64,
    pub sigma_pos: f64,
    pub dilations: Vec<usize>,
    pub iters: usize,
}

impl Default for ParParams {
    fn default() -> Self {
        Self {
            sigma_color: 0.1,
            sigma_pos: 6.0,
            dilations: vec![1, 2, 4, 8],
            iters: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    index: u32,
    weight: f64,
    /// First entry of a `(dy, |dx|)` group; a group holds one or two entries.
    group_start: bool,
}

/// Per-pixel neighbour lists with normalized weights (CSR layout).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityKernel {
    height: usize,
    width: usize,
    starts: Vec<usize>,
    entries: Vec<Entry>,
}

impl AffinityKernel {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(neighbour index, weight)` pairs of pixel `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries[self.starts[i]..self.starts[i + 1]]
            .iter()
            .map(|e| (e.index as usize, e.weight))
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.neighbors(i).map(|(_, w)| w).sum()
    }

    /// Sum `f(entry)` in the canonical mirror-paired order.
    #[inline]
    fn paired_sum(entries: &[Entry], f: impl Fn(&Entry) -> f64) -> f64 {
        let mut total = 0.0;
        let mut k = 0;
        while k < entries.len() {
            let mut g = f(&entries[k]);
            if k + 1 < entries.len() && !entries[k + 1].group_start {
                g += f(&entries[k + 1]);
                k += 1;
            }
            total += g;
            k += 1;
        }
        total
    }
}

fn validate(params: &ParParams) -> Result<()> {
    if !(params.sigma_color > 0.0 && params.sigma_color.is_finite()) {
        return Err(Error::param(format!(
            "sigma_color must be > 0, got {}",
            params.sigma_color
        )));
    }
    if !(params.sigma_pos > 0.0 && params.sigma_pos.is_finite()) {
        return Err(Error::param(format!(
            "sigma_pos must be > 0, got {}",
            params.sigma_pos
        )));
    }
    if params.dilations.is_empty() || params.dilations.contains(&0) {
        return Err(Error::param("dilations must be a nonempty list of positive integers"));
    }
    Ok(())
}

/// Build the refinement kernel from an RGB image with replicate borders.
pub fn build_par_kernel(
    rgb: &ImageGrid,
    sigma_color: f64,
    sigma_pos: f64,
    dilations: &[usize],
) -> Result<AffinityKernel> {
    build_par_kernel_with_border(rgb, sigma_color, sigma_pos, dilations, Border::Replicate)
}

pub fn build_par_kernel_with_border(
    rgb: &ImageGrid,
    sigma_color: f64,
    sigma_pos: f64,
    dilations: &[usize],
    border: Border,
) -> Result<AffinityKernel> {
    validate(&ParParams {
        sigma_color,
        sigma_pos,
        dilations: dilations.to_vec(),
        iters: 0,
    })?;
    let (h, w) = (rgb.height(), rgb.width());
    let inv_c = 1.0 / (2.0 * sigma_color * sigma_color);
    let inv_p = 1.0 / (2.0 * sigma_pos * sigma_pos);
    let mut offsets = vec![(0isize, 0isize)];
    for &d in dilations {
        let d = d as isize;
        for dy in [-d, 0, d] {
            for dx in [-d, 0, d] {
                if dy != 0 || dx != 0 {
                    offsets.push((dy, dx));
                }
            }
        }
    }

    let resolve = |y: usize, x: usize, dy: isize, dx: isize| -> (usize, isize, isize) {
        match border {
            Border::Replicate => {
                let ty = (y as isize + dy).clamp(0, h as isize - 1);
                let tx = (x as isize + dx).clamp(0, w as isize - 1);
                (ty as usize * w + tx as usize, ty - y as isize, tx - x as isize)
            }
            Border::Wrap => {
                let ty = (y as isize + dy).rem_euclid(h as isize);
                let tx = (x as isize + dx).rem_euclid(w as isize);
                // minimum-image displacement so the distance depends only on
                // the target pixel
                let wrap = |d: isize, n: isize| {
                    let m = d.rem_euclid(n);
                    if 2 * m > n {
                        m - n
                    } else {
                        m
                    }
                };
                let ry = wrap(ty - y as isize, h as isize);
                let rx = wrap(tx - x as isize, w as isize);
                (ty as usize * w + tx as usize, ry, rx)
            }
        }
    };

    let rows: Vec<Vec<Entry>> = par::map_range(h * w, |i| {
        let (y, x) = (i / w, i % w);
        let ci = rgb.rgb_at(i);
        let mut cand: Vec<(isize, isize, usize)> = offsets
            .iter()
            .map(|&(dy, dx)| {
                let (j, ry, rx) = resolve(y, x, dy, dx);
                (ry, rx, j)
            })
            .collect();
        cand.sort_by_key(|&(ry, rx, j)| (ry, rx.abs(), rx, j));
        cand.dedup_by_key(|c| c.2);
        // dedup_by_key only removes consecutive duplicates; the same target
        // always has the same displacement so duplicates are adjacent
        let raw: Vec<(isize, isize, usize, f64)> = cand
            .into_iter()
            .map(|(ry, rx, j)| {
                let cj = rgb.rgb_at(j);
                let dc: f64 = (0..3).map(|c| (ci[c] - cj[c]).powi(2)).sum();
                let dp = (ry * ry + rx * rx) as f64;
                (ry, rx, j, (-dc * inv_c - dp * inv_p).exp())
            })
            .collect();
        let mut entries: Vec<Entry> = raw
            .iter()
            .enumerate()
            .map(|(k, &(ry, rx, j, a))| Entry {
                index: j as u32,
                weight: a,
                group_start: k == 0 || {
                    let (py, px, _, _) = raw[k - 1];
                    !(py == ry && px.abs() == rx.abs())
                },
            })
            .collect();
        let total = AffinityKernel::paired_sum(&entries, |e| e.weight);
        for e in &mut entries {
            e.weight /= total;
        }
        entries
    });

    let mut starts = Vec::with_capacity(h * w + 1);
    let mut entries = Vec::new();
    starts.push(0);
    for r in rows {
        entries.extend(r);
        starts.push(entries.len());
    }
    Ok(AffinityKernel {
        height: h,
        width: w,
        starts,
        entries,
    })
}

/// Apply the kernel `iters` times. Each output pixel is clamped to the range
/// of the neighbour values it averaged, so constants are exact fixed points
/// and the output never leaves the input range.
pub fn par_refine(map: &SaliencyMap, kernel: &AffinityKernel, iters: usize) -> Result<SaliencyMap> {
    if map.height() != kernel.height || map.width() != kernel.width {
        return Err(Error::dim(format!(
            "kernel {}x{} vs map {}x{}",
            kernel.height,
            kernel.width,
            map.height(),
            map.width()
        )));
    }
    let mut cur = map.values().to_vec();
    for _ in 0..iters {
        let prev = cur;
        cur = par::map_range(prev.len(), |i| {
            let row = &kernel.entries[kernel.starts[i]..kernel.starts[i + 1]];
            let v = AffinityKernel::paired_sum(row, |e| e.weight * prev[e.index as usize]);
            let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                let s = prev[e.index as usize];
                (lo.min(s), hi.max(s))
            });
            v.clamp(lo, hi)
        });
    }
    Ok(SaliencyMap::from_raw(map.height(), map.width(), cur))
}

/// Average the two modality predictions and refine with a kernel built from
/// the RGB image only.
pub fn aggregate_pseudo_label(
    p_rgb: &SaliencyMap,
    p_thermal: &SaliencyMap,
    rgb: &ImageGrid,
    params: &ParParams,
) -> Result<SaliencyMap> {
    check_same_dims(p_rgb, p_thermal, "aggregate predictions")?;
    check_same_dims(p_rgb, rgb, "aggregate rgb")?;
    validate(params)?;
    let avg: Vec<f64> = p_rgb
        .values()
        .iter()
        .zip(p_thermal.values())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let avg = SaliencyMap::from_raw(p_rgb.height(), p_rgb.width(), avg);
    let kernel = build_par_kernel(rgb, params.sigma_color, params.sigma_pos, &params.dilations)?;
    par_refine(&avg, &kernel, params.iters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: f64) -> ImageGrid {
        ImageGrid::filled(h, w, 3, v).unwrap()
    }

    #[test]
    fn single_pixel_kernel() {
        let k = build_par_kernel(&gray(1, 1, 0.3), 0.1, 6.0, &[1, 2]).unwrap();
        let n: Vec<_> = k.neighbors(0).collect();
        assert_eq!(n, vec![(0, 1.0)]);
    }

    #[test]
    fn two_pixel_kernel_by_hand() {
        let k = build_par_kernel(&gray(1, 2, 0.5), 0.1, 1.0, &[1]).unwrap();
        let a = (-0.5f64).exp();
        let (ks, ko) = (1.0 / (1.0 + a), a / (1.0 + a));
        assert!((ks - 0.6225).abs() < 1e-4 && (ko - 0.3775).abs() < 1e-4);
        let n: Vec<_> = k.neighbors(0).collect();
        assert_eq!(n.len(), 2);
        for (j, w) in n {
            let e = if j == 0 { ks } else { ko };
            assert!((w - e).abs() < 1e-12);
        }
        let m = SaliencyMap::new(1, 2, vec![1.0, 0.0]).unwrap();
        let r = par_refine(&m, &k, 1).unwrap();
        assert!((r.values()[0] - ks).abs() < 1e-12);
        assert!((r.values()[1] - ko).abs() < 1e-12);
    }

    #[test]
    fn invalid_sigma() {
        assert!(matches!(
            build_par_kernel(&gray(2, 2, 0.1), 0.0, 1.0, &[1]),
            Err(Error::Parameter(_))
        ));
        assert!(build_par_kernel(&gray(2, 2, 0.1), 0.1, -1.0, &[1]).is_err());
    }

    #[test]
    fn constant_and_identity() {
        let k = build_par_kernel(&gray(5, 4, 0.2), 0.1, 6.0, &[1, 2, 4, 8]).unwrap();
        let c = SaliencyMap::filled(5, 4, 0.7).unwrap();
        assert_eq!(par_refine(&c, &k, 7).unwrap(), c);
        let m = SaliencyMap::new(5, 4, (0..20).map(|v| v as f64 / 19.0).collect()).unwrap();
        assert_eq!(par_refine(&m, &k, 0).unwrap(), m);
        assert!(par_refine(&SaliencyMap::filled(4, 4, 0.1).unwrap(), &k, 1).is_err());
    }

    #[test]
    fn aggregate_constants_and_hand_case() {
        let rgb = gray(3, 3, 0.4);
        let p = SaliencyMap::filled(3, 3, 0.4).unwrap();
        let y = aggregate_pseudo_label(&p, &p, &rgb, &ParParams::default()).unwrap();
        assert_eq!(y, p);
        let one = SaliencyMap::filled(3, 3, 1.0).unwrap();
        let zero = SaliencyMap::filled(3, 3, 0.0).unwrap();
        let y = aggregate_pseudo_label(&one, &zero, &rgb, &ParParams::default()).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.5));

        // 2x1 column: Px = [1, 0], Pt = [1, 1] -> avg [1, .5] -> one step
        let params = ParParams {
            sigma_color: 0.1,
            sigma_pos: 1.0,
            dilations: vec![1],
            iters: 1,
        };
        let px = SaliencyMap::new(2, 1, vec![1.0, 0.0]).unwrap();
        let pt = SaliencyMap::new(2, 1, vec![1.0, 1.0]).unwrap();
        let y = aggregate_pseudo_label(&px, &pt, &gray(2, 1, 0.6), &params).unwrap();
        let a = (-0.5f64).exp();
        let (ks, ko) = (1.0 / (1.0 + a), a / (1.0 + a));
        assert!((y.values()[0] - (ks + 0.5 * ko)).abs() < 1e-12);
        assert!((y.values()[1] - (ko + 0.5 * ks)).abs() < 1e-12);
    }

    #[test]
    fn wrap_kernel_preserves_mass_on_uniform_colour() {
        let (h, w) = (20, 20);
        let k = build_par_kernel_with_border(&gray(h, w, 0.5), 0.1, 6.0, &[1, 2, 4, 8], Border::Wrap)
            .unwrap();
        let vals: Vec<f64> = (0..h * w).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let m = SaliencyMap::new(h, w, vals).unwrap();
        let r = par_refine(&m, &k, 5).unwrap();
        assert!((r.mean() - m.mean()).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let a = SaliencyMap::filled(2, 2, 0.5).unwrap();
        let b = SaliencyMap::filled(2, 3, 0.5).unwrap();
        assert!(aggregate_pseudo_label(&a, &b, &gray(2, 2, 0.1), &ParParams::default()).is_err());
    }
}
