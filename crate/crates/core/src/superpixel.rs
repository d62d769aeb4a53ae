//! SLIC superpixels on CIELAB colour plus position.
//!
//! Centres start on a regular grid with spacing `S = sqrt(HW / k)`, are
//! nudged to the lowest-gradient pixel of their 3x3 neighbourhood, and are
//! refined by localized k-means: each centre competes only for pixels
//! within `S` of it on both axes, under
//! `D = sqrt(d_lab^2 + (d_xy / S)^2 * m^2)`. A final pass merges 4-connected
//! fragments smaller than `S^2 / 4` into their largest neighbour so every
//! label is one connected region.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::color::{srgb_to_lab, unscale_lab};
use crate::grid::{rgb_to_lab, ImageGrid, SaliencyMap};
use crate::par;

/// Per-pixel superpixel ids in `0..count`; every id occurs at least once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl SuperpixelMap {
    /// Build from raw labels. Ids must be dense: every value in `0..max+1`
    /// must occur.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::dim("superpixel label length mismatch"));
        }
        let count = *labels.iter().max().unwrap() as usize + 1;
        let mut seen = vec![false; count];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Range(format!("superpixel id {missing} unused")));
        }
        Ok(Self {
            height,
            width,
            labels,
            count,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of superpixels `T`.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Pixel counts per id.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &l in &self.labels {
            s[l as usize] += 1;
        }
        s
    }

    /// True when every id's pixel set is a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        let comps = components(&self.labels, self.height, self.width);
        comps.count == self.count
    }
}

impl crate::grid::Dims for SuperpixelMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
}

/// A cluster centre: unscaled Lab colour and continuous pixel position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub lab: [f64; 3],
    pub y: f64,
    pub x: f64,
}

/// SLIC tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub superpixels: usize,
    pub compactness: f64,
    pub iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            superpixels: 40,
            compactness: 10.0,
            iters: 10,
        }
    }
}

/// Unscaled Lab per pixel, reconstructed from the scaled grid.
fn lab_pixels(img: &ImageGrid) -> Result<Vec<[f64; 3]>> {
    let lab = rgb_to_lab(img)?;
    Ok((0..lab.pixels()).map(|i| unscale_lab(lab.rgb_at(i))).collect())
}

#[inline]
fn lab_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (d0, d1, d2) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    d0 * d0 + d1 * d1 + d2 * d2
}

/// Grid seeding: `ny` rows of centres from `H / S`, `nx` columns chosen so
/// that `nx * ny` is as close to `k` as the rows allow.
pub fn grid_centers(lab: &[[f64; 3]], h: usize, w: usize, k: usize) -> (Vec<Center>, f64) {
    let s = ((h * w) as f64 / k as f64).sqrt();
    let ny = ((h as f64 / s).round() as usize).clamp(1, h);
    let nx = ((k as f64 / ny as f64).round() as usize).clamp(1, w);
    let (sy, sx) = (h as f64 / ny as f64, w as f64 / nx as f64);
    let grad = |y: usize, x: usize| {
        let at = |yy: isize, xx: isize| {
            let yy = yy.clamp(0, h as isize - 1) as usize;
            let xx = xx.clamp(0, w as isize - 1) as usize;
            &lab[yy * w + xx]
        };
        let (yi, xi) = (y as isize, x as isize);
        lab_dist2(at(yi, xi + 1), at(yi, xi - 1)) + lab_dist2(at(yi + 1, xi), at(yi - 1, xi))
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cy = (j as f64 + 0.5) * sy - 0.5;
            let cx = (i as f64 + 0.5) * sx - 0.5;
            let py = (cy.round() as usize).min(h - 1);
            let px = (cx.round() as usize).min(w - 1);
            let g0 = grad(py, px);
            let mut best = (g0, py, px);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (yy, xx) = (py as isize + dy, px as isize + dx);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    let g = grad(yy as usize, xx as usize);
                    if g < best.0 {
                        best = (g, yy as usize, xx as usize);
                    }
                }
            }
            let (y, x) = if best.0 < g0 {
                (best.1 as f64, best.2 as f64)
            } else {
                (cy, cx)
            };
            centers.push(Center {
                lab: lab[best.1 * w + best.2],
                y,
                x,
            });
        }
    }
    (centers, s)
}

/// One SLIC assignment step. Each pixel takes the nearest centre among those
/// whose `2S x 2S` window contains it; lowest id wins ties. A pixel outside
/// every window falls back to the globally nearest centre.
pub fn assign_labels(
    lab: &[[f64; 3]],
    h: usize,
    w: usize,
    centers: &[Center],
    spacing: f64,
    compactness: f64,
) -> Vec<u32> {
    let spatial = (compactness / spacing).powi(2);
    let dist = |c: &Center, y: f64, x: f64, p: &[f64; 3]| {
        let (dy, dx) = (y - c.y, x - c.x);
        lab_dist2(p, &c.lab) + (dy * dy + dx * dx) * spatial
    };
    par::map_range(h * w, |i| {
        let (y, x) = ((i / w) as f64, (i % w) as f64);
        let p = &lab[i];
        let mut best: Option<(f64, usize)> = None;
        for (id, c) in centers.iter().enumerate() {
            if (y - c.y).abs() > spacing || (x - c.x).abs() > spacing {
                continue;
            }
            let d = dist(c, y, x, p);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        let id = match best {
            Some((_, id)) => id,
            None => {
                let mut b = (f64::INFINITY, 0);
                for (id, c) in centers.iter().enumerate() {
                    let d = dist(c, y, x, p);
                    if d < b.0 {
                        b = (d, id);
                    }
                }
                b.1
            }
        };
        id as u32
    })
}

fn update_centers(lab: &[[f64; 3]], w: usize, labels: &[u32], centers: &mut [Center]) {
    let mut acc = vec![[0.0f64; 6]; centers.len()];
    for (i, &l) in labels.iter().enumerate() {
        let a = &mut acc[l as usize];
        a[0] += lab[i][0];
        a[1] += lab[i][1];
        a[2] += lab[i][2];
        a[3] += (i / w) as f64;
        a[4] += (i % w) as f64;
        a[5] += 1.0;
    }
    for (c, a) in centers.iter_mut().zip(&acc) {
        if a[5] > 0.0 {
            let n = a[5];
            *c = Center {
                lab: [a[0] / n, a[1] / n, a[2] / n],
                y: a[3] / n,
                x: a[4] / n,
            };
        }
    }
}

struct Components {
    ids: Vec<usize>,
    sizes: Vec<usize>,
    count: usize,
}

/// 4-connected components of equal labels, numbered in raster order.
fn components(labels: &[u32], h: usize, w: usize) -> Components {
    let mut ids = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if ids[start] != usize::MAX {
            continue;
        }
        let cid = sizes.len();
        let lab = labels[start];
        ids[start] = cid;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if ids[q] == usize::MAX && labels[q] == lab {
                    ids[q] = cid;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        sizes.push(size);
    }
    let count = sizes.len();
    Components { ids, sizes, count }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merge fragments smaller than `min_size` into their largest adjacent
/// neighbour, then renumber so ids are dense and in raster order of first
/// appearance. Every resulting id is one 4-connected region.
pub(crate) fn enforce_connectivity(labels: &[u32], h: usize, w: usize, min_size: f64) -> Vec<u32> {
    let comps = components(labels, h, w);
    let n = comps.count;
    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); n];
    for y in 0..h {
        for x in 0..w {
            let a = comps.ids[y * w + x];
            let mut link = |b: usize| {
                if a != b {
                    adjacent[a].push(b);
                    adjacent[b].push(a);
                }
            };
            if x + 1 < w {
                link(comps.ids[y * w + x + 1]);
            }
            if y + 1 < h {
                link(comps.ids[(y + 1) * w + x]);
            }
        }
    }
    for a in &mut adjacent {
        a.sort_unstable();
        a.dedup();
    }

    let mut parent: Vec<usize> = (0..n).collect();
    let mut group_size = comps.sizes.clone();
    for c in 0..n {
        if (comps.sizes[c] as f64) >= min_size {
            continue;
        }
        let g = find(&mut parent, c);
        if (group_size[g] as f64) >= min_size {
            continue;
        }
        let mut target: Option<usize> = None;
        for &nb in &adjacent[c] {
            let r = find(&mut parent, nb);
            if r == g {
                continue;
            }
            target = match target {
                Some(t) if group_size[t] > group_size[r] || (group_size[t] == group_size[r] && t < r) => {
                    Some(t)
                }
                _ => Some(r),
            };
        }
        if let Some(t) = target {
            parent[g] = t;
            group_size[t] += group_size[g];
        }
    }

    let mut new_id = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut out = Vec::with_capacity(h * w);
    for &cid in &comps.ids {
        let r = find(&mut parent, cid);
        if new_id[r] == u32::MAX {
            new_id[r] = next;
            next += 1;
        }
        out.push(new_id[r]);
    }
    out
}

fn count_ids(labels: &[u32]) -> usize {
    labels.iter().max().map_or(0, |&m| m as usize + 1)
}

/// Partition a 3-channel image into roughly `k` superpixels. If fragment
/// merging at `S^2 / 4` still leaves more than `2k` labels, the threshold is
/// doubled until it does not.
pub fn slic_segment(
    img: &ImageGrid,
    k: usize,
    compactness: f64,
    iters: usize,
) -> Result<SuperpixelMap> {
    let (h, w) = (img.height(), img.width());
    if k == 0 {
        return Err(Error::param("superpixel count must be at least 1"));
    }
    if k > h * w {
        return Err(Error::param(format!(
            "requested {k} superpixels for {} pixels",
            h * w
        )));
    }
    if iters == 0 {
        return Err(Error::param("SLIC needs at least one iteration"));
    }
    if !(compactness.is_finite() && compactness > 0.0) {
        return Err(Error::param(format!("compactness {compactness} must be > 0")));
    }
    if img.channels() != 3 {
        return Err(Error::dim("SLIC needs a 3-channel image"));
    }
    let lab = lab_pixels(img)?;
    let (mut centers, s) = grid_centers(&lab, h, w, k);
    let mut labels = Vec::new();
    for it in 0..iters {
        labels = assign_labels(&lab, h, w, &centers, s, compactness);
        if it + 1 < iters {
            update_centers(&lab, w, &labels, &mut centers);
        }
    }
    let mut min_size = s * s / 4.0;
    let mut labels = enforce_connectivity(&labels, h, w, min_size);
    // tiny superpixels on noisy input can leave far more fragments than k
    while count_ids(&labels) > 2 * k && min_size < (h * w) as f64 {
        min_size = (min_size * 2.0).max(2.0);
        labels = enforce_connectivity(&labels, h, w, min_size);
    }
    SuperpixelMap::from_labels(h, w, labels)
}

/// Binary mask of one superpixel.
pub fn superpixel_mask(seg: &SuperpixelMap, id: usize) -> Result<SaliencyMap> {
    if id >= seg.count {
        return Err(Error::Range(format!(
            "superpixel id {id} >= count {}",
            seg.count
        )));
    }
    let v = seg
        .labels
        .iter()
        .map(|&l| if l as usize == id { 1.0 } else { 0.0 })
        .collect();
    Ok(SaliencyMap::from_raw(seg.height, seg.width, v))
}

/// Unscaled Lab of an sRGB colour; exposed for oracles and tooling.
pub fn lab_of(rgb: [f64; 3]) -> [f64; 3] {
    srgb_to_lab(rgb)
}

/// Unscaled Lab planes of an image as used by the assignment step.
pub fn lab_image(img: &ImageGrid) -> Result<Vec<[f64; 3]>> {
    lab_pixels(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(h: usize, w: usize, rgb: [f64; 3]) -> ImageGrid {
        let mut d = Vec::new();
        for c in rgb {
            d.extend(std::iter::repeat_n(c, h * w));
        }
        ImageGrid::new(h, w, 3, d).unwrap()
    }

    #[test]
    fn single_cluster() {
        let seg = slic_segment(&uniform(5, 7, [0.2, 0.4, 0.6]), 1, 10.0, 3).unwrap();
        assert_eq!(seg.count(), 1);
        assert!(seg.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn uniform_8x8_gives_quadrants() {
        let seg = slic_segment(&uniform(8, 8, [0.5, 0.5, 0.5]), 4, 10.0, 10).unwrap();
        assert_eq!(seg.count(), 4);
        // oracle: nearest grid centre at (1.5|5.5, 1.5|5.5)
        for y in 0..8 {
            for x in 0..8 {
                let expect = (y / 4) * 2 + x / 4;
                assert_eq!(seg.labels()[y * 8 + x] as usize, expect, "({y},{x})");
            }
        }
        let m = superpixel_mask(&seg, 0).unwrap();
        assert_eq!(m.values().iter().filter(|&&v| v == 1.0).count(), 16);
    }

    #[test]
    fn red_blue_halves_do_not_straddle() {
        let (h, w) = (16, 16);
        let mut d = vec![0.0; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x < 8 {
                    d[i] = 1.0;
                } else {
                    d[2 * h * w + i] = 1.0;
                }
            }
        }
        let img = ImageGrid::new(h, w, 3, d).unwrap();
        let seg = slic_segment(&img, 4, 10.0, 10).unwrap();
        let mut side = vec![None; seg.count()];
        for y in 0..h {
            for x in 0..w {
                let l = seg.labels()[y * w + x] as usize;
                let s = x < 8;
                assert!(side[l].is_none_or(|v| v == s), "superpixel {l} straddles");
                side[l] = Some(s);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let img = uniform(2, 2, [0.1, 0.1, 0.1]);
        assert!(matches!(slic_segment(&img, 5, 10.0, 1), Err(Error::Parameter(_))));
        assert!(slic_segment(&img, 0, 10.0, 1).is_err());
        assert!(slic_segment(&img, 1, 10.0, 0).is_err());
        let seg = slic_segment(&img, 1, 10.0, 1).unwrap();
        assert!(matches!(superpixel_mask(&seg, 1), Err(Error::Range(_))));
    }

    #[test]
    fn connectivity_merges_fragments() {
        // label 0 with a detached single pixel of label 1 inside, and a
        // detached second piece of label 0
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 1, 1,
            0, 2, 1, 1,
            0, 0, 1, 0,
        ];
        let out = enforce_connectivity(&labels, 3, 4, 2.0);
        let seg = SuperpixelMap::from_labels(3, 4, out).unwrap();
        assert!(seg.is_connected());
        assert_eq!(seg.count(), 2);
    }
}
