//! Saliency evaluation: S-measure, adaptive F-beta, E-measure and MAE.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{check_same_dims, SaliencyMap};

/// Guard added to denominators of the structure and alignment terms.
const GUARD: f64 = f64::EPSILON;
pub const BETA2: f64 = 0.3;

pub fn mae(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check_same_dims(pred, gt, "mae")?;
    let s: f64 = pred.values().iter().zip(gt.values()).map(|(p, g)| (p - g).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Adaptive threshold `min(1, 2·mean)`; zero scores never count as foreground.
pub fn adaptive_binarize(pred: &SaliencyMap) -> Vec<bool> {
    let tau = (2.0 * pred.mean()).min(1.0);
    pred.values().iter().map(|&p| p >= tau && p > 0.0).collect()
}

fn is_fg(g: f64) -> bool {
    g >= 0.5
}

pub fn f_beta(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check_same_dims(pred, gt, "f_beta")?;
    let bin = adaptive_binarize(pred);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&b, &g) in bin.iter().zip(gt.values()) {
        match (b, is_fg(g)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let (p, r) = (ratio(tp, fp), ratio(tp, fneg));
    let den = BETA2 * p + r;
    Ok(if den == 0.0 { 0.0 } else { (1.0 + BETA2) * p * r / den })
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + sd + GUARD)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let mu = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    let fg = pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p);
    let bg = pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p);
    mu * object_score(fg) + (1.0 - mu) * object_score(bg)
}

/// Structural similarity of one block with unbiased (N−1) moments.
fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.iter().sum::<f64>() / nf;
    let y = gt.iter().sum::<f64>() / nf;
    let d = (n.max(2) - 1) as f64;
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + GUARD)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let (mut cy, mut cx, mut count) = (0.0, 0.0, 0usize);
    for (i, _) in gt.iter().enumerate().filter(|(_, &g)| g) {
        cy += (i / w) as f64;
        cx += (i % w) as f64;
        count += 1;
    }
    let (x, y) = if count == 0 {
        ((w as f64 / 2.0).round_ties_even(), (h as f64 / 2.0).round_ties_even())
    } else {
        (
            (cx / count as f64).round_ties_even(),
            (cy / count as f64).round_ties_even(),
        )
    };
    // split point is one past the centroid, clipped to the image
    let x = (x as usize + 1).min(w);
    let y = (y as usize + 1).min(h);
    let area = (h * w) as f64;
    let block = |y0: usize, y1: usize, x0: usize, x1: usize| -> f64 {
        let mut p = Vec::with_capacity((y1 - y0) * (x1 - x0));
        let mut g = Vec::with_capacity(p.capacity());
        for yy in y0..y1 {
            for xx in x0..x1 {
                p.push(pred[yy * w + xx]);
                g.push(if gt[yy * w + xx] { 1.0 } else { 0.0 });
            }
        }
        let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
        if weight == 0.0 {
            0.0
        } else {
            weight * block_ssim(&p, &g)
        }
    };
    block(0, y, 0, x) + block(0, y, x, w) + block(y, h, 0, x) + block(y, h, x, w)
}

/// Structure measure with α = 0.5.
pub fn s_measure(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    s_measure_with(pred, gt, 0.5)
}

pub fn s_measure_with(pred: &SaliencyMap, gt: &SaliencyMap, alpha: f64) -> Result<f64> {
    check_same_dims(pred, gt, "s_measure")?;
    let g: Vec<bool> = gt.values().iter().map(|&v| is_fg(v)).collect();
    let mu = g.iter().filter(|&&v| v).count() as f64 / g.len() as f64;
    let s = if mu == 0.0 {
        1.0 - pred.mean()
    } else if mu == 1.0 {
        pred.mean()
    } else {
        alpha * s_object(pred.values(), &g) + (1.0 - alpha) * s_region(pred.values(), &g, gt.height(), gt.width())
    };
    Ok(s.clamp(0.0, 1.0))
}

/// Enhanced-alignment measure on the adaptively binarized prediction.
pub fn e_measure(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64> {
    check_same_dims(pred, gt, "e_measure")?;
    let bin = adaptive_binarize(pred);
    let n = bin.len() as f64;
    let g: Vec<f64> = gt.values().iter().map(|&v| if is_fg(v) { 1.0 } else { 0.0 }).collect();
    let b: Vec<f64> = bin.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let mg = g.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    if mg == 0.0 {
        return Ok(1.0 - mb);
    }
    if mg == 1.0 {
        return Ok(mb);
    }
    let mut acc = 0.0;
    for (gv, bv) in g.iter().zip(&b) {
        let (pg, pb) = (gv - mg, bv - mb);
        let xi = 2.0 * pg * pb / (pg * pg + pb * pb + GUARD);
        acc += (xi + 1.0) * (xi + 1.0) / 4.0;
    }
    Ok((acc / n).clamp(0.0, 1.0))
}

/// All four measures for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub s: f64,
    pub f: f64,
    pub e: f64,
    pub mae: f64,
}

pub fn score(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<Scores> {
    Ok(Scores {
        s: s_measure(pred, gt)?,
        f: f_beta(pred, gt)?,
        e: e_measure(pred, gt)?,
        mae: mae(pred, gt)?,
    })
}

/// Per-image rows and their arithmetic means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<(String, Scores)>,
    pub mean: Scores,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<(String, Scores)>) -> Self {
        let n = rows.len().max(1) as f64;
        let mut m = Scores {
            s: 0.0,
            f: 0.0,
            e: 0.0,
            mae: 0.0,
        };
        for (_, r) in &rows {
            m.s += r.s;
            m.f += r.f;
            m.e += r.e;
            m.mae += r.mae;
        }
        MetricsReport {
            mean: Scores {
                s: m.s / n,
                f: m.f / n,
                e: m.e / n,
                mae: m.mae / n,
            },
            rows,
        }
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "image\tS\tFbeta\tE\tMAE")?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, s: &Scores| {
            writeln!(f, "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", s.s, s.f, s.e, s.mae)
        };
        for (name, s) in &self.rows {
            row(f, name, s)?;
        }
        row(f, "mean", &self.mean)
    }
}

/// PNG files in `dir` keyed by stem, sorted.
pub fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Score every prediction in `pred_dir` against the same-stem mask in `gt_dir`.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let preds = png_stems(pred_dir)?;
    let gts = png_stems(gt_dir)?;
    for (stem, _) in &preds {
        if !gts.iter().any(|(g, _)| g == stem) {
            return Err(Error::data(stem, format!("no ground truth in {}", gt_dir.display())));
        }
    }
    for (stem, _) in &gts {
        if !preds.iter().any(|(p, _)| p == stem) {
            return Err(Error::data(stem, format!("no prediction in {}", pred_dir.display())));
        }
    }
    if preds.is_empty() {
        return Err(Error::data("<none>", format!("no PNG files in {}", pred_dir.display())));
    }
    let rows = crate::par::map_slice(&preds, |(stem, path)| -> Result<(String, Scores)> {
        let pred = crate::io::read_saliency(path)?;
        let gpath = &gts.iter().find(|(g, _)| g == stem).expect("checked above").1;
        let gt = crate::io::read_mask(gpath)?;
        let s = score(&pred, &gt).map_err(|e| Error::data(stem, e.to_string()))?;
        Ok((stem.clone(), s))
    });
    Ok(MetricsReport::from_rows(rows.into_iter().collect::<Result<_>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> SaliencyMap {
        SaliencyMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn mae_cases() {
        let gt = map(1, 4, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(mae(&gt, &gt).unwrap(), 0.0);
        let inv = map(1, 4, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(mae(&inv, &gt).unwrap(), 1.0);
        let z = SaliencyMap::filled(2, 2, 0.0).unwrap();
        assert_eq!(mae(&SaliencyMap::filled(2, 2, 0.25).unwrap(), &z).unwrap(), 0.25);
    }

    #[test]
    fn f_beta_half_case() {
        // 4 fg pixels in gt; prediction hits 2 of them and 2 background pixels
        let gt = map(2, 4, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let pred = map(2, 4, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(f_beta(&pred, &gt).unwrap(), 1.3 * 0.25 / 0.65);
        assert!((f_beta(&pred, &gt).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(f_beta(&gt, &gt).unwrap(), 1.0);
        assert_eq!(f_beta(&SaliencyMap::filled(2, 4, 0.0).unwrap(), &gt).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_ground_truth() {
        let z = SaliencyMap::filled(4, 4, 0.0).unwrap();
        assert_eq!(s_measure(&z, &z).unwrap(), 1.0);
        assert_eq!(e_measure(&z, &z).unwrap(), 1.0);
        let one = SaliencyMap::filled(4, 4, 1.0).unwrap();
        assert!((s_measure(&SaliencyMap::filled(4, 4, 0.3).unwrap(), &one).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted() {
        let mut v = vec![0.0; 64];
        for y in 2..6 {
            for x in 1..4 {
                v[y * 8 + x] = 1.0;
            }
        }
        let gt = map(8, 8, &v);
        assert!((s_measure(&gt, &gt).unwrap() - 1.0).abs() < 1e-6);
        assert!((e_measure(&gt, &gt).unwrap() - 1.0).abs() < 1e-6);
        let inv = map(8, 8, &v.iter().map(|x| 1.0 - x).collect::<Vec<_>>());
        assert!(e_measure(&inv, &gt).unwrap() < 1e-6);
        assert_eq!(mae(&inv, &gt).unwrap(), 1.0);
    }

    #[test]
    fn binarized_metrics_ignore_order_preserving_rescale() {
        let gt = map(2, 4, &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let p = map(2, 4, &[0.01, 0.95, 0.03, 0.02, 0.0, 0.97, 0.9, 0.01]);
        for f in [|v: f64| v.sqrt(), |v: f64| 0.5 * v + 0.1 * v * v] {
            let q = map(2, 4, &p.values().iter().map(|&v| f(v)).collect::<Vec<_>>());
            assert_eq!(adaptive_binarize(&p), adaptive_binarize(&q));
            assert_eq!(f_beta(&p, &gt).unwrap(), f_beta(&q, &gt).unwrap());
            assert_eq!(e_measure(&p, &gt).unwrap(), e_measure(&q, &gt).unwrap());
        }
    }

    #[test]
    fn report_layout() {
        let s = Scores {
            s: 1.0,
            f: 0.5,
            e: 0.25,
            mae: 0.0,
        };
        let r = MetricsReport::from_rows(vec![("a".into(), s), ("b".into(), Scores { s: 0.0, ..s })]);
        assert_eq!(r.mean.s, 0.5);
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean\t0.500000"));
    }
}
