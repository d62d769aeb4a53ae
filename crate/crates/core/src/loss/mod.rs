//! Supervision terms with analytic gradients with respect to the
//! predictions they score.
//!
//! Every loss takes [`SaliencyMap`] predictions and returns the scalar value
//! together with `dL/dpred` per pixel. Log arguments are clamped to
//! `[EPS, 1 - EPS]`; pixels whose prediction falls outside that band get a
//! zero gradient from the log terms.

mod ssim;

pub use ssim::{l_ssc, ssim_value, SscLoss};

use crate::error::{Error, Result};
use crate::expand::ExpandedLabel;
use crate::grid::{
    avg_pool, check_same_dims, spatial_gradients, ImageGrid, SaliencyMap, ScribbleMap,
    BACKGROUND, FOREGROUND,
};
use crate::par;

/// Clamp applied to every log argument.
pub const EPS: f64 = 1e-6;
const CHARBONNIER: f64 = 1e-6;

/// A scalar loss and its gradient with respect to one prediction map.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    pub fn zero(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; n],
        }
    }
}

/// Local saliency coherence settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LscParams {
    pub window: usize,
    pub sigma_xy: f64,
    pub sigma_rgb: f64,
}

impl Default for LscParams {
    fn default() -> Self {
        Self {
            window: 5,
            sigma_xy: 3.0,
            sigma_rgb: 0.1,
        }
    }
}

/// Scale-consistency settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SscParams {
    pub scale: f64,
    pub ssim_window: usize,
    pub lambda: f64,
}

impl Default for SscParams {
    fn default() -> Self {
        Self {
            scale: 0.5,
            ssim_window: 11,
            lambda: 0.85,
        }
    }
}

/// Parameters of the four scribble terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScribbleParams {
    pub lsc: LscParams,
    pub smooth_alpha: f64,
    pub ssc: SscParams,
}

impl Default for ScribbleParams {
    fn default() -> Self {
        Self {
            lsc: LscParams::default(),
            smooth_alpha: 10.0,
            ssc: SscParams::default(),
        }
    }
}

#[inline]
fn clamp_p(p: f64) -> (f64, bool) {
    let c = p.clamp(EPS, 1.0 - EPS);
    (c, c == p)
}

/// Binary cross entropy of one pixel and its derivative in `p`.
#[inline]
fn bce(p: f64, t: f64) -> (f64, f64) {
    let (c, inside) = clamp_p(p);
    let v = -(t * c.ln() + (1.0 - t) * (1.0 - c).ln());
    let g = if inside { (c - t) / (c * (1.0 - c)) } else { 0.0 };
    (v, g)
}

/// Partial cross entropy over annotated pixels only.
pub fn l_pce(pred: &SaliencyMap, scribble: &ScribbleMap) -> Result<LossValue> {
    check_same_dims(pred, scribble, "l_pce")?;
    let n_ann = scribble
        .labels()
        .iter()
        .filter(|&&l| l == FOREGROUND || l == BACKGROUND)
        .count();
    let mut out = LossValue::zero(pred.len());
    if n_ann == 0 {
        return Ok(out);
    }
    let inv = 1.0 / n_ann as f64;
    for (i, (&p, &l)) in pred.values().iter().zip(scribble.labels()).enumerate() {
        let t = match l {
            FOREGROUND => 1.0,
            BACKGROUND => 0.0,
            _ => continue,
        };
        let (v, g) = bce(p, t);
        out.value += v;
        out.grad[i] = g * inv;
    }
    out.value *= inv;
    Ok(out)
}

/// Local saliency coherence: colour- and distance-weighted absolute
/// differences between each pixel and the others in its `k x k` window.
/// Window positions outside the image are skipped.
pub fn l_lsc(
    pred: &SaliencyMap,
    rgb: &ImageGrid,
    window: usize,
    sigma_xy: f64,
    sigma_rgb: f64,
) -> Result<LossValue> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::param(format!("lsc window must be odd, got {window}")));
    }
    if !(sigma_xy > 0.0 && sigma_rgb > 0.0) {
        return Err(Error::param("lsc sigmas must be > 0"));
    }
    check_same_dims(pred, rgb, "l_lsc")?;
    let (h, w) = (pred.height(), pred.width());
    let n = (h * w) as f64;
    let r = (window / 2) as isize;
    let inv_xy = 1.0 / (2.0 * sigma_xy * sigma_xy);
    let inv_rgb = 1.0 / (2.0 * sigma_rgb * sigma_rgb);
    let s = pred.values();
    let per_pixel: Vec<(f64, f64)> = par::map_range(h * w, |i| {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        let ci = rgb.rgb_at(i);
        let (mut v, mut g) = (0.0, 0.0);
        for dy in -r..=r {
            let yy = y + dy;
            if yy < 0 || yy >= h as isize {
                continue;
            }
            for dx in -r..=r {
                let xx = x + dx;
                if (dy == 0 && dx == 0) || xx < 0 || xx >= w as isize {
                    continue;
                }
                let j = yy as usize * w + xx as usize;
                let cj = rgb.rgb_at(j);
                let dc: f64 = (0..3).map(|c| (ci[c] - cj[c]).powi(2)).sum();
                let f = (-((dy * dy + dx * dx) as f64) * inv_xy - dc * inv_rgb).exp();
                let d = s[i] - s[j];
                v += f * d.abs();
                if d > 0.0 {
                    g += f;
                } else if d < 0.0 {
                    g -= f;
                }
            }
        }
        (v, g)
    });
    // each unordered pair is visited from both ends
    let value = per_pixel.iter().map(|p| p.0).sum::<f64>() / n;
    let grad = per_pixel.iter().map(|p| 2.0 * p.1 / n).collect();
    Ok(LossValue { value, grad })
}

/// Edge-aware smoothness: Charbonnier penalty on forward differences of the
/// prediction, down-weighted by `exp(-alpha * |dI|)` across image edges.
pub fn l_smooth(pred: &SaliencyMap, rgb: &ImageGrid, alpha: f64) -> Result<LossValue> {
    check_same_dims(pred, rgb, "l_smooth")?;
    let (h, w) = (pred.height(), pred.width());
    let n = (h * w) as f64;
    let edges = spatial_gradients(rgb);
    let sg = spatial_gradients(&pred.to_grid());
    let mut value = 0.0;
    let mut grad = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (u, e, next) in [
                (sg.dx[i], edges.dx[i].abs(), (x + 1 < w).then(|| i + 1)),
                (sg.dy[i], edges.dy[i].abs(), (y + 1 < h).then(|| i + w)),
            ] {
                let wt = (-alpha * e).exp();
                let t = (u * u * wt * wt + CHARBONNIER).sqrt();
                value += t;
                if let Some(j) = next {
                    let g = u * wt * wt / t / n;
                    grad[j] += g;
                    grad[i] -= g;
                }
            }
        }
    }
    Ok(LossValue {
        value: value / n,
        grad,
    })
}

/// The four scribble terms and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ScribbleLoss {
    pub pce: f64,
    pub lsc: f64,
    pub smooth: f64,
    pub ssc: f64,
    pub value: f64,
    /// Gradient with respect to the full-resolution prediction.
    pub grad: Vec<f64>,
    /// Gradient with respect to the prediction on the rescaled input.
    pub grad_scaled: Vec<f64>,
}

/// `L_pce + L_lsc + L_sl + L_ssc`.
pub fn l_scribble(
    pred: &SaliencyMap,
    scribble: &ScribbleMap,
    rgb: &ImageGrid,
    pred_scaled: &SaliencyMap,
    params: &ScribbleParams,
) -> Result<ScribbleLoss> {
    let pce = l_pce(pred, scribble)?;
    let lsc = l_lsc(
        pred,
        rgb,
        params.lsc.window,
        params.lsc.sigma_xy,
        params.lsc.sigma_rgb,
    )?;
    let sl = l_smooth(pred, rgb, params.smooth_alpha)?;
    let ssc = l_ssc(
        pred,
        pred_scaled,
        params.ssc.scale,
        params.ssc.ssim_window,
        params.ssc.lambda,
    )?;
    let grad = (0..pred.len())
        .map(|i| pce.grad[i] + lsc.grad[i] + sl.grad[i] + ssc.grad_full[i])
        .collect();
    Ok(ScribbleLoss {
        pce: pce.value,
        lsc: lsc.value,
        smooth: sl.value,
        ssc: ssc.value,
        value: pce.value + lsc.value + sl.value + ssc.value,
        grad,
        grad_scaled: ssc.grad_scaled,
    })
}

/// Cross entropy of a prediction head against its expanded label.
pub fn l_ce_expanded(pred: &SaliencyMap, expanded: &ExpandedLabel) -> Result<LossValue> {
    l_ce_target(pred, expanded.map())
}

fn l_ce_target(pred: &SaliencyMap, target: &SaliencyMap) -> Result<LossValue> {
    check_same_dims(pred, target, "l_ce_expanded")?;
    let inv = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| {
            let (v, g) = bce(p, t);
            value += v;
            g * inv
        })
        .collect();
    Ok(LossValue {
        value: value * inv,
        grad,
    })
}

/// Pixel-position-aware loss parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PpaLoss {
    pub wbce: f64,
    pub wiou: f64,
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Weighted BCE plus weighted IoU against a soft pseudo label. Weights
/// `1 + 5 |avg_pool(target, 15) - target|` emphasize boundaries.
pub fn l_ppa(pred: &SaliencyMap, pseudo: &SaliencyMap) -> Result<PpaLoss> {
    check_same_dims(pred, pseudo, "l_ppa")?;
    let pooled = avg_pool(pseudo, 15)?;
    let t = pseudo.values();
    let weights: Vec<f64> = pooled
        .values()
        .iter()
        .zip(t)
        .map(|(a, b)| 1.0 + 5.0 * (a - b).abs())
        .collect();
    let wsum: f64 = weights.iter().sum();
    let (mut wbce, mut inter, mut union) = (0.0, 0.0, 0.0);
    let mut bce_grad = Vec::with_capacity(t.len());
    for ((&p, &y), &wt) in pred.values().iter().zip(t).zip(&weights) {
        let (v, g) = bce(p, y);
        wbce += wt * v;
        bce_grad.push(g);
        inter += wt * y * p;
        union += wt * (y + p - y * p);
    }
    wbce /= wsum;
    let (num, den) = (inter + 1.0, union + 1.0);
    let wiou = 1.0 - num / den;
    let grad = (0..t.len())
        .map(|i| {
            let (wt, y) = (weights[i], t[i]);
            let d_inter = wt * y;
            let d_union = wt * (1.0 - y);
            wt * bce_grad[i] / wsum - (d_inter * den - num * d_union) / (den * den)
        })
        .collect();
    Ok(PpaLoss {
        wbce,
        wiou,
        value: wbce + wiou,
        grad,
    })
}

/// Named loss terms as logged per epoch; `None` marks a disabled term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub pce: f64,
    pub lsc: f64,
    pub smooth: f64,
    pub ssc: f64,
    pub ce_x: Option<f64>,
    pub ce_t: Option<f64>,
    pub ppa: Option<f64>,
    pub total: f64,
}

/// Inputs to the total loss. Missing optional terms are excluded.
#[derive(Debug, Clone, Copy)]
pub struct TotalParts<'a> {
    pub scribble: &'a ScribbleLoss,
    pub ce_x: Option<&'a LossValue>,
    pub ce_t: Option<&'a LossValue>,
    pub ppa: Option<&'a PpaLoss>,
}

/// Total loss with gradients routed to the tensors each term supervises.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub parts: LossParts,
    pub value: f64,
    /// `dL/dR` from the scribble terms and `L_ppa`.
    pub grad_r: Vec<f64>,
    /// `dL/dR` on the rescaled forward pass.
    pub grad_r_scaled: Vec<f64>,
    pub grad_px: Option<Vec<f64>>,
    pub grad_pt: Option<Vec<f64>>,
}

/// `L_scribble + L_ce^x + L_ce^t + L_ppa`, skipping absent terms.
pub fn l_total(parts: TotalParts<'_>) -> TotalLoss {
    let s = parts.scribble;
    let mut value = s.value;
    let mut grad_r = s.grad.clone();
    if let Some(p) = parts.ppa {
        value += p.value;
        grad_r.iter_mut().zip(&p.grad).for_each(|(a, b)| *a += b);
    }
    if let Some(c) = parts.ce_x {
        value += c.value;
    }
    if let Some(c) = parts.ce_t {
        value += c.value;
    }
    TotalLoss {
        parts: LossParts {
            pce: s.pce,
            lsc: s.lsc,
            smooth: s.smooth,
            ssc: s.ssc,
            ce_x: parts.ce_x.map(|c| c.value),
            ce_t: parts.ce_t.map(|c| c.value),
            ppa: parts.ppa.map(|p| p.value),
            total: value,
        },
        value,
        grad_r,
        grad_r_scaled: s.grad_scaled.clone(),
        grad_px: parts.ce_x.map(|c| c.grad.clone()),
        grad_pt: parts.ce_t.map(|c| c.grad.clone()),
    }
}

#[cfg(test)]
mod tests;
