use crate::error::{Error, Result};
use crate::grid::{box_filter, box_filter_adjoint, resize_plane, resize_plane_adjoint, SaliencyMap};

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Scale-consistency loss and gradients for both predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SscLoss {
    pub value: f64,
    pub ssim: f64,
    pub l1: f64,
    pub grad_full: Vec<f64>,
    pub grad_scaled: Vec<f64>,
}

struct SsimParts {
    mean: f64,
    /// d(mean SSIM)/dA and d(mean SSIM)/dB
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

/// Mean SSIM over uniform `window x window` neighbourhoods (replicate
/// padding) with its gradient for both arguments.
fn ssim_with_grad(a: &[f64], b: &[f64], h: usize, w: usize, window: usize) -> SsimParts {
    let n = h * w;
    let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = box_filter(a, h, w, window);
    let mu_b = box_filter(b, h, w, window);
    let e_aa = box_filter(&sq(a), h, w, window);
    let e_bb = box_filter(&sq(b), h, w, window);
    let e_ab = box_filter(&ab, h, w, window);

    let mut total = 0.0;
    let mut g_mu_a = vec![0.0; n];
    let mut g_mu_b = vec![0.0; n];
    let mut g_aa = vec![0.0; n];
    let mut g_bb = vec![0.0; n];
    let mut g_ab = vec![0.0; n];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num1 = 2.0 * ma * mb + C1;
        let num2 = 2.0 * cov + C2;
        let den1 = ma * ma + mb * mb + C1;
        let den2 = va + vb + C2;
        let den = den1 * den2;
        let s = num1 * num2 / den;
        total += s;
        // partials of s through (mu, E[x^2], E[xy]); variances and covariance
        // depend on the means too
        g_mu_a[i] = inv_n * ((2.0 * mb * num2 - 2.0 * mb * num1) / den - s * (2.0 * ma / den1 - 2.0 * ma / den2));
        g_mu_b[i] = inv_n * ((2.0 * ma * num2 - 2.0 * ma * num1) / den - s * (2.0 * mb / den1 - 2.0 * mb / den2));
        g_aa[i] = -inv_n * s / den2;
        g_bb[i] = -inv_n * s / den2;
        g_ab[i] = inv_n * 2.0 * num1 / den;
    }
    let back_mu_a = box_filter_adjoint(&g_mu_a, h, w, window);
    let back_mu_b = box_filter_adjoint(&g_mu_b, h, w, window);
    let back_aa = box_filter_adjoint(&g_aa, h, w, window);
    let back_bb = box_filter_adjoint(&g_bb, h, w, window);
    let back_ab = box_filter_adjoint(&g_ab, h, w, window);
    let grad_a = (0..n)
        .map(|i| back_mu_a[i] + 2.0 * a[i] * back_aa[i] + b[i] * back_ab[i])
        .collect();
    let grad_b = (0..n)
        .map(|i| back_mu_b[i] + 2.0 * b[i] * back_bb[i] + a[i] * back_ab[i])
        .collect();
    SsimParts {
        mean: total * inv_n,
        grad_a,
        grad_b,
    }
}

/// Mean SSIM of two equally sized maps.
pub fn ssim_value(a: &SaliencyMap, b: &SaliencyMap, window: usize) -> Result<f64> {
    crate::grid::check_same_dims(a, b, "ssim")?;
    Ok(ssim_with_grad(a.values(), b.values(), a.height(), a.width(), window).mean)
}

/// Structure consistency between a prediction and the prediction made on a
/// rescaled input: the full-resolution map is resized to the scaled size,
/// then `lambda * (1 - SSIM) + (1 - lambda) * mean |A - B|`.
pub fn l_ssc(
    pred_full: &SaliencyMap,
    pred_scaled: &SaliencyMap,
    scale: f64,
    ssim_window: usize,
    lambda: f64,
) -> Result<SscLoss> {
    if ssim_window == 0 || ssim_window.is_multiple_of(2) {
        return Err(Error::param(format!("ssim window must be odd, got {ssim_window}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("ssc lambda {lambda} outside [0,1]")));
    }
    let (fh, fw) = (pred_full.height(), pred_full.width());
    let (h, w) = (pred_scaled.height(), pred_scaled.width());
    let expect = |d: usize| ((d as f64 * scale).round() as usize).max(1);
    if h != expect(fh) || w != expect(fw) {
        return Err(Error::dim(format!(
            "scaled prediction {h}x{w} does not match {fh}x{fw} at scale {scale}"
        )));
    }
    let a = resize_plane(pred_full.values(), fh, fw, h, w);
    let b = pred_scaled.values();
    let n = (h * w) as f64;
    let parts = ssim_with_grad(&a, b, h, w, ssim_window);
    let mut l1 = 0.0;
    let mut grad_a = Vec::with_capacity(a.len());
    let mut grad_b = Vec::with_capacity(a.len());
    for i in 0..a.len() {
        let d = a[i] - b[i];
        l1 += d.abs();
        let sgn = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad_a.push(-lambda * parts.grad_a[i] + (1.0 - lambda) * sgn / n);
        grad_b.push(-lambda * parts.grad_b[i] - (1.0 - lambda) * sgn / n);
    }
    l1 /= n;
    let value = lambda * (1.0 - parts.mean) + (1.0 - lambda) * l1;
    Ok(SscLoss {
        value,
        ssim: parts.mean,
        l1,
        grad_full: resize_plane_adjoint(&grad_a, fh, fw, h, w),
        grad_scaled: grad_b,
    })
}
