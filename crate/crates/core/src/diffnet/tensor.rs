use super::real::Real;
use crate::error::{Error, Result};

/// Dense N×C×H×W array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::dim(format!(
                "tensor {:?} needs {n} values, got {}",
                shape,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Single-sample tensor from a planar f64 buffer.
    pub fn from_planes(c: usize, h: usize, w: usize, planes: &[f64]) -> Result<Self> {
        Self::from_vec([1, c, h, w], planes.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Values of item `n` (all channels).
    pub fn item(&self, n: usize) -> &[T] {
        let s = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * s..(n + 1) * s]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Clamped source indices for a 3-tap window at stride `s`.
fn tap_table(input: usize, output: usize, stride: usize) -> Vec<[usize; 3]> {
    (0..output)
        .map(|o| {
            let c = (o * stride) as isize;
            let at = |d: isize| (c + d).clamp(0, input as isize - 1) as usize;
            [at(-1), at(0), at(1)]
        })
        .collect()
}

pub(crate) fn conv_out(size: usize, stride: usize) -> usize {
    size.div_ceil(stride)
}

/// Unfold one sample into a (C·9)×(Ho·Wo) patch matrix with replicate padding.
pub(crate) fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, stride: usize, col: &mut [T]) {
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let ys = tap_table(h, ho, stride);
    let xs = tap_table(w, wo, stride);
    let p = ho * wo;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ch * 9) + ky * 3 + kx) * p..][..p];
                for (oy, yt) in ys.iter().enumerate() {
                    let src = &plane[yt[ky] * w..];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for (d, xt) in dst.iter_mut().zip(&xs) {
                        *d = src[xt[kx]];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
pub(crate) fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, stride: usize, dx: &mut [T]) {
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let ys = tap_table(h, ho, stride);
    let xs = tap_table(w, wo, stride);
    let p = ho * wo;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ch * 9) + ky * 3 + kx) * p..][..p];
                for (oy, yt) in ys.iter().enumerate() {
                    let base = yt[ky] * w;
                    for (ox, xt) in xs.iter().enumerate() {
                        plane[base + xt[kx]] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// 3×3 convolution of `x` (N×Ci×H×W) with `weight` (Co×Ci×3×3) plus `bias` (Co).
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let [n, ci, h, w] = x.shape();
    let [co, wci, kh, kw] = weight.shape();
    if wci != ci || kh != 3 || kw != 3 {
        return Err(Error::dim(format!(
            "conv weight {:?} does not fit input {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    if bias.len() != co {
        return Err(Error::dim(format!("conv bias has {} values for {co} outputs", bias.len())));
    }
    if !(stride == 1 || stride == 2) {
        return Err(Error::param(format!("conv stride {stride} unsupported")));
    }
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let (k, p) = (ci * 9, ho * wo);
    let mut out = Tensor::zeros([n, co, ho, wo]);
    let mut col = vec![T::ZERO; k * p];
    for item in 0..n {
        im2col(x.item(item), ci, h, w, stride, &mut col);
        let y = &mut out.data[item * co * p..(item + 1) * co * p];
        for (oc, chunk) in y.chunks_mut(p).enumerate() {
            chunk.fill(bias.data[oc]);
        }
        T::gemm_raw(co, k, p, weight.data(), k, 1, &col, p, 1, T::ONE, y, p, 1);
    }
    Ok(out)
}

/// Gradients of [`conv2d`]. `dx` is skipped when `want_dx` is false.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    want_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, ci, h, w] = x.shape();
    let co = weight.shape()[0];
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let (k, p) = (ci * 9, ho * wo);
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros([1, co, 1, 1]);
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = vec![T::ZERO; k * p];
    let mut dcol = vec![T::ZERO; if want_dx { k * p } else { 0 }];
    for item in 0..n {
        let g = dy.item(item);
        for (oc, chunk) in g.chunks(p).enumerate() {
            let mut s = T::ZERO;
            for &v in chunk {
                s += v;
            }
            db.data[oc] += s;
        }
        im2col(x.item(item), ci, h, w, stride, &mut col);
        // dW += dY · colᵀ
        T::gemm_raw(co, p, k, g, p, 1, &col, 1, p, T::ONE, &mut dw.data, k, 1);
        if let Some(dx) = dx.as_mut() {
            // dcol = Wᵀ · dY
            T::gemm_raw(k, co, p, weight.data(), 1, k, g, p, 1, T::ZERO, &mut dcol, p, 1);
            let s = ci * h * w;
            col2im(&dcol, ci, h, w, stride, &mut dx.data[item * s..(item + 1) * s]);
        }
    }
    (dx, dw, db)
}

/// Half-pixel bilinear ×2 along a line of length `n`, replicate at the ends.
fn up2_line<T: Real>(src: &[T], dst: &mut [T], n: usize, stride_in: usize, stride_out: usize) {
    let q = T::from_f64(0.25);
    let tq = T::from_f64(0.75);
    for i in 0..n {
        let prev = src[i.saturating_sub(1) * stride_in];
        let next = src[(i + 1).min(n - 1) * stride_in];
        let cur = src[i * stride_in];
        dst[2 * i * stride_out] = q * prev + tq * cur;
        dst[(2 * i + 1) * stride_out] = tq * cur + q * next;
    }
}

fn up2_line_adjoint<T: Real>(g: &[T], dst: &mut [T], n: usize, stride_g: usize, stride_out: usize) {
    let q = T::from_f64(0.25);
    let tq = T::from_f64(0.75);
    for i in 0..n {
        let a = g[2 * i * stride_g];
        let b = g[(2 * i + 1) * stride_g];
        dst[i.saturating_sub(1) * stride_out] += q * a;
        dst[i * stride_out] += tq * a + tq * b;
        dst[(i + 1).min(n - 1) * stride_out] += q * b;
    }
}

/// Bilinear ×2 upsampling of every plane.
pub fn up2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    let mut rows = vec![T::ZERO; h * 2 * w];
    for plane in 0..n * c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            up2_line(&src[y * w..], &mut rows[y * 2 * w..], w, 1, 1);
        }
        let dst = &mut out.data[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for xx in 0..2 * w {
            up2_line(&rows[xx..], &mut dst[xx..], h, 2 * w, 2 * w);
        }
    }
    out
}

pub fn up2_backward<T: Real>(dy: &Tensor<T>, input_shape: [usize; 4]) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(input_shape);
    let mut rows = vec![T::ZERO; h * 2 * w];
    for plane in 0..n * c {
        let g = &dy.data[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        rows.fill(T::ZERO);
        for xx in 0..2 * w {
            up2_line_adjoint(&g[xx..], &mut rows[xx..], h, 2 * w, 2 * w);
        }
        let dst = &mut dx.data[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            up2_line_adjoint(&rows[y * 2 * w..], &mut dst[y * w..], w, 1, 1);
        }
    }
    dx
}

/// Concatenate along channels.
pub fn concat<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::dim(format!(
                "concat mismatch: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for item in 0..n {
        for p in parts {
            data.extend_from_slice(p.item(item));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Split a concatenated gradient back into per-part gradients.
pub fn concat_backward<T: Real>(dy: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let [n, _, h, w] = dy.shape();
    let mut outs: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(n * c * h * w)).collect();
    for item in 0..n {
        let src = dy.item(item);
        let mut off = 0;
        for (o, &c) in outs.iter_mut().zip(channels) {
            o.extend_from_slice(&src[off..off + c * h * w]);
            off += c * h * w;
        }
    }
    outs.into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor { shape: [n, c, h, w], data: d })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_center_kernel() {
        let x = Tensor::<f64>::from_vec([1, 1, 3, 4], (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let wt = Tensor::from_vec([1, 1, 3, 3], k).unwrap();
        let b = Tensor::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &wt, &b, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn stride_two_halves() {
        let x = Tensor::<f32>::zeros([2, 3, 8, 6]);
        let wt = Tensor::zeros([5, 3, 3, 3]);
        let b = Tensor::from_vec([1, 5, 1, 1], vec![0.5; 5]).unwrap();
        let y = conv2d(&x, &wt, &b, 2).unwrap();
        assert_eq!(y.shape(), [2, 5, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn up2_matches_resize() {
        let src: Vec<f64> = vec![0.0, 1.0, 1.0, 0.0, 0.5, 0.25];
        let x = Tensor::from_vec([1, 1, 2, 3], src.clone()).unwrap();
        let y = up2(&x);
        let expect = crate::grid::resize_plane(&src, 2, 3, 4, 6);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn up2_adjoint_inner_product() {
        let x = Tensor::from_vec([1, 2, 3, 2], (0..12).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let g = Tensor::from_vec([1, 2, 6, 4], (0..48).map(|v| (v as f64 * 0.11).cos()).collect()).unwrap();
        let lhs: f64 = up2(&x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(up2_backward(&g, x.shape()).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn concat_roundtrip() {
        let a = Tensor::from_vec([2, 1, 1, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 2], vec![5.0f64, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let parts = concat_backward(&c, &[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(concat(&[&a, &Tensor::zeros([2, 1, 2, 2])]).is_err());
    }
}
