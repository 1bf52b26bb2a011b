//! Forward and backward kernels of the fixed layer set.

use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::rng::keyed_rng;

use super::{matmul, Scalar, Tensor};

/// Unrolls one `c x h x w` sample into `(c*k*k) x (h*w)` patch columns for
/// a stride-1, same-padded `k x k` kernel.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                // valid output x range: 0 <= x + kx - pad < w
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h || x_lo >= x_hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy - pad) * w..(sy - pad + 1) * w];
                    out_row[..x_lo].fill(T::zero());
                    out_row[x_hi..].fill(T::zero());
                    let s0 = x_lo + kx - pad;
                    out_row[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back into `dx`.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    dx.iter_mut().for_each(|v| *v = T::zero());
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + ky;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let s0 = x_lo + kx - pad;
                    let dst = &mut plane[(sy - pad) * w + s0..(sy - pad) * w + s0 + (x_hi - x_lo)];
                    for (d, &g) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin || kh != kw || kh % 2 == 0 {
        return Err(Error::shape(
            format!("[Cout, {cin}, k, k] with odd k"),
            weight.shape(),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape([cout], bias.shape()));
    }
    Ok((n, cin, h, w, cout, kh))
}

/// Stride-1 cross-correlation with zero "same" padding plus bias.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, cin, h, w, cout, k) = conv_dims(input, weight, bias)?;
    let hw = h * w;
    let kk = cin * k * k;
    let mut out = Tensor::zeros(vec![n, cout, h, w]);
    par::for_each_chunk_mut(&mut out.values, cout * hw, |i, dst| {
        let mut cols = vec![T::zero(); kk * hw];
        im2col(&input.values[i * cin * hw..(i + 1) * cin * hw], cin, h, w, k, &mut cols);
        matmul(cout, kk, hw, &weight.values, false, &cols, false, dst, false);
        for (co, plane) in dst.chunks_mut(hw).enumerate() {
            let b = bias.values[co];
            plane.iter_mut().for_each(|v| *v += b);
        }
    });
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`conv2d_forward`]. Per-sample weight gradients are
/// reduced in sample order regardless of threading.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (n, cin, h, w, cout, k) = conv_dims(input, weight, bias)?;
    if grad_out.shape() != [n, cout, h, w] {
        return Err(Error::shape([n, cout, h, w], grad_out.shape()));
    }
    let hw = h * w;
    let kk = cin * k * k;
    let per_sample = par::map_range(n, |i| {
        let mut cols = vec![T::zero(); kk * hw];
        im2col(&input.values[i * cin * hw..(i + 1) * cin * hw], cin, h, w, k, &mut cols);
        let go = &grad_out.values[i * cout * hw..(i + 1) * cout * hw];
        let mut dw = vec![T::zero(); cout * kk];
        matmul(cout, hw, kk, go, false, &cols, true, &mut dw, false);
        let db: Vec<T> = go.chunks(hw).map(|p| p.iter().copied().sum()).collect();
        let dx = need_input_grad.then(|| {
            matmul(kk, cout, hw, &weight.values, true, go, false, &mut cols, false);
            let mut dx = vec![T::zero(); cin * hw];
            col2im(&cols, cin, h, w, k, &mut dx);
            dx
        });
        (dx, dw, db)
    });

    let mut weight_grad = vec![T::zero(); cout * kk];
    let mut bias_grad = vec![T::zero(); cout];
    let mut input_grad = need_input_grad.then(|| Vec::with_capacity(n * cin * hw));
    for (dx, dw, db) in per_sample {
        weight_grad.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b);
        bias_grad.iter_mut().zip(&db).for_each(|(a, &b)| *a += b);
        if let (Some(all), Some(dx)) = (input_grad.as_mut(), dx) {
            all.extend(dx);
        }
    }
    Ok(ConvGrads {
        input: input_grad.map(|v| Tensor::new(vec![n, cin, h, w], v)).transpose()?,
        weight: weight_grad,
        bias: bias_grad,
    })
}

/// 2x2 stride-2 max pooling. Returns the pooled tensor and, per output,
/// the winning input offset within its channel plane. Ties go to the first
/// element in row-major window order.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("even H and W", input.shape()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let planes = input.values.chunks(h * w);
    for ((src, dst), idx) in planes.zip(out.values.chunks_mut(oh * ow)).zip(argmax.chunks_mut(oh * ow)) {
        for oy in 0..oh {
            let top = &src[2 * oy * w..(2 * oy + 1) * w];
            let bottom = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
            let idx_row = &mut idx[oy * ow..(oy + 1) * ow];
            let base = (2 * oy * w) as u32;
            for (ox, ((t, b), (d, i))) in top
                .chunks_exact(2)
                .zip(bottom.chunks_exact(2))
                .zip(dst_row.iter_mut().zip(idx_row.iter_mut()))
                .enumerate()
            {
                // row-major window order: t[0], t[1], b[0], b[1]
                let (mut best, mut off) = (t[0], 0u32);
                if t[1] > best {
                    best = t[1];
                    off = 1;
                }
                if b[0] > best {
                    best = b[0];
                    off = w as u32;
                }
                if b[1] > best {
                    best = b[1];
                    off = w as u32 + 1;
                }
                *d = best;
                *i = base + 2 * ox as u32 + off;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each pooled gradient to its argmax position.
pub fn maxpool2_backward<T: Scalar>(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let (_, _, h, w) = dx.dims4()?;
    let (_, _, oh, ow) = grad_out.dims4()?;
    if argmax.len() != grad_out.len() || oh * 2 != h || ow * 2 != w {
        return Err(Error::shape(input_shape, grad_out.shape()));
    }
    for ((plane, g), idx) in dx
        .values
        .chunks_mut(h * w)
        .zip(grad_out.values.chunks(oh * ow))
        .zip(argmax.chunks(oh * ow))
    {
        for (&gv, &i) in g.iter().zip(idx) {
            plane[i as usize] += gv;
        }
    }
    Ok(dx)
}

pub fn relu_inplace<T: Scalar>(values: &mut [T]) {
    for v in values {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the ReLU output was not positive (subgradient 0 at 0).
pub fn relu_backward_inplace<T: Scalar>(output: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// `y = x W^T + b` with `x: [N, in]`, `W: [out, in]`, `b: [out]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin) = x.dims2()?;
    let (fout, win) = weight.dims2()?;
    if win != fin || bias.shape() != [fout] {
        return Err(Error::shape([fout, fin], weight.shape()));
    }
    let mut y = Tensor::zeros(vec![n, fout]);
    matmul(n, fin, fout, &x.values, false, &weight.values, true, &mut y.values, false);
    for row in y.values.chunks_mut(fout) {
        row.iter_mut().zip(&bias.values).for_each(|(v, &b)| *v += b);
    }
    Ok(y)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (n, fin) = x.dims2()?;
    let (fout, _) = weight.dims2()?;
    if grad_out.shape() != [n, fout] {
        return Err(Error::shape([n, fout], grad_out.shape()));
    }
    let mut dw = vec![T::zero(); fout * fin];
    matmul(fout, n, fin, &grad_out.values, true, &x.values, false, &mut dw, false);
    let mut dx = Tensor::zeros(vec![n, fin]);
    matmul(n, fout, fin, &grad_out.values, false, &weight.values, false, &mut dx.values, false);
    let mut db = vec![T::zero(); fout];
    for row in grad_out.values.chunks(fout) {
        db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
    }
    Ok(LinearGrads { input: dx, weight: dw, bias: db })
}

/// Inverted-dropout multipliers for `keys.len()` samples of `width` units:
/// each entry is `0` with probability `p`, else `1 / (1 - p)`. Sample `i`
/// draws from the stream `(seed, keys[i])`.
pub fn dropout_mask<T: Scalar>(width: usize, p: f64, seed: u64, keys: &[u64]) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    let mut mask = Vec::with_capacity(width * keys.len());
    for &key in keys {
        let mut rng = keyed_rng(seed, &[key]);
        mask.extend((0..width).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }));
    }
    mask
}

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(z,0) - z*y + ln(1 + e^-|z|)`. Returns the summed loss divided by
/// `denom` and `d(loss)/dz = (sigmoid(z) - y) / denom`.
pub fn bce_with_logits_scaled<T: Scalar>(logits: &[T], labels: &[u8], denom: f64) -> (f64, Vec<T>) {
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z.f64();
            let y = f64::from(y);
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            T::of((sigmoid(z) - y) / denom)
        })
        .collect();
    (total / denom, grad)
}

pub fn bce_with_logits<T: Scalar>(logits: &[T], labels: &[u8]) -> (f64, Vec<T>) {
    bce_with_logits_scaled(logits, labels, logits.len() as f64)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let n = shape.iter().product();
        let mut rng = keyed_rng(seed, &[]);
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Tensor<f64>, eps: f64, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.values[i] += eps;
                let mut m = x.clone();
                m.values[i] -= eps;
                (f(&p) - f(&m)) / (2.0 * eps)
            })
            .collect()
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    /// Weighted sum so every output entry gets a distinct upstream gradient.
    fn probe(t: &Tensor<f64>, weights: &[f64]) -> f64 {
        t.values.iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_zero_weights() {
        let x = random(vec![2, 3, 4, 4], 1);
        let w = Tensor::zeros(vec![5, 3, 3, 3]);
        let b = Tensor::zeros(vec![5]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[2, 5, 4, 4]);
        assert!(y.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_ones_hand_result() {
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let w = Tensor::new(vec![1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let y = conv2d_forward(&x, &w, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(y.values, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_matches_direct_loops() {
        let x = random(vec![2, 2, 5, 4], 3);
        let w = random(vec![3, 2, 3, 3], 4);
        let b = random(vec![3], 5);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        for n in 0..2 {
            for co in 0..3 {
                for yy in 0..5i64 {
                    for xx in 0..4i64 {
                        let mut s = b.values[co];
                        for ci in 0..2 {
                            for ky in 0..3i64 {
                                for kx in 0..3i64 {
                                    let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                    if (0..5).contains(&sy) && (0..4).contains(&sx) {
                                        s += w.values[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize]
                                            * x.values[((n * 2 + ci) * 5 + sy as usize) * 4 + sx as usize];
                                    }
                                }
                            }
                        }
                        let got = y.values[((n * 3 + co) * 5 + yy as usize) * 4 + xx as usize];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_shape_errors() {
        let x = random(vec![1, 2, 4, 4], 1);
        let w = random(vec![3, 1, 3, 3], 2);
        assert!(matches!(conv2d_forward(&x, &w, &Tensor::zeros(vec![3])), Err(Error::Shape { .. })));
        let w = random(vec![3, 2, 3, 3], 2);
        assert!(conv2d_forward(&x, &w, &Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = random(vec![1, 1, 5, 5], 10);
        let w = random(vec![2, 1, 3, 3], 11);
        let b = random(vec![2], 12);
        let probe_w: Vec<f64> = random(vec![50], 13).values;
        let go = Tensor::new(vec![1, 2, 5, 5], probe_w.clone()).unwrap();
        let g = conv2d_backward(&x, &w, &b, &go, true).unwrap();
        let eps = 1e-6;
        let nx = numeric_grad(&x, eps, |x| probe(&conv2d_forward(x, &w, &b).unwrap(), &probe_w));
        let nw = numeric_grad(&w, eps, |w| probe(&conv2d_forward(&x, w, &b).unwrap(), &probe_w));
        let nb = numeric_grad(&b, eps, |b| probe(&conv2d_forward(&x, &w, b).unwrap(), &probe_w));
        assert!(max_rel(&g.input.unwrap().values, &nx) < 1e-6);
        assert!(max_rel(&g.weight, &nw) < 1e-6);
        assert!(max_rel(&g.bias, &nb) < 1e-6);
    }

    #[test]
    fn maxpool_window_and_ties() {
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2_forward(&x).unwrap();
        assert_eq!((y.values[0], idx[0]), (4.0, 3));
        let dx = maxpool2_backward(x.shape(), &idx, &Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap()).unwrap();
        assert_eq!(dx.values, vec![0.0, 0.0, 0.0, 2.5]);

        let c = Tensor::new(vec![1, 1, 2, 4], vec![0.5f64; 8]).unwrap();
        let (y, idx) = maxpool2_forward(&c).unwrap();
        assert_eq!(y.values, vec![0.5, 0.5]);
        assert_eq!(idx, vec![0, 2]);
        assert!(maxpool2_forward(&Tensor::<f64>::zeros(vec![1, 1, 3, 2])).is_err());
    }

    #[test]
    fn maxpool_backward_matches_finite_differences() {
        let x = random(vec![1, 1, 4, 4], 20);
        let probe_w = random(vec![4], 21).values;
        let (_, idx) = maxpool2_forward(&x).unwrap();
        let go = Tensor::new(vec![1, 1, 2, 2], probe_w.clone()).unwrap();
        let dx = maxpool2_backward(x.shape(), &idx, &go).unwrap();
        let nx = numeric_grad(&x, 1e-6, |x| probe(&maxpool2_forward(x).unwrap().0, &probe_w));
        let err = dx
            .values
            .iter()
            .zip(&nx)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
            .fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn relu_values() {
        let mut v = vec![-1.0f64, 2.0, 0.0];
        relu_inplace(&mut v);
        assert_eq!(v, vec![0.0, 2.0, 0.0]);
        let mut g = vec![1.0, 1.0, 1.0];
        relu_backward_inplace(&v, &mut g);
        assert_eq!(g, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn linear_hand_and_gradients() {
        let x = Tensor::new(vec![1, 3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let w = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, -1.0]).unwrap();
        assert_eq!(linear_forward(&x, &w, &b).unwrap().values, vec![1.5, 4.0]);

        let x = random(vec![3, 4], 30);
        let w = random(vec![2, 4], 31);
        let b = random(vec![2], 32);
        let pw = random(vec![6], 33).values;
        let go = Tensor::new(vec![3, 2], pw.clone()).unwrap();
        let g = linear_backward(&x, &w, &go).unwrap();
        let nx = numeric_grad(&x, 1e-6, |x| probe(&linear_forward(x, &w, &b).unwrap(), &pw));
        let nw = numeric_grad(&w, 1e-6, |w| probe(&linear_forward(&x, w, &b).unwrap(), &pw));
        assert!(max_rel(&g.input.values, &nx) < 1e-6);
        assert!(max_rel(&g.weight, &nw) < 1e-6);
        assert!(linear_forward(&x, &random(vec![2, 5], 1), &b).is_err());
    }

    #[test]
    fn dropout_expectation() {
        let keys: Vec<u64> = (0..10).collect();
        let mask: Vec<f64> = dropout_mask(1000, 0.5, 7, &keys);
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        let mean = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((mean - 1.0).abs() < 0.01 * 3.0, "{mean}");
        assert_eq!(mask, dropout_mask::<f64>(1000, 0.5, 7, &keys));
    }

    #[test]
    fn bce_values_and_gradient() {
        let (l, g) = bce_with_logits(&[0.0f64], &[1]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15);
        let (l, _) = bce_with_logits(&[30.0f64], &[1]);
        assert!(l < 1e-12 && l.is_finite());
        let (l, _) = bce_with_logits(&[-800.0f64, 800.0], &[0, 1]);
        assert!(l.is_finite() && l < 1e-12);

        let z = random(vec![6], 40);
        let labels = [0, 1, 1, 0, 1, 0];
        let (_, g) = bce_with_logits(&z.values, &labels);
        let nz = numeric_grad(&z, 1e-6, |z| bce_with_logits(&z.values, &labels).0);
        assert!(max_rel(&g, &nz) < 1e-6);
    }
}
