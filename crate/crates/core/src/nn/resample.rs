//! Spatial resampling and coordinate channels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Evenly spaced coordinate in `[-1, 1]`; a single-sample axis maps to `-1`.
fn coord<T: Scalar>(i: usize, n: usize) -> T {
    if n <= 1 {
        -T::one()
    } else {
        T::of(-1.0 + 2.0 * i as f64 / (n - 1) as f64)
    }
}

/// Appends a normalized x-coordinate channel then a y-coordinate channel.
pub fn coord_concat<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    let mut out = Vec::with_capacity(h * w * (c + 2));
    for (p, px) in x.data().chunks(c).enumerate() {
        out.extend_from_slice(px);
        out.push(coord(p % w, w));
        out.push(coord(p / w, h));
    }
    Ok(Tensor::from_parts(vec![h, w, c + 2], out))
}

/// Gradient of [`coord_concat`]: drops the two coordinate channels.
pub fn coord_concat_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, c2) = grad_out.dims3()?;
    if c2 < 3 {
        return Err(Error::invalid("coord_concat backward", "no feature channels"));
    }
    grad_out.slice(2, 0, c2 - 2)
}

/// Interpolation taps along one axis: `(i0, i1, frac)` per output index, using
/// half-pixel centers clamped to the edge.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of `h × w × c` to `out_h × out_w × c`.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "empty output size"));
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let xd = x.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ty {
        let (fy, gy) = (T::of(fy), T::of(1.0 - fy));
        for &(x0, x1, fx) in &tx {
            let (fx, gx) = (T::of(fx), T::of(1.0 - fx));
            let at = |y: usize, xx: usize, ch: usize| xd[(y * w + xx) * c + ch];
            for ch in 0..c {
                let v = gy * (gx * at(y0, x0, ch) + fx * at(y0, x1, ch))
                    + fy * (gx * at(y1, x0, ch) + fx * at(y1, x1, ch));
                out.push(v);
            }
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w, c], out))
}

/// Adjoint of [`bilinear_resize`] back to an `in_h × in_w` grid.
pub fn bilinear_resize_backward<T: Scalar>(grad_out: &Tensor<T>, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
    let (out_h, out_w, c) = grad_out.dims3()?;
    let ty = taps(in_h, out_h);
    let tx = taps(in_w, out_w);
    let gd = grad_out.data();
    let mut dx = vec![T::zero(); in_h * in_w * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let (fy, gy) = (T::of(fy), T::of(1.0 - fy));
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let (fx, gx) = (T::of(fx), T::of(1.0 - fx));
            let g = &gd[(oy * out_w + ox) * c..(oy * out_w + ox + 1) * c];
            for (y, wy) in [(y0, gy), (y1, fy)] {
                for (xx, wx) in [(x0, gx), (x1, fx)] {
                    let wgt = wy * wx;
                    let base = (y * in_w + xx) * c;
                    for ch in 0..c {
                        dx[base + ch] += wgt * g[ch];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![in_h, in_w, c], dx))
}

/// Doubles both spatial dimensions with bilinear interpolation.
pub fn bilinear_upsample_x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, _) = x.dims3()?;
    bilinear_resize(x, 2 * h, 2 * w)
}

/// 2×2 mean pooling with stride 2; both spatial dimensions must be even.
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid("avg_pool2", format!("odd spatial size {h}×{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let q = T::of(0.25);
    let xd = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for xx in 0..ow {
            for ch in 0..c {
                let at = |dy: usize, dx: usize| xd[((2 * y + dy) * w + 2 * xx + dx) * c + ch];
                out.push(q * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, c], out))
}

pub fn avg_pool2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (oh, ow, c) = grad_out.dims3()?;
    let (h, w) = (2 * oh, 2 * ow);
    let q = T::of(0.25);
    let gd = grad_out.data();
    let mut dx = vec![T::zero(); h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let src = ((y / 2) * ow + xx / 2) * c;
            let dst = (y * w + xx) * c;
            for ch in 0..c {
                dx[dst + ch] = q * gd[src + ch];
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c], dx))
}

/// Nearest-neighbour downsampling of an `H × W` mask, thresholded at 0.5 so
/// the result stays binary.
pub fn downsample_mask<T: Scalar>(mask: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = mask.dims2()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("downsample_mask", "empty output size"));
    }
    let half = T::of(0.5);
    let pick = |d: usize, n_in: usize, n_out: usize| (((2 * d + 1) * n_in) / (2 * n_out)).min(n_in - 1);
    Ok(Tensor::from_fn(&[out_h, out_w], |i| {
        let (y, x) = (pick(i / out_w, h, out_h), pick(i % out_w, w, out_w));
        if mask.data()[y * w + x] >= half {
            T::one()
        } else {
            T::zero()
        }
    }))
}
