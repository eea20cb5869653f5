//! Forward operators.
//!
//! Summation order inside conv2d is fixed (channel-major, then kernel rows,
//! then kernel columns) so the dense and block-sparse paths accumulate in the
//! same order and can be compared tightly.

use super::Tensor;
use crate::error::{Error, Result};

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if input + 2 * pad < kernel {
        return Err(Error::shape(
            "conv2d",
            format!("spatial extent {input} + 2*{pad} smaller than kernel {kernel}"),
        ));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Direct 2-D convolution over (N, C, H, W) with zero padding.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, cin, h, w) = input.dim4()?;
    let (cout, wcin, kh, kw) = weights.dim4()?;
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("input has {cin} channels, weights expect {wcin}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?}, expected [{cout}]", bias.shape()),
        ));
    }
    let oh = conv_out_extent(h, kh, stride, pad)?;
    let ow = conv_out_extent(w, kw, stride, pad)?;

    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let idata = input.data();
    let wdata = weights.data();
    let bdata = bias.data();
    let odata = out.data_mut();
    for b in 0..n {
        for co in 0..cout {
            let bias_v = bdata[co];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias_v;
                    for ci in 0..cin {
                        let iplane = (b * cin + ci) * h * w;
                        let wplane = (co * cin + ci) * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let irow = iplane + iy as usize * w;
                            let wrow = wplane + ky * kw;
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += idata[irow + ix as usize] * wdata[wrow + kx as usize];
                            }
                        }
                    }
                    odata[((b * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out.ensure_finite("conv2d")?;
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = a.clone();
    for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    Ok(out)
}

/// 2x2 max pool, stride 2. Extents must be even.
pub fn max_pool2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dim4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("max_pool2", format!("odd extents {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(input.at4(b, ci, oy * 2 + dy, ox * 2 + dx));
                        }
                    }
                    out.set4(b, ci, oy, ox, m);
                }
            }
        }
    }
    Ok(out)
}

/// 2x2 average pool, stride 2. Extents must be even.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dim4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("avg_pool2", format!("odd extents {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += input.at4(b, ci, oy * 2 + dy, ox * 2 + dx);
                        }
                    }
                    out.set4(b, ci, oy, ox, s * 0.25);
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn adaptive_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = i * input / output;
    let hi = ((i + 1) * input + output - 1) / output;
    (lo, hi.max(lo + 1))
}

/// Adaptive average pool to an arbitrary output extent.
pub fn adaptive_avg_pool(input: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dim4()?;
    if oh == 0 || ow == 0 {
        return Err(Error::shape("adaptive_avg_pool", "zero output extent"));
    }
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1) = adaptive_bounds(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = adaptive_bounds(ox, w, ow);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            s += input.at4(b, ci, y, x);
                        }
                    }
                    out.set4(b, ci, oy, ox, s / ((y1 - y0) * (x1 - x0)) as f32);
                }
            }
        }
    }
    Ok(out)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    adaptive_avg_pool(input, 1, 1)
}

/// Nearest-neighbour 2x upsample.
pub fn upsample_nearest2(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dim4()?;
    let mut out = Tensor::zeros(&[n, c, h * 2, w * 2]);
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..h * 2 {
                for ox in 0..w * 2 {
                    out.set4(b, ci, oy, ox, input.at4(b, ci, oy / 2, ox / 2));
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear 2x upsample (half-pixel centres, clamped borders).
///
/// `halo` marks how many rows/columns of the input are padding copied from
/// neighbouring blocks: the output covers only the interior, so an input of
/// extent `e` yields `(e - 2*halo) * 2`. With `halo == 0` this is the plain
/// dense operator.
pub fn upsample_bilinear2(input: &Tensor, halo: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dim4()?;
    if h <= 2 * halo || w <= 2 * halo {
        return Err(Error::shape(
            "upsample_bilinear2",
            format!("extent {h}x{w} too small for halo {halo}"),
        ));
    }
    let (oh, ow) = ((h - 2 * halo) * 2, (w - 2 * halo) * 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = |o: usize| -> (usize, usize, f32) {
        // Source coordinate in input space, including the halo offset.
        let s = (o as f32 + 0.5) / 2.0 - 0.5 + halo as f32;
        let lo = s.floor();
        let t = s - lo;
        (lo.max(0.0) as usize, (lo + 1.0).max(0.0) as usize, t)
    };
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1, ty) = src(oy);
                let (y0, y1) = (y0.min(h - 1), y1.min(h - 1));
                for ox in 0..ow {
                    let (x0, x1, tx) = src(ox);
                    let (x0, x1) = (x0.min(w - 1), x1.min(w - 1));
                    let v00 = input.at4(b, ci, y0, x0);
                    let v01 = input.at4(b, ci, y0, x1);
                    let v10 = input.at4(b, ci, y1, x0);
                    let v11 = input.at4(b, ci, y1, x1);
                    let top = v00 + (v01 - v00) * tx;
                    let bot = v10 + (v11 - v10) * tx;
                    out.set4(b, ci, oy, ox, top + (bot - top) * ty);
                }
            }
        }
    }
    Ok(out)
}

/// Zero-pad channels up to `cout` (parameter-free shortcut widening).
pub fn pad_channels(input: &Tensor, cout: usize) -> Result<Tensor> {
    let (n, c, h, w) = input.dim4()?;
    if cout < c {
        return Err(Error::shape(
            "pad_channels",
            format!("cannot shrink {c} -> {cout}"),
        ));
    }
    let mut out = Tensor::zeros(&[n, cout, h, w]);
    for b in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set4(b, ci, y, x, input.at4(b, ci, y, x));
                }
            }
        }
    }
    Ok(out)
}
