//! Hand-written backward passes for the operators used by policy training.
//!
//! Every function takes the forward inputs it needs plus the gradient of the
//! loss with respect to the forward output, and returns gradients with
//! respect to inputs (and weights where applicable). All of them are checked
//! against central finite differences in the tests.

use super::ops::{adaptive_bounds, conv_out_extent};
use super::Tensor;
use crate::error::{Error, Result};

/// Gradients of conv2d: (d input, d weights, d bias).
pub fn conv2d_grad(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, cin, h, w) = input.dim4()?;
    let (cout, wcin, kh, kw) = weights.dim4()?;
    if wcin != cin {
        return Err(Error::shape(
            "conv2d_grad",
            format!("input has {cin} channels, weights expect {wcin}"),
        ));
    }
    let oh = conv_out_extent(h, kh, stride, pad)?;
    let ow = conv_out_extent(w, kw, stride, pad)?;
    if grad_out.shape() != [n, cout, oh, ow] {
        return Err(Error::shape(
            "conv2d_grad",
            format!(
                "grad_out shape {:?}, expected {:?}",
                grad_out.shape(),
                [n, cout, oh, ow]
            ),
        ));
    }

    let mut gin = Tensor::zeros(&[n, cin, h, w]);
    let mut gw = Tensor::zeros(&[cout, cin, kh, kw]);
    let mut gb = Tensor::zeros(&[cout]);
    let idata = input.data();
    let wdata = weights.data();
    let godata = grad_out.data();
    {
        let gbd = gb.data_mut();
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        gbd[co] += godata[((b * cout + co) * oh + oy) * ow + ox];
                    }
                }
            }
        }
    }
    let gind = gin.data_mut();
    let gwd = gw.data_mut();
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = godata[((b * cout + co) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
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
                                gind[irow + ix as usize] += g * wdata[wrow + kx];
                                gwd[wrow + kx] += g * idata[irow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gin, gw, gb))
}

/// ReLU backward from the pre-activation input.
pub fn relu_grad(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_grad",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let mut gin = grad_out.clone();
    for (g, x) in gin.data_mut().iter_mut().zip(input.data()) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(gin)
}

/// Sigmoid backward from the forward output.
pub fn sigmoid_grad_from_output(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(
            "sigmoid_grad",
            format!("{:?} vs {:?}", output.shape(), grad_out.shape()),
        ));
    }
    let mut gin = grad_out.clone();
    for (g, y) in gin.data_mut().iter_mut().zip(output.data()) {
        *g *= y * (1.0 - y);
    }
    Ok(gin)
}

/// Max-pool 2x2 backward; the argmax is recomputed with the same scan order
/// as the forward pass (first maximal element wins ties).
pub fn max_pool2_grad(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dim4()?;
    if grad_out.shape() != [n, c, h / 2, w / 2] {
        return Err(Error::shape(
            "max_pool2_grad",
            format!("grad_out {:?} for input {:?}", grad_out.shape(), input.shape()),
        ));
    }
    let mut gin = Tensor::zeros(&[n, c, h, w]);
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let mut best = f32::NEG_INFINITY;
                    let (mut by, mut bx) = (0, 0);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = input.at4(b, ci, oy * 2 + dy, ox * 2 + dx);
                            if v > best {
                                best = v;
                                by = oy * 2 + dy;
                                bx = ox * 2 + dx;
                            }
                        }
                    }
                    let g = grad_out.at4(b, ci, oy, ox);
                    gin.set4(b, ci, by, bx, gin.at4(b, ci, by, bx) + g);
                }
            }
        }
    }
    Ok(gin)
}

pub fn avg_pool2_grad(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gin = Tensor::zeros(input_shape);
    let (n, c, h, w) = gin.dim4()?;
    if grad_out.shape() != [n, c, h / 2, w / 2] {
        return Err(Error::shape(
            "avg_pool2_grad",
            format!("grad_out {:?} for input {:?}", grad_out.shape(), input_shape),
        ));
    }
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let g = grad_out.at4(b, ci, oy, ox) * 0.25;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (y, x) = (oy * 2 + dy, ox * 2 + dx);
                            gin.set4(b, ci, y, x, gin.at4(b, ci, y, x) + g);
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

pub fn adaptive_avg_pool_grad(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gin = Tensor::zeros(input_shape);
    let (n, c, h, w) = gin.dim4()?;
    let (gn, gc, oh, ow) = grad_out.dim4()?;
    if gn != n || gc != c {
        return Err(Error::shape(
            "adaptive_avg_pool_grad",
            format!("grad_out {:?} for input {:?}", grad_out.shape(), input_shape),
        ));
    }
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let (y0, y1) = adaptive_bounds(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1) = adaptive_bounds(ox, w, ow);
                    let g = grad_out.at4(b, ci, oy, ox) / ((y1 - y0) * (x1 - x0)) as f32;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            gin.set4(b, ci, y, x, gin.at4(b, ci, y, x) + g);
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

pub fn upsample_nearest2_grad(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gin = Tensor::zeros(input_shape);
    let (n, c, h, w) = gin.dim4()?;
    if grad_out.shape() != [n, c, h * 2, w * 2] {
        return Err(Error::shape(
            "upsample_nearest2_grad",
            format!("grad_out {:?} for input {:?}", grad_out.shape(), input_shape),
        ));
    }
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..h * 2 {
                for ox in 0..w * 2 {
                    let g = grad_out.at4(b, ci, oy, ox);
                    let (y, x) = (oy / 2, ox / 2);
                    gin.set4(b, ci, y, x, gin.at4(b, ci, y, x) + g);
                }
            }
        }
    }
    Ok(gin)
}

/// Bilinear 2x upsample backward (dense form, halo 0).
pub fn upsample_bilinear2_grad(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gin = Tensor::zeros(input_shape);
    let (n, c, h, w) = gin.dim4()?;
    if grad_out.shape() != [n, c, h * 2, w * 2] {
        return Err(Error::shape(
            "upsample_bilinear2_grad",
            format!("grad_out {:?} for input {:?}", grad_out.shape(), input_shape),
        ));
    }
    let src = |o: usize, extent: usize| -> (usize, usize, f32) {
        let s = (o as f32 + 0.5) / 2.0 - 0.5;
        let lo = s.floor();
        let t = s - lo;
        let a = lo.max(0.0) as usize;
        let b = (lo + 1.0).max(0.0) as usize;
        (a.min(extent - 1), b.min(extent - 1), t)
    };
    for b in 0..n {
        for ci in 0..c {
            for oy in 0..h * 2 {
                let (y0, y1, ty) = src(oy, h);
                for ox in 0..w * 2 {
                    let (x0, x1, tx) = src(ox, w);
                    let g = grad_out.at4(b, ci, oy, ox);
                    let mut bump = |y: usize, x: usize, wgt: f32| {
                        gin.set4(b, ci, y, x, gin.at4(b, ci, y, x) + g * wgt);
                    };
                    bump(y0, x0, (1.0 - ty) * (1.0 - tx));
                    bump(y0, x1, (1.0 - ty) * tx);
                    bump(y1, x0, ty * (1.0 - tx));
                    bump(y1, x1, ty * tx);
                }
            }
        }
    }
    Ok(gin)
}

/// Drop the gradient of zero-padded channels.
pub fn pad_channels_grad(cin: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = grad_out.dim4()?;
    if cin > c {
        return Err(Error::shape(
            "pad_channels_grad",
            format!("cin {cin} > padded {c}"),
        ));
    }
    let mut gin = Tensor::zeros(&[n, cin, h, w]);
    for b in 0..n {
        for ci in 0..cin {
            for y in 0..h {
                for x in 0..w {
                    gin.set4(b, ci, y, x, grad_out.at4(b, ci, y, x));
                }
            }
        }
    }
    Ok(gin)
}
