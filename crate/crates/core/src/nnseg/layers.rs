//! Layer primitives for the 1-D segmentation network, each with its exact
//! backward pass.
//!
//! Activations are `[channels, rows, length]`: before the lead-collapse layer
//! the 12 leads live on the row axis and every convolution slides along time
//! only, sharing weights across rows; after the collapse the row axis has
//! size 1. "Same"-padding convolutions require odd kernels so padding is
//! symmetric; max pooling halves the time axis and remembers argmaxes for
//! backprop; transposed (deconvolution) layers lengthen it again.
//!
//! The public entry points ([`conv1d_same`], [`lead_collapse`], [`maxpool2`],
//! [`upsample_deconv`], [`concat_skip`]) validate shapes and accept the
//! rank-2 `[C, L]` form by treating it as `[C, 1, L]`.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Forward time-axis convolution with "same" zero padding.
///
/// `x`: `[C_in, R, L]`, `w`: `[C_out, C_in, K]` (K odd), `bias`: `[C_out]`.
/// Returns `[C_out, R, L]`.
pub(crate) fn conv_fwd(x: &Tensor, w: &Tensor, bias: &[f64]) -> Tensor {
    let (c_in, rows, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, k) = (w.dim(0), w.dim(2));
    let pad = k / 2;
    let mut y = Tensor::zeros(&[c_out, rows, len]);
    for o in 0..c_out {
        for r in 0..rows {
            let yrow = y.row_mut(o, r);
            yrow.fill(bias[o]);
        }
        for i in 0..c_in {
            let wrow = w.row(o, i);
            for (kk, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                // Valid t range keeps t + kk - pad inside [0, len).
                let lo = pad.saturating_sub(kk);
                let hi = (len + pad - kk).min(len);
                let shift = kk as isize - pad as isize;
                for r in 0..rows {
                    // Split borrows: x and y are distinct tensors.
                    let xrow = x.row(i, r);
                    let yrow = y.row_mut(o, r);
                    for t in lo..hi {
                        yrow[t] += wv * xrow[(t as isize + shift) as usize];
                    }
                }
            }
        }
    }
    y
}

/// Backward pass of [`conv_fwd`]: gradients w.r.t. input, weights, bias.
pub(crate) fn conv_bwd(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Vec<f64>) {
    let (c_in, rows, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, k) = (w.dim(0), w.dim(2));
    let pad = k / 2;
    let mut dx = Tensor::zeros(&[c_in, rows, len]);
    let mut dw = Tensor::zeros(&[c_out, c_in, k]);
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        for r in 0..rows {
            db[o] += dy.row(o, r).iter().sum::<f64>();
        }
        for i in 0..c_in {
            let wrow = w.row(o, i);
            for kk in 0..k {
                let lo = pad.saturating_sub(kk);
                let hi = (len + pad - kk).min(len);
                let shift = kk as isize - pad as isize;
                let wv = wrow[kk];
                let mut dwv = 0.0;
                for r in 0..rows {
                    let xrow = x.row(i, r);
                    let dyrow = dy.row(o, r);
                    let dxrow = dx.row_mut(i, r);
                    for t in lo..hi {
                        let xs = (t as isize + shift) as usize;
                        dwv += dyrow[t] * xrow[xs];
                        dxrow[xs] += wv * dyrow[t];
                    }
                }
                *dw.row_mut(o, i).get_mut(kk).unwrap() += dwv;
            }
        }
    }
    (dx, dw, db)
}

/// Forward lead-collapse: a 12×1 valid-padding convolution over the row axis.
///
/// `x`: `[F, 12, L]`, `w`: `[F', F, 12]`, `bias`: `[F']`. Returns `[F', 1, L]`.
pub(crate) fn collapse_fwd(x: &Tensor, w: &Tensor, bias: &[f64]) -> Tensor {
    let (f_in, rows, len) = (x.dim(0), x.dim(1), x.dim(2));
    let f_out = w.dim(0);
    let mut y = Tensor::zeros(&[f_out, 1, len]);
    for o in 0..f_out {
        let yrow = y.row_mut(o, 0);
        yrow.fill(bias[o]);
        for i in 0..f_in {
            let wrow = w.row(o, i);
            for r in 0..rows {
                let wv = wrow[r];
                if wv == 0.0 {
                    continue;
                }
                let xrow = x.row(i, r);
                let yrow = y.row_mut(o, 0);
                for t in 0..len {
                    yrow[t] += wv * xrow[t];
                }
            }
        }
    }
    y
}

/// Backward pass of [`collapse_fwd`].
pub(crate) fn collapse_bwd(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Vec<f64>) {
    let (f_in, rows, len) = (x.dim(0), x.dim(1), x.dim(2));
    let f_out = w.dim(0);
    let mut dx = Tensor::zeros(&[f_in, rows, len]);
    let mut dw = Tensor::zeros(&[f_out, f_in, rows]);
    let mut db = vec![0.0; f_out];
    for o in 0..f_out {
        let dyrow = dy.row(o, 0);
        db[o] += dyrow.iter().sum::<f64>();
        for i in 0..f_in {
            for r in 0..rows {
                let wv = w.row(o, i)[r];
                let xrow = x.row(i, r);
                let mut dwv = 0.0;
                {
                    let dyrow = dy.row(o, 0);
                    let dxrow = dx.row_mut(i, r);
                    for t in 0..len {
                        dwv += dyrow[t] * xrow[t];
                        dxrow[t] += wv * dyrow[t];
                    }
                }
                dw.row_mut(o, i)[r] += dwv;
            }
        }
    }
    (dx, dw, db)
}

/// Forward 2-wide max pool over time. Returns the pooled tensor and the
/// absolute source index chosen per output element (ties keep the earlier
/// element). Input length must be even.
pub(crate) fn pool2_fwd(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (c, rows, len) = (x.dim(0), x.dim(1), x.dim(2));
    let half = len / 2;
    let mut y = Tensor::zeros(&[c, rows, half]);
    let mut arg = vec![0u32; c * rows * half];
    let mut a = 0;
    for ch in 0..c {
        for r in 0..rows {
            let xrow = x.row(ch, r);
            let yrow = y.row_mut(ch, r);
            for u in 0..half {
                let (l0, l1) = (2 * u, 2 * u + 1);
                if xrow[l1] > xrow[l0] {
                    yrow[u] = xrow[l1];
                    arg[a] = l1 as u32;
                } else {
                    yrow[u] = xrow[l0];
                    arg[a] = l0 as u32;
                }
                a += 1;
            }
        }
    }
    (y, arg)
}

/// Backward pass of [`pool2_fwd`]: routes each gradient to its argmax source.
pub(crate) fn pool2_bwd(dy: &Tensor, arg: &[u32], in_len: usize) -> Tensor {
    let (c, rows, half) = (dy.dim(0), dy.dim(1), dy.dim(2));
    let mut dx = Tensor::zeros(&[c, rows, in_len]);
    let mut a = 0;
    for ch in 0..c {
        for r in 0..rows {
            let dyrow = dy.row(ch, r);
            let dxrow = dx.row_mut(ch, r);
            for u in 0..half {
                dxrow[arg[a] as usize] += dyrow[u];
                a += 1;
            }
        }
    }
    dx
}

/// Forward transposed convolution along time with the given stride.
///
/// `x`: `[C_in, R, L]`, `w`: `[C_in, C_out, K]`, `bias`: `[C_out]`.
/// Returns `[C_out, R, (L-1)*stride + K]`.
pub(crate) fn deconv_fwd(x: &Tensor, w: &Tensor, bias: &[f64], stride: usize) -> Tensor {
    let (c_in, rows, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, k) = (w.dim(1), w.dim(2));
    let out_len = (len - 1) * stride + k;
    let mut y = Tensor::zeros(&[c_out, rows, out_len]);
    for o in 0..c_out {
        for r in 0..rows {
            y.row_mut(o, r).fill(bias[o]);
        }
        for i in 0..c_in {
            let wrow = w.row(i, o);
            for (kk, &wv) in wrow.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                for r in 0..rows {
                    let xrow = x.row(i, r);
                    let yrow = y.row_mut(o, r);
                    for t in 0..len {
                        yrow[t * stride + kk] += wv * xrow[t];
                    }
                }
            }
        }
    }
    y
}

/// Backward pass of [`deconv_fwd`].
pub(crate) fn deconv_bwd(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
) -> (Tensor, Tensor, Vec<f64>) {
    let (c_in, rows, len) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, k) = (w.dim(1), w.dim(2));
    let mut dx = Tensor::zeros(&[c_in, rows, len]);
    let mut dw = Tensor::zeros(&[c_in, c_out, k]);
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        for r in 0..rows {
            db[o] += dy.row(o, r).iter().sum::<f64>();
        }
        for i in 0..c_in {
            let wrow = w.row(i, o);
            for kk in 0..k {
                let wv = wrow[kk];
                let mut dwv = 0.0;
                for r in 0..rows {
                    let xrow = x.row(i, r);
                    let dyrow = dy.row(o, r);
                    let dxrow = dx.row_mut(i, r);
                    for t in 0..len {
                        let dv = dyrow[t * stride + kk];
                        dwv += xrow[t] * dv;
                        dxrow[t] += wv * dv;
                    }
                }
                dw.row_mut(i, o)[kk] += dwv;
            }
        }
    }
    (dx, dw, db)
}

/// Forward channel concatenation, skip channels first.
pub(crate) fn concat_fwd(skip: &Tensor, up: &Tensor) -> Tensor {
    let (ca, rows, len) = (skip.dim(0), skip.dim(1), skip.dim(2));
    let cb = up.dim(0);
    let mut y = Tensor::zeros(&[ca + cb, rows, len]);
    for c in 0..ca {
        for r in 0..rows {
            y.row_mut(c, r).copy_from_slice(skip.row(c, r));
        }
    }
    for c in 0..cb {
        for r in 0..rows {
            y.row_mut(ca + c, r).copy_from_slice(up.row(c, r));
        }
    }
    y
}

/// Backward pass of [`concat_fwd`]: split the gradient back into the two
/// parents, skip part first.
pub(crate) fn concat_bwd(dy: &Tensor, skip_channels: usize) -> (Tensor, Tensor) {
    let (c, rows, len) = (dy.dim(0), dy.dim(1), dy.dim(2));
    let cb = c - skip_channels;
    let mut dskip = Tensor::zeros(&[skip_channels, rows, len]);
    let mut dup = Tensor::zeros(&[cb, rows, len]);
    for ch in 0..skip_channels {
        for r in 0..rows {
            dskip.row_mut(ch, r).copy_from_slice(dy.row(ch, r));
        }
    }
    for ch in 0..cb {
        for r in 0..rows {
            dup.row_mut(ch, r).copy_from_slice(dy.row(skip_channels + ch, r));
        }
    }
    (dskip, dup)
}

/// In-place ReLU. The backward pass masks on the *post*-activation sign,
/// which equals the pre-activation sign test.
pub(crate) fn relu_inplace(x: &mut Tensor) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward pass through an in-place ReLU given the post-activation tensor.
pub(crate) fn relu_bwd_inplace(dy: &mut Tensor, post: &Tensor) {
    for (g, &a) in dy.data_mut().iter_mut().zip(post.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn as_rank3(x: &Tensor) -> Result<(Tensor, bool)> {
    match x.shape().len() {
        3 => Ok((x.clone(), false)),
        2 => Ok((
            Tensor::from_vec(&[x.dim(0), 1, x.dim(1)], x.data().to_vec())?,
            true,
        )),
        n => Err(Error::Mismatch(format!(
            "expected rank-2 or rank-3 activation, got rank {n}"
        ))),
    }
}

fn restore_rank(y: Tensor, squeeze: bool) -> Result<Tensor> {
    if squeeze {
        let shape = [y.dim(0), y.dim(2)];
        Tensor::from_vec(&shape, y.data().to_vec())
    } else {
        Ok(y)
    }
}

/// "Same"-padding 1-D convolution along time.
///
/// `input` is `[C_in, L]` or `[C_in, R, L]`; `kernels` is `[C_out, C_in, K]`
/// with odd `K`; `bias` has `C_out` entries. Output keeps the input's rank
/// and length.
pub fn conv1d_same(input: &Tensor, kernels: &Tensor, bias: &[f64]) -> Result<Tensor> {
    if kernels.shape().len() != 3 {
        return Err(Error::Mismatch(format!(
            "kernel must be [C_out, C_in, K], got shape {:?}",
            kernels.shape()
        )));
    }
    let k = kernels.dim(2);
    if k % 2 == 0 {
        return Err(Error::invalid(format!(
            "kernel length {k} must be odd for symmetric same padding"
        )));
    }
    let (x3, squeeze) = as_rank3(input)?;
    if kernels.dim(1) != x3.dim(0) {
        return Err(Error::Mismatch(format!(
            "kernel expects {} input channels, activation has {}",
            kernels.dim(1),
            x3.dim(0)
        )));
    }
    if bias.len() != kernels.dim(0) {
        return Err(Error::Mismatch(format!(
            "bias length {} vs {} output channels",
            bias.len(),
            kernels.dim(0)
        )));
    }
    restore_rank(conv_fwd(&x3, kernels, bias), squeeze)
}

/// Valid-padding 12×1 convolution collapsing the lead axis.
///
/// `input` is `[F, 12, L]`; `kernel` is `[F', F, 12]` or `[F', F, 12, 1]`;
/// returns `[F', 1, L]`.
pub fn lead_collapse(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor> {
    if input.shape().len() != 3 || input.dim(1) != 12 {
        return Err(Error::invalid(format!(
            "lead_collapse expects [F, 12, L] input, got shape {:?}",
            input.shape()
        )));
    }
    let kernel3 = match kernel.shape() {
        [f2, f, 12] => Tensor::from_vec(&[*f2, *f, 12], kernel.data().to_vec())?,
        [f2, f, 12, 1] => Tensor::from_vec(&[*f2, *f, 12], kernel.data().to_vec())?,
        other => {
            return Err(Error::Mismatch(format!(
                "lead_collapse kernel must be [F', F, 12(, 1)], got {other:?}"
            )))
        }
    };
    if kernel3.dim(1) != input.dim(0) {
        return Err(Error::Mismatch(format!(
            "kernel expects {} feature channels, activation has {}",
            kernel3.dim(1),
            input.dim(0)
        )));
    }
    if bias.len() != kernel3.dim(0) {
        return Err(Error::Mismatch(format!(
            "bias length {} vs {} output channels",
            bias.len(),
            kernel3.dim(0)
        )));
    }
    Ok(collapse_fwd(input, &kernel3, bias))
}

/// 2-wide max pool over time with argmax indices for backprop.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (x3, squeeze) = as_rank3(input)?;
    if x3.dim(2) % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2 requires an even length, got {}",
            x3.dim(2)
        )));
    }
    let (y, arg) = pool2_fwd(&x3);
    Ok((restore_rank(y, squeeze)?, arg))
}

/// Transposed convolution along time with the given stride.
///
/// `input` is `[C_in, L]` or `[C_in, R, L]`; `kernel` is `[C_in, C_out, K]`.
pub fn upsample_deconv(input: &Tensor, kernel: &Tensor, bias: &[f64], stride: usize) -> Result<Tensor> {
    if kernel.shape().len() != 3 {
        return Err(Error::Mismatch(format!(
            "deconv kernel must be [C_in, C_out, K], got shape {:?}",
            kernel.shape()
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("deconv stride must be ≥ 1"));
    }
    let (x3, squeeze) = as_rank3(input)?;
    if kernel.dim(0) != x3.dim(0) {
        return Err(Error::Mismatch(format!(
            "deconv kernel expects {} input channels, activation has {}",
            kernel.dim(0),
            x3.dim(0)
        )));
    }
    if bias.len() != kernel.dim(1) {
        return Err(Error::Mismatch(format!(
            "bias length {} vs {} output channels",
            bias.len(),
            kernel.dim(1)
        )));
    }
    restore_rank(deconv_fwd(&x3, kernel, bias, stride), squeeze)
}

/// Channel concatenation of a skip connection with an upsampled tensor; the
/// skip channels come first. Row and length dimensions must agree.
pub fn concat_skip(skip: &Tensor, up: &Tensor) -> Result<Tensor> {
    let (a3, squeeze_a) = as_rank3(skip)?;
    let (b3, squeeze_b) = as_rank3(up)?;
    if a3.dim(1) != b3.dim(1) || a3.dim(2) != b3.dim(2) {
        return Err(Error::Mismatch(format!(
            "concat_skip shape mismatch: {:?} vs {:?}",
            skip.shape(),
            up.shape()
        )));
    }
    restore_rank(concat_fwd(&a3, &b3), squeeze_a && squeeze_b)
}
