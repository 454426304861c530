//! 3x3 convolution helpers over token matrices. Tokens are (H*W) x C with
//! pixel p = y*W + x; padding is always zero padding of 1.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub fn conv_out_side(side: usize, stride: usize) -> usize {
    // kernel 3, pad 1
    (side + 2 - 3) / stride + 1
}

fn check_layout<T: Scalar>(x: &Matrix<T>, h: usize, w: usize) -> Result<()> {
    if x.rows() != h * w {
        return Err(Error::invalid(
            "conv3x3",
            format!("{} tokens do not match {h}x{w} layout", x.rows()),
        ));
    }
    Ok(())
}

/// Gather the 3x3 neighborhood of every output pixel into a row:
/// (H'*W') x (9*C), column index = tap*C + channel, tap = (ky+1)*3 + (kx+1).
/// A full convolution is then `unfold3x3(x) * W` with W of shape (9*C) x C_out.
pub fn unfold3x3<T: Scalar>(
    x: &Matrix<T>,
    h: usize,
    w: usize,
    stride: usize,
) -> Result<Matrix<T>> {
    check_layout(x, h, w)?;
    let c = x.cols();
    let (oh, ow) = (conv_out_side(h, stride), conv_out_side(w, stride));
    let mut out = Matrix::zeros(oh * ow, 9 * c);
    for oy in 0..oh {
        for ox in 0..ow {
            let orow = oy * ow + ox;
            for tap in 0..9 {
                let (ky, kx) = (tap / 3, tap % 3);
                let iy = (oy * stride + ky) as isize - 1;
                let ix = (ox * stride + kx) as isize - 1;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    continue;
                }
                let src = x.row(iy as usize * w + ix as usize);
                for ch in 0..c {
                    out.set(orow, tap * c + ch, src[ch]);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of `unfold3x3`: scatter-add a (H'*W') x (9*C) gradient back onto
/// the (H*W) x C input layout.
pub fn unfold3x3_adjoint<T: Scalar>(
    g: &Matrix<T>,
    h: usize,
    w: usize,
    c: usize,
    stride: usize,
) -> Result<Matrix<T>> {
    let (oh, ow) = (conv_out_side(h, stride), conv_out_side(w, stride));
    if g.rows() != oh * ow || g.cols() != 9 * c {
        return Err(Error::shape("unfold3x3_adjoint", g.shape(), (oh * ow, 9 * c)));
    }
    let mut out = Matrix::zeros(h * w, c);
    for oy in 0..oh {
        for ox in 0..ow {
            let orow = oy * ow + ox;
            for tap in 0..9 {
                let (ky, kx) = (tap / 3, tap % 3);
                let iy = (oy * stride + ky) as isize - 1;
                let ix = (ox * stride + kx) as isize - 1;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    continue;
                }
                let irow = iy as usize * w + ix as usize;
                for ch in 0..c {
                    let v = out.get(irow, ch) + g.get(orow, tap * c + ch);
                    out.set(irow, ch, v);
                }
            }
        }
    }
    Ok(out)
}

/// Depthwise 3x3 convolution, stride 1: out[p, ch] = sum_tap x[nb(p,tap), ch] * w[tap, ch].
/// Weights are 9 x C.
pub fn depthwise_conv3x3<T: Scalar>(
    x: &Matrix<T>,
    weights: &Matrix<T>,
    h: usize,
    w: usize,
) -> Result<Matrix<T>> {
    check_layout(x, h, w)?;
    let c = x.cols();
    if weights.shape() != (9, c) {
        return Err(Error::shape("depthwise_conv3x3", weights.shape(), (9, c)));
    }
    let mut out = Matrix::zeros(h * w, c);
    for oy in 0..h {
        for ox in 0..w {
            let orow = oy * w + ox;
            for tap in 0..9 {
                let (ky, kx) = (tap / 3, tap % 3);
                let iy = oy as isize + ky as isize - 1;
                let ix = ox as isize + kx as isize - 1;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    continue;
                }
                let src = x.row(iy as usize * w + ix as usize);
                let wrow = weights.row(tap);
                for ch in 0..c {
                    let v = out.get(orow, ch) + src[ch] * wrow[ch];
                    out.set(orow, ch, v);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `depthwise_conv3x3` w.r.t. input and weights.
pub fn depthwise_conv3x3_adjoint<T: Scalar>(
    g: &Matrix<T>,
    x: &Matrix<T>,
    weights: &Matrix<T>,
    h: usize,
    w: usize,
) -> Result<(Matrix<T>, Matrix<T>)> {
    check_layout(x, h, w)?;
    let c = x.cols();
    if g.shape() != x.shape() {
        return Err(Error::shape("depthwise_conv3x3_adjoint", g.shape(), x.shape()));
    }
    let mut dx = Matrix::zeros(h * w, c);
    let mut dw = Matrix::zeros(9, c);
    for oy in 0..h {
        for ox in 0..w {
            let orow = oy * w + ox;
            for tap in 0..9 {
                let (ky, kx) = (tap / 3, tap % 3);
                let iy = oy as isize + ky as isize - 1;
                let ix = ox as isize + kx as isize - 1;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    continue;
                }
                let irow = iy as usize * w + ix as usize;
                for ch in 0..c {
                    let gv = g.get(orow, ch);
                    dx.set(irow, ch, dx.get(irow, ch) + gv * weights.get(tap, ch));
                    dw.set(tap, ch, dw.get(tap, ch) + gv * x.get(irow, ch));
                }
            }
        }
    }
    Ok((dx, dw))
}
