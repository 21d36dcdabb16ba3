//! Forward and backward kernels for the individual layer kinds.

use super::{Block, Scalar, Shape, Tensor3};
use crate::error::{shape_err, Result};

/// Parameter and (optionally) input gradients of a convolution or dense layer.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub d_input: Option<Tensor3<T>>,
    pub d_weight: Block<T>,
    pub d_bias: Block<T>,
}

fn out_extent(input: usize, k: usize, stride: usize) -> usize {
    (input - k) / stride + 1
}

fn check_window(input: Shape, kh: usize, kw: usize, stride: usize, what: &str) -> Result<()> {
    if stride == 0 {
        return shape_err(format!("{what}: stride must be >= 1"));
    }
    if kh == 0 || kw == 0 || kh > input.height || kw > input.width {
        return shape_err(format!(
            "{what}: window {kh}x{kw} does not fit input {input}"
        ));
    }
    Ok(())
}

fn conv_dims<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    bias: &Block<T>,
    stride: usize,
) -> Result<(usize, usize, usize, usize)> {
    let &[kh, kw, cin, f] = filters.shape.as_slice() else {
        return shape_err(format!(
            "conv2d: filter block must be 4-D, got {:?}",
            filters.shape
        ));
    };
    if cin != input.channels() {
        return shape_err(format!(
            "conv2d: filters expect {cin} input channels, input {} has {}",
            input.shape(),
            input.channels()
        ));
    }
    if bias.shape != [f] {
        return shape_err(format!("conv2d: bias shape {:?} != [{f}]", bias.shape));
    }
    check_window(input.shape(), kh, kw, stride, "conv2d")?;
    Ok((kh, kw, cin, f))
}

/// Valid (unpadded) 2-D convolution with a `K×K×Cin×F` filter block.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    bias: &Block<T>,
    stride: usize,
) -> Result<Tensor3<T>> {
    let (kh, kw, cin, f) = conv_dims(input, filters, bias, stride)?;
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (out_extent(h, kh, stride), out_extent(w, kw, stride));
    let x = input.data();
    let mut out = vec![T::zero(); oh * ow * f];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * f..][..f];
            o.copy_from_slice(&bias.data);
            for ky in 0..kh {
                for kx in 0..kw {
                    let px = &x[((oy * stride + ky) * w + ox * stride + kx) * cin..][..cin];
                    for (ci, &v) in px.iter().enumerate() {
                        let wrow = &filters.data[((ky * kw + kx) * cin + ci) * f..][..f];
                        for (acc, &wv) in o.iter_mut().zip(wrow) {
                            *acc += v * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor3::from_parts(Shape::new(oh, ow, f), out))
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    d_out: &Tensor3<T>,
    stride: usize,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let f = *filters.shape.last().unwrap_or(&0);
    let (kh, kw, cin, f) = conv_dims(input, filters, &Block::zeros(vec![f]), stride)?;
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (out_extent(h, kh, stride), out_extent(w, kw, stride));
    if d_out.shape() != Shape::new(oh, ow, f) {
        return shape_err(format!(
            "conv2d backward: d_out {} != {oh}x{ow}x{f}",
            d_out.shape()
        ));
    }
    let x = input.data();
    let g = d_out.data();
    let mut dw = vec![T::zero(); filters.len()];
    let mut db = vec![T::zero(); f];
    let mut dx = if need_input_grad {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let go = &g[(oy * ow + ox) * f..][..f];
            for (acc, &gv) in db.iter_mut().zip(go) {
                *acc += gv;
            }
            for ky in 0..kh {
                for kx in 0..kw {
                    let base = ((oy * stride + ky) * w + ox * stride + kx) * cin;
                    for ci in 0..cin {
                        let v = x[base + ci];
                        let off = ((ky * kw + kx) * cin + ci) * f;
                        let dwrow = &mut dw[off..][..f];
                        for (acc, &gv) in dwrow.iter_mut().zip(go) {
                            *acc += v * gv;
                        }
                        if need_input_grad {
                            let wrow = &filters.data[off..][..f];
                            let s: T = wrow.iter().zip(go).map(|(&a, &b)| a * b).sum();
                            dx[base + ci] += s;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        d_input: need_input_grad.then(|| Tensor3::from_parts(input.shape(), dx)),
        d_weight: Block {
            shape: filters.shape.clone(),
            data: dw,
        },
        d_bias: Block {
            shape: vec![f],
            data: db,
        },
    })
}

fn depthwise_dims<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    stride: usize,
) -> Result<(usize, usize, usize)> {
    let &[kh, kw, c] = filters.shape.as_slice() else {
        return shape_err(format!(
            "depthwise: filter block must be 3-D, got {:?}",
            filters.shape
        ));
    };
    if c != input.channels() {
        return shape_err(format!(
            "depthwise: {c} filters for {} input channels",
            input.channels()
        ));
    }
    check_window(input.shape(), kh, kw, stride, "depthwise")?;
    Ok((kh, kw, c))
}

/// Per-channel valid convolution with a `K×K×C` filter block.
pub fn depthwise_conv2d_forward<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    bias: &Block<T>,
    stride: usize,
) -> Result<Tensor3<T>> {
    let (kh, kw, c) = depthwise_dims(input, filters, stride)?;
    if bias.shape != [c] {
        return shape_err(format!("depthwise: bias shape {:?} != [{c}]", bias.shape));
    }
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (out_extent(h, kh, stride), out_extent(w, kw, stride));
    let x = input.data();
    let mut out = vec![T::zero(); oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * c..][..c];
            o.copy_from_slice(&bias.data);
            for ky in 0..kh {
                for kx in 0..kw {
                    let px = &x[((oy * stride + ky) * w + ox * stride + kx) * c..][..c];
                    let wk = &filters.data[(ky * kw + kx) * c..][..c];
                    for ((acc, &v), &wv) in o.iter_mut().zip(px).zip(wk) {
                        *acc += v * wv;
                    }
                }
            }
        }
    }
    Ok(Tensor3::from_parts(Shape::new(oh, ow, c), out))
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    d_out: &Tensor3<T>,
    stride: usize,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (kh, kw, c) = depthwise_dims(input, filters, stride)?;
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (out_extent(h, kh, stride), out_extent(w, kw, stride));
    if d_out.shape() != Shape::new(oh, ow, c) {
        return shape_err(format!(
            "depthwise backward: d_out {} != {oh}x{ow}x{c}",
            d_out.shape()
        ));
    }
    let x = input.data();
    let g = d_out.data();
    let mut dw = vec![T::zero(); filters.len()];
    let mut db = vec![T::zero(); c];
    let mut dx = if need_input_grad {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    for oy in 0..oh {
        for ox in 0..ow {
            let go = &g[(oy * ow + ox) * c..][..c];
            for (acc, &gv) in db.iter_mut().zip(go) {
                *acc += gv;
            }
            for ky in 0..kh {
                for kx in 0..kw {
                    let base = ((oy * stride + ky) * w + ox * stride + kx) * c;
                    let woff = (ky * kw + kx) * c;
                    for ch in 0..c {
                        dw[woff + ch] += x[base + ch] * go[ch];
                        if need_input_grad {
                            dx[base + ch] += filters.data[woff + ch] * go[ch];
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        d_input: need_input_grad.then(|| Tensor3::from_parts(input.shape(), dx)),
        d_weight: Block {
            shape: filters.shape.clone(),
            data: dw,
        },
        d_bias: Block {
            shape: vec![c],
            data: db,
        },
    })
}

fn check_pointwise<T: Scalar>(filters: &Block<T>) -> Result<()> {
    match filters.shape.as_slice() {
        [1, 1, _, _] => Ok(()),
        other => shape_err(format!(
            "pointwise: filter block must be 1x1xCinxF, got {other:?}"
        )),
    }
}

/// Per-pixel dense channel map with a `1×1×Cin×F` filter block.
pub fn pointwise_conv2d_forward<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    bias: &Block<T>,
) -> Result<Tensor3<T>> {
    check_pointwise(filters)?;
    conv2d_forward(input, filters, bias, 1)
}

pub fn pointwise_conv2d_backward<T: Scalar>(
    input: &Tensor3<T>,
    filters: &Block<T>,
    d_out: &Tensor3<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    check_pointwise(filters)?;
    conv2d_backward(input, filters, d_out, 1, need_input_grad)
}

/// Channel-wise maximum over each (valid) pooling window.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor3<T>,
    window: [usize; 2],
    stride: usize,
) -> Result<Tensor3<T>> {
    let [ph, pw] = window;
    check_window(input.shape(), ph, pw, stride, "maxpool")?;
    let (w, c) = (input.width(), input.channels());
    let (oh, ow) = (
        out_extent(input.height(), ph, stride),
        out_extent(w, pw, stride),
    );
    let x = input.data();
    let mut out = vec![T::neg_infinity(); oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * c..][..c];
            for ky in 0..ph {
                for kx in 0..pw {
                    let px = &x[((oy * stride + ky) * w + ox * stride + kx) * c..][..c];
                    for (acc, &v) in o.iter_mut().zip(px) {
                        if v > *acc {
                            *acc = v;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor3::from_parts(Shape::new(oh, ow, c), out))
}

/// Routes each output gradient to the first maximal input of its window.
pub fn maxpool_backward<T: Scalar>(
    input: &Tensor3<T>,
    window: [usize; 2],
    stride: usize,
    d_out: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    let [ph, pw] = window;
    check_window(input.shape(), ph, pw, stride, "maxpool")?;
    let (w, c) = (input.width(), input.channels());
    let (oh, ow) = (
        out_extent(input.height(), ph, stride),
        out_extent(w, pw, stride),
    );
    if d_out.shape() != Shape::new(oh, ow, c) {
        return shape_err(format!(
            "maxpool backward: d_out {} != {oh}x{ow}x{c}",
            d_out.shape()
        ));
    }
    let x = input.data();
    let mut dx = vec![T::zero(); x.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = T::neg_infinity();
                let mut at = 0;
                for ky in 0..ph {
                    for kx in 0..pw {
                        let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if x[idx] > best {
                            best = x[idx];
                            at = idx;
                        }
                    }
                }
                dx[at] += d_out.data()[(oy * ow + ox) * c + ch];
            }
        }
    }
    Ok(Tensor3::from_parts(input.shape(), dx))
}

fn dense_dims<T: Scalar>(n: usize, weights: &Block<T>) -> Result<usize> {
    let &[rows, m] = weights.shape.as_slice() else {
        return shape_err(format!(
            "dense: weight block must be 2-D, got {:?}",
            weights.shape
        ));
    };
    if rows != n {
        return shape_err(format!(
            "dense: weights have {rows} rows, input has {n} values"
        ));
    }
    Ok(m)
}

/// `y = Wᵀx + b` with `W` stored as `n×m`.
pub fn dense_forward<T: Scalar>(
    input: &[T],
    weights: &Block<T>,
    bias: &Block<T>,
) -> Result<Vec<T>> {
    let m = dense_dims(input.len(), weights)?;
    if bias.shape != [m] {
        return shape_err(format!("dense: bias shape {:?} != [{m}]", bias.shape));
    }
    let mut out = bias.data.clone();
    for (&v, row) in input.iter().zip(weights.data.chunks_exact(m)) {
        if v == T::zero() {
            continue;
        }
        for (acc, &wv) in out.iter_mut().zip(row) {
            *acc += v * wv;
        }
    }
    Ok(out)
}

/// Input gradient (when requested), weight gradient, bias gradient.
pub type DenseGrads<T> = (Option<Vec<T>>, Block<T>, Block<T>);

pub fn dense_backward<T: Scalar>(
    input: &[T],
    weights: &Block<T>,
    d_out: &[T],
    need_input_grad: bool,
) -> Result<DenseGrads<T>> {
    let m = dense_dims(input.len(), weights)?;
    if d_out.len() != m {
        return shape_err(format!(
            "dense backward: d_out has {} values, expected {m}",
            d_out.len()
        ));
    }
    let mut dw = vec![T::zero(); weights.len()];
    for (&v, row) in input.iter().zip(dw.chunks_exact_mut(m)) {
        for (acc, &g) in row.iter_mut().zip(d_out) {
            *acc = v * g;
        }
    }
    let dx = need_input_grad.then(|| {
        weights
            .data
            .chunks_exact(m)
            .map(|row| row.iter().zip(d_out).map(|(&a, &b)| a * b).sum())
            .collect()
    });
    Ok((
        dx,
        Block {
            shape: weights.shape.clone(),
            data: dw,
        },
        Block {
            shape: vec![m],
            data: d_out.to_vec(),
        },
    ))
}

pub fn relu<T: Scalar>(input: &Tensor3<T>) -> Tensor3<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor3::from_parts(input.shape(), data)
}

pub fn relu_backward<T: Scalar>(input: &Tensor3<T>, d_out: &Tensor3<T>) -> Tensor3<T> {
    let data = input
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor3::from_parts(input.shape(), data)
}
