//! Forward and adjoint kernels on plain tensors. The tape calls into these;
//! they are also usable directly for inference.

use super::Tensor;
use crate::error::{invalid, shape_err, Result};

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.dims() {
        [r, c] => Ok((r, c)),
        _ => Err(shape_err!("{what} must be rank 2, got {}", t.shape())),
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.dims() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(shape_err!("{what} must be rank 4, got {}", t.shape())),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "matmul lhs")?;
    let (k2, n) = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(shape_err!("matmul inner extents differ: {} x {}", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    dims2(a, "transpose input")?;
    a.permute(&[1, 0])
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// (outer, axis length, inner) decomposition of a shape around `axis`.
pub(crate) fn axis_split(dims: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= dims.len() {
        return Err(invalid!("axis {axis} out of range for rank {}", dims.len()));
    }
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    Ok((outer, dims[axis], inner))
}

/// Softmax along `axis`, with the slice maximum subtracted first.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.dims(), axis)?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[at(j)] /= total;
            }
        }
    }
    Tensor::from_shape(x.shape().clone(), out)
}

/// Adjoint of softmax given its output `y` and upstream gradient `g`.
pub fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(y.dims(), axis)?;
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * len * inner + j * inner + i;
            let dot: f64 = (0..len).map(|j| yd[at(j)] * gd[at(j)]).sum();
            for j in 0..len {
                out[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
            }
        }
    }
    Tensor::from_shape(y.shape().clone(), out)
}

/// Symmetric zero padding per spatial axis (depth, height, width).
pub type Padding = [usize; 3];

fn conv3d_geometry(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<([usize; 4], [usize; 5], [usize; 3])> {
    let x = dims4(input, "conv3d input")?;
    let w: [usize; 5] = match *weights.dims() {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => return Err(shape_err!("conv3d weights must be rank 5, got {}", weights.shape())),
    };
    if x[0] != w[1] {
        return Err(shape_err!(
            "conv3d channel mismatch: input {} has {} channels, weights {} expect {}",
            input.shape(),
            x[0],
            weights.shape(),
            w[1]
        ));
    }
    if bias.dims() != [w[0]] {
        return Err(shape_err!("conv3d bias {} does not match {} filters", bias.shape(), w[0]));
    }
    let mut out = [0usize; 3];
    for axis in 0..3 {
        let padded = x[axis + 1] + 2 * padding[axis];
        let k = w[axis + 2];
        if k > padded {
            return Err(shape_err!(
                "conv3d kernel extent {k} exceeds padded input extent {padded} on spatial axis {axis}"
            ));
        }
        out[axis] = padded - k + 1;
    }
    Ok((x, w, out))
}

/// Stride-1 3-D cross-correlation over `[C_in, D, H, W]` with weights
/// `[C_out, C_in, kd, kh, kw]`, plus a per-filter bias.
pub fn conv3d(input: &Tensor, weights: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let (x, w, o) = conv3d_geometry(input, weights, bias, padding)?;
    let [cin, d, h, wd] = x;
    let [cout, _, kd, kh, kw] = w;
    let [od, oh, ow] = o;
    let (xd, wdat, bd) = (input.data(), weights.data(), bias.data());
    let plane = od * oh * ow;
    let mut out = vec![0.0; cout * plane];
    for co in 0..cout {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bd[co]);
        for ci in 0..cin {
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let wv = wdat[(((co * cin + ci) * kd + a) * kh + b) * kw + c];
                        if wv == 0.0 {
                            continue;
                        }
                        for z in 0..od {
                            let iz = z + a;
                            if iz < padding[0] || iz - padding[0] >= d {
                                continue;
                            }
                            let iz = iz - padding[0];
                            for y in 0..oh {
                                let iy = y + b;
                                if iy < padding[1] || iy - padding[1] >= h {
                                    continue;
                                }
                                let iy = iy - padding[1];
                                let src_row = ((ci * d + iz) * h + iy) * wd;
                                let dst_row = (z * oh + y) * ow;
                                for xo in 0..ow {
                                    let ix = xo + c;
                                    if ix < padding[2] || ix - padding[2] >= wd {
                                        continue;
                                    }
                                    dst[dst_row + xo] += wv * xd[src_row + ix - padding[2]];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, od, oh, ow], out)
}

/// Gradients of conv3d with respect to input, weights, and bias.
pub fn conv3d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    padding: Padding,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (x, w, o) = conv3d_geometry(input, weights, bias, padding)?;
    let [cin, d, h, wd] = x;
    let [cout, _, kd, kh, kw] = w;
    let [od, oh, ow] = o;
    if grad_out.dims() != [cout, od, oh, ow] {
        return Err(shape_err!("conv3d upstream gradient has shape {}", grad_out.shape()));
    }
    let (xd, wdat, gd) = (input.data(), weights.data(), grad_out.data());
    let plane = od * oh * ow;
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wdat.len()];
    let mut gb = vec![0.0; cout];
    for co in 0..cout {
        let g = &gd[co * plane..(co + 1) * plane];
        gb[co] = g.iter().sum();
        for ci in 0..cin {
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let widx = (((co * cin + ci) * kd + a) * kh + b) * kw + c;
                        let wv = wdat[widx];
                        let mut acc = 0.0;
                        for z in 0..od {
                            let iz = z + a;
                            if iz < padding[0] || iz - padding[0] >= d {
                                continue;
                            }
                            let iz = iz - padding[0];
                            for y in 0..oh {
                                let iy = y + b;
                                if iy < padding[1] || iy - padding[1] >= h {
                                    continue;
                                }
                                let iy = iy - padding[1];
                                let src_row = ((ci * d + iz) * h + iy) * wd;
                                let g_row = (z * oh + y) * ow;
                                for xo in 0..ow {
                                    let ix = xo + c;
                                    if ix < padding[2] || ix - padding[2] >= wd {
                                        continue;
                                    }
                                    let xi = src_row + ix - padding[2];
                                    let gv = g[g_row + xo];
                                    acc += gv * xd[xi];
                                    gx[xi] += gv * wv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_shape(input.shape().clone(), gx)?,
        Tensor::from_shape(weights.shape().clone(), gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

fn pool_geometry(x: &Tensor, factor: usize) -> Result<[usize; 4]> {
    let dims = dims4(x, "avg_pool3d input")?;
    if factor == 0 {
        return Err(invalid!("pooling factor must be positive"));
    }
    for (axis, name) in [(1, "depth"), (2, "height"), (3, "width")] {
        if dims[axis] % factor != 0 {
            return Err(shape_err!(
                "avg_pool3d: {name} axis extent {} is not divisible by factor {factor}",
                dims[axis]
            ));
        }
    }
    Ok(dims)
}

/// Mean over non-overlapping `factor`-cubed blocks of a `[C, D, H, W]` tensor.
pub fn avg_pool3d(x: &Tensor, factor: usize) -> Result<Tensor> {
    let [c, d, h, w] = pool_geometry(x, factor)?;
    let (od, oh, ow) = (d / factor, h / factor, w / factor);
    let norm = 1.0 / (factor * factor * factor) as f64;
    let src = x.data();
    let mut out = vec![0.0; c * od * oh * ow];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let o = ((ch * od + z / factor) * oh + y / factor) * ow + xx / factor;
                    out[o] += src[((ch * d + z) * h + y) * w + xx];
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    Tensor::new(vec![c, od, oh, ow], out)
}

pub fn avg_pool3d_backward(x: &Tensor, factor: usize, grad_out: &Tensor) -> Result<Tensor> {
    let [c, d, h, w] = pool_geometry(x, factor)?;
    let (od, oh, ow) = (d / factor, h / factor, w / factor);
    if grad_out.dims() != [c, od, oh, ow] {
        return Err(shape_err!("avg_pool3d upstream gradient has shape {}", grad_out.shape()));
    }
    let norm = 1.0 / (factor * factor * factor) as f64;
    let g = grad_out.data();
    let mut out = vec![0.0; x.numel()];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let o = ((ch * od + z / factor) * oh + y / factor) * ow + xx / factor;
                    out[((ch * d + z) * h + y) * w + xx] = g[o] * norm;
                }
            }
        }
    }
    Tensor::from_shape(x.shape().clone(), out)
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row standardization of a rank-2 tensor (no learned gain or shift).
pub fn layer_norm_rows(x: &Tensor) -> Result<Tensor> {
    let (r, c) = dims2(x, "layer_norm input")?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..r {
        let row = &src[i * c..(i + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for j in 0..c {
            out[i * c + j] = (row[j] - mean) * inv;
        }
    }
    Tensor::new(vec![r, c], out)
}

pub fn layer_norm_rows_backward(x: &Tensor, y: &Tensor, g: &Tensor) -> Result<Tensor> {
    let (r, c) = dims2(x, "layer_norm input")?;
    let (src, yd, gd) = (x.data(), y.data(), g.data());
    let mut out = vec![0.0; src.len()];
    let n = c as f64;
    for i in 0..r {
        let row = &src[i * c..(i + 1) * c];
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let yr = &yd[i * c..(i + 1) * c];
        let gr = &gd[i * c..(i + 1) * c];
        let g_mean = gr.iter().sum::<f64>() / n;
        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
        for j in 0..c {
            out[i * c + j] = inv * (gr[j] - g_mean - yr[j] * gy_mean);
        }
    }
    Tensor::new(vec![r, c], out)
}
