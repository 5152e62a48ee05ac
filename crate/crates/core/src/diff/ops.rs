//! Forward operations. Every op records what its backward pass needs; see
//! the gradient-check suite in `tests/gradcheck.rs`, which compares each op
//! against central finite differences.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{op_node, shape_err, DiffError, Tensor};
use crate::math;
use crate::scene::wrap_angle;

// ---------------------------------------------------------------------------
// raw matmul kernels (row-major)

fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..kk * n + n];
            let orow = &mut out[i * n..i * n + n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out[m,k] += g[m,n] * b[k,n]^T
fn mm_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..i * n + n];
        for kk in 0..k {
            let brow = &b[kk * n..kk * n + n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += grow[j] * brow[j];
            }
            out[i * k + kk] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * g[m,n]
fn mm_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..i * n + n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let orow = &mut out[kk * n..kk * n + n];
            for j in 0..n {
                orow[j] += av * grow[j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise

fn unary(
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|&x| f(x)).collect();
    op_node(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        move |node, grad, sink| {
            let x = node.parents[0].data();
            let y = &node.data;
            sink(
                0,
                grad.iter()
                    .zip(x.iter().zip(y.iter()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect(),
            );
        },
    )
}

pub fn relu(a: &Tensor) -> Tensor {
    unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
}

/// Pass-through gradient strictly inside `(lo, hi)`, zero outside.
pub fn clamp(a: &Tensor, lo: f64, hi: f64) -> Tensor {
    unary(
        a,
        move |x| x.clamp(lo, hi),
        move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
    )
}

pub fn clamp_min(a: &Tensor, lo: f64) -> Tensor {
    clamp(a, lo, f64::INFINITY)
}

pub fn sin(a: &Tensor) -> Tensor {
    unary(a, math::sin, |x, _| math::cos(x))
}

pub fn cos(a: &Tensor) -> Tensor {
    unary(a, math::cos, |x, _| -math::sin(x))
}

pub fn exp(a: &Tensor) -> Tensor {
    unary(a, math::exp, |_, y| y)
}

pub fn log(a: &Tensor) -> Tensor {
    unary(a, math::ln, |x, _| 1.0 / x)
}

pub fn abs(a: &Tensor) -> Tensor {
    unary(a, math::abs, |x, _| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// Wraps every element to `(-pi, pi]`; the map is piecewise `x + 2k*pi`, so
/// the gradient is 1 everywhere.
pub fn angle_wrap(a: &Tensor) -> Tensor {
    unary(a, wrap_angle, |_, _| 1.0)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    unary(a, move |x| c * x, move |_, _| c)
}

pub fn neg(a: &Tensor) -> Tensor {
    scale(a, -1.0)
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    unary(a, move |x| x + c, |_, _| 1.0)
}

// ---------------------------------------------------------------------------
// binary elementwise with suffix broadcast (b's shape must equal a's shape
// or be a trailing suffix of it, as in bias adds)

fn suffix_reps(op: &'static str, a: &Tensor, b: &Tensor) -> Result<usize, DiffError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
        return Err(shape_err(op, sa, sb));
    }
    Ok(if b.numel() == 0 {
        0
    } else {
        a.numel() / b.numel()
    })
}

fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    dfa: impl Fn(f64, f64) -> f64 + 'static,
    dfb: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor, DiffError> {
    suffix_reps(op, a, b)?;
    let bn = b.numel();
    let data: Vec<f64> = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, b.data()[i % bn]))
        .collect();
    Ok(op_node(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        move |node, grad, sink| {
            let (x, y) = (node.parents[0].data(), node.parents[1].data());
            let bn = y.len();
            sink(
                0,
                grad.iter()
                    .enumerate()
                    .map(|(i, &g)| g * dfa(x[i], y[i % bn]))
                    .collect(),
            );
            let mut gb = vec![0.0; bn];
            for (i, &g) in grad.iter().enumerate() {
                gb[i % bn] += g * dfb(x[i], y[i % bn]);
            }
            sink(1, gb);
        },
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    binary("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    binary("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    binary("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
}

// ---------------------------------------------------------------------------
// contractions

/// Matrix product. Supported shapes: `[.., m, k] x [k, n]` (leading dims
/// flattened) and batched `[B, m, k] x [B, k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    if sa.len() < 2 || sb.len() < 2 {
        return Err(shape_err("matmul", &sa, &sb));
    }
    if sb.len() == 2 {
        let k = sa[sa.len() - 1];
        if sb[0] != k {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let n = sb[1];
        let m: usize = sa[..sa.len() - 1].iter().product();
        let mut data = vec![0.0; m * n];
        mm_nn(a.data(), b.data(), m, k, n, &mut data);
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        Ok(op_node(
            out_shape,
            data,
            vec![a.clone(), b.clone()],
            move |node, grad, sink| {
                let (av, bv) = (node.parents[0].data(), node.parents[1].data());
                let mut ga = vec![0.0; av.len()];
                mm_nt(grad, bv, m, n, k, &mut ga);
                sink(0, ga);
                let mut gb = vec![0.0; bv.len()];
                mm_tn(av, grad, m, k, n, &mut gb);
                sink(1, gb);
            },
        ))
    } else if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
        let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = vec![0.0; bsz * m * n];
        for i in 0..bsz {
            mm_nn(
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut data[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(op_node(
            vec![bsz, m, n],
            data,
            vec![a.clone(), b.clone()],
            move |node, grad, sink| {
                let (av, bv) = (node.parents[0].data(), node.parents[1].data());
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for i in 0..bsz {
                    let g = &grad[i * m * n..(i + 1) * m * n];
                    mm_nt(
                        g,
                        &bv[i * k * n..(i + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut ga[i * m * k..(i + 1) * m * k],
                    );
                    mm_tn(
                        &av[i * m * k..(i + 1) * m * k],
                        g,
                        m,
                        k,
                        n,
                        &mut gb[i * k * n..(i + 1) * k * n],
                    );
                }
                sink(0, ga);
                sink(1, gb);
            },
        ))
    } else {
        Err(shape_err("matmul", &sa, &sb))
    }
}

// ---------------------------------------------------------------------------
// shape manipulation

pub fn reshape(a: &Tensor, shape: Vec<usize>) -> Result<Tensor, DiffError> {
    if shape.iter().product::<usize>() != a.numel() {
        return Err(shape_err("reshape", a.shape(), &shape));
    }
    Ok(op_node(
        shape,
        a.data().to_vec(),
        vec![a.clone()],
        |_, grad, sink| sink(0, grad.to_vec()),
    ))
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn permute_copy(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
    let mut out = vec![0.0; data.len()];
    let rank = shape.len();
    let mut idx = vec![0usize; rank]; // multi-index over the output
    for slot in out.iter_mut() {
        let mut src = 0;
        for d in 0..rank {
            src += idx[d] * in_strides[axes[d]];
        }
        *slot = data[src];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// Axis permutation (generalized transpose).
pub fn permute(a: &Tensor, axes: &[usize]) -> Result<Tensor, DiffError> {
    let rank = a.shape().len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&ax| ax >= rank || core::mem::replace(&mut seen[ax], true)) {
        return Err(shape_err("permute", a.shape(), axes));
    }
    let (out_shape, data) = permute_copy(a.data(), a.shape(), axes);
    let axes: Vec<usize> = axes.to_vec();
    Ok(op_node(
        out_shape,
        data,
        vec![a.clone()],
        move |node, grad, sink| {
            let mut inverse = vec![0usize; axes.len()];
            for (i, &ax) in axes.iter().enumerate() {
                inverse[ax] = i;
            }
            let (_, g) = permute_copy(grad, &node.shape, &inverse);
            sink(0, g);
        },
    ))
}

/// Concatenation along `axis`; inputs must agree on every other dimension.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, DiffError> {
    let Some(first) = parts.first() else {
        return Err(DiffError::Mask("concat of zero tensors"));
    };
    let rank = first.shape().len();
    if axis >= rank {
        return Err(shape_err("concat", first.shape(), &[axis]));
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = 0;
    for p in parts {
        if p.shape().len() != rank
            || p.shape()[..axis] != first.shape()[..axis]
            || p.shape()[axis + 1..] != first.shape()[axis + 1..]
        {
            return Err(shape_err("concat", first.shape(), p.shape()));
        }
        out_shape[axis] += p.shape()[axis];
    }
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let blocks: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
    let total_block: usize = blocks.iter().sum();
    let mut data = vec![0.0; outer * total_block];
    for o in 0..outer {
        let mut offset = o * total_block;
        for (p, &blk) in parts.iter().zip(&blocks) {
            data[offset..offset + blk].copy_from_slice(&p.data()[o * blk..(o + 1) * blk]);
            offset += blk;
        }
    }
    let parents: Vec<Tensor> = parts.iter().map(|&p| p.clone()).collect();
    Ok(op_node(
        out_shape,
        data,
        parents,
        move |node, grad, sink| {
            for (pi, &blk) in blocks.iter().enumerate() {
                let start: usize = blocks[..pi].iter().sum();
                let mut g = vec![0.0; node.parents[pi].numel()];
                for o in 0..outer {
                    g[o * blk..(o + 1) * blk]
                        .copy_from_slice(&grad[o * total_block + start..o * total_block + start + blk]);
                }
                sink(pi, g);
            }
        },
    ))
}

/// Gathers rows of `a` (axis 0) at `indices`; the same row may repeat.
/// Doubles as the embedding lookup when `a` is an embedding table.
pub fn index_rows(a: &Tensor, indices: &[usize]) -> Result<Tensor, DiffError> {
    if a.shape().is_empty() {
        return Err(shape_err("index_rows", a.shape(), &[indices.len()]));
    }
    let rows = a.shape()[0];
    if indices.iter().any(|&i| i >= rows) {
        return Err(shape_err("index_rows", a.shape(), &[indices.len()]));
    }
    let row_len = if rows == 0 { 0 } else { a.numel() / rows };
    let mut out_shape = a.shape().to_vec();
    out_shape[0] = indices.len();
    let mut data = Vec::with_capacity(indices.len() * row_len);
    for &i in indices {
        data.extend_from_slice(&a.data()[i * row_len..(i + 1) * row_len]);
    }
    let indices: Vec<usize> = indices.to_vec();
    Ok(op_node(
        out_shape,
        data,
        vec![a.clone()],
        move |node, grad, sink| {
            let mut g = vec![0.0; node.parents[0].numel()];
            for (pos, &i) in indices.iter().enumerate() {
                for c in 0..row_len {
                    g[i * row_len + c] += grad[pos * row_len + c];
                }
            }
            sink(0, g);
        },
    ))
}

/// Embedding lookup: rows of a `[vocab, dim]` table.
pub fn embedding_lookup(table: &Tensor, indices: &[usize]) -> Result<Tensor, DiffError> {
    index_rows(table, indices)
}

// ---------------------------------------------------------------------------
// reductions and normalizations

pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data().iter().sum();
    op_node(
        vec![1],
        vec![total],
        vec![a.clone()],
        |node, grad, sink| {
            sink(0, vec![grad[0]; node.parents[0].numel()]);
        },
    )
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel().max(1) as f64;
    scale(&sum(a), 1.0 / n)
}

/// Sum of elementwise absolute differences (scalar output).
pub fn l1_distance(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    if a.shape() != b.shape() {
        return Err(shape_err("l1_distance", a.shape(), b.shape()));
    }
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| math::abs(x - y))
        .sum();
    Ok(op_node(
        vec![1],
        vec![total],
        vec![a.clone(), b.clone()],
        |node, grad, sink| {
            let (x, y) = (node.parents[0].data(), node.parents[1].data());
            let g = grad[0];
            let signs: Vec<f64> = x
                .iter()
                .zip(y)
                .map(|(&x, &y)| {
                    if x > y {
                        g
                    } else if x < y {
                        -g
                    } else {
                        0.0
                    }
                })
                .collect();
            sink(1, signs.iter().map(|s| -s).collect());
            sink(0, signs);
        },
    ))
}

/// Softmax over the last axis.
pub fn softmax(a: &Tensor) -> Tensor {
    let d = *a.shape().last().unwrap_or(&1);
    let mut data = a.data().to_vec();
    for row in data.chunks_mut(d.max(1)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - m);
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    op_node(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        move |node, grad, sink| {
            let s = &node.data;
            let mut g = vec![0.0; s.len()];
            let d = d.max(1);
            for r in 0..s.len() / d {
                let srow = &s[r * d..(r + 1) * d];
                let grow = &grad[r * d..(r + 1) * d];
                let dot: f64 = srow.iter().zip(grow).map(|(&si, &gi)| si * gi).sum();
                for i in 0..d {
                    g[r * d + i] = srow[i] * (grow[i] - dot);
                }
            }
            sink(0, g);
        },
    )
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over the last axis with learned scale and shift.
pub fn layer_norm(a: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor, DiffError> {
    let d = *a.shape().last().unwrap_or(&0);
    if gamma.shape() != [d] || beta.shape() != [d] || d == 0 {
        return Err(shape_err("layer_norm", a.shape(), gamma.shape()));
    }
    let rows = a.numel() / d;
    let mut data = vec![0.0; a.numel()];
    let mut xhat = vec![0.0; a.numel()];
    let mut inv_sigma = vec![0.0; rows];
    for r in 0..rows {
        let x = &a.data()[r * d..(r + 1) * d];
        let mu = x.iter().sum::<f64>() / d as f64;
        let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let inv = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
        inv_sigma[r] = inv;
        for i in 0..d {
            let h = (x[i] - mu) * inv;
            xhat[r * d + i] = h;
            data[r * d + i] = h * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok(op_node(
        a.shape().to_vec(),
        data,
        vec![a.clone(), gamma.clone(), beta.clone()],
        move |node, grad, sink| {
            let gamma = node.parents[1].data();
            let mut ga = vec![0.0; node.parents[0].numel()];
            let mut ggamma = vec![0.0; d];
            let mut gbeta = vec![0.0; d];
            for r in 0..rows {
                let g = &grad[r * d..(r + 1) * d];
                let h = &xhat[r * d..(r + 1) * d];
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_h = 0.0;
                for i in 0..d {
                    let dxhat = g[i] * gamma[i];
                    mean_dxhat += dxhat;
                    mean_dxhat_h += dxhat * h[i];
                    ggamma[i] += g[i] * h[i];
                    gbeta[i] += g[i];
                }
                mean_dxhat /= d as f64;
                mean_dxhat_h /= d as f64;
                for i in 0..d {
                    let dxhat = g[i] * gamma[i];
                    ga[r * d + i] = inv_sigma[r] * (dxhat - mean_dxhat - h[i] * mean_dxhat_h);
                }
            }
            sink(0, ga);
            sink(1, ggamma);
            sink(2, gbeta);
        },
    ))
}

// ---------------------------------------------------------------------------
// masking

/// Replaces entries where `mask` is true with `value`. The mask either
/// matches the full element count or the last axis (and is then broadcast
/// across rows).
pub fn masked_fill(a: &Tensor, mask: &[bool], value: f64) -> Result<Tensor, DiffError> {
    let d = *a.shape().last().unwrap_or(&0);
    let per_row = if mask.len() == a.numel() {
        a.numel()
    } else if mask.len() == d && d > 0 {
        d
    } else {
        return Err(shape_err("masked_fill", a.shape(), &[mask.len()]));
    };
    let data: Vec<f64> = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| if mask[i % per_row] { value } else { x })
        .collect();
    let mask: Vec<bool> = mask.to_vec();
    Ok(op_node(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        move |_, grad, sink| {
            sink(
                0,
                grad.iter()
                    .enumerate()
                    .map(|(i, &g)| if mask[i % per_row] { 0.0 } else { g })
                    .collect(),
            );
        },
    ))
}

/// Max-pool over the point axis of `[elements, points, features]`, honoring
/// the point mask. Unavailable elements yield zero rows; an available
/// element with no valid point is a `Mask` error.
pub fn masked_max_pool(
    a: &Tensor,
    point_mask: &[bool],
    element_mask: &[bool],
) -> Result<Tensor, DiffError> {
    let s = a.shape();
    if s.len() != 3 {
        return Err(shape_err("masked_max_pool", s, &[0]));
    }
    let (e, p, d) = (s[0], s[1], s[2]);
    if point_mask.len() != e * p || element_mask.len() != e {
        return Err(shape_err("masked_max_pool", s, &[point_mask.len()]));
    }
    let mut data = vec![0.0; e * d];
    let mut argmax = vec![0usize; e * d];
    for ei in 0..e {
        if !element_mask[ei] {
            continue;
        }
        let mut any = false;
        for pi in 0..p {
            if !point_mask[ei * p + pi] {
                continue;
            }
            let src = &a.data()[(ei * p + pi) * d..(ei * p + pi) * d + d];
            if !any {
                data[ei * d..ei * d + d].copy_from_slice(src);
                for c in 0..d {
                    argmax[ei * d + c] = pi;
                }
                any = true;
            } else {
                for c in 0..d {
                    if src[c] > data[ei * d + c] {
                        data[ei * d + c] = src[c];
                        argmax[ei * d + c] = pi;
                    }
                }
            }
        }
        if !any {
            return Err(DiffError::Mask(
                "available element has zero valid points",
            ));
        }
    }
    let element_mask: Vec<bool> = element_mask.to_vec();
    Ok(op_node(
        vec![e, d],
        data,
        vec![a.clone()],
        move |node, grad, sink| {
            let mut g = vec![0.0; node.parents[0].numel()];
            for ei in 0..e {
                if !element_mask[ei] {
                    continue;
                }
                for c in 0..d {
                    let pi = argmax[ei * d + c];
                    g[(ei * p + pi) * d + c] += grad[ei * d + c];
                }
            }
            sink(0, g);
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let s = softmax(&Tensor::constant(vec![2], vec![0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = softmax(&Tensor::constant(
            vec![2, 3],
            vec![1.0, -2.0, 0.5, 100.0, 100.0, 100.0],
        ));
        for row in s.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::constant(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let a = Tensor::constant(vec![3, 3], (1..=9).map(|v| v as f64 * 0.7).collect());
        let out = matmul(&eye, &a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 2]"));
    }

    #[test]
    fn masked_max_pool_rejects_empty_available_element() {
        let a = Tensor::zeros(vec![1, 2, 3]);
        let err = masked_max_pool(&a, &[false, false], &[true]).unwrap_err();
        assert!(matches!(err, DiffError::Mask(_)));
    }

    #[test]
    fn masked_max_pool_zeroes_unavailable_elements() {
        let a = Tensor::constant(vec![2, 2, 1], vec![5.0, 7.0, 3.0, 4.0]);
        let out = masked_max_pool(&a, &[true, true, true, true], &[true, false]).unwrap();
        assert_eq!(out.data(), &[7.0, 0.0]);
    }

    #[test]
    fn concat_and_permute_round_trip() {
        let a = Tensor::constant(vec![1, 2], vec![1.0, 2.0]);
        let b = Tensor::constant(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]);
        let c = concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        let t = permute(&c, &[1, 0]).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn index_rows_gathers() {
        let a = Tensor::constant(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]);
        let out = index_rows(&a, &[2, 0, 2]).unwrap();
        assert_eq!(out.data(), &[5., 6., 1., 2., 5., 6.]);
    }

    #[test]
    fn suffix_broadcast_bias_add() {
        let a = Tensor::constant(vec![2, 3], vec![0., 0., 0., 1., 1., 1.]);
        let b = Tensor::constant(vec![3], vec![10., 20., 30.]);
        let out = add(&a, &b).unwrap();
        assert_eq!(out.data(), &[10., 20., 30., 11., 21., 31.]);
    }

    #[test]
    fn angle_wrap_values() {
        let a = Tensor::constant(vec![2], vec![core::f64::consts::PI + 1e-6, -7.0]);
        let out = angle_wrap(&a);
        assert!((out.data()[0] + core::f64::consts::PI - 1e-6).abs() < 1e-9);
        assert!(out.data()[1] > -core::f64::consts::PI && out.data()[1] <= core::f64::consts::PI);
    }

    #[test]
    fn l1_distance_matches_manual_sum() {
        let a = Tensor::constant(vec![3], vec![1.0, -2.0, 0.5]);
        let b = Tensor::constant(vec![3], vec![0.0, 1.0, 0.5]);
        assert_eq!(l1_distance(&a, &b).unwrap().scalar_value(), 4.0);
    }
}
