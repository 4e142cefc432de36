//! Differentiable tensor operations.
//!
//! Each primitive records an [`Op`] node when gradient recording is active.
//! Backward rules are themselves written in terms of these public
//! operations, so a backward pass produces a graph that can be
//! differentiated again (double backpropagation).
//!
//! There is no implicit broadcasting: elementwise binary ops require exact
//! shape equality and broadcasts are explicit via [`broadcast_to`].

use crate::kernels;
use crate::tensor::Tensor;

const RESAMPLE_TAP_COUNT: usize = 4;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Mul,
    Scale(f32),
    AddConst(f32),
    Square,
    Sqrt,
    Rsqrt,
    Recip,
    Sigmoid,
    Softplus,
    LeakyRelu { alpha: f32, gain: f32 },
    PosMask,
    Reshape { from: Vec<usize> },
    BroadcastTo { from: Vec<usize> },
    SumAxes { axes: Vec<bool>, from: Vec<usize> },
    Permute { perm: Vec<usize> },
    Bmm,
    Unfold { kh: usize, kw: usize },
    Fold { kh: usize, kw: usize, h: usize, w: usize },
    Resample { axis: usize, up: usize, down: usize, pad0: isize, pad1: isize, taps: [f32; 4] },
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddConst(_) => "add_const",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Rsqrt => "rsqrt",
            Op::Recip => "recip",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::LeakyRelu { .. } => "leaky_relu_scaled",
            Op::PosMask => "pos_mask",
            Op::Reshape { .. } => "reshape",
            Op::BroadcastTo { .. } => "broadcast_to",
            Op::SumAxes { .. } => "sum_axes",
            Op::Permute { .. } => "permute",
            Op::Bmm => "bmm",
            Op::Unfold { .. } => "unfold",
            Op::Fold { .. } => "fold",
            Op::Resample { .. } => "resample",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
        }
    }

    /// Gradients of the output w.r.t. each input, given the output gradient.
    /// `needs[i]` is false when input `i` does not require a gradient.
    pub(crate) fn vjp(&self, inputs: &[Tensor], grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add => vec![
                needs[0].then(|| grad.clone()),
                needs[1].then(|| grad.clone()),
            ],
            Op::Mul => vec![
                needs[0].then(|| mul(grad, &inputs[1])),
                needs[1].then(|| mul(grad, &inputs[0])),
            ],
            Op::Scale(c) => vec![needs[0].then(|| scale(grad, *c))],
            Op::AddConst(_) => vec![needs[0].then(|| grad.clone())],
            Op::Square => vec![needs[0].then(|| scale(&mul(grad, &inputs[0]), 2.0))],
            Op::Sqrt => vec![needs[0].then(|| scale(&mul(grad, &rsqrt(&inputs[0])), 0.5))],
            Op::Rsqrt => {
                // d/dx x^(-1/2) = -1/2 x^(-3/2)
                vec![needs[0].then(|| {
                    let x32 = mul(&rsqrt(&inputs[0]), &recip(&inputs[0]));
                    scale(&mul(grad, &x32), -0.5)
                })]
            }
            Op::Recip => vec![needs[0].then(|| {
                let r = recip(&inputs[0]);
                scale(&mul(grad, &square(&r)), -1.0)
            })],
            Op::Sigmoid => vec![needs[0].then(|| {
                let s = sigmoid(&inputs[0]);
                let one_minus = add_const(&scale(&s, -1.0), 1.0);
                mul(grad, &mul(&s, &one_minus))
            })],
            Op::Softplus => vec![needs[0].then(|| mul(grad, &sigmoid(&inputs[0])))],
            Op::LeakyRelu { alpha, gain } => vec![needs[0].then(|| {
                // slope is gain where x > 0, gain*alpha elsewhere
                let mask = pos_mask(&inputs[0]);
                let slope = add_const(&scale(&mask, gain * (1.0 - alpha)), gain * alpha);
                mul(grad, &slope)
            })],
            Op::PosMask => vec![None],
            Op::Reshape { from } => vec![needs[0].then(|| reshape(grad, from))],
            Op::BroadcastTo { from } => vec![needs[0].then(|| {
                let rank = grad.shape().len();
                let mut padded = vec![1usize; rank - from.len()];
                padded.extend_from_slice(from);
                let axes: Vec<usize> = (0..rank)
                    .filter(|&d| padded[d] == 1 && grad.shape()[d] != 1)
                    .collect();
                let summed = if axes.is_empty() { grad.clone() } else { sum_axes(grad, &axes, true) };
                reshape(&summed, from)
            })],
            Op::SumAxes { axes, from } => vec![needs[0].then(|| {
                let kept: Vec<usize> = from
                    .iter()
                    .enumerate()
                    .map(|(d, &s)| if axes[d] { 1 } else { s })
                    .collect();
                broadcast_to(&reshape(grad, &kept), from)
            })],
            Op::Permute { perm } => vec![needs[0].then(|| {
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                permute(grad, &inv)
            })],
            Op::Bmm => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let bo = grad.shape()[0];
                let ga = needs[0].then(|| {
                    let bt = permute(b, &[0, 2, 1]);
                    let mut g = bmm(grad, &bt);
                    if a.shape()[0] == 1 && bo > 1 {
                        g = sum_axes(&g, &[0], true);
                    }
                    g
                });
                let gb = needs[1].then(|| {
                    let at = permute(a, &[0, 2, 1]);
                    let mut g = bmm(&at, grad);
                    if b.shape()[0] == 1 && bo > 1 {
                        g = sum_axes(&g, &[0], true);
                    }
                    g
                });
                vec![ga, gb]
            }
            Op::Unfold { kh, kw } => vec![needs[0].then(|| {
                let s = inputs[0].shape();
                fold(grad, *kh, *kw, s[2], s[3])
            })],
            Op::Fold { kh, kw, .. } => vec![needs[0].then(|| unfold(grad, *kh, *kw))],
            Op::Resample { axis, up, down, pad0, taps, .. } => vec![needs[0].then(|| {
                // Adjoint: swap up/down and mirror the left pad; the right
                // pad only fixes the output length, so solve for it.
                let k = RESAMPLE_TAP_COUNT as isize;
                let required = inputs[0].shape()[*axis] as isize;
                let g_len = grad.shape()[*axis] as isize;
                let (aup, adown) = (*down as isize, *up as isize);
                let apad0 = k - 1 - pad0;
                let apad1 = (required - 1) * adown + k - apad0 - g_len * aup;
                resample_axis(grad, *axis, *down, *up, apad0, apad1, *taps)
            })],
            Op::Concat { axis } => {
                let mut offset = 0usize;
                inputs
                    .iter()
                    .enumerate()
                    .map(|(i, inp)| {
                        let len = inp.shape()[*axis];
                        let g = needs[i].then(|| slice(grad, *axis, offset, len));
                        offset += len;
                        g
                    })
                    .collect()
            }
            Op::Slice { axis, start } => vec![needs[0].then(|| {
                let full = inputs[0].shape();
                let taken = grad.shape()[*axis];
                let mut parts: Vec<Tensor> = Vec::new();
                if *start > 0 {
                    let mut s = full.to_vec();
                    s[*axis] = *start;
                    parts.push(Tensor::zeros(&s));
                }
                parts.push(grad.clone());
                let after = full[*axis] - start - taken;
                if after > 0 {
                    let mut s = full.to_vec();
                    s[*axis] = after;
                    parts.push(Tensor::zeros(&s));
                }
                if parts.len() == 1 {
                    parts.pop().unwrap()
                } else {
                    concat(&parts.iter().collect::<Vec<_>>(), *axis)
                }
            })],
        }
    }
}

fn unary(x: &Tensor, op: Op, f: impl Fn(f32) -> f32 + Sync) -> Tensor {
    let data = kernels::map(x.data(), f);
    Tensor::from_op(x.shape().to_vec(), data, op, vec![x.clone()])
}

fn binary(a: &Tensor, b: &Tensor, op: Op, f: impl Fn(f32, f32) -> f32 + Sync) -> Tensor {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{}: shape mismatch {:?} vs {:?}",
        op.name(),
        a.shape(),
        b.shape()
    );
    let data = kernels::zip_map(a.data(), b.data(), f);
    Tensor::from_op(a.shape().to_vec(), data, op, vec![a.clone(), b.clone()])
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    binary(a, b, Op::Add, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    binary(a, b, Op::Mul, |x, y| x * y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Tensor {
    add(a, &scale(b, -1.0))
}

pub fn scale(x: &Tensor, c: f32) -> Tensor {
    unary(x, Op::Scale(c), |v| v * c)
}

pub fn neg(x: &Tensor) -> Tensor {
    scale(x, -1.0)
}

pub fn add_const(x: &Tensor, c: f32) -> Tensor {
    unary(x, Op::AddConst(c), |v| v + c)
}

pub fn square(x: &Tensor) -> Tensor {
    unary(x, Op::Square, |v| v * v)
}

pub fn sqrt(x: &Tensor) -> Tensor {
    unary(x, Op::Sqrt, |v| v.sqrt())
}

pub fn rsqrt(x: &Tensor) -> Tensor {
    unary(x, Op::Rsqrt, |v| 1.0 / v.sqrt())
}

pub fn recip(x: &Tensor) -> Tensor {
    unary(x, Op::Recip, |v| 1.0 / v)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    unary(x, Op::Sigmoid, |v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

pub fn softplus(x: &Tensor) -> Tensor {
    unary(x, Op::Softplus, |v| v.max(0.0) + (-v.abs()).exp().ln_1p())
}

/// Leaky ReLU multiplied by the variance-preserving gain sqrt(2/(1+alpha^2)).
pub fn leaky_relu_scaled(x: &Tensor, alpha: f32) -> Tensor {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
    let gain = (2.0f64 / (1.0 + (alpha as f64) * (alpha as f64))).sqrt() as f32;
    unary(x, Op::LeakyRelu { alpha, gain }, move |v| {
        gain * if v > 0.0 { v } else { alpha * v }
    })
}

/// 1.0 where x > 0, else 0.0. Not differentiable (gradient treated as zero).
pub fn pos_mask(x: &Tensor) -> Tensor {
    unary(x, Op::PosMask, |v| if v > 0.0 { 1.0 } else { 0.0 })
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    assert_eq!(n, x.numel(), "reshape {:?} -> {:?}", x.shape(), shape);
    if x.shape() == shape {
        return x.clone();
    }
    Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        Op::Reshape { from: x.shape().to_vec() },
        vec![x.clone()],
    )
}

pub fn broadcast_to(x: &Tensor, shape: &[usize]) -> Tensor {
    if x.shape() == shape {
        return x.clone();
    }
    let data = kernels::broadcast_to(x.data(), x.shape(), shape);
    Tensor::from_op(
        shape.to_vec(),
        data,
        Op::BroadcastTo { from: x.shape().to_vec() },
        vec![x.clone()],
    )
}

/// Sum over the listed axes. With `keepdims` the reduced axes stay as 1.
pub fn sum_axes(x: &Tensor, axes: &[usize], keepdims: bool) -> Tensor {
    let rank = x.shape().len();
    let mut mask = vec![false; rank];
    for &a in axes {
        assert!(a < rank, "sum axis {a} out of range for rank {rank}");
        mask[a] = true;
    }
    let (data, keep_shape) = kernels::sum_axes(x.data(), x.shape(), &mask);
    let out_shape = if keepdims {
        keep_shape
    } else {
        let s: Vec<usize> = keep_shape
            .iter()
            .enumerate()
            .filter(|(d, _)| !mask[*d])
            .map(|(_, &v)| v)
            .collect();
        if s.is_empty() {
            vec![1]
        } else {
            s
        }
    };
    Tensor::from_op(
        out_shape,
        data,
        Op::SumAxes { axes: mask, from: x.shape().to_vec() },
        vec![x.clone()],
    )
}

pub fn sum_all(x: &Tensor) -> Tensor {
    let rank = x.shape().len();
    let axes: Vec<usize> = (0..rank).collect();
    sum_axes(x, &axes, false)
}

pub fn mean_all(x: &Tensor) -> Tensor {
    scale(&sum_all(x), 1.0 / x.numel() as f32)
}

pub fn mean_axes(x: &Tensor, axes: &[usize], keepdims: bool) -> Tensor {
    let n: usize = axes.iter().map(|&a| x.shape()[a]).product();
    scale(&sum_axes(x, axes, keepdims), 1.0 / n as f32)
}

pub fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    let (data, shape) = kernels::permute(x.data(), x.shape(), perm);
    Tensor::from_op(shape, data, Op::Permute { perm: perm.to_vec() }, vec![x.clone()])
}

/// Batched matrix multiply. `a` is [ba, m, k] and `b` is [bb, k, n]; either
/// batch may be 1 and is broadcast against the other.
pub fn bmm(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape().len(), 3, "bmm lhs must be rank 3, got {:?}", a.shape());
    assert_eq!(b.shape().len(), 3, "bmm rhs must be rank 3, got {:?}", b.shape());
    let (ba, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, k2, n) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    assert_eq!(k, k2, "bmm inner dims {k} vs {k2}");
    assert!(
        ba == bb || ba == 1 || bb == 1,
        "bmm batch dims {ba} vs {bb} are incompatible"
    );
    let data = kernels::bmm(a.data(), b.data(), ba, bb, m, k, n);
    Tensor::from_op(vec![ba.max(bb), m, n], data, Op::Bmm, vec![a.clone(), b.clone()])
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape().len(), 2, "matmul lhs rank");
    assert_eq!(b.shape().len(), 2, "matmul rhs rank");
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let out = bmm(&reshape(a, &[1, m, k]), &reshape(b, &[1, b.shape()[0], n]));
    reshape(&out, &[m, n])
}

/// im2col: [n, c, h, w] -> [n, c*kh*kw, h*w] with same padding, stride 1.
pub fn unfold(x: &Tensor, kh: usize, kw: usize) -> Tensor {
    assert_eq!(x.shape().len(), 4, "unfold expects NCHW");
    assert!(kh % 2 == 1 && kw % 2 == 1, "kernel extents must be odd");
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let data = kernels::unfold(x.data(), n, c, h, w, kh, kw);
    Tensor::from_op(vec![n, c * kh * kw, h * w], data, Op::Unfold { kh, kw }, vec![x.clone()])
}

/// Adjoint of [`unfold`]; scatter-adds columns back into an NCHW tensor.
pub fn fold(x: &Tensor, kh: usize, kw: usize, h: usize, w: usize) -> Tensor {
    assert_eq!(x.shape().len(), 3, "fold expects [n, c*kh*kw, h*w]");
    let n = x.shape()[0];
    let c = x.shape()[1] / (kh * kw);
    assert_eq!(c * kh * kw, x.shape()[1], "fold channel dim");
    assert_eq!(h * w, x.shape()[2], "fold spatial dim");
    let data = kernels::fold(x.data(), n, c, h, w, kh, kw);
    Tensor::from_op(vec![n, c, h, w], data, Op::Fold { kh, kw, h, w }, vec![x.clone()])
}

pub(crate) fn resample_axis(
    x: &Tensor,
    axis: usize,
    up: usize,
    down: usize,
    pad0: isize,
    pad1: isize,
    taps: [f32; 4],
) -> Tensor {
    assert_eq!(x.shape().len(), 4, "resample expects NCHW");
    let shape4 = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (data, out_shape) = kernels::resample_axis(x.data(), &shape4, axis, up, down, pad0, pad1, &taps);
    Tensor::from_op(
        out_shape.to_vec(),
        data,
        Op::Resample { axis, up, down, pad0, pad1, taps },
        vec![x.clone()],
    )
}

/// Resampling direction for [`bilinear_resample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Up,
    Down,
}

/// Edge renormalization factors: near the border some filter taps fall
/// outside the image, so outputs there are rescaled by (phase tap sum /
/// in-range tap sum). This keeps constants exactly constant.
fn edge_norm_factors(
    in_len: usize,
    out_len: usize,
    up: usize,
    down: usize,
    pad0: isize,
    taps: &[f32; 4],
) -> Option<Vec<f32>> {
    let mut factors = vec![1.0f32; out_len];
    let mut any = false;
    for (j, f) in factors.iter_mut().enumerate() {
        let base = (j * down) as isize - pad0;
        let mut ideal = 0.0f64;
        let mut valid = 0.0f64;
        for (t, &tap) in taps.iter().enumerate() {
            let i = base + t as isize;
            if i % up as isize != 0 {
                continue;
            }
            ideal += tap as f64;
            let src = i / up as isize;
            if src >= 0 && (src as usize) < in_len {
                valid += tap as f64;
            }
        }
        if valid > 0.0 && valid != ideal {
            *f = (ideal / valid) as f32;
            any = true;
        }
    }
    any.then_some(factors)
}

fn resample_axis_normalized(
    x: &Tensor,
    axis: usize,
    up: usize,
    down: usize,
    pad0: isize,
    pad1: isize,
    taps: [f32; 4],
) -> Tensor {
    let in_len = x.shape()[axis];
    let y = resample_axis(x, axis, up, down, pad0, pad1, taps);
    match edge_norm_factors(in_len, y.shape()[axis], up, down, pad0, &taps) {
        None => y,
        Some(factors) => {
            // constant diagonal factor; mul's backward handles it exactly
            let mut fshape = vec![1usize; y.shape().len()];
            fshape[axis] = factors.len();
            let f = Tensor::from_vec(&fshape, factors);
            mul(&y, &broadcast_to(&f, y.shape()))
        }
    }
}

/// Low-pass 2x resampling with the separable [1,3,3,1] filter.
///
/// Upsampling uses taps scaled to preserve constants (sum 2 per phase);
/// downsampling taps sum to 1. Border outputs are renormalized over the
/// in-range taps, so constant images stay exactly constant. This is the
/// single resampling kernel used everywhere in the crate.
pub fn bilinear_resample(x: &Tensor, dir: Resample) -> Tensor {
    match dir {
        Resample::Up => {
            let taps = [0.25, 0.75, 0.75, 0.25];
            let t = resample_axis_normalized(x, 2, 2, 1, 2, 1, taps);
            resample_axis_normalized(&t, 3, 2, 1, 2, 1, taps)
        }
        Resample::Down => {
            assert!(
                x.shape()[2] % 2 == 0 && x.shape()[3] % 2 == 0,
                "downsample requires even spatial extents, got {:?}",
                x.shape()
            );
            let taps = [0.125, 0.375, 0.375, 0.125];
            let t = resample_axis_normalized(x, 2, 1, 2, 1, 1, taps);
            resample_axis_normalized(&t, 3, 1, 2, 1, 1, taps)
        }
    }
}

pub fn upsample2x(x: &Tensor) -> Tensor {
    bilinear_resample(x, Resample::Up)
}

pub fn downsample2x(x: &Tensor) -> Tensor {
    bilinear_resample(x, Resample::Down)
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Tensor {
    assert!(!parts.is_empty());
    let rank = parts[0].shape().len();
    for p in parts {
        assert_eq!(p.shape().len(), rank, "concat rank mismatch");
        for d in 0..rank {
            if d != axis {
                assert_eq!(p.shape()[d], parts[0].shape()[d], "concat shape mismatch on dim {d}");
            }
        }
    }
    let views: Vec<(&[f32], &[usize])> = parts.iter().map(|p| (p.data(), p.shape())).collect();
    let (data, shape) = kernels::concat(&views, axis);
    Tensor::from_op(shape, data, Op::Concat { axis }, parts.iter().map(|&p| p.clone()).collect())
}

pub fn slice(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    assert!(len > 0, "slice of zero length");
    assert!(
        start + len <= x.shape()[axis],
        "slice [{start}, {}) out of range for axis {axis} of {:?}",
        start + len,
        x.shape()
    );
    let (data, shape) = kernels::slice(x.data(), x.shape(), axis, start, len);
    Tensor::from_op(shape, data, Op::Slice { axis, start }, vec![x.clone()])
}

/// a + t*(b - a) with scalar t.
pub fn lerp(a: &Tensor, b: &Tensor, t: f32) -> Tensor {
    add(&scale(a, 1.0 - t), &scale(b, t))
}

/// Adds a per-channel bias to an [n, c, ...] tensor.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Tensor {
    let c = x.shape()[1];
    assert_eq!(bias.numel(), c, "bias length {} vs channels {c}", bias.numel());
    let mut bshape = vec![1usize; x.shape().len()];
    bshape[1] = c;
    add(x, &broadcast_to(&reshape(bias, &bshape), x.shape()))
}

/// Grouped same-padding stride-1 2-D cross-correlation.
///
/// `x` is [n, c_in, h, w]; `weights` is [c_out, c_in/groups, kh, kw]. Both
/// channel counts must be divisible by `groups`.
pub fn conv2d(x: &Tensor, weights: &Tensor, groups: usize) -> Tensor {
    assert_eq!(x.shape().len(), 4, "conv2d input must be NCHW, got {:?}", x.shape());
    assert_eq!(weights.shape().len(), 4, "conv2d weights must be rank 4");
    let (n, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, c_in_g, kh, kw) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    assert!(kh % 2 == 1 && kw % 2 == 1, "kernel extents must be odd");
    assert!(groups >= 1, "groups must be positive");
    assert!(
        c_in % groups == 0 && c_out % groups == 0,
        "groups {groups} must divide channel counts ({c_in} in, {c_out} out)"
    );
    assert_eq!(
        c_in_g,
        c_in / groups,
        "weight input channels {c_in_g} vs expected {}",
        c_in / groups
    );

    let kk = kh * kw;
    // columns: [n*groups, (c_in/groups)*kh*kw, h*w]
    let cols = if kk == 1 {
        reshape(x, &[n * groups, c_in_g, h * w])
    } else {
        reshape(&unfold(x, kh, kw), &[n * groups, c_in_g * kk, h * w])
    };
    // weights: [groups, c_out/groups, (c_in/groups)*kh*kw], broadcast over n
    let wr = reshape(weights, &[groups, c_out / groups, c_in_g * kk]);
    let lhs = if n == 1 || groups == 1 {
        wr
    } else {
        let wb = broadcast_to(
            &reshape(&wr, &[1, groups, c_out / groups, c_in_g * kk]),
            &[n, groups, c_out / groups, c_in_g * kk],
        );
        reshape(&wb, &[n * groups, c_out / groups, c_in_g * kk])
    };
    let out = bmm(&lhs, &cols);
    reshape(&out, &[n, c_out, h, w])
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Tensor {
        add(self, other)
    }
    pub fn sub(&self, other: &Tensor) -> Tensor {
        sub(self, other)
    }
    pub fn mul(&self, other: &Tensor) -> Tensor {
        mul(self, other)
    }
    pub fn scale(&self, c: f32) -> Tensor {
        scale(self, c)
    }
    pub fn square(&self) -> Tensor {
        square(self)
    }
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        reshape(self, shape)
    }
    pub fn sum_all(&self) -> Tensor {
        sum_all(self)
    }
    pub fn mean_all(&self) -> Tensor {
        mean_all(self)
    }
}
