//! Raw f32 compute kernels behind the tensor operations.
//!
//! Every kernel computes each output element as an independent, serially
//! accumulated expression: parallelism only ever splits work across output
//! elements, never across a reduction. This fixes the floating-point
//! evaluation order and makes results bit-identical regardless of thread
//! count.

use rayon::prelude::*;

/// Minimum elements per rayon task; keeps scheduling overhead negligible.
const PAR_MIN: usize = 4096;

/// Two-level chunked sum with a fixed chunk size. More accurate than a
/// straight serial sum on long inputs and independent of thread count.
pub fn chunked_sum(xs: &[f32]) -> f32 {
    const CHUNK: usize = 256;
    if xs.len() <= CHUNK {
        return xs.iter().sum();
    }
    let mut total = 0.0f32;
    for c in xs.chunks(CHUNK) {
        let mut acc = 0.0f32;
        for &v in c {
            acc += v;
        }
        total += acc;
    }
    total
}

pub fn map(xs: &[f32], f: impl Fn(f32) -> f32 + Sync) -> Vec<f32> {
    let mut out = vec![0.0f32; xs.len()];
    out.par_chunks_mut(PAR_MIN)
        .zip(xs.par_chunks(PAR_MIN))
        .for_each(|(o, i)| {
            for (ov, &iv) in o.iter_mut().zip(i) {
                *ov = f(iv);
            }
        });
    out
}

pub fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32 + Sync) -> Vec<f32> {
    assert_eq!(a.len(), b.len());
    let mut out = vec![0.0f32; a.len()];
    out.par_chunks_mut(PAR_MIN)
        .zip(a.par_chunks(PAR_MIN).zip(b.par_chunks(PAR_MIN)))
        .for_each(|(o, (xa, xb))| {
            for ((ov, &av), &bv) in o.iter_mut().zip(xa).zip(xb) {
                *ov = f(av, bv);
            }
        });
    out
}

/// Batched matrix multiply: `a` is [ba, m, k], `b` is [bb, k, n] with
/// `ba`/`bb` either equal to the output batch or 1 (broadcast).
pub fn bmm(a: &[f32], b: &[f32], ba: usize, bb: usize, m: usize, k: usize, n: usize) -> Vec<f32> {
    let bo = ba.max(bb);
    debug_assert!(ba == bo || ba == 1);
    debug_assert!(bb == bo || bb == 1);
    debug_assert_eq!(a.len(), ba * m * k);
    debug_assert_eq!(b.len(), bb * k * n);
    let mut out = vec![0.0f32; bo * m * n];
    let rows_per_task = (PAR_MIN / n.max(1)).max(1);
    out.par_chunks_mut(n * rows_per_task)
        .enumerate()
        .for_each(|(task, chunk)| {
            for (r, out_row) in chunk.chunks_mut(n).enumerate() {
                let row = task * rows_per_task + r;
                let bi = row / m;
                let mi = row % m;
                let a_off = if ba == 1 { mi * k } else { (bi * m + mi) * k };
                let b_off = if bb == 1 { 0 } else { bi * k * n };
                let a_row = &a[a_off..a_off + k];
                for (kk, &av) in a_row.iter().enumerate() {
                    let b_row = &b[b_off + kk * n..b_off + (kk + 1) * n];
                    for (ov, &bv) in out_row.iter_mut().zip(b_row) {
                        *ov += av * bv;
                    }
                }
            }
        });
    out
}

/// im2col for a same-padded, stride-1, odd-kernel window:
/// [n, c, h, w] -> [n, c*kh*kw, h*w].
pub fn unfold(x: &[f32], n: usize, c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f32> {
    let ph = (kh - 1) / 2;
    let pw = (kw - 1) / 2;
    let kk = kh * kw;
    let hw = h * w;
    let mut out = vec![0.0f32; n * c * kk * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(row, o)| {
        let t = row % kk;
        let cc = (row / kk) % c;
        let nn = row / (kk * c);
        let dy = (t / kw) as isize - ph as isize;
        let dx = (t % kw) as isize - pw as isize;
        let plane = &x[(nn * c + cc) * hw..(nn * c + cc + 1) * hw];
        for y in 0..h {
            let orow = &mut o[y * w..(y + 1) * w];
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue; // already zero
            }
            let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
            // destination x maps to source x + dx
            let (dst_lo, src_lo) = if dx < 0 { ((-dx) as usize, 0) } else { (0, dx as usize) };
            let len = w - dst_lo.max(src_lo);
            orow[dst_lo..dst_lo + len].copy_from_slice(&srow[src_lo..src_lo + len]);
        }
    });
    out
}

/// Exact adjoint of [`unfold`]: [n, c*kh*kw, h*w] -> [n, c, h, w].
pub fn fold(g: &[f32], n: usize, c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f32> {
    let ph = (kh - 1) / 2;
    let pw = (kw - 1) / 2;
    let kk = kh * kw;
    let hw = h * w;
    debug_assert_eq!(g.len(), n * c * kk * hw);
    let mut out = vec![0.0f32; n * c * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(plane, o)| {
        let cc = plane % c;
        let nn = plane / c;
        for t in 0..kk {
            let dy = (t / kw) as isize - ph as isize;
            let dx = (t % kw) as isize - pw as isize;
            let grow = &g[((nn * c + cc) * kk + t) * hw..((nn * c + cc) * kk + t + 1) * hw];
            // unfold wrote U[.., t, sy, sx] = x[.., sy+dy, sx+dx]; the adjoint
            // accumulates U[.., t, y-dy, x-dx] into x[.., y, x].
            for y in 0..h {
                let sy = y as isize - dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let orow = &mut o[y * w..(y + 1) * w];
                let srow = &grow[sy as usize * w..(sy as usize + 1) * w];
                let (dst_lo, src_lo) = if dx > 0 { (dx as usize, 0) } else { (0, (-dx) as usize) };
                let len = w - dst_lo.max(src_lo);
                for (ov, &sv) in orow[dst_lo..dst_lo + len].iter_mut().zip(&srow[src_lo..src_lo + len]) {
                    *ov += sv;
                }
            }
        }
    });
    out
}

/// 1-D polyphase resampler applied along one spatial axis of an NCHW tensor.
///
/// Zero-stuff by `up`, pad by (`pad0`, `pad1`), correlate with `taps`, then
/// keep every `down`-th sample. `axis` is 2 (height) or 3 (width).
pub fn resample_axis(
    x: &[f32],
    shape: &[usize; 4],
    axis: usize,
    up: usize,
    down: usize,
    pad0: isize,
    pad1: isize,
    taps: &[f32; 4],
) -> (Vec<f32>, [usize; 4]) {
    let len = shape[axis];
    let out_len_i = (len * up) as isize + pad0 + pad1 - taps.len() as isize;
    assert!(out_len_i >= 0, "resample output would be empty");
    let out_len = (out_len_i / down as isize) as usize + 1;
    let mut out_shape = *shape;
    out_shape[axis] = out_len;

    let (outer, inner) = match axis {
        2 => (shape[0] * shape[1], shape[3]),
        3 => (shape[0] * shape[1] * shape[2], 1),
        _ => panic!("resample axis must be 2 or 3"),
    };
    let mut out = vec![0.0f32; outer * out_len * inner];

    if axis == 2 {
        // gather whole rows of width `inner`
        out.par_chunks_mut(out_len * inner)
            .enumerate()
            .for_each(|(o, oplane)| {
                let xplane = &x[o * len * inner..(o + 1) * len * inner];
                for j in 0..out_len {
                    let orow = &mut oplane[j * inner..(j + 1) * inner];
                    let base = (j * down) as isize - pad0;
                    for (t, &tap) in taps.iter().enumerate() {
                        let i = base + t as isize;
                        if i < 0 || i % up as isize != 0 {
                            continue;
                        }
                        let src = (i / up as isize) as usize;
                        if src >= len {
                            continue;
                        }
                        let srow = &xplane[src * inner..(src + 1) * inner];
                        for (ov, &sv) in orow.iter_mut().zip(srow) {
                            *ov += tap * sv;
                        }
                    }
                }
            });
    } else {
        out.par_chunks_mut(out_len).enumerate().for_each(|(o, orow)| {
            let xrow = &x[o * len..(o + 1) * len];
            for (j, ov) in orow.iter_mut().enumerate() {
                let base = (j * down) as isize - pad0;
                let mut acc = 0.0f32;
                for (t, &tap) in taps.iter().enumerate() {
                    let i = base + t as isize;
                    if i < 0 || i % up as isize != 0 {
                        continue;
                    }
                    let src = (i / up as isize) as usize;
                    if src < len {
                        acc += tap * xrow[src];
                    }
                }
                *ov = acc;
            }
        });
    }
    (out, out_shape)
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Axis permutation (data copy).
pub fn permute(x: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<f32>, Vec<usize>) {
    let rank = shape.len();
    assert_eq!(perm.len(), rank);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_of(shape);
    let out_in_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut out = vec![0.0f32; n];
    let out_shape_c = out_shape.clone();
    out.par_chunks_mut(PAR_MIN).enumerate().for_each(|(chunk, o)| {
        let mut idx = vec![0usize; rank];
        let mut lin = chunk * PAR_MIN;
        // decode starting multi-index
        {
            let mut rem = lin;
            for d in (0..rank).rev() {
                idx[d] = rem % out_shape_c[d];
                rem /= out_shape_c[d];
            }
        }
        let mut src: usize = idx.iter().zip(&out_in_strides).map(|(i, s)| i * s).sum();
        for ov in o.iter_mut() {
            *ov = x[src];
            lin += 1;
            // increment multi-index, updating src incrementally
            for d in (0..rank).rev() {
                idx[d] += 1;
                src += out_in_strides[d];
                if idx[d] < out_shape_c[d] {
                    break;
                }
                src -= out_in_strides[d] * out_shape_c[d];
                idx[d] = 0;
            }
        }
        let _ = lin;
    });
    (out, out_shape)
}

/// Broadcast `x` (shape left-padded with 1s) to `out_shape`.
pub fn broadcast_to(x: &[f32], shape: &[usize], out_shape: &[usize]) -> Vec<f32> {
    let rank = out_shape.len();
    assert!(shape.len() <= rank, "broadcast cannot drop axes");
    let mut padded = vec![1usize; rank - shape.len()];
    padded.extend_from_slice(shape);
    for (d, (&s, &o)) in padded.iter().zip(out_shape).enumerate() {
        assert!(s == o || s == 1, "cannot broadcast dim {d}: {s} -> {o}");
    }
    let in_strides_full = strides_of(&padded);
    let eff: Vec<usize> = padded
        .iter()
        .zip(&in_strides_full)
        .zip(out_shape)
        .map(|((&s, &st), &o)| if s == o { st } else { 0 })
        .collect();
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0f32; n];
    let out_shape_c = out_shape.to_vec();
    out.par_chunks_mut(PAR_MIN).enumerate().for_each(|(chunk, o)| {
        let mut idx = vec![0usize; rank];
        {
            let mut rem = chunk * PAR_MIN;
            for d in (0..rank).rev() {
                idx[d] = rem % out_shape_c[d];
                rem /= out_shape_c[d];
            }
        }
        let mut src: usize = idx.iter().zip(&eff).map(|(i, s)| i * s).sum();
        for ov in o.iter_mut() {
            *ov = x[src];
            for d in (0..rank).rev() {
                idx[d] += 1;
                src += eff[d];
                if idx[d] < out_shape_c[d] {
                    break;
                }
                src -= eff[d] * out_shape_c[d];
                idx[d] = 0;
            }
        }
    });
    out
}

/// Sum over `axes`; the output keeps reduced axes as size 1.
pub fn sum_axes(x: &[f32], shape: &[usize], axes: &[bool]) -> (Vec<f32>, Vec<usize>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(d, &s)| if axes[d] { 1 } else { s })
        .collect();
    let in_strides = strides_of(shape);
    let kept: Vec<usize> = (0..rank).filter(|&d| !axes[d]).collect();
    let red: Vec<usize> = (0..rank).filter(|&d| axes[d]).collect();
    let out_n: usize = out_shape.iter().product();
    let red_n: usize = red.iter().map(|&d| shape[d]).product();
    let mut out = vec![0.0f32; out_n];

    // Contiguous fast path: reducing a suffix of axes means each output
    // element sums a contiguous run.
    let contiguous_suffix = red.iter().copied().eq(rank - red.len()..rank);
    if contiguous_suffix {
        out.par_chunks_mut(1).enumerate().for_each(|(o, ov)| {
            ov[0] = chunked_sum(&x[o * red_n..(o + 1) * red_n]);
        });
        return (out, out_shape);
    }

    let kept_dims: Vec<usize> = kept.iter().map(|&d| shape[d]).collect();
    let kept_strides: Vec<usize> = kept.iter().map(|&d| in_strides[d]).collect();
    let red_dims: Vec<usize> = red.iter().map(|&d| shape[d]).collect();
    let red_strides: Vec<usize> = red.iter().map(|&d| in_strides[d]).collect();
    out.par_chunks_mut(1).enumerate().for_each(|(o, ov)| {
        let mut base = 0usize;
        {
            let mut rem = o;
            for d in (0..kept_dims.len()).rev() {
                base += (rem % kept_dims[d]) * kept_strides[d];
                rem /= kept_dims[d];
            }
        }
        // fixed-order accumulation over the reduced index space
        let mut acc0 = 0.0f32;
        let mut acc = 0.0f32;
        let mut count = 0usize;
        let mut ridx = vec![0usize; red_dims.len()];
        let mut off = 0usize;
        for _ in 0..red_n {
            acc += x[base + off];
            count += 1;
            if count % 256 == 0 {
                acc0 += acc;
                acc = 0.0;
            }
            for d in (0..red_dims.len()).rev() {
                ridx[d] += 1;
                off += red_strides[d];
                if ridx[d] < red_dims[d] {
                    break;
                }
                off -= red_strides[d] * red_dims[d];
                ridx[d] = 0;
            }
        }
        ov[0] = acc0 + acc;
    });
    (out, out_shape)
}

/// Concatenate along `axis`.
pub fn concat(parts: &[(&[f32], &[usize])], axis: usize) -> (Vec<f32>, Vec<usize>) {
    let rank = parts[0].1.len();
    let outer: usize = parts[0].1[..axis].iter().product();
    let inner: usize = parts[0].1[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|(_, s)| s[axis]).sum();
    let mut out_shape = parts[0].1.to_vec();
    out_shape[axis] = total_axis;
    let mut out = vec![0.0f32; outer * total_axis * inner];
    let mut axis_off = 0usize;
    for (data, shape) in parts {
        debug_assert_eq!(shape.len(), rank);
        let a = shape[axis];
        for o in 0..outer {
            let src = &data[o * a * inner..(o + 1) * a * inner];
            let dst_start = (o * total_axis + axis_off) * inner;
            out[dst_start..dst_start + a * inner].copy_from_slice(src);
        }
        axis_off += a;
    }
    (out, out_shape)
}

/// Slice `len` entries starting at `start` along `axis`.
pub fn slice(x: &[f32], shape: &[usize], axis: usize, start: usize, len: usize) -> (Vec<f32>, Vec<usize>) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let a = shape[axis];
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut out = vec![0.0f32; outer * len * inner];
    for o in 0..outer {
        let src = &x[(o * a + start) * inner..(o * a + start + len) * inner];
        out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
    }
    (out, out_shape)
}
