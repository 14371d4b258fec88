//! Raw `f64` slice kernels behind the graph ops.
//!
//! All reductions accumulate left to right in index order so that repeated
//! runs of the same graph produce bit-identical values.

/// Dense row-major matmul: `a` is m×k, `b` is k×n, result m×n.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Broadcast shape of two operands under trailing-dimension alignment,
/// or `None` when the shapes are incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = dim_from_trailing(a, rank, i);
        let db = dim_from_trailing(b, rank, i);
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

fn dim_from_trailing(shape: &[usize], rank: usize, i: usize) -> usize {
    // Dimension i of `shape` once right-aligned inside `rank` axes.
    (i + shape.len()).checked_sub(rank).map_or(1, |j| shape[j])
}

/// Per-axis strides into `src` when it is right-aligned against `dst_shape`,
/// with 0 on broadcast axes.
fn aligned_strides(src_shape: &[usize], dst_shape: &[usize]) -> Vec<usize> {
    let rs = src_shape.len();
    let rd = dst_shape.len();
    let mut strides = vec![0usize; rs];
    let mut acc = 1;
    for i in (0..rs).rev() {
        strides[i] = acc;
        acc *= src_shape[i];
    }
    let mut out = vec![0usize; rd];
    for i in 0..rd {
        match (i + rs).checked_sub(rd) {
            Some(j) if src_shape[j] == dst_shape[i] => out[i] = strides[j],
            Some(j) => {
                debug_assert_eq!(src_shape[j], 1, "shape checked at node creation");
                out[i] = 0;
            }
            None => out[i] = 0,
        }
    }
    out
}

/// Walks every flat index of `dst_shape` together with the mapped flat offset
/// into the (broadcast) source.
fn for_each_mapped(dst_shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let numel: usize = dst_shape.iter().product();
    let rank = dst_shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for flat in 0..numel {
        f(flat, off);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < dst_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= strides[d] * dst_shape[d];
        }
    }
}

pub(crate) fn broadcast_to(src: &[f64], src_shape: &[usize], dst_shape: &[usize]) -> Vec<f64> {
    let strides = aligned_strides(src_shape, dst_shape);
    let mut out = vec![0.0; dst_shape.iter().product()];
    for_each_mapped(dst_shape, &strides, |flat, off| out[flat] = src[off]);
    out
}

/// Adjoint of [`broadcast_to`]: folds `src` (shaped `src_shape`) back down to
/// `dst_shape` by summing over the broadcast axes.
pub(crate) fn sum_to_shape(src: &[f64], src_shape: &[usize], dst_shape: &[usize]) -> Vec<f64> {
    let strides = aligned_strides(dst_shape, src_shape);
    let mut out = vec![0.0; dst_shape.iter().product()];
    for_each_mapped(src_shape, &strides, |flat, off| out[off] += src[flat]);
    out
}

pub(crate) fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
