//! Inner-loop kernels. All of them accumulate in f64 and write f32 results.
//! Every output element is produced by one sequential accumulation with a
//! fixed index order (the dot kernels use a fixed 8-lane interleave), so
//! results do not depend on call context or thread count.

/// C[m,n] = A[m,k] * B[k,n]
///
/// Four A-rows share one pass over B; each output element still
/// accumulates over p in ascending order.
pub fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; 4 * n];
    let mut i = 0;
    while i < m {
        let rows = (m - i).min(4);
        let acc = &mut acc[..rows * n];
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for r in 0..rows {
                let av = a[(i + r) * k + p] as f64;
                if av != 0.0 {
                    for (slot, &bv) in acc[r * n..(r + 1) * n].iter_mut().zip(brow) {
                        *slot = (bv as f64).mul_add(av, *slot);
                    }
                }
            }
        }
        for r in 0..rows {
            for (o, &v) in out[(i + r) * n..(i + r + 1) * n]
                .iter_mut()
                .zip(&acc[r * n..(r + 1) * n])
            {
                *o = v as f32;
            }
        }
        i += rows;
    }
    out
}

/// Fixed-order 8-lane dot product in f64.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ac = &a[c * 8..c * 8 + 8];
        let bc = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] = (ac[l] as f64).mul_add(bc[l] as f64, lanes[l]);
        }
    }
    let mut tail = 0.0f64;
    for i in chunks * 8..a.len() {
        tail += a[i] as f64 * b[i] as f64;
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

/// C[m,n] = A[m,k] * B[n,k]^T  (rows of B are dotted against rows of A)
pub fn mm_nt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]) as f32;
        }
    }
    out
}

/// C[m,n] = A[l,m]^T * B[l,n]
///
/// Four B-rows (r values) are folded per pass over the accumulator; the
/// per-element order over r stays ascending.
pub fn mm_tn(a: &[f32], b: &[f32], l: usize, m: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), l * m);
    debug_assert_eq!(b.len(), l * n);
    if l == 1 {
        // outer product; no accumulation to carry
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let av = a[i] as f64;
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o = (av * bv as f64) as f32;
            }
        }
        return out;
    }
    let mut acc = vec![0.0f64; m * n];
    let mut r = 0;
    while r < l {
        let rows = (l - r).min(4);
        for i in 0..m {
            let accrow = &mut acc[i * n..(i + 1) * n];
            for q in 0..rows {
                let av = a[(r + q) * m + i] as f64;
                if av != 0.0 {
                    let brow = &b[(r + q) * n..(r + q + 1) * n];
                    for (slot, &bv) in accrow.iter_mut().zip(brow) {
                        *slot = (bv as f64).mul_add(av, *slot);
                    }
                }
            }
        }
        r += rows;
    }
    acc.iter().map(|&v| v as f32).collect()
}

/// Lay one image [c,h,w] out as a [c*k*k, oh*ow] patch matrix for a valid
/// stride-1 convolution.
#[cfg(test)]
pub fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize) -> Vec<f32> {
    let oh = h - k + 1;
    let ow = w - k + 1;
    let mut cols = vec![0.0f32; c * k * k * oh * ow];
    im2col_into(x, c, h, w, k, &mut cols, oh * ow, 0);
    cols
}

/// im2col writing into a wider destination matrix: row pitch `pitch`,
/// horizontal offset `offset`. Lets several images share one patch matrix
/// so the convolution matmul sees long rows.
pub fn im2col_into(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    dst: &mut [f32],
    pitch: usize,
    offset: usize,
) {
    let oh = h - k + 1;
    let ow = w - k + 1;
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let base = row * pitch + offset;
                for oy in 0..oh {
                    let src = &plane[(oy + kh) * w + kw..(oy + kh) * w + kw + ow];
                    dst[base + oy * ow..base + (oy + 1) * ow].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

/// Scatter a [c*k*k, oh*ow] patch-gradient matrix back onto the image grid.
#[cfg(test)]
pub fn col2im(cols: &[f32], c: usize, h: usize, w: usize, k: usize) -> Vec<f32> {
    let oh = h - k + 1;
    let ow = w - k + 1;
    let mut x = vec![0.0f32; c * h * w];
    col2im_from(cols, c, h, w, k, &mut x, oh * ow, 0);
    x
}

/// col2im reading one image's segment (pitch/offset) of a shared
/// patch-gradient matrix, accumulating into `x`.
pub fn col2im_from(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    x: &mut [f32],
    pitch: usize,
    offset: usize,
) {
    let oh = h - k + 1;
    let ow = w - k + 1;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let base = row * pitch + offset;
                for oy in 0..oh {
                    let dst = &mut plane[(oy + kh) * w + kw..(oy + kh) * w + kw + ow];
                    for (d, &s) in dst.iter_mut().zip(&cols[base + oy * ow..base + (oy + 1) * ow]) {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// out[m,n] += A[m,k] * B[n,k]^T accumulated straight into an f64 buffer.
pub fn mm_nt_acc(acc: &mut [f64], a: &[f32], b: &[f32], m: usize, k: usize, n: usize) {
    debug_assert_eq!(acc.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            acc[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mm_nn_small() {
        // [[1,2],[3,4]] * [[5],[6]] = [[17],[39]]
        let c = mm_nn(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1);
        assert_eq!(c, vec![17.0, 39.0]);
    }

    #[test]
    fn dot_handles_tails() {
        // length 19 exercises both the 8-lane body and the tail
        let a: Vec<f32> = (0..19).map(|v| v as f32 * 0.25).collect();
        let b: Vec<f32> = (0..19).map(|v| (v as f32 - 9.0) * 0.5).collect();
        let want: f64 = a.iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum();
        assert!((dot(&a, &b) - want).abs() < 1e-9);
    }

    #[test]
    fn mm_variants_agree() {
        let a = [0.5, -1.0, 2.0, 0.25, 3.0, -0.75]; // [2,3]
        let b = [1.0, 2.0, -1.5, 0.5, 0.0, 4.0]; // [3,2]
        let nn = mm_nn(&a, &b, 2, 3, 2);
        // B^T laid out as [2,3]
        let bt = [1.0, -1.5, 0.0, 2.0, 0.5, 4.0];
        let nt = mm_nt(&a, &bt, 2, 3, 2);
        assert_eq!(nn, nt);
        // C[3,2] = A[2,3]^T * G[2,2]
        let g = [1.0, -2.0, 0.5, 3.0];
        let tn = mm_tn(&a, &g, 2, 3, 2);
        let mut want = vec![0.0f32; 6];
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for r in 0..2 {
                    s += a[r * 3 + i] as f64 * g[r * 2 + j] as f64;
                }
                want[i * 2 + j] = s as f32;
            }
        }
        assert_eq!(tn, want);
    }

    #[test]
    fn im2col_roundtrip_counts() {
        // col2im(im2col(x)) multiplies each pixel by its patch multiplicity.
        let x: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let cols = im2col(&x, 1, 3, 3, 2);
        assert_eq!(cols.len(), 4 * 4);
        let back = col2im(&cols, 1, 3, 3, 2);
        // corner pixels appear in exactly one 2x2 patch, center in four
        assert_eq!(back[0], x[0]);
        assert_eq!(back[4], 4.0 * x[4]);
    }

    #[test]
    fn stable_logistic_helpers() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-12);
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-12);
        assert!(softplus(1000.0).is_finite());
        assert!(sigmoid(-1000.0) >= 0.0);
    }
}
