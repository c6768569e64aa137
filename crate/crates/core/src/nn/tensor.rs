//! Dense row-major `f64` tensors.

use super::NnError;

/// A dense array with shape metadata. Entries are stored row-major.
///
/// Most of the network code only deals with rank-1 and rank-2 tensors; a
/// rank-1 tensor of length `n` is treated as a `[1, n]` row where a matrix is
/// expected.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(NnError::BadShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {:?} needs {} entries, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `[rows, cols]` matrix from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a `[1, n]` row vector.
    pub fn row(data: Vec<f64>) -> Result<Self, NnError> {
        let n = data.len();
        Self::new(vec![1, n], data)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor shape is never empty")
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copies rows `start..end` of a matrix view.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let cols = self.cols();
        Tensor::from_parts_unchecked(
            vec![end - start, cols],
            self.data[start * cols..end * cols].to_vec(),
        )
    }
}

// Dense kernels. Each output element accumulates its terms in a fixed
// order (increasing inner index), independent of blocking and of the SIMD
// width chosen at runtime, so results are bit-identical across machines.
// Columns are processed in register-sized strips of `LANES` accumulators.
// Every multiply-add is fused (`mul_add`), so the AVX2+FMA path and the
// portable path round identically and results do not depend on the CPU.

const LANES: usize = 8;
const ROW_BLOCK: usize = 32;

#[cfg(target_arch = "x86_64")]
pub(crate) fn has_fma() -> bool {
    std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
}

/// `out[rows, n] += a[rows, k] · b[k, n]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], rows: usize, k: usize, n: usize) {
    assert!(
        a.len() >= rows * k && b.len() >= k * n && out.len() >= rows * n,
        "matmul operand too short"
    );
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: the CPU supports AVX2 and FMA, checked just above.
        unsafe { simd::matmul_acc(a, b, out, rows, k, n) };
        return;
    }
    matmul_acc_body(a, b, out, rows, k, n);
}

/// `out[rows, k] += g[rows, n] · bᵀ` where `b` is `[k, n]`.
pub(crate) fn matmul_bt_acc(
    g: &[f64],
    b: &[f64],
    out: &mut [f64],
    rows: usize,
    k: usize,
    n: usize,
) {
    assert!(
        g.len() >= rows * n && b.len() >= k * n && out.len() >= rows * k,
        "matmul operand too short"
    );
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: as above.
        unsafe { simd::matmul_bt_acc(g, b, out, rows, k, n) };
        return;
    }
    matmul_bt_acc_body(g, b, out, rows, k, n);
}

/// `out[k, n] += aᵀ · g` where `a` is `[rows, k]` and `g` is `[rows, n]`.
pub(crate) fn matmul_at_acc(
    a: &[f64],
    g: &[f64],
    out: &mut [f64],
    rows: usize,
    k: usize,
    n: usize,
) {
    assert!(
        a.len() >= rows * k && g.len() >= rows * n && out.len() >= k * n,
        "matmul operand too short"
    );
    #[cfg(target_arch = "x86_64")]
    if has_fma() {
        // SAFETY: as above.
        unsafe { simd::matmul_at_acc(a, g, out, rows, k, n) };
        return;
    }
    matmul_at_acc_body(a, g, out, rows, k, n);
}

#[cfg(target_arch = "x86_64")]
mod simd {
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matmul_acc(
        a: &[f64],
        b: &[f64],
        out: &mut [f64],
        rows: usize,
        k: usize,
        n: usize,
    ) {
        super::matmul_acc_body(a, b, out, rows, k, n)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matmul_bt_acc(
        g: &[f64],
        b: &[f64],
        out: &mut [f64],
        rows: usize,
        k: usize,
        n: usize,
    ) {
        super::matmul_bt_acc_body(g, b, out, rows, k, n)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matmul_at_acc(
        a: &[f64],
        g: &[f64],
        out: &mut [f64],
        rows: usize,
        k: usize,
        n: usize,
    ) {
        super::matmul_at_acc_body(a, g, out, rows, k, n)
    }
}

/// `acc[l] += coef · src[l]` over one strip.
///
/// # Safety
/// `src` must point at `W` readable values.
#[inline(always)]
unsafe fn axpy_strip<const W: usize>(acc: &mut [f64; W], coef: f64, src: *const f64) {
    for (l, a) in acc.iter_mut().enumerate() {
        *a = coef.mul_add(*src.add(l), *a);
    }
}

// The bodies index through raw pointers; the public wrappers check every
// operand length once up front.
//
// Each output element is a chain of fused multiply-adds in `p` order no
// matter how wide the strip is; wide strips only keep more independent
// chains in flight.

/// Columns `j..j + W` of `out_row += Σ_p coef(p) · src(p)`.
///
/// # Safety
/// For every `p < count`, `coef(p)` and `src(p) + j .. + W` must be valid.
#[inline(always)]
unsafe fn strip_chain<const W: usize>(
    out_row: &mut [f64],
    j: usize,
    count: usize,
    coef: impl Fn(usize) -> f64,
    src: impl Fn(usize) -> *const f64,
) {
    let mut acc: [f64; W] = out_row[j..j + W].try_into().expect("strip width");
    for p in 0..count {
        axpy_strip(&mut acc, coef(p), src(p).add(j));
    }
    out_row[j..j + W].copy_from_slice(&acc);
}

/// Walks `out_row` in strips of `WIDE`, then `LANES`, then single columns.
///
/// # Safety
/// As for [`strip_chain`], over every column of `out_row`.
#[inline(always)]
unsafe fn row_chains(
    out_row: &mut [f64],
    count: usize,
    coef: impl Fn(usize) -> f64 + Copy,
    src: impl Fn(usize) -> *const f64 + Copy,
) {
    let n = out_row.len();
    let mut j = 0;
    while j + WIDE <= n {
        strip_chain::<WIDE>(out_row, j, count, coef, src);
        j += WIDE;
    }
    while j + LANES <= n {
        strip_chain::<LANES>(out_row, j, count, coef, src);
        j += LANES;
    }
    while j < n {
        strip_chain::<1>(out_row, j, count, coef, src);
        j += 1;
    }
}

const WIDE: usize = 4 * LANES;

#[inline(always)]
fn matmul_acc_body(a: &[f64], b: &[f64], out: &mut [f64], rows: usize, k: usize, n: usize) {
    let (a, b) = (a.as_ptr(), b.as_ptr());
    for i in 0..rows {
        // SAFETY: i < rows, p < k, every column < n.
        unsafe {
            row_chains(
                &mut out[i * n..(i + 1) * n],
                k,
                |p| *a.add(i * k + p),
                |p| b.add(p * n),
            );
        }
    }
}

#[inline(always)]
fn matmul_bt_acc_body(g: &[f64], b: &[f64], out: &mut [f64], rows: usize, k: usize, n: usize) {
    for i in 0..rows {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(g_row, &b[p * n..(p + 1) * n]);
        }
    }
}

#[inline(always)]
fn matmul_at_acc_body(a: &[f64], g: &[f64], out: &mut [f64], rows: usize, k: usize, n: usize) {
    let (a, g) = (a.as_ptr(), g.as_ptr());
    let mut start = 0;
    while start < rows {
        let count = ROW_BLOCK.min(rows - start);
        for p in 0..k {
            // SAFETY: start + i < rows, p < k, every column < n.
            unsafe {
                row_chains(
                    &mut out[p * n..(p + 1) * n],
                    count,
                    |i| *a.add((start + i) * k + p),
                    |i| g.add((start + i) * n),
                );
            }
        }
        start += count;
    }
}

/// Dot product with `LANES` interleaved partial sums, combined pairwise.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let strips = a.len() / LANES;
    for s in 0..strips {
        let j = s * LANES;
        let x: &[f64; LANES] = a[j..j + LANES].try_into().expect("strip width");
        let y: &[f64; LANES] = b[j..j + LANES].try_into().expect("strip width");
        for l in 0..LANES {
            acc[l] = x[l].mul_add(y[l], acc[l]);
        }
    }
    let mut tail = 0.0;
    for j in strips * LANES..a.len() {
        tail = a[j].mul_add(b[j], tail);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
