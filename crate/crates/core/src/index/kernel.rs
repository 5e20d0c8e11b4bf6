//! Dot products of a set of rows against one or more query vectors.
//!
//! Rows are stored in blocks of [`LANES`] rows laid out dimension-major, so a
//! single vector register holds component `d` of sixteen rows. Each query
//! component is broadcast and multiplied into that register, which yields
//! sixteen finished scores per accumulator with no horizontal reductions.
//! The x86-64 paths are selected at runtime (AVX-512F, then AVX2+FMA).

/// Rows per block.
pub const LANES: usize = 16;

/// Blocks per cache tile on the AVX2 path: every query group of a batch is
/// run over one tile before moving to the next.
#[cfg(target_arch = "x86_64")]
const TILE_BLOCKS: usize = 8;

/// Row-blocked copy of a row-major matrix. Block `b` holds rows
/// `16b..16b+16`; element `(b * dim + d) * 16 + l` is component `d` of row
/// `16b + l`. Rows past the end of the last block are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockedMatrix {
    dim: usize,
    rows: usize,
    data: Vec<f32>,
}

impl BlockedMatrix {
    /// A zero matrix of `rows` rows.
    pub fn zeros(dim: usize, rows: usize) -> Self {
        Self { dim, rows, data: vec![0.0; rows.div_ceil(LANES) * dim * LANES] }
    }

    pub fn from_row_major(data: &[f32], dim: usize) -> Self {
        let rows = if dim == 0 { 0 } else { data.len() / dim };
        assert_eq!(data.len(), rows * dim, "matrix is not a whole number of rows");
        let mut m = Self::zeros(dim, rows);
        for (i, row) in data.chunks_exact(dim.max(1)).enumerate().take(rows) {
            m.set_row(i, row);
        }
        m
    }

    pub fn set_row(&mut self, i: usize, values: &[f32]) {
        assert!(i < self.rows && values.len() == self.dim);
        let base = (i / LANES) * self.dim * LANES + i % LANES;
        for (d, &v) in values.iter().enumerate() {
            self.data[base + d * LANES] = v;
        }
    }

    pub fn row(&self, i: usize) -> Vec<f32> {
        assert!(i < self.rows);
        let base = (i / LANES) * self.dim * LANES + i % LANES;
        (0..self.dim).map(|d| self.data[base + d * LANES]).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn blocks(&self) -> usize {
        self.rows.div_ceil(LANES)
    }
}

/// `out[q * rows + r] = <row r, queries[q]>`.
pub fn dot_rows_batch(matrix: &BlockedMatrix, queries: &[&[f32]], out: &mut [f32]) {
    let rows = matrix.rows;
    assert_eq!(out.len(), rows * queries.len(), "output buffer has wrong size");
    assert!(queries.iter().all(|q| q.len() == matrix.dim), "query dimension mismatch");
    if rows == 0 || queries.is_empty() {
        return;
    }

    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the CPU supports AVX-512F and all slices were length-checked above.
            unsafe { avx512::run(matrix, queries, out) };
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: as above, for AVX2 + FMA.
            unsafe { avx2::run(matrix, queries, out) };
            return;
        }
    }
    portable(matrix, queries, out);
}

pub fn dot_rows(matrix: &BlockedMatrix, query: &[f32], out: &mut [f32]) {
    dot_rows_batch(matrix, &[query], out);
}

/// Name of the kernel chosen on this machine.
pub fn kernel_name() -> &'static str {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            return "avx512f";
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            return "avx2+fma";
        }
    }
    "portable"
}

/// Writes the valid rows of one block's scores.
fn store_block(scores: &[f32; LANES], block: usize, rows: usize, out: &mut [f32]) {
    let r0 = block * LANES;
    let n = (rows - r0).min(LANES);
    out[r0..r0 + n].copy_from_slice(&scores[..n]);
}

fn portable(matrix: &BlockedMatrix, queries: &[&[f32]], out: &mut [f32]) {
    let (dim, rows) = (matrix.dim, matrix.rows);
    for b in 0..matrix.blocks() {
        let block = &matrix.data[b * dim * LANES..(b + 1) * dim * LANES];
        for (qi, q) in queries.iter().enumerate() {
            let mut acc = [0f32; LANES];
            for (d, &x) in q.iter().enumerate() {
                let col = &block[d * LANES..(d + 1) * LANES];
                for l in 0..LANES {
                    acc[l] += col[l] * x;
                }
            }
            store_block(&acc, b, rows, &mut out[qi * rows..(qi + 1) * rows]);
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use super::{BlockedMatrix, LANES};
    use std::arch::x86_64::*;

    const MAX_Q: usize = 8;

    /// Each pair of blocks stays in cache while every query group runs over
    /// it. Meanwhile the next pair is prefetched, one slice of its
    /// dimensions per query group, so memory traffic overlaps the arithmetic.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn run(matrix: &BlockedMatrix, queries: &[&[f32]], out: &mut [f32]) {
        let blocks = matrix.blocks();
        let dim = matrix.dim;
        let groups = queries.len().div_ceil(MAX_Q);
        let mut b = 0;
        while b < blocks {
            let width = if b + 2 <= blocks { 2 } else { 1 };
            let next = b + width;
            for g in 0..groups {
                let q0 = g * MAX_Q;
                let group = &queries[q0..(q0 + MAX_Q).min(queries.len())];
                let prefetch = (next < blocks).then(|| {
                    let lo = dim * g / groups;
                    let hi = dim * (g + 1) / groups;
                    (next, (blocks - next).min(2), lo, hi)
                });
                if width == 2 {
                    dispatch::<2>(matrix, b, group, q0, prefetch, out);
                } else {
                    dispatch::<1>(matrix, b, group, q0, prefetch, out);
                }
            }
            b = next;
        }
    }

    type Prefetch = Option<(usize, usize, usize, usize)>;

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn dispatch<const B: usize>(
        m: &BlockedMatrix,
        b0: usize,
        group: &[&[f32]],
        q0: usize,
        pf: Prefetch,
        out: &mut [f32],
    ) {
        match group.len() {
            8 => micro::<B, 8>(m, b0, group, q0, pf, out),
            7 => micro::<B, 7>(m, b0, group, q0, pf, out),
            6 => micro::<B, 6>(m, b0, group, q0, pf, out),
            5 => micro::<B, 5>(m, b0, group, q0, pf, out),
            4 => micro::<B, 4>(m, b0, group, q0, pf, out),
            3 => micro::<B, 3>(m, b0, group, q0, pf, out),
            2 => micro::<B, 2>(m, b0, group, q0, pf, out),
            _ => micro::<B, 1>(m, b0, group, q0, pf, out),
        }
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn step<const B: usize, const Q: usize>(
        acc: &mut [[__m512; Q]; B],
        base: &[*const f32; B],
        qp: &[*const f32; Q],
        d: usize,
    ) {
        let mut mv = [_mm512_setzero_ps(); B];
        for i in 0..B {
            mv[i] = _mm512_loadu_ps(base[i].add(d * LANES));
        }
        for j in 0..Q {
            let qb = _mm512_set1_ps(*qp[j].add(d));
            for i in 0..B {
                acc[i][j] = _mm512_fmadd_ps(mv[i], qb, acc[i][j]);
            }
        }
    }

    #[inline]
    #[target_feature(enable = "avx512f")]
    unsafe fn micro<const B: usize, const Q: usize>(
        m: &BlockedMatrix,
        b0: usize,
        group: &[&[f32]],
        q0: usize,
        pf: Prefetch,
        out: &mut [f32],
    ) {
        let (dim, rows) = (m.dim, m.rows);
        let block_len = dim * LANES;
        let mut acc = [[_mm512_setzero_ps(); Q]; B];
        let mut base = [m.data.as_ptr(); B];
        for (i, p) in base.iter_mut().enumerate() {
            *p = m.data.as_ptr().add((b0 + i) * block_len);
        }
        let mut qp = [std::ptr::null::<f32>(); Q];
        for (j, p) in qp.iter_mut().enumerate() {
            *p = group[j].as_ptr();
        }
        let (lo, hi) = match pf {
            Some((_, _, lo, hi)) => (lo, hi),
            None => (dim, dim),
        };
        for d in 0..lo {
            step(&mut acc, &base, &qp, d);
        }
        if let Some((next, count, _, _)) = pf {
            let pbase = m.data.as_ptr().add(next * block_len);
            for d in lo..hi {
                for k in 0..count {
                    _mm_prefetch::<_MM_HINT_T1>(pbase.add(k * block_len + d * LANES) as *const i8);
                }
                step(&mut acc, &base, &qp, d);
            }
        }
        for d in hi.max(lo)..dim {
            step(&mut acc, &base, &qp, d);
        }
        for i in 0..B {
            let r0 = (b0 + i) * LANES;
            let valid = (rows - r0).min(LANES);
            let mask: __mmask16 = if valid == LANES { 0xFFFF } else { ((1u32 << valid) - 1) as __mmask16 };
            for j in 0..Q {
                let dst = out.as_mut_ptr().add((q0 + j) * rows + r0);
                _mm512_mask_storeu_ps(dst, mask, acc[i][j]);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::{store_block, BlockedMatrix, LANES, TILE_BLOCKS};
    use std::arch::x86_64::*;

    const MAX_Q: usize = 6;

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn run(matrix: &BlockedMatrix, queries: &[&[f32]], out: &mut [f32]) {
        let blocks = matrix.blocks();
        for tile in (0..blocks).step_by(TILE_BLOCKS) {
            let tile_end = (tile + TILE_BLOCKS).min(blocks);
            let mut qi = 0;
            while qi < queries.len() {
                let qn = (queries.len() - qi).min(MAX_Q);
                let group = &queries[qi..qi + qn];
                for b in tile..tile_end {
                    match qn {
                        6 => micro::<6>(matrix, b, group, qi, out),
                        5 => micro::<5>(matrix, b, group, qi, out),
                        4 => micro::<4>(matrix, b, group, qi, out),
                        3 => micro::<3>(matrix, b, group, qi, out),
                        2 => micro::<2>(matrix, b, group, qi, out),
                        _ => micro::<1>(matrix, b, group, qi, out),
                    }
                }
                qi += qn;
            }
        }
    }

    #[inline]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn micro<const Q: usize>(m: &BlockedMatrix, b: usize, group: &[&[f32]], q0: usize, out: &mut [f32]) {
        let (dim, rows) = (m.dim, m.rows);
        let mut lo = [_mm256_setzero_ps(); Q];
        let mut hi = [_mm256_setzero_ps(); Q];
        let base = m.data.as_ptr().add(b * dim * LANES);
        let mut qp = [std::ptr::null::<f32>(); Q];
        for (j, p) in qp.iter_mut().enumerate() {
            *p = group[j].as_ptr();
        }
        for d in 0..dim {
            let a = _mm256_loadu_ps(base.add(d * LANES));
            let c = _mm256_loadu_ps(base.add(d * LANES + 8));
            for j in 0..Q {
                let qb = _mm256_set1_ps(*qp[j].add(d));
                lo[j] = _mm256_fmadd_ps(a, qb, lo[j]);
                hi[j] = _mm256_fmadd_ps(c, qb, hi[j]);
            }
        }
        let mut buf = [0f32; LANES];
        for j in 0..Q {
            _mm256_storeu_ps(buf.as_mut_ptr(), lo[j]);
            _mm256_storeu_ps(buf.as_mut_ptr().add(8), hi[j]);
            store_block(&buf, b, rows, &mut out[(q0 + j) * rows..(q0 + j + 1) * rows]);
        }
    }
}
