//! Safe strided wrapper around `matrixmultiply::dgemm`.

pub(crate) struct Mat<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> Mat<'a> {
    /// Row-major view with leading dimension `ld` (elements between rows).
    pub fn row_major(data: &'a [f64], ld: usize) -> Self {
        Mat { data, rs: ld, cs: 1 }
    }

    /// Transposed view of a row-major matrix with leading dimension `ld`.
    pub fn col_major(data: &'a [f64], ld: usize) -> Self {
        Mat { data, rs: 1, cs: ld }
    }

    fn span(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

pub(crate) struct MatMut<'a> {
    data: &'a mut [f64],
    rs: usize,
}

impl<'a> MatMut<'a> {
    pub fn row_major(data: &'a mut [f64], ld: usize) -> Self {
        MatMut { data, rs: ld }
    }
}

/// `c ← alpha · a·b + beta · c` with `a` m×k, `b` k×n, `c` m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: Mat<'_>,
    b: Mat<'_>,
    beta: f64,
    c: MatMut<'_>,
) {
    assert!(a.data.len() >= a.span(m, k), "gemm: lhs too short");
    assert!(b.data.len() >= b.span(k, n), "gemm: rhs too short");
    let c_span = if m == 0 || n == 0 { 0 } else { (m - 1) * c.rs + n };
    assert!(c.data.len() >= c_span, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every element the kernel reads or writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            1,
        );
    }
}
