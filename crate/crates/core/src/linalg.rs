//! Dense row-major matrix kernels on top of `matrixmultiply`.

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows × cols` matrix starting at `data[0]`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        View {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Sub-block of a row-major matrix with leading dimension `ld`.
    pub fn strided(data: &'a [f64], rows: usize, cols: usize, ld: usize) -> Self {
        View {
            data,
            rows,
            cols,
            row_stride: ld,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `out = beta·out + a·b`, where `out` is a row-major block with leading
/// dimension `ld_out`.
pub fn gemm_into(a: View, b: View, out: &mut [f64], ld_out: usize, beta: f64) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    a.check();
    b.check();
    assert!(
        (m - 1) * ld_out + n <= out.len(),
        "output block out of bounds"
    );
    if k == 0 {
        for i in 0..m {
            for v in &mut out[i * ld_out..i * ld_out + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: the bounds of every operand were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            ld_out as isize,
            1,
        );
    }
}

/// `a·b` as a fresh row-major matrix.
pub fn matmul(a: View, b: View) -> Vec<f64> {
    let mut out = vec![0.0; a.rows * b.cols];
    gemm_into(a, b, &mut out, b.cols, 0.0);
    out
}

/// `y = x·w + bias` for `x: rows × in_dim`, `w: in_dim × out_dim`.
pub fn affine(
    x: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f64],
    bias: &[f64],
    out_dim: usize,
) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * out_dim);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    gemm_into(
        View::new(x, rows, in_dim),
        View::new(w, in_dim, out_dim),
        &mut y,
        out_dim,
        1.0,
    );
    y
}

/// Gradients of [`affine`]: accumulates `dW += xᵀ·dy` and `db += Σ dy` and
/// returns `dx = dy·wᵀ` when requested.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward(
    x: &[f64],
    rows: usize,
    in_dim: usize,
    w: &[f64],
    out_dim: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm_into(
        View::new(x, rows, in_dim).t(),
        View::new(dy, rows, out_dim),
        dw,
        out_dim,
        1.0,
    );
    for row in dy.chunks_exact(out_dim) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    want_dx.then(|| {
        matmul(
            View::new(dy, rows, out_dim),
            View::new(w, in_dim, out_dim).t(),
        )
    })
}
