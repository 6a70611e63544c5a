use super::Real;

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a, T: Real> MatRef<'a, T> {
    /// Row-major `rows × cols` view.
    pub(crate) fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub(crate) fn strided(
        data: &'a [T],
        rows: usize,
        cols: usize,
        row_stride: usize,
        col_stride: usize,
    ) -> Self {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * row_stride + (cols - 1) * col_stride;
            assert!(last < data.len(), "matrix view exceeds its buffer");
        }
        MatRef {
            data,
            rows,
            cols,
            row_stride,
            col_stride,
        }
    }

    /// Transposed view of the same memory.
    pub(crate) fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `out = alpha * a * b + beta * out`, `out` row-major `a.rows × b.cols`.
pub(crate) fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v = beta * *v;
        }
        return;
    }
    // SAFETY: the views were bounds-checked on construction and `out` is a
    // distinct mutable slice of exactly m*n elements.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_views_multiply() {
        // a = [[1,2,3],[4,5,6]]; a * a^T = [[14,32],[32,77]]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 4];
        gemm(1.0, MatRef::new(&a, 2, 3), MatRef::new(&a, 2, 3).t(), 0.0, &mut out);
        assert_eq!(out, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn beta_accumulates() {
        let a = [1.0f32, 0.0, 0.0, 1.0];
        let b = [2.0f32, 3.0, 4.0, 5.0];
        let mut out = [1.0f32; 4];
        gemm(1.0, MatRef::new(&a, 2, 2), MatRef::new(&b, 2, 2), 1.0, &mut out);
        assert_eq!(out, [3.0, 4.0, 5.0, 6.0]);
    }
}
