//! Safe wrapper around the blocked matrix product used by training.

use crate::scalar::Scalar;

/// Row-major operand. `transposed` means the buffer holds the transpose of
/// the logical matrix.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    pub data: &'a [T],
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn n(data: &'a [T]) -> Self {
        Mat {
            data,
            transposed: false,
        }
    }

    pub fn t(data: &'a [T]) -> Self {
        Mat {
            data,
            transposed: true,
        }
    }

    /// Row and column strides of the logical `rows x cols` matrix.
    fn strides(&self, rows: usize, cols: usize) -> (isize, isize) {
        if self.transposed {
            (1, rows as isize)
        } else {
            (cols as isize, 1)
        }
    }
}

/// `c = a b + beta c` where `a` is `m x k`, `b` is `k x n` and `c` is a
/// row-major `m x n` buffer.
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: Mat<T>, b: Mat<T>, beta: T, c: &mut [T]) {
    assert!(a.data.len() >= m * k, "left operand too short");
    assert!(b.data.len() >= k * n, "right operand too short");
    assert!(c.len() >= m * n, "output too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides(m, k);
    let (rsb, csb) = b.strides(k, n);
    // SAFETY: with these strides the largest index touched is m*k-1, k*n-1
    // and m*n-1 respectively, all checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_products() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, Mat::n(&a), Mat::n(&b), 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ a with a stored row-major
        let mut g = [0.0f32; 9];
        let af: Vec<f32> = a.iter().map(|&v| v as f32).collect();
        gemm(3, 2, 3, Mat::t(&af), Mat::n(&af), 0.0, &mut g);
        assert_eq!(g, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        let mut acc = [1.0; 4];
        gemm(2, 3, 2, Mat::n(&a), Mat::n(&b), 1.0, &mut acc);
        assert_eq!(acc, [5.0, 6.0, 11.0, 12.0]);
    }
}
