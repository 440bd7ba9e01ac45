//! Dense complex linear algebra for the factorization oracle: row-major
//! storage, partial-pivot LU. Kept dependency-free so the hot loops stay flat
//! over contiguous slices.

use num_complex::Complex64;

use crate::error::{Error, Result};

type C = Complex64;

#[derive(Debug, Clone)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<C>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![C::ZERO; n * n] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> C {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut C {
        &mut self.data[r * self.n + c]
    }

    pub fn matvec(&self, x: &[C]) -> Vec<C> {
        let n = self.n;
        let mut y = vec![C::ZERO; n];
        for (yr, row) in y.iter_mut().zip(self.data.chunks_exact(n)) {
            let mut acc = C::ZERO;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yr = acc;
        }
        y
    }
}

/// Partial-pivot LU factorization; consumes the matrix storage.
pub struct DenseLu {
    n: usize,
    lu: Vec<C>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factor(m: DenseMatrix) -> Result<DenseLu> {
        let n = m.n;
        let mut a = m.data;
        let mut perm: Vec<usize> = (0..n).collect();
        let scale: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() / (n as f64);
        let tiny = 1e-14 * scale.max(1e-300);
        for col in 0..n {
            // pivot search
            let (piv, mag) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            if mag < tiny {
                return Err(Error::Singular(mag));
            }
            if piv != col {
                perm.swap(piv, col);
                for k in 0..n {
                    a.swap(piv * n + k, col * n + k);
                }
            }
            let inv = C::ONE / a[col * n + col];
            // split the storage so the pivot row can be borrowed immutably
            let (top, bottom) = a.split_at_mut((col + 1) * n);
            let prow = &top[col * n + col + 1..col * n + n];
            for row in bottom.chunks_exact_mut(n) {
                let f = row[col] * inv;
                row[col] = f;
                if f.norm_sqr() == 0.0 {
                    continue;
                }
                for (x, p) in row[col + 1..n].iter_mut().zip(prow) {
                    *x -= f * p;
                }
            }
        }
        Ok(DenseLu { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[C]) -> Vec<C> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<C> = self.perm.iter().map(|&p| b[p]).collect();
        // forward substitution (unit lower)
        for r in 1..n {
            let mut acc = x[r];
            let row = &self.lu[r * n..r * n + r];
            for (l, xv) in row.iter().zip(&x[..r]) {
                acc -= l * xv;
            }
            x[r] = acc;
        }
        // back substitution
        for r in (0..n).rev() {
            let mut acc = x[r];
            let row = &self.lu[r * n + r + 1..(r + 1) * n];
            for (u, xv) in row.iter().zip(&x[r + 1..]) {
                acc -= u * xv;
            }
            x[r] = acc / self.lu[r * n + r];
        }
        x
    }
}
