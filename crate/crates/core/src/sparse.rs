use crate::{CMat, Complex64};

/// Compressed sparse row matrix, just enough for fast Liouvillian products.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Keep entries with modulus above `drop_tol`.
    pub fn from_dense(m: &CMat, drop_tol: f64) -> Self {
        let n = m.nrows();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..n {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.norm() > drop_tol {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = s·A·x
    pub fn matvec_scaled(&self, s: f64, x: &[Complex64], y: &mut [Complex64]) {
        for i in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[i] = acc * s;
        }
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.matvec_scaled(1.0, x, y)
    }

    /// Diagonal entries.
    pub fn diagonal(&self) -> Vec<Complex64> {
        let mut d = vec![Complex64::new(0.0, 0.0); self.n];
        for (i, di) in d.iter_mut().enumerate() {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if self.indices[k] == i {
                    *di = self.values[k];
                }
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn matches_dense_product(vals in proptest::collection::vec(-2.0f64..2.0, 2 * 49), x in proptest::collection::vec(-1.0f64..1.0, 14)) {
            let m = CMat::from_fn(7, 7, |i, j| {
                let k = 2 * (7 * i + j);
                if (i + 2 * j) % 3 == 0 { Complex64::new(0.0, 0.0) } else { Complex64::new(vals[k], vals[k + 1]) }
            });
            let xv: Vec<Complex64> = (0..7).map(|i| Complex64::new(x[2 * i], x[2 * i + 1])).collect();
            let csr = CsrMatrix::from_dense(&m, 0.0);
            let mut y = vec![Complex64::new(0.0, 0.0); 7];
            csr.matvec(&xv, &mut y);
            let want = &m * nalgebra::DVector::from_column_slice(&xv);
            for i in 0..7 {
                prop_assert!((y[i] - want[i]).norm() < 1e-12);
            }
        }
    }
}
