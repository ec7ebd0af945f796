//! Minimal dense symmetric-matrix support: Cholesky factorization and
//! SPD inversion. Dimensions here are the number of monitored syscall
//! types (tens at most), so plain loops over row-major storage are fine.

/// Dense symmetric matrix, row-major, `dim * dim` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), dim, "matrix rows must be square");
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        SymMatrix { dim, data }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.dim {
            let cur = self.get(i, i);
            self.set(i, i, cur + v);
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Lower-triangular Cholesky factor L with A = L L^T, or None if the
    /// matrix is not positive definite. A 0x0 matrix factors trivially.
    pub fn cholesky(&self) -> Option<Vec<f64>> {
        let n = self.dim;
        let mut l = vec![0.0f64; n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l[j * n + j] = dj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / dj;
            }
        }
        Some(l)
    }

    /// Inverse of a symmetric positive-definite matrix via its Cholesky
    /// factor: A^-1 = L^-T L^-1. The result is symmetric by construction.
    pub fn inverse_spd(&self) -> Option<SymMatrix> {
        let n = self.dim;
        let l = self.cholesky()?;
        // Invert the lower-triangular factor by forward substitution.
        let mut b = vec![0.0f64; n * n];
        for j in 0..n {
            b[j * n + j] = 1.0 / l[j * n + j];
            for i in (j + 1)..n {
                let mut s = 0.0;
                for k in j..i {
                    s += l[i * n + k] * b[k * n + j];
                }
                b[i * n + j] = -s / l[i * n + i];
            }
        }
        // A^-1[i][j] = sum_k B[k][i] * B[k][j], k >= max(i, j).
        let mut inv = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in j..n {
                    s += b[k * n + i] * b[k * n + j];
                }
                inv.set(i, j, s);
                inv.set(j, i, s);
            }
        }
        Some(inv)
    }
}
