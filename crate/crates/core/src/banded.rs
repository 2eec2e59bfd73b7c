//! Banded LU factorization with partial pivoting.
//!
//! Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl`
//! super-diagonals hold the fill produced by row interchanges.

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    stride: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let stride = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            stride,
            data: vec![0.0; n * stride],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.stride + (j + self.kl - i)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.kl + self.ku && j < self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.offset(i, j)]
        } else {
            0.0
        }
    }

    /// Sets an entry inside the nominal band `[-kl, ku]`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    /// Factors in place. Returns `None` when a pivot is below `tiny`.
    pub fn factor(mut self, tiny: f64) -> Option<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return None;
            }
            piv[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.offset(k, j);
                    let b = if self.in_band(p, j) { Some(self.offset(p, j)) } else { None };
                    match b {
                        Some(b) => self.data.swap(a, b),
                        None => {
                            // p's row has no storage left of its band; entries are zero there
                            self.data[a] = 0.0;
                        }
                    }
                }
            }
            let d = self.data[self.offset(k, k)];
            for i in k + 1..=last_row {
                let oik = self.offset(i, k);
                let m = self.data[oik] / d;
                self.data[oik] = m;
                if m == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let ukj = self.data[self.offset(k, j)];
                    if ukj != 0.0 {
                        let oij = self.offset(i, j);
                        self.data[oij] -= m * ukj;
                    }
                }
            }
        }
        Some(BandedLu { lu: self, piv })
    }
}

/// Factorization `A = P0 L0 P1 L1 ... U` in LAPACK `gbtrf` form.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedLu {
    lu: BandedMatrix,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    /// Solves `A X = B` for `R` right-hand sides stored row-wise.
    pub fn solve<const R: usize>(&self, b: &mut [[f64; R]]) {
        let n = self.lu.n;
        let kl = self.lu.kl;
        let ubw = self.lu.kl + self.lu.ku;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                let m = self.lu.data[self.lu.offset(i, k)];
                if m != 0.0 {
                    for r in 0..R {
                        b[i][r] -= m * bk[r];
                    }
                }
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..=(k + ubw).min(n - 1) {
                let u = self.lu.data[self.lu.offset(k, j)];
                if u != 0.0 {
                    for r in 0..R {
                        acc[r] -= u * b[j][r];
                    }
                }
            }
            let d = self.lu.data[self.lu.offset(k, k)];
            for r in 0..R {
                b[k][r] = acc[r] / d;
            }
        }
    }

    /// Solves `A^T X = B`.
    pub fn solve_transpose<const R: usize>(&self, b: &mut [[f64; R]]) {
        let n = self.lu.n;
        let kl = self.lu.kl;
        let ubw = self.lu.kl + self.lu.ku;
        assert_eq!(b.len(), n);
        // U^T z = b
        for k in 0..n {
            let mut acc = b[k];
            for i in k.saturating_sub(ubw)..k {
                let u = self.lu.data[self.lu.offset(i, k)];
                if u != 0.0 {
                    for r in 0..R {
                        acc[r] -= u * b[i][r];
                    }
                }
            }
            let d = self.lu.data[self.lu.offset(k, k)];
            for r in 0..R {
                b[k][r] = acc[r] / d;
            }
        }
        // apply (P_k L_k)^{-T} from the last elimination step backwards
        for k in (0..n).rev() {
            let mut acc = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                let m = self.lu.data[self.lu.offset(i, k)];
                if m != 0.0 {
                    for r in 0..R {
                        acc[r] -= m * b[i][r];
                    }
                }
            }
            b[k] = acc;
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }
}
