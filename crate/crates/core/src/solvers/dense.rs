//! Small dense Cholesky kept in row-major lower-triangular storage; the inner
//! products run over contiguous slices.

/// Dot product with four partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factor the symmetric matrix `a` (row-major, only the lower triangle is
    /// read). Returns `None` if a pivot is not positive.
    pub fn new(mut a: Vec<f64>, n: usize) -> Option<Self> {
        for j in 0..n {
            let (head, tail) = a.split_at_mut(j * n);
            let row_j = &mut tail[..n];
            for i in 0..j {
                let row_i = &head[i * n..i * n + i];
                let s = dot(row_i, &row_j[..i]);
                row_j[i] = (row_j[i] - s) / head[i * n + i];
            }
            let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            row_j[j] = d.sqrt();
        }
        Some(Cholesky { n, l: a })
    }

    /// Factor with a growing diagonal shift until the factorization succeeds.
    pub fn new_regularized(a: Vec<f64>, n: usize) -> Option<Self> {
        if let Some(c) = Cholesky::new(a.clone(), n) {
            return Some(c);
        }
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(1e-300);
        let mut shift = 1e-14 * scale;
        for _ in 0..8 {
            let mut b = a.clone();
            for i in 0..n {
                b[i * n + i] += shift;
            }
            if let Some(c) = Cholesky::new(b, n) {
                return Some(c);
            }
            shift *= 100.0;
        }
        None
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&l[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let c = Cholesky::new(a.clone(), 3).unwrap();
        let x = c.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|k| a[i * 3 + k] * x[k]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        assert!(Cholesky::new(vec![1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
