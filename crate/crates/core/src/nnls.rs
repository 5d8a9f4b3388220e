//! Dense least squares and non-negative least squares for small systems.
//!
//! Sized for calibration problems with a handful of columns and at most a
//! few thousand rows. Solves use Householder QR; the non-negative solver is
//! the Lawson–Hanson active-set method.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged rows");
            m.data[i * cols..(i + 1) * cols].copy_from_slice(r);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column_norm(&self, j: usize) -> f64 {
        math::sqrt(
            (0..self.rows)
                .map(|i| self.get(i, j) * self.get(i, j))
                .sum(),
        )
    }

    /// Copy of the listed columns, in that order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            for (k, &j) in cols.iter().enumerate() {
                m.set(i, k, self.get(i, j));
            }
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `selfᵀ · y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j) * y[i]).sum())
            .collect()
    }
}

/// Householder QR with column pivoting, stored compactly.
struct PivotedQr {
    qr: Matrix,
    betas: Vec<f64>,
    perm: Vec<usize>,
}

fn pivoted_qr(a: &Matrix) -> PivotedQr {
    let (m, n) = (a.rows, a.cols);
    let mut qr = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut betas = Vec::with_capacity(n.min(m));
    for k in 0..n.min(m) {
        // Bring the column with the largest remaining norm to position k.
        let norm_below =
            |qr: &Matrix, j: usize| -> f64 { (k..m).map(|i| qr.get(i, j) * qr.get(i, j)).sum() };
        let best = (k..n)
            .max_by(|&x, &y| norm_below(&qr, x).total_cmp(&norm_below(&qr, y)))
            .unwrap_or(k);
        if best != k {
            for i in 0..m {
                let t = qr.get(i, k);
                qr.set(i, k, qr.get(i, best));
                qr.set(i, best, t);
            }
            perm.swap(k, best);
        }
        let norm = math::sqrt(norm_below(&qr, k));
        if norm == 0.0 {
            betas.push(0.0);
            continue;
        }
        let alpha = if qr.get(k, k) > 0.0 { -norm } else { norm };
        // Reflector v = x - alpha e1 is built in place in column k.
        let vk = qr.get(k, k) - alpha;
        qr.set(k, k, vk);
        let vtv: f64 = (k..m).map(|i| qr.get(i, k) * qr.get(i, k)).sum();
        let beta = 2.0 / vtv;
        for j in k + 1..n {
            let dot: f64 = (k..m).map(|i| qr.get(i, k) * qr.get(i, j)).sum();
            let f = beta * dot;
            for i in k..m {
                let v = qr.get(i, j) - f * qr.get(i, k);
                qr.set(i, j, v);
            }
        }
        betas.push(beta);
        // Keep the reflector in column k below the diagonal and park R_kk on
        // the diagonal after scaling the reflector so that v_k = 1.
        for i in k + 1..m {
            let v = qr.get(i, k) / vk;
            qr.set(i, k, v);
        }
        betas[k] = beta * vk * vk;
        qr.set(k, k, alpha);
    }
    PivotedQr { qr, betas, perm }
}

impl PivotedQr {
    fn diag(&self) -> Vec<f64> {
        (0..self.qr.cols.min(self.qr.rows))
            .map(|k| self.qr.get(k, k))
            .collect()
    }

    fn rank(&self, rel_tol: f64) -> usize {
        let d = self.diag();
        let top = d.first().map_or(0.0, |x| math::abs(*x));
        if top == 0.0 {
            return 0;
        }
        d.iter().filter(|x| math::abs(**x) > rel_tol * top).count()
    }

    /// Applies `Qᵀ` to `b` in place.
    fn apply_qt(&self, b: &mut [f64]) {
        let m = self.qr.rows;
        for (k, &beta) in self.betas.iter().enumerate() {
            if beta == 0.0 {
                continue;
            }
            let dot = b[k] + (k + 1..m).map(|i| self.qr.get(i, k) * b[i]).sum::<f64>();
            let f = beta * dot;
            b[k] -= f;
            for i in k + 1..m {
                b[i] -= f * self.qr.get(i, k);
            }
        }
    }
}

/// Relative threshold on `|R_kk| / |R_00|` below which a column counts as
/// dependent.
pub const RANK_TOL: f64 = 1e-10;

/// Numerical rank of `a`.
pub fn rank(a: &Matrix) -> usize {
    pivoted_qr(a).rank(RANK_TOL)
}

/// Least-squares solution of `a x ≈ b`; `None` when `a` is rank deficient
/// or has fewer rows than columns.
pub fn lstsq(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.cols;
    if a.rows < n || b.len() != a.rows {
        return None;
    }
    let f = pivoted_qr(a);
    if f.rank(RANK_TOL) < n {
        return None;
    }
    let mut qtb = b.to_vec();
    f.apply_qt(&mut qtb);
    let mut z = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| f.qr.get(k, j) * z[j]).sum();
        z[k] = (qtb[k] - s) / f.qr.get(k, k);
    }
    let mut x = vec![0.0; n];
    for (k, &p) in f.perm.iter().enumerate() {
        x[p] = z[k];
    }
    Some(x)
}

/// Non-negative least squares: minimize `‖a x − b‖` subject to `x ≥ 0`.
///
/// Returns the solution and the residual norm. Columns should be of
/// comparable scale; callers with badly scaled columns normalize first.
pub fn nnls(a: &Matrix, b: &[f64]) -> (Vec<f64>, f64) {
    let n = a.cols;
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let scale = b.iter().map(|v| math::abs(*v)).fold(0.0, f64::max).max(1.0);
    let tol = 1e-12 * scale * (a.rows.max(n) as f64);
    let max_outer = 3 * n + 10;

    let residual =
        |x: &[f64]| -> Vec<f64> { a.mul_vec(x).iter().zip(b).map(|(ax, b)| b - ax).collect() };

    for _ in 0..max_outer {
        let w = a.tr_mul_vec(&residual(&x));
        let Some(t) = (0..n)
            .filter(|&j| !passive[j] && !blocked[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]))
        else {
            break;
        };
        passive[t] = true;

        // Inner loop: keep the passive-set solution feasible.
        for _ in 0..=n {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(&idx);
            let Some(z) = lstsq(&sub, b) else {
                // Dependent column entered; exclude it for good.
                passive[t] = false;
                blocked[t] = true;
                break;
            };
            if z.iter().all(|&v| v > 0.0) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = z[k];
                }
                break;
            }
            let mut step = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let d = x[j] - z[k];
                    if d > 0.0 {
                        step = step.min(x[j] / d);
                    }
                }
            }
            if !step.is_finite() {
                step = 0.0;
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += step * (z[k] - x[j]);
            }
            let xmax = x.iter().fold(0.0, |m: f64, v| m.max(math::abs(*v)));
            for &j in &idx {
                if x[j] <= f64::EPSILON * xmax {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    let r = residual(&x);
    (x, math::sqrt(r.iter().map(|v| v * v).sum()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_square_system() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = lstsq(&a, &[3.0, 5.0]).unwrap();
        assert!(
            (x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14,
            "{x:?}"
        );
    }

    #[test]
    fn overdetermined_line_fit() {
        // y = 1 + 2t through five points
        let rows: Vec<_> = (0..5).map(|t| vec![1.0, t as f64]).collect();
        let b: Vec<_> = (0..5).map(|t| 1.0 + 2.0 * t as f64).collect();
        let x = lstsq(&Matrix::from_rows(&rows), &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-13 && (x[1] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn rank_deficiency_detected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]);
        assert_eq!(rank(&a), 1);
        assert!(lstsq(&a, &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn nnls_clamps_negative_component() {
        // Unconstrained solution is (2, -1); constrained optimum drops x1.
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let (x, _) = nnls(&a, &[2.0, -1.0, 1.0]);
        assert_eq!(x[1], 0.0);
        assert!((x[0] - 1.5).abs() < 1e-12, "{x:?}");
    }

    #[test]
    fn nnls_interior_solution_matches_lstsq() {
        let a = Matrix::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 2.0, 1.0],
            vec![1.0, 3.0, 0.0],
            vec![1.0, 4.0, 1.0],
        ]);
        let truth = [0.5, 1.5, 2.0];
        let b = a.mul_vec(&truth);
        let (x, res) = nnls(&a, &b);
        for (xi, ti) in x.iter().zip(truth) {
            assert!((xi - ti).abs() < 1e-12, "{x:?}");
        }
        assert!(res < 1e-12);
    }

    proptest! {
        #[test]
        fn nnls_is_feasible_and_not_worse_than_zero(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, 3), 4..10),
            b_seed in proptest::collection::vec(-5.0..5.0f64, 10),
        ) {
            let a = Matrix::from_rows(&rows);
            let b = &b_seed[..rows.len()];
            let (x, res) = nnls(&a, b);
            prop_assert!(x.iter().all(|v| *v >= 0.0));
            let zero_res = libm::sqrt(b.iter().map(|v| v * v).sum());
            prop_assert!(res <= zero_res + 1e-9);
            // KKT: gradient components on the zero set point outward.
            let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(ax, b)| b - ax).collect();
            let w = a.tr_mul_vec(&r);
            for (j, xj) in x.iter().enumerate() {
                if *xj == 0.0 {
                    prop_assert!(w[j] <= 1e-7, "w[{}] = {}", j, w[j]);
                }
            }
        }
    }
}
