//! Brute-force minimiser of `½‖x − v‖² + λ‖D x‖₁` for tiny `n`.
//!
//! Every sign pattern `s ∈ {−1, 0, +1}^m` of `D x` fixes a smooth problem:
//! minimise `½‖x − v‖² + λ sᵀ D x` subject to `D_z x = 0` on the zero rows.
//! The optimum's own pattern reproduces it exactly, and every other pattern
//! yields some feasible point, so the lowest true objective over all patterns
//! is the global optimum.

use nalgebra::{DMatrix, DVector};

pub fn diff_matrix(order: usize, n: usize) -> DMatrix<f64> {
    let c: &[f64] = if order == 1 { &[-1.0, 1.0] } else { &[1.0, -2.0, 1.0] };
    let m = n + 1 - c.len();
    DMatrix::from_fn(m, n, |i, j| if j >= i && j - i < c.len() { c[j - i] } else { 0.0 })
}

fn true_objective(d: &DMatrix<f64>, x: &DVector<f64>, v: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (x - v).norm_squared() + lambda * (d * x).abs().sum()
}

pub fn solve(order: usize, v: &[f64], lambda: f64) -> Vec<f64> {
    let n = v.len();
    let d = diff_matrix(order, n);
    let m = d.nrows();
    let vv = DVector::from_column_slice(v);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut s = vec![0i8; m];
        let mut c = code;
        for si in s.iter_mut() {
            *si = (c % 3) as i8 - 1;
            c /= 3;
        }
        let zero: Vec<usize> = (0..m).filter(|&i| s[i] == 0).collect();
        let mut rhs = vv.clone();
        for i in 0..m {
            if s[i] != 0 {
                rhs -= d.row(i).transpose() * (lambda * s[i] as f64);
            }
        }
        let k = zero.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).fill_with_identity();
        for (r, &i) in zero.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = d[(i, j)];
                kkt[(j, n + r)] = d[(i, j)];
            }
        }
        let mut b = DVector::zeros(n + k);
        b.rows_mut(0, n).copy_from(&rhs);
        let Some(sol) = kkt.lu().solve(&b) else { continue };
        let x = sol.rows(0, n).into_owned();
        let f = true_objective(&d, &x, &vv, lambda);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.expect("the all-zero pattern always solves").1.as_slice().to_vec()
}
