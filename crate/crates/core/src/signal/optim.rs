//! ℓ1 trend filtering and total-variation denoising.
//!
//! Both minimise `½‖x − v‖² + λ‖D x‖₁` for a difference operator `D` of order
//! 1 (TV) or 2 (ℓ1 trend). We solve the box-constrained dual
//!
//! ```text
//! minimise ½ zᵀ(D Dᵀ)z − (D v)ᵀ z   subject to  −λ ≤ z ≤ λ,   x = v − Dᵀz
//! ```
//!
//! with a primal-dual interior point method whose Newton systems are banded,
//! then polish the result by solving the equality-constrained system on the
//! identified active set, which makes the answer exact up to rounding.

use super::{Series, SignalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferenceOrder {
    First,
    Second,
}

impl DifferenceOrder {
    fn coeffs(self) -> &'static [f64] {
        match self {
            DifferenceOrder::First => &[-1.0, 1.0],
            DifferenceOrder::Second => &[1.0, -2.0, 1.0],
        }
    }

    fn bandwidth(self) -> usize {
        self.coeffs().len() - 1
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Duality-gap target, relative to `1 + |primal objective|`.
    pub gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gap_tol: 1e-12,
        }
    }
}

fn apply_d(order: DifferenceOrder, x: &[f64]) -> Vec<f64> {
    let c = order.coeffs();
    let m = x.len() + 1 - c.len();
    (0..m)
        .map(|i| c.iter().enumerate().map(|(j, cj)| cj * x[i + j]).sum())
        .collect()
}

fn apply_dt(order: DifferenceOrder, z: &[f64], n: usize) -> Vec<f64> {
    let c = order.coeffs();
    let mut out = vec![0.0; n];
    for (i, zi) in z.iter().enumerate() {
        for (j, cj) in c.iter().enumerate() {
            out[i + j] += cj * zi;
        }
    }
    out
}

/// Objective `½‖x − v‖² + λ‖D x‖₁`.
pub fn objective(order: DifferenceOrder, x: &[f64], v: &[f64], lambda: f64) -> f64 {
    let fit: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 2.0;
    fit + lambda * apply_d(order, x).iter().map(|d| d.abs()).sum::<f64>()
}

/// Symmetric positive definite band matrix, lower band stored row-wise:
/// `band[i * (p + 1) + d] = A[i][i - d]`.
#[derive(Debug, Clone)]
struct BandMatrix {
    n: usize,
    p: usize,
    band: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            band: vec![0.0; n * (p + 1)],
        }
    }

    /// `D Dᵀ` for `m` rows.
    fn gram(order: DifferenceOrder, m: usize) -> Self {
        let c = order.coeffs();
        let p = order.bandwidth();
        let mut a = Self::zeros(m, p);
        for i in 0..m {
            for d in 0..=p.min(i) {
                let v: f64 = (0..c.len() - d).map(|l| c[l] * c[l + d]).sum();
                a.band[i * (p + 1) + d] = v;
            }
        }
        a
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let d = i - j;
        if d > self.p {
            0.0
        } else {
            self.band[i * (self.p + 1) + d]
        }
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.p);
                let hi = (i + self.p).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    fn principal(&self, idx: &[usize]) -> Self {
        let mut a = Self::zeros(idx.len(), self.p);
        for (r, &i) in idx.iter().enumerate() {
            for d in 0..=self.p.min(r) {
                a.band[r * (self.p + 1) + d] = self.get(i, idx[r - d]);
            }
        }
        a
    }

    /// Cholesky solve. Returns None if the matrix is not numerically SPD.
    fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let (n, p) = (self.n, self.p);
        let w = p + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for j in i.saturating_sub(p)..=i {
                let mut s = self.get(i, j);
                for k in i.saturating_sub(p).max(j.saturating_sub(p))..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            for k in i.saturating_sub(p)..i {
                y[i] -= l[i * w + (i - k)] * y[k];
            }
            y[i] /= l[i * w];
        }
        for i in (0..n).rev() {
            for k in i + 1..=(i + p).min(n.saturating_sub(1)) {
                y[i] -= l[k * w + (k - i)] * y[k];
            }
            y[i] /= l[i * w];
        }
        Some(y)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Problem {
    order: DifferenceOrder,
    q: BandMatrix,
    b: Vec<f64>,
    lambda: f64,
}

impl Problem {
    fn grad(&self, z: &[f64]) -> Vec<f64> {
        self.q.mul(z).iter().zip(&self.b).map(|(a, b)| a - b).collect()
    }

    /// Checks the box-QP optimality conditions at `z`.
    fn kkt_holds(&self, z: &[f64]) -> bool {
        let g = self.grad(z);
        let tol = 1e-9 * (1.0 + inf_norm(&self.b));
        let btol = self.lambda * 1e-12 + 1e-15;
        z.iter().zip(&g).all(|(&zi, &gi)| {
            if zi >= self.lambda - btol {
                gi <= tol
            } else if zi <= -self.lambda + btol {
                gi >= -tol
            } else {
                gi.abs() <= tol && zi.abs() <= self.lambda
            }
        })
    }

    /// Solves for the free coordinates with the others pinned at their bounds.
    /// `state[i]`: 0 free, 1 at +λ, -1 at −λ.
    fn solve_active(&self, state: &[i8]) -> Option<Vec<f64>> {
        let m = state.len();
        let mut z: Vec<f64> = state.iter().map(|&s| s as f64 * self.lambda).collect();
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 0).collect();
        if free.is_empty() {
            return Some(z);
        }
        let p = self.q.p;
        let rhs: Vec<f64> = free
            .iter()
            .map(|&i| {
                let lo = i.saturating_sub(p);
                let hi = (i + p).min(m - 1);
                let pinned: f64 = (lo..=hi)
                    .filter(|&j| state[j] != 0)
                    .map(|j| self.q.get(i, j) * z[j])
                    .sum();
                self.b[i] - pinned
            })
            .collect();
        let zf = self.q.principal(&free).solve(&rhs)?;
        for (&i, v) in free.iter().zip(zf) {
            z[i] = v;
        }
        Some(z)
    }

    /// Primal-dual active-set refinement starting from an initial guess.
    fn polish(&self, mut state: Vec<i8>) -> Option<Vec<f64>> {
        for _ in 0..50 {
            let z = self.solve_active(&state)?;
            let g = self.grad(&z);
            let gtol = 1e-12 * (1.0 + inf_norm(&self.b));
            let ztol = 1e-12 * self.lambda;
            let mut changed = false;
            for i in 0..state.len() {
                let next = match state[i] {
                    0 if z[i] > self.lambda + ztol => 1,
                    0 if z[i] < -self.lambda - ztol => -1,
                    1 if g[i] > gtol => 0,
                    -1 if g[i] < -gtol => 0,
                    s => s,
                };
                if next != state[i] {
                    state[i] = next;
                    changed = true;
                }
            }
            if !changed {
                return self.kkt_holds(&z).then_some(z);
            }
        }
        None
    }

    fn interior_point(&self, opts: &SolverOptions) -> (Vec<f64>, Vec<f64>, Vec<f64>, bool) {
        const ALPHA: f64 = 0.01;
        const BETA: f64 = 0.5;
        const MU: f64 = 2.0;
        let m = self.b.len();
        let lam = self.lambda;
        let mut z = vec![0.0; m];
        let mut mu1 = vec![1.0; m];
        let mut mu2 = vec![1.0; m];
        let mut t = 1e-10;
        let mut step = f64::INFINITY;
        let mut converged = false;

        for _ in 0..opts.max_iter {
            let f1: Vec<f64> = z.iter().map(|zi| zi - lam).collect();
            let f2: Vec<f64> = z.iter().map(|zi| -zi - lam).collect();
            let qz = self.q.mul(&z);
            let dtz_sq: f64 = z.iter().zip(&qz).map(|(a, b)| a * b).sum();
            let pobj = 0.5 * dtz_sq
                + lam * qz.iter().zip(&self.b).map(|(a, b)| (b - a).abs()).sum::<f64>();
            let dobj = -0.5 * dtz_sq + self.b.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            let gap = pobj - dobj;
            if gap <= opts.gap_tol * (1.0 + pobj.abs()) {
                converged = true;
                break;
            }
            if step >= 0.2 {
                t = (2.0 * m as f64 * MU / gap).max(1.2 * t);
            }
            let inv_t = 1.0 / t;

            let mut s = self.q.clone();
            let w = s.p + 1;
            for i in 0..m {
                s.band[i * w] -= mu1[i] / f1[i] + mu2[i] / f2[i];
            }
            let r: Vec<f64> = (0..m)
                .map(|i| -qz[i] + self.b[i] + inv_t / f1[i] - inv_t / f2[i])
                .collect();
            let Some(dz) = s.solve(&r) else { break };
            let dmu1: Vec<f64> = (0..m)
                .map(|i| -(mu1[i] + (inv_t + dz[i] * mu1[i]) / f1[i]))
                .collect();
            let dmu2: Vec<f64> = (0..m)
                .map(|i| -(mu2[i] + (inv_t - dz[i] * mu2[i]) / f2[i]))
                .collect();

            let residual = |z: &[f64], mu1: &[f64], mu2: &[f64]| -> (f64, bool) {
                let qz = self.q.mul(z);
                let mut acc = 0.0;
                let mut feasible = true;
                for i in 0..m {
                    let rd = qz[i] - self.b[i] + mu1[i] - mu2[i];
                    let (g1, g2) = (z[i] - lam, -z[i] - lam);
                    feasible &= g1 < 0.0 && g2 < 0.0;
                    let rc1 = -mu1[i] * g1 - inv_t;
                    let rc2 = -mu2[i] * g2 - inv_t;
                    acc += rd * rd + rc1 * rc1 + rc2 * rc2;
                }
                (acc.sqrt(), feasible)
            };
            let (res0, _) = residual(&z, &mu1, &mu2);

            step = 1.0;
            for i in 0..m {
                if dmu1[i] < 0.0 {
                    step = step.min(-0.99 * mu1[i] / dmu1[i]);
                }
                if dmu2[i] < 0.0 {
                    step = step.min(-0.99 * mu2[i] / dmu2[i]);
                }
            }
            let mut accepted = false;
            for _ in 0..60 {
                let nz: Vec<f64> = (0..m).map(|i| z[i] + step * dz[i]).collect();
                let nm1: Vec<f64> = (0..m).map(|i| mu1[i] + step * dmu1[i]).collect();
                let nm2: Vec<f64> = (0..m).map(|i| mu2[i] + step * dmu2[i]).collect();
                let (res, feasible) = residual(&nz, &nm1, &nm2);
                if feasible && res <= (1.0 - ALPHA * step) * res0 {
                    z = nz;
                    mu1 = nm1;
                    mu2 = nm2;
                    accepted = true;
                    break;
                }
                step *= BETA;
            }
            if !accepted {
                break;
            }
        }
        (z, mu1, mu2, converged)
    }
}

fn solve(
    order: DifferenceOrder,
    s: &Series,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<Series, SignalError> {
    let need = order.coeffs().len();
    if s.len() < need {
        return Err(SignalError::TooShort(need));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SignalError::Invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if !s.is_uniform() {
        return Err(SignalError::NonUniformSpacing);
    }
    if lambda == 0.0 {
        return Ok(s.clone());
    }
    let n = s.len();
    let b = apply_d(order, &s.v);
    let q = BandMatrix::gram(order, b.len());
    let problem = Problem {
        order,
        q,
        b,
        lambda,
    };
    let finish = |z: Vec<f64>| {
        let dtz = apply_dt(problem.order, &z, n);
        Series {
            t: s.t.clone(),
            v: s.v.iter().zip(dtz).map(|(v, d)| v - d).collect(),
        }
    };

    // the unconstrained minimiser is optimal whenever it lies inside the box
    if let Some(z) = problem.q.solve(&problem.b) {
        if inf_norm(&z) <= lambda {
            return Ok(finish(z));
        }
    }

    let (z, mu1, mu2, converged) = problem.interior_point(opts);
    let state: Vec<i8> = (0..z.len())
        .map(|i| {
            if mu1[i] > lambda - z[i] {
                1
            } else if mu2[i] > lambda + z[i] {
                -1
            } else {
                0
            }
        })
        .collect();
    if let Some(zp) = problem.polish(state) {
        return Ok(finish(zp));
    }
    if converged {
        Ok(finish(z))
    } else {
        Err(SignalError::NonConvergence(opts.max_iter))
    }
}

/// ℓ1 trend filter: second-difference penalty, piecewise-linear output.
pub fn l1_trend_filter(s: &Series, lambda: f64) -> Result<Series, SignalError> {
    solve(DifferenceOrder::Second, s, lambda, &SolverOptions::default())
}

/// Total-variation denoising: first-difference penalty, piecewise-constant output.
pub fn tv_denoise(s: &Series, lambda: f64) -> Result<Series, SignalError> {
    solve(DifferenceOrder::First, s, lambda, &SolverOptions::default())
}
