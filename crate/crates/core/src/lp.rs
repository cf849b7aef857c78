//! Sparse linear programs `max c·x  s.t.  G x <= h` (x free) solved by a
//! Mehrotra predictor-corrector interior-point method.
//!
//! The dual is `min h·y  s.t.  Gᵀ y = c, y >= 0`; the returned multipliers `y`
//! are the dual solution. Normal equations `Gᵀ D G` are assembled in banded
//! storage, which is what grid stencils produce, and factored by Cholesky.

use serde::Serialize;

use crate::error::{Error, Result};

/// One sparse inequality row.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LpProblem {
    pub n: usize,
    pub c: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    /// Stopped at the iteration limit with residuals below the relaxed tolerance.
    NearOptimal,
    Unbounded,
    Infeasible,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpOptions {
    pub max_iter: usize,
    /// Relative tolerance on residuals and complementarity.
    pub tol: f64,
    /// Accepted at the iteration limit.
    pub relaxed_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions { max_iter: 150, tol: 1e-12, relaxed_tol: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Row multipliers (dual solution), non-negative.
    pub y: Vec<f64>,
    /// Row slacks `h - G x`.
    pub slack: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl LpProblem {
    pub fn new(n: usize, c: Vec<f64>) -> Self {
        LpProblem { n, c, rows: Vec::new() }
    }

    pub fn add_row(&mut self, entries: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(Row { entries, rhs });
    }

    /// Largest column distance within one row.
    pub fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .map(|r| {
                let lo = r.entries.iter().map(|e| e.0).min().unwrap_or(0);
                let hi = r.entries.iter().map(|e| e.0).max().unwrap_or(0);
                hi - lo
            })
            .max()
            .unwrap_or(0)
    }

    fn gx(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.entries.iter().map(|&(j, g)| g * x[j]).sum()).collect()
    }

    fn gty(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (r, &yr) in self.rows.iter().zip(y) {
            for &(j, g) in &r.entries {
                out[j] += g * yr;
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.c.len() != self.n {
            return Err(Error::Invalid("objective length differs from variable count".into()));
        }
        for r in &self.rows {
            if r.entries.iter().any(|&(j, g)| j >= self.n || !g.is_finite()) || !r.rhs.is_finite() {
                return Err(Error::Invalid("malformed constraint row".into()));
            }
        }
        Ok(())
    }

    pub fn solve(&self, opts: &LpOptions) -> Result<LpSolution> {
        self.validate()?;
        let (n, m) = (self.n, self.rows.len());
        let h: Vec<f64> = self.rows.iter().map(|r| r.rhs).collect();
        if self.c.iter().all(|&c| c == 0.0) {
            let x = vec![0.0; n];
            if h.iter().any(|&v| v < 0.0) {
                return Err(Error::Solver("zero-objective LP with infeasible origin".into()));
            }
            return Ok(LpSolution {
                slack: h.clone(),
                y: vec![0.0; m],
                x,
                objective: 0.0,
                dual_objective: 0.0,
                status: LpStatus::Optimal,
                iterations: 0,
                primal_residual: 0.0,
                dual_residual: 0.0,
            });
        }
        let band = self.bandwidth();
        let hn = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cn = self.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut x = vec![0.0; n];
        let mut s: Vec<f64> = h.iter().map(|&v| v.max(1.0)).collect();
        let mut y = vec![1.0; m];
        let mut chol = BandCholesky::new(n, band);
        let mut status = None;
        let mut iterations = 0;
        let (mut rp_norm, mut rd_norm) = (f64::INFINITY, f64::INFINITY);
        for it in 0..opts.max_iter {
            iterations = it;
            let gx = self.gx(&x);
            let rp: Vec<f64> = (0..m).map(|i| gx[i] + s[i] - h[i]).collect();
            let gty = self.gty(&y);
            let rd: Vec<f64> = (0..n).map(|j| gty[j] - self.c[j]).collect();
            let mu = s.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / m.max(1) as f64;
            let pobj: f64 = self.c.iter().zip(&x).map(|(a, b)| a * b).sum();
            let dobj: f64 = h.iter().zip(&y).map(|(a, b)| a * b).sum();
            rp_norm = rp.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (1.0 + hn);
            rd_norm = rd.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (1.0 + cn);
            let gap = (dobj - pobj).abs() / (1.0 + pobj.abs());
            log::trace!("ipm it {it}: pobj {pobj:.12e} rp {rp_norm:.2e} rd {rd_norm:.2e} gap {gap:.2e} mu {mu:.2e}");
            let centred = rp_norm <= opts.tol && m as f64 * mu <= opts.tol * (1.0 + pobj.abs());
            if centred && rd_norm <= opts.tol && gap <= opts.tol {
                status = Some(LpStatus::Optimal);
                break;
            }
            // Near the optimum the normal equations lose the dual residual;
            // hand over to polishing instead of iterating on noise.
            if centred && rd_norm <= opts.relaxed_tol {
                break;
            }
            let xn = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if xn > 1e10 {
                status = Some(LpStatus::Unbounded);
                break;
            }
            let yn = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if yn > 1e13 {
                status = Some(LpStatus::Infeasible);
                break;
            }
            // Normal matrix with D = Y / S.
            let d: Vec<f64> = (0..m).map(|i| y[i] / s[i]).collect();
            chol.clear();
            for (r, &dr) in self.rows.iter().zip(&d) {
                for &(j1, g1) in &r.entries {
                    for &(j2, g2) in &r.entries {
                        if j2 <= j1 {
                            chol.add(j1, j2, dr * g1 * g2);
                        }
                    }
                }
            }
            chol.factor();
            let direction = |rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                // rhs = -rd - Gᵀ D rp + Gᵀ S⁻¹ rc
                let t: Vec<f64> = (0..m).map(|i| -d[i] * rp[i] + rc[i] / s[i]).collect();
                let gt = self.gty(&t);
                let mut rhs: Vec<f64> = (0..n).map(|j| -rd[j] + gt[j]).collect();
                chol.solve(&mut rhs);
                let dx = rhs;
                let gdx = self.gx(&dx);
                let dy: Vec<f64> = (0..m).map(|i| d[i] * (gdx[i] + rp[i]) - rc[i] / s[i]).collect();
                let ds: Vec<f64> = (0..m).map(|i| -rp[i] - gdx[i]).collect();
                (dx, dy, ds)
            };
            let rc_aff: Vec<f64> = (0..m).map(|i| s[i] * y[i]).collect();
            let (_, dy_a, ds_a) = direction(&rc_aff);
            let ap = max_step(&s, &ds_a);
            let ad = max_step(&y, &dy_a);
            let mu_aff = (0..m).map(|i| (s[i] + ap * ds_a[i]) * (y[i] + ad * dy_a[i])).sum::<f64>() / m as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc: Vec<f64> = (0..m).map(|i| s[i] * y[i] + ds_a[i] * dy_a[i] - sigma * mu).collect();
            let (dx, dy, ds) = direction(&rc);
            let ap = (0.995 * max_step(&s, &ds)).min(1.0);
            let ad = (0.995 * max_step(&y, &dy)).min(1.0);
            for j in 0..n {
                x[j] += ap * dx[j];
            }
            for i in 0..m {
                s[i] += ap * ds[i];
                y[i] += ad * dy[i];
            }
        }
        if status.is_none() {
            self.polish_dual(&mut y, &mut chol);
            let gty = self.gty(&y);
            rd_norm = (0..n).map(|j| (gty[j] - self.c[j]).abs()).fold(0.0, f64::max) / (1.0 + cn);
            let gx = self.gx(&x);
            rp_norm = (0..m).map(|i| (gx[i] + s[i] - h[i]).abs()).fold(0.0, f64::max) / (1.0 + hn);
            let pobj: f64 = self.c.iter().zip(&x).map(|(a, b)| a * b).sum();
            let mu = s.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            log::trace!("ipm polished: rp {rp_norm:.2e} rd {rd_norm:.2e} complementarity {mu:.2e}");
            if rp_norm <= opts.tol && rd_norm <= opts.tol && mu <= opts.tol * (1.0 + pobj.abs()) {
                status = Some(LpStatus::Optimal);
            }
        }
        let status = match status {
            Some(st) => st,
            None if rp_norm <= opts.relaxed_tol && rd_norm <= opts.relaxed_tol => LpStatus::NearOptimal,
            None => {
                return Err(Error::Solver(format!(
                    "interior point stalled after {iterations} iterations (rp {rp_norm:.2e}, rd {rd_norm:.2e})"
                )))
            }
        };
        if status == LpStatus::Unbounded || status == LpStatus::Infeasible {
            return Err(Error::Solver(format!("linear program is {status:?}")));
        }
        let gx = self.gx(&x);
        let slack: Vec<f64> = (0..m).map(|i| h[i] - gx[i]).collect();
        let objective = self.c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let dual_objective = h.iter().zip(&y).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            y,
            slack,
            objective,
            dual_objective,
            status,
            iterations,
            primal_residual: rp_norm,
            dual_residual: rd_norm,
        })
    }
}

impl LpProblem {
    /// Reduce `Gᵀy - c` by a multiplicative correction `y <- y (1 + G z)` with
    /// `(Gᵀ Y G) z = c - Gᵀ y`; rows with vanishing multipliers stay inactive.
    fn polish_dual(&self, y: &mut [f64], chol: &mut BandCholesky) {
        let residual = |y: &[f64]| -> (Vec<f64>, f64) {
            let g = self.gty(y);
            let r: Vec<f64> = (0..self.n).map(|j| g[j] - self.c[j]).collect();
            let norm = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (r, norm)
        };
        let (mut r, mut norm) = residual(y);
        for _ in 0..4 {
            if norm == 0.0 {
                return;
            }
            chol.clear();
            for (row, &w) in self.rows.iter().zip(y.iter()) {
                for &(j1, g1) in &row.entries {
                    for &(j2, g2) in &row.entries {
                        if j2 <= j1 {
                            chol.add(j1, j2, w * g1 * g2);
                        }
                    }
                }
            }
            chol.factor();
            let mut z: Vec<f64> = r.iter().map(|v| -v).collect();
            chol.solve(&mut z);
            let gz = self.gx(&z);
            let trial: Vec<f64> = y.iter().zip(&gz).map(|(&yi, &d)| (yi * (1.0 + d)).max(0.0)).collect();
            let (r2, n2) = residual(&trial);
            if n2 >= norm {
                return;
            }
            y.copy_from_slice(&trial);
            r = r2;
            norm = n2;
        }
    }
}

/// Largest `a` in `(0, 1e30]` with `v + a dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = f64::INFINITY;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a.min(1e30)
}

/// Lower-band Cholesky factor `L Lᵀ` of a symmetric positive semidefinite matrix.
struct BandCholesky {
    n: usize,
    b: usize,
    /// `a[i * (b + 1) + (i - j)]` holds entry `(i, j)`, `i - b <= j <= i`.
    a: Vec<f64>,
}

impl BandCholesky {
    fn new(n: usize, b: usize) -> Self {
        let b = b.min(n.saturating_sub(1));
        BandCholesky { n, b, a: vec![0.0; n * (b + 1)] }
    }

    fn clear(&mut self) {
        self.a.iter_mut().for_each(|v| *v = 0.0);
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * (self.b + 1) + (i - j)] += v;
    }

    fn factor(&mut self) {
        let (n, b) = (self.n, self.b);
        let w = b + 1;
        let scale = (0..n).map(|i| self.a[i * w]).fold(0.0f64, f64::max).max(1e-300);
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let mut sum = self.a[i * w + (i - j)];
                for k in j0..j {
                    sum -= self.a[i * w + (i - k)] * self.a[j * w + (j - k)];
                }
                if j == i {
                    self.a[i * w] = if sum <= 1e-30 * scale { 1e64 } else { sum.sqrt() };
                } else {
                    self.a[i * w + (i - j)] = sum / self.a[j * w];
                }
            }
        }
    }

    fn solve(&self, r: &mut [f64]) {
        let (n, b) = (self.n, self.b);
        let w = b + 1;
        for i in 0..n {
            let mut v = r[i];
            for k in i.saturating_sub(b)..i {
                v -= self.a[i * w + (i - k)] * r[k];
            }
            r[i] = v / self.a[i * w];
        }
        for i in (0..n).rev() {
            let v = r[i] / self.a[i * w];
            r[i] = v;
            for k in i.saturating_sub(b)..i {
                r[k] -= self.a[i * w + (i - k)] * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp_with_known_optimum() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6, x >= 0, y >= 0  ->  (1.6, 1.2)
        let mut p = LpProblem::new(2, vec![1.0, 1.0]);
        p.add_row(vec![(0, 1.0), (1, 2.0)], 4.0);
        p.add_row(vec![(0, 3.0), (1, 1.0)], 6.0);
        p.add_row(vec![(0, -1.0)], 0.0);
        p.add_row(vec![(1, -1.0)], 0.0);
        let s = p.solve(&LpOptions::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.6).abs() < 1e-9 && (s.x[1] - 1.2).abs() < 1e-9);
        assert!((s.objective - 2.8).abs() < 1e-10);
        assert!((s.dual_objective - 2.8).abs() < 1e-10);
        // Duals: y1 = 0.4, y2 = 0.2.
        assert!((s.y[0] - 0.4).abs() < 1e-8 && (s.y[1] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn unbounded_is_reported() {
        let mut p = LpProblem::new(1, vec![1.0]);
        p.add_row(vec![(0, -1.0)], 0.0);
        assert!(p.solve(&LpOptions::default()).is_err());
    }

    #[test]
    fn zero_objective_returns_origin() {
        let mut p = LpProblem::new(3, vec![0.0; 3]);
        p.add_row(vec![(0, 1.0), (2, -1.0)], 1.0);
        let s = p.solve(&LpOptions::default()).unwrap();
        assert_eq!(s.x, vec![0.0; 3]);
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn banded_chain_matches_closed_form() {
        // max sum_k w_k x_k with x_0 = 0 implicit, |x_{k+1} - x_k| <= 1, x_k >= 0.
        let n = 50;
        let c: Vec<f64> = (0..n).map(|k| if k % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let mut p = LpProblem::new(n, c);
        p.add_row(vec![(0, 1.0)], 1.0);
        p.add_row(vec![(0, -1.0)], 0.0);
        for k in 0..n - 1 {
            p.add_row(vec![(k + 1, 1.0), (k, -1.0)], 1.0);
            p.add_row(vec![(k, 1.0), (k + 1, -1.0)], 1.0);
            p.add_row(vec![(k + 1, -1.0)], 0.0);
        }
        let s = p.solve(&LpOptions::default()).unwrap();
        assert!((s.objective - s.dual_objective).abs() < 1e-9 * (1.0 + s.objective.abs()));
        // Complementary slackness.
        for (y, sl) in s.y.iter().zip(&s.slack) {
            assert!(y * sl < 1e-8);
        }
    }
}
