//! Strictly convex quadratic programs by the dual active-set method of
//! Goldfarb and Idnani.
//!
//! minimise ½ xᵀ G x + aᵀ x  subject to  A_eq x = b_eq,  A_in x ≥ b_in.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_rows: Vec<(DVector<f64>, f64)>,
    pub ineq_rows: Vec<(DVector<f64>, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers for equality rows followed by inequality rows.
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// Residuals of the Karush–Kuhn–Tucker conditions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

impl QuadraticProgram {
    fn row(&self, k: usize) -> (&DVector<f64>, f64) {
        let ne = self.eq_rows.len();
        if k < ne {
            (&self.eq_rows[k].0, self.eq_rows[k].1)
        } else {
            (&self.ineq_rows[k - ne].0, self.ineq_rows[k - ne].1)
        }
    }

    pub fn kkt(&self, sol: &QpSolution) -> KktResiduals {
        let x = DVector::from_column_slice(&sol.x);
        let mut grad = &self.hessian * &x + &self.linear;
        let ne = self.eq_rows.len();
        let mut primal: f64 = 0.0;
        let mut dual: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for k in 0..ne + self.ineq_rows.len() {
            let (n, b) = self.row(k);
            let u = sol.multipliers[k];
            grad -= n * u;
            let s = n.dot(&x) - b;
            if k < ne {
                primal = primal.max(s.abs());
            } else {
                primal = primal.max((-s).max(0.0));
                dual = dual.max((-u).max(0.0));
                comp = comp.max((u * s).abs());
            }
        }
        KktResiduals { stationarity: grad.amax(), primal, dual, complementarity: comp }
    }

    pub fn solve(&self) -> Result<QpSolution> {
        let n = self.linear.len();
        let ne = self.eq_rows.len();
        let m = ne + self.ineq_rows.len();
        let chol = Cholesky::new(self.hessian.clone())
            .ok_or_else(|| Error::InvalidInput("quadratic form is not positive definite".into()))?;
        let ginv = chol.inverse();
        let mut x = -(&ginv * &self.linear);
        let scale = 1.0 + self.linear.amax() + self.hessian.amax();
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        // equality rows may be entered with flipped orientation
        let mut sign = vec![1.0; m];
        let mut iterations = 0;
        let max_iter = 50 * (m + n + 1);

        loop {
            // pick a constraint to add: pending equalities first, then the most violated inequality
            let mut pick: Option<usize> = None;
            for k in 0..ne {
                if !active.contains(&k) {
                    pick = Some(k);
                    break;
                }
            }
            if pick.is_none() {
                // a tight threshold keeps reported bounds exact to rounding
                let mut worst = -1e-14 * (1.0 + x.amax());
                for k in ne..m {
                    if active.contains(&k) {
                        continue;
                    }
                    let (row, b) = self.row(k);
                    let s = row.dot(&x) - b;
                    if s < worst {
                        worst = s;
                        pick = Some(k);
                    }
                }
            }
            let Some(p) = pick else { break };
            if p < ne {
                let (row, b) = self.row(p);
                if row.dot(&x) - b > 0.0 {
                    sign[p] = -1.0;
                }
            }
            let np = self.row(p).0 * sign[p];
            let bp = self.row(p).1 * sign[p];
            let mut up = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(Error::IterationCap(max_iter));
                }
                let (z, r) = if active.is_empty() {
                    (&ginv * &np, DVector::zeros(0))
                } else {
                    let nmat = DMatrix::from_columns(
                        &active.iter().map(|&k| self.row(k).0 * sign[k]).collect::<Vec<_>>(),
                    );
                    let gn = &ginv * &nmat;
                    let inner = nmat.transpose() * &gn;
                    let inner_inv = inner
                        .clone()
                        .pseudo_inverse(1e-14 * (1.0 + inner.amax()))
                        .map_err(|e| Error::InvalidInput(e.to_string()))?;
                    let nstar = &inner_inv * gn.transpose();
                    let r = &nstar * &np;
                    let z = &ginv * &np - &gn * &r;
                    (z, r)
                };
                // largest dual step keeping inequality multipliers non-negative
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (j, &k) in active.iter().enumerate() {
                    if k >= ne && r[j] > 1e-14 {
                        let ratio = u[j] / r[j];
                        if ratio < t1 {
                            t1 = ratio;
                            drop = Some(j);
                        }
                    }
                }
                let zn = z.dot(&np);
                let t2 = if z.amax() > 1e-14 * scale && zn.abs() > 1e-300 {
                    -(np.dot(&x) - bp) / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return Err(Error::InfeasibleConstraints);
                }
                if t2.is_finite() {
                    x += &z * t;
                }
                for j in 0..active.len() {
                    u[j] -= t * r[j];
                }
                up += t;
                if t2 <= t1 {
                    active.push(p);
                    u.push(up);
                    break;
                }
                let j = drop.expect("partial step drops a constraint");
                active.remove(j);
                u.remove(j);
            }
        }
        let mut multipliers = vec![0.0; m];
        for (j, &k) in active.iter().enumerate() {
            multipliers[k] = u[j] * sign[k];
        }
        active.sort_unstable();
        Ok(QpSolution { x: x.iter().copied().collect(), multipliers, active, iterations })
    }
}
