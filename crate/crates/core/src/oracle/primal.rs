//! Reference solver for the slack-penalized maximum entropy program
//!
//! ```text
//! max  H(sigma) - C nu
//! s.t. | sigma^T Rbar^i - sum_j eta^i_j (sigma_tilde^T R^j) |_k <= nu   for all i, k
//!      eta^i in simplex,  sigma in simplex
//! ```
//!
//! solved directly over `(sigma, eta, nu)` by a log-barrier Newton method.
//! The Hessian is a positive diagonal plus a low-rank term from the slack
//! constraints, so each Newton system is reduced with the Woodbury identity
//! to a dense system of size `2 |Phibar| K`.

use nalgebra::{DMatrix, DVector};

use crate::behavior::{entropy, BehaviorDistribution};
use crate::error::{IceError, Result};
use crate::game::RegretSet;
use crate::oracle::{certify_vectors, CertMethod};

/// Largest target game the reference solver accepts.
pub const MAX_PRIMAL_OUTCOMES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalParams {
    /// Stop when the barrier's duality-gap bound `m / t` drops below this.
    pub gap_tolerance: f64,
    /// Barrier parameter growth factor.
    pub growth: f64,
    pub max_newton_steps: usize,
}

impl Default for PrimalParams {
    fn default() -> Self {
        Self {
            gap_tolerance: 1e-9,
            growth: 10.0,
            max_newton_steps: 2_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrimalSolution {
    pub sigma: BehaviorDistribution,
    /// `eta[i]` over the demonstrated modifications.
    pub eta: Vec<Vec<f64>>,
    /// Slack variable at the barrier solution.
    pub nu: f64,
    /// `H(sigma) - C * nu_certified(sigma)`.
    pub objective: f64,
    /// Barrier duality-gap bound at exit.
    pub gap_bound: f64,
    pub newton_steps: usize,
}

struct Layout {
    n: usize,
    fbar: usize,
    f: usize,
}

impl Layout {
    fn eta(&self, i: usize, j: usize) -> usize {
        self.n + i * self.f + j
    }
    fn nu(&self) -> usize {
        self.n + self.fbar * self.f
    }
    fn total(&self) -> usize {
        self.nu() + 1
    }
}

/// Solve the primal program for `target` regrets against demonstrated regret
/// vectors `demo` (flattened `[j * K + k]`).
pub fn brute_force_primal(
    target: &RegretSet,
    demo: &[f64],
    c: f64,
    params: PrimalParams,
) -> Result<PrimalSolution> {
    let n = target.num_outcomes();
    let k = target.feature_dim();
    if n > MAX_PRIMAL_OUTCOMES {
        return Err(IceError::TooLarge(format!(
            "{n} outcomes exceeds the reference limit of {MAX_PRIMAL_OUTCOMES}"
        )));
    }
    if !(c > 0.0) {
        return Err(IceError::InvalidParameter(format!("C = {c} must be positive")));
    }
    if demo.len() % k != 0 {
        return Err(IceError::DimensionMismatch("demonstrated regrets do not tile by K".into()));
    }
    let fbar = target.len();
    let f = demo.len() / k;
    if f == 0 && fbar > 0 {
        return Err(IceError::Empty("no demonstrated modifications".into()));
    }
    let lay = Layout { n, fbar, f };
    let total = lay.total();
    if fbar * f > 250_000 {
        return Err(IceError::TooLarge(format!("{fbar} x {f} mixture weights")));
    }

    // Slack constraint rows: g_c(x) = s * d_ik(x) - nu <= 0, c = 2 (i K + k) + s.
    let rows = 2 * fbar * k;
    let mut b = DMatrix::<f64>::zeros(rows, total);
    for (i, m) in target.matrices().iter().enumerate() {
        for (a, r) in m.nonzero_rows() {
            for kk in 0..k {
                b[(2 * (i * k + kk), a)] = r[kk];
                b[(2 * (i * k + kk) + 1, a)] = -r[kk];
            }
        }
        for j in 0..f {
            for kk in 0..k {
                let s = demo[j * k + kk];
                b[(2 * (i * k + kk), lay.eta(i, j))] = -s;
                b[(2 * (i * k + kk) + 1, lay.eta(i, j))] = s;
            }
        }
    }
    for r in 0..rows {
        b[(r, lay.nu())] = -1.0;
    }

    // Strictly feasible start.
    let mut x = DVector::<f64>::zeros(total);
    for a in 0..n {
        x[a] = 1.0 / n as f64;
    }
    for i in 0..fbar {
        for j in 0..f {
            x[lay.eta(i, j)] = 1.0 / f as f64;
        }
    }
    x[lay.nu()] = 0.0;
    let g0 = &b * &x;
    x[lay.nu()] = g0.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;

    // Equality constraints: one row for sigma, one per eta block.
    let p = 1 + fbar;
    let mut aeq = DMatrix::<f64>::zeros(p, total);
    for a in 0..n {
        aeq[(0, a)] = 1.0;
    }
    for i in 0..fbar {
        for j in 0..f {
            aeq[(1 + i, lay.eta(i, j))] = 1.0;
        }
    }

    let m_barrier = (rows + fbar * f + 1) as f64;
    let mut t = 1.0;
    let mut steps = 0;
    loop {
        steps += center(&mut x, &b, &aeq, &lay, c, t, params.max_newton_steps.saturating_sub(steps));
        if m_barrier / t < params.gap_tolerance || steps >= params.max_newton_steps {
            break;
        }
        t *= params.growth;
    }

    let sigma = BehaviorDistribution::from_weights(x.as_slice()[..n].to_vec())?;
    let eta: Vec<Vec<f64>> = (0..fbar)
        .map(|i| (0..f).map(|j| x[lay.eta(i, j)]).collect())
        .collect();
    let nu_certified = if fbar == 0 {
        0.0
    } else {
        let hat = target.expected_all(sigma.probs());
        certify_vectors(&hat, demo, k, CertMethod::ExactLp, 1e-12)?.nu
    };
    Ok(PrimalSolution {
        objective: entropy(&sigma) - c * nu_certified,
        sigma,
        eta,
        nu: x[lay.nu()],
        gap_bound: m_barrier / t,
        newton_steps: steps,
    })
}

/// Barrier function value, or `None` outside the domain.
fn barrier(x: &DVector<f64>, g: &DVector<f64>, lay: &Layout, c: f64, t: f64) -> Option<f64> {
    let mut phi = 0.0;
    for a in 0..lay.n {
        let s = x[a];
        if !(s > 0.0) {
            return None;
        }
        phi += t * s * s.ln();
    }
    for idx in lay.n..lay.total() {
        if !(x[idx] > 0.0) {
            return None;
        }
        phi -= x[idx].ln();
    }
    phi += t * c * x[lay.nu()];
    for &gc in g.iter() {
        if !(gc < 0.0) {
            return None;
        }
        phi -= (-gc).ln();
    }
    Some(phi)
}

/// Newton centering at barrier weight `t`; returns the number of steps taken.
fn center(
    x: &mut DVector<f64>,
    b: &DMatrix<f64>,
    aeq: &DMatrix<f64>,
    lay: &Layout,
    c: f64,
    t: f64,
    budget: usize,
) -> usize {
    let total = lay.total();
    let rows = b.nrows();
    for step in 0..budget {
        let g = b * &*x;
        // Gradient.
        let mut grad = DVector::<f64>::zeros(total);
        for a in 0..lay.n {
            grad[a] = t * (x[a].ln() + 1.0);
        }
        for idx in lay.n..total {
            grad[idx] = -1.0 / x[idx];
        }
        grad[lay.nu()] += t * c;
        let inv_neg_g = g.map(|v| 1.0 / (-v));
        grad += b.tr_mul(&inv_neg_g);

        // H = D + B^T W B with W = diag(1/g^2); apply H^-1 via Woodbury.
        let mut dinv = DVector::<f64>::zeros(total);
        for a in 0..lay.n {
            dinv[a] = x[a] / t;
        }
        for idx in lay.n..total {
            dinv[idx] = x[idx] * x[idx];
        }
        let mut bd = b.clone();
        for col in 0..total {
            let s = dinv[col];
            bd.column_mut(col).scale_mut(s);
        }
        let mut inner = &bd * b.transpose();
        for r in 0..rows {
            inner[(r, r)] += g[r] * g[r];
        }
        let Some(chol) = inner.cholesky() else {
            return step;
        };
        let hinv = |v: &DVector<f64>| -> DVector<f64> {
            let dv = v.component_mul(&dinv);
            let corr = chol.solve(&(b * &dv));
            dv - bd.tr_mul(&corr)
        };

        let hg = hinv(&grad);
        let p = aeq.nrows();
        let mut hat = DMatrix::<f64>::zeros(total, p);
        for r in 0..p {
            let col = hinv(&aeq.row(r).transpose());
            hat.set_column(r, &col);
        }
        let schur = aeq * &hat;
        let rhs = -(aeq * &hg);
        let Some(y) = schur.clone().lu().solve(&rhs) else {
            return step;
        };
        let dx = -(&hg) - &hat * &y;
        let decrement = -grad.dot(&dx);
        if decrement / 2.0 <= 1e-12 {
            return step;
        }

        let phi0 = barrier(x, &g, lay, c, t).expect("iterate stays interior");
        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            let cand = &*x + &dx * s;
            let gc = b * &cand;
            if let Some(phi) = barrier(&cand, &gc, lay, c, t) {
                if phi <= phi0 - 0.25 * s * decrement {
                    *x = cand;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            return step + 1;
        }
    }
    budget
}
