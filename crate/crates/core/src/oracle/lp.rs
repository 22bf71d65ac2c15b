//! Minimal dense two-phase simplex for small linear programs in standard form
//! (`min c.x` subject to `A x = b`, `x >= 0`), using Bland's rule.

const EPS: f64 = 1e-11;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpFailure {
    Infeasible,
    Unbounded,
    PivotLimit,
}

struct Tableau {
    /// `rows` constraint rows followed by the objective row; each row has
    /// `cols` coefficients and a trailing right-hand side.
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let p = self.at(pr, pc);
        for c in 0..w {
            self.data[pr * w + c] /= p;
        }
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f != 0.0 {
                for c in 0..w {
                    self.data[r * w + c] -= f * self.data[pr * w + c];
                }
            }
        }
        self.basis[pr] = pc;
    }

    /// Run simplex on the current objective row restricted to columns `< allowed`.
    fn optimize(&mut self, allowed: usize) -> Result<(), LpFailure> {
        for _ in 0..MAX_PIVOTS {
            let obj = self.rows;
            let entering = (0..allowed).find(|&c| self.at(obj, c) < -EPS);
            let Some(pc) = entering else {
                return Ok(());
            };
            let mut best: Option<(f64, usize)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((ratio, r)),
                        Some((br, brow)) => {
                            if ratio < br - EPS
                                || ((ratio - br).abs() <= EPS && self.basis[r] < self.basis[brow])
                            {
                                Some((ratio, r))
                            } else {
                                Some((br, brow))
                            }
                        }
                    };
                }
            }
            let Some((_, pr)) = best else {
                return Err(LpFailure::Unbounded);
            };
            self.pivot(pr, pc);
        }
        Err(LpFailure::PivotLimit)
    }
}

/// Solve `min c.x  s.t.  A x = b, x >= 0` where `a` is row-major with
/// `b.len()` rows and `c.len()` columns.
pub fn solve_standard(c: &[f64], a: &[f64], b: &[f64]) -> Result<LpSolution, LpFailure> {
    let n = c.len();
    let m = b.len();
    assert_eq!(a.len(), n * m, "constraint matrix shape");
    let cols = n + m;
    let w = cols + 1;
    let mut data = vec![0.0; (m + 1) * w];
    for r in 0..m {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            data[r * w + j] = sign * a[r * n + j];
        }
        data[r * w + n + r] = 1.0;
        data[r * w + cols] = sign * b[r];
    }
    // Phase one objective: minimize the sum of artificials, expressed in
    // terms of the nonbasic columns.
    for r in 0..m {
        for j in 0..n {
            data[m * w + j] -= data[r * w + j];
        }
        data[m * w + cols] -= data[r * w + cols];
    }
    let mut t = Tableau {
        data,
        rows: m,
        cols,
        basis: (n..n + m).collect(),
    };
    t.optimize(cols)?;
    if -t.rhs(m) > 1e-8 * (1.0 + b.iter().map(|x| x.abs()).sum::<f64>()) {
        return Err(LpFailure::Infeasible);
    }
    // Drive any artificial still in the basis out (degenerate rows).
    for r in 0..m {
        if t.basis[r] >= n {
            if let Some(pc) = (0..n).find(|&j| t.at(r, j).abs() > 1e-9) {
                t.pivot(r, pc);
            }
        }
    }
    // Phase two objective row.
    for j in 0..w {
        t.data[m * w + j] = 0.0;
    }
    for j in 0..n {
        t.data[m * w + j] = c[j];
    }
    for r in 0..m {
        let bj = t.basis[r];
        if bj < n && c[bj] != 0.0 {
            let f = c[bj];
            for j in 0..w {
                t.data[m * w + j] -= f * t.data[r * w + j];
            }
        }
    }
    // Artificial columns may not re-enter.
    t.optimize(n)?;
    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { x, objective })
}

/// Minimal ell-infinity distance from `point` to the convex hull of
/// `vertices` (each of the same dimension), with the mixture achieving it.
///
/// The returned distance is re-evaluated from the returned weights, so it is
/// exactly what the certificate claims.
pub fn hull_distance_inf(point: &[f64], vertices: &[&[f64]]) -> (f64, Vec<f64>) {
    assert!(!vertices.is_empty(), "hull needs at least one vertex");
    let k = point.len();
    let nv = vertices.len();
    if nv == 1 {
        return (residual_inf(point, vertices, &[1.0]), vec![1.0]);
    }
    // Columns: eta (nv), t, s1 (k), s2 (k).
    let n = nv + 1 + 2 * k;
    let m = 2 * k + 1;
    let mut a = vec![0.0; m * n];
    let mut b = vec![0.0; m];
    for kk in 0..k {
        let (r1, r2) = (kk, k + kk);
        for (j, v) in vertices.iter().enumerate() {
            a[r1 * n + j] = v[kk];
            a[r2 * n + j] = v[kk];
        }
        // eta.V + t - s1 = p   (p - eta.V <= t)
        a[r1 * n + nv] = 1.0;
        a[r1 * n + nv + 1 + kk] = -1.0;
        // eta.V - t + s2 = p   (eta.V - p <= t)
        a[r2 * n + nv] = -1.0;
        a[r2 * n + nv + 1 + k + kk] = 1.0;
        b[r1] = point[kk];
        b[r2] = point[kk];
    }
    for j in 0..nv {
        a[2 * k * n + j] = 1.0;
    }
    b[2 * k] = 1.0;
    let mut c = vec![0.0; n];
    c[nv] = 1.0;
    let weights = match solve_standard(&c, &a, &b) {
        Ok(sol) => normalize(sol.x[..nv].to_vec()),
        // The program is always feasible and bounded below by zero; a failure
        // here is a pivoting breakdown, so fall back to the nearest vertex.
        Err(_) => nearest_vertex(point, vertices),
    };
    (residual_inf(point, vertices, &weights), weights)
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        for x in w.iter_mut() {
            *x /= s;
        }
    } else {
        w[0] = 1.0;
    }
    w
}

fn nearest_vertex(point: &[f64], vertices: &[&[f64]]) -> Vec<f64> {
    let mut best = (f64::INFINITY, 0);
    for (j, v) in vertices.iter().enumerate() {
        let d = point.iter().zip(*v).fold(0.0f64, |m, (p, x)| m.max((p - x).abs()));
        if d < best.0 {
            best = (d, j);
        }
    }
    let mut w = vec![0.0; vertices.len()];
    w[best.1] = 1.0;
    w
}

/// `|| point - sum_j w_j vertices[j] ||_inf`.
pub fn residual_inf(point: &[f64], vertices: &[&[f64]], weights: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (kk, p) in point.iter().enumerate() {
        let mix: f64 = vertices.iter().zip(weights).map(|(v, w)| w * v[kk]).sum();
        worst = worst.max((p - mix).abs());
    }
    worst
}
