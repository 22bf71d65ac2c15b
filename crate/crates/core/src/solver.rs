//! Dual maximum entropy ICE solver.
//!
//! The dual variables are, for every target modification `f`, a pair of
//! nonnegative K-vectors `alpha[f]`, `beta[f]` together with a residual mass
//! `xi`, all living on the scaled simplex `xi + sum(alpha + beta) = C`. With
//! `lambda = alpha - beta` the dual objective is
//!
//! ```text
//! L(lambda) = sum_f max_j  d_j . lambda[f]  +  log sum_a exp(-sum_f rbar_f(a) . lambda[f])
//! ```
//!
//! where `d_j = sigma_tilde^T R^j` are the demonstrated regret vectors.
//! The predicted distribution is the Gibbs distribution inside the log.
//!
//! Two methods are provided. [`Method::ExponentiatedGradient`] is the plain
//! subgradient scheme on the scaled simplex with `gamma / sqrt(t)` steps.
//! [`Method::Extragradient`] (the default) writes each inner max as a
//! bilinear game against a mixture `eta[f]` over the demonstrated vertices
//! and runs projected extragradient steps on `(lambda, eta)` with
//! restarts. The saddle form is smooth, so it reaches small duality gaps far
//! sooner.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::behavior::{entropy, BehaviorDistribution};
use crate::error::{IceError, Result};
use crate::game::{dot, Game, ModificationSet, RegretSet, UtilityWeights};
use crate::oracle::{self, certify_vectors, CertMethod, RationalityCertificate};

/// Bound on `|step * g|` inside an exponentiated update.
pub const EXP_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExponentiatedGradient,
    Extragradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Run every iteration.
    FixedT,
    /// Stop once the measured duality gap is at most `tolerance`.
    Gap { tolerance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Slack budget. `None` means `10 K`.
    pub c: Option<f64>,
    pub max_iters: usize,
    /// Base step size. `None` picks `sqrt(2 ln(|Phibar| K)) / Delta` for
    /// exponentiated gradient and `1 / Delta^2` as the starting step of
    /// extragradient (which adapts it).
    pub gamma: Option<f64>,
    pub stop: StopRule,
    pub method: Method,
    /// Iterations between duality-gap measurements.
    pub check_every: usize,
    /// Override for `Delta`, the largest absolute regret entry.
    pub delta_cap: Option<f64>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            c: None,
            max_iters: 100_000,
            gamma: None,
            stop: StopRule::Gap { tolerance: 1e-6 },
            method: Method::Extragradient,
            check_every: 25,
            delta_cap: None,
        }
    }
}

impl SolverParams {
    pub fn with_c(mut self, c: f64) -> Self {
        self.c = Some(c);
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.stop = StopRule::Gap { tolerance };
        self
    }

    pub fn with_max_iters(mut self, t: usize) -> Self {
        self.max_iters = t;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    /// Slack budget for feature dimension `k`.
    pub fn resolved_c(&self, k: usize) -> f64 {
        self.c.unwrap_or(10.0 * k as f64)
    }

    fn validate(&self, k: usize) -> Result<()> {
        let c = self.resolved_c(k);
        if !(c > 0.0 && c.is_finite()) {
            return Err(IceError::InvalidParameter(format!("C = {c} must be positive")));
        }
        if self.max_iters == 0 {
            return Err(IceError::InvalidParameter("T must be at least 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(IceError::InvalidParameter(format!("gamma = {g} must be positive")));
            }
        }
        if let Some(d) = self.delta_cap {
            if !(d > 0.0 && d.is_finite()) {
                return Err(IceError::InvalidParameter(format!("Delta = {d} must be positive")));
            }
        }
        if let StopRule::Gap { tolerance } = self.stop {
            if !(tolerance >= 0.0) {
                return Err(IceError::InvalidParameter("negative gap tolerance".into()));
            }
        }
        if self.check_every == 0 {
            return Err(IceError::InvalidParameter("check_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Iterations after which exponentiated gradient is within `eps` of the dual
/// optimum: `2 Delta^2 ln(|Phibar| K) / eps^2`, rounded up.
pub fn iteration_bound(delta: f64, mods_times_k: usize, eps: f64) -> usize {
    (2.0 * delta * delta * (mods_times_k.max(1) as f64).ln() / (eps * eps)).ceil() as usize
}

/// Default base step of exponentiated gradient.
pub fn default_gamma(delta: f64, mods_times_k: usize) -> f64 {
    (2.0 * (mods_times_k.max(2) as f64).ln()).sqrt() / delta
}

/// Dual iterate. `alpha` and `beta` are flattened `[f * K + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub xi: f64,
}

impl DualState {
    /// `alpha = beta = 1 / (|Phibar| K + 1)` with unit residual weight.
    pub fn initial(len: usize) -> Self {
        let v = 1.0 / (len as f64 + 1.0);
        Self {
            alpha: vec![v; len],
            beta: vec![v; len],
            xi: 1.0,
        }
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a - b).collect()
    }

    /// Split `lambda` into its positive and negative parts; the remaining
    /// budget goes to `xi`.
    pub fn from_lambda(lambda: &[f64], c: f64) -> Self {
        let l1: f64 = lambda.iter().map(|x| x.abs()).sum();
        Self {
            alpha: lambda.iter().map(|x| x.max(0.0)).collect(),
            beta: lambda.iter().map(|x| (-x).max(0.0)).collect(),
            xi: (c - l1).max(0.0),
        }
    }

    pub fn mass(&self) -> f64 {
        self.xi + self.alpha.iter().sum::<f64>() + self.beta.iter().sum::<f64>()
    }
}

/// One exponentiated-gradient step on the scaled simplex:
///
/// ```text
/// rho   = xi + sum alpha e^{-s g} + beta e^{s g}
/// alpha' = C alpha e^{-s g} / rho,  beta' = C beta e^{s g} / rho,  xi' = C xi / rho
/// ```
///
/// Returns the new state and how many exponents were clamped to
/// `+-EXP_CLAMP`.
pub fn eg_step(state: &DualState, g: &[f64], step: f64, c: f64) -> (DualState, usize) {
    let mut clamped = 0;
    let mut clamp = |x: f64| {
        if x.abs() > EXP_CLAMP {
            clamped += 1;
            x.signum() * EXP_CLAMP
        } else {
            x
        }
    };
    let mut alpha = Vec::with_capacity(g.len());
    let mut beta = Vec::with_capacity(g.len());
    for ((a, b), gk) in state.alpha.iter().zip(&state.beta).zip(g) {
        let e = clamp(step * gk);
        alpha.push(a * (-e).exp());
        beta.push(b * e.exp());
    }
    let rho = state.xi + alpha.iter().sum::<f64>() + beta.iter().sum::<f64>();
    let scale = c / rho;
    for v in alpha.iter_mut().chain(beta.iter_mut()) {
        *v *= scale;
    }
    (
        DualState {
            alpha,
            beta,
            xi: state.xi * scale,
        },
        clamped,
    )
}

/// Demonstrated regret vectors with duplicates removed.
#[derive(Debug, Clone)]
struct Vertices {
    k: usize,
    flat: Vec<f64>,
}

impl Vertices {
    fn new(demo: &[f64], k: usize) -> Self {
        let mut flat: Vec<f64> = Vec::new();
        for v in demo.chunks_exact(k) {
            if !flat.chunks_exact(k).any(|u| u == v) {
                flat.extend_from_slice(v);
            }
        }
        Self { k, flat }
    }

    fn len(&self) -> usize {
        self.flat.len() / self.k
    }

    fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.flat.chunks_exact(self.k)
    }

    /// `(argmax_j d_j . lam, max)` with ties to the lowest index.
    fn support(&self, lam: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, v) in self.iter().enumerate() {
            let s = dot(v, lam);
            if s > best.1 {
                best = (j, s);
            }
        }
        best
    }
}

/// Gibbs distribution `q(a) ~ exp(-sum_f rbar_f(a) . lambda[f])` and `log Z`.
fn gibbs(target: &RegretSet, lambda: &[f64]) -> (Vec<f64>, f64) {
    let mut e = target.neg_weighted_rows(lambda);
    let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in e.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in e.iter_mut() {
        *v /= z;
    }
    (e, m + z.ln())
}

fn check_dims(alpha: &[f64], beta: &[f64], demo: &[f64], target: &RegretSet) -> Result<()> {
    let k = target.feature_dim();
    if alpha.len() != target.len() * k || beta.len() != alpha.len() {
        return Err(IceError::DimensionMismatch(format!(
            "dual vectors of length {}/{} for {} modifications with K = {k}",
            alpha.len(),
            beta.len(),
            target.len()
        )));
    }
    if demo.len() % k != 0 || (demo.is_empty() && !target.is_empty()) {
        return Err(IceError::DimensionMismatch("demonstrated regrets do not tile by K".into()));
    }
    Ok(())
}

/// Dual objective at `(alpha, beta)`; the simplex constraint is not checked.
pub fn dual_objective(alpha: &[f64], beta: &[f64], demo: &[f64], target: &RegretSet) -> Result<f64> {
    check_dims(alpha, beta, demo, target)?;
    let lambda: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| a - b).collect();
    let verts = Vertices::new(demo, target.feature_dim());
    Ok(objective_lambda(&lambda, &verts, target).0)
}

/// Objective at `lambda`, with the Gibbs distribution.
fn objective_lambda(lambda: &[f64], verts: &Vertices, target: &RegretSet) -> (f64, Vec<f64>) {
    let k = target.feature_dim();
    let (q, log_z) = gibbs(target, lambda);
    let support: f64 = lambda.chunks_exact(k).map(|lam| verts.support(lam).1).sum();
    (support + log_z, q)
}

/// Gradient of the dual objective with respect to `lambda`, flattened like
/// `alpha`. The gradient with respect to `alpha` is this vector and with
/// respect to `beta` its negation.
pub fn dual_gradient(alpha: &[f64], beta: &[f64], demo: &[f64], target: &RegretSet) -> Result<Vec<f64>> {
    check_dims(alpha, beta, demo, target)?;
    let lambda: Vec<f64> = alpha.iter().zip(beta).map(|(a, b)| a - b).collect();
    let verts = Vertices::new(demo, target.feature_dim());
    Ok(gradient_lambda(&lambda, &verts, target).0)
}

/// Gradient and objective at `lambda`.
fn gradient_lambda(lambda: &[f64], verts: &Vertices, target: &RegretSet) -> (Vec<f64>, f64, Vec<f64>) {
    let k = target.feature_dim();
    let (q, log_z) = gibbs(target, lambda);
    let model = target.expected_all(&q);
    let mut g = vec![0.0; lambda.len()];
    let mut support = 0.0;
    for ((lam, gf), mf) in lambda.chunks_exact(k).zip(g.chunks_exact_mut(k)).zip(model.chunks_exact(k)) {
        let (j, s) = verts.support(lam);
        support += s;
        let d = &verts.flat[j * k..(j + 1) * k];
        for kk in 0..k {
            gf[kk] = d[kk] - mf[kk];
        }
    }
    (g, support + log_z, q)
}

/// `sigma_hat` of a dual solution over the target game.
pub fn recover_primal(dual: &DualSolution, target: &RegretSet) -> Result<BehaviorDistribution> {
    let lambda = dual.lambda();
    if lambda.len() != target.len() * target.feature_dim() {
        return Err(IceError::DimensionMismatch(
            "dual solution does not match the target modification set".into(),
        ));
    }
    Ok(BehaviorDistribution::from_probs_unchecked(gibbs(target, &lambda).0))
}

/// Utility reading of a dual solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredUtility {
    /// `pi[f] = sum_k (alpha + beta)[f] / C`.
    pub pi: Vec<f64>,
    /// `lambda[f] = alpha[f] - beta[f]`, flattened.
    pub lambda: Vec<f64>,
    /// `sum_f pi[f] lambda[f]`.
    pub w_hat: UtilityWeights,
}

pub fn recover_utility(dual: &DualSolution) -> Result<RecoveredUtility> {
    let (c, k) = (dual.c, dual.feature_dim);
    if !(c > 0.0) {
        return Err(IceError::InvalidParameter(format!("C = {c} must be positive")));
    }
    let lambda = dual.lambda();
    let mut pi = Vec::with_capacity(dual.num_modifications());
    let mut w = vec![0.0; k];
    for ((a, b), lam) in dual
        .alpha
        .chunks_exact(k)
        .zip(dual.beta.chunks_exact(k))
        .zip(lambda.chunks_exact(k))
    {
        let p = (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / c;
        for (wk, l) in w.iter_mut().zip(lam) {
            *wk += p * l;
        }
        pi.push(p);
    }
    Ok(RecoveredUtility {
        pi,
        lambda,
        w_hat: UtilityWeights::new(w)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub c: f64,
    pub feature_dim: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub xi: f64,
    pub objective_value: f64,
    /// Dual objective minus `H(sigma_hat) - C nu(sigma_hat)`, with `nu`
    /// certified exactly.
    pub gap: f64,
    pub iterations_run: usize,
    pub converged: bool,
    pub method: Method,
    /// Exponents clamped in exponentiated updates.
    pub clamp_events: usize,
    /// Objective and gap at every measurement.
    pub trace: Vec<TracePoint>,
}

impl DualSolution {
    pub fn lambda(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a - b).collect()
    }

    pub fn num_modifications(&self) -> usize {
        self.alpha.len() / self.feature_dim.max(1)
    }

    pub fn state(&self) -> DualState {
        DualState {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            xi: self.xi,
        }
    }
}

/// Exact duality gap at `lambda`; also returns the prediction and its slack
/// certificate.
fn measure(
    lambda: &[f64],
    demo: &[f64],
    verts: &Vertices,
    target: &RegretSet,
    c: f64,
) -> Result<(f64, f64, Vec<f64>, RationalityCertificate)> {
    let (obj, q) = objective_lambda(lambda, verts, target);
    let hat = target.expected_all(&q);
    let cert = certify_vectors(&hat, demo, target.feature_dim(), CertMethod::ExactLp, 1e-12)?;
    let primal = entropy_of(&q) - c * cert.nu;
    Ok((obj, obj - primal, q, cert))
}

fn entropy_of(q: &[f64]) -> f64 {
    -q.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Solve the dual for target regrets `target` against demonstrated regret
/// vectors `demo` (flattened `[j * K + k]`).
pub fn solve_regrets(demo: &[f64], target: &RegretSet, params: &SolverParams) -> Result<DualSolution> {
    let k = target.feature_dim();
    params.validate(k)?;
    let c = params.resolved_c(k);
    let len = target.len() * k;
    let init = DualState::initial(len);
    check_dims(&init.alpha, &init.beta, demo, target)?;
    if demo.iter().any(|x| !x.is_finite()) {
        return Err(IceError::Numerical("demonstrated regrets are not finite".into()));
    }
    if target.is_empty() {
        let n = target.num_outcomes() as f64;
        return Ok(DualSolution {
            c,
            feature_dim: k,
            alpha: vec![],
            beta: vec![],
            xi: c,
            objective_value: n.ln(),
            gap: 0.0,
            iterations_run: 0,
            converged: true,
            method: params.method,
            clamp_events: 0,
            trace: vec![],
        });
    }
    let delta = params.delta_cap.unwrap_or_else(|| target.max_abs().max(demo_max(demo)));
    let delta = if delta > 0.0 { delta } else { 1.0 };
    let verts = Vertices::new(demo, k);
    match params.method {
        Method::ExponentiatedGradient => run_eg(init, demo, &verts, target, params, c, delta),
        Method::Extragradient => run_extragradient(demo, &verts, target, params, c, delta),
    }
}

fn demo_max(demo: &[f64]) -> f64 {
    demo.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn tolerance(params: &SolverParams) -> Option<f64> {
    match params.stop {
        StopRule::FixedT => None,
        StopRule::Gap { tolerance } => Some(tolerance),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    state: DualState,
    objective: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
    clamp_events: usize,
    trace: Vec<TracePoint>,
    c: f64,
    k: usize,
    method: Method,
) -> DualSolution {
    DualSolution {
        c,
        feature_dim: k,
        alpha: state.alpha,
        beta: state.beta,
        xi: state.xi,
        objective_value: objective,
        gap,
        iterations_run: iterations,
        converged,
        method,
        clamp_events,
        trace,
    }
}

fn run_eg(
    init: DualState,
    demo: &[f64],
    verts: &Vertices,
    target: &RegretSet,
    params: &SolverParams,
    c: f64,
    delta: f64,
) -> Result<DualSolution> {
    let k = target.feature_dim();
    let gamma = params.gamma.unwrap_or_else(|| default_gamma(delta, init.alpha.len()));
    let tol = tolerance(params);
    let mut state = init;
    let mut clamp_events = 0;
    let mut best: Option<(f64, DualState)> = None;
    let mut measured: Option<(f64, f64)> = None;
    let mut best_changed = true;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut t = 0;
    while t < params.max_iters {
        t += 1;
        let lambda = state.lambda();
        let (g, obj, _) = gradient_lambda(&lambda, verts, target);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, state.clone()));
            best_changed = true;
        }
        let (next, clamped) = eg_step(&state, &g, gamma / (t as f64).sqrt(), c);
        clamp_events += clamped;
        state = next;
        if t % params.check_every == 0 && best_changed {
            let (bobj, bstate) = best.as_ref().expect("best iterate recorded");
            let (_, gap, _, _) = measure(&bstate.lambda(), demo, verts, target, c)?;
            trace.push(TracePoint {
                iteration: t,
                objective: *bobj,
                gap,
            });
            measured = Some((*bobj, gap));
            best_changed = false;
            if tol.is_some_and(|tol| gap <= tol) {
                converged = true;
                break;
            }
        }
    }
    let (obj, bstate) = best.expect("at least one iteration");
    let gap = match measured {
        Some((o, g)) if o == obj => g,
        _ => measure(&bstate.lambda(), demo, verts, target, c)?.1,
    };
    if tol.is_some_and(|tol| gap <= tol) {
        converged = true;
    }
    if clamp_events > 0 {
        warn!("exponentiated gradient clamped {clamp_events} exponents");
    }
    Ok(finish(bstate, obj, gap, t, converged, clamp_events, trace, c, k, Method::ExponentiatedGradient))
}

/// Euclidean projection onto `{x : |x|_1 <= radius}`.
fn project_l1_ball(v: &mut [f64], radius: f64) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return;
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let theta = simplex_threshold(&u, radius);
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// Shift of the Euclidean projection onto the simplex of total `radius`,
/// from values sorted in decreasing order.
fn simplex_threshold(sorted_desc: &[f64], radius: f64) -> f64 {
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted_desc.iter().enumerate() {
        cum += x;
        let t = (cum - radius) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta
}

fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let theta = simplex_threshold(&u, 1.0);
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Saddle iterate: `lambda` in the ell-1 ball of radius C and one mixture
/// over the demonstrated vertices per target modification.
#[derive(Clone)]
struct SaddlePoint {
    lambda: Vec<f64>,
    eta: Vec<f64>,
}

/// Operator of the saddle problem at a point: the gradient in `lambda` and
/// the payoffs `d_j . lambda[f]` the mixtures ascend on.
struct Operator {
    g: Vec<f64>,
    payoff: Vec<f64>,
}

impl SaddlePoint {
    fn zeros_like(&self) -> Self {
        Self {
            lambda: vec![0.0; self.lambda.len()],
            eta: vec![0.0; self.eta.len()],
        }
    }

    fn operator(&self, verts: &Vertices, target: &RegretSet) -> Operator {
        let k = target.feature_dim();
        let nv = verts.len();
        let (q, _) = gibbs(target, &self.lambda);
        let model = target.expected_all(&q);
        let mut g = vec![0.0; self.lambda.len()];
        let mut payoff = vec![0.0; target.len() * nv];
        for f in 0..target.len() {
            let lam = &self.lambda[f * k..(f + 1) * k];
            let gf = &mut g[f * k..(f + 1) * k];
            for (j, d) in verts.iter().enumerate() {
                let w = self.eta[f * nv + j];
                payoff[f * nv + j] = dot(d, lam);
                for kk in 0..k {
                    gf[kk] += w * d[kk];
                }
            }
            for kk in 0..k {
                gf[kk] -= model[f * k + kk];
            }
        }
        Operator { g, payoff }
    }

    /// Projected step: descent in `lambda`, ascent in `eta`.
    fn step(&self, op: &Operator, s: f64, c: f64, nv: usize) -> Self {
        let mut lambda: Vec<f64> = self.lambda.iter().zip(&op.g).map(|(x, g)| x - s * g).collect();
        project_l1_ball(&mut lambda, c);
        let mut eta: Vec<f64> = self.eta.iter().zip(&op.payoff).map(|(x, p)| x + s * p).collect();
        for row in eta.chunks_exact_mut(nv) {
            project_simplex(row);
        }
        Self { lambda, eta }
    }

    fn dist2(&self, other: &Self) -> f64 {
        sq_dist(&self.lambda, &other.lambda) + sq_dist(&self.eta, &other.eta)
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, x) in self.lambda.iter_mut().zip(&other.lambda) {
            *a += s * x;
        }
        for (a, x) in self.eta.iter_mut().zip(&other.eta) {
            *a += s * x;
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            lambda: self.lambda.iter().map(|x| x * s).collect(),
            eta: self.eta.iter().map(|x| x * s).collect(),
        }
    }

    /// Objective and a gap bound in which the slack is the residual of the
    /// current mixtures rather than the optimal ones, so it never falls below
    /// the exact gap.
    fn quick_gap(&self, verts: &Vertices, target: &RegretSet, c: f64) -> (f64, f64) {
        let k = target.feature_dim();
        let nv = verts.len();
        let (obj, q) = objective_lambda(&self.lambda, verts, target);
        let hat = target.expected_all(&q);
        let mut nu: f64 = 0.0;
        for (f, p) in hat.chunks_exact(k).enumerate() {
            for kk in 0..k {
                let mix: f64 = verts.iter().enumerate().map(|(j, d)| self.eta[f * nv + j] * d[kk]).sum();
                nu = nu.max((p[kk] - mix).abs());
            }
        }
        (obj, obj - (entropy_of(&q) - c * nu))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Extragradient on the saddle form with a backtracked step and restarts:
/// whenever the better of the current point and the running average since
/// the last restart halves the gap bound, the method restarts from it.
fn run_extragradient(
    demo: &[f64],
    verts: &Vertices,
    target: &RegretSet,
    params: &SolverParams,
    c: f64,
    delta: f64,
) -> Result<DualSolution> {
    let k = target.feature_dim();
    let nv = verts.len();
    let tol = tolerance(params);
    let mut step = params.gamma.unwrap_or(1.0 / (delta * delta));
    let mut z = SaddlePoint {
        lambda: vec![0.0; target.len() * k],
        eta: vec![1.0 / nv as f64; target.len() * nv],
    };
    let mut sum = z.zeros_like();
    let mut weight = 0.0;
    let mut restart_gap = z.quick_gap(verts, target, c).1;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut restarts = 0;
    let mut t = 0;
    let exact_every = 4 * params.check_every;
    while t < params.max_iters {
        t += 1;
        let fz = z.operator(verts, target);
        let (w, next) = loop {
            let w = z.step(&fz, step, c, nv);
            let fw = w.operator(verts, target);
            let lhs = step * step * (sq_dist(&fw.g, &fz.g) + sq_dist(&fw.payoff, &fz.payoff));
            if lhs <= 0.81 * w.dist2(&z) || step < 1e-14 {
                let next = z.step(&fw, step, c, nv);
                break (w, next);
            }
            step *= 0.5;
        };
        sum.add_scaled(&w, step);
        weight += step;
        z = next;
        step *= 1.1;
        if t % params.check_every == 0 || t == params.max_iters {
            let mean = sum.scaled(1.0 / weight);
            let (obj_w, gap_w) = w.quick_gap(verts, target, c);
            let (obj_m, gap_m) = mean.quick_gap(verts, target, c);
            let (obj, mut gap, cand) = if gap_m < gap_w {
                (obj_m, gap_m, mean)
            } else {
                (obj_w, gap_w, w)
            };
            if gap <= 0.5 * restart_gap {
                z = cand.clone();
                sum = z.zeros_like();
                weight = 0.0;
                restart_gap = gap;
                restarts += 1;
            }
            let exact = t % exact_every == 0 || tol.is_some_and(|tol| gap <= tol) || t == params.max_iters;
            if exact {
                gap = gap.min(measure(&cand.lambda, demo, verts, target, c)?.1);
            }
            trace.push(TracePoint {
                iteration: t,
                objective: obj,
                gap,
            });
            if best.as_ref().map_or(true, |(_, g, _)| gap < *g) {
                best = Some((obj, gap, cand.lambda));
            }
            if exact && tol.is_some_and(|tol| gap <= tol) {
                converged = true;
                break;
            }
        }
    }
    let lambda = best.map(|b| b.2).unwrap_or(z.lambda);
    let (obj, gap, _, _) = measure(&lambda, demo, verts, target, c)?;
    debug!("extragradient stopped after {t} iterations and {restarts} restarts, gap {gap:.3e}");
    let state = DualState::from_lambda(&lambda, c);
    Ok(finish(state, obj, gap, t, converged, 0, trace, c, k, Method::Extragradient))
}

/// Solve on games: the dual of predicting play in `game_target` under
/// `mods_target` from `sigma_tilde` observed in `game_obs` under `mods_obs`.
/// Prediction is the case where both games and classes coincide.
pub fn solve(
    game_obs: &Game,
    mods_obs: &ModificationSet,
    sigma_tilde: &BehaviorDistribution,
    game_target: &Game,
    mods_target: &ModificationSet,
    params: &SolverParams,
) -> Result<DualSolution> {
    oracle::check_shared_features(game_obs, game_target)?;
    sigma_tilde.check_game(game_obs)?;
    let demo = RegretSet::new(game_obs, mods_obs)?.expected_all(sigma_tilde.probs());
    let target = RegretSet::new(game_target, mods_target)?;
    solve_regrets(&demo, &target, params)
}

/// A solved model with its prediction, utility estimate and certificate.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub dual: DualSolution,
    pub predicted: BehaviorDistribution,
    pub recovered: RecoveredUtility,
    pub nu_certified: f64,
    pub certificate: RationalityCertificate,
    /// `sigma_tilde^T R^j` for every observed modification.
    pub demonstrated_regrets: Vec<f64>,
}

impl FittedModel {
    pub fn w_hat(&self) -> &UtilityWeights {
        &self.recovered.w_hat
    }

    /// `H(sigma_hat) - C nu`.
    pub fn primal_value(&self) -> f64 {
        entropy(&self.predicted) - self.dual.c * self.nu_certified
    }
}

/// Solve, then recover the prediction, utility and slack certificate.
pub fn fit_regrets(demo: &[f64], target: &RegretSet, params: &SolverParams) -> Result<FittedModel> {
    let dual = solve_regrets(demo, target, params)?;
    let predicted = recover_primal(&dual, target)?;
    let recovered = recover_utility(&dual)?;
    let hat = target.expected_all(predicted.probs());
    let certificate = if target.is_empty() {
        RationalityCertificate {
            nu: 0.0,
            per_modification: vec![],
            eta: vec![],
            method: CertMethod::ExactLp,
            tolerance: 1e-12,
        }
    } else {
        certify_vectors(&hat, demo, target.feature_dim(), CertMethod::ExactLp, 1e-12)?
    };
    Ok(FittedModel {
        nu_certified: certificate.nu,
        dual,
        predicted,
        recovered,
        certificate,
        demonstrated_regrets: demo.to_vec(),
    })
}

pub fn fit(
    game_obs: &Game,
    mods_obs: &ModificationSet,
    sigma_tilde: &BehaviorDistribution,
    game_target: &Game,
    mods_target: &ModificationSet,
    params: &SolverParams,
) -> Result<FittedModel> {
    oracle::check_shared_features(game_obs, game_target)?;
    sigma_tilde.check_game(game_obs)?;
    let demo = RegretSet::new(game_obs, mods_obs)?.expected_all(sigma_tilde.probs());
    let target = RegretSet::new(game_target, mods_target)?;
    fit_regrets(&demo, &target, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{mg1, random_game};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mg1_set() -> RegretSet {
        let g = mg1();
        RegretSet::new(&g, &ModificationSet::internal(&g)).unwrap()
    }

    #[test]
    fn equal_multipliers_give_log_outcomes() {
        let set = mg1_set();
        let demo = set.expected_all(BehaviorDistribution::uniform(4).probs());
        let a = vec![0.3; 8];
        assert_abs_diff_eq!(dual_objective(&a, &a, &demo, &set).unwrap(), 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn objective_by_hand() {
        let set = mg1_set();
        let demo = set.expected_all(BehaviorDistribution::uniform(4).probs());
        let mut alpha = vec![0.0; 8];
        alpha[0] = 1.0;
        let beta = vec![0.0; 8];
        // max_j d_j . (1, 0) over d = (-1/4, 1/4), (1/4, -1/4), 0, 0 is 1/4;
        // exponents are (1, 0, 0, 0).
        let expected = 0.25 + (1f64.exp() + 3.0).ln();
        assert_abs_diff_eq!(dual_objective(&alpha, &beta, &demo, &set).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let set = mg1_set();
        let a = vec![0.2; 8];
        let uniform = set.expected_all(BehaviorDistribution::uniform(4).probs());
        let g = dual_gradient(&a, &a, &uniform, &set).unwrap();
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-15);

        let point = set.expected_all(BehaviorDistribution::point_mass(4, 0).unwrap().probs());
        let g = dual_gradient(&a, &a, &point, &set).unwrap();
        assert_abs_diff_eq!(g[0], -0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let g = random_game(vec![2, 3], 3, seed);
            let set = RegretSet::new(&g, &ModificationSet::internal(&g)).unwrap();
            let tilde = BehaviorDistribution::from_weights((0..6).map(|i| 1.0 + i as f64).collect()).unwrap();
            let demo = set.expected_all(tilde.probs());
            let n = set.len() * 3;
            let alpha: Vec<f64> = (0..n).map(|i| 0.1 + 0.05 * ((i * 7 + seed as usize) % 5) as f64).collect();
            let beta: Vec<f64> = (0..n).map(|i| 0.1 + 0.03 * ((i * 3 + 1) % 7) as f64).collect();
            let grad = dual_gradient(&alpha, &beta, &demo, &set).unwrap();
            let h = 1e-5;
            for i in 0..n {
                let mut ap = alpha.clone();
                let mut am = alpha.clone();
                ap[i] += h;
                am[i] -= h;
                let fd = (dual_objective(&ap, &beta, &demo, &set).unwrap()
                    - dual_objective(&am, &beta, &demo, &set).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() <= 1e-5 * fd.abs().max(1.0), "{fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn eg_step_examples() {
        let s = DualState {
            alpha: vec![1.0],
            beta: vec![1.0],
            xi: 1.0,
        };
        let (n, clamped) = eg_step(&s, &[0.0], 0.5, 3.0);
        assert_eq!(clamped, 0);
        assert_abs_diff_eq!(n.alpha[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.beta[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.xi, 1.0, epsilon = 1e-15);

        let (n, _) = eg_step(&s, &[0.7], 0.5, 3.0);
        assert!(n.alpha[0] / n.beta[0] < 1.0);
        let (_, clamped) = eg_step(&s, &[1e6], 1.0, 3.0);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn iteration_bound_arithmetic() {
        assert_eq!(iteration_bound(1.0, 8, 0.1), 416);
    }

    #[test]
    fn recover_examples() {
        let set = mg1_set();
        let mut dual = finish(DualState::initial(8), 0.0, 0.0, 0, true, 0, vec![], 3.0, 2, Method::Extragradient);
        let p = recover_primal(&dual, &set).unwrap();
        assert_eq!(p.probs(), &[0.25; 4]);
        dual.alpha = vec![0.0; 8];
        dual.beta = vec![0.0; 8];
        dual.alpha[0] = 1.0;
        let p = recover_primal(&dual, &set).unwrap();
        let z = 1f64.exp() + 3.0;
        assert_abs_diff_eq!(p.probs()[0], 1f64.exp() / z, epsilon = 1e-15);
        assert_abs_diff_eq!(p.probs()[1], 1.0 / z, epsilon = 1e-15);

        let zero = finish(
            DualState {
                alpha: vec![0.0; 2],
                beta: vec![0.0; 2],
                xi: 2.0,
            },
            0.0,
            0.0,
            0,
            true,
            0,
            vec![],
            2.0,
            2,
            Method::Extragradient,
        );
        assert_eq!(recover_utility(&zero).unwrap().w_hat.as_slice(), &[0.0, 0.0]);
        let mut one = zero.clone();
        one.alpha[0] = 1.0;
        one.xi = 1.0;
        let u = recover_utility(&one).unwrap();
        assert_eq!(u.pi, vec![0.5]);
        assert_eq!(u.lambda, vec![1.0, 0.0]);
        assert_eq!(u.w_hat.as_slice(), &[0.5, 0.0]);
    }

    #[test]
    fn mg1_uniform_prediction() {
        let g = mg1();
        let mods = ModificationSet::internal(&g);
        let tilde = BehaviorDistribution::uniform(4);
        let params = SolverParams::default().with_c(10.0).with_max_iters(5000);
        let fit = fit(&g, &mods, &tilde, &g, &mods, &params).unwrap();
        assert!(fit.predicted.max_abs_diff(&tilde) < 1e-3);
        assert!(fit.dual.gap <= 1e-6);
    }

    #[test]
    fn mg1_point_mass_matches_oracle() {
        let set = mg1_set();
        let demo = set.expected_all(BehaviorDistribution::point_mass(4, 0).unwrap().probs());
        let oracle = oracle::brute_force_primal(&set, &demo, 10.0, Default::default()).unwrap();
        for method in [Method::Extragradient, Method::ExponentiatedGradient] {
            let params = SolverParams::default().with_c(10.0).with_method(method).with_tolerance(1e-7);
            let fit = fit_regrets(&demo, &set, &params).unwrap();
            let diff = fit.predicted.max_abs_diff(&oracle.sigma);
            assert!(diff < 1e-3, "{method:?}: {diff}");
            if method == Method::Extragradient {
                assert!((fit.primal_value() - oracle.objective).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn deterministic() {
        let g = random_game(vec![3, 2], 2, 4);
        let mods = ModificationSet::internal(&g);
        let tilde = BehaviorDistribution::from_weights(vec![3.0, 1.0, 0.0, 2.0, 1.0, 1.0]).unwrap();
        for method in [Method::Extragradient, Method::ExponentiatedGradient] {
            let p = SolverParams::default().with_method(method).with_max_iters(2000);
            let a = solve(&g, &mods, &tilde, &g, &mods, &p).unwrap();
            let b = solve(&g, &mods, &tilde, &g, &mods, &p).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn objective_never_above_start() {
        for seed in 0..5 {
            let g = random_game(vec![2, 2, 2], 2, seed);
            let mods = ModificationSet::internal(&g);
            let tilde = BehaviorDistribution::point_mass(8, seed as usize).unwrap();
            for method in [Method::Extragradient, Method::ExponentiatedGradient] {
                let p = SolverParams::default().with_method(method).with_max_iters(3000);
                let s = solve(&g, &mods, &tilde, &g, &mods, &p).unwrap();
                assert!(s.objective_value <= 8f64.ln() + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn eg_step_preserves_mass(
            seed in 0u64..1000,
            len in 1usize..12,
            c in 0.1f64..50.0,
            step in 0.0f64..5.0,
        ) {
            let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut next = || {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64
            };
            let s = DualState {
                alpha: (0..len).map(|_| next() * c / len as f64).collect(),
                beta: (0..len).map(|_| next() * c / len as f64).collect(),
                xi: next() + 1e-3,
            };
            let g: Vec<f64> = (0..len).map(|_| 20.0 * next() - 10.0).collect();
            let (n, _) = eg_step(&s, &g, step, c);
            prop_assert!((n.mass() - c).abs() <= 1e-12 * c.max(1.0));
            prop_assert!(n.alpha.iter().chain(&n.beta).all(|v| *v > 0.0));
        }

        #[test]
        fn recovered_utility_within_budget(seed in 0u64..500, c in 0.1f64..40.0) {
            let g = random_game(vec![2, 2], 2, seed);
            let set = RegretSet::new(&g, &ModificationSet::internal(&g)).unwrap();
            let n = set.len() * 2;
            let raw: Vec<f64> = (0..2 * n + 1).map(|i| ((seed as usize * 31 + i * 17) % 13) as f64 + 0.5).collect();
            let total: f64 = raw.iter().sum();
            let state = DualState {
                alpha: raw[..n].iter().map(|v| v * c / total).collect(),
                beta: raw[n..2 * n].iter().map(|v| v * c / total).collect(),
                xi: raw[2 * n] * c / total,
            };
            let dual = finish(state, 0.0, 0.0, 0, true, 0, vec![], c, 2, Method::Extragradient);
            let u = recover_utility(&dual).unwrap();
            prop_assert!(u.w_hat.l1_norm() <= c + 1e-9);
            prop_assert!((u.pi.iter().sum::<f64>() + dual.xi / c - 1.0).abs() < 1e-12);
            let p = recover_primal(&dual, &set).unwrap();
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
