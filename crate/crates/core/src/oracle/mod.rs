//! Independent checks of rationality claims.
//!
//! * [`certify_slack`] decides, for every target modification, how far its
//!   expected regret vector lies from the convex hull of the demonstrated
//!   regret vectors (ell-infinity), which is exactly the slack a prediction
//!   needs to be feasible for the transfer program.
//! * [`check_strong_rationality`] samples utility directions and compares
//!   class regrets directly, without going through the hull formulation.
//! * [`brute_force_primal`] solves the slack-penalized maximum entropy program
//!   in its primal form with an interior-point method, sharing no code with
//!   the dual solver.

pub mod lp;
mod primal;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorDistribution;
use crate::error::{IceError, Result};
use crate::game::{dot, Game, ModificationSet, RegretSet};

pub use lp::{hull_distance_inf, residual_inf};
pub use primal::{brute_force_primal, PrimalParams, PrimalSolution, MAX_PRIMAL_OUTCOMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertMethod {
    ExactLp,
    FrankWolfe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalityCertificate {
    /// Largest per-modification deviation.
    pub nu: f64,
    /// Deviation of every target modification.
    pub per_modification: Vec<f64>,
    /// For every target modification, a mixture over the demonstrated
    /// modifications achieving its deviation.
    pub eta: Vec<Vec<f64>>,
    /// Method that produced each row of `eta` (Frank-Wolfe rows fall back to
    /// the exact program when their certified gap does not close).
    pub method: CertMethod,
    pub tolerance: f64,
}

impl RationalityCertificate {
    /// Recompute `nu` from `eta` and the regret vectors it certifies.
    pub fn reevaluate(&self, target: &[f64], demo: &[f64], k: usize) -> f64 {
        let vertices: Vec<&[f64]> = demo.chunks_exact(k).collect();
        target
            .chunks_exact(k)
            .zip(&self.eta)
            .map(|(p, w)| residual_inf(p, &vertices, w))
            .fold(0.0, f64::max)
    }
}

/// Frank-Wolfe settings for [`CertMethod::FrankWolfe`].
const FW_MAX_ITERS: usize = 5_000;

/// Certify the slack of a set of target regret vectors against demonstrated
/// ones. Both are flattened `[f * K + k]`.
pub fn certify_vectors(
    target: &[f64],
    demo: &[f64],
    k: usize,
    method: CertMethod,
    tolerance: f64,
) -> Result<RationalityCertificate> {
    if k == 0 || target.len() % k != 0 || demo.len() % k != 0 {
        return Err(IceError::DimensionMismatch("regret vectors do not tile by K".into()));
    }
    let n_demo = demo.len() / k;
    if n_demo == 0 && !target.is_empty() {
        return Err(IceError::Empty("no demonstrated modifications to certify against".into()));
    }
    // Hull vertices with duplicates removed; weights map back to the first
    // occurrence in canonical order.
    let mut unique: Vec<usize> = Vec::new();
    for (j, v) in demo.chunks_exact(k).enumerate() {
        if !unique.iter().any(|&u| demo[u * k..(u + 1) * k] == *v) {
            unique.push(j);
        }
    }
    let vertices: Vec<&[f64]> = unique.iter().map(|&u| &demo[u * k..(u + 1) * k]).collect();

    let mut per_modification = Vec::with_capacity(target.len() / k);
    let mut eta = Vec::with_capacity(target.len() / k);
    for point in target.chunks_exact(k) {
        let solved = match method {
            CertMethod::FrankWolfe => frank_wolfe(point, &vertices, tolerance, FW_MAX_ITERS),
            CertMethod::ExactLp => None,
        };
        let (d, w) = solved.unwrap_or_else(|| hull_distance_inf(point, &vertices));
        let mut full = vec![0.0; n_demo];
        for (&u, x) in unique.iter().zip(w) {
            full[u] = x;
        }
        per_modification.push(d);
        eta.push(full);
    }
    let nu = per_modification.iter().copied().fold(0.0, f64::max);
    Ok(RationalityCertificate {
        nu,
        per_modification,
        eta,
        method,
        tolerance,
    })
}

/// Slack certificate of `sigma_hat` over the target game against `sigma_tilde`
/// over the observed game.
pub fn certify_slack(
    sigma_hat: &BehaviorDistribution,
    sigma_tilde: &BehaviorDistribution,
    game_obs: &Game,
    mods_obs: &ModificationSet,
    game_target: &Game,
    mods_target: &ModificationSet,
    method: CertMethod,
) -> Result<RationalityCertificate> {
    check_shared_features(game_obs, game_target)?;
    sigma_hat.check_game(game_target)?;
    sigma_tilde.check_game(game_obs)?;
    let demo = RegretSet::new(game_obs, mods_obs)?.expected_all(sigma_tilde.probs());
    let target = RegretSet::new(game_target, mods_target)?.expected_all(sigma_hat.probs());
    certify_vectors(&target, &demo, game_obs.feature_dim(), method, 1e-9)
}

pub(crate) fn check_shared_features(a: &Game, b: &Game) -> Result<()> {
    if a.feature_dim() != b.feature_dim() {
        return Err(IceError::DimensionMismatch(format!(
            "observed game has {} features, target game has {}",
            a.feature_dim(),
            b.feature_dim()
        )));
    }
    Ok(())
}

/// Frank-Wolfe on the squared ell-2 distance, stopped once the ell-infinity
/// distance of the iterate is within `tol` of a duality lower bound.
fn frank_wolfe(point: &[f64], vertices: &[&[f64]], tol: f64, max_iters: usize) -> Option<(f64, Vec<f64>)> {
    let k = point.len();
    let nv = vertices.len();
    let mut w = vec![0.0; nv];
    let start = (0..nv)
        .min_by(|&a, &b| {
            let da = sq_dist(point, vertices[a]);
            let db = sq_dist(point, vertices[b]);
            da.total_cmp(&db)
        })
        .unwrap_or(0);
    w[start] = 1.0;
    let mut mix = vertices[start].to_vec();
    for _ in 0..max_iters {
        let r: Vec<f64> = point.iter().zip(&mix).map(|(p, m)| p - m).collect();
        let upper = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let r1: f64 = r.iter().map(|x| x.abs()).sum();
        if r1 == 0.0 {
            return Some((0.0, w));
        }
        // For any unit ell-1 direction u: dist_inf >= p.u - max_j v_j.u.
        let u: Vec<f64> = r.iter().map(|x| x / r1).collect();
        let support = vertices.iter().map(|v| dot(v, &u)).fold(f64::NEG_INFINITY, f64::max);
        let lower = (dot(point, &u) - support).max(0.0);
        if upper - lower <= tol {
            return Some((upper, w));
        }
        let (j, _) = vertices
            .iter()
            .enumerate()
            .map(|(j, v)| (j, dot(v, &r)))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        let d: Vec<f64> = (0..k).map(|kk| vertices[j][kk] - mix[kk]).collect();
        let dd = dot(&d, &d);
        if dd == 0.0 {
            return None;
        }
        let step = (dot(&r, &d) / dd).clamp(0.0, 1.0);
        if step == 0.0 {
            return None;
        }
        for x in w.iter_mut() {
            *x *= 1.0 - step;
        }
        w[j] += step;
        for (m, dk) in mix.iter_mut().zip(&d) {
            *m += step * dk;
        }
    }
    None
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Outcome of a sampled strong-rationality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalityCheck {
    /// `max_w Regret(hat, w) - Regret(tilde, w) - nu ||w||_1` over the sampled
    /// directions.
    pub max_violation: f64,
    /// Direction achieving `max_violation`. When the violation is positive this
    /// is a utility vector under which the demonstrated behavior is preferred.
    pub worst_direction: Vec<f64>,
    pub directions: usize,
}

/// Signed coordinate axes followed by directions uniform on the ell-1 sphere,
/// `max(num_dirs, 2K)` in total.
pub fn sample_directions(k: usize, num_dirs: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(num_dirs.max(2 * k));
    for kk in 0..k {
        for s in [1.0, -1.0] {
            let mut w = vec![0.0; k];
            w[kk] = s;
            dirs.push(w);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < num_dirs {
        // Normalized exponentials are uniform on the simplex; random signs
        // spread them over the whole ell-1 sphere.
        let mut w: Vec<f64> = (0..k)
            .map(|_| -(1.0 - rng.gen::<f64>()).ln())
            .collect();
        let s: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= s;
            if rng.gen::<bool>() {
                *x = -*x;
            }
        }
        dirs.push(w);
    }
    dirs
}

/// Sampled strong-rationality check from expected regret vectors of the
/// prediction (`hat`, target class) and the demonstration (`tilde`).
pub fn check_strong_rationality_vectors(
    hat: &[f64],
    tilde: &[f64],
    k: usize,
    nu: f64,
    num_dirs: usize,
    seed: u64,
) -> Result<RationalityCheck> {
    if nu < 0.0 {
        return Err(IceError::InvalidParameter(format!("nu = {nu} is negative")));
    }
    if hat.is_empty() || tilde.is_empty() {
        return Err(IceError::Empty("modification set is empty".into()));
    }
    let support = |vectors: &[f64], w: &[f64]| {
        vectors
            .chunks_exact(k)
            .map(|v| dot(v, w))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let dirs = sample_directions(k, num_dirs, seed);
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for w in &dirs {
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        let v = support(hat, w) - support(tilde, w) - nu * l1;
        if v > best.0 {
            best = (v, w.clone());
        }
    }
    Ok(RationalityCheck {
        max_violation: best.0,
        worst_direction: best.1,
        directions: dirs.len(),
    })
}

/// Sampled strong-rationality check of `sigma_hat` against `sigma_tilde` on
/// one game.
pub fn check_strong_rationality(
    sigma_hat: &BehaviorDistribution,
    sigma_tilde: &BehaviorDistribution,
    mods: &ModificationSet,
    game: &Game,
    nu: f64,
    num_dirs: usize,
    seed: u64,
) -> Result<RationalityCheck> {
    sigma_hat.check_game(game)?;
    sigma_tilde.check_game(game)?;
    let set = RegretSet::new(game, mods)?;
    let hat = set.expected_all(sigma_hat.probs());
    let tilde = set.expected_all(sigma_tilde.probs());
    check_strong_rationality_vectors(&hat, &tilde, game.feature_dim(), nu, num_dirs, seed)
}
