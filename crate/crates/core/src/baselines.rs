//! Comparison models: smoothed joint-action frequencies and a log-linear
//! model over summed outcome features.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorDistribution, SampleSet};
use crate::error::{IceError, Result};
use crate::game::{dot, Game};

pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const WEIGHT_CAP: f64 = 50.0;
const GRAD_TOL: f64 = 1e-9;
const MAX_STEPS: usize = 1000;

/// Add-one smoothed frequencies `(count_a + 1) / (M + |A|)`.
pub fn mle_uniform_prior(samples: &SampleSet, game: &Game) -> Result<BehaviorDistribution> {
    samples.outcomes.iter().try_for_each(|&a| game.check_outcome(a))?;
    let n = game.num_outcomes();
    let denom = (samples.len() + n) as f64;
    let probs = samples
        .counts(n)
        .into_iter()
        .map(|c| (c + 1) as f64 / denom)
        .collect();
    Ok(BehaviorDistribution::from_probs_unchecked(probs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub ridge: f64,
    pub converged: bool,
}

impl LogisticModel {
    pub fn zeros(k: usize) -> Self {
        Self {
            w: vec![0.0; k],
            ridge: 0.0,
            converged: true,
        }
    }
}

/// Outcome-major summed features `phi(a) = sum_i theta^i_a`.
fn phi_table(game: &Game) -> Vec<f64> {
    (0..game.num_outcomes()).flat_map(|a| game.summed_features(a)).collect()
}

/// Returns `(probs, log Z)` of `p_a ∝ exp(w . phi(a))`.
fn log_linear(phi: &[f64], w: &[f64]) -> (Vec<f64>, f64) {
    let scores: Vec<f64> = phi.chunks_exact(w.len()).map(|f| dot(f, w)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    (p, max + z.ln())
}

struct Problem<'a> {
    phi: &'a [f64],
    mean_phi: Vec<f64>,
    ridge: f64,
    k: usize,
}

impl Problem<'_> {
    fn objective(&self, w: &[f64]) -> f64 {
        let (_, log_z) = log_linear(self.phi, w);
        dot(&self.mean_phi, w) - log_z - self.ridge * dot(w, w)
    }

    /// Objective, gradient and negated Hessian.
    fn derivatives(&self, w: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let k = self.k;
        let (p, log_z) = log_linear(self.phi, w);
        let mut mean = vec![0.0; k];
        let mut second = DMatrix::<f64>::zeros(k, k);
        for (f, &pa) in self.phi.chunks_exact(k).zip(&p) {
            for r in 0..k {
                mean[r] += pa * f[r];
                for c in 0..k {
                    second[(r, c)] += pa * f[r] * f[c];
                }
            }
        }
        let grad: Vec<f64> = (0..k)
            .map(|r| self.mean_phi[r] - mean[r] - 2.0 * self.ridge * w[r])
            .collect();
        let mut neg_hess = second;
        for r in 0..k {
            for c in 0..k {
                neg_hess[(r, c)] -= mean[r] * mean[c];
            }
            neg_hess[(r, r)] += 2.0 * self.ridge;
        }
        let obj = dot(&self.mean_phi, w) - log_z - self.ridge * dot(w, w);
        (obj, grad, neg_hess)
    }
}

/// Average log-likelihood minus `ridge * |w|^2`.
pub fn logistic_objective(samples: &SampleSet, game: &Game, ridge: f64, w: &[f64]) -> Result<f64> {
    let phi = phi_table(game);
    let mean_phi = sample_mean(&phi, samples, game)?;
    Ok(Problem {
        phi: &phi,
        mean_phi,
        ridge,
        k: game.feature_dim(),
    }
    .objective(w))
}

/// Gradient of [`logistic_objective`] with respect to `w`.
pub fn logistic_gradient(samples: &SampleSet, game: &Game, ridge: f64, w: &[f64]) -> Result<Vec<f64>> {
    let phi = phi_table(game);
    let mean_phi = sample_mean(&phi, samples, game)?;
    Ok(Problem {
        phi: &phi,
        mean_phi,
        ridge,
        k: game.feature_dim(),
    }
    .derivatives(w)
    .1)
}

fn sample_mean(phi: &[f64], samples: &SampleSet, game: &Game) -> Result<Vec<f64>> {
    samples.validate(game)?;
    let k = game.feature_dim();
    let mut mean = vec![0.0; k];
    for &a in &samples.outcomes {
        for (m, f) in mean.iter_mut().zip(&phi[a * k..(a + 1) * k]) {
            *m += f;
        }
    }
    let m = samples.len() as f64;
    mean.iter_mut().for_each(|x| *x /= m);
    Ok(mean)
}

/// Maximize the ridge-penalized average log-likelihood by ascent steps with
/// backtracking line search. Steps follow the Newton direction when the
/// curvature is positive definite and the gradient otherwise.
pub fn fit_logistic(samples: &SampleSet, game: &Game, ridge: f64) -> Result<LogisticModel> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(IceError::InvalidParameter(format!("ridge must be >= 0, got {ridge}")));
    }
    let phi = phi_table(game);
    let problem = Problem {
        mean_phi: sample_mean(&phi, samples, game)?,
        phi: &phi,
        ridge,
        k: game.feature_dim(),
    };
    let k = problem.k;
    let mut w = vec![0.0; k];
    let mut capped = false;
    let mut converged = false;
    for _ in 0..MAX_STEPS {
        let (obj, grad, neg_hess) = problem.derivatives(&w);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        // Without ridge the gradient of a separable fit decays as the weights
        // diverge, so only stalling or the cap ends the ascent.
        if gmax <= GRAD_TOL && ridge > 0.0 || gmax == 0.0 {
            converged = true;
            break;
        }
        let g = DVector::from_column_slice(&grad);
        let dir: Vec<f64> = match neg_hess.cholesky() {
            Some(ch) => ch.solve(&g).iter().copied().collect(),
            None => grad.clone(),
        };
        let slope = dot(&dir, &grad);
        let dir = if slope > 0.0 { dir } else { grad.clone() };
        let slope = dot(&dir, &grad);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-16 {
            let mut cand: Vec<f64> = w.iter().zip(&dir).map(|(x, d)| x + t * d).collect();
            let mut clipped = false;
            for x in cand.iter_mut() {
                if x.abs() > WEIGHT_CAP {
                    *x = x.signum() * WEIGHT_CAP;
                    clipped = true;
                }
            }
            let new_obj = problem.objective(&cand);
            if new_obj >= obj + 1e-4 * t * slope || (clipped && new_obj >= obj) {
                accepted = Some((cand, clipped));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, clipped)) => {
                let moved = cand.iter().zip(&w).any(|(a, b)| a != b);
                w = cand;
                if clipped {
                    capped = true;
                }
                if !moved {
                    break;
                }
            }
            None => {
                // No ascent possible at machine precision.
                converged = gmax <= 1e-6;
                break;
            }
        }
    }
    if ridge == 0.0 && !capped {
        // A stall where some outcome is numerically unreachable means the
        // likelihood still rises along w: project that ray onto the cap.
        let (p, _) = log_linear(&phi, &w);
        let wmax = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if wmax > 0.0 && p.iter().any(|&x| x < 1e-12) {
            w.iter_mut().for_each(|x| *x *= WEIGHT_CAP / wmax);
            capped = true;
        }
    }
    if capped {
        let grad = problem.derivatives(&w).1;
        // A weight held on the cap by an outward gradient means the optimum
        // is unbounded.
        let outward = grad.iter().zip(&w).any(|(g, x)| x.abs() >= WEIGHT_CAP && g * x >= 0.0);
        converged = !outward && grad.iter().all(|g| g.abs() <= 1e-6);
    }
    Ok(LogisticModel { w, ridge, converged })
}

/// Apply fitted weights to any game with the same feature dimension.
pub fn predict_logistic(model: &LogisticModel, game: &Game) -> Result<BehaviorDistribution> {
    if model.w.len() != game.feature_dim() {
        return Err(IceError::DimensionMismatch(format!(
            "model has {} weights, game has K = {}",
            model.w.len(),
            game.feature_dim()
        )));
    }
    if model.w.iter().any(|x| !x.is_finite()) {
        return Err(IceError::Numerical("non-finite logistic weights".into()));
    }
    let (p, _) = log_linear(&phi_table(game), &model.w);
    Ok(BehaviorDistribution::from_probs_unchecked(p))
}
