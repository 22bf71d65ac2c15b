//! Ground-truth behavior from internal-regret matching.
//!
//! Every player keeps cumulative internal regrets
//! `D_i(x, y) = sum_t 1[a_i^t = x] (u_i(y, a_-i^t) - u_i(a^t))` and plays the
//! stationary distribution of the switching chain whose off-diagonal rates
//! are the positive parts of `D_i`. The empirical distribution of joint play
//! converges to the set of correlated equilibria, and its internal regret is
//! exactly `max D / T`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorDistribution;
use crate::error::{IceError, Result};
use crate::game::{dot, Game, UtilityWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRun {
    pub sigma: BehaviorDistribution,
    /// Internal regret of `sigma` under the weights that generated it.
    pub epsilon_achieved: f64,
    pub iterations: usize,
    /// `sum_i E_sigma[u_i]`.
    pub welfare: f64,
    pub seed: u64,
}

/// Run internal-regret matching for `iters` rounds.
pub fn regret_matching(game: &Game, w_star: &UtilityWeights, iters: usize, seed: u64) -> Result<EquilibriumRun> {
    if iters == 0 {
        return Err(IceError::InvalidParameter("iters must be at least 1".into()));
    }
    if w_star.dim() != game.feature_dim() {
        return Err(IceError::DimensionMismatch(format!(
            "weights of dimension {} for K = {}",
            w_star.dim(),
            game.feature_dim()
        )));
    }
    let w = w_star.as_slice();
    let n = game.num_players();
    let counts = game.action_counts().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regrets: Vec<Vec<f64>> = counts.iter().map(|&m| vec![0.0; m * m]).collect();
    let mut mixed: Vec<Vec<f64>> = counts.iter().map(|&m| vec![1.0 / m as f64; m]).collect();
    let mut visits = vec![0u64; game.num_outcomes()];
    let mut payoff = Vec::new();

    for _ in 0..iters {
        let digits: Vec<usize> = mixed.iter().map(|p| sample(p, &mut rng)).collect();
        let a = game.encode(&digits)?;
        visits[a] += 1;
        for i in 0..n {
            let m = counts[i];
            let x = digits[i];
            payoff.clear();
            payoff.extend((0..m).map(|y| dot(game.features(i, game.with_action(a, i, y)), w)));
            let row = &mut regrets[i][x * m..(x + 1) * m];
            for y in 0..m {
                row[y] += payoff[y] - payoff[x];
            }
        }
        for i in 0..n {
            stationary(&regrets[i], counts[i], &mut mixed[i]);
        }
    }

    let total = iters as f64;
    let sigma = BehaviorDistribution::from_weights(visits.iter().map(|&c| c as f64).collect())?;
    let epsilon_achieved = regrets
        .iter()
        .zip(&counts)
        .flat_map(|(d, &m)| {
            (0..m * m)
                .filter(move |idx| idx / m != idx % m)
                .map(move |idx| d[idx] / total)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let epsilon_achieved = if epsilon_achieved.is_finite() { epsilon_achieved } else { 0.0 };
    let welfare = welfare(game, &sigma, w_star)?;
    Ok(EquilibriumRun {
        sigma,
        epsilon_achieved,
        iterations: iters,
        welfare,
        seed,
    })
}

/// `sum_i E_sigma[u_i(a | w)]`.
pub fn welfare(game: &Game, sigma: &BehaviorDistribution, w: &UtilityWeights) -> Result<f64> {
    sigma.check_game(game)?;
    let mut total = 0.0;
    for (a, &p) in sigma.probs().iter().enumerate() {
        if p > 0.0 {
            total += p * dot(&game.summed_features(a), w.as_slice());
        }
    }
    Ok(total)
}

fn sample<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Stationary distribution of the chain with rates `max(D(x, y), 0)` from `x`
/// to `y`. Leaves `out` unchanged when no regret is positive.
fn stationary(d: &[f64], m: usize, out: &mut [f64]) {
    let rate = |x: usize, y: usize| if x == y { 0.0 } else { d[x * m + y].max(0.0) };
    let total: f64 = (0..m).flat_map(|x| (0..m).map(move |y| (x, y))).map(|(x, y)| rate(x, y)).sum();
    if total <= 0.0 {
        return;
    }
    // p G = 0 with generator G = rates - diag(row sums); one balance equation
    // is replaced by normalization.
    let mut a = DMatrix::<f64>::zeros(m, m);
    for x in 0..m {
        let out_rate: f64 = (0..m).map(|y| rate(x, y)).sum();
        for y in 0..m {
            a[(y, x)] = if x == y { -out_rate } else { rate(x, y) };
        }
    }
    let mut b = DVector::<f64>::zeros(m);
    for x in 0..m {
        a[(m - 1, x)] = 1.0;
    }
    b[m - 1] = 1.0;
    if let Some(p) = a.lu().solve(&b) {
        if p.iter().all(|v| v.is_finite() && *v > -1e-12) {
            let s: f64 = p.iter().map(|v| v.max(0.0)).sum();
            for (o, v) in out.iter_mut().zip(p.iter()) {
                *o = v.max(0.0) / s;
            }
            return;
        }
    }
    // Reducible chain: lazy power iteration from the current strategy.
    let mu = (0..m).map(|x| (0..m).map(|y| rate(x, y)).sum::<f64>()).fold(0.0, f64::max) * 2.0;
    let mut p = out.to_vec();
    for _ in 0..500 {
        let mut next = vec![0.0; m];
        for x in 0..m {
            let stay = 1.0 - (0..m).map(|y| rate(x, y)).sum::<f64>() / mu;
            next[x] += p[x] * stay;
            for y in 0..m {
                next[y] += p[x] * rate(x, y) / mu;
            }
        }
        p = next;
    }
    out.copy_from_slice(&p);
}

/// Independent seeded runs, one per seed, in seed order.
pub fn restarts(game: &Game, w_star: &UtilityWeights, iters: usize, seeds: &[u64]) -> Result<Vec<EquilibriumRun>> {
    seeds
        .par_iter()
        .map(|&s| regret_matching(game, w_star, iters, s))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub run: EquilibriumRun,
    /// False when no run met the cap and the least-regret run was returned.
    pub within_cap: bool,
}

/// Highest-welfare run among those with `epsilon_achieved <= epsilon_cap`;
/// ties go to the earliest run.
pub fn welfare_tilted_selection(runs: &[EquilibriumRun], epsilon_cap: f64) -> Result<Selection> {
    if runs.is_empty() {
        return Err(IceError::Empty("no equilibrium runs to select from".into()));
    }
    let mut best: Option<&EquilibriumRun> = None;
    for r in runs.iter().filter(|r| r.epsilon_achieved <= epsilon_cap) {
        if best.map_or(true, |b| r.welfare > b.welfare) {
            best = Some(r);
        }
    }
    if let Some(r) = best {
        return Ok(Selection {
            run: r.clone(),
            within_cap: true,
        });
    }
    let mut least = &runs[0];
    for r in &runs[1..] {
        if r.epsilon_achieved < least.epsilon_achieved {
            least = r;
        }
    }
    Ok(Selection {
        run: least.clone(),
        within_cap: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::regret_wrt_class;
    use crate::fixtures::{mg1, random_game};
    use crate::game::ModificationSet;

    fn run_with(eps: f64, welfare: f64) -> EquilibriumRun {
        EquilibriumRun {
            sigma: BehaviorDistribution::uniform(1),
            epsilon_achieved: eps,
            iterations: 1,
            welfare,
            seed: 0,
        }
    }

    #[test]
    fn mg1_reaches_small_regret() {
        let g = mg1();
        let w = UtilityWeights::new(vec![1.0, 1.0]).unwrap();
        let run = regret_matching(&g, &w, 100_000, 3).unwrap();
        assert!(run.epsilon_achieved <= 0.01, "{}", run.epsilon_achieved);
    }

    #[test]
    fn zero_features_have_zero_regret() {
        let g = Game::new(vec![2, 3], 2, vec![], vec![0.0; 6 * 2 * 2]).unwrap();
        let w = UtilityWeights::new(vec![1.0, -2.0]).unwrap();
        let run = regret_matching(&g, &w, 500, 1).unwrap();
        assert_eq!(run.epsilon_achieved, 0.0);
    }

    #[test]
    fn epsilon_matches_independent_regret() {
        for seed in 0..5 {
            let g = random_game(vec![3, 2, 2], 3, seed);
            let w = UtilityWeights::new(vec![0.5, -1.0, 0.3]).unwrap();
            let run = regret_matching(&g, &w, 3000, seed).unwrap();
            let direct = regret_wrt_class(&run.sigma, &w, &ModificationSet::internal(&g), &g).unwrap();
            assert!((run.epsilon_achieved - direct).abs() <= 1e-9, "{} vs {direct}", run.epsilon_achieved);
        }
    }

    #[test]
    fn scaling_weights_scales_epsilon() {
        let g = random_game(vec![2, 3], 2, 9);
        let w = UtilityWeights::new(vec![0.4, -0.7]).unwrap();
        let a = regret_matching(&g, &w, 2000, 5).unwrap();
        let b = regret_matching(&g, &w.scaled(3.0), 2000, 5).unwrap();
        // Regret matching is invariant to positive scaling, so play is identical.
        assert_eq!(a.sigma, b.sigma);
        assert!((b.epsilon_achieved - 3.0 * a.epsilon_achieved).abs() < 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = random_game(vec![2, 2, 2], 2, 1);
        let w = UtilityWeights::new(vec![1.0, 0.5]).unwrap();
        assert_eq!(regret_matching(&g, &w, 1000, 4).unwrap(), regret_matching(&g, &w, 1000, 4).unwrap());
    }

    #[test]
    fn selection_examples() {
        let only = run_with(0.001, 1.0);
        assert_eq!(welfare_tilted_selection(&[only.clone()], 0.01).unwrap().run, only);

        let low = run_with(0.005, 3.0);
        let high = run_with(0.02, 5.0);
        let s = welfare_tilted_selection(&[low.clone(), high.clone()], 0.01).unwrap();
        assert_eq!(s.run, low);
        assert!(s.within_cap);

        let s = welfare_tilted_selection(&[high.clone(), run_with(0.03, 9.0)], 0.01).unwrap();
        assert_eq!(s.run, high);
        assert!(!s.within_cap);
        assert!(welfare_tilted_selection(&[], 0.1).is_err());
    }

    #[test]
    fn routing_epsilon_shrinks_with_iterations() {
        let (g, w) = crate::routing::RoutingConfig::default_network().build().unwrap();
        let mean = |iters: usize| -> f64 {
            (0..4).map(|s| regret_matching(&g, &w, iters, s).unwrap().epsilon_achieved).sum::<f64>() / 4.0
        };
        let ratio = mean(40_000) / mean(10_000);
        // The routing game has a strict pure equilibrium, so this decays like 1/T
        // (about 0.25) rather than 1/sqrt(T).
        assert!(ratio > 0.0 && ratio <= 0.8, "ratio {ratio}");
    }

    #[test]
    fn stationary_balances_flow() {
        let d = [0.0, 2.0, 1.0, 0.5, 0.0, 0.0, 0.0, 3.0, 0.0];
        let mut p = vec![1.0 / 3.0; 3];
        stationary(&d, 3, &mut p);
        for y in 0..3 {
            let inflow: f64 = (0..3).filter(|&x| x != y).map(|x| p[x] * d[x * 3 + y].max(0.0)).sum();
            let outflow: f64 = (0..3).filter(|&x| x != y).map(|x| p[y] * d[y * 3 + x].max(0.0)).sum();
            assert!((inflow - outflow).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
