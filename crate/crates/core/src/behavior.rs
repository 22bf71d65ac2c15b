//! Joint-action distributions: construction, sampling, empirical estimates,
//! entropy, log-loss and expected-regret functionals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::game::{dot, Game, ModificationSet, RegretMatrix, RegretSet, UtilityWeights};

/// Tolerance on the raw sum of probabilities accepted by [`BehaviorDistribution::new`].
const SUM_TOLERANCE: f64 = 1e-6;

/// A distribution over the flat outcome indices of one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BehaviorDistribution {
    probs: Vec<f64>,
}

impl BehaviorDistribution {
    /// Validates nonnegativity and finiteness, then renormalizes. The raw sum
    /// must already be within `1e-6` of one; use [`Self::from_weights`] for
    /// unnormalized input.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&probs)?;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(IceError::InvalidDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(Self::normalized(probs, sum))
    }

    /// Normalize arbitrary nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum = checked_sum(&weights)?;
        if sum <= 0.0 {
            return Err(IceError::InvalidDistribution("weights sum to zero".into()));
        }
        Ok(Self::normalized(weights, sum))
    }

    /// Wrap probabilities already normalized by the caller.
    pub(crate) fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Self { probs }
    }

    fn normalized(mut probs: Vec<f64>, sum: f64) -> Self {
        for p in probs.iter_mut() {
            *p /= sum;
        }
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(n: usize, outcome: usize) -> Result<Self> {
        if outcome >= n {
            return Err(IceError::OutOfRange(format!("outcome {outcome} of {n}")));
        }
        let mut probs = vec![0.0; n];
        probs[outcome] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn check_game(&self, game: &Game) -> Result<()> {
        if self.len() != game.num_outcomes() {
            return Err(IceError::DimensionMismatch(format!(
                "distribution over {} outcomes, game has {}",
                self.len(),
                game.num_outcomes()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for BehaviorDistribution {
    type Error = IceError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BehaviorDistribution> for Vec<f64> {
    fn from(d: BehaviorDistribution) -> Self {
        d.probs
    }
}

fn checked_sum(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(IceError::InvalidDistribution("no outcomes".into()));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(IceError::InvalidDistribution(format!("entry {x}")));
    }
    Ok(p.iter().sum())
}

/// Observed outcomes (flat indices) and the seed that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub outcomes: Vec<usize>,
    pub seed: u64,
}

impl SampleSet {
    pub fn new(outcomes: Vec<usize>, seed: u64) -> Self {
        Self { outcomes, seed }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn validate(&self, game: &Game) -> Result<()> {
        if self.outcomes.is_empty() {
            return Err(IceError::Empty("sample set has no observations".into()));
        }
        self.outcomes.iter().try_for_each(|&a| game.check_outcome(a))
    }

    /// Occurrence count of every outcome.
    pub fn counts(&self, num_outcomes: usize) -> Vec<usize> {
        let mut c = vec![0usize; num_outcomes];
        for &a in &self.outcomes {
            c[a] += 1;
        }
        c
    }

    /// First `m` observations.
    pub fn prefix(&self, m: usize) -> Self {
        Self {
            outcomes: self.outcomes[..m.min(self.outcomes.len())].to_vec(),
            seed: self.seed,
        }
    }
}

/// Empirical distribution `count(a) / M`.
pub fn empirical(samples: &SampleSet, game: &Game) -> Result<BehaviorDistribution> {
    samples.validate(game)?;
    let m = samples.len() as f64;
    let probs = samples
        .counts(game.num_outcomes())
        .into_iter()
        .map(|c| c as f64 / m)
        .collect();
    Ok(BehaviorDistribution { probs })
}

/// Draw `m` i.i.d. outcomes by inverse CDF over the flat outcome order using
/// ChaCha8 seeded with `seed`.
pub fn draw(sigma: &BehaviorDistribution, m: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = CdfSampler::new(sigma);
    let outcomes = (0..m).map(|_| sampler.sample(&mut rng)).collect();
    SampleSet { outcomes, seed }
}

/// Inverse-CDF sampler over a fixed outcome order.
pub struct CdfSampler {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl CdfSampler {
    pub fn new(sigma: &BehaviorDistribution) -> Self {
        let mut acc = 0.0;
        let cdf = sigma
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = sigma.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0);
        Self { cdf, last_positive }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        // First index whose cumulative mass exceeds u; rounding can leave the
        // total slightly below one, in which case the last supported outcome wins.
        self.cdf.partition_point(|&c| c <= u).min(self.last_positive)
    }
}

/// `sigma^T R` as a K-vector.
pub fn expected_regret_vector(sigma: &BehaviorDistribution, r: &RegretMatrix) -> Result<Vec<f64>> {
    if sigma.len() != r.num_outcomes() {
        return Err(IceError::DimensionMismatch(format!(
            "distribution over {} outcomes, regret matrix over {}",
            sigma.len(),
            r.num_outcomes()
        )));
    }
    Ok(r.expected(sigma.probs()))
}

/// `max_f (sigma^T R^f) . w` over the class.
pub fn regret_wrt_class(
    sigma: &BehaviorDistribution,
    w: &UtilityWeights,
    mods: &ModificationSet,
    game: &Game,
) -> Result<f64> {
    if mods.is_empty() {
        return Err(IceError::Empty("modification set is empty".into()));
    }
    sigma.check_game(game)?;
    let set = RegretSet::new(game, mods)?;
    class_regret(&set.expected_all(sigma.probs()), game.feature_dim(), w)
}

/// Class regret from precomputed expected regret vectors (`[f * K + k]`).
pub fn class_regret(expected: &[f64], k: usize, w: &UtilityWeights) -> Result<f64> {
    if w.dim() != k {
        return Err(IceError::DimensionMismatch(format!(
            "weights have dimension {}, features {k}",
            w.dim()
        )));
    }
    expected
        .chunks_exact(k)
        .map(|v| dot(v, w.as_slice()))
        .reduce(f64::max)
        .ok_or_else(|| IceError::Empty("modification set is empty".into()))
}

/// Shannon entropy in nats.
pub fn entropy(sigma: &BehaviorDistribution) -> f64 {
    -sigma
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Cross-entropy `-sum_a truth_a log pred_a` with a flag for outcomes the
/// prediction gives zero mass although the truth does not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLoss {
    pub value: f64,
    /// Number of outcomes with `truth > 0` and `pred == 0`.
    pub uncovered: usize,
}

impl LogLoss {
    pub fn is_finite(&self) -> bool {
        self.uncovered == 0
    }
}

pub fn log_loss(truth: &BehaviorDistribution, pred: &BehaviorDistribution) -> Result<LogLoss> {
    if truth.len() != pred.len() {
        return Err(IceError::DimensionMismatch(format!(
            "truth over {} outcomes, prediction over {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut value = 0.0;
    let mut uncovered = 0;
    for (&t, &p) in truth.probs().iter().zip(pred.probs()) {
        if t > 0.0 {
            if p > 0.0 {
                value -= t * p.ln();
            } else {
                uncovered += 1;
            }
        }
    }
    if uncovered > 0 {
        value = f64::INFINITY;
    }
    Ok(LogLoss { value, uncovered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::mg1;
    use crate::game::ModificationFunction;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn switch_p0_0_1() -> RegretMatrix {
        RegretMatrix::new(&mg1(), &ModificationFunction::switch(0, 0, 1)).unwrap()
    }

    #[test]
    fn empirical_counts() {
        let g = mg1();
        let s = SampleSet::new(vec![0, 0, 3, 1], 0);
        assert_eq!(empirical(&s, &g).unwrap().probs(), &[0.5, 0.25, 0.0, 0.25]);
        let point = empirical(&SampleSet::new(vec![2; 9], 0), &g).unwrap();
        assert_eq!(point.probs(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(empirical(&SampleSet::new(vec![], 0), &g).is_err());
        assert!(empirical(&SampleSet::new(vec![4], 0), &g).is_err());
    }

    #[test]
    fn empirical_of_many_uniform_draws() {
        let g = mg1();
        let s = draw(&BehaviorDistribution::uniform(4), 100_000, 3);
        let e = empirical(&s, &g).unwrap();
        assert!(e.probs().iter().all(|p| (p - 0.25).abs() < 0.01));
    }

    #[test]
    fn expected_regret_examples() {
        let r = switch_p0_0_1();
        let u = BehaviorDistribution::uniform(4);
        assert_eq!(expected_regret_vector(&u, &r).unwrap(), vec![-0.25, 0.25]);
        let p = BehaviorDistribution::point_mass(4, 0).unwrap();
        assert_eq!(expected_regret_vector(&p, &r).unwrap(), vec![-1.0, 0.0]);
        let id = RegretMatrix::new(&mg1(), &ModificationFunction::identity(0, 2)).unwrap();
        assert_eq!(expected_regret_vector(&u, &id).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn class_regret_examples() {
        let g = mg1();
        let mods = ModificationSet::internal(&g);
        let u = BehaviorDistribution::uniform(4);
        let w11 = UtilityWeights::new(vec![1.0, 1.0]).unwrap();
        let w10 = UtilityWeights::new(vec![1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(regret_wrt_class(&u, &w11, &mods, &g).unwrap(), 0.0);
        assert_abs_diff_eq!(regret_wrt_class(&u, &w10, &mods, &g).unwrap(), 0.25);
        let p = BehaviorDistribution::point_mass(4, 0).unwrap();
        assert_abs_diff_eq!(regret_wrt_class(&p, &w10, &mods, &g).unwrap(), 0.0);
        let empty = ModificationSet::custom(vec![], &g).unwrap();
        assert!(regret_wrt_class(&u, &w10, &empty, &g).is_err());
    }

    #[test]
    fn entropy_and_log_loss() {
        let u = BehaviorDistribution::uniform(4);
        assert_abs_diff_eq!(entropy(&u), 4f64.ln(), epsilon = 1e-12);
        let s = BehaviorDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_abs_diff_eq!(log_loss(&s, &s).unwrap().value, entropy(&s), epsilon = 1e-12);
        let big = BehaviorDistribution::uniform(16384);
        let other = BehaviorDistribution::uniform(16384);
        assert_abs_diff_eq!(log_loss(&big, &other).unwrap().value, 9.7041, epsilon = 1e-4);
        let p = BehaviorDistribution::point_mass(4, 1).unwrap();
        let q = BehaviorDistribution::point_mass(4, 0).unwrap();
        let l = log_loss(&p, &q).unwrap();
        assert!(l.value.is_infinite() && l.uncovered == 1 && !l.is_finite());
    }

    #[test]
    fn draw_examples() {
        let p = BehaviorDistribution::point_mass(4, 2).unwrap();
        assert_eq!(draw(&p, 17, 1).outcomes, vec![2; 17]);
        let u = BehaviorDistribution::uniform(4);
        assert_eq!(draw(&u, 50, 9), draw(&u, 50, 9));
        let e = empirical(&draw(&u, 4000, 7), &mg1()).unwrap();
        assert!(e.probs().iter().all(|p| (p - 0.25).abs() < 0.05));
    }

    #[test]
    fn empirical_converges_with_more_draws() {
        let g = crate::fixtures::random_game(vec![3, 3], 1, 5);
        let sigma = BehaviorDistribution::from_weights(vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let coarse = empirical(&draw(&sigma, 100, 1), &g).unwrap().max_abs_diff(&sigma);
        let fine = empirical(&draw(&sigma, 10_000, 1), &g).unwrap().max_abs_diff(&sigma);
        assert!(coarse < 0.15, "{coarse}");
        assert!(fine < 0.015, "{fine}");
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(BehaviorDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(BehaviorDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(BehaviorDistribution::new(vec![]).is_err());
        assert!(BehaviorDistribution::from_weights(vec![0.0, 0.0]).is_err());
        let d = BehaviorDistribution::new(vec![0.5, 0.5 + 1e-9]).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn class_regret_positively_homogeneous(
            seed in 0u64..500, c in 0.01f64..100.0,
            w0 in -3.0f64..3.0, w1 in -3.0f64..3.0,
        ) {
            let g = crate::fixtures::random_game(vec![2, 3], 2, seed);
            let mods = ModificationSet::internal(&g);
            let sigma = draw(&BehaviorDistribution::uniform(6), 20, seed);
            let sigma = empirical(&sigma, &g).unwrap();
            let w = UtilityWeights::new(vec![w0, w1]).unwrap();
            let base = regret_wrt_class(&sigma, &w, &mods, &g).unwrap();
            let scaled = regret_wrt_class(&sigma, &w.scaled(c), &mods, &g).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + c * base.abs()));
        }

        #[test]
        fn uniform_maximizes_entropy_on_support(
            n in 2usize..30, idx in 0usize..30, eps in 1e-4f64..0.01,
        ) {
            let u = BehaviorDistribution::uniform(n);
            let mut p = u.probs().to_vec();
            let i = idx % n;
            let j = (i + 1) % n;
            p[i] += eps / n as f64;
            p[j] -= eps / n as f64;
            let perturbed = BehaviorDistribution::new(p).unwrap();
            prop_assert!(entropy(&perturbed) < entropy(&u));
        }
    }
}
