//! Linearly parameterized normal-form games.
//!
//! A game stores one feature vector per (player, outcome). Utilities are
//! linear in a shared weight vector: `u_i(a | w) = theta[i][a] . w`.
//! Outcomes are addressed by a flat index in mixed radix with player 0 as the
//! most significant digit, so every enumeration in the crate (and therefore
//! every tie-break) follows one fixed order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};

/// Upper bound on the number of outcomes a dense game may hold.
pub const MAX_OUTCOMES: usize = 1 << 22;

const PARALLEL_WORK: usize = 1 << 17;
const OUTCOME_BLOCK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    action_counts: Vec<usize>,
    strides: Vec<usize>,
    num_outcomes: usize,
    feature_dim: usize,
    feature_names: Vec<String>,
    /// Outcome-major: `((a * players) + i) * feature_dim + k`.
    features: Vec<f64>,
}

impl Game {
    /// Build a game from a dense outcome-major feature table.
    pub fn new(
        action_counts: Vec<usize>,
        feature_dim: usize,
        feature_names: Vec<String>,
        features: Vec<f64>,
    ) -> Result<Self> {
        let (strides, num_outcomes) = radix(&action_counts)?;
        if feature_dim == 0 {
            return Err(IceError::InvalidGame("feature_dim must be at least 1".into()));
        }
        let feature_names = if feature_names.is_empty() {
            (0..feature_dim).map(|k| format!("f{k}")).collect()
        } else {
            feature_names
        };
        if feature_names.len() != feature_dim {
            return Err(IceError::InvalidGame(format!(
                "{} feature names for feature_dim {}",
                feature_names.len(),
                feature_dim
            )));
        }
        let expected = num_outcomes * action_counts.len() * feature_dim;
        if features.len() != expected {
            return Err(IceError::InvalidGame(format!(
                "feature table has {} entries, expected {expected}",
                features.len()
            )));
        }
        if let Some(pos) = features.iter().position(|x| !x.is_finite()) {
            return Err(IceError::InvalidGame(format!("non-finite feature at entry {pos}")));
        }
        Ok(Self {
            action_counts,
            strides,
            num_outcomes,
            feature_dim,
            feature_names,
            features,
        })
    }

    /// Build a game by evaluating `fill(outcome_digits, player, out)` for every
    /// (outcome, player) pair. `out` has length `feature_dim` and starts zeroed.
    pub fn from_fn<F>(
        action_counts: Vec<usize>,
        feature_dim: usize,
        feature_names: Vec<String>,
        mut fill: F,
    ) -> Result<Self>
    where
        F: FnMut(&[usize], usize, &mut [f64]),
    {
        let (_, num_outcomes) = radix(&action_counts)?;
        let players = action_counts.len();
        let mut features = vec![0.0; num_outcomes * players * feature_dim];
        let mut digits = vec![0usize; players];
        for a in 0..num_outcomes {
            for i in 0..players {
                let start = (a * players + i) * feature_dim;
                fill(&digits, i, &mut features[start..start + feature_dim]);
            }
            increment(&mut digits, &action_counts);
        }
        Self::new(action_counts, feature_dim, feature_names, features)
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// The whole outcome-major feature table.
    pub fn raw_features(&self) -> &[f64] {
        &self.features
    }

    /// `theta[player][outcome]`. Indices are not range-checked beyond slice bounds.
    #[inline]
    pub fn features(&self, player: usize, outcome: usize) -> &[f64] {
        let start = (outcome * self.action_counts.len() + player) * self.feature_dim;
        &self.features[start..start + self.feature_dim]
    }

    #[inline]
    pub fn stride(&self, player: usize) -> usize {
        self.strides[player]
    }

    #[inline]
    pub fn action_of(&self, outcome: usize, player: usize) -> usize {
        (outcome / self.strides[player]) % self.action_counts[player]
    }

    /// Flat index of `outcome` with `player`'s action replaced by `action`.
    #[inline]
    pub fn with_action(&self, outcome: usize, player: usize, action: usize) -> usize {
        let current = self.action_of(outcome, player);
        outcome + action * self.strides[player] - current * self.strides[player]
    }

    pub fn encode(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.num_players() {
            return Err(IceError::OutOfRange(format!(
                "outcome has {} digits, game has {} players",
                digits.len(),
                self.num_players()
            )));
        }
        let mut flat = 0;
        for (i, (&d, &n)) in digits.iter().zip(&self.action_counts).enumerate() {
            if d >= n {
                return Err(IceError::OutOfRange(format!(
                    "action {d} for player {i} with {n} actions"
                )));
            }
            flat += d * self.strides[i];
        }
        Ok(flat)
    }

    pub fn decode(&self, flat: usize) -> Result<Vec<usize>> {
        self.check_outcome(flat)?;
        Ok((0..self.num_players()).map(|i| self.action_of(flat, i)).collect())
    }

    pub fn outcome(&self, flat: usize) -> Result<OutcomeIndex> {
        Ok(OutcomeIndex {
            flat,
            digits: self.decode(flat)?,
        })
    }

    pub fn check_outcome(&self, flat: usize) -> Result<()> {
        if flat >= self.num_outcomes {
            return Err(IceError::OutOfRange(format!(
                "outcome {flat} with {} outcomes",
                self.num_outcomes
            )));
        }
        Ok(())
    }

    /// `u_i(a | w) = theta[i][a] . w`.
    pub fn utility(&self, outcome: usize, player: usize, w: &UtilityWeights) -> Result<f64> {
        self.check_outcome(outcome)?;
        if player >= self.num_players() {
            return Err(IceError::OutOfRange(format!("player {player}")));
        }
        if w.dim() != self.feature_dim {
            return Err(IceError::DimensionMismatch(format!(
                "weights have dimension {}, game has {}",
                w.dim(),
                self.feature_dim
            )));
        }
        Ok(dot(self.features(player, outcome), w.as_slice()))
    }

    /// Sum over players of the per-player feature vectors at `outcome`.
    pub fn summed_features(&self, outcome: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim];
        for i in 0..self.num_players() {
            for (o, x) in out.iter_mut().zip(self.features(i, outcome)) {
                *o += x;
            }
        }
        out
    }
}

fn radix(action_counts: &[usize]) -> Result<(Vec<usize>, usize)> {
    if action_counts.is_empty() {
        return Err(IceError::InvalidGame("a game needs at least one player".into()));
    }
    if let Some(i) = action_counts.iter().position(|&n| n == 0) {
        return Err(IceError::InvalidGame(format!("player {i} has no actions")));
    }
    let mut strides = vec![1usize; action_counts.len()];
    let mut total: usize = 1;
    for i in (0..action_counts.len()).rev() {
        strides[i] = total;
        total = total
            .checked_mul(action_counts[i])
            .filter(|&t| t <= MAX_OUTCOMES)
            .ok_or_else(|| IceError::InvalidGame("too many outcomes".into()))?;
    }
    Ok((strides, total))
}

/// Advance mixed-radix digits in place (last player fastest).
fn increment(digits: &mut [usize], counts: &[usize]) {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < counts[i] {
            return;
        }
        digits[i] = 0;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A joint action addressed both ways.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeIndex {
    pub flat: usize,
    pub digits: Vec<usize>,
}

/// Preference weights over the K outcome features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtilityWeights(Vec<f64>);

impl UtilityWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(IceError::InvalidParameter("utility weights must be finite".into()));
        }
        Ok(Self(w))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|x| x * c).collect())
    }
}

/// How a modification function remaps a player's recommended action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Remap {
    /// Play `to` whenever told `from`; otherwise follow the recommendation.
    Switch { from: usize, to: usize },
    /// Arbitrary map `A_i -> A_i`.
    Table(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModificationFunction {
    pub player: usize,
    pub remap: Remap,
}

impl ModificationFunction {
    pub fn switch(player: usize, from: usize, to: usize) -> Self {
        Self {
            player,
            remap: Remap::Switch { from, to },
        }
    }

    pub fn table(player: usize, table: Vec<usize>) -> Self {
        Self {
            player,
            remap: Remap::Table(table),
        }
    }

    pub fn identity(player: usize, actions: usize) -> Self {
        Self::table(player, (0..actions).collect())
    }

    #[inline]
    pub fn apply(&self, action: usize) -> usize {
        match &self.remap {
            Remap::Switch { from, to } => {
                if action == *from {
                    *to
                } else {
                    action
                }
            }
            Remap::Table(t) => t[action],
        }
    }

    pub fn validate(&self, game: &Game) -> Result<()> {
        let n = *game
            .action_counts()
            .get(self.player)
            .ok_or_else(|| IceError::OutOfRange(format!("player {}", self.player)))?;
        match &self.remap {
            Remap::Switch { from, to } => {
                if *from >= n || *to >= n {
                    return Err(IceError::OutOfRange(format!(
                        "switch {from}->{to} for player {} with {n} actions",
                        self.player
                    )));
                }
            }
            Remap::Table(t) => {
                if t.len() != n || t.iter().any(|&y| y >= n) {
                    return Err(IceError::OutOfRange(format!(
                        "table {t:?} for player {} with {n} actions",
                        self.player
                    )));
                }
            }
        }
        Ok(())
    }

    /// Short human-readable name, e.g. `p0:1->2` or `p1:[0,0,2]`.
    pub fn label(&self) -> String {
        match &self.remap {
            Remap::Switch { from, to } => format!("p{}:{from}->{to}", self.player),
            Remap::Table(t) => {
                let body: Vec<String> = t.iter().map(|x| x.to_string()).collect();
                format!("p{}:[{}]", self.player, body.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModClass {
    Internal,
    Swap,
    Custom,
}

/// An ordered class of modification functions. The order is canonical and is
/// used for every argmax tie-break.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationSet {
    pub entries: Vec<ModificationFunction>,
    pub class: ModClass,
}

/// Cap on swap-class functions per player (`|A_i|^|A_i|`).
pub const MAX_SWAP_PER_PLAYER: usize = 100_000;

impl ModificationSet {
    /// All non-identity switches, sorted by (player, from, to).
    pub fn internal(game: &Game) -> Self {
        let mut entries = Vec::new();
        for (i, &n) in game.action_counts().iter().enumerate() {
            for x in 0..n {
                for y in 0..n {
                    if x != y {
                        entries.push(ModificationFunction::switch(i, x, y));
                    }
                }
            }
        }
        Self {
            entries,
            class: ModClass::Internal,
        }
    }

    /// Every map `A_i -> A_i` for every player, identity included, in
    /// lexicographic table order.
    pub fn swap(game: &Game) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, &n) in game.action_counts().iter().enumerate() {
            let count = (n as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
            if count > MAX_SWAP_PER_PLAYER as u64 {
                return Err(IceError::InvalidParameter(format!(
                    "swap class for player {i} has {n}^{n} functions"
                )));
            }
            let mut table = vec![0usize; n];
            let counts = vec![n; n];
            for _ in 0..count {
                entries.push(ModificationFunction::table(i, table.clone()));
                increment(&mut table, &counts);
            }
        }
        Ok(Self {
            entries,
            class: ModClass::Swap,
        })
    }

    pub fn custom(entries: Vec<ModificationFunction>, game: &Game) -> Result<Self> {
        for f in &entries {
            f.validate(game)?;
        }
        Ok(Self {
            entries,
            class: ModClass::Custom,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, game: &Game) -> Result<()> {
        self.entries.iter().try_for_each(|f| f.validate(game))
    }
}

/// Instantaneous regret of one modification function at every outcome.
///
/// Only rows where the function actually changes the player's action are
/// stored; every other row is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretMatrix {
    pub owner: ModificationFunction,
    feature_dim: usize,
    num_outcomes: usize,
    outcomes: Vec<u32>,
    values: Vec<f64>,
}

impl RegretMatrix {
    /// Row `a` is `theta[i][f(a_i), a_-i] - theta[i][a]`.
    pub fn new(game: &Game, f: &ModificationFunction) -> Result<Self> {
        f.validate(game)?;
        let k = game.feature_dim();
        let i = f.player;
        let stride = game.stride(i);
        let mut outcomes = Vec::new();
        let mut values = Vec::new();
        for a in 0..game.num_outcomes() {
            let ai = game.action_of(a, i);
            let bi = f.apply(ai);
            if bi == ai {
                continue;
            }
            let b = a + bi * stride - ai * stride;
            let (to, from) = (game.features(i, b), game.features(i, a));
            outcomes.push(a as u32);
            values.extend(to.iter().zip(from).map(|(x, y)| x - y));
        }
        Ok(Self {
            owner: f.clone(),
            feature_dim: k,
            num_outcomes: game.num_outcomes(),
            outcomes,
            values,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    /// Regret row at `outcome` (zero vector when the function fixes the action).
    pub fn row(&self, outcome: usize) -> Vec<f64> {
        match self.outcomes.binary_search(&(outcome as u32)) {
            Ok(pos) => self.values[pos * self.feature_dim..(pos + 1) * self.feature_dim].to_vec(),
            Err(_) => vec![0.0; self.feature_dim],
        }
    }

    /// Iterator over `(outcome, row)` for the stored (possibly nonzero) rows.
    pub fn nonzero_rows(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.outcomes
            .iter()
            .zip(self.values.chunks_exact(self.feature_dim))
            .map(|(&a, r)| (a as usize, r))
    }

    /// Stored rows with outcome in `lo..hi`.
    pub(crate) fn rows_in(&self, lo: usize, hi: usize) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        let start = self.outcomes.partition_point(|&a| (a as usize) < lo);
        let end = self.outcomes.partition_point(|&a| (a as usize) < hi);
        self.outcomes[start..end]
            .iter()
            .zip(self.values[start * self.feature_dim..end * self.feature_dim].chunks_exact(self.feature_dim))
            .map(|(&a, r)| (a as usize, r))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.feature_dim]; self.num_outcomes];
        for (a, r) in self.nonzero_rows() {
            dense[a].copy_from_slice(r);
        }
        dense
    }

    /// `sigma^T R` as a K-vector.
    pub fn expected(&self, sigma: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim];
        self.accumulate_expected(sigma, &mut out);
        out
    }

    #[inline]
    pub(crate) fn accumulate_expected(&self, sigma: &[f64], out: &mut [f64]) {
        for (a, r) in self.nonzero_rows() {
            let p = sigma[a];
            if p != 0.0 {
                for (o, x) in out.iter_mut().zip(r) {
                    *o += p * x;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// The regret matrices of a whole modification class over one game.
#[derive(Debug, Clone)]
pub struct RegretSet {
    matrices: Vec<RegretMatrix>,
    feature_dim: usize,
    num_outcomes: usize,
}

impl RegretSet {
    pub fn new(game: &Game, mods: &ModificationSet) -> Result<Self> {
        let matrices = mods
            .entries
            .iter()
            .map(|f| RegretMatrix::new(game, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            matrices,
            feature_dim: game.feature_dim(),
            num_outcomes: game.num_outcomes(),
        })
    }

    pub fn matrices(&self) -> &[RegretMatrix] {
        &self.matrices
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    /// Largest absolute regret entry over all matrices.
    pub fn max_abs(&self) -> f64 {
        self.matrices.iter().fold(0.0, |m, r| m.max(r.max_abs()))
    }

    fn is_large(&self) -> bool {
        self.num_outcomes * self.matrices.len() >= PARALLEL_WORK
    }

    /// `sigma^T R^f` for every f, flattened as `[f * K + k]`.
    ///
    /// Large sets are split across threads by matrix; each matrix is still
    /// summed in outcome order, so the result does not depend on scheduling.
    pub fn expected_all(&self, sigma: &[f64]) -> Vec<f64> {
        let k = self.feature_dim;
        let mut out = vec![0.0; self.matrices.len() * k];
        if self.is_large() {
            out.par_chunks_exact_mut(k)
                .zip(self.matrices.par_iter())
                .for_each(|(chunk, m)| m.accumulate_expected(sigma, chunk));
        } else {
            for (m, chunk) in self.matrices.iter().zip(out.chunks_exact_mut(k)) {
                m.accumulate_expected(sigma, chunk);
            }
        }
        out
    }

    /// `-sum_f r^f(a) . lambda[f]` at every outcome.
    ///
    /// Parallel over fixed outcome blocks; within a block the matrices are
    /// visited in canonical order, matching the serial summation exactly.
    pub fn neg_weighted_rows(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_outcomes];
        if !self.is_large() {
            self.subtract_weighted_rows(lambda, &mut out);
            return out;
        }
        let k = self.feature_dim;
        out.par_chunks_mut(OUTCOME_BLOCK).enumerate().for_each(|(b, block)| {
            let lo = b * OUTCOME_BLOCK;
            let hi = lo + block.len();
            for (m, lam) in self.matrices.iter().zip(lambda.chunks_exact(k)) {
                if lam.iter().all(|&x| x == 0.0) {
                    continue;
                }
                for (a, r) in m.rows_in(lo, hi) {
                    block[a - lo] -= dot(r, lam);
                }
            }
        });
        out
    }

    /// `out[a] -= sum_f r^f(a) . lambda[f]` with `lambda` flattened like
    /// [`RegretSet::expected_all`].
    pub fn subtract_weighted_rows(&self, lambda: &[f64], out: &mut [f64]) {
        let k = self.feature_dim;
        for (m, lam) in self.matrices.iter().zip(lambda.chunks_exact(k)) {
            if lam.iter().all(|&x| x == 0.0) {
                continue;
            }
            for (a, r) in m.nonzero_rows() {
                out[a] -= dot(r, lam);
            }
        }
    }
}
