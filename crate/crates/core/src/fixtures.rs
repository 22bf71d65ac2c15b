//! Small reference games used by tests, the CLI and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::game::Game;

/// Two players, two actions each, two features.
///
/// Player 0 gets feature vector (1,0) at outcome (0,0) and (0,1) at (1,1),
/// zero elsewhere; player 1's features are identically zero.
pub fn mg1() -> Game {
    let mut f = vec![0.0; 4 * 2 * 2];
    f[0] = 1.0;
    f[(3 * 2) * 2 + 1] = 1.0;
    Game::new(vec![2, 2], 2, vec!["x".into(), "y".into()], f).expect("fixture is valid")
}

/// A game with standard-normal features, reproducible from `seed`.
pub fn random_game(action_counts: Vec<usize>, feature_dim: usize, seed: u64) -> Game {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Game::from_fn(action_counts, feature_dim, vec![], |_, _, out| {
        for x in out.iter_mut() {
            *x = standard_normal(&mut rng);
        }
    })
    .expect("random game shape is valid")
}

/// Box-Muller transform; keeps fixtures independent of distribution crates.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random action-count profile with at most `max_outcomes` outcomes.
pub fn random_shape<R: Rng>(rng: &mut R, max_outcomes: usize) -> Vec<usize> {
    loop {
        let players = rng.gen_range(2..=4);
        let counts: Vec<usize> = (0..players).map(|_| rng.gen_range(2..=4)).collect();
        if counts.iter().product::<usize>() <= max_outcomes {
            return counts;
        }
    }
}
