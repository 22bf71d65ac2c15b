//! Seeded experiment grids: prediction error against observation count,
//! transfer error on modified games, and a concentration check for the
//! sample-size bound.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_logistic, mle_uniform_prior, predict_logistic, DEFAULT_RIDGE};
use crate::behavior::{draw, empirical, entropy, log_loss, BehaviorDistribution, CdfSampler, SampleSet};
use crate::equilibria::{restarts, welfare_tilted_selection, Selection};
use crate::error::{IceError, Result};
use crate::game::{Game, ModificationSet, RegretSet, UtilityWeights};
use crate::io::{EquilibriumSettings, WorldConfig};
use crate::routing::{RoutingConfig, VariantKind};
use crate::solver::{fit_regrets, SolverParams, StopRule};

pub const METHODS: [&str; 5] = ["maxent_ice", "mle", "logistic", "uniform", "truth"];

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub method: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Left empty unless timing was requested, so reruns stay byte-identical.
    pub wall_time_ms: Option<u64>,
}

pub fn write_records(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Mixes a base seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `ceil((2 / eps^2) ln(2 |Phi| K / delta))`.
pub fn sample_bound(epsilon: f64, delta: f64, mods_size: usize, k: usize) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(IceError::OutOfRange(format!("epsilon must be in (0, 1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(IceError::OutOfRange(format!("delta must be in (0, 1), got {delta}")));
    }
    if mods_size == 0 || k == 0 {
        return Err(IceError::OutOfRange("modification count and K must be at least 1".into()));
    }
    let m = 2.0 / (epsilon * epsilon) * (2.0 * mods_size as f64 * k as f64 / delta).ln();
    Ok(m.ceil().max(1.0) as usize)
}

/// One-sided Clopper-Pearson upper confidence bound for a binomial rate.
pub fn binomial_upper_bound(successes: usize, trials: usize, confidence: f64) -> f64 {
    if successes >= trials {
        return 1.0;
    }
    let alpha = 1.0 - confidence;
    // P(X <= successes; p) is decreasing in p; bisect for alpha.
    let (mut lo, mut hi) = (successes as f64 / trials as f64, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binomial_cdf(successes, trials, mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn binomial_cdf(k: usize, n: usize, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_choose = 0.0;
    let mut total = 0.0;
    for j in 0..=k {
        if j > 0 {
            log_choose += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        total += (log_choose + j as f64 * lp + (n - j) as f64 * lq).exp();
    }
    total.min(1.0)
}

/// Solver settings used by the experiment runners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IceSettings {
    pub max_iters: usize,
    pub tolerance: f64,
    /// Prediction budget; `None` uses the default of 10 K.
    pub c: Option<f64>,
}

impl Default for IceSettings {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tolerance: 1e-4,
            c: None,
        }
    }
}

impl IceSettings {
    pub fn params(&self) -> SolverParams {
        let mut p = SolverParams::default().with_max_iters(self.max_iters);
        p.stop = StopRule::Gap {
            tolerance: self.tolerance,
        };
        p.c = self.c;
        p
    }
}

/// Ground-truth play: the best of several seeded regret-matching runs.
pub fn world_truth(game: &Game, w: &UtilityWeights, eq: &EquilibriumSettings, seed: u64) -> Result<Selection> {
    if eq.restarts == 0 {
        return Err(IceError::Config("equilibrium.restarts must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..eq.restarts as u64).map(|r| derive_seed(seed, 1, r)).collect();
    let runs = restarts(game, w, eq.iterations, &seeds)?;
    welfare_tilted_selection(&runs, eq.epsilon_cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingSettings {
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
}

impl Default for HoeffdingSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            delta: 0.05,
            trials: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Config {
    pub world: WorldConfig,
    #[serde(default = "default_max_m")]
    pub max_m: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub ice: IceSettings,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub hoeffding: HoeffdingSettings,
}

fn default_max_m() -> usize {
    1 << 14
}

fn default_seeds() -> usize {
    10
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

/// Desk-scale routing world used when no configuration is given.
pub fn desk_world() -> WorldConfig {
    WorldConfig::routing(
        RoutingConfig::desk_scale(),
        EquilibriumSettings {
            iterations: 400,
            restarts: 8,
            epsilon_cap: 0.02,
        },
    )
}

/// Seven-driver routing world.
pub fn commute_world() -> WorldConfig {
    WorldConfig::routing(
        RoutingConfig::default_network(),
        EquilibriumSettings {
            iterations: 1200,
            restarts: 8,
            epsilon_cap: 0.02,
        },
    )
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            world: desk_world(),
            max_m: default_max_m(),
            seeds: default_seeds(),
            ice: IceSettings::default(),
            ridge: DEFAULT_RIDGE,
            hoeffding: HoeffdingSettings::default(),
        }
    }
}

fn powers_of_two(max_m: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |m| m.checked_mul(2))
        .take_while(|&m| m <= max_m)
        .collect()
}

fn record(experiment: &str, method: &str, m: usize, seed: u64, metric: &str, value: f64, ms: Option<u64>) -> ExperimentRecord {
    ExperimentRecord {
        experiment: experiment.into(),
        method: method.into(),
        m,
        seed,
        metric: metric.into(),
        value,
        wall_time_ms: ms,
    }
}

fn timed<T>(timing: bool, f: impl FnOnce() -> Result<T>) -> Result<(T, Option<u64>)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, timing.then(|| start.elapsed().as_millis() as u64)))
}

fn loss(truth: &BehaviorDistribution, pred: &BehaviorDistribution) -> Result<f64> {
    let l = log_loss(truth, pred)?;
    Ok(if l.is_finite() { l.value } else { f64::INFINITY })
}

/// Per-cell log-loss of every method on samples of the truth.
#[allow(clippy::too_many_arguments)]
fn fig2_cell(
    game: &Game,
    set: &RegretSet,
    truth: &BehaviorDistribution,
    samples: &SampleSet,
    seed: u64,
    cfg: &Fig2Config,
    timing: bool,
) -> Result<Vec<ExperimentRecord>> {
    let m = samples.len();
    let exp = "fig2";
    let (ice, t_ice) = timed(timing, || {
        let tilde = empirical(samples, game)?;
        let demo = set.expected_all(tilde.probs());
        let model = fit_regrets(&demo, set, &cfg.ice.params())?;
        loss(truth, &model.predicted)
    })?;
    let (mle, t_mle) = timed(timing, || loss(truth, &mle_uniform_prior(samples, game)?))?;
    let (logit, t_logit) = timed(timing, || {
        let model = fit_logistic(samples, game, cfg.ridge)?;
        loss(truth, &predict_logistic(&model, game)?)
    })?;
    let uniform = (game.num_outcomes() as f64).ln();
    let zero = timing.then_some(0);
    Ok(vec![
        record(exp, "maxent_ice", m, seed, "log_loss", ice, t_ice),
        record(exp, "mle", m, seed, "log_loss", mle, t_mle),
        record(exp, "logistic", m, seed, "log_loss", logit, t_logit),
        record(exp, "uniform", m, seed, "log_loss", uniform, zero),
        record(exp, "truth", m, seed, "log_loss", entropy(truth), zero),
    ])
}

/// Log-loss of every method against observation count `M = 1, 2, 4, ...,
/// max_m` over `seeds` independent sample streams.
pub fn run_fig2(cfg: &Fig2Config, seed: u64, timing: bool) -> Result<Vec<ExperimentRecord>> {
    if cfg.max_m == 0 || cfg.seeds == 0 {
        return Err(IceError::Config("max_m and seeds must be at least 1".into()));
    }
    let (game, w) = cfg.world.build()?;
    let truth = world_truth(&game, &w, &cfg.world.equilibrium, seed)?;
    let sigma = truth.run.sigma.clone();
    let set = RegretSet::new(&game, &ModificationSet::internal(&game))?;
    let grid = powers_of_two(cfg.max_m);
    let streams: Vec<SampleSet> = (0..cfg.seeds as u64)
        .map(|s| draw(&sigma, cfg.max_m, derive_seed(seed, 2, s)))
        .collect();
    let cells: Vec<(u64, usize)> = (0..cfg.seeds as u64)
        .flat_map(|s| grid.iter().map(move |&m| (s, m)))
        .collect();
    let mut rows: Vec<Vec<ExperimentRecord>> = cells
        .par_iter()
        .map(|&(s, m)| fig2_cell(&game, &set, &sigma, &streams[s as usize].prefix(m), s, cfg, timing))
        .collect::<Result<_>>()?;
    let mut out = vec![
        record("fig2/world", "truth", 0, 0, "epsilon", truth.run.epsilon_achieved, None),
        record("fig2/world", "truth", 0, 0, "within_cap", f64::from(u8::from(truth.within_cap)), None),
    ];
    for r in rows.iter_mut() {
        out.append(r);
    }
    sort_records(&mut out);
    Ok(out)
}

fn method_rank(m: &str) -> usize {
    METHODS.iter().position(|x| *x == m).unwrap_or(METHODS.len())
}

/// Canonical order: experiment, method, M, seed, metric.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| {
        a.experiment
            .cmp(&b.experiment)
            .then(method_rank(&a.method).cmp(&method_rank(&b.method)))
            .then(a.method.cmp(&b.method))
            .then(a.m.cmp(&b.m))
            .then(a.seed.cmp(&b.seed))
            .then(a.metric.cmp(&b.metric))
    });
}

/// Outcome of the concentration check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingReport {
    pub m: usize,
    pub trials: usize,
    pub events: usize,
    pub threshold: f64,
    pub max_deviation: f64,
    pub upper_bound: f64,
}

/// Draw `trials` sample sets of the bound's size and count how often some
/// empirical expected regret coordinate misses the truth by `epsilon * Delta`.
pub fn hoeffding_check(
    game: &Game,
    sigma: &BehaviorDistribution,
    mods: &ModificationSet,
    settings: &HoeffdingSettings,
    seed: u64,
) -> Result<HoeffdingReport> {
    let set = RegretSet::new(game, mods)?;
    let m = sample_bound(settings.epsilon, settings.delta, set.len(), game.feature_dim())?;
    let exact = set.expected_all(sigma.probs());
    let threshold = settings.epsilon * set.max_abs();
    let sampler = CdfSampler::new(sigma);
    let deviations: Vec<f64> = (0..settings.trials as u64)
        .into_par_iter()
        .map(|t| {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 3, t));
            let mut counts = vec![0.0; game.num_outcomes()];
            for _ in 0..m {
                counts[sampler.sample(&mut rng)] += 1.0;
            }
            counts.iter_mut().for_each(|c| *c /= m as f64);
            set.expected_all(&counts)
                .iter()
                .zip(&exact)
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
        })
        .collect();
    let events = deviations.iter().filter(|&&d| d >= threshold).count();
    Ok(HoeffdingReport {
        m,
        trials: settings.trials,
        events,
        threshold,
        max_deviation: deviations.iter().cloned().fold(0.0, f64::max),
        upper_bound: binomial_upper_bound(events, settings.trials, 0.95),
    })
}

pub fn hoeffding_records(report: &HoeffdingReport) -> Vec<ExperimentRecord> {
    let exp = "hoeffding";
    let m = report.m;
    vec![
        record(exp, "truth", m, 0, "event_rate", report.events as f64 / report.trials as f64, None),
        record(exp, "truth", m, 0, "event_rate_upper95", report.upper_bound, None),
        record(exp, "truth", m, 0, "max_deviation", report.max_deviation, None),
        record(exp, "truth", m, 0, "threshold", report.threshold, None),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub world: WorldConfig,
    /// Observations drawn from the base game.
    #[serde(default = "default_table_m")]
    pub m: usize,
    #[serde(default = "default_table_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub ice: IceSettings,
    /// Transfer budget; `None` reuses the l1 norm of the prediction's
    /// recovered utility.
    #[serde(default)]
    pub transfer_c: Option<f64>,
    /// Iteration cap for each transfer fit.
    #[serde(default = "default_transfer_iters")]
    pub transfer_iters: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "all_variants")]
    pub variants: Vec<VariantKind>,
}

fn default_table_m() -> usize {
    1000
}

fn default_table_seeds() -> usize {
    1
}

fn default_transfer_iters() -> usize {
    1500
}

fn all_variants() -> Vec<VariantKind> {
    VariantKind::ALL.to_vec()
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            world: commute_world(),
            m: default_table_m(),
            seeds: default_table_seeds(),
            ice: IceSettings::default(),
            transfer_c: None,
            transfer_iters: default_transfer_iters(),
            ridge: DEFAULT_RIDGE,
            variants: all_variants(),
        }
    }
}

/// Transfer log-loss on each variant of a routing world after observing
/// play in the base game.
pub fn run_table1(cfg: &Table1Config, seed: u64, timing: bool) -> Result<Vec<ExperimentRecord>> {
    let base = cfg
        .world
        .routing_config()
        .ok_or_else(|| IceError::Config("transfer experiments need a routing world".into()))?;
    if cfg.m == 0 || cfg.seeds == 0 {
        return Err(IceError::Config("m and seeds must be at least 1".into()));
    }
    let eq = &cfg.world.equilibrium;
    let (game, w) = base.build()?;
    let truth = world_truth(&game, &w, eq, seed)?.run.sigma;
    let mods = ModificationSet::internal(&game);
    let set = RegretSet::new(&game, &mods)?;

    struct Observed {
        samples: SampleSet,
        demo: Vec<f64>,
        c_transfer: f64,
        logistic: crate::baselines::LogisticModel,
    }
    let mut observed = Vec::new();
    let mut out = Vec::new();
    for s in 0..cfg.seeds as u64 {
        let samples = draw(&truth, cfg.m, derive_seed(seed, 4, s));
        let tilde = empirical(&samples, &game)?;
        let demo = set.expected_all(tilde.probs());
        let c_transfer = match cfg.transfer_c {
            Some(c) => c,
            None => {
                let pred = fit_regrets(&demo, &set, &cfg.ice.params())?;
                out.push(record("table1/base", "maxent_ice", cfg.m, s, "log_loss", loss(&truth, &pred.predicted)?, None));
                out.push(record("table1/base", "maxent_ice", cfg.m, s, "gap", pred.dual.gap, None));
                pred.w_hat().l1_norm()
            }
        };
        out.push(record("table1/base", "maxent_ice", cfg.m, s, "c_transfer", c_transfer, None));
        let logistic = fit_logistic(&samples, &game, cfg.ridge)?;
        observed.push(Observed {
            samples,
            demo,
            c_transfer,
            logistic,
        });
    }

    for &kind in &cfg.variants {
        let vcfg = base.variant(kind)?;
        let (vgame, vw) = vcfg.build()?;
        let exp = format!("table1/{}", kind.label());
        let vtruth = world_truth(&vgame, &vw, eq, derive_seed(seed, 5, kind as u64))?;
        let vset = RegretSet::new(&vgame, &ModificationSet::internal(&vgame))?;
        out.push(record(&exp, "truth", 0, 0, "epsilon", vtruth.run.epsilon_achieved, None));
        let vsigma = vtruth.run.sigma;
        for (s, obs) in observed.iter().enumerate() {
            let s = s as u64;
            let m = obs.samples.len();
            let (ice, t_ice) = timed(timing, || {
                let params = cfg
                    .ice
                    .params()
                    .with_c(obs.c_transfer.max(f64::MIN_POSITIVE))
                    .with_max_iters(cfg.transfer_iters);
                let model = fit_regrets(&obs.demo, &vset, &params)?;
                Ok((loss(&vsigma, &model.predicted)?, model.dual.gap))
            })?;
            let (logit, t_logit) = timed(timing, || loss(&vsigma, &predict_logistic(&obs.logistic, &vgame)?))?;
            let zero = timing.then_some(0);
            out.push(record(&exp, "maxent_ice", m, s, "log_loss", ice.0, t_ice));
            out.push(record(&exp, "maxent_ice", m, s, "gap", ice.1, None));
            out.push(record(&exp, "logistic", m, s, "log_loss", logit, t_logit));
            out.push(record(&exp, "uniform", m, s, "log_loss", (vgame.num_outcomes() as f64).ln(), zero));
            out.push(record(&exp, "truth", m, s, "log_loss", entropy(&vsigma), zero));
        }
    }
    sort_records(&mut out);
    Ok(out)
}

/// Mean of `metric` for `method` at observation count `m`.
pub fn mean_value(records: &[ExperimentRecord], experiment: &str, method: &str, m: usize, metric: &str) -> Option<f64> {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| r.experiment == experiment && r.method == method && r.m == m && r.metric == metric)
        .map(|r| r.value)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
