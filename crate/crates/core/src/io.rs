//! File formats: games, worlds, samples, distributions and fitted models.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::baselines::LogisticModel;
use crate::behavior::{BehaviorDistribution, SampleSet};
use crate::equilibria::EquilibriumRun;
use crate::error::{IceError, Result};
use crate::game::{Game, ModificationSet, UtilityWeights};
use crate::oracle::{RationalityCertificate, RationalityCheck};
use crate::routing::RoutingConfig;
use crate::solver::FittedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseGame {
    pub players: usize,
    pub actions: Vec<usize>,
    pub feature_dim: usize,
    #[serde(default)]
    pub feature_names: Vec<String>,
    /// One row per (outcome, player) pair, outcome-major.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameFile {
    Generator { generator: RoutingConfig },
    Dense(DenseGame),
}

impl GameFile {
    pub fn from_game(game: &Game) -> Self {
        let k = game.feature_dim();
        GameFile::Dense(DenseGame {
            players: game.num_players(),
            actions: game.action_counts().to_vec(),
            feature_dim: k,
            feature_names: game.feature_names().to_vec(),
            features: game.raw_features().chunks_exact(k).map(|r| r.to_vec()).collect(),
        })
    }

    pub fn to_game(&self) -> Result<Game> {
        match self {
            GameFile::Generator { generator } => Ok(generator.build()?.0),
            GameFile::Dense(d) => {
                if d.actions.len() != d.players {
                    return Err(IceError::InvalidGame(format!(
                        "players = {} but {} action counts",
                        d.players,
                        d.actions.len()
                    )));
                }
                if let Some(bad) = d.features.iter().position(|r| r.len() != d.feature_dim) {
                    return Err(IceError::InvalidGame(format!(
                        "feature row {bad} has {} entries, expected {}",
                        d.features[bad].len(),
                        d.feature_dim
                    )));
                }
                let flat = d.features.concat();
                Game::new(d.actions.clone(), d.feature_dim, d.feature_names.clone(), flat)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSettings {
    pub iterations: usize,
    pub restarts: usize,
    pub epsilon_cap: f64,
}

impl Default for EquilibriumSettings {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            restarts: 8,
            epsilon_cap: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSource {
    Routing { routing: RoutingConfig },
    Game { game: GameFile, true_w: Vec<f64> },
}

/// A game, its true weights and how to generate equilibrium play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    #[serde(flatten)]
    pub source: WorldSource,
    #[serde(default)]
    pub equilibrium: EquilibriumSettings,
    #[serde(default)]
    pub seed: u64,
}

impl WorldConfig {
    pub fn routing(routing: RoutingConfig, equilibrium: EquilibriumSettings) -> Self {
        let seed = routing.seed;
        Self {
            source: WorldSource::Routing { routing },
            equilibrium,
            seed,
        }
    }

    pub fn build(&self) -> Result<(Game, UtilityWeights)> {
        match &self.source {
            WorldSource::Routing { routing } => routing.build(),
            WorldSource::Game { game, true_w } => {
                let g = game.to_game()?;
                let w = UtilityWeights::new(true_w.clone())?;
                if w.dim() != g.feature_dim() {
                    return Err(IceError::Config(format!(
                        "true_w has {} entries for K = {}",
                        w.dim(),
                        g.feature_dim()
                    )));
                }
                Ok((g, w))
            }
        }
    }

    pub fn routing_config(&self) -> Option<&RoutingConfig> {
        match &self.source {
            WorldSource::Routing { routing } => Some(routing),
            WorldSource::Game { .. } => None,
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_game(path: &Path) -> Result<Game> {
    read_json::<GameFile>(path)?.to_game()
}

pub fn save_game(path: &Path, game: &Game) -> Result<()> {
    write_json(path, &GameFile::from_game(game))
}

pub fn load_world(path: &Path) -> Result<WorldConfig> {
    let cfg: WorldConfig = read_json(path)?;
    if let Some(r) = cfg.routing_config() {
        r.validate()?;
    }
    Ok(cfg)
}

pub fn write_samples(path: &Path, samples: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["outcome"])?;
    for a in &samples.outcomes {
        w.write_record([a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct SampleRow {
    outcome: usize,
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let mut r = csv::Reader::from_path(path)?;
    let outcomes = r
        .deserialize::<SampleRow>()
        .map(|row| row.map(|x| x.outcome))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(SampleSet::new(outcomes, 0))
}

pub fn write_distribution(path: &Path, sigma: &BehaviorDistribution) -> Result<()> {
    write_json(path, sigma.probs())
}

pub fn read_distribution(path: &Path) -> Result<BehaviorDistribution> {
    BehaviorDistribution::new(read_json::<Vec<f64>>(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "T_run")]
    pub t_run: usize,
    pub converged: bool,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub xi: f64,
    pub w_hat: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub nu: f64,
    pub method: crate::solver::Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_game: Option<PathBuf>,
}

impl ModelFile {
    pub fn new(model: &FittedModel, target_game: Option<PathBuf>) -> Self {
        let d = &model.dual;
        Self {
            c: d.c,
            t_run: d.iterations_run,
            converged: d.converged,
            alpha: d.alpha.clone(),
            beta: d.beta.clone(),
            xi: d.xi,
            w_hat: model.w_hat().as_slice().to_vec(),
            objective: d.objective_value,
            gap: d.gap,
            nu: model.nu_certified,
            method: d.method,
            target_game,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub nu: f64,
    pub method: crate::oracle::CertMethod,
    pub tolerance: f64,
    /// Mixture weights over demonstrated modifications, keyed by the label of
    /// the target modification.
    pub eta: BTreeMap<String, Vec<f64>>,
    pub max_violation: f64,
    pub worst_direction: Vec<f64>,
}

impl CertificateFile {
    pub fn new(cert: &RationalityCertificate, mods_target: &ModificationSet, check: &RationalityCheck) -> Self {
        let eta = mods_target
            .entries
            .iter()
            .zip(&cert.eta)
            .map(|(f, w)| (f.label(), w.clone()))
            .collect();
        Self {
            nu: cert.nu,
            method: cert.method,
            tolerance: cert.tolerance,
            eta,
            max_violation: check.max_violation,
            worst_direction: check.worst_direction.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumFile {
    pub epsilon: f64,
    pub welfare: f64,
    pub iterations: usize,
    pub seed: u64,
    pub sigma_file: PathBuf,
    #[serde(default = "yes")]
    pub within_cap: bool,
}

fn yes() -> bool {
    true
}

impl EquilibriumFile {
    pub fn new(run: &EquilibriumRun, sigma_file: PathBuf, within_cap: bool) -> Self {
        Self {
            epsilon: run.epsilon_achieved,
            welfare: run.welfare,
            iterations: run.iterations,
            seed: run.seed,
            sigma_file,
            within_cap,
        }
    }
}

pub fn write_logistic(path: &Path, model: &LogisticModel) -> Result<()> {
    write_json(path, model)
}
