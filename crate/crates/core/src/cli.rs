//! The `ice` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::behavior::{draw, empirical, entropy, log_loss, BehaviorDistribution};
use crate::error::{IceError, Result};
use crate::experiments::{
    hoeffding_check, hoeffding_records, run_fig2, run_table1, sample_bound, world_truth, Fig2Config, Table1Config,
};
use crate::game::{ModificationSet, RegretSet};
use crate::io::{
    load_game, load_world, read_distribution, read_json, read_samples, save_game, write_distribution, write_json,
    write_samples, CertificateFile, EquilibriumFile, ModelFile,
};
use crate::oracle::{check_shared_features, check_strong_rationality_vectors};
use crate::solver::{fit_regrets, iteration_bound, Method, SolverParams, StopRule};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INCOMPATIBLE: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "ice", version, about = "Maximum-entropy inverse correlated equilibrium")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModsArg {
    Internal,
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Extragradient,
    Eg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a world: game file, true weights and equilibrium play.
    Gen { config: PathBuf },
    /// Draw observations from a distribution.
    Sample {
        #[arg(long)]
        sigma: PathBuf,
        #[arg(long)]
        m: usize,
    },
    /// Fit a MaxEnt ICE model to observations.
    Fit {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        transfer_game: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModsArg::Internal)]
        mods: ModsArg,
        #[arg(long, value_enum, default_value_t = MethodArg::Extragradient)]
        method: MethodArg,
    },
    /// Compare a prediction with a reference distribution.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Prediction error against observation count.
    Fig2 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_m: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
        /// ICE iteration cap.
        #[arg(long = "T")]
        t: Option<usize>,
        /// Also run the sample-size concentration check.
        #[arg(long)]
        check_hoeffding: bool,
        /// Fill the wall_time_ms column (breaks byte-identical reruns).
        #[arg(long)]
        timing: bool,
    },
    /// Transfer error on the four modified routing games.
    Table1 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "T")]
        t: Option<usize>,
        #[arg(long)]
        timing: bool,
    },
    /// Observations sufficient for all expected regrets to be within
    /// `epsilon * Delta` with probability `1 - delta`.
    Samplebound {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        mods_size: usize,
        #[arg(long = "K")]
        k: usize,
    },
}

/// Exit status for an error.
pub fn exit_code(err: &IceError) -> u8 {
    match err {
        IceError::DimensionMismatch(_) => EXIT_INCOMPATIBLE,
        IceError::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parse arguments, run, and map the outcome to an exit status.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("ICE_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged(msg)) => {
            eprintln!("ice: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(e) => {
            eprintln!("ice: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub enum Outcome {
    Done,
    /// Artifacts were written but the solver stopped before its tolerance.
    NotConverged(String),
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| IceError::Config("--out is required for this command".into()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(IceError::InvalidParameter("--threads must be at least 1".into()));
        }
        // Ignore a second initialization when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Gen { config } => cmd_gen(cli, config),
        Command::Sample { sigma, m } => {
            let sigma = read_distribution(sigma)?;
            let samples = draw(&sigma, *m, cli.seed);
            write_samples(require_out(cli)?, &samples)?;
            Ok(Outcome::Done)
        }
        Command::Fit {
            game,
            samples,
            c,
            t,
            gamma,
            tol,
            transfer_game,
            mods,
            method,
        } => {
            let p = FitArgs {
                game,
                samples,
                c: *c,
                t: *t,
                gamma: *gamma,
                tol: *tol,
                transfer_game: transfer_game.as_deref(),
                mods: *mods,
                method: *method,
            };
            cmd_fit(cli, &p)
        }
        Command::Eval { pred, truth } => {
            let metrics = evaluate(&read_distribution(pred)?, &read_distribution(truth)?)?;
            match &cli.out {
                Some(p) => write_json(p, &metrics)?,
                None => print_json(&metrics)?,
            }
            Ok(Outcome::Done)
        }
        Command::Fig2 {
            config,
            max_m,
            seeds,
            t,
            check_hoeffding,
            timing,
        } => {
            let mut cfg: Fig2Config = match config {
                Some(p) => read_json(p)?,
                None => Fig2Config::default(),
            };
            if let Some(m) = max_m {
                cfg.max_m = *m;
            }
            if let Some(s) = seeds {
                cfg.seeds = *s;
            }
            if let Some(t) = t {
                cfg.ice.max_iters = *t;
            }
            let out = require_out(cli)?;
            let mut records = run_fig2(&cfg, cli.seed, *timing)?;
            if *check_hoeffding {
                let (game, w) = cfg.world.build()?;
                let truth = world_truth(&game, &w, &cfg.world.equilibrium, cli.seed)?;
                let report = hoeffding_check(
                    &game,
                    &truth.run.sigma,
                    &ModificationSet::internal(&game),
                    &cfg.hoeffding,
                    cli.seed,
                )?;
                info!("concentration check: {report:?}");
                records.extend(hoeffding_records(&report));
                crate::experiments::sort_records(&mut records);
            }
            crate::experiments::write_records(out, &records)?;
            Ok(Outcome::Done)
        }
        Command::Table1 { config, t, timing } => {
            let mut cfg: Table1Config = match config {
                Some(p) => read_json(p)?,
                None => Table1Config::default(),
            };
            if let Some(t) = t {
                cfg.ice.max_iters = *t;
            }
            let out = require_out(cli)?;
            let records = run_table1(&cfg, cli.seed, *timing)?;
            crate::experiments::write_records(out, &records)?;
            Ok(Outcome::Done)
        }
        Command::Samplebound {
            epsilon,
            delta,
            mods_size,
            k,
        } => {
            let m = sample_bound(*epsilon, *delta, *mods_size, *k)?;
            println!("{m}");
            Ok(Outcome::Done)
        }
    }
}

fn cmd_gen(cli: &Cli, config: &Path) -> Result<Outcome> {
    let world = load_world(config)?;
    let out = require_out(cli)?;
    ensure_dir(out)?;
    let (game, w) = world.build()?;
    let seed = cli.seed ^ world.seed;
    let selection = world_truth(&game, &w, &world.equilibrium, seed)?;
    save_game(&out.join("game.json"), &game)?;
    write_json(&out.join("w_star.json"), w.as_slice())?;
    write_distribution(&out.join("sigma.json"), &selection.run.sigma)?;
    let eq = EquilibriumFile::new(&selection.run, PathBuf::from("sigma.json"), selection.within_cap);
    write_json(&out.join("equilibrium.json"), &eq)?;
    if !selection.within_cap {
        warn!(
            "no restart reached epsilon <= {}; kept the least-regret run (epsilon = {})",
            world.equilibrium.epsilon_cap, selection.run.epsilon_achieved
        );
    }
    info!(
        "wrote {} outcomes, epsilon = {}",
        game.num_outcomes(),
        selection.run.epsilon_achieved
    );
    Ok(Outcome::Done)
}

struct FitArgs<'a> {
    game: &'a Path,
    samples: &'a Path,
    c: Option<f64>,
    t: Option<usize>,
    gamma: Option<f64>,
    tol: Option<f64>,
    transfer_game: Option<&'a Path>,
    mods: ModsArg,
    method: MethodArg,
}

const MAX_DEFAULT_T: usize = 100_000;

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Result<Outcome> {
    let game = load_game(a.game)?;
    let target_game = match a.transfer_game {
        Some(p) => load_game(p)?,
        None => game.clone(),
    };
    check_shared_features(&game, &target_game)?;
    let samples = read_samples(a.samples)?;
    let tilde = empirical(&samples, &game)?;
    let class = |g| match a.mods {
        ModsArg::Internal => Ok(ModificationSet::internal(g)),
        ModsArg::Swap => ModificationSet::swap(g),
    };
    let mods_obs = class(&game)?;
    let mods_target = class(&target_game)?;
    let demo = RegretSet::new(&game, &mods_obs)?.expected_all(tilde.probs());
    let target = RegretSet::new(&target_game, &mods_target)?;

    let mut params = SolverParams::default();
    params.c = a.c;
    params.gamma = a.gamma;
    if let Some(tol) = a.tol {
        params.stop = StopRule::Gap { tolerance: tol };
    }
    params.method = match a.method {
        MethodArg::Extragradient => Method::Extragradient,
        MethodArg::Eg => Method::ExponentiatedGradient,
    };
    let tolerance = match params.stop {
        StopRule::Gap { tolerance } => tolerance,
        StopRule::FixedT => 1e-6,
    };
    let delta = target.max_abs().max(demo.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    params.max_iters = a.t.unwrap_or_else(|| {
        iteration_bound(delta.max(f64::MIN_POSITIVE), target.len() * target.feature_dim(), tolerance)
            .clamp(1, MAX_DEFAULT_T)
    });

    let model = fit_regrets(&demo, &target, &params)?;
    let out = require_out(cli)?;
    ensure_dir(out)?;
    let file = ModelFile::new(&model, a.transfer_game.map(Path::to_path_buf));
    if file.alpha.iter().chain(&file.beta).any(|x| !x.is_finite()) {
        return Err(IceError::Numerical("non-finite multipliers".into()));
    }
    write_json(&out.join("model.json"), &file)?;
    write_distribution(&out.join("predicted.json"), &model.predicted)?;
    let hat = target.expected_all(model.predicted.probs());
    let check = if target.is_empty() || demo.is_empty() {
        crate::oracle::RationalityCheck {
            max_violation: 0.0,
            worst_direction: vec![],
            directions: 0,
        }
    } else {
        check_strong_rationality_vectors(&hat, &demo, target.feature_dim(), model.nu_certified, 1000, cli.seed)?
    };
    write_json(
        &out.join("certificate.json"),
        &CertificateFile::new(&model.certificate, &mods_target, &check),
    )?;
    if model.dual.converged {
        Ok(Outcome::Done)
    } else {
        Ok(Outcome::NotConverged(format!(
            "stopped after {} iterations with duality gap {:.3e}; artifacts written to {}",
            model.dual.iterations_run,
            model.dual.gap,
            out.display()
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub log_loss: f64,
    /// Outcomes with positive reference mass that the prediction gives zero.
    pub uncovered: usize,
    pub max_abs_diff: f64,
    pub truth_entropy: f64,
    pub uniform_log_loss: f64,
}

pub fn evaluate(pred: &BehaviorDistribution, truth: &BehaviorDistribution) -> Result<EvalMetrics> {
    let l = log_loss(truth, pred)?;
    Ok(EvalMetrics {
        log_loss: if l.is_finite() { l.value } else { f64::INFINITY },
        uncovered: l.uncovered,
        max_abs_diff: pred.max_abs_diff(truth),
        truth_entropy: entropy(truth),
        uniform_log_loss: (truth.len() as f64).ln(),
    })
}
