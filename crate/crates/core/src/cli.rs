//! The `roadq` command line: train, eval, oracle and report.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data or contract errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::env::{Env, StepRecord, TrajectoryWriter};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::learner::{self, greedy_slot};
use crate::oracle::{self, EnumeratedMdp};
use crate::perception::ScenarioId;
use crate::{qfile, report, rng};

#[derive(Debug, Parser)]
#[command(name = "roadq", version, about = "Joint motion and query Q-learning on an occupancy grid")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a Q-table with uniform exploration.
    Train(TrainArgs),
    /// Evaluate a Q-table's greedy policy at one or more densities.
    Eval(EvalArgs),
    /// Solve a small configuration exactly by value iteration.
    Oracle(OracleArgs),
    /// Merge evaluation CSVs and draw the summary charts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration (TOML). Defaults to the evaluation grid.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario: LV, RC, C1, C2 or FV.
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub episodes: Option<u64>,
    /// Steps per episode.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Discount factor.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Step size.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Print progress every N episodes (0: never). Defaults to a tenth of the run.
    #[arg(long)]
    pub progress_every: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub qtable: PathBuf,
    /// Occupancy probability; repeat for several. Defaults to the config's list.
    #[arg(long = "density")]
    pub densities: Vec<f64>,
    #[arg(long)]
    pub episodes: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Dump the first episode at each density as JSON lines.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub state_cap: Option<usize>,
    /// Learned table to compare against Q*.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Minimum visit count for compared pairs. Ignored when the table has no visits file.
    #[arg(long)]
    pub n_min: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation CSV; repeat for several.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Merged CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the four SVG charts.
    #[arg(long)]
    pub svg_dir: Option<PathBuf>,
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    let cfg = match &arg.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::standard(arg.scenario.unwrap_or(ScenarioId::C2)),
    };
    let cfg = match arg.scenario {
        Some(id) => cfg.with_scenario(id),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let run = load_config(&args.config)?;
    let mut lc = run.learner.clone();
    lc.num_episodes = args.episodes.unwrap_or(lc.num_episodes);
    lc.steps_per_episode = args.steps.unwrap_or(lc.steps_per_episode);
    lc.seed = args.seed.unwrap_or(lc.seed);
    lc.alpha = args.alpha.unwrap_or(lc.alpha);
    lc.gamma_step = args.gamma.unwrap_or(lc.gamma_step);
    lc.validate()?;
    let env = run.env_config(true)?;
    let every = args.progress_every.unwrap_or((lc.num_episodes / 10).max(1));
    let mut io_err = None;
    let table = learner::train(&lc, &env, every, |p| {
        if let Err(e) = writeln!(out, "episodes={} entries={} max_dq={:.6e}", p.episodes_done, p.entries, p.max_delta) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    qfile::save(&table, &env, &args.out)?;
    writeln!(out, "wrote {} entries over {} states to {}", table.len(), table.state_count(), args.out.display())?;
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let meta = qfile::read_meta(&args.qtable)?;
    let mut run = load_config(&args.config)?;
    match args.config.scenario {
        Some(id) if id != meta.scenario => {
            return Err(Error::MetadataMismatch(format!("--scenario {id} but the table is for {}", meta.scenario)));
        }
        _ => run = run.with_scenario(meta.scenario),
    }
    let env = run.env_config(false)?;
    let table = qfile::load(&env, &args.qtable)?;
    let mut opts = run.eval.options();
    opts.episodes = args.episodes.unwrap_or(opts.episodes);
    opts.steps = args.steps.unwrap_or(opts.steps);
    opts.seed = args.seed.unwrap_or(opts.seed);
    opts.workers = args.workers.unwrap_or(opts.workers);
    let densities = if args.densities.is_empty() { run.eval.densities.clone() } else { args.densities.clone() };
    let mut reports: Vec<EvalReport> = Vec::with_capacity(densities.len());
    let mut dump = args.trajectory.as_deref().map(create).transpose()?.map(TrajectoryWriter::new);
    for &density in &densities {
        let cfg = crate::env::EnvConfig { p_occupied: density, ..env.clone() };
        cfg.validate()?;
        let r = eval::evaluate(&table, &cfg, opts)?;
        writeln!(
            out,
            "{} p={} mean_distance={:.3} v2={:.3} noquery={:.3} collisions={}",
            r.scenario,
            density,
            r.mean_distance,
            r.velocity_fraction(2),
            r.noquery_fraction(),
            r.collisions
        )?;
        reports.push(r);
        if let Some(w) = dump.as_mut() {
            dump_episode(&table, &cfg, rng::derive_seed(opts.seed, 0), opts.steps, w)?;
        }
    }
    if let Some(w) = dump {
        w.into_inner().flush()?;
    }
    eval::write_csv(&reports, create(&args.out)?)?;
    Ok(())
}

/// Replays one greedy episode, writing each step.
fn dump_episode<W: Write>(
    table: &learner::QTable,
    cfg: &crate::env::EnvConfig,
    seed: u64,
    steps: u64,
    w: &mut TrajectoryWriter<W>,
) -> Result<()> {
    let space = cfg.action_space();
    let mut env = Env::new(cfg.clone())?;
    env.reset(seed);
    for _ in 0..steps {
        let slot = greedy_slot(table, &space, env.state_key(), env.feasible_motions())?;
        let (_, record): (_, StepRecord) = env.step_recorded(space.action(slot))?;
        w.write(&record)?;
    }
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs, out: &mut dyn Write) -> Result<()> {
    let run = load_config(&args.config)?;
    let env = run.env_config(true)?;
    let tol = args.tol.unwrap_or(run.oracle.tol);
    let cap = args.state_cap.unwrap_or(run.oracle.state_cap);
    let mdp = EnumeratedMdp::build(&env, run.learner.alpha, cap)?;
    let q = oracle::value_iteration(&mdp, tol)?;
    writeln!(
        out,
        "states={} pairs={} sweeps={} residual={:.3e}",
        mdp.states().len(),
        mdp.pair_count(),
        q.sweeps,
        q.bellman_residual(&mdp)
    )?;
    let meta = learner::QMeta {
        scenario: env.scenario.id,
        geometry_hash: env.geometry_hash(),
        alpha: run.learner.alpha,
        gamma_step: run.learner.gamma_step,
        episodes: 0,
        steps_per_episode: 0,
        seed: 0,
    };
    let star = q.to_table(&mdp, meta);
    qfile::write_table(&star, &env, create(&args.out)?)?;
    if let Some(path) = &args.compare {
        let learned = qfile::load(&env, path)?;
        // Without visit counts every pair is compared.
        let n_min = if qfile::visits_path(path).exists() { args.n_min.unwrap_or(run.oracle.n_min) } else { 0 };
        let c = oracle::compare(&learned, &star, n_min)?;
        writeln!(
            out,
            "linf={:.6e} compared={} rare={} rare_linf={:.6e}",
            c.max_abs_diff, c.compared, c.rare, c.rare_max_abs_diff
        )?;
    }
    Ok(())
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let inputs = args
        .inputs
        .iter()
        .map(|p| eval::read_csv(File::open(p)?))
        .collect::<Result<Vec<_>>>()?;
    let grid = report::merge(inputs)?;
    for id in &grid.missing {
        writeln!(err, "warning: no rows for scenario {id}")?;
    }
    eval::write_rows(&grid.rows, create(&args.out)?)?;
    writeln!(out, "merged {} rows into {}", grid.rows.len(), args.out.display())?;
    if let Some(dir) = &args.svg_dir {
        std::fs::create_dir_all(dir)?;
        for (stem, chart) in report::figure_charts(&grid) {
            std::fs::write(dir.join(format!("{stem}.svg")), chart.to_svg())?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 1;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Oracle(a) => cmd_oracle(a, out),
        Command::Report(a) => cmd_report(a, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}
