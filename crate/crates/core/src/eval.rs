//! Greedy-policy evaluation and the scenario × density sweep.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, StepOutcome};
use crate::error::{Error, Result};
use crate::learner::{greedy_slot, QTable};
use crate::motion::MotionAction;
use crate::perception::{JointAction, QueryAction, ScenarioId};
use crate::rng;

/// Columns of the evaluation CSV, in order.
pub const CSV_HEADER: [&str; 20] = [
    "scenario",
    "density",
    "episodes",
    "steps",
    "mean_distance",
    "std_distance",
    "v0",
    "v1",
    "v2",
    "acc",
    "dec",
    "nothing",
    "lane",
    "noquery",
    "q_g1",
    "q_g2",
    "q_g3",
    "q_g4",
    "collisions",
    "unseen_rate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub episodes: u64,
    pub steps: u64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { episodes: 5000, steps: 100, seed: 0, workers: 1 }
    }
}

/// Aggregates over all evaluation steps. Fractions are NaN when there were no steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: ScenarioId,
    pub density: f64,
    pub episodes: u64,
    pub steps: u64,
    pub mean_distance: f64,
    pub std_distance: f64,
    /// Velocity after each step, indexed by velocity.
    pub velocity_hist: Vec<f64>,
    /// Indexed by [`MotionAction::index`].
    pub motion_hist: [f64; 4],
    /// NoQuery first, then one entry per query group.
    pub query_hist: Vec<f64>,
    pub collisions: u64,
    /// Fraction of steps taken from a state the table has never seen.
    pub unseen_rate: f64,
}

impl EvalReport {
    pub fn noquery_fraction(&self) -> f64 {
        self.query_hist[0]
    }

    pub fn velocity_fraction(&self, v: usize) -> f64 {
        self.velocity_hist.get(v).copied().unwrap_or(0.0)
    }

    pub fn motion_fraction(&self, m: MotionAction) -> f64 {
        self.motion_hist[m.index()]
    }
}

/// Raw counts from one episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpisodeStats {
    pub distance: u64,
    pub velocity: Vec<u64>,
    pub motion: [u64; 4],
    pub query: Vec<u64>,
    pub collisions: u64,
    pub unseen: u64,
}

impl EpisodeStats {
    fn new(v_max: u32, queries: usize) -> Self {
        Self { velocity: vec![0; v_max as usize + 1], query: vec![0; queries], ..Default::default() }
    }
}

pub fn check_metadata(table: &QTable, env_config: &EnvConfig) -> Result<()> {
    if table.meta.scenario != env_config.scenario.id {
        return Err(Error::MetadataMismatch(format!(
            "table trained for {}, evaluating {}",
            table.meta.scenario, env_config.scenario.id
        )));
    }
    let hash = env_config.geometry_hash();
    if table.meta.geometry_hash != hash {
        return Err(Error::MetadataMismatch(format!(
            "table geometry hash {} does not match config hash {hash}",
            table.meta.geometry_hash
        )));
    }
    if table.slots() != env_config.action_space().slots() {
        return Err(Error::MetadataMismatch("table and scenario disagree on the action count".into()));
    }
    Ok(())
}

/// Resets `env` with `seed` and drives it greedily for `steps` steps.
/// `observe` sees the environment after every step.
pub fn run_episode(
    table: &QTable,
    env: &mut Env,
    seed: u64,
    steps: u64,
    mut observe: impl FnMut(&Env, JointAction, &StepOutcome),
) -> Result<EpisodeStats> {
    let space = env.config().action_space();
    let mut stats = EpisodeStats::new(env.config().v_max, space.query_count());
    env.reset(seed);
    for _ in 0..steps {
        let state = env.state_key();
        if !table.contains_state(state) {
            stats.unseen += 1;
        }
        let action = space.action(greedy_slot(table, &space, state, env.feasible_motions())?);
        let out = env.step(action)?;
        stats.distance += out.d as u64;
        stats.velocity[env.belief().pose.velocity as usize] += 1;
        stats.motion[action.motion.index()] += 1;
        stats.query[match action.query {
            QueryAction::NoQuery => 0,
            QueryAction::Group(g) => g + 1,
        }] += 1;
        stats.collisions += out.collided as u64;
        observe(env, action, &out);
    }
    Ok(stats)
}

/// Per-episode stats for `episodes` greedy episodes, in episode order.
/// Episode `i` is seeded with `derive_seed(opts.seed, i)` whichever worker runs it.
pub fn episode_stats(table: &QTable, env_config: &EnvConfig, opts: EvalOptions) -> Result<Vec<EpisodeStats>> {
    check_metadata(table, env_config)?;
    let workers = opts.workers.max(1).min(opts.episodes.max(1) as usize);
    let chunk = opts.episodes.div_ceil(workers as u64);
    let run = |range: std::ops::Range<u64>| -> Result<Vec<EpisodeStats>> {
        let mut env = Env::new(env_config.clone())?;
        range
            .map(|i| run_episode(table, &mut env, rng::derive_seed(opts.seed, i), opts.steps, |_, _, _| {}))
            .collect()
    };
    if workers == 1 {
        return run(0..opts.episodes);
    }
    let parts: Vec<Result<Vec<EpisodeStats>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers as u64)
            .map(|w| {
                let range = (w * chunk).min(opts.episodes)..((w + 1) * chunk).min(opts.episodes);
                scope.spawn(move || run(range))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut all = Vec::with_capacity(opts.episodes as usize);
    for part in parts {
        all.extend(part?);
    }
    Ok(all)
}

/// Folds per-episode stats into a report.
pub fn aggregate(scenario: ScenarioId, density: f64, steps: u64, v_max: u32, queries: usize, episodes: &[EpisodeStats]) -> EvalReport {
    let n = episodes.len() as f64;
    let total_steps = (episodes.len() as u64 * steps) as f64;
    let mut sum = EpisodeStats::new(v_max, queries);
    for e in episodes {
        sum.distance += e.distance;
        for (a, b) in sum.velocity.iter_mut().zip(&e.velocity) {
            *a += b;
        }
        for (a, b) in sum.motion.iter_mut().zip(&e.motion) {
            *a += b;
        }
        for (a, b) in sum.query.iter_mut().zip(&e.query) {
            *a += b;
        }
        sum.collisions += e.collisions;
        sum.unseen += e.unseen;
    }
    let mean = sum.distance as f64 / n;
    let var = episodes.iter().map(|e| (e.distance as f64 - mean).powi(2)).sum::<f64>() / n;
    let frac = |c: u64| c as f64 / total_steps;
    EvalReport {
        scenario,
        density,
        episodes: episodes.len() as u64,
        steps,
        mean_distance: mean,
        std_distance: var.sqrt(),
        velocity_hist: sum.velocity.iter().map(|&c| frac(c)).collect(),
        motion_hist: sum.motion.map(frac),
        query_hist: sum.query.iter().map(|&c| frac(c)).collect(),
        collisions: sum.collisions,
        unseen_rate: frac(sum.unseen),
    }
}

/// Evaluates the greedy policy of `table` at `env_config.p_occupied`.
pub fn evaluate(table: &QTable, env_config: &EnvConfig, opts: EvalOptions) -> Result<EvalReport> {
    let stats = episode_stats(table, env_config, opts)?;
    let space = env_config.action_space();
    Ok(aggregate(env_config.scenario.id, env_config.p_occupied, opts.steps, env_config.v_max, space.query_count(), &stats))
}

/// Evaluates one table per scenario at every density, scenarios in canonical order.
pub fn sweep(tables: &[(&QTable, &EnvConfig)], densities: &[f64], opts: EvalOptions) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(ScenarioId::ALL.len() * densities.len());
    for id in ScenarioId::ALL {
        let &(table, cfg) = tables
            .iter()
            .find(|(_, c)| c.scenario.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("no table for scenario {id}")))?;
        for &density in densities {
            let cfg = EnvConfig { p_occupied: density, ..cfg.clone() };
            reports.push(evaluate(table, &cfg, opts)?);
        }
    }
    Ok(reports)
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scenario: String,
    pub density: f64,
    pub episodes: u64,
    pub steps: u64,
    pub mean_distance: f64,
    pub std_distance: f64,
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
    pub acc: f64,
    pub dec: f64,
    pub nothing: f64,
    pub lane: f64,
    pub noquery: f64,
    pub q_g1: f64,
    pub q_g2: f64,
    pub q_g3: f64,
    pub q_g4: f64,
    pub collisions: u64,
    pub unseen_rate: f64,
}

impl EvalRow {
    /// Fails if the report has more velocity bins or query groups than the CSV holds.
    pub fn from_report(r: &EvalReport) -> Result<Self> {
        if r.velocity_hist.len() > 3 || r.query_hist.len() > 5 {
            return Err(Error::InvalidConfig("the CSV holds velocities 0..=2 and at most 4 query groups".into()));
        }
        let v = |i: usize| r.velocity_hist.get(i).copied().unwrap_or(0.0);
        let g = |i: usize| r.query_hist.get(i).copied().unwrap_or(0.0);
        Ok(Self {
            scenario: r.scenario.to_string(),
            density: r.density,
            episodes: r.episodes,
            steps: r.steps,
            mean_distance: r.mean_distance,
            std_distance: r.std_distance,
            v0: v(0),
            v1: v(1),
            v2: v(2),
            acc: r.motion_hist[0],
            dec: r.motion_hist[1],
            nothing: r.motion_hist[2],
            lane: r.motion_hist[3],
            noquery: g(0),
            q_g1: g(1),
            q_g2: g(2),
            q_g3: g(3),
            q_g4: g(4),
            collisions: r.collisions,
            unseen_rate: r.unseen_rate,
        })
    }
}

pub fn write_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let rows = reports.iter().map(EvalRow::from_report).collect::<Result<Vec<_>>>()?;
    write_rows(&rows, out)
}

pub fn write_rows<W: Write>(rows: &[EvalRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows, requiring the exact header.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Parse { line: 1, msg: format!("unexpected header {}", header.join(",")) });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
