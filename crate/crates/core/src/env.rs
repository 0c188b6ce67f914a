//! The simulator: episodic reset and step over the occupancy grid.
//!
//! A step resolves the motion against ground truth, advances the window by
//! the cells moved, shifts the extended beliefs by the same amount, applies
//! the scenario's reveal (auto-reveal or the queried group, in the new frame),
//! re-reads the local view and returns the stage cost.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{ColumnLaw, ColumnPattern, GridGeometry, GridWindow, OccupancySampler};
use crate::motion::{self, EgoPose, LaneChangeRule, MotionAction, MotionSet};
use crate::perception::{ActionSpace, AutoReveal, BeliefState, JointAction, QueryAction, ScenarioSpec, StateCodec, StateKey};
use crate::rng;

/// Per-step rewards. The stage cost is the negated reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSpec {
    pub per_cell: f64,
    pub idle_bonus: f64,
    pub noquery_bonus: f64,
    pub collision_penalty: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { per_cell: 1.0, idle_bonus: 0.1, noquery_bonus: 0.1, collision_penalty: -1000.0 }
    }
}

impl RewardSpec {
    /// Largest stage cost magnitude, used for Q-value bounds.
    pub fn max_abs_cost(&self, v_max: u32) -> f64 {
        let best = self.per_cell.abs() * v_max as f64 + self.idle_bonus.abs() + self.noquery_bonus.abs();
        best.max(self.collision_penalty.abs())
    }

    /// Stage cost of a step. `NoQuery` only earns its bonus when the scenario
    /// offers a real query choice.
    pub fn stage_cost(&self, scenario: &ScenarioSpec, action: JointAction, d: u32, collided: bool) -> f64 {
        if collided {
            return -self.collision_penalty;
        }
        let mut reward = self.per_cell * d as f64;
        if action.motion == MotionAction::DoNothing {
            reward += self.idle_bonus;
        }
        if action.query == QueryAction::NoQuery && scenario.has_query_choice() {
            reward += self.noquery_bonus;
        }
        0.0 - reward
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub geometry: GridGeometry,
    pub scenario: ScenarioSpec,
    pub reward: RewardSpec,
    pub p_occupied: f64,
    pub column_exclusion: bool,
    pub v_max: u32,
    pub lane_change: LaneChangeRule,
    pub seed: u64,
}

impl EnvConfig {
    /// Evaluation-grid defaults for a scenario.
    pub fn standard(scenario: crate::perception::ScenarioId) -> Self {
        let geometry = GridGeometry::standard();
        Self {
            geometry,
            scenario: ScenarioSpec::standard(scenario, geometry),
            reward: RewardSpec::default(),
            p_occupied: 0.0,
            column_exclusion: true,
            v_max: 2,
            lane_change: LaneChangeRule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.scenario.validate(self.geometry)?;
        ColumnLaw::new(self.p_occupied, self.column_exclusion, self.geometry.lanes)?;
        if self.v_max == 0 {
            return Err(Error::InvalidConfig("v_max must be at least 1".into()));
        }
        if self.geometry.max_offset() < self.v_max as i32 {
            return Err(Error::InvalidConfig("the window must reach v_max cells ahead".into()));
        }
        let r = &self.reward;
        if ![r.per_cell, r.idle_bonus, r.noquery_bonus, r.collision_penalty].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("rewards must be finite".into()));
        }
        Ok(())
    }

    pub fn column_law(&self) -> Result<ColumnLaw> {
        ColumnLaw::new(self.p_occupied, self.column_exclusion, self.geometry.lanes)
    }

    pub fn codec(&self) -> Result<StateCodec> {
        StateCodec::new(self.geometry, self.v_max, &self.scenario)
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace::new(&self.scenario)
    }

    pub fn feasible_motions(&self, pose: EgoPose) -> MotionSet {
        motion::feasible_motion_actions(pose, self.v_max, self.geometry.lanes)
    }

    /// Short digest of everything a Q-table depends on: geometry, scenario,
    /// rewards, top speed and the lane-change rule. Density, exclusion and
    /// seeds are left out so one table can be evaluated under any of them.
    pub fn geometry_hash(&self) -> String {
        let g = &self.geometry;
        let r = &self.reward;
        let canonical = format!(
            "lanes={} local={} rear={} ext={};scenario={} groups={:?} reveal={:?};reward={:016x},{:016x},{:016x},{:016x};v_max={};lane_change={}",
            g.lanes,
            g.local_cols,
            g.rear_cols,
            g.ext_cols,
            self.scenario.id,
            self.scenario.query_groups,
            self.scenario.auto_reveal,
            r.per_cell.to_bits(),
            r.idle_bonus.to_bits(),
            r.noquery_bonus.to_bits(),
            r.collision_penalty.to_bits(),
            self.v_max,
            self.lane_change.name(),
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cells revealed by the random-half rule for choice 0 or 1.
    pub fn half_cells(&self, choice: usize) -> std::ops::RangeInclusive<usize> {
        let n = self.geometry.ext_cells();
        let half = n / 2;
        if choice == 0 {
            1..=half
        } else {
            half + 1..=n
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub cost: f64,
    pub d: u32,
    pub collided: bool,
}

/// One transition, for trajectory dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state_key: String,
    pub action: String,
    pub cost: f64,
    pub next_state_key: String,
    pub d: u32,
    pub collided: bool,
}

/// Writes one JSON object per line.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Applies one step to `window` and `belief`. Randomness is injected:
/// `fresh` supplies frontier columns nearest first and `half` picks the
/// random-half reveal. The oracle drives this with enumerated outcomes.
pub(crate) fn apply_step(
    cfg: &EnvConfig,
    window: &mut GridWindow,
    belief: &mut BeliefState,
    action: JointAction,
    fresh: impl FnMut() -> ColumnPattern,
    half: impl FnOnce() -> usize,
) -> Result<StepOutcome> {
    if let QueryAction::Group(g) = action.query {
        if g >= cfg.scenario.query_groups.len() {
            return Err(Error::Infeasible(format!("query group {} in {}", g + 1, cfg.scenario.id)));
        }
    }
    let outcome = motion::resolve_motion(window, belief.pose, action.motion, cfg.v_max, cfg.lane_change)?;
    let d = outcome.d as usize;
    window.advance_with(d, fresh);
    belief.pose = outcome.new_pose;
    belief.shift(d);
    match cfg.scenario.auto_reveal {
        AutoReveal::None => {}
        AutoReveal::Full => belief.reveal_all(window),
        AutoReveal::RandomHalf => {
            let cells: Vec<usize> = cfg.half_cells(half()).collect();
            belief.reveal(&cells, window);
        }
    }
    if let QueryAction::Group(g) = action.query {
        belief.reveal(&cfg.scenario.query_groups[g], window);
    }
    belief.read_local(window);
    let cost = cfg.reward.stage_cost(&cfg.scenario, action, outcome.d, outcome.collided);
    Ok(StepOutcome { cost, d: outcome.d, collided: outcome.collided })
}

/// Reveals applied at reset: nothing, one random half, or everything.
pub(crate) fn apply_initial_reveal(cfg: &EnvConfig, window: &GridWindow, belief: &mut BeliefState, half: impl FnOnce() -> usize) {
    match cfg.scenario.auto_reveal {
        AutoReveal::None => {}
        AutoReveal::Full => belief.reveal_all(window),
        AutoReveal::RandomHalf => {
            let cells: Vec<usize> = cfg.half_cells(half()).collect();
            belief.reveal(&cells, window);
        }
    }
}

/// A single simulated road with one ego vehicle.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    codec: StateCodec,
    window: GridWindow,
    belief: BeliefState,
    sampler: OccupancySampler,
    rng: ChaCha8Rng,
}

impl Env {
    /// Validates the config and resets with `config.seed`.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let codec = config.codec()?;
        let law = config.column_law()?;
        let seed = config.seed;
        let geometry = config.geometry;
        let mut env = Self {
            codec,
            window: GridWindow::empty(geometry),
            belief: BeliefState::new(geometry, EgoPose::default()),
            sampler: OccupancySampler::new(law, seed),
            rng: rng::stream(seed, rng::ENV_STREAM),
            config,
        };
        env.reset(seed);
        Ok(env)
    }

    /// Places the ego at rest in a uniformly drawn lane on a freshly sampled
    /// road. Road columns come from their own stream, so two environments
    /// reset with the same seed see the same road whatever the ego does.
    pub fn reset(&mut self, seed: u64) -> &BeliefState {
        self.sampler = OccupancySampler::new(self.sampler.law(), seed);
        self.rng = rng::stream(seed, rng::ENV_STREAM);
        let lanes = self.config.geometry.lanes;
        let lane = self.rng.random_range(0..lanes);
        self.window = GridWindow::sample(self.config.geometry, lane, &mut self.sampler);
        self.belief = BeliefState::new(self.config.geometry, EgoPose { velocity: 0, lane });
        self.belief.read_local(&self.window);
        let rng = &mut self.rng;
        apply_initial_reveal(&self.config, &self.window, &mut self.belief, || rng.random_range(0..2));
        &self.belief
    }

    /// Builds an environment sitting in `belief`, see [`Env::reset_to`].
    pub fn with_belief(config: EnvConfig, belief: &BeliefState, seed: u64) -> Result<Self> {
        let mut env = Self::new(config)?;
        env.reset_to(belief, seed)?;
        Ok(env)
    }

    /// Puts the ego in `belief`. Local cells are taken from the belief and
    /// every unknown extended cell is drawn from the occupancy law,
    /// conditioned on the known cells of its column, by rejection sampling.
    pub fn reset_to(&mut self, belief: &BeliefState, seed: u64) -> Result<()> {
        let g = self.config.geometry;
        if belief.geometry() != g {
            return Err(Error::Inconsistent("belief geometry differs from the environment's".into()));
        }
        let law = self.sampler.law();
        self.sampler = OccupancySampler::new(law, seed);
        self.rng = rng::stream(seed, rng::ENV_STREAM);
        let mut window = GridWindow::empty(g);
        for lane in 0..g.lanes {
            for off in g.min_offset()..g.first_ext_offset() {
                window.set(lane, off, belief.local_cell(lane, off));
            }
        }
        for col in 0..g.ext_cols {
            let (known, occ) = belief.ext_column(col);
            if law.conditional(known, occ).is_empty() {
                return Err(Error::Inconsistent(format!("extended column {col} is impossible under the occupancy law")));
            }
            let pattern = loop {
                let draw = self.sampler.sample_column();
                if draw & known == occ & known {
                    break draw;
                }
            };
            window.set_column(g.local_cols + col, pattern);
        }
        self.window = window;
        self.belief = belief.clone();
        Ok(())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn window(&self) -> &GridWindow {
        &self.window
    }

    pub fn state_key(&self) -> StateKey {
        self.codec.encode(&self.belief).expect("environment belief is always encodable")
    }

    pub fn feasible_motions(&self) -> MotionSet {
        self.config.feasible_motions(self.belief.pose)
    }

    /// Changes the occupancy probability used from the next reset on.
    pub fn set_p_occupied(&mut self, p: f64) -> Result<()> {
        let law = ColumnLaw::new(p, self.config.column_exclusion, self.config.geometry.lanes)?;
        self.config.p_occupied = p;
        self.sampler = OccupancySampler::new(law, self.config.seed);
        Ok(())
    }

    pub fn step(&mut self, action: JointAction) -> Result<StepOutcome> {
        let sampler = &mut self.sampler;
        let rng = &mut self.rng;
        apply_step(
            &self.config,
            &mut self.window,
            &mut self.belief,
            action,
            || sampler.sample_column(),
            || rng.random_range(0..2),
        )
    }

    /// Steps and renders the transition as a [`StepRecord`].
    pub fn step_recorded(&mut self, action: JointAction) -> Result<(StepOutcome, StepRecord)> {
        let state_key = self.codec.render(self.state_key())?;
        let outcome = self.step(action)?;
        let record = StepRecord {
            state_key,
            action: action.to_string(),
            cost: outcome.cost,
            next_state_key: self.codec.render(self.state_key())?,
            d: outcome.d,
            collided: outcome.collided,
        };
        Ok((outcome, record))
    }
}
