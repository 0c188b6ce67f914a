//! Tabular Q-learning with uniform exploration, and greedy policy extraction.

use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::motion::MotionSet;
use crate::perception::{ActionSpace, ScenarioId, StateKey};
use crate::rng;

/// Provenance carried alongside a table and written into its file header.
#[derive(Debug, Clone, PartialEq)]
pub struct QMeta {
    pub scenario: ScenarioId,
    pub geometry_hash: String,
    pub alpha: f64,
    pub gamma_step: f64,
    pub episodes: u64,
    pub steps_per_episode: u64,
    pub seed: u64,
}

/// Sparse Q-factors. Rows are created on first write; any pair never
/// written reads as 0.
#[derive(Debug, Clone)]
pub struct QTable {
    pub meta: QMeta,
    slots: usize,
    rows: FxHashMap<StateKey, usize>,
    keys: Vec<StateKey>,
    values: Vec<f64>,
    visits: Vec<u32>,
    present: Vec<u64>,
}

impl QTable {
    pub fn new(meta: QMeta, slots: usize) -> Self {
        assert!(slots > 0 && slots <= 64, "action rows hold 1..=64 slots");
        Self {
            meta,
            slots,
            rows: FxHashMap::default(),
            keys: Vec::new(),
            values: Vec::new(),
            visits: Vec::new(),
            present: Vec::new(),
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Number of stored (state, action) entries.
    pub fn len(&self) -> usize {
        self.present.iter().map(|m| m.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.present.iter().all(|&m| m == 0)
    }

    pub fn state_count(&self) -> usize {
        self.keys.len()
    }

    pub fn contains_state(&self, state: StateKey) -> bool {
        self.rows.contains_key(&state)
    }

    fn row(&self, state: StateKey) -> Option<usize> {
        self.rows.get(&state).copied()
    }

    fn row_or_insert(&mut self, state: StateKey) -> usize {
        if let Some(&r) = self.rows.get(&state) {
            return r;
        }
        let r = self.keys.len();
        self.rows.insert(state, r);
        self.keys.push(state);
        self.values.resize(self.values.len() + self.slots, 0.0);
        self.visits.resize(self.visits.len() + self.slots, 0);
        self.present.push(0);
        r
    }

    /// Q(state, slot), 0 when absent.
    pub fn get(&self, state: StateKey, slot: usize) -> f64 {
        self.row(state).map_or(0.0, |r| self.values[r * self.slots + slot])
    }

    /// The stored value, or `None` when the pair was never written.
    pub fn entry(&self, state: StateKey, slot: usize) -> Option<f64> {
        let r = self.row(state)?;
        (self.present[r] >> slot & 1 == 1).then(|| self.values[r * self.slots + slot])
    }

    pub fn visits(&self, state: StateKey, slot: usize) -> u32 {
        self.row(state).map_or(0, |r| self.visits[r * self.slots + slot])
    }

    pub fn set(&mut self, state: StateKey, slot: usize, value: f64) {
        assert!(slot < self.slots);
        let r = self.row_or_insert(state);
        self.values[r * self.slots + slot] = value;
        self.present[r] |= 1 << slot;
    }

    pub fn set_visits(&mut self, state: StateKey, slot: usize, visits: u32) {
        assert!(slot < self.slots);
        let r = self.row_or_insert(state);
        self.visits[r * self.slots + slot] = visits;
    }

    /// Minimum of Q(state, ·) over `slots`; `None` if `slots` is empty.
    pub fn min_over(&self, state: StateKey, slots: impl IntoIterator<Item = usize>) -> Option<f64> {
        let row = self.row(state);
        slots
            .into_iter()
            .map(|s| row.map_or(0.0, |r| self.values[r * self.slots + s]))
            .reduce(f64::min)
    }

    /// Stored entries as (state, slot, value, visits), sorted by state then slot.
    pub fn entries(&self) -> Vec<(StateKey, usize, f64, u32)> {
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.sort_unstable_by_key(|&r| self.keys[r]);
        let mut out = Vec::with_capacity(self.len());
        for r in order {
            for s in 0..self.slots {
                if self.present[r] >> s & 1 == 1 {
                    let i = r * self.slots + s;
                    out.push((self.keys[r], s, self.values[i], self.visits[i]));
                }
            }
        }
        out
    }

    /// Largest stored |Q|.
    pub fn max_abs(&self) -> f64 {
        self.entries().iter().map(|e| e.2.abs()).fold(0.0, f64::max)
    }
}

impl PartialEq for QTable {
    /// Same metadata and the same stored entries, bit for bit.
    fn eq(&self, other: &Self) -> bool {
        let bits = |t: &QTable| t.entries().into_iter().map(|(k, s, v, n)| (k, s, v.to_bits(), n)).collect::<Vec<_>>();
        self.meta == other.meta && self.slots == other.slots && bits(self) == bits(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    /// Discount factor.
    pub alpha: f64,
    /// Constant step size.
    pub gamma_step: f64,
    pub num_episodes: u64,
    pub steps_per_episode: u64,
    /// Densities drawn uniformly, one per episode.
    pub p_train: Vec<f64>,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.91,
            gamma_step: 0.01,
            num_episodes: 1_000_000,
            steps_per_episode: 200,
            p_train: (0..=8).map(|i| i as f64 / 10.0).collect(),
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if !(self.gamma_step > 0.0 && self.gamma_step <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma_step must be in (0,1], got {}", self.gamma_step)));
        }
        if self.p_train.is_empty() || self.p_train.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::InvalidConfig("p_train must be a nonempty set of values in [0,1)".into()));
        }
        Ok(())
    }
}

/// cost + alpha * min over `feasible_next` of Q(next, ·).
pub fn q_target(cost: f64, next: StateKey, table: &QTable, feasible_next: impl IntoIterator<Item = usize>, alpha: f64) -> Result<f64> {
    let min = table
        .min_over(next, feasible_next)
        .ok_or_else(|| Error::Infeasible("empty feasible set for the next state".into()))?;
    Ok(cost + alpha * min)
}

/// Moves Q(state, slot) a `gamma` fraction towards `target`; returns the new value.
pub fn q_update(table: &mut QTable, state: StateKey, slot: usize, target: f64, gamma: f64) -> f64 {
    let r = table.row_or_insert(state);
    let i = r * table.slots + slot;
    let new = (1.0 - gamma) * table.values[i] + gamma * target;
    table.values[i] = new;
    table.visits[i] = table.visits[i].saturating_add(1);
    table.present[r] |= 1 << slot;
    new
}

/// Feasible slot with the smallest Q; ties go to the earliest slot.
pub fn greedy_action(table: &QTable, state: StateKey, feasible: impl IntoIterator<Item = usize>) -> Result<usize> {
    let row = table.row(state);
    let mut best: Option<(usize, f64)> = None;
    for s in feasible {
        let q = row.map_or(0.0, |r| table.values[r * table.slots + s]);
        if best.is_none_or(|(_, b)| q < b) {
            best = Some((s, q));
        }
    }
    best.map(|(s, _)| s).ok_or_else(|| Error::Infeasible("empty feasible action set".into()))
}

/// Greedy slot given the ego's feasible motions.
pub fn greedy_slot(table: &QTable, space: &ActionSpace, state: StateKey, motions: MotionSet) -> Result<usize> {
    greedy_action(table, state, space.feasible_slots(motions))
}

/// Periodic training diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub episodes_done: u64,
    pub entries: usize,
    /// Largest single-update |ΔQ| since the previous report.
    pub max_delta: f64,
}

/// Runs uniform-exploration Q-learning from an empty table.
///
/// Episode `i` uses seed `derive_seed(config.seed, i)` for its road, its
/// environment draws and its exploration, so any episode can be replayed on
/// its own. `progress` is called every `report_every` episodes (0 disables it).
pub fn train(
    config: &LearnerConfig,
    env_config: &EnvConfig,
    report_every: u64,
    progress: impl FnMut(&Progress),
) -> Result<QTable> {
    let meta = QMeta {
        scenario: env_config.scenario.id,
        geometry_hash: env_config.geometry_hash(),
        alpha: config.alpha,
        gamma_step: config.gamma_step,
        episodes: 0,
        steps_per_episode: config.steps_per_episode,
        seed: config.seed,
    };
    let mut table = QTable::new(meta, env_config.action_space().slots());
    train_into(&mut table, config, env_config, report_every, progress)?;
    Ok(table)
}

/// Continues training `table` for `config.num_episodes` more episodes,
/// numbering them after the ones already recorded in its metadata.
pub fn train_into(
    table: &mut QTable,
    config: &LearnerConfig,
    env_config: &EnvConfig,
    report_every: u64,
    mut progress: impl FnMut(&Progress),
) -> Result<()> {
    config.validate()?;
    let space = env_config.action_space();
    if space.slots() != table.slots {
        return Err(Error::MetadataMismatch("table and scenario disagree on the action count".into()));
    }
    let queries = space.query_count();
    let mut env = Env::new(env_config.clone())?;
    let (alpha, gamma) = (config.alpha, config.gamma_step);
    let mut window_delta = 0.0f64;
    let first = table.meta.episodes;
    for episode in first..first + config.num_episodes {
        let seed = rng::derive_seed(config.seed, episode);
        let mut explore = rng::stream(seed, rng::EXPLORE_STREAM);
        let p = config.p_train[explore.random_range(0..config.p_train.len())];
        env.set_p_occupied(p)?;
        env.reset(seed);
        let mut state = env.state_key();
        for _ in 0..config.steps_per_episode {
            let motions = env.feasible_motions();
            let m = motions.nth(explore.random_range(0..motions.len())).expect("some motion is always feasible");
            let q = explore.random_range(0..queries);
            let slot = m.index() * queries + q;
            let outcome = env.step(space.action(slot))?;
            let next = env.state_key();
            let target = q_target(outcome.cost, next, table, space.feasible_slots(env.feasible_motions()), alpha)?;
            let old = table.get(state, slot);
            let new = q_update(table, state, slot, target, gamma);
            window_delta = window_delta.max((new - old).abs());
            state = next;
        }
        table.meta.episodes = episode + 1;
        if report_every > 0 && (episode + 1 - first).is_multiple_of(report_every) {
            progress(&Progress { episodes_done: episode + 1, entries: table.len(), max_delta: window_delta });
            window_delta = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardSpec;
    use crate::perception::{JointAction, QueryAction};
    use proptest::prelude::*;
    use rand::Rng;

    fn meta() -> QMeta {
        QMeta {
            scenario: ScenarioId::C2,
            geometry_hash: "x".into(),
            alpha: 0.91,
            gamma_step: 0.01,
            episodes: 0,
            steps_per_episode: 200,
            seed: 0,
        }
    }

    #[test]
    fn target_examples() {
        let mut t = QTable::new(meta(), 12);
        let s = StateKey(3);
        assert_eq!(q_target(-1.0, s, &t, [0, 1, 2], 0.91).unwrap(), -1.0);
        assert_eq!(q_target(1000.0, s, &t, [0], 0.91).unwrap(), 1000.0);
        t.set(s, 1, -10.0);
        t.set(s, 2, -4.0);
        assert!((q_target(-2.2, s, &t, [0, 1, 2], 0.91).unwrap() - -11.3).abs() < 1e-12);
        assert!(q_target(0.0, s, &t, [], 0.91).is_err());
    }

    #[test]
    fn update_examples() {
        let mut t = QTable::new(meta(), 12);
        let s = StateKey(9);
        assert!((q_update(&mut t, s, 0, -1.0, 0.01) - -0.01).abs() < 1e-15);
        t.set(s, 1, -5.0);
        assert!((q_update(&mut t, s, 1, -11.3, 0.01) - -5.063).abs() < 1e-12);
        assert_eq!(q_update(&mut t, s, 2, -7.25, 1.0), -7.25);
        assert_eq!(t.visits(s, 0), 1);
        assert_eq!(t.entry(s, 3), None);
        assert_eq!(t.get(StateKey(10), 3), 0.0);
    }

    #[test]
    fn greedy_examples() {
        let mut t = QTable::new(meta(), 12);
        let s = StateKey(1);
        assert_eq!(greedy_action(&t, s, [4, 2, 7]).unwrap(), 4);
        assert_eq!(greedy_action(&t, s, 0..12).unwrap(), 0);
        t.set(s, 0, -3.0);
        t.set(s, 1, -7.0);
        t.set(s, 2, 0.0);
        assert_eq!(greedy_action(&t, s, 0..3).unwrap(), 1);
        assert!(greedy_action(&t, s, []).is_err());
    }

    proptest! {
        #[test]
        fn update_touches_one_entry(values in proptest::collection::vec(-100.0f64..100.0, 12), slot in 0usize..12, target in -1000.0f64..1000.0) {
            let mut t = QTable::new(meta(), 12);
            let s = StateKey(5);
            for (i, v) in values.iter().enumerate() {
                t.set(s, i, *v);
                t.set(StateKey(6), i, *v);
            }
            let before = t.entries();
            q_update(&mut t, s, slot, target, 0.01);
            let after = t.entries();
            let changed: Vec<_> = before.iter().zip(&after).filter(|(a, b)| a.2 != b.2).collect();
            prop_assert!(changed.len() <= 1);
            for (a, _) in changed {
                prop_assert_eq!((a.0, a.1), (s, slot));
            }
        }

        #[test]
        fn greedy_is_shift_invariant(values in proptest::collection::vec(-50i32..50, 12), shift in -1000i32..1000) {
            let mut a = QTable::new(meta(), 12);
            let mut b = QTable::new(meta(), 12);
            let s = StateKey(0);
            for (i, v) in values.iter().enumerate() {
                a.set(s, i, *v as f64);
                b.set(s, i, (*v + shift) as f64);
            }
            prop_assert_eq!(greedy_action(&a, s, 0..12).unwrap(), greedy_action(&b, s, 0..12).unwrap());
        }
    }

    fn small_env() -> EnvConfig {
        EnvConfig { seed: 3, ..EnvConfig::standard(ScenarioId::C2) }
    }

    #[test]
    fn zero_episodes_gives_empty_table() {
        let cfg = LearnerConfig { num_episodes: 0, ..Default::default() };
        let t = train(&cfg, &small_env(), 0, |_| {}).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.meta.episodes, 0);
    }

    #[test]
    fn one_step_replays_by_hand() {
        let cfg = LearnerConfig { num_episodes: 1, steps_per_episode: 1, seed: 11, ..Default::default() };
        let env_cfg = small_env();
        let t = train(&cfg, &env_cfg, 0, |_| {}).unwrap();
        assert_eq!(t.len(), 1);

        // Replay the same draws outside the learner.
        let seed = rng::derive_seed(11, 0);
        let mut explore = rng::stream(seed, rng::EXPLORE_STREAM);
        let p = cfg.p_train[explore.random_range(0..cfg.p_train.len())];
        let mut env = Env::new(EnvConfig { p_occupied: p, ..env_cfg.clone() }).unwrap();
        env.reset(seed);
        let s = env.state_key();
        let motions = env.feasible_motions();
        let m = motions.nth(explore.random_range(0..motions.len())).unwrap();
        let q = explore.random_range(0..3);
        let query = if q == 2 { QueryAction::NoQuery } else { QueryAction::Group(q) };
        let out = env.step(JointAction::new(m, query)).unwrap();
        let slot = env_cfg.action_space().slot(JointAction::new(m, query));
        assert_eq!(t.entry(s, slot), Some(0.01 * out.cost));
    }

    #[test]
    fn training_is_deterministic_and_bounded() {
        let cfg = LearnerConfig { num_episodes: 300, steps_per_episode: 50, seed: 5, ..Default::default() };
        let mut reports = Vec::new();
        let a = train(&cfg, &small_env(), 100, |p| reports.push(*p)).unwrap();
        let b = train(&cfg, &small_env(), 0, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[2].episodes_done, 300);
        let bound = RewardSpec::default().max_abs_cost(2) / (1.0 - cfg.alpha) + 1.0;
        assert!(a.max_abs() <= bound);
    }

    #[test]
    fn resumed_training_matches_one_run() {
        let env = small_env();
        let full = LearnerConfig { num_episodes: 40, steps_per_episode: 30, seed: 8, ..Default::default() };
        let half = LearnerConfig { num_episodes: 20, ..full.clone() };
        let one = train(&full, &env, 0, |_| {}).unwrap();
        let mut two = train(&half, &env, 0, |_| {}).unwrap();
        train_into(&mut two, &half, &env, 0, |_| {}).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn invalid_learner_configs() {
        for bad in [
            LearnerConfig { alpha: 1.0, ..Default::default() },
            LearnerConfig { gamma_step: 0.0, ..Default::default() },
            LearnerConfig { p_train: vec![], ..Default::default() },
            LearnerConfig { p_train: vec![1.0], ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
