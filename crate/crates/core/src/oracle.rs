//! Exact MDP construction and value iteration for small configurations.
//!
//! Hidden extended cells are marginalised under the occupancy law given the
//! known cells of their column, frontier columns are drawn from the same law,
//! and random-half reveals split evenly. The belief state is an exact Markov
//! state as long as a collision never reveals anything the belief does not
//! record, which holds whenever every cell the ego can drive into lies in the
//! local view (`v_max < local_cols - rear_cols`).

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::env::{apply_initial_reveal, apply_step, EnvConfig};
use crate::error::{Error, Result};
use crate::grid::{Cell, ColumnPattern, GridWindow};
use crate::learner::{QMeta, QTable};
use crate::motion::{self, EgoPose};
use crate::perception::{AutoReveal, BeliefState, JointAction, StateKey};

/// Default limit on enumerated states.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// One possible result of a (state, action) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: StateKey,
    pub cost: f64,
    pub prob: f64,
}

/// Every combination of one choice per position, with the product probability.
fn product(choices: &[Vec<(ColumnPattern, f64)>]) -> Vec<(Vec<ColumnPattern>, f64)> {
    let mut out = vec![(Vec::with_capacity(choices.len()), 1.0)];
    for options in choices {
        out = out
            .into_iter()
            .flat_map(|(prefix, p)| {
                options.iter().map(move |&(pat, q)| {
                    let mut v = prefix.clone();
                    v.push(pat);
                    (v, p * q)
                })
            })
            .collect();
    }
    out
}

fn half_choices(cfg: &EnvConfig) -> &'static [(usize, f64)] {
    if cfg.scenario.auto_reveal == AutoReveal::RandomHalf {
        &[(0, 0.5), (1, 0.5)]
    } else {
        &[(0, 1.0)]
    }
}

/// Exact next-state distribution of `action` in `state`. Outcomes with the
/// same next state and cost are merged; the result is sorted by next state.
pub fn transition_model(cfg: &EnvConfig, state: StateKey, action: JointAction) -> Result<Vec<Outcome>> {
    let codec = cfg.codec()?;
    let belief = codec.decode(state)?;
    let law = cfg.column_law()?;
    let g = cfg.geometry;
    if !cfg.feasible_motions(belief.pose).contains(action.motion) {
        return Err(Error::Infeasible(format!("{} at {}", action, codec.render(state)?)));
    }

    let mut base = GridWindow::empty(g);
    for lane in 0..g.lanes {
        for off in g.min_offset()..g.first_ext_offset() {
            base.set(lane, off, belief.local_cell(lane, off));
        }
    }
    let hidden: Vec<Vec<(ColumnPattern, f64)>> = (0..g.ext_cols)
        .map(|c| {
            let (known, occ) = belief.ext_column(c);
            law.conditional(known, occ)
        })
        .collect();
    if hidden.iter().any(Vec::is_empty) {
        return Err(Error::Inconsistent(format!("{} is impossible under the occupancy law", codec.render(state)?)));
    }

    let support = law.support();
    let mut merged: BTreeMap<(StateKey, u64), f64> = BTreeMap::new();
    for (ext, p_ext) in product(&hidden) {
        let mut window = base.clone();
        for (c, &pat) in ext.iter().enumerate() {
            window.set_column(g.local_cols + c, pat);
        }
        let d = motion::resolve_motion(&window, belief.pose, action.motion, cfg.v_max, cfg.lane_change)?.d as usize;
        for (fresh, p_fresh) in product(&vec![support.clone(); d]) {
            for &(half, p_half) in half_choices(cfg) {
                let mut w = window.clone();
                let mut b = belief.clone();
                let mut cols = fresh.iter().copied();
                let out = apply_step(cfg, &mut w, &mut b, action, || cols.next().expect("one column per cell moved"), || half)?;
                let next = codec.encode(&b)?;
                *merged.entry((next, out.cost.to_bits())).or_insert(0.0) += p_ext * p_fresh * p_half;
            }
        }
    }
    Ok(merged
        .into_iter()
        .map(|((next, cost), prob)| Outcome { next, cost: f64::from_bits(cost), prob })
        .collect())
}

/// Distribution of the state right after reset, sorted by state.
pub fn initial_distribution(cfg: &EnvConfig) -> Result<Vec<(StateKey, f64)>> {
    let codec = cfg.codec()?;
    let law = cfg.column_law()?;
    let g = cfg.geometry;
    let support = law.support();
    let local = product(&vec![support.clone(); g.local_cols]);
    let ext = if cfg.scenario.auto_reveal == AutoReveal::None {
        vec![(Vec::new(), 1.0)]
    } else {
        product(&vec![support; g.ext_cols])
    };
    let mut merged: BTreeMap<StateKey, f64> = BTreeMap::new();
    for lane in 0..g.lanes {
        let p_lane = 1.0 / g.lanes as f64;
        for (lcols, p_local) in &local {
            for (ecols, p_e) in &ext {
                let mut w = GridWindow::empty(g);
                for (c, &pat) in lcols.iter().chain(ecols).enumerate() {
                    w.set_column(c, pat);
                }
                w.set(lane, 0, Cell::Free);
                for &(half, p_half) in half_choices(cfg) {
                    let mut b = BeliefState::new(g, EgoPose { velocity: 0, lane });
                    b.read_local(&w);
                    apply_initial_reveal(cfg, &w, &mut b, || half);
                    *merged.entry(codec.encode(&b)?).or_insert(0.0) += p_lane * p_local * p_e * p_half;
                }
            }
        }
    }
    Ok(merged.into_iter().collect())
}

/// All states reachable from reset, in breadth-first order. Refuses once more
/// than `cap` states have been found.
pub fn enumerate_states(cfg: &EnvConfig, cap: usize) -> Result<Vec<StateKey>> {
    Ok(explore(cfg, cap)?.0)
}

type Rows = Vec<Vec<(usize, Vec<Outcome>)>>;

fn explore(cfg: &EnvConfig, cap: usize) -> Result<(Vec<StateKey>, Rows)> {
    cfg.validate()?;
    let codec = cfg.codec()?;
    let space = cfg.action_space();
    let refuse = || Error::StateCapExceeded { estimate: codec.cardinality(), cap };
    let mut index: HashMap<StateKey, usize> = HashMap::new();
    let mut states = Vec::new();
    let mut queue = VecDeque::new();
    for (s, _) in initial_distribution(cfg)? {
        if index.insert(s, states.len()).is_none() {
            states.push(s);
            queue.push_back(s);
        }
    }
    if states.len() > cap {
        return Err(refuse());
    }
    let mut rows = Vec::new();
    while let Some(s) = queue.pop_front() {
        let pose = codec.decode(s)?.pose;
        let mut row = Vec::new();
        for slot in space.feasible_slots(cfg.feasible_motions(pose)) {
            let outcomes = transition_model(cfg, s, space.action(slot))?;
            for o in &outcomes {
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(o.next) {
                    e.insert(states.len());
                    states.push(o.next);
                    queue.push_back(o.next);
                    if states.len() > cap {
                        return Err(refuse());
                    }
                }
            }
            row.push((slot, outcomes));
        }
        rows.push(row);
    }
    Ok((states, rows))
}

/// (next state index, cost, probability)
type Transition = (usize, f64, f64);

/// A finite MDP with explicit transition distributions.
/// Each state holds (action slot, transitions) pairs.
#[derive(Debug, Clone)]
pub struct EnumeratedMdp {
    states: Vec<StateKey>,
    slots: usize,
    alpha: f64,
    rows: Vec<Vec<(usize, Vec<Transition>)>>,
}

impl EnumeratedMdp {
    /// Builds an MDP from explicit parts. `rows[i]` lists the feasible action
    /// slots of `states[i]` with their outcome distributions over state keys.
    pub fn from_parts(states: Vec<StateKey>, slots: usize, alpha: f64, rows: Vec<Vec<(usize, Vec<Outcome>)>>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0,1), got {alpha}")));
        }
        if rows.len() != states.len() {
            return Err(Error::Inconsistent("one action list per state is required".into()));
        }
        let index: HashMap<StateKey, usize> = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        if index.len() != states.len() {
            return Err(Error::Inconsistent("duplicate state".into()));
        }
        let mut built = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.is_empty() {
                return Err(Error::Inconsistent(format!("state {} has no feasible action", states[i].0)));
            }
            let mut out = Vec::with_capacity(row.len());
            for (slot, outcomes) in row {
                if slot >= slots {
                    return Err(Error::Inconsistent(format!("action slot {slot} out of range")));
                }
                let total: f64 = outcomes.iter().map(|o| o.prob).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Inconsistent(format!("probabilities of state {} slot {slot} sum to {total}", states[i].0)));
                }
                let mut targets = Vec::with_capacity(outcomes.len());
                for o in outcomes {
                    let j = *index
                        .get(&o.next)
                        .ok_or_else(|| Error::Inconsistent(format!("transition to unknown state {}", o.next.0)))?;
                    targets.push((j, o.cost, o.prob));
                }
                out.push((slot, targets));
            }
            built.push(out);
        }
        Ok(Self { states, slots, alpha, rows: built })
    }

    /// Enumerates the reachable states of `cfg` and their transitions.
    pub fn build(cfg: &EnvConfig, alpha: f64, cap: usize) -> Result<Self> {
        let (states, rows) = explore(cfg, cap)?;
        Self::from_parts(states, cfg.action_space().slots(), alpha, rows)
    }

    pub fn states(&self) -> &[StateKey] {
        &self.states
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Number of (state, feasible action) pairs.
    pub fn pair_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Feasible slots of state `i`.
    pub fn actions(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[i].iter().map(|(slot, _)| *slot)
    }

    /// Outcomes of state `i`, slot `slot`, as (next state index, cost, probability).
    pub fn outcomes(&self, i: usize, slot: usize) -> Option<&[(usize, f64, f64)]> {
        self.rows[i].iter().find(|(s, _)| *s == slot).map(|(_, o)| o.as_slice())
    }

    fn backup(&self, q: &[Vec<f64>], out: &mut [Vec<f64>]) -> f64 {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect();
        let mut delta = 0.0f64;
        for (i, row) in self.rows.iter().enumerate() {
            for (k, (_, outcomes)) in row.iter().enumerate() {
                let new: f64 = outcomes.iter().map(|&(j, g, p)| p * (g + self.alpha * v[j])).sum();
                delta = delta.max((new - q[i][k]).abs());
                out[i][k] = new;
            }
        }
        delta
    }
}

/// Result of [`value_iteration`]: Q* per state, aligned with the MDP's actions.
#[derive(Debug, Clone)]
pub struct QStar {
    pub values: Vec<Vec<f64>>,
    pub sweeps: usize,
    /// Largest change in the final sweep.
    pub last_delta: f64,
}

impl QStar {
    /// Q*(state i, slot), if the slot is feasible there.
    pub fn get(&self, mdp: &EnumeratedMdp, i: usize, slot: usize) -> Option<f64> {
        mdp.actions(i).position(|s| s == slot).map(|k| self.values[i][k])
    }

    /// Largest |Q - TQ| over all pairs.
    pub fn bellman_residual(&self, mdp: &EnumeratedMdp) -> f64 {
        let mut next = self.values.clone();
        mdp.backup(&self.values, &mut next)
    }

    pub fn to_table(&self, mdp: &EnumeratedMdp, meta: QMeta) -> QTable {
        let mut t = QTable::new(meta, mdp.slots);
        for (i, &s) in mdp.states.iter().enumerate() {
            for (k, slot) in mdp.actions(i).enumerate() {
                t.set(s, slot, self.values[i][k]);
            }
        }
        t
    }
}

/// Synchronous value iteration from Q = 0. Stops once the last sweep moved
/// no value by more than `tol (1 - alpha) / alpha`, which bounds the distance
/// to Q* by `tol` (and the Bellman residual by less than that).
pub fn value_iteration(mdp: &EnumeratedMdp, tol: f64) -> Result<QStar> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!("tol must be positive, got {tol}")));
    }
    let threshold = tol * (1.0 - mdp.alpha) / mdp.alpha;
    let mut q: Vec<Vec<f64>> = mdp.rows.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut next = q.clone();
    let mut sweeps = 0;
    loop {
        let delta = mdp.backup(&q, &mut next);
        std::mem::swap(&mut q, &mut next);
        sweeps += 1;
        if delta < threshold {
            return Ok(QStar { values: q, sweeps, last_delta: delta });
        }
    }
}

/// Outcome of [`compare`].
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// L∞ distance over pairs visited at least `n_min` times.
    pub max_abs_diff: f64,
    pub compared: usize,
    /// Pairs of the reference visited fewer than `n_min` times.
    pub rare: usize,
    /// L∞ distance over those rare pairs.
    pub rare_max_abs_diff: f64,
    /// Pair attaining `max_abs_diff`.
    pub worst: Option<(StateKey, usize)>,
}

/// Compares a learned table with a reference over the reference's pairs.
/// Absent learned entries read as 0 and pairs are filtered by the learned
/// table's visit counts.
pub fn compare(learned: &QTable, reference: &QTable, n_min: u32) -> Result<Comparison> {
    if learned.meta.scenario != reference.meta.scenario || learned.meta.geometry_hash != reference.meta.geometry_hash {
        return Err(Error::MetadataMismatch(format!(
            "learned table is {} / {}, reference is {} / {}",
            learned.meta.scenario, learned.meta.geometry_hash, reference.meta.scenario, reference.meta.geometry_hash
        )));
    }
    if learned.slots() != reference.slots() {
        return Err(Error::MetadataMismatch("tables disagree on the action count".into()));
    }
    let mut c = Comparison { max_abs_diff: 0.0, compared: 0, rare: 0, rare_max_abs_diff: 0.0, worst: None };
    for (state, slot, value, _) in reference.entries() {
        let diff = (learned.get(state, slot) - value).abs();
        if learned.visits(state, slot) >= n_min {
            c.compared += 1;
            if diff > c.max_abs_diff || c.worst.is_none() {
                c.max_abs_diff = c.max_abs_diff.max(diff);
                c.worst = Some((state, slot));
            }
        } else {
            c.rare += 1;
            c.rare_max_abs_diff = c.rare_max_abs_diff.max(diff);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use crate::motion::MotionAction;
    use crate::perception::{QueryAction, ScenarioId, ScenarioSpec};

    fn meta(cfg: &EnvConfig) -> QMeta {
        QMeta {
            scenario: cfg.scenario.id,
            geometry_hash: cfg.geometry_hash(),
            alpha: 0.91,
            gamma_step: 0.01,
            episodes: 0,
            steps_per_episode: 0,
            seed: 0,
        }
    }

    /// One lane, ego plus one cell ahead, two extended columns queried one at a time.
    fn reduced(p: f64) -> EnvConfig {
        let geometry = GridGeometry { lanes: 1, local_cols: 2, rear_cols: 0, ext_cols: 2 };
        EnvConfig {
            geometry,
            scenario: ScenarioSpec::standard(ScenarioId::C1, geometry),
            p_occupied: p,
            column_exclusion: false,
            v_max: 1,
            ..EnvConfig::standard(ScenarioId::C1)
        }
    }

    fn toy() -> EnumeratedMdp {
        let s = StateKey(0);
        EnumeratedMdp::from_parts(vec![s], 1, 0.91, vec![vec![(0, vec![Outcome { next: s, cost: -1.2, prob: 1.0 }])]]).unwrap()
    }

    #[test]
    fn single_state_closed_form() {
        let q = value_iteration(&toy(), 1e-9).unwrap();
        assert!((q.values[0][0] - -1.2 / 0.09).abs() < 1e-6);
        assert!(q.bellman_residual(&toy()) < 1e-9);
    }

    #[test]
    fn tolerances_agree() {
        let mdp = EnumeratedMdp::build(&reduced(0.3), 0.91, DEFAULT_STATE_CAP).unwrap();
        let a = value_iteration(&mdp, 1e-9).unwrap();
        let b = value_iteration(&mdp, 1e-6).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        assert!(a.bellman_residual(&mdp) < 1e-9);
    }

    #[test]
    fn local_only_hand_count() {
        let geometry = GridGeometry { lanes: 1, local_cols: 2, rear_cols: 0, ext_cols: 0 };
        let cfg = EnvConfig {
            geometry,
            scenario: ScenarioSpec::standard(ScenarioId::LV, geometry),
            p_occupied: 0.3,
            v_max: 1,
            ..EnvConfig::standard(ScenarioId::LV)
        };
        assert_eq!(enumerate_states(&cfg, 100).unwrap().len(), 4);
        let empty = EnvConfig { p_occupied: 0.0, ..cfg };
        assert_eq!(enumerate_states(&empty, 100).unwrap().len(), 2);
    }

    #[test]
    fn empty_road_only_reaches_free_states() {
        let cfg = reduced(0.0);
        let codec = cfg.codec().unwrap();
        for s in enumerate_states(&cfg, 1000).unwrap() {
            let rendered = codec.render(s).unwrap();
            assert!(!rendered.contains('O'), "{rendered}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let err = enumerate_states(&EnvConfig { p_occupied: 0.3, ..EnvConfig::standard(ScenarioId::C1) }, 1000).unwrap_err();
        assert!(matches!(err, Error::StateCapExceeded { cap: 1000, .. }));
    }

    #[test]
    fn transition_examples() {
        let cfg = reduced(0.3);
        let codec = cfg.codec().unwrap();
        let rest = codec.parse("0|0|F|UU").unwrap();
        let stay = transition_model(&cfg, rest, JointAction::new(MotionAction::Accelerate, QueryAction::NoQuery)).unwrap();
        assert_eq!(stay.len(), 1);
        assert!((stay[0].prob - 1.0).abs() < 1e-12);
        assert_eq!(codec.render(stay[0].next).unwrap(), "1|0|F|UU");

        let moving = codec.parse("1|0|F|UU").unwrap();
        let out = transition_model(&cfg, moving, JointAction::new(MotionAction::DoNothing, QueryAction::NoQuery)).unwrap();
        assert_eq!(out.len(), 2);
        let probs: Vec<(String, f64)> = out.iter().map(|o| (codec.render(o.next).unwrap(), o.prob)).collect();
        assert!(probs.iter().any(|(k, p)| k == "1|0|F|UU" && (p - 0.7).abs() < 1e-12));
        assert!(probs.iter().any(|(k, p)| k == "1|0|O|UU" && (p - 0.3).abs() < 1e-12));
        assert!(out.iter().all(|o| (o.cost - -1.2).abs() < 1e-12));

        assert!(transition_model(&cfg, rest, JointAction::new(MotionAction::Decelerate, QueryAction::NoQuery)).is_err());
    }

    #[test]
    fn probabilities_sum_to_one_everywhere() {
        for cfg in [reduced(0.3), EnvConfig { p_occupied: 0.4, ..reduced(0.3) }] {
            let mdp = EnumeratedMdp::build(&cfg, 0.91, DEFAULT_STATE_CAP).unwrap();
            for i in 0..mdp.states().len() {
                for slot in mdp.actions(i).collect::<Vec<_>>() {
                    let total: f64 = mdp.outcomes(i, slot).unwrap().iter().map(|o| o.2).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn enumeration_order_does_not_matter() {
        let cfg = reduced(0.3);
        let (states, rows) = explore(&cfg, DEFAULT_STATE_CAP).unwrap();
        let slots = cfg.action_space().slots();
        let a = EnumeratedMdp::from_parts(states.clone(), slots, 0.91, rows.clone()).unwrap();
        let mut paired: Vec<_> = states.into_iter().zip(rows).collect();
        paired.reverse();
        let (rs, rr): (Vec<_>, Vec<_>) = paired.into_iter().unzip();
        let b = EnumeratedMdp::from_parts(rs, slots, 0.91, rr).unwrap();
        let qa = value_iteration(&a, 1e-9).unwrap().to_table(&a, meta(&cfg));
        let qb = value_iteration(&b, 1e-9).unwrap().to_table(&b, meta(&cfg));
        assert!(compare(&qa, &qb, 0).unwrap().max_abs_diff < 1e-9);
    }

    #[test]
    fn empty_road_policy_keeps_moving() {
        let cfg = reduced(0.0);
        let mdp = EnumeratedMdp::build(&cfg, 0.91, DEFAULT_STATE_CAP).unwrap();
        let q = value_iteration(&mdp, 1e-9).unwrap();
        let space = cfg.action_space();
        let codec = cfg.codec().unwrap();
        let table = q.to_table(&mdp, meta(&cfg));
        for &s in mdp.states() {
            let b = codec.decode(s).unwrap();
            let best = crate::learner::greedy_slot(&table, &space, s, cfg.feasible_motions(b.pose)).unwrap();
            if b.pose.velocity >= 1 {
                assert_ne!(space.action(best).motion, MotionAction::Decelerate);
            }
        }
        let steady = codec.parse("1|0|F|UU").unwrap();
        let slot = space.slot(JointAction::new(MotionAction::DoNothing, QueryAction::NoQuery));
        assert!((table.get(steady, slot) - -1.2 / 0.09).abs() < 1e-6);
    }

    #[test]
    fn compare_examples() {
        let cfg = reduced(0.3);
        let mdp = EnumeratedMdp::build(&cfg, 0.91, DEFAULT_STATE_CAP).unwrap();
        let star = value_iteration(&mdp, 1e-9).unwrap().to_table(&mdp, meta(&cfg));
        let same = compare(&star, &star, 0).unwrap();
        assert_eq!(same.max_abs_diff, 0.0);
        assert_eq!(same.compared, star.len());

        let t = toy();
        let toy_meta = meta(&cfg);
        let toy_star = value_iteration(&t, 1e-9).unwrap().to_table(&t, toy_meta.clone());
        let zero = QTable::new(toy_meta, 1);
        let c = compare(&zero, &toy_star, 0).unwrap();
        assert!((c.max_abs_diff - 13.0 - 1.0 / 3.0).abs() < 1e-6);
        let rare = compare(&zero, &toy_star, 100).unwrap();
        assert_eq!((rare.compared, rare.rare), (0, 1));

        let other = QTable::new(QMeta { scenario: ScenarioId::C2, ..meta(&cfg) }, star.slots());
        assert!(matches!(compare(&other, &star, 0), Err(Error::MetadataMismatch(_))));
    }
}
