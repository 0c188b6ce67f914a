//! Integer kinematics, feasible motion actions and collision resolution.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::grid::GridWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct EgoPose {
    pub velocity: u32,
    pub lane: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MotionAction {
    Accelerate,
    Decelerate,
    DoNothing,
    ChangeLane,
}

impl MotionAction {
    /// Canonical order, also used for tie-breaking.
    pub const ALL: [MotionAction; 4] = [
        MotionAction::Accelerate,
        MotionAction::Decelerate,
        MotionAction::DoNothing,
        MotionAction::ChangeLane,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn acceleration(self) -> i32 {
        match self {
            MotionAction::Accelerate => 1,
            MotionAction::Decelerate => -1,
            MotionAction::DoNothing | MotionAction::ChangeLane => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionAction::Accelerate => "acc",
            MotionAction::Decelerate => "dec",
            MotionAction::DoNothing => "nothing",
            MotionAction::ChangeLane => "lane",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Small bitset over [`MotionAction`], iterated in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MotionSet(u8);

impl MotionSet {
    pub fn contains(self, a: MotionAction) -> bool {
        self.0 >> a.index() & 1 == 1
    }

    pub fn insert(&mut self, a: MotionAction) {
        self.0 |= 1 << a.index();
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = MotionAction> {
        MotionAction::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// The `n`-th member in canonical order.
    pub fn nth(self, n: usize) -> Option<MotionAction> {
        self.iter().nth(n)
    }
}

/// Which cells a lane change has to find free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaneChangeRule {
    /// Step sideways first, then drive forward: target-lane offsets `0..=d`.
    LateralFirst,
    /// Land in the target lane `d` cells ahead, checking target-lane offsets
    /// `1..=d` (offset 0 when `d = 0`). The cells beside the ego are not
    /// swept, so a column with one free cell is always enterable.
    #[default]
    TargetAhead,
}

impl LaneChangeRule {
    pub fn name(self) -> &'static str {
        match self {
            LaneChangeRule::LateralFirst => "lateral-first",
            LaneChangeRule::TargetAhead => "target-ahead",
        }
    }
}

/// Cells moved and next velocity for velocity `v` and acceleration `a`.
///
/// `d = v + floor(a / 2)`: braking costs one cell of travel in the step it
/// happens, accelerating takes effect from the next step.
pub fn kinematics(v: u32, a: i32, v_max: u32) -> Result<(u32, u32)> {
    let next = v as i64 + a as i64;
    if !(-1..=1).contains(&a) || v > v_max || next < 0 || next > v_max as i64 {
        return Err(Error::Infeasible(format!("acceleration {a} at velocity {v} (v_max {v_max})")));
    }
    let d = v as i64 + (a as i64).div_euclid(2);
    Ok((d as u32, next as u32))
}

pub fn feasible_motion_actions(pose: EgoPose, v_max: u32, lanes: usize) -> MotionSet {
    let mut set = MotionSet::default();
    if pose.velocity < v_max {
        set.insert(MotionAction::Accelerate);
    }
    if pose.velocity > 0 {
        set.insert(MotionAction::Decelerate);
    }
    set.insert(MotionAction::DoNothing);
    if lanes >= 2 {
        set.insert(MotionAction::ChangeLane);
    }
    set
}

/// Lane reached by `ChangeLane`: the next lane up, or the one below from the
/// top lane. With two lanes this is always the other lane.
pub fn target_lane(lane: usize, lanes: usize) -> usize {
    if lane + 1 < lanes {
        lane + 1
    } else {
        lane.saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotionOutcome {
    pub d: u32,
    pub new_pose: EgoPose,
    pub collided: bool,
    /// `(lane, offset)` cells that had to be free.
    pub traversed: SmallVec<[(usize, i32); 4]>,
}

/// Resolves a motion action against the ground truth. On collision the ego
/// stops where it is: `d = 0`, velocity 0, same lane.
pub fn resolve_motion(
    window: &GridWindow,
    pose: EgoPose,
    action: MotionAction,
    v_max: u32,
    rule: LaneChangeRule,
) -> Result<MotionOutcome> {
    let lanes = window.geometry().lanes;
    if !feasible_motion_actions(pose, v_max, lanes).contains(action) {
        return Err(Error::Infeasible(format!("{action:?} at velocity {} in lane {}", pose.velocity, pose.lane)));
    }
    let (d, v_next) = kinematics(pose.velocity, action.acceleration(), v_max)?;
    if d as i32 > window.geometry().max_offset() {
        return Err(Error::InvalidConfig(format!("window too short for a move of {d} cells")));
    }
    let mut traversed = SmallVec::new();
    let lane = if action == MotionAction::ChangeLane {
        let target = target_lane(pose.lane, lanes);
        let first = match rule {
            LaneChangeRule::LateralFirst => 0,
            LaneChangeRule::TargetAhead => d.min(1) as i32,
        };
        traversed.extend((first..=d as i32).map(|off| (target, off)));
        target
    } else {
        traversed.extend((1..=d as i32).map(|off| (pose.lane, off)));
        pose.lane
    };
    let collided = traversed.iter().any(|&(l, off)| window.get(l, off).is_occupied());
    Ok(if collided {
        MotionOutcome { d: 0, new_pose: EgoPose { velocity: 0, lane: pose.lane }, collided, traversed }
    } else {
        MotionOutcome { d, new_pose: EgoPose { velocity: v_next, lane }, collided, traversed }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, GridGeometry};

    #[test]
    fn kinematics_table() {
        // All seven feasible pairs at v_max = 2, checked against floor(v + a/2).
        let mut n = 0;
        for v in 0..=2u32 {
            for a in -1..=1i32 {
                let next = v as i32 + a;
                if !(0..=2).contains(&next) {
                    assert!(kinematics(v, a, 2).is_err());
                    continue;
                }
                n += 1;
                let alt = (v as f64 + a as f64 / 2.0).floor() as u32;
                assert_eq!(kinematics(v, a, 2).unwrap(), (alt, next as u32));
            }
        }
        assert_eq!(n, 7);
        assert_eq!(kinematics(1, -1, 2).unwrap(), (0, 0));
        assert_eq!(kinematics(0, 1, 2).unwrap(), (0, 1));
        assert_eq!(kinematics(2, 0, 2).unwrap(), (2, 2));
        assert_eq!(kinematics(2, -1, 2).unwrap(), (1, 1));
    }

    #[test]
    fn feasible_sets() {
        use MotionAction::*;
        let f = |v| feasible_motion_actions(EgoPose { velocity: v, lane: 0 }, 2, 2).iter().collect::<Vec<_>>();
        assert_eq!(f(2), vec![Decelerate, DoNothing, ChangeLane]);
        assert_eq!(f(0), vec![Accelerate, DoNothing, ChangeLane]);
        assert_eq!(f(1), MotionAction::ALL.to_vec());
        let one_lane = feasible_motion_actions(EgoPose { velocity: 1, lane: 0 }, 2, 1);
        assert!(!one_lane.contains(ChangeLane));
    }

    fn window(cells: &[(usize, i32)]) -> GridWindow {
        let mut w = GridWindow::empty(GridGeometry::standard());
        for &(l, o) in cells {
            w.set(l, o, Cell::Occupied);
        }
        w
    }

    #[test]
    fn straight_moves() {
        let pose = EgoPose { velocity: 2, lane: 0 };
        let out = resolve_motion(&window(&[]), pose, MotionAction::DoNothing, 2, LaneChangeRule::default()).unwrap();
        assert_eq!((out.d, out.collided, out.new_pose), (2, false, pose));

        let pose = EgoPose { velocity: 1, lane: 1 };
        let out = resolve_motion(&window(&[(1, 1)]), pose, MotionAction::DoNothing, 2, LaneChangeRule::default()).unwrap();
        assert!(out.collided);
        assert_eq!((out.d, out.new_pose), (0, EgoPose { velocity: 0, lane: 1 }));
    }

    #[test]
    fn infeasible_action_is_rejected() {
        let pose = EgoPose { velocity: 2, lane: 0 };
        assert!(resolve_motion(&window(&[]), pose, MotionAction::Accelerate, 2, LaneChangeRule::default()).is_err());
    }

    /// Hand-built truth table for a lane change from lane 0: which of the
    /// target-lane cells at offsets 0, 1, 2 are occupied, per velocity.
    #[test]
    fn lane_change_truth_table() {
        // (velocity, occupied target offsets, own-lane +1 occupied, lateral-first collides, target-ahead collides, d if ok)
        type Case = (u32, &'static [i32], bool, bool, bool, u32);
        let table: &[Case] = &[
            (0, &[], false, false, false, 0),
            (0, &[0], false, true, true, 0),
            (0, &[1], false, false, false, 0),
            (1, &[], true, false, false, 1),
            (1, &[0], false, true, false, 1),
            (1, &[1], false, true, true, 1),
            (1, &[2], false, false, false, 1),
            (2, &[0], false, true, false, 2),
            (2, &[2], false, true, true, 2),
            (2, &[1], true, true, true, 2),
            (2, &[], true, false, false, 2),
        ];
        for &(v, occ, own, lat, ahead, d) in table {
            let mut cells: Vec<(usize, i32)> = occ.iter().map(|&o| (1, o)).collect();
            if own {
                cells.push((0, 1));
            }
            let w = window(&cells);
            let pose = EgoPose { velocity: v, lane: 0 };
            for (rule, expect) in [(LaneChangeRule::LateralFirst, lat), (LaneChangeRule::TargetAhead, ahead)] {
                let out = resolve_motion(&w, pose, MotionAction::ChangeLane, 2, rule).unwrap();
                assert_eq!(out.collided, expect, "v={v} occ={occ:?} own={own} rule={rule:?}");
                if expect {
                    assert_eq!(out.new_pose, EgoPose { velocity: 0, lane: 0 });
                    assert_eq!(out.d, 0);
                } else {
                    assert_eq!(out.new_pose, EgoPose { velocity: v, lane: 1 });
                    assert_eq!(out.d, d);
                }
            }
        }
    }

    #[test]
    fn full_speed_success_rate_matches_two_free_cells() {
        use crate::grid::{ColumnLaw, OccupancySampler};
        let g = GridGeometry::standard();
        for &p in &[0.2, 0.5] {
            let mut s = OccupancySampler::new(ColumnLaw::new(p, false, 2).unwrap(), 1234);
            let trials = 100_000;
            let mut ok = 0;
            for _ in 0..trials {
                let w = GridWindow::sample(g, 0, &mut s);
                let before = w.clone();
                let out =
                    resolve_motion(&w, EgoPose { velocity: 2, lane: 0 }, MotionAction::DoNothing, 2, LaneChangeRule::default())
                        .unwrap();
                assert_eq!(w, before);
                ok += usize::from(!out.collided);
            }
            let rate = ok as f64 / trials as f64;
            assert!((rate - (1.0 - p) * (1.0 - p)).abs() <= 0.01, "p={p} rate={rate}");
        }
    }
}
