//! Prints the velocity/displacement table and shows how a lane change is
//! checked against the road under both lane-change rules.

use roadq::grid::{Cell, GridGeometry, GridWindow};
use roadq::motion::{kinematics, resolve_motion, EgoPose, LaneChangeRule, MotionAction};

fn main() -> anyhow::Result<()> {
    println!("v  a   d  v'");
    for v in 0..=2u32 {
        for a in -1..=1 {
            match kinematics(v, a, 2) {
                Ok((d, next)) => println!("{v} {a:>2}   {d}  {next}"),
                Err(_) => println!("{v} {a:>2}   infeasible"),
            }
        }
    }

    // A car right beside the ego, nothing ahead in the other lane.
    let mut road = GridWindow::empty(GridGeometry::standard());
    road.set(1, 0, Cell::Occupied);
    let pose = EgoPose { velocity: 2, lane: 0 };
    for rule in [LaneChangeRule::TargetAhead, LaneChangeRule::LateralFirst] {
        let out = resolve_motion(&road, pose, MotionAction::ChangeLane, 2, rule)?;
        println!(
            "{:>13}: checks {:?}, collided={}, lands in lane {} after {} cells",
            rule.name(),
            out.traversed.as_slice(),
            out.collided,
            out.new_pose.lane,
            out.d
        );
    }
    Ok(())
}
