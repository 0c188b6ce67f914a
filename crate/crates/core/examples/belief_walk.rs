//! Drives a random policy for a few steps and prints what the car believes
//! next to what is really on the road.
//!
//! ```text
//! cargo run --example belief_walk -- C2 0.4
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadq::env::{Env, EnvConfig};
use roadq::perception::{BeliefCell, JointAction, QueryAction, ScenarioId};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let id: ScenarioId = args.next().as_deref().unwrap_or("C2").parse()?;
    let p: f64 = args.next().map_or(Ok(0.4), |s| s.parse())?;

    let mut env = Env::new(EnvConfig { p_occupied: p, ..EnvConfig::standard(id) })?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    env.reset(5);
    show(&env);
    for _ in 0..6 {
        let motions = env.feasible_motions();
        let motion = motions.nth(rng.random_range(0..motions.len())).unwrap();
        let groups = env.config().scenario.query_groups.len();
        let query = match rng.random_range(0..=groups) {
            g if g < groups => QueryAction::Group(g),
            _ => QueryAction::NoQuery,
        };
        let action = JointAction::new(motion, query);
        let out = env.step(action)?;
        println!("\n{action}: moved {} cells, cost {}{}", out.d, out.cost, if out.collided { ", collision" } else { "" });
        show(&env);
    }
    Ok(())
}

/// Top lane first. `#` occupied, `.` free, `?` unknown, `E` the ego.
fn show(env: &Env) {
    let g = env.config().geometry;
    let (belief, road) = (env.belief(), env.window());
    println!("state {}", env.codec().render(env.state_key()).unwrap());
    for lane in (0..g.lanes).rev() {
        let (mut b, mut t) = (String::new(), String::new());
        for off in g.min_offset()..=g.max_offset() {
            let ego = lane == belief.pose.lane && off == 0;
            t.push(if ego { 'E' } else if road.get(lane, off).is_occupied() { '#' } else { '.' });
            b.push(if ego {
                'E'
            } else if off < g.first_ext_offset() {
                if belief.local_cell(lane, off).is_occupied() { '#' } else { '.' }
            } else {
                match belief.ext_cell(lane, off) {
                    BeliefCell::Unknown => '?',
                    BeliefCell::Free => '.',
                    BeliefCell::Occupied => '#',
                }
            });
        }
        println!("  believed {b}   actual {t}");
    }
}
