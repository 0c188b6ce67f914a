//! Writes one greedy episode as JSON lines.

use std::io::Write;

use roadq::env::{Env, EnvConfig, TrajectoryWriter};
use roadq::learner::{greedy_slot, train, LearnerConfig};
use roadq::perception::ScenarioId;

fn main() -> anyhow::Result<()> {
    let cfg = EnvConfig { p_occupied: 0.5, ..EnvConfig::standard(ScenarioId::RC) };
    let lc = LearnerConfig { num_episodes: 20_000, seed: 2, ..Default::default() };
    let table = train(&lc, &cfg, 0, |_| {})?;

    let space = cfg.action_space();
    let mut env = Env::new(cfg)?;
    env.reset(9);
    let mut out = TrajectoryWriter::new(std::io::stdout().lock());
    for _ in 0..15 {
        let slot = greedy_slot(&table, &space, env.state_key(), env.feasible_motions())?;
        let (_, record) = env.step_recorded(space.action(slot))?;
        out.write(&record)?;
    }
    out.into_inner().flush()?;
    Ok(())
}
