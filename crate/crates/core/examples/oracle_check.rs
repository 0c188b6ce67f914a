//! Solves a one-lane road exactly and measures how far a learned table is
//! from the optimum.

use roadq::env::EnvConfig;
use roadq::grid::GridGeometry;
use roadq::learner::{train, LearnerConfig};
use roadq::oracle::{compare, value_iteration, EnumeratedMdp, DEFAULT_STATE_CAP};
use roadq::perception::{ScenarioId, ScenarioSpec};

fn main() -> anyhow::Result<()> {
    let geometry = GridGeometry { lanes: 1, local_cols: 2, rear_cols: 0, ext_cols: 2 };
    let cfg = EnvConfig {
        geometry,
        scenario: ScenarioSpec::standard(ScenarioId::C1, geometry),
        p_occupied: 0.3,
        column_exclusion: false,
        v_max: 1,
        ..EnvConfig::standard(ScenarioId::C1)
    };

    let mdp = EnumeratedMdp::build(&cfg, 0.91, DEFAULT_STATE_CAP)?;
    let q = value_iteration(&mdp, 1e-9)?;
    println!("{} states, {} pairs, {} sweeps, residual {:.2e}", mdp.states().len(), mdp.pair_count(), q.sweeps, q.bellman_residual(&mdp));

    let codec = cfg.codec()?;
    let space = cfg.action_space();
    for (i, &s) in mdp.states().iter().enumerate().take(4) {
        let best = mdp.actions(i).map(|a| (q.get(&mdp, i, a).unwrap(), a)).min_by(|x, y| x.0.total_cmp(&y.0)).unwrap();
        println!("  {}  best {} at {:.3}", codec.render(s)?, space.action(best.1), best.0);
    }

    for updates in [250_000u64, 1_000_000, 4_000_000] {
        let lc = LearnerConfig { num_episodes: updates / 20, steps_per_episode: 20, p_train: vec![0.3], seed: 3, ..Default::default() };
        let learned = train(&lc, &cfg, 0, |_| {})?;
        let c = compare(&learned, &q.to_table(&mdp, learned.meta.clone()), 100)?;
        println!("{updates:>8} updates: max |Q - Q*| = {:.4} over {} pairs", c.max_abs_diff, c.compared);
    }
    Ok(())
}
