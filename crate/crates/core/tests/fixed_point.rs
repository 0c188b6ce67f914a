//! The expected sampled target under the true dynamics, evaluated at Q*,
//! reproduces Q*.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadq::env::{Env, EnvConfig};
use roadq::grid::GridGeometry;
use roadq::learner::{q_target, QMeta};
use roadq::oracle::{value_iteration, EnumeratedMdp, DEFAULT_STATE_CAP};
use roadq::perception::{ScenarioId, ScenarioSpec};
use roadq::rng::derive_seed;

#[test]
fn sampled_targets_average_to_q_star() {
    let geometry = GridGeometry { lanes: 1, local_cols: 2, rear_cols: 0, ext_cols: 2 };
    let cfg = EnvConfig {
        geometry,
        scenario: ScenarioSpec::standard(ScenarioId::C1, geometry),
        p_occupied: 0.3,
        column_exclusion: false,
        v_max: 1,
        ..EnvConfig::standard(ScenarioId::C1)
    };
    let alpha = 0.91;
    let mdp = EnumeratedMdp::build(&cfg, alpha, DEFAULT_STATE_CAP).unwrap();
    let q = value_iteration(&mdp, 1e-11).unwrap();
    let meta = QMeta {
        scenario: ScenarioId::C1,
        geometry_hash: cfg.geometry_hash(),
        alpha,
        gamma_step: 0.01,
        episodes: 0,
        steps_per_episode: 0,
        seed: 0,
    };
    let star = q.to_table(&mdp, meta);
    let codec = cfg.codec().unwrap();
    let space = cfg.action_space();
    let mut env = Env::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 20_000u64;

    for pair in 0..20u64 {
        let i = rng.random_range(0..mdp.states().len());
        let slots: Vec<usize> = mdp.actions(i).collect();
        let slot = slots[rng.random_range(0..slots.len())];
        let belief = codec.decode(mdp.states()[i]).unwrap();
        let (mut sum, mut sq) = (0.0, 0.0);
        for k in 0..n {
            env.reset_to(&belief, derive_seed(pair, k)).unwrap();
            let out = env.step(space.action(slot)).unwrap();
            let feasible = space.feasible_slots(env.feasible_motions());
            let t = q_target(out.cost, env.state_key(), &star, feasible, alpha).unwrap();
            sum += t;
            sq += t * t;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        let want = q.get(&mdp, i, slot).unwrap();
        assert!(
            (mean - want).abs() <= 3.0 * se + 1e-8,
            "{} {}: mean target {mean} vs Q* {want} (se {se})",
            codec.render(mdp.states()[i]).unwrap(),
            space.action(slot)
        );
    }
}
