//! Trains one scenario, saves the table, loads it back and evaluates the
//! greedy policy at several densities.
//!
//! ```text
//! cargo run --release --example train_and_evaluate -- C2 200000
//! ```

use roadq::env::EnvConfig;
use roadq::eval::{evaluate, EvalOptions};
use roadq::learner::{train, LearnerConfig};
use roadq::perception::ScenarioId;
use roadq::qfile;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let id: ScenarioId = args.next().as_deref().unwrap_or("C2").parse()?;
    let episodes: u64 = args.next().map_or(Ok(50_000), |s| s.parse())?;

    let env = EnvConfig::standard(id);
    let lc = LearnerConfig { num_episodes: episodes, seed: 1, ..Default::default() };
    let table = train(&lc, &env, (episodes / 5).max(1), |p| {
        println!("{:>9} episodes  {:>7} entries  max|dQ| {:.3e}", p.episodes_done, p.entries, p.max_delta);
    })?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("q.tsv");
    qfile::save(&table, &env, &path)?;
    let table = qfile::load(&env, &path)?;
    println!("saved and reloaded {} entries", table.len());

    let opts = EvalOptions { episodes: 1000, steps: 100, seed: 0, workers: 1 };
    println!("density  distance  v=2    no-query  collisions");
    for p in [0.0, 0.2, 0.5, 0.8] {
        let r = evaluate(&table, &EnvConfig { p_occupied: p, ..env.clone() }, opts)?;
        println!(
            "{p:>7}  {:>8.2}  {:.3}  {:.3}     {}",
            r.mean_distance,
            r.velocity_fraction(2),
            r.noquery_fraction(),
            r.collisions
        );
    }
    Ok(())
}
