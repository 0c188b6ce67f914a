//! Builds a run from TOML: three lanes, custom query groups and the
//! lateral-first lane-change rule.

use roadq::config::RunConfig;
use roadq::env::Env;

const RUN: &str = r#"
[geometry]
lanes = 3
local_cols = 3
rear_cols = 1
ext_cols = 3

[scenario]
id = "C1"
query_groups = [[1, 2, 3], [4, 5, 6], [7, 8, 9]]

[env]
lane_change = "lateral-first"

[learner]
num_episodes = 2000
"#;

fn main() -> anyhow::Result<()> {
    let run = RunConfig::from_toml(RUN)?;
    let env_cfg = run.env_config(true)?;
    let codec = env_cfg.codec()?;
    println!("{} actions, at most {} belief states", env_cfg.action_space().slots(), codec.cardinality());
    println!("geometry hash {}", env_cfg.geometry_hash());

    let mut env = Env::new(env_cfg.clone())?;
    env.reset(1);
    println!("initial state {}", codec.render(env.state_key())?);

    let table = roadq::learner::train(&run.learner, &env_cfg, 0, |_| {})?;
    println!("{} entries after {} episodes", table.len(), run.learner.num_episodes);
    print!("{}", run.to_toml()?);
    Ok(())
}
