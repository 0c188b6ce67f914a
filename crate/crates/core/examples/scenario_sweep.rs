//! Trains all five scenarios, evaluates them over the density grid, then
//! writes the merged CSV and the four SVG charts into a directory.
//!
//! ```text
//! cargo run --release --example scenario_sweep -- out/ 1000000
//! ```

use std::fs::File;
use std::path::PathBuf;

use roadq::env::EnvConfig;
use roadq::eval::{read_csv, sweep, write_csv, EvalOptions};
use roadq::learner::{train, LearnerConfig};
use roadq::perception::ScenarioId;
use roadq::report;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "sweep-out".into()));
    let episodes: u64 = args.next().map_or(Ok(50_000), |s| s.parse())?;
    std::fs::create_dir_all(&dir)?;

    let mut trained = Vec::new();
    for id in ScenarioId::ALL {
        let env = EnvConfig::standard(id);
        let lc = LearnerConfig { num_episodes: episodes, seed: 1, ..Default::default() };
        let table = train(&lc, &env, 0, |_| {})?;
        println!("{id}: {} states", table.state_count());
        trained.push((table, env));
    }
    let pairs: Vec<_> = trained.iter().map(|(t, e)| (t, e)).collect();
    let opts = EvalOptions { episodes: 1000, steps: 100, seed: 0, workers: 1 };
    let reports = sweep(&pairs, &[0.0, 0.2, 0.5, 0.8], opts)?;

    let csv = dir.join("results.csv");
    write_csv(&reports, File::create(&csv)?)?;
    let grid = report::merge([read_csv(File::open(&csv)?)?])?;
    for (stem, chart) in report::figure_charts(&grid) {
        std::fs::write(dir.join(format!("{stem}.svg")), chart.to_svg())?;
    }
    for r in &grid.rows {
        println!("{} p={}: {:.1} cells, no-query {:.2}", r.scenario, r.density, r.mean_distance, r.noquery);
    }
    println!("wrote {} and four charts", csv.display());
    Ok(())
}
