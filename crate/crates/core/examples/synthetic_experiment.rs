//! Runs every adaptation arm on the synthetic task and prints nDCG@10.
//!
//! `cargo run --release -p gpl --example synthetic_experiment -- [seeds] [temperature]`

use gpl::synthetic::{Arm, Experiment, ExperimentConfig};

fn main() -> gpl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let temperature: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    for seed in 0..seeds {
        let start = std::time::Instant::now();
        let exp = Experiment::prepare(ExperimentConfig { seed, temperature, ..Default::default() })?;
        let mut line = format!("seed {seed} T={temperature}:");
        for arm in Arm::ALL {
            line += &format!(" {arm:?}={:.4}", exp.ndcg(arm)?);
        }
        println!("{line} ({:.1}s)", start.elapsed().as_secs_f64());
    }
    Ok(())
}
