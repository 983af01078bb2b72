// Trains the grid-state DQN on seven pre-deployed positions of one city and
// saves the network. The default budget is tiny so the example finishes in
// seconds; pass an episode count to train longer.
//
// ```text
// cargo run --release --example train_agent -- 500
// ```

use std::sync::Arc;

use bsplace::agent::{choose_positions, split_train_test, train, TrainConfig};
use bsplace::cli::GeneratorConfig;
use bsplace::env::{Env, RewardConfig};
use bsplace::nn::{Arch, QNetwork};
use bsplace::optimize::{EvalConfig, Evaluator};

pub fn run_example() -> bsplace::Result<()> {
    let episodes = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let seed = 1;
    let scenario = GeneratorConfig::default().generate(seed)?;
    let ev = Arc::new(Evaluator::for_scenario(&scenario, EvalConfig::default())?);
    let positions = choose_positions(scenario.map.candidate_sites().len(), 10, seed)?;
    let (train_set, _) = split_train_test(&positions, 0.7, seed)?;
    let envs = train_set
        .iter()
        .map(|&i| Env::new(scenario.with_pre_deployed(i)?, Arc::clone(&ev), RewardConfig::default()))
        .collect::<bsplace::Result<Vec<_>>>()?;

    let cfg = TrainConfig { episodes, steps_per_episode: 30, batch_size: 16, seed, ..TrainConfig::default() };
    let out = train(envs, Arch::ProposedConv, &cfg, |row| {
        println!("episode {:>4}  reward {:.4}  eps {:.2}", row.episode, row.mean_reward, row.epsilon);
    })?;
    println!("{} parameters", out.network.param_count());

    let path = std::env::temp_dir().join("bsplace_example.ckpt");
    out.network.save(&path)?;
    let back = QNetwork::load(&path)?;
    assert_eq!(back.params(), out.network.params());
    println!("checkpoint written to {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> bsplace::Result<()> {
    run_example()
}
