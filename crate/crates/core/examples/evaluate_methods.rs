// Compares the three exhaustive-search oracles with a trained agent on
// held-out pre-deployed positions. The coordinate-state network trains in
// seconds, which keeps the example quick.

use std::sync::Arc;

use bsplace::agent::{apply, choose_positions, split_train_test, train, TrainConfig};
use bsplace::cli::GeneratorConfig;
use bsplace::env::{Env, RewardConfig};
use bsplace::nn::Arch;
use bsplace::optimize::{brute_force, Criterion, EvalConfig, Evaluator};
use bsplace::rng::substream;

pub fn run_example() -> bsplace::Result<()> {
    let seed = 1;
    let scenario = GeneratorConfig::default().generate(seed)?;
    let ev = Arc::new(Evaluator::for_scenario(&scenario, EvalConfig::default())?);
    let env_for = |i: usize| Env::new(scenario.with_pre_deployed(i)?, Arc::clone(&ev), RewardConfig::default());
    let positions = choose_positions(scenario.map.candidate_sites().len(), 10, seed)?;
    let (train_set, test_set) = split_train_test(&positions, 0.7, seed)?;

    let envs = train_set.iter().map(|&i| env_for(i)).collect::<bsplace::Result<Vec<_>>>()?;
    let cfg = TrainConfig { episodes: 60, steps_per_episode: 50, seed, ..TrainConfig::default() };
    let net = train(envs, Arch::TraditionalMlp, &cfg, |_| {})?.network;

    println!("{:>4} {:>16} {:>8} {:>8} {:>8} {:>8}", "pre", "method", "cell", "f1", "f2", "ratio");
    for &i in &test_set {
        let env = env_for(i)?;
        let mut results = [Criterion::Coverage, Criterion::Localisation, Criterion::Joint]
            .iter()
            .map(|&c| brute_force(&ev, env.scenario(), c))
            .collect::<bsplace::Result<Vec<_>>>()?;
        results.push(apply(&net, &env, cfg.rollout_steps, &mut substream(seed ^ i as u64, "apply"))?);
        for r in &results {
            let o = r.objective;
            println!("{i:>4} {:>16} {:>8} {:>8.3} {:>8.2} {:>8.4}", r.method.to_string(), r.cell.to_string(), o.f1, o.f2, o.ratio);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bsplace::Result<()> {
    run_example()
}
