// Scores every legal site for the new base station and shows how the
// coverage, localisation and joint oracles disagree.

use bsplace::cli::GeneratorConfig;
use bsplace::optimize::{Criterion, EvalConfig, Evaluator};

pub fn run_example() -> bsplace::Result<()> {
    let scenario = GeneratorConfig::default().generate(1)?;
    let ev = Evaluator::for_scenario(&scenario, EvalConfig::default())?;
    let table = ev.site_table(&scenario)?;

    let mut rows: Vec<_> = table.rows.iter().collect();
    rows.sort_by(|a, b| b.objective.ratio.total_cmp(&a.objective.ratio));
    println!("top sites by f1/f2:");
    for r in rows.iter().take(5) {
        println!("  {} f1 {:.3} f2 {:6.2} m ratio {:.4}", r.cell, r.objective.f1, r.objective.f2, r.objective.ratio);
    }
    for c in [Criterion::Coverage, Criterion::Localisation, Criterion::Joint] {
        let best = table.best(c);
        println!("{}: {} f1 {:.3} f2 {:.2} m", best.method, best.cell, best.objective.f1, best.objective.f2);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bsplace::Result<()> {
    run_example()
}
