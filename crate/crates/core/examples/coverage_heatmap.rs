// RSS heatmap of the pre-deployed base station and the coverage rate it
// achieves on its own and together with a second site, at a few thresholds.

use bsplace::cli::GeneratorConfig;
use bsplace::radio::{compute_field, coverage_rate, heatmap_pgm, RadioParams};

pub fn run_example() -> bsplace::Result<()> {
    let scenario = GeneratorConfig::default().generate(1)?;
    let map = &scenario.map;
    let params = RadioParams::default();
    let pre = scenario.pre_deployed_cell();
    let second = *map.candidate_sites().iter().find(|&&c| c != pre).expect("a second site");

    let path = std::env::temp_dir().join("bsplace_heatmap.pgm");
    std::fs::write(&path, heatmap_pgm(map, &params, pre)?)?;
    println!("heatmap of {pre} written to {}", path.display());

    let points = map.eval_points();
    let a = compute_field(map, &params, pre, points)?;
    let b = compute_field(map, &params, second, points)?;
    println!("delta_dBm  f1(pre)  f1(pre+{second})");
    for delta in [-70.0, -80.0, -90.0] {
        println!("{delta:>9}  {:>7.3}  {:>7.3}", coverage_rate(&[&a], delta)?, coverage_rate(&[&a, &b], delta)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bsplace::Result<()> {
    run_example()
}
