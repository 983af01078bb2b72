// Generates a block-grid city with candidate sites and a pre-deployed base
// station, prints it, and round-trips it through JSON.
//
// ```text
// cargo run --example generate_city -- 7
// ```

use bsplace::city::{parse_scenario, render_ascii, scenario_to_json};
use bsplace::cli::GeneratorConfig;

pub fn run_example() -> bsplace::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let scenario = GeneratorConfig::default().generate(seed)?;
    let map = &scenario.map;
    println!(
        "{}x{} grid, {} building cells, {} candidate sites, pre-deployed BS at {}",
        map.width(),
        map.height(),
        map.building_count(),
        map.candidate_sites().len(),
        scenario.pre_deployed_cell()
    );
    // '#' building, 's' candidate site, 'P' pre-deployed BS
    print!("{}", render_ascii(&scenario));

    let json = scenario_to_json(&scenario);
    let back = parse_scenario(&json)?;
    assert_eq!(back.map.candidate_sites(), map.candidate_sites());
    println!("scenario JSON: {} bytes", json.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> bsplace::Result<()> {
    run_example()
}
