// Builds an RSS fingerprint database for two base stations and localises
// user positions with KNN, for several neighbour counts.

use bsplace::cli::GeneratorConfig;
use bsplace::locate::{build_db, knn_localize, localisation_error, KnnConfig};
use bsplace::radio::{compute_field, RadioParams};

pub fn run_example() -> bsplace::Result<()> {
    let scenario = GeneratorConfig::default().generate(2)?;
    let map = &scenario.map;
    let params = RadioParams::default();
    let sites = [scenario.pre_deployed_cell(), map.candidate_sites()[0]];
    let db = build_db(map, &params, &sites)?;
    println!("{} reference fingerprints of dimension {}", db.len(), db.dim());

    let points = map.eval_points();
    let fields: Vec<_> = sites.iter().map(|&s| compute_field(map, &params, s, points)).collect::<Result<_, _>>()?;
    let queries: Vec<Vec<f64>> = (0..points.len()).map(|i| fields.iter().map(|f| f.values[i]).collect()).collect();
    let truth: Vec<(f64, f64)> = points.iter().map(|&p| map.position(p)).collect();

    let i = points.len() / 2;
    let (x, y) = knn_localize(&db, &queries[i], &KnnConfig { k: 2 })?;
    println!("UE at ({:.0}, {:.0}) m estimated at ({x:.1}, {y:.1}) m", truth[i].0, truth[i].1);
    for k in [1, 2, 4, 8] {
        let f2 = localisation_error(&db, &KnnConfig { k }, &truth, &queries)?;
        println!("K={k}: mean localisation error {f2:.2} m");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bsplace::Result<()> {
    run_example()
}
