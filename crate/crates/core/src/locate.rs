//! RSS fingerprinting: a reference database of per-BS RSS vectors and a KNN
//! position estimator, plus the mean localisation error objective.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::city::{Cell, CityMap};
use crate::error::{Error, Result};
use crate::radio::{compute_field, RadioParams};

/// Neighbour count for the KNN estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 2 }
    }
}

/// Reference fingerprints: one RSS vector (one value per active BS) per
/// reference position.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    bs_sites: Vec<Cell>,
    /// Row-major `positions.len() x bs_sites.len()`.
    entries: Vec<f64>,
    positions: Vec<(f64, f64)>,
}

impl FingerprintDb {
    pub fn from_parts(bs_sites: Vec<Cell>, entries: Vec<Vec<f64>>, positions: Vec<(f64, f64)>) -> Result<Self> {
        if bs_sites.is_empty() {
            return Err(Error::EmptySiteList);
        }
        if entries.len() != positions.len() {
            return Err(Error::Misaligned {
                expected: positions.len(),
                got: entries.len(),
            });
        }
        if positions.is_empty() {
            return Err(Error::Invariant("fingerprint database has no reference points".into()));
        }
        let dim = bs_sites.len();
        if let Some(bad) = entries.iter().find(|e| e.len() != dim) {
            return Err(Error::Misaligned {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self {
            bs_sites,
            entries: entries.concat(),
            positions,
        })
    }

    pub fn bs_sites(&self) -> &[Cell] {
        &self.bs_sites
    }

    pub fn dim(&self) -> usize {
        self.bs_sites.len()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    /// `point_x,point_y,rss_bs0,rss_bs1,...`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point_x,point_y");
        for j in 0..self.dim() {
            write!(out, ",rss_bs{j}").unwrap();
        }
        out.push('\n');
        for (i, (x, y)) in self.positions.iter().enumerate() {
            write!(out, "{x},{y}").unwrap();
            for v in self.entry(i) {
                write!(out, ",{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Fingerprints at the map's reference points for the given active sites.
pub fn build_db(map: &CityMap, params: &RadioParams, bs_sites: &[Cell]) -> Result<FingerprintDb> {
    if bs_sites.is_empty() {
        return Err(Error::EmptySiteList);
    }
    let points = map.ref_points();
    let fields = bs_sites
        .iter()
        .map(|&bs| compute_field(map, params, bs, points))
        .collect::<Result<Vec<_>>>()?;
    let entries = (0..points.len())
        .map(|i| fields.iter().map(|f| f.values[i]).collect())
        .collect();
    let positions = points.iter().map(|&p| map.position(p)).collect();
    FingerprintDb::from_parts(bs_sites.to_vec(), entries, positions)
}

/// Mean position of the `k` fingerprints nearest to `query` in RSS space.
/// Equal distances keep the lower reference index first.
pub fn knn_localize(db: &FingerprintDb, query: &[f64], cfg: &KnnConfig) -> Result<(f64, f64)> {
    if query.len() != db.dim() {
        return Err(Error::Misaligned {
            expected: db.dim(),
            got: query.len(),
        });
    }
    let k = cfg.k;
    if k == 0 || k > db.len() {
        return Err(Error::Config(format!("k must lie in 1..={}, got {k}", db.len())));
    }
    // sorted ascending by distance; a new candidate goes after any equal ones
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..db.len() {
        let d2: f64 = db.entry(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.len() == k && d2 >= best[k - 1].0 {
            continue;
        }
        let at = best.partition_point(|&(d, _)| d <= d2);
        best.insert(at, (d2, i));
        best.truncate(k);
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(_, i) in &best {
        sx += db.positions[i].0;
        sy += db.positions[i].1;
    }
    Ok((sx / k as f64, sy / k as f64))
}

/// Mean Euclidean distance between true positions and their KNN estimates.
pub fn localisation_error(
    db: &FingerprintDb,
    cfg: &KnnConfig,
    truth_points: &[(f64, f64)],
    truth_queries: &[Vec<f64>],
) -> Result<f64> {
    if truth_points.len() != truth_queries.len() {
        return Err(Error::Misaligned {
            expected: truth_points.len(),
            got: truth_queries.len(),
        });
    }
    if truth_points.is_empty() {
        return Err(Error::Misaligned { expected: 1, got: 0 });
    }
    let mut total = 0.0;
    for (&(x, y), q) in truth_points.iter().zip(truth_queries) {
        let (ex, ey) = knn_localize(db, q, cfg)?;
        total += ((x - ex).powi(2) + (y - ey).powi(2)).sqrt();
    }
    Ok(total / truth_points.len() as f64)
}
