//! Deterministic synthetic radio model and the coverage-rate objective.
//!
//! Received power follows a close-in path-loss law with separate LOS and
//! NLOS exponents and a capped per-building-run penetration loss:
//!
//! ```text
//! rss = tx_power + beam_gain - ref_loss_1m - 10 * n * log10(max(d, 1 m)) - nlos_extra
//! n = exp_los if the path is clear else exp_nlos
//! nlos_extra = min(wall_penalty * blocked_runs, wall_cap)
//! ```
//!
//! clamped below at `floor`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::city::{blocked_runs, Cell, CityMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    /// Transmit power, dBm.
    pub tx_power: f64,
    /// Gain of the best serving beam, dB.
    pub beam_gain: f64,
    /// Path loss at 1 m, dB.
    pub ref_loss_1m: f64,
    pub exp_los: f64,
    pub exp_nlos: f64,
    /// Penetration loss per run of building cells, dB.
    pub wall_penalty: f64,
    /// Cap on the total penetration loss, dB.
    pub wall_cap: f64,
    /// Coverage threshold, dBm.
    pub delta: f64,
    /// Smallest representable RSS, dBm.
    pub floor: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            tx_power: 10.0,
            beam_gain: 15.0,
            ref_loss_1m: 61.4,
            exp_los: 2.0,
            exp_nlos: 3.2,
            wall_penalty: 15.0,
            wall_cap: 45.0,
            delta: -80.0,
            floor: -160.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tx_power,
            self.beam_gain,
            self.ref_loss_1m,
            self.exp_los,
            self.exp_nlos,
            self.wall_penalty,
            self.wall_cap,
            self.delta,
            self.floor,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("radio parameters must be finite".into()));
        }
        if !(self.exp_nlos >= self.exp_los && self.exp_los > 0.0) {
            return Err(Error::Config(format!(
                "need exp_nlos >= exp_los > 0, got exp_los={} exp_nlos={}",
                self.exp_los, self.exp_nlos
            )));
        }
        if self.delta <= self.floor {
            return Err(Error::Config(format!("delta {} must exceed floor {}", self.delta, self.floor)));
        }
        if self.wall_penalty < 0.0 || self.wall_cap < 0.0 {
            return Err(Error::Config("wall penalty and cap must be non-negative".into()));
        }
        Ok(())
    }
}

/// Received signal strength in dBm at `ue` from a base station at `bs`.
pub fn rss_at(map: &CityMap, params: &RadioParams, bs: Cell, ue: Cell) -> Result<f64> {
    map.check(bs)?;
    map.check(ue)?;
    if map.is_building(bs) {
        return Err(Error::OnBuilding { x: bs.x, y: bs.y });
    }
    let runs = blocked_runs(map, bs, ue)?;
    let d = map.distance(bs, ue).max(1.0);
    let (exponent, extra) = if runs == 0 {
        (params.exp_los, 0.0)
    } else {
        (params.exp_nlos, (params.wall_penalty * runs as f64).min(params.wall_cap))
    };
    let rss = params.tx_power + params.beam_gain - params.ref_loss_1m - 10.0 * exponent * d.log10() - extra;
    Ok(rss.max(params.floor))
}

/// RSS of one base station over an ordered point list.
#[derive(Debug, Clone, PartialEq)]
pub struct RssField {
    pub bs: Cell,
    pub values: Vec<f64>,
}

pub fn compute_field(map: &CityMap, params: &RadioParams, bs: Cell, points: &[Cell]) -> Result<RssField> {
    let values = points
        .par_iter()
        .map(|&ue| rss_at(map, params, bs, ue))
        .collect::<Result<Vec<_>>>()?;
    Ok(RssField { bs, values })
}

/// Fraction of points whose best serving RSS reaches `delta`.
pub fn coverage_rate(fields: &[&RssField], delta: f64) -> Result<f64> {
    let first = fields.first().ok_or(Error::EmptySiteList)?;
    let n = first.values.len();
    if let Some(bad) = fields.iter().find(|f| f.values.len() != n) {
        return Err(Error::Misaligned {
            expected: n,
            got: bad.values.len(),
        });
    }
    if n == 0 {
        return Err(Error::Misaligned { expected: 1, got: 0 });
    }
    let covered = (0..n)
        .filter(|&i| fields.iter().any(|f| f.values[i] >= delta))
        .count();
    Ok(covered as f64 / n as f64)
}

/// RSS over every grid cell, `None` on building cells. Row-major.
pub fn heatmap(map: &CityMap, params: &RadioParams, bs: Cell) -> Result<Vec<Option<f64>>> {
    (0..map.height())
        .flat_map(|y| (0..map.width()).map(move |x| Cell::new(x, y)))
        .map(|c| {
            if map.is_building(c) {
                Ok(None)
            } else {
                rss_at(map, params, bs, c).map(Some)
            }
        })
        .collect()
}

/// Plain PGM (P2) rendering of [`heatmap`]: buildings black, street cells
/// scaled linearly from `floor` (1) to the strongest value (255).
pub fn heatmap_pgm(map: &CityMap, params: &RadioParams, bs: Cell) -> Result<String> {
    let cells = heatmap(map, params, bs)?;
    let max = cells.iter().flatten().fold(params.floor, |m, &v| m.max(v));
    let span = (max - params.floor).max(f64::EPSILON);
    let mut out = format!("P2\n{} {}\n255\n", map.width(), map.height());
    for row in cells.chunks(map.width()) {
        let line: Vec<String> = row
            .iter()
            .map(|v| match v {
                None => "0".to_string(),
                Some(v) => (1.0 + 254.0 * (v - params.floor) / span).round().to_string(),
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// `x,y,rss_dbm` rows for each point of `field`.
pub fn field_csv(field: &RssField, points: &[Cell]) -> Result<String> {
    if field.values.len() != points.len() {
        return Err(Error::Misaligned {
            expected: points.len(),
            got: field.values.len(),
        });
    }
    let mut out = String::from("x,y,rss_dbm\n");
    for (p, v) in points.iter().zip(&field.values) {
        writeln!(out, "{},{},{v:.6}", p.x, p.y).expect("writing to a String cannot fail");
    }
    Ok(out)
}
