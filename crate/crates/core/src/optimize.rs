//! Objective evaluation for a candidate agent-BS placement and the
//! exhaustive-search oracles (best coverage, best localisation, best ratio).

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::sync::{Arc, RwLock};

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::city::{Cell, CityMap, PlacementSpace, Scenario};
use crate::error::{Error, Result};
use crate::locate::{build_db, localisation_error, FingerprintDb, KnnConfig};
use crate::radio::{compute_field, coverage_rate, RadioParams, RssField};
use crate::rng;

/// Everything that determines the objective values of a placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub radio: RadioParams,
    pub knn: KnnConfig,
    pub placement: PlacementSpace,
    /// Standard deviation of Gaussian noise added to query fingerprints, dB.
    /// Zero gives noiseless queries.
    pub query_noise_db: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            radio: RadioParams::default(),
            knn: KnnConfig::default(),
            placement: PlacementSpace::CandidateSites,
            query_noise_db: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        if self.knn.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.query_noise_db >= 0.0 && self.query_noise_db.is_finite()) {
            return Err(Error::Config(format!("query noise must be >= 0, got {}", self.query_noise_db)));
        }
        Ok(())
    }
}

/// Coverage rate, mean localisation error (m) and their ratio (1/m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub f1: f64,
    pub f2: f64,
    pub ratio: f64,
}

impl ObjectiveValue {
    pub fn new(f1: f64, f2: f64) -> Self {
        Self { f1, f2, ratio: f1 / f2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BFC")]
    Bfc,
    #[serde(rename = "BFL")]
    Bfl,
    #[serde(rename = "BFJ")]
    Bfj,
    #[serde(rename = "DQN-traditional")]
    DqnTraditional,
    #[serde(rename = "DQN-proposed")]
    DqnProposed,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bfc => "BFC",
            Method::Bfl => "BFL",
            Method::Bfj => "BFJ",
            Method::DqnTraditional => "DQN-traditional",
            Method::DqnProposed => "DQN-proposed",
        })
    }
}

/// Exhaustive-search objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Maximise coverage rate.
    Coverage,
    /// Minimise localisation error.
    Localisation,
    /// Maximise coverage / error.
    Joint,
}

impl Criterion {
    pub fn method(self) -> Method {
        match self {
            Criterion::Coverage => Method::Bfc,
            Criterion::Localisation => Method::Bfl,
            Criterion::Joint => Method::Bfj,
        }
    }

    /// True if `a` is strictly better than `b`.
    fn better(self, a: &ObjectiveValue, b: &ObjectiveValue) -> bool {
        match self {
            Criterion::Coverage => a.f1 > b.f1,
            Criterion::Localisation => a.f2 < b.f2,
            Criterion::Joint => a.ratio > b.ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub cell: Cell,
    /// Index into the scenario's candidate sites, when the cell is one.
    pub site_index: Option<usize>,
    pub objective: ObjectiveValue,
    pub method: Method,
}

/// Checks that `agent` may host the new BS next to the BS at `pre`.
pub fn check_placement(map: &CityMap, space: PlacementSpace, pre: Cell, agent: Cell) -> Result<()> {
    map.check(agent)?;
    if map.is_building(agent) {
        return Err(Error::IllegalSite(format!("{agent} is a building cell")));
    }
    if agent == pre {
        return Err(Error::IllegalSite(format!("{agent} is the pre-deployed BS cell")));
    }
    if space == PlacementSpace::CandidateSites && map.site_index(agent).is_none() {
        return Err(Error::IllegalSite(format!("{agent} is not a candidate site")));
    }
    Ok(())
}

/// Legal agent placements for `scenario`, in placement order.
pub fn legal_sites(scenario: &Scenario, space: PlacementSpace) -> Vec<Cell> {
    let pre = scenario.pre_deployed_cell();
    scenario
        .map
        .placement_cells(space)
        .into_iter()
        .filter(|&c| c != pre)
        .collect()
}

fn noisy_queries(mut queries: Vec<Vec<f64>>, sigma: f64, seed: u64, pre: Cell, agent: Cell) -> Vec<Vec<f64>> {
    if sigma > 0.0 {
        let name = format!("{}/{}/{}/{}/{}", rng::streams::NOISE, pre.x, pre.y, agent.x, agent.y);
        let mut rng = rng::substream(seed, &name);
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        for q in &mut queries {
            for v in q.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    queries
}

/// Uncached evaluation, composed directly from the radio and locate
/// operations.
pub fn evaluate_placement(scenario: &Scenario, cfg: &EvalConfig, agent: Cell) -> Result<ObjectiveValue> {
    let map = &scenario.map;
    let pre = scenario.pre_deployed_cell();
    check_placement(map, cfg.placement, pre, agent)?;
    let eval = map.eval_points();
    let pre_field = compute_field(map, &cfg.radio, pre, eval)?;
    let agent_field = compute_field(map, &cfg.radio, agent, eval)?;
    let f1 = coverage_rate(&[&pre_field, &agent_field], cfg.radio.delta)?;
    let db = build_db(map, &cfg.radio, &[pre, agent])?;
    let queries = (0..eval.len())
        .map(|i| vec![pre_field.values[i], agent_field.values[i]])
        .collect();
    let queries = noisy_queries(queries, cfg.query_noise_db, scenario.seed, pre, agent);
    let truth: Vec<(f64, f64)> = eval.iter().map(|&p| map.position(p)).collect();
    let f2 = localisation_error(&db, &cfg.knn, &truth, &queries)?;
    Ok(ObjectiveValue::new(f1, f2))
}

struct SiteFields {
    eval: RssField,
    refs: RssField,
}

/// Memoising evaluator for one city map. Per-BS RSS fields and per-pair
/// objective values are cached; concurrent use is safe and the cached
/// values do not depend on evaluation order.
pub struct Evaluator {
    map: Arc<CityMap>,
    cfg: EvalConfig,
    seed: u64,
    truth: Vec<(f64, f64)>,
    fields: RwLock<HashMap<Cell, Arc<SiteFields>>>,
    objectives: RwLock<HashMap<(Cell, Cell), ObjectiveValue>>,
}

impl fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Evaluator")
            .field("cfg", &self.cfg)
            .field("seed", &self.seed)
            .field("cached", &self.cached_len())
            .finish()
    }
}

impl Evaluator {
    /// `seed` drives the optional query noise.
    pub fn new(map: Arc<CityMap>, cfg: EvalConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.knn.k > map.ref_points().len() {
            return Err(Error::Config(format!(
                "k = {} exceeds the {} reference points",
                cfg.knn.k,
                map.ref_points().len()
            )));
        }
        let truth = map.eval_points().iter().map(|&p| map.position(p)).collect();
        Ok(Self {
            map,
            cfg,
            seed,
            truth,
            fields: RwLock::new(HashMap::new()),
            objectives: RwLock::new(HashMap::new()),
        })
    }

    pub fn for_scenario(scenario: &Scenario, cfg: EvalConfig) -> Result<Self> {
        Self::new(Arc::clone(&scenario.map), cfg, scenario.seed)
    }

    pub fn map(&self) -> &Arc<CityMap> {
        &self.map
    }

    pub fn config(&self) -> &EvalConfig {
        &self.cfg
    }

    pub fn cached_len(&self) -> usize {
        self.objectives.read().expect("cache lock poisoned").len()
    }

    fn site_fields(&self, bs: Cell) -> Result<Arc<SiteFields>> {
        if let Some(f) = self.fields.read().expect("cache lock poisoned").get(&bs) {
            return Ok(Arc::clone(f));
        }
        let computed = Arc::new(SiteFields {
            eval: compute_field(&self.map, &self.cfg.radio, bs, self.map.eval_points())?,
            refs: compute_field(&self.map, &self.cfg.radio, bs, self.map.ref_points())?,
        });
        let mut guard = self.fields.write().expect("cache lock poisoned");
        Ok(Arc::clone(guard.entry(bs).or_insert(computed)))
    }

    fn ensure_same_map(&self, scenario: &Scenario) -> Result<()> {
        if Arc::ptr_eq(&self.map, &scenario.map) || *self.map == *scenario.map {
            Ok(())
        } else {
            Err(Error::Config("scenario does not share the evaluator's city map".into()))
        }
    }

    /// Objective values with the pre-deployed BS at `pre` and the agent BS at `agent`.
    pub fn evaluate(&self, pre: Cell, agent: Cell) -> Result<ObjectiveValue> {
        if let Some(v) = self.objectives.read().expect("cache lock poisoned").get(&(pre, agent)) {
            return Ok(*v);
        }
        check_placement(&self.map, self.cfg.placement, pre, agent)?;
        let a = self.site_fields(pre)?;
        let b = self.site_fields(agent)?;
        let f1 = coverage_rate(&[&a.eval, &b.eval], self.cfg.radio.delta)?;
        let entries = (0..self.map.ref_points().len())
            .map(|i| vec![a.refs.values[i], b.refs.values[i]])
            .collect();
        let positions = self.map.ref_points().iter().map(|&p| self.map.position(p)).collect();
        let db = FingerprintDb::from_parts(vec![pre, agent], entries, positions)?;
        let queries = (0..self.truth.len())
            .map(|i| vec![a.eval.values[i], b.eval.values[i]])
            .collect();
        let queries = noisy_queries(queries, self.cfg.query_noise_db, self.seed, pre, agent);
        let f2 = localisation_error(&db, &self.cfg.knn, &self.truth, &queries)?;
        let value = ObjectiveValue::new(f1, f2);
        self.objectives
            .write()
            .expect("cache lock poisoned")
            .entry((pre, agent))
            .or_insert(value);
        Ok(value)
    }

    pub fn evaluate_in(&self, scenario: &Scenario, agent: Cell) -> Result<ObjectiveValue> {
        self.ensure_same_map(scenario)?;
        self.evaluate(scenario.pre_deployed_cell(), agent)
    }

    /// Evaluates every legal placement of `scenario`.
    pub fn site_table(&self, scenario: &Scenario) -> Result<SiteTable> {
        self.ensure_same_map(scenario)?;
        let sites = legal_sites(scenario, self.cfg.placement);
        if sites.is_empty() {
            return Err(Error::IllegalSite("no legal agent site in scenario".into()));
        }
        let pre = scenario.pre_deployed_cell();
        let rows = sites
            .par_iter()
            .map(|&cell| {
                Ok(SiteRow {
                    cell,
                    site_index: self.map.site_index(cell),
                    objective: self.evaluate(pre, cell)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SiteTable { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SiteRow {
    pub cell: Cell,
    pub site_index: Option<usize>,
    pub objective: ObjectiveValue,
}

/// Objective values of every legal placement, in placement order.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTable {
    pub rows: Vec<SiteRow>,
}

impl SiteTable {
    /// Position in `rows` of the best row; ties keep the earliest row.
    pub fn best_position(&self, criterion: Criterion) -> usize {
        let mut best = 0;
        for (i, row) in self.rows.iter().enumerate().skip(1) {
            if criterion.better(&row.objective, &self.rows[best].objective) {
                best = i;
            }
        }
        best
    }

    pub fn best(&self, criterion: Criterion) -> PlacementResult {
        let row = &self.rows[self.best_position(criterion)];
        PlacementResult {
            cell: row.cell,
            site_index: row.site_index,
            objective: row.objective,
            method: criterion.method(),
        }
    }

    /// `site_index,x,y,f1,f2,ratio,is_argmax_f1,is_argmin_f2,is_argmax_ratio`.
    /// `site_index` is the candidate-site index, or the row position when
    /// placements range over all street cells.
    pub fn to_csv(&self) -> String {
        let bfc = self.best_position(Criterion::Coverage);
        let bfl = self.best_position(Criterion::Localisation);
        let bfj = self.best_position(Criterion::Joint);
        let mut out = String::from("site_index,x,y,f1,f2,ratio,is_argmax_f1,is_argmin_f2,is_argmax_ratio\n");
        for (i, row) in self.rows.iter().enumerate() {
            let o = &row.objective;
            writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.9},{},{},{}",
                row.site_index.unwrap_or(i),
                row.cell.x,
                row.cell.y,
                o.f1,
                o.f2,
                o.ratio,
                u8::from(i == bfc),
                u8::from(i == bfl),
                u8::from(i == bfj)
            )
            .unwrap();
        }
        out
    }
}

/// Exhaustive search over every legal placement; ties go to the lowest
/// placement index.
pub fn brute_force(evaluator: &Evaluator, scenario: &Scenario, criterion: Criterion) -> Result<PlacementResult> {
    Ok(evaluator.site_table(scenario)?.best(criterion))
}
