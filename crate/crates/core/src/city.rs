//! Grid city model: buildings, candidate base-station sites and the UE point
//! sets over which the objectives are evaluated.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Default edge length of a grid cell in meters.
pub const DEFAULT_CELL_SIZE: f64 = 10.0;
/// Default base-station mast height in meters.
pub const DEFAULT_BS_HEIGHT: f64 = 9.0;
/// UE antenna height in meters.
pub const UE_HEIGHT: f64 = 1.5;

/// A grid cell, `x` along the width and `y` along the height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Squared distance in cell units.
    pub fn dist2(self, other: Cell) -> usize {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx * dx + dy * dy
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Axis-aligned block of building cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| Cell::new(x, y)))
    }
}

/// Which cells the agent base station may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementSpace {
    /// Only the scenario's candidate sites.
    #[default]
    CandidateSites,
    /// Any street (non-building) cell.
    StreetCells,
}

/// Immutable grid city.
#[derive(Debug, Clone, PartialEq)]
pub struct CityMap {
    width: usize,
    height: usize,
    cell_size: f64,
    bs_height: f64,
    occupied: Vec<bool>,
    candidate_sites: Vec<Cell>,
    eval_points: Vec<Cell>,
    ref_points: Vec<Cell>,
}

impl CityMap {
    /// Builds a map with the default point sets: every street cell is an
    /// evaluation point and every second street cell (row-major) is a
    /// fingerprint reference point.
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        bs_height: f64,
        buildings: impl IntoIterator<Item = Cell>,
        candidate_sites: Vec<Cell>,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Invariant(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Invariant(format!("cell_size must be positive, got {cell_size}")));
        }
        let mut occupied = vec![false; width * height];
        for cell in buildings {
            check_bounds(width, height, cell.x as i64, cell.y as i64)?;
            occupied[cell.y * width + cell.x] = true;
        }
        let mut map = Self {
            width,
            height,
            cell_size,
            bs_height,
            occupied,
            candidate_sites: Vec::new(),
            eval_points: Vec::new(),
            ref_points: Vec::new(),
        };
        let street = map.street_cells();
        map.eval_points = street.clone();
        map.ref_points = street.into_iter().step_by(2).collect();
        map.set_candidate_sites(candidate_sites)?;
        Ok(map)
    }

    /// Replaces the evaluation and reference point sets.
    pub fn with_points(mut self, eval_points: Vec<Cell>, ref_points: Vec<Cell>) -> Result<Self> {
        for (name, points) in [("eval", &eval_points), ("ref", &ref_points)] {
            if points.is_empty() {
                return Err(Error::Invariant(format!("{name} point set is empty")));
            }
            for &p in points {
                self.check(p)?;
                if self.is_building(p) {
                    return Err(Error::Invariant(format!("{name} point {p} lies inside a building")));
                }
            }
        }
        self.eval_points = eval_points;
        self.ref_points = ref_points;
        Ok(self)
    }

    fn set_candidate_sites(&mut self, sites: Vec<Cell>) -> Result<()> {
        let mut seen = HashSet::with_capacity(sites.len());
        for &site in &sites {
            self.check(site)?;
            if self.is_building(site) {
                return Err(Error::Invariant(format!("candidate site {site} lies on a building")));
            }
            if !seen.insert(site) {
                return Err(Error::Invariant(format!("candidate site {site} is duplicated")));
            }
        }
        if self.eval_points.is_empty() || self.ref_points.is_empty() {
            return Err(Error::Invariant("map has no street cells".into()));
        }
        self.candidate_sites = sites;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn bs_height(&self) -> f64 {
        self.bs_height
    }

    pub fn candidate_sites(&self) -> &[Cell] {
        &self.candidate_sites
    }

    pub fn eval_points(&self) -> &[Cell] {
        &self.eval_points
    }

    pub fn ref_points(&self) -> &[Cell] {
        &self.ref_points
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn check(&self, cell: Cell) -> Result<()> {
        check_bounds(self.width, self.height, cell.x as i64, cell.y as i64)
    }

    /// Panics if `cell` is out of bounds.
    pub fn is_building(&self, cell: Cell) -> bool {
        assert!(cell.x < self.width && cell.y < self.height, "cell {cell} out of bounds");
        self.occupied[cell.y * self.width + cell.x]
    }

    /// Building cells in row-major order.
    pub fn buildings(&self) -> Vec<Cell> {
        self.cells().filter(|&c| self.is_building(c)).collect()
    }

    pub fn building_count(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }

    /// Street (non-building) cells in row-major order.
    pub fn street_cells(&self) -> Vec<Cell> {
        self.cells().filter(|&c| !self.is_building(c)).collect()
    }

    fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| Cell::new(x, y)))
    }

    /// Cell centre in meters.
    pub fn position(&self, cell: Cell) -> (f64, f64) {
        (
            (cell.x as f64 + 0.5) * self.cell_size,
            (cell.y as f64 + 0.5) * self.cell_size,
        )
    }

    /// Horizontal distance between two cell centres in meters.
    pub fn distance(&self, a: Cell, b: Cell) -> f64 {
        (a.dist2(b) as f64).sqrt() * self.cell_size
    }

    /// Cells the agent base station may occupy under `space`.
    pub fn placement_cells(&self, space: PlacementSpace) -> Vec<Cell> {
        match space {
            PlacementSpace::CandidateSites => self.candidate_sites.clone(),
            PlacementSpace::StreetCells => self.street_cells(),
        }
    }

    /// Index of the candidate site at `cell`, if any.
    pub fn site_index(&self, cell: Cell) -> Option<usize> {
        self.candidate_sites.iter().position(|&c| c == cell)
    }
}

fn check_bounds(width: usize, height: usize, x: i64, y: i64) -> Result<()> {
    if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
        return Err(Error::OutOfBounds { x, y, width, height });
    }
    Ok(())
}

/// A city together with its fixed, pre-deployed base station.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: Arc<CityMap>,
    pub pre_deployed: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn new(map: Arc<CityMap>, pre_deployed: usize, seed: u64) -> Result<Self> {
        if pre_deployed >= map.candidate_sites().len() {
            return Err(Error::Invariant(format!(
                "pre_deployed index {pre_deployed} is not a valid candidate-site index (have {})",
                map.candidate_sites().len()
            )));
        }
        Ok(Self { map, pre_deployed, seed })
    }

    /// Same city, different pre-deployed site.
    pub fn with_pre_deployed(&self, pre_deployed: usize) -> Result<Self> {
        Self::new(Arc::clone(&self.map), pre_deployed, self.seed)
    }

    pub fn pre_deployed_cell(&self) -> Cell {
        self.map.candidate_sites()[self.pre_deployed]
    }
}

/// On-disk scenario layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buildings: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rects: Vec<[usize; 4]>,
    pub candidate_sites: Vec<[usize; 2]>,
    pub pre_deployed: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bs_height")]
    pub bs_height: f64,
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE
}

fn default_bs_height() -> f64 {
    DEFAULT_BS_HEIGHT
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        let mut buildings: Vec<Cell> = self.buildings.iter().map(|&[x, y]| Cell::new(x, y)).collect();
        for &[x, y, w, h] in &self.rects {
            if x + w > self.width || y + h > self.height {
                return Err(Error::Invariant(format!(
                    "rect [{x}, {y}, {w}, {h}] exceeds the {}x{} grid",
                    self.width, self.height
                )));
            }
            buildings.extend(Rect::new(x, y, w, h).cells());
        }
        let sites = self.candidate_sites.iter().map(|&[x, y]| Cell::new(x, y)).collect();
        let map = CityMap::new(self.width, self.height, self.cell_size, self.bs_height, buildings, sites)?;
        Scenario::new(Arc::new(map), self.pre_deployed, self.seed)
    }

    /// Canonical form: buildings as an explicit row-major cell list.
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let map = &scenario.map;
        Self {
            width: map.width(),
            height: map.height(),
            cell_size: map.cell_size(),
            buildings: map.buildings().iter().map(|c| [c.x, c.y]).collect(),
            rects: Vec::new(),
            candidate_sites: map.candidate_sites().iter().map(|c| [c.x, c.y]).collect(),
            pre_deployed: scenario.pre_deployed,
            seed: scenario.seed,
            bs_height: map.bs_height(),
        }
    }
}

/// Parses a scenario from JSON text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    file.into_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    parse_scenario(&fs::read_to_string(path)?)
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    let mut text = serde_json::to_string_pretty(&ScenarioFile::from_scenario(scenario))
        .expect("scenario serialization is infallible");
    text.push('\n');
    text
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, scenario_to_json(scenario))?;
    Ok(())
}

/// How buildings are laid out by [`generate_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub enum BuildingSpec {
    Rects(Vec<Rect>),
    /// Each cell independently becomes a building with this probability.
    Density(f64),
}

/// Regular block grid: `block_w`x`block_h` blocks separated by streets
/// `street` cells wide, starting with a street along the top and left edges.
/// Blocks that would cross the grid edge are dropped.
pub fn block_layout(width: usize, height: usize, block_w: usize, block_h: usize, street: usize) -> Vec<Rect> {
    let mut rects = Vec::new();
    let mut y = street;
    while y + block_h <= height {
        let mut x = street;
        while x + block_w <= width {
            rects.push(Rect::new(x, y, block_w, block_h));
            x += block_w + street;
        }
        y += block_h + street;
    }
    rects
}

/// Generates a scenario deterministically from `seed`. Candidate sites are a
/// uniform sample of street cells, listed in row-major order.
pub fn generate_scenario(
    width: usize,
    height: usize,
    spec: &BuildingSpec,
    n_sites: usize,
    seed: u64,
) -> Result<Scenario> {
    if width < 4 || height < 4 {
        return Err(Error::Config(format!("grid must be at least 4x4, got {width}x{height}")));
    }
    if n_sites == 0 {
        return Err(Error::Config("at least one candidate site is required".into()));
    }
    let mut rng = rng::substream(seed, streams::GENERATE);
    let mut occupied = vec![false; width * height];
    match spec {
        BuildingSpec::Rects(rects) => {
            for r in rects {
                if r.x + r.w > width || r.y + r.h > height {
                    return Err(Error::Config(format!("rect {r:?} exceeds the {width}x{height} grid")));
                }
                for c in r.cells() {
                    occupied[c.y * width + c.x] = true;
                }
            }
        }
        BuildingSpec::Density(density) => {
            if !(0.0..=1.0).contains(density) {
                return Err(Error::Config(format!("building density must lie in [0, 1], got {density}")));
            }
            for cell in occupied.iter_mut() {
                *cell = rng.random::<f64>() < *density;
            }
        }
    }
    let street: Vec<Cell> = (0..height)
        .flat_map(|y| (0..width).map(move |x| Cell::new(x, y)))
        .filter(|c| !occupied[c.y * width + c.x])
        .collect();
    if street.len() < n_sites {
        return Err(Error::Infeasible(format!(
            "{n_sites} sites requested but only {} street cells remain",
            street.len()
        )));
    }
    let mut picked = index::sample(&mut rng, street.len(), n_sites).into_vec();
    picked.sort_unstable();
    let sites: Vec<Cell> = picked.into_iter().map(|i| street[i]).collect();
    let pre_deployed = rng.random_range(0..n_sites);
    let buildings = (0..width * height)
        .filter(|&i| occupied[i])
        .map(|i| Cell::new(i % width, i / width));
    let map = CityMap::new(width, height, DEFAULT_CELL_SIZE, DEFAULT_BS_HEIGHT, buildings, sites)?;
    Scenario::new(Arc::new(map), pre_deployed, seed)
}

/// Every cell touched by the segment joining the centres of `a` and `b`,
/// including cells touched only at a corner. Starts at `a`, ends at `b`.
pub fn supercover(a: Cell, b: Cell) -> Vec<Cell> {
    let (mut x, mut y) = (a.x as i64, a.y as i64);
    let (dx, dy) = (b.x as i64 - x, b.y as i64 - y);
    let (xstep, ystep) = (dx.signum(), dy.signum());
    let (dx, dy) = (dx.abs(), dy.abs());
    let (ddx, ddy) = (2 * dx, 2 * dy);
    let mut out = vec![a];
    let mut push = |x: i64, y: i64| out.push(Cell::new(x as usize, y as usize));
    if ddx >= ddy {
        let mut error = dx;
        let mut prev = dx;
        for _ in 0..dx {
            x += xstep;
            error += ddy;
            if error > ddx {
                y += ystep;
                error -= ddx;
                match (error + prev).cmp(&ddx) {
                    std::cmp::Ordering::Less => push(x, y - ystep),
                    std::cmp::Ordering::Greater => push(x - xstep, y),
                    std::cmp::Ordering::Equal => {
                        push(x, y - ystep);
                        push(x - xstep, y);
                    }
                }
            }
            push(x, y);
            prev = error;
        }
    } else {
        let mut error = dy;
        let mut prev = dy;
        for _ in 0..dy {
            y += ystep;
            error += ddx;
            if error > ddy {
                x += xstep;
                error -= ddy;
                match (error + prev).cmp(&ddy) {
                    std::cmp::Ordering::Less => push(x - xstep, y),
                    std::cmp::Ordering::Greater => push(x, y - ystep),
                    std::cmp::Ordering::Equal => {
                        push(x - xstep, y);
                        push(x, y - ystep);
                    }
                }
            }
            push(x, y);
            prev = error;
        }
    }
    out
}

/// Number of maximal runs of consecutive building cells along the
/// supercover traversal from `a` to `b`.
pub fn blocked_runs(map: &CityMap, a: Cell, b: Cell) -> Result<usize> {
    map.check(a)?;
    map.check(b)?;
    let mut runs = 0;
    let mut inside = false;
    for cell in supercover(a, b) {
        let blocked = map.is_building(cell);
        if blocked && !inside {
            runs += 1;
        }
        inside = blocked;
    }
    Ok(runs)
}

/// True iff the supercover traversal between `a` and `b` meets no building.
pub fn line_of_sight(map: &CityMap, a: Cell, b: Cell) -> Result<bool> {
    map.check(a)?;
    map.check(b)?;
    Ok(supercover(a, b).into_iter().all(|c| !map.is_building(c)))
}

/// Text rendering: `#` building, `.` street, `s` candidate site,
/// `P` pre-deployed site. One row per `y`.
pub fn render_ascii(scenario: &Scenario) -> String {
    let map = &scenario.map;
    let pre = scenario.pre_deployed_cell();
    let mut out = String::with_capacity((map.width() + 1) * map.height());
    for y in 0..map.height() {
        for x in 0..map.width() {
            let c = Cell::new(x, y);
            out.push(if c == pre {
                'P'
            } else if map.is_building(c) {
                '#'
            } else if map.site_index(c).is_some() {
                's'
            } else {
                '.'
            });
        }
        out.push('\n');
    }
    out
}
