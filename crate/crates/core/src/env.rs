//! The placement MDP: the agent BS walks the street grid with five actions
//! and is rewarded with the coverage / localisation-error ratio of its
//! current placement, minus a penalty for illegal moves.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::city::{Cell, CityMap, PlacementSpace, Scenario};
use crate::error::{Error, Result};
use crate::optimize::{Evaluator, ObjectiveValue};

pub const NUM_ACTIONS: usize = 5;

/// Agent moves. `Up` decreases `y`, `Left` decreases `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Added to the reward of an illegal move.
    pub p_illegal: f64,
    /// Lower bound on the localisation error used in the reward ratio, m.
    pub f2_floor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            p_illegal: -0.1,
            f2_floor: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_illegal <= 0.0) {
            return Err(Error::Config(format!("p_illegal must be <= 0, got {}", self.p_illegal)));
        }
        if !(self.f2_floor > 0.0) {
            return Err(Error::Config(format!("f2_floor must be > 0, got {}", self.f2_floor)));
        }
        Ok(())
    }

    pub fn ratio(&self, value: &ObjectiveValue) -> f64 {
        value.f1 / value.f2.max(self.f2_floor)
    }
}

/// Three binary layers over the grid: buildings, pre-deployed BS, agent BS.
/// Indexed `[layer][x][y]`, so a 19x24 map gives a 3x19x24 tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateTensor {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl StateTensor {
    pub const BUILDINGS: usize = 0;
    pub const PRE_DEPLOYED: usize = 1;
    pub const AGENT: usize = 2;

    pub fn shape(&self) -> (usize, usize, usize) {
        (3, self.width, self.height)
    }

    pub fn get(&self, layer: usize, x: usize, y: usize) -> u8 {
        self.data[(layer * self.width + x) * self.height + y]
    }

    pub fn layer_sum(&self, layer: usize) -> usize {
        let n = self.width * self.height;
        self.data[layer * n..(layer + 1) * n].iter().map(|&v| usize::from(v)).sum()
    }

    /// Channel-last network input of shape `(width, height, 3)`.
    pub fn to_input(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        self.write_input(&mut out);
        out
    }

    pub fn write_input(&self, out: &mut [f64]) {
        let n = self.width * self.height;
        for layer in 0..3 {
            for (cell, &v) in self.data[layer * n..(layer + 1) * n].iter().enumerate() {
                out[cell * 3 + layer] = f64::from(v);
            }
        }
    }
}

/// Builds the three-layer state for the agent BS at `agent`.
pub fn encode_state(scenario: &Scenario, agent: Cell) -> Result<StateTensor> {
    let map = &scenario.map;
    map.check(agent)?;
    if map.is_building(agent) {
        return Err(Error::OnBuilding { x: agent.x, y: agent.y });
    }
    Ok(encode_unchecked(map, scenario.pre_deployed_cell(), agent))
}

fn encode_unchecked(map: &CityMap, pre: Cell, agent: Cell) -> StateTensor {
    let (w, h) = (map.width(), map.height());
    let mut data = vec![0u8; 3 * w * h];
    for x in 0..w {
        for y in 0..h {
            if map.is_building(Cell::new(x, y)) {
                data[x * h + y] = 1;
            }
        }
    }
    data[(w + pre.x) * h + pre.y] = 1;
    data[(2 * w + agent.x) * h + agent.y] = 1;
    StateTensor { width: w, height: h, data }
}

/// Normalised `(pre_x, pre_y, agent_x, agent_y)`, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordState(pub [f64; 4]);

impl CoordState {
    pub fn new(map: &CityMap, pre: Cell, agent: Cell) -> Self {
        let sx = (map.width() - 1) as f64;
        let sy = (map.height() - 1) as f64;
        Self([pre.x as f64 / sx, pre.y as f64 / sy, agent.x as f64 / sx, agent.y as f64 / sy])
    }
}

/// Compact environment state; the full tensor is rebuilt from it on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub pre_deployed: Cell,
    pub agent: Cell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: EnvState,
    pub a: usize,
    pub r: f64,
    pub s_next: EnvState,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub pos: Cell,
    pub reward: f64,
    pub legal: bool,
}

/// One scenario's MDP. Rewards come from a shared [`Evaluator`].
///
/// With [`PlacementSpace::StreetCells`] the reward is evaluated at the
/// agent's own cell. With [`PlacementSpace::CandidateSites`] the agent still
/// walks every street cell, but its placement (and reward) is the nearest
/// candidate site other than the pre-deployed one.
#[derive(Debug, Clone)]
pub struct Env {
    scenario: Scenario,
    evaluator: Arc<Evaluator>,
    reward: RewardConfig,
    pre: Cell,
    placements: Vec<Cell>,
    starts: Vec<Cell>,
}

impl Env {
    pub fn new(scenario: Scenario, evaluator: Arc<Evaluator>, reward: RewardConfig) -> Result<Self> {
        reward.validate()?;
        if !Arc::ptr_eq(evaluator.map(), &scenario.map) && **evaluator.map() != *scenario.map {
            return Err(Error::Config("evaluator and scenario use different maps".into()));
        }
        let pre = scenario.pre_deployed_cell();
        let placements: Vec<Cell> = scenario
            .map
            .placement_cells(evaluator.config().placement)
            .into_iter()
            .filter(|&c| c != pre)
            .collect();
        if placements.is_empty() {
            return Err(Error::IllegalSite("scenario has no legal agent placement".into()));
        }
        let starts: Vec<Cell> = scenario.map.street_cells().into_iter().filter(|&c| c != pre).collect();
        Ok(Self {
            scenario,
            evaluator,
            reward,
            pre,
            placements,
            starts,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn map(&self) -> &CityMap {
        &self.scenario.map
    }

    pub fn evaluator(&self) -> &Arc<Evaluator> {
        &self.evaluator
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn pre_deployed(&self) -> Cell {
        self.pre
    }

    /// Legal agent positions: street cells other than the pre-deployed BS.
    pub fn positions(&self) -> &[Cell] {
        &self.starts
    }

    pub fn is_legal_position(&self, x: i64, y: i64) -> bool {
        let map = self.map();
        map.in_bounds(x, y) && {
            let c = Cell::new(x as usize, y as usize);
            !map.is_building(c) && c != self.pre
        }
    }

    /// Placement cell scored for an agent standing at `pos`. Ties between
    /// equally near candidate sites go to the lower site index.
    pub fn placement_for(&self, pos: Cell) -> Cell {
        match self.evaluator.config().placement {
            PlacementSpace::StreetCells => pos,
            PlacementSpace::CandidateSites => *self
                .placements
                .iter()
                .min_by_key(|c| c.dist2(pos))
                .expect("placements is non-empty"),
        }
    }

    /// Position of `placement_for(pos)` in placement order.
    pub fn placement_index(&self, pos: Cell) -> usize {
        let cell = self.placement_for(pos);
        self.placements.iter().position(|&c| c == cell).expect("placement is legal")
    }

    pub fn objective_at(&self, pos: Cell) -> Result<ObjectiveValue> {
        self.evaluator.evaluate(self.pre, self.placement_for(pos))
    }

    /// Guarded ratio `f1 / max(f2, f2_floor)` at `pos`.
    pub fn ratio_at(&self, pos: Cell) -> Result<f64> {
        Ok(self.reward.ratio(&self.objective_at(pos)?))
    }

    pub fn step(&self, pos: Cell, action: Action) -> Result<StepOutcome> {
        let (dx, dy) = action.delta();
        let (nx, ny) = (pos.x as i64 + dx, pos.y as i64 + dy);
        if self.is_legal_position(nx, ny) {
            let next = Cell::new(nx as usize, ny as usize);
            Ok(StepOutcome {
                pos: next,
                reward: self.ratio_at(next)?,
                legal: true,
            })
        } else {
            Ok(StepOutcome {
                pos,
                reward: self.ratio_at(pos)? + self.reward.p_illegal,
                legal: false,
            })
        }
    }

    /// Uniform random legal start position.
    pub fn reset(&self, rng: &mut impl rand::Rng) -> Cell {
        self.starts[rng.random_range(0..self.starts.len())]
    }

    pub fn state(&self, agent: Cell) -> EnvState {
        EnvState {
            pre_deployed: self.pre,
            agent,
        }
    }

    pub fn encode(&self, agent: Cell) -> Result<StateTensor> {
        encode_state(&self.scenario, agent)
    }

    pub fn coord_state(&self, agent: Cell) -> CoordState {
        CoordState::new(self.map(), self.pre, agent)
    }
}

/// Tensor for an arbitrary compact state on `map`.
pub fn encode_env_state(map: &CityMap, state: &EnvState) -> StateTensor {
    encode_unchecked(map, state.pre_deployed, state.agent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::city::{block_layout, generate_scenario, BuildingSpec, Rect};
    use crate::optimize::{evaluate_placement, EvalConfig};
    use crate::rng::substream;
    use proptest::prelude::*;

    fn env_for(s: &Scenario, cfg: EvalConfig) -> Env {
        let ev = Arc::new(Evaluator::for_scenario(s, cfg).unwrap());
        Env::new(s.clone(), ev, RewardConfig::default()).unwrap()
    }

    fn toy() -> Scenario {
        let spec = BuildingSpec::Rects(vec![Rect::new(2, 2, 2, 2)]);
        generate_scenario(7, 6, &spec, 5, 9).unwrap()
    }

    #[test]
    fn empty_map_state_has_two_ones() {
        let map = CityMap::new(5, 4, 10.0, 9.0, [], vec![Cell::new(0, 0), Cell::new(4, 3)]).unwrap();
        let s = Scenario::new(Arc::new(map), 0, 0).unwrap();
        let t = encode_state(&s, Cell::new(4, 3)).unwrap();
        assert_eq!(t.layer_sum(0), 0);
        assert_eq!(t.layer_sum(1), 1);
        assert_eq!(t.layer_sum(2), 1);
        assert_eq!(t.get(1, 0, 0), 1);
        assert_eq!(t.get(2, 4, 3), 1);
    }

    #[test]
    fn default_grid_tensor_shape() {
        let s = generate_scenario(19, 24, &BuildingSpec::Rects(block_layout(19, 24, 4, 5, 2)), 12, 7).unwrap();
        let agent = s.map.street_cells()[3];
        let t = encode_state(&s, agent).unwrap();
        assert_eq!(t.shape(), (3, 19, 24));
        assert_eq!(t.layer_sum(0), s.map.building_count());
        assert_eq!(t.to_input().len(), 3 * 19 * 24);
    }

    #[test]
    fn moving_agent_changes_two_entries() {
        let s = toy();
        let a = Cell::new(0, 0);
        let b = Cell::new(1, 0);
        let ta = encode_state(&s, a).unwrap();
        let tb = encode_state(&s, b).unwrap();
        let diff = ta.data.iter().zip(&tb.data).filter(|(x, y)| x != y).count();
        assert_eq!(diff, 2);
        assert!(matches!(encode_state(&s, Cell::new(2, 2)), Err(Error::OnBuilding { .. })));
    }

    #[test]
    fn input_layout_is_channel_last() {
        let s = toy();
        let t = encode_state(&s, Cell::new(0, 5)).unwrap();
        let input = t.to_input();
        let h = s.map.height();
        for x in 0..s.map.width() {
            for y in 0..h {
                for layer in 0..3 {
                    assert_eq!(input[(x * h + y) * 3 + layer], f64::from(t.get(layer, x, y)));
                }
            }
        }
    }

    #[test]
    fn wall_collision_is_penalised() {
        let s = toy();
        let env = env_for(&s, EvalConfig::default());
        let pos = Cell::new(1, 2);
        assert!(!s.map.is_building(pos) && pos != s.pre_deployed_cell());
        let out = env.step(pos, Action::Right).unwrap();
        assert!(!out.legal);
        assert_eq!(out.pos, pos);
        assert_eq!(out.reward, env.ratio_at(pos).unwrap() - 0.1);
        // off the grid
        let edge = env.step(Cell::new(0, 0), Action::Left).unwrap();
        assert!(!edge.legal);
        assert_eq!(edge.pos, Cell::new(0, 0));
    }

    #[test]
    fn moving_onto_pre_deployed_is_illegal() {
        let s = toy();
        let env = env_for(&s, EvalConfig::default());
        let pre = s.pre_deployed_cell();
        let neighbour = [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .find_map(|&(dx, dy)| {
                let (x, y) = (pre.x as i64 + dx, pre.y as i64 + dy);
                env.is_legal_position(x, y).then(|| (Cell::new(x as usize, y as usize), (-dx, -dy)))
            })
            .unwrap();
        let action = match neighbour.1 {
            (1, 0) => Action::Right,
            (-1, 0) => Action::Left,
            (0, 1) => Action::Down,
            _ => Action::Up,
        };
        let out = env.step(neighbour.0, action).unwrap();
        assert!(!out.legal);
        assert_eq!(out.pos, neighbour.0);
    }

    #[test]
    fn stay_reward_is_the_ratio() {
        let s = toy();
        let cfg = EvalConfig { placement: PlacementSpace::StreetCells, ..EvalConfig::default() };
        let env = env_for(&s, cfg);
        let pos = *env.positions().last().unwrap();
        let out = env.step(pos, Action::Stay).unwrap();
        assert!(out.legal);
        let v = evaluate_placement(&s, &cfg, pos).unwrap();
        assert_eq!(out.reward, v.f1 / v.f2.max(0.1));
    }

    #[test]
    fn legal_move_reward_matches_evaluate_placement() {
        let s = toy();
        let cfg = EvalConfig::default();
        let env = env_for(&s, cfg);
        let pos = env.positions()[0];
        for a in Action::ALL {
            let out = env.step(pos, a).unwrap();
            if out.legal {
                let site = env.placement_for(out.pos);
                assert!(s.map.site_index(site).is_some());
                let v = evaluate_placement(&s, &cfg, site).unwrap();
                assert_eq!(out.reward, v.ratio);
            }
        }
    }

    #[test]
    fn snapping_prefers_nearest_then_lowest_index() {
        let map = CityMap::new(5, 2, 10.0, 9.0, [], vec![Cell::new(0, 0), Cell::new(2, 0), Cell::new(4, 0)]).unwrap();
        let s = Scenario::new(Arc::new(map), 2, 0).unwrap();
        let env = env_for(&s, EvalConfig::default());
        assert_eq!(env.placement_for(Cell::new(1, 0)), Cell::new(0, 0));
        assert_eq!(env.placement_for(Cell::new(3, 1)), Cell::new(2, 0));
        // the pre-deployed site is never a placement
        assert_eq!(env.placement_for(Cell::new(4, 0)), Cell::new(2, 0));
    }

    #[test]
    fn f2_floor_guards_the_ratio() {
        let cfg = RewardConfig::default();
        let v = ObjectiveValue::new(0.5, 0.0);
        assert_eq!(cfg.ratio(&v), 5.0);
        assert!(RewardConfig { p_illegal: 0.1, ..cfg }.validate().is_err());
        assert!(RewardConfig { f2_floor: 0.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn single_free_cell_reset() {
        let buildings: Vec<Cell> = (0..3)
            .flat_map(|y| (0..3).map(move |x| Cell::new(x, y)))
            .filter(|c| *c != Cell::new(0, 0) && *c != Cell::new(2, 2))
            .collect();
        let map = CityMap::new(3, 3, 10.0, 9.0, buildings, vec![Cell::new(0, 0), Cell::new(2, 2)]).unwrap();
        let s = Scenario::new(Arc::new(map), 0, 0).unwrap();
        let cfg = EvalConfig { knn: crate::locate::KnnConfig { k: 1 }, ..EvalConfig::default() };
        let env = env_for(&s, cfg);
        let mut rng = substream(1, "reset");
        for _ in 0..20 {
            assert_eq!(env.reset(&mut rng), Cell::new(2, 2));
        }
    }

    #[test]
    fn reset_is_seeded_and_uniform() {
        // free cells: row 0 and (0,1), (1,1); the pre-deployed BS takes (0,0)
        let b = vec![Cell::new(0, 2), Cell::new(1, 2), Cell::new(2, 2), Cell::new(2, 1)];
        let map = CityMap::new(3, 3, 10.0, 9.0, b, vec![Cell::new(0, 0), Cell::new(2, 0)]).unwrap();
        let s = Scenario::new(Arc::new(map), 0, 0).unwrap();
        let env = env_for(&s, EvalConfig::default());
        assert_eq!(env.positions().len(), 4);

        let run = |seed| {
            let mut rng = substream(seed, "reset");
            (0..1000).map(|_| env.reset(&mut rng)).collect::<Vec<_>>()
        };
        let a = run(5);
        assert_eq!(a, run(5));
        // binomial(1000, 1/4): mean 250, sigma = sqrt(1000 * 0.25 * 0.75)
        let sigma = (1000.0f64 * 0.25 * 0.75).sqrt();
        for &c in env.positions() {
            let n = a.iter().filter(|&&p| p == c).count() as f64;
            assert!((n - 250.0).abs() <= 3.0 * sigma, "{c}: {n}");
        }
    }

    proptest! {
        #[test]
        fn steps_preserve_invariants(seed in 0u64..200, actions in proptest::collection::vec(0usize..5, 1..30)) {
            let s = generate_scenario(9, 8, &BuildingSpec::Density(0.25), 4, seed);
            prop_assume!(s.is_ok());
            let s = s.unwrap();
            let env = env_for(&s, EvalConfig::default());
            let mut rng = substream(seed, "reset");
            let mut pos = env.reset(&mut rng);
            for a in actions {
                let out = env.step(pos, Action::from_index(a).unwrap()).unwrap();
                let moved = pos.x.abs_diff(out.pos.x) + pos.y.abs_diff(out.pos.y);
                if out.legal {
                    prop_assert!(moved <= 1);
                    prop_assert_eq!(out.reward, env.ratio_at(out.pos).unwrap());
                } else {
                    prop_assert_eq!(out.pos, pos);
                    prop_assert_eq!(out.reward, env.ratio_at(pos).unwrap() - 0.1);
                }
                let t = env.encode(out.pos).unwrap();
                prop_assert_eq!(t.layer_sum(0), s.map.building_count());
                prop_assert_eq!(t.layer_sum(1), 1);
                prop_assert_eq!(t.layer_sum(2), 1);
                pos = out.pos;
            }
        }
    }
}
