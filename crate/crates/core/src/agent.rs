//! DQN training with experience replay and a target network, and the greedy
//! rollout that turns a trained network into a placement.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::city::{Cell, CityMap};
use crate::env::{encode_env_state, Action, CoordState, Env, EnvState, Transition, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Arch, ArchConfig, LrSchedule, QNetwork};
use crate::optimize::{Method, ObjectiveValue, PlacementResult};
use crate::rng::{self, substream};

/// Bounded FIFO store of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        })
    }

    /// Appends `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// `n` distinct stored transitions chosen uniformly at random.
    pub fn sample(&self, n: usize, rng: &mut impl rand::Rng) -> Result<Vec<Transition>> {
        if n > self.items.len() {
            return Err(Error::Invariant(format!(
                "cannot sample {n} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok(index::sample(rng, self.items.len(), n).into_iter().map(|i| self.items[i]).collect())
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of the
/// episodes, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize, episodes: usize) -> f64 {
        let span = self.decay_fraction * episodes as f64;
        if span <= 0.0 || episode as f64 >= span {
            return self.end;
        }
        self.start + (self.end - self.start) * (episode as f64 / span)
    }
}

/// Which training scenarios each episode draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Curriculum {
    /// Episode `e` uses training scenario `e mod n`.
    RoundRobin,
    /// Every episode uses the first training scenario.
    FirstOnly,
}

impl Curriculum {
    /// Round-robin for the grid-state network; the coordinate-state baseline
    /// is trained on a single scenario.
    pub fn default_for(arch: Arch) -> Self {
        match arch {
            Arch::TraditionalMlp => Curriculum::FirstOnly,
            _ => Curriculum::RoundRobin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient updates between target-network syncs.
    pub target_sync: usize,
    pub epsilon: EpsilonSchedule,
    pub lr: LrSchedule,
    pub rollout_steps: usize,
    pub train_fraction: f64,
    pub arch: ArchConfig,
    /// Defaults to [`Curriculum::default_for`] the trained architecture.
    pub curriculum: Option<Curriculum>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            steps_per_episode: 200,
            gamma: 0.9,
            batch_size: 64,
            replay_capacity: 20_000,
            target_sync: 50,
            epsilon: EpsilonSchedule::default(),
            lr: LrSchedule::default(),
            rollout_steps: 50,
            train_fraction: 0.7,
            arch: ArchConfig::default(),
            curriculum: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("batch size must be in 1..=replay capacity");
        }
        if self.target_sync == 0 {
            return bad("target sync interval must be at least 1");
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return bad("episodes and steps per episode must be positive");
        }
        let e = &self.epsilon;
        if ![e.start, e.end].iter().all(|v| (0.0..=1.0).contains(v)) || !(0.0..=1.0).contains(&e.decay_fraction) {
            return bad("epsilon values and decay fraction must lie in [0, 1]");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train fraction must be in (0, 1)");
        }
        self.lr.validate()
    }
}

/// Discounted return `sum_l gamma^l r_l`.
pub fn compute_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut g = 0.0;
    let mut w = 1.0;
    for r in rewards {
        g += w * r;
        w *= gamma;
    }
    g
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action. A uniform draw is always consumed so the random
/// stream does not depend on epsilon.
pub fn select_action(net: &QNetwork, input: &[f64], epsilon: f64, rng: &mut impl rand::Rng) -> Result<usize> {
    let u: f64 = rng.random();
    if u < epsilon {
        return Ok(rng.random_range(0..NUM_ACTIONS));
    }
    Ok(argmax(&net.forward(input)?))
}

/// Writes the network input for `state` into `out`.
pub fn encode_input(arch: Arch, map: &CityMap, state: &EnvState, out: &mut [f64]) {
    match arch {
        Arch::TraditionalMlp => out.copy_from_slice(&CoordState::new(map, state.pre_deployed, state.agent).0),
        _ => encode_env_state(map, state).write_input(out),
    }
}

fn input_vec(arch: Arch, map: &CityMap, state: &EnvState) -> Vec<f64> {
    let mut out = vec![0.0; input_len(arch, map)];
    encode_input(arch, map, state, &mut out);
    out
}

fn input_len(arch: Arch, map: &CityMap) -> usize {
    match arch {
        Arch::TraditionalMlp => 4,
        _ => map.width() * map.height() * 3,
    }
}

/// Fresh, initialised network of the given family for `map`.
pub fn build_network(arch: Arch, map: &CityMap, cfg: &ArchConfig, seed: u64) -> Result<QNetwork> {
    let mut net = match arch {
        Arch::ProposedConv => QNetwork::proposed(map.width(), map.height(), cfg)?,
        Arch::TraditionalMlp => QNetwork::traditional(cfg)?,
        Arch::Custom => return Err(Error::Config("custom networks cannot be built from a config".into())),
    };
    net.init_uniform(&mut substream(seed, rng::streams::INIT));
    Ok(net)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_reward: f64,
    /// Mean mini-batch loss over the episode's updates; `None` before the
    /// buffer first holds a full batch.
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub lr: f64,
}

impl EpisodeLog {
    pub const CSV_HEADER: &'static str = "episode,mean_reward,loss,epsilon,lr";

    pub fn csv_row(&self) -> String {
        let loss = self.loss.map(|l| l.to_string()).unwrap_or_default();
        format!("{},{},{},{},{}", self.episode, self.mean_reward, loss, self.epsilon, self.lr)
    }
}

pub fn log_csv(rows: &[EpisodeLog]) -> String {
    let mut s = String::from(EpisodeLog::CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// What happened during one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub transition: Transition,
    /// Mini-batch loss if a gradient update ran.
    pub loss: Option<f64>,
    /// True if the target network was synced after this step's update.
    pub synced: bool,
    pub episode_done: bool,
}

/// Step-by-step DQN training state.
pub struct Trainer {
    envs: Vec<Env>,
    map: Arc<CityMap>,
    arch: Arch,
    cfg: TrainConfig,
    curriculum: Curriculum,
    online: QNetwork,
    target: QNetwork,
    adam: AdamState,
    replay: ReplayBuffer,
    reset_rng: rng::Rng,
    eps_rng: rng::Rng,
    sample_rng: rng::Rng,
    episode: usize,
    t: usize,
    pos: Option<Cell>,
    updates: u64,
    ep_reward: f64,
    ep_loss: f64,
    ep_updates: usize,
    log: Vec<EpisodeLog>,
    scratch: Vec<f64>,
    /// max_a Q(s, a; target) per state, valid until the next sync.
    target_max: HashMap<EnvState, f64>,
}

impl Trainer {
    /// All `envs` must share one city map; they differ in the pre-deployed BS.
    pub fn new(envs: Vec<Env>, arch: Arch, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = envs.first().ok_or_else(|| Error::Config("at least one training scenario is required".into()))?;
        let map = Arc::clone(&first.scenario().map);
        if envs.iter().any(|e| !Arc::ptr_eq(&e.scenario().map, &map) && *e.scenario().map != *map) {
            return Err(Error::Config("all training scenarios must share one city map".into()));
        }
        let online = build_network(arch, &map, &cfg.arch, cfg.seed)?;
        let target = online.clone();
        let adam = AdamState::new(online.param_count(), cfg.lr.clone())?;
        let scratch = vec![0.0; input_len(arch, &map)];
        Ok(Self {
            curriculum: cfg.curriculum.unwrap_or_else(|| Curriculum::default_for(arch)),
            replay: ReplayBuffer::new(cfg.replay_capacity)?,
            reset_rng: substream(cfg.seed, rng::streams::RESET),
            eps_rng: substream(cfg.seed, rng::streams::EPSILON),
            sample_rng: substream(cfg.seed, rng::streams::SAMPLING),
            envs,
            map,
            arch,
            cfg,
            online,
            target,
            adam,
            episode: 0,
            t: 0,
            pos: None,
            updates: 0,
            ep_reward: 0.0,
            ep_loss: 0.0,
            ep_updates: 0,
            log: Vec::new(),
            scratch,
            target_max: HashMap::new(),
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.cfg.episodes
    }

    pub fn log(&self) -> &[EpisodeLog] {
        &self.log
    }

    pub fn into_network(self) -> QNetwork {
        self.online
    }

    fn env_index(&self) -> usize {
        match self.curriculum {
            Curriculum::RoundRobin => self.episode % self.envs.len(),
            Curriculum::FirstOnly => 0,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon.value(self.episode, self.cfg.episodes)
    }

    /// One environment step, followed by one gradient update once the replay
    /// buffer holds a full batch.
    pub fn step(&mut self) -> Result<StepInfo> {
        if self.is_finished() {
            return Err(Error::Invariant("training already finished".into()));
        }
        let env = &self.envs[self.env_index()];
        let pos = match self.pos {
            Some(p) => p,
            None => env.reset(&mut self.reset_rng),
        };
        let s = env.state(pos);
        encode_input(self.arch, &self.map, &s, &mut self.scratch);
        let epsilon = self.epsilon();
        let a = select_action(&self.online, &self.scratch, epsilon, &mut self.eps_rng)?;
        let out = env.step(pos, Action::ALL[a])?;
        let transition = Transition {
            s,
            a,
            r: out.reward,
            s_next: env.state(out.pos),
            // Episodes end on a step budget, not in an absorbing state.
            terminal: false,
        };
        self.replay.push(transition);
        self.pos = Some(out.pos);
        self.ep_reward += out.reward;

        let mut loss = None;
        let mut synced = false;
        if self.replay.len() >= self.cfg.batch_size {
            let l = self.update()?;
            loss = Some(l);
            self.ep_loss += l;
            self.ep_updates += 1;
            if self.updates % self.cfg.target_sync as u64 == 0 {
                self.target.copy_from(&self.online)?;
                self.target_max.clear();
                synced = true;
            }
        }

        self.t += 1;
        let episode_done = self.t == self.cfg.steps_per_episode;
        if episode_done {
            self.log.push(EpisodeLog {
                episode: self.episode,
                mean_reward: self.ep_reward / self.t as f64,
                loss: (self.ep_updates > 0).then(|| self.ep_loss / self.ep_updates as f64),
                epsilon,
                lr: self.cfg.lr.lr(self.episode),
            });
            self.episode += 1;
            self.t = 0;
            self.pos = None;
            self.ep_reward = 0.0;
            self.ep_loss = 0.0;
            self.ep_updates = 0;
        }
        Ok(StepInfo {
            transition,
            loss,
            synced,
            episode_done,
        })
    }

    /// Mini-batch gradient step on the mean squared TD error; returns the loss.
    fn update(&mut self) -> Result<f64> {
        let batch = self.replay.sample(self.cfg.batch_size, &mut self.sample_rng)?;
        let n = batch.len() as f64;
        let mut grads = vec![0.0; self.online.param_count()];
        let mut loss = 0.0;
        for tr in &batch {
            let y = if tr.terminal {
                tr.r
            } else {
                let v = match self.target_max.get(&tr.s_next) {
                    Some(&v) => v,
                    None => {
                        encode_input(self.arch, &self.map, &tr.s_next, &mut self.scratch);
                        let v = self.target.forward(&self.scratch)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
                        self.target_max.insert(tr.s_next, v);
                        v
                    }
                };
                tr.r + self.cfg.gamma * v
            };
            encode_input(self.arch, &self.map, &tr.s, &mut self.scratch);
            loss += self.online.accumulate_td(&self.scratch, tr.a, y, 1.0 / n, &mut grads)? / n;
        }
        adam_step(&mut self.online, &mut self.adam, &grads, self.episode)?;
        self.updates += 1;
        Ok(loss)
    }

    /// Runs steps until the current episode ends and returns its log row.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        while !self.step()?.episode_done {}
        Ok(*self.log.last().expect("an episode just finished"))
    }
}

/// Seeded choice of `count` distinct pre-deployed site indices out of
/// `n_sites`, returned in ascending order.
pub fn choose_positions(n_sites: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > n_sites {
        return Err(Error::Config(format!("cannot choose {count} pre-deployed positions from {n_sites} sites")));
    }
    let mut rng = substream(seed, "positions");
    let mut v = index::sample(&mut rng, n_sites, count).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// Seeded train/test split. The training share is `round(fraction * n)`,
/// clamped so both sides are non-empty.
pub fn split_train_test(items: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if items.len() < 2 {
        return Err(Error::Config("a train/test split needs at least two pre-deployed positions".into()));
    }
    let n_train = ((fraction * items.len() as f64).round() as usize).clamp(1, items.len() - 1);
    let mut rng = substream(seed, rng::streams::SPLIT);
    let order = index::sample(&mut rng, items.len(), items.len()).into_vec();
    let mut train: Vec<usize> = order[..n_train].iter().map(|&i| items[i]).collect();
    let mut test: Vec<usize> = order[n_train..].iter().map(|&i| items[i]).collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Trained network plus its per-episode log.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub network: QNetwork,
    pub log: Vec<EpisodeLog>,
}

/// Trains a network of family `arch` on `envs`, calling `progress` after
/// every episode.
pub fn train(envs: Vec<Env>, arch: Arch, cfg: &TrainConfig, mut progress: impl FnMut(&EpisodeLog)) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(envs, arch, cfg.clone())?;
    while !trainer.is_finished() {
        let row = trainer.run_episode()?;
        progress(&row);
    }
    let log = trainer.log.clone();
    Ok(TrainOutput {
        network: trainer.into_network(),
        log,
    })
}

fn method_for(arch: Arch) -> Method {
    match arch {
        Arch::TraditionalMlp => Method::DqnTraditional,
        _ => Method::DqnProposed,
    }
}

/// Greedy rollout of `steps` actions from a random start; returns the best
/// placement visited (highest ratio, ties to the earliest placement in
/// placement order).
pub fn apply(net: &QNetwork, env: &Env, steps: usize, rng: &mut impl rand::Rng) -> Result<PlacementResult> {
    let start = env.reset(rng);
    apply_from(net, env, start, steps)
}

/// [`apply`] from a fixed start cell.
pub fn apply_from(net: &QNetwork, env: &Env, start: Cell, steps: usize) -> Result<PlacementResult> {
    let arch = net.arch();
    let map = env.map();
    if net.input_shape().len() != input_len(arch, map) {
        return Err(Error::Shape {
            expected: format!("a network for a {}x{} map", map.width(), map.height()),
            got: format!("{:?}", net.input_shape()),
        });
    }
    if !env.is_legal_position(start.x as i64, start.y as i64) {
        return Err(Error::IllegalSite(format!("rollout start {start}")));
    }
    let mut pos = start;
    let mut visited = vec![start];
    for _ in 0..steps {
        let q = net.forward(&input_vec(arch, map, &env.state(pos)))?;
        pos = env.step(pos, Action::ALL[argmax(&q)])?.pos;
        visited.push(pos);
    }
    let mut best: Option<(usize, Cell, ObjectiveValue)> = None;
    for &p in &visited {
        let idx = env.placement_index(p);
        let obj = env.objective_at(p)?;
        let better = match &best {
            None => true,
            Some((bi, _, bo)) => obj.ratio > bo.ratio || (obj.ratio == bo.ratio && idx < *bi),
        };
        if better {
            best = Some((idx, env.placement_for(p), obj));
        }
    }
    let (_, cell, objective) = best.expect("at least the start was visited");
    Ok(PlacementResult {
        cell,
        site_index: map.site_index(cell),
        objective,
        method: method_for(arch),
    })
}
