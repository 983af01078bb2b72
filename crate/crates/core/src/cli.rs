//! Command-line front end: `gen`, `bruteforce`, `tradeoff`, `train`, `eval`.
//!
//! Every command reads an optional JSON [`RunConfig`]; flags override the
//! file. Outputs go to `--out` (or `$BSPLACE_OUT`, default `out`).

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agent::{self, choose_positions, split_train_test, TrainConfig};
use crate::city::{self, block_layout, generate_scenario, BuildingSpec, Scenario};
use crate::env::{Env, RewardConfig};
use crate::error::{Error, Result};
use crate::nn::{Arch, QNetwork};
use crate::optimize::{brute_force, Criterion, EvalConfig, Evaluator, Method, PlacementResult};
use crate::rng::{self, substream};

/// Scenario generator settings used when no `--scenario` file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    pub block_w: usize,
    pub block_h: usize,
    pub street: usize,
    /// Random per-cell building density; replaces the block layout when set.
    pub density: Option<f64>,
    pub sites: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 19,
            height: 24,
            block_w: 4,
            block_h: 5,
            street: 2,
            density: None,
            sites: 30,
        }
    }
}

impl GeneratorConfig {
    pub fn generate(&self, seed: u64) -> Result<Scenario> {
        let spec = match self.density {
            Some(d) => BuildingSpec::Density(d),
            None => BuildingSpec::Rects(block_layout(self.width, self.height, self.block_w, self.block_h, self.street)),
        };
        generate_scenario(self.width, self.height, &spec, self.sites, seed)
    }
}

/// Merged experiment configuration. `seed` is the single root seed; it
/// replaces `train.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub eval: EvalConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    /// Pre-deployed positions drawn from the candidate sites before the
    /// train/test split.
    pub positions: usize,
    pub arch: Arch,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenario: None,
            generator: GeneratorConfig::default(),
            eval: EvalConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            positions: 10,
            arch: Arch::ProposedConv,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.eval.validate()?;
        self.reward.validate()?;
        self.train.validate()?;
        if self.positions < 2 {
            return Err(Error::Config("at least two pre-deployed positions are needed for a split".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        Ok(())
    }

    fn apply_flags(&mut self, g: &GlobalArgs) {
        if let Some(seed) = g.seed {
            self.seed = seed;
        }
        if let Some(d) = g.delta_dbm {
            self.eval.radio.delta = d;
        }
        if let Some(k) = g.k {
            self.eval.knn.k = k;
        }
        if g.threads.is_some() {
            self.threads = g.threads;
        }
        if let Some(s) = &g.scenario {
            self.scenario = Some(s.clone());
        }
        self.train.seed = self.seed;
    }

    /// The scenario file if one is configured, else a generated scenario.
    pub fn scenario(&self) -> Result<Scenario> {
        match &self.scenario {
            Some(p) => city::load_scenario(p),
            None => self.generator.generate(self.seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Proposed,
    Traditional,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Proposed => Arch::ProposedConv,
            ArchArg::Traditional => Arch::TraditionalMlp,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bsplace", version, about = "Base-station placement for joint coverage and localisation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Scenario JSON file (generated from the config when absent).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Run configuration JSON file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "BSPLACE_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for objective evaluation; 1 gives byte-identical reruns.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Coverage threshold in dBm.
    #[arg(long = "delta-dbm", global = true, allow_hyphen_values = true)]
    pub delta_dbm: Option<f64>,
    /// Neighbours used by the fingerprint locator.
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario file.
    Gen,
    /// Evaluate every candidate site and report the BFC/BFL/BFJ winners.
    Bruteforce,
    /// Per-site coverage/localisation table for trade-off plots.
    Tradeoff,
    /// Train a Q-network on the training split of pre-deployed positions.
    Train {
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare oracles and trained networks on the held-out positions.
    Eval {
        /// Checkpoint to evaluate; repeat to compare architectures.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Split file written by `train` (recomputed from the seed if absent).
        #[arg(long)]
        split: Option<PathBuf>,
    },
}

/// Positions and their train/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub positions: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn compute(n_sites: usize, count: usize, fraction: f64, seed: u64) -> Result<Self> {
        let positions = choose_positions(n_sites, count.min(n_sites), seed)?;
        let (train, test) = split_train_test(&positions, fraction, seed)?;
        Ok(Self {
            seed,
            positions,
            train,
            test,
        })
    }
}

pub fn run(cli: Cli, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_flags(&cli.global);
    if let Command::Train { arch, episodes } = &cli.command {
        if let Some(a) = arch {
            cfg.arch = (*a).into();
        }
        if let Some(e) = episodes {
            cfg.train.episodes = *e;
        }
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = cli.global.out.clone();
    fs::create_dir_all(&out)?;
    pool.install(|| match &cli.command {
        Command::Gen => cmd_gen(&cfg, &out, stdout),
        Command::Bruteforce => cmd_bruteforce(&cfg, &out, stdout),
        Command::Tradeoff => cmd_tradeoff(&cfg, &out, stdout),
        Command::Train { .. } => cmd_train(&cfg, &out, stdout),
        Command::Eval { checkpoints, split } => cmd_eval(&cfg, checkpoints, split.as_deref(), &out, stdout),
    })
}

fn cmd_gen(cfg: &RunConfig, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let scenario = cfg.generator.generate(cfg.seed)?;
    let path = out.join("scenario.json");
    city::save_scenario(&scenario, &path)?;
    if city::load_scenario(&path)? != scenario {
        return Err(Error::Invariant("written scenario does not reload to the same value".into()));
    }
    fs::write(out.join("scenario.txt"), city::render_ascii(&scenario))?;
    writeln!(
        stdout,
        "wrote {} ({}x{}, {} buildings, {} candidate sites)",
        path.display(),
        scenario.map.width(),
        scenario.map.height(),
        scenario.map.building_count(),
        scenario.map.candidate_sites().len()
    )?;
    Ok(())
}

fn describe(r: &PlacementResult) -> String {
    let site = r.site_index.map(|i| format!(" site {i}")).unwrap_or_default();
    format!(
        "{:<15} {}{} f1={:.4} f2={:.4} m ratio={:.6}",
        r.method.to_string(),
        r.cell,
        site,
        r.objective.f1,
        r.objective.f2,
        r.objective.ratio
    )
}

fn cmd_bruteforce(cfg: &RunConfig, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let scenario = cfg.scenario()?;
    let ev = Evaluator::for_scenario(&scenario, cfg.eval)?;
    let table = ev.site_table(&scenario)?;
    fs::write(out.join("sites.csv"), table.to_csv())?;
    let mut summary = format!("pre-deployed BS at {}; {} legal sites\n", scenario.pre_deployed_cell(), table.rows.len());
    for c in [Criterion::Coverage, Criterion::Localisation, Criterion::Joint] {
        let _ = writeln!(summary, "{}", describe(&table.best(c)));
    }
    fs::write(out.join("summary.txt"), &summary)?;
    stdout.write_all(summary.as_bytes())?;
    Ok(())
}

fn cmd_tradeoff(cfg: &RunConfig, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let scenario = cfg.scenario()?;
    let ev = Evaluator::for_scenario(&scenario, cfg.eval)?;
    let table = ev.site_table(&scenario)?;
    let path = out.join("tradeoff.csv");
    fs::write(&path, table.to_csv())?;
    writeln!(stdout, "wrote {} ({} sites)", path.display(), table.rows.len())?;
    Ok(())
}

fn envs_for(scenario: &Scenario, ev: &Arc<Evaluator>, reward: RewardConfig, positions: &[usize]) -> Result<Vec<Env>> {
    positions
        .iter()
        .map(|&p| Env::new(scenario.with_pre_deployed(p)?, Arc::clone(ev), reward))
        .collect()
}

fn checkpoint_name(arch: Arch) -> String {
    format!("{arch}.ckpt")
}

fn cmd_train(cfg: &RunConfig, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let scenario = cfg.scenario()?;
    let split = Split::compute(scenario.map.candidate_sites().len(), cfg.positions, cfg.train.train_fraction, cfg.seed)?;
    fs::write(out.join("split.json"), serde_json::to_string_pretty(&split).expect("serialisable") + "\n")?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg).expect("serialisable") + "\n")?;
    let ev = Arc::new(Evaluator::for_scenario(&scenario, cfg.eval)?);
    let envs = envs_for(&scenario, &ev, cfg.reward, &split.train)?;
    writeln!(
        stdout,
        "training {} network: {} episodes x {} steps on positions {:?} (test {:?})",
        cfg.arch, cfg.train.episodes, cfg.train.steps_per_episode, split.train, split.test
    )?;
    let mut progress_err = None;
    let result = agent::train(envs, cfg.arch, &cfg.train, |row| {
        if progress_err.is_none() {
            if let Err(e) = writeln!(stdout, "{}", row.csv_row()) {
                progress_err = Some(e);
            }
        }
    })?;
    if let Some(e) = progress_err {
        return Err(e.into());
    }
    let ckpt = out.join(checkpoint_name(cfg.arch));
    result.network.save(&ckpt)?;
    QNetwork::load(&ckpt)?;
    fs::write(out.join(format!("{}_log.csv", cfg.arch)), agent::log_csv(&result.log))?;
    writeln!(stdout, "wrote {}", ckpt.display())?;
    Ok(())
}

fn method_letter(m: Method) -> char {
    match m {
        Method::Bfc => 'C',
        Method::Bfl => 'L',
        Method::Bfj => 'J',
        Method::DqnTraditional => 'T',
        Method::DqnProposed => 'D',
    }
}

/// ASCII map with each method's placement marked by its letter, followed by
/// a legend. Later entries overwrite earlier ones on shared cells; the legend
/// lists every placement.
pub fn placement_map(scenario: &Scenario, results: &[PlacementResult]) -> String {
    let mut rows: Vec<Vec<char>> = city::render_ascii(scenario).lines().map(|l| l.chars().collect()).collect();
    for r in results {
        rows[r.cell.y][r.cell.x] = method_letter(r.method);
    }
    let mut s: String = rows.into_iter().map(|r| r.into_iter().collect::<String>() + "\n").collect();
    let _ = writeln!(s, "P pre-deployed {}", scenario.pre_deployed_cell());
    for r in results {
        let _ = writeln!(s, "{} {}", method_letter(r.method), describe(r));
    }
    s
}

pub const REPORT_HEADER: &str = "pre_index,pre_x,pre_y,method,x,y,site_index,f1,f2,ratio";

fn cmd_eval(cfg: &RunConfig, checkpoints: &[PathBuf], split_path: Option<&Path>, out: &Path, stdout: &mut (dyn Write + Send)) -> Result<()> {
    let scenario = cfg.scenario()?;
    let split = match split_path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => Split::compute(scenario.map.candidate_sites().len(), cfg.positions, cfg.train.train_fraction, cfg.seed)?,
    };
    let mut nets: Vec<QNetwork> = Vec::new();
    for p in checkpoints {
        let net = QNetwork::load(p).map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))?;
        if nets.iter().any(|n| n.arch() == net.arch()) {
            return Err(Error::Config(format!("two checkpoints of the {} architecture", net.arch())));
        }
        nets.push(net);
    }
    // Traditional before proposed, matching the report's column order.
    nets.sort_by_key(|n| n.arch() != Arch::TraditionalMlp);
    let ev = Arc::new(Evaluator::for_scenario(&scenario, cfg.eval)?);

    let mut methods = vec![Method::Bfc, Method::Bfl, Method::Bfj];
    methods.extend(nets.iter().map(|n| match n.arch() {
        Arch::TraditionalMlp => Method::DqnTraditional,
        _ => Method::DqnProposed,
    }));
    let mut report = String::from(REPORT_HEADER);
    report.push('\n');
    let mut wide = String::from("pre_index");
    for m in &methods {
        let _ = write!(wide, ",{m}_f1,{m}_f2,{m}_ratio");
    }
    wide.push('\n');
    let mut maps = String::new();

    for &pre in &split.test {
        let env = Env::new(scenario.with_pre_deployed(pre)?, Arc::clone(&ev), cfg.reward)?;
        let sc = env.scenario();
        let mut results = Vec::new();
        for c in [Criterion::Coverage, Criterion::Localisation, Criterion::Joint] {
            results.push(brute_force(&ev, sc, c)?);
        }
        for net in &nets {
            let mut rng = substream(cfg.seed ^ pre as u64, rng::streams::APPLY);
            results.push(agent::apply(net, &env, cfg.train.rollout_steps, &mut rng)?);
        }
        let pc = sc.pre_deployed_cell();
        let _ = write!(wide, "{pre}");
        for r in &results {
            let site = r.site_index.map(|i| i.to_string()).unwrap_or_default();
            let o = &r.objective;
            let _ = writeln!(report, "{pre},{},{},{},{},{},{site},{},{},{}", pc.x, pc.y, r.method, r.cell.x, r.cell.y, o.f1, o.f2, o.ratio);
            let _ = write!(wide, ",{},{},{}", o.f1, o.f2, o.ratio);
        }
        wide.push('\n');
        let _ = writeln!(maps, "== pre-deployed position {pre} ==");
        maps.push_str(&placement_map(sc, &results));
        maps.push('\n');
        writeln!(stdout, "position {pre} ({pc}):")?;
        for r in &results {
            writeln!(stdout, "  {}", describe(r))?;
        }
    }
    fs::write(out.join("report.csv"), report)?;
    fs::write(out.join("table1.csv"), wide)?;
    fs::write(out.join("placements.txt"), maps)?;
    writeln!(stdout, "wrote report.csv, table1.csv and placements.txt to {}", out.display())?;
    Ok(())
}
