//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! The lines go straight to the process stdout so they survive libtest's
//! output capture. Criteria with a fixed, exact answer are also asserted.
//! The two learning criteria (3 and 4) report their measured outcome
//! without asserting it.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use bsplace::agent::{select_action, ReplayBuffer, TrainConfig, Trainer};
use bsplace::city::{Cell, CityMap, Scenario};
use bsplace::cli::{run, Cli, GeneratorConfig};
use bsplace::env::{Action, Env, EnvState, RewardConfig, Transition};
use bsplace::locate::{knn_localize, FingerprintDb, KnnConfig};
use bsplace::nn::{backward, Arch, ArchConfig, QNetwork};
use bsplace::optimize::{brute_force, evaluate_placement, legal_sites, Criterion, EvalConfig, Evaluator};
use bsplace::radio::{compute_field, coverage_rate, RadioParams};
use bsplace::rng::substream;
use clap::Parser;
use rand::Rng;

const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        writeln!(out, "criterion {n} [{tag}] {name}: {detail}").unwrap();
        out.flush().unwrap();
        if !pass {
            self.failed.push(n);
        }
    }
}

fn cli(args: &[&str]) -> String {
    let cli = Cli::try_parse_from(std::iter::once("bsplace").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(cli, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn scenario(seed: u64) -> Scenario {
    GeneratorConfig::default().generate(seed).unwrap()
}

/// Argmax/argmin over the legal sites by direct, uncached evaluation.
/// Ties keep the first site in enumeration order.
fn enumerate(s: &Scenario, cfg: &EvalConfig) -> (Cell, Cell, Cell) {
    let sites = legal_sites(s, cfg.placement);
    let values: Vec<_> = sites.iter().map(|&c| evaluate_placement(s, cfg, c).unwrap()).collect();
    let pick = |better: &dyn Fn(usize, usize) -> bool| {
        let mut best = 0;
        for i in 1..sites.len() {
            if better(i, best) {
                best = i;
            }
        }
        sites[best]
    };
    (
        pick(&|i, b| values[i].f1 > values[b].f1),
        pick(&|i, b| values[i].f2 < values[b].f2),
        pick(&|i, b| values[i].ratio > values[b].ratio),
    )
}

fn oracle_dominance(r: &mut Report) {
    let cfg = EvalConfig::default();
    let mut agree = 0;
    for seed in DEFAULT_SEEDS {
        let s = scenario(seed);
        let ev = Evaluator::for_scenario(&s, cfg).unwrap();
        let (c, l, j) = enumerate(&s, &cfg);
        let got = [Criterion::Coverage, Criterion::Localisation, Criterion::Joint].map(|k| brute_force(&ev, &s, k).unwrap().cell);
        if got == [c, l, j] {
            agree += 1;
        }
    }
    r.line(1, "oracle dominance", agree == DEFAULT_SEEDS.len(), format!("BFC/BFL/BFJ equal direct enumeration on {agree}/5 scenarios"));
}

fn trade_off(r: &mut Report) {
    let mut hits = Vec::new();
    for seed in DEFAULT_SEEDS {
        let s = scenario(seed);
        let ev = Evaluator::for_scenario(&s, EvalConfig::default()).unwrap();
        let c = brute_force(&ev, &s, Criterion::Coverage).unwrap();
        let l = brute_force(&ev, &s, Criterion::Localisation).unwrap();
        if c.cell != l.cell && c.objective.f1 > l.objective.f1 && l.objective.f2 < c.objective.f2 {
            hits.push(seed);
        }
    }
    r.line(2, "trade-off existence", hits.len() >= 3, format!("BFC and BFL disagree on default seeds {hits:?} ({}/5)", hits.len()));
}

struct HeldOut {
    proposed: Vec<f64>,
    traditional: Vec<f64>,
    bfj: Vec<f64>,
}

/// Trains both architectures through the CLI and reads the held-out ratios
/// back from the evaluation report.
fn desk_run(dir: &Path, seed: u64) -> HeldOut {
    let cfg = dir.join("desk.json");
    fs::write(&cfg, r#"{ "train": { "episodes": 500, "steps_per_episode": 50 } }"#).unwrap();
    let out = dir.join(format!("seed{seed}"));
    let (c, o, s) = (cfg.to_str().unwrap(), out.to_str().unwrap(), seed.to_string());
    for arch in ["proposed", "traditional"] {
        cli(&["train", "--config", c, "--seed", &s, "--threads", "1", "--arch", arch, "--out", o]);
    }
    let ckpt = |a: &str| out.join(format!("{a}.ckpt")).to_str().unwrap().to_owned();
    let split = out.join("split.json");
    cli(&[
        "eval", "--config", c, "--seed", &s, "--threads", "1", "--checkpoint", &ckpt("proposed"), "--checkpoint",
        &ckpt("traditional"), "--split", split.to_str().unwrap(), "--out", o,
    ]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let mut h = HeldOut { proposed: vec![], traditional: vec![], bfj: vec![] };
    for row in report.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        let ratio: f64 = f[9].parse().unwrap();
        match f[3] {
            "DQN-proposed" => h.proposed.push(ratio),
            "DQN-traditional" => h.traditional.push(ratio),
            "BFJ" => h.bfj.push(ratio),
            _ => {}
        }
    }
    assert_eq!((h.proposed.len(), h.traditional.len(), h.bfj.len()), (3, 3, 3));
    h
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn learning(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<HeldOut> = [1, 2, 3].iter().map(|&s| desk_run(dir.path(), s)).collect();

    let first = &runs[0];
    let fractions: Vec<f64> = first.proposed.iter().zip(&first.bfj).map(|(d, b)| d / b).collect();
    let good = fractions.iter().filter(|&&f| f >= 0.9).count();
    r.line(
        3,
        "DQN-oracle agreement",
        good >= 2,
        format!("seed 1, 500 episodes x 50 steps: DQN/BFJ on held-out = {}; {good}/3 reach 0.9", fmt(&fractions)),
    );

    let p: Vec<f64> = runs.iter().flat_map(|h| h.proposed.clone()).collect();
    let t: Vec<f64> = runs.iter().flat_map(|h| h.traditional.clone()).collect();
    let per_seed: Vec<String> =
        runs.iter().zip(1..).map(|(h, s)| format!("seed {s} {:.4} vs {:.4}", mean(&h.proposed), mean(&h.traditional))).collect();
    r.line(
        4,
        "baseline contrast",
        mean(&t) < mean(&p),
        format!("mean held-out ratio proposed {:.4} vs traditional {:.4} ({})", mean(&p), mean(&t), per_seed.join(", ")),
    );
}

fn fmt(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", "))
}

fn gradient_check(r: &mut Report) {
    let h = 1e-4;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
    let (mut worst, mut checked, mut kinks, mut bad) = (0.0f64, 0, 0, 0);
    for seed in 0..5u64 {
        for arch in [Arch::ProposedConv, Arch::TraditionalMlp] {
            let cfg = ArchConfig::default();
            let mut net = match arch {
                Arch::ProposedConv => QNetwork::proposed(19, 24, &cfg).unwrap(),
                _ => QNetwork::traditional(&cfg).unwrap(),
            };
            let mut rng = substream(seed, "acceptance-grad");
            net.init_uniform(&mut rng);
            let x: Vec<f64> = (0..net.input_shape().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action = (seed % 5) as usize;
            let target = rng.random_range(-1.0..1.0);
            let g = backward(&net, &x, action, target).unwrap();
            let loss = |n: &QNetwork| (target - n.forward(&x).unwrap()[action]).powi(2);
            let base = loss(&net);
            // every parameter of the small net, an even spread of the conv net
            let stride = (net.param_count() / 400).max(1);
            for i in (0..net.param_count()).step_by(stride) {
                let mut p = net.clone();
                p.params_mut()[i] += h;
                let mut m = net.clone();
                m.params_mut()[i] -= h;
                let (up, down) = (loss(&p), loss(&m));
                if g[i] == 0.0 && up == down {
                    continue;
                }
                checked += 1;
                let err = rel((up - down) / (2.0 * h), g[i]);
                if err < 1e-5 {
                    worst = worst.max(err);
                    continue;
                }
                // a ReLU or max-pool switch inside (-h, h): the analytic value
                // must still be the derivative on one side of the kink
                let one_sided = rel((up - base) / h, g[i]).min(rel((base - down) / h, g[i]));
                if one_sided < 1e-3 {
                    kinks += 1;
                } else {
                    bad += 1;
                    worst = worst.max(err);
                }
            }
        }
    }
    let pass = bad == 0 && worst < 1e-5;
    r.line(
        5,
        "gradient correctness",
        pass,
        format!("max relative error {worst:.2e} over {checked} parameters, 5 seeds x 2 architectures ({kinks} kink crossings matched one-sided)"),
    );
}

fn knn_exactness(r: &mut Report) {
    let s = scenario(1);
    let cfg = EvalConfig { knn: KnnConfig { k: 1 }, ..EvalConfig::default() };
    let agent = legal_sites(&s, cfg.placement)[0];
    // 1-NN can only be exact where no two points share a fingerprint
    let street = s.map.street_cells();
    let pre = compute_field(&s.map, &cfg.radio, s.pre_deployed_cell(), &street).unwrap();
    let new = compute_field(&s.map, &cfg.radio, agent, &street).unwrap();
    let mut seen = std::collections::HashMap::new();
    for i in 0..street.len() {
        *seen.entry((pre.values[i].to_bits(), new.values[i].to_bits())).or_insert(0) += 1;
    }
    let distinct: Vec<Cell> =
        (0..street.len()).filter(|&i| seen[&(pre.values[i].to_bits(), new.values[i].to_bits())] == 1).map(|i| street[i]).collect();
    let map = CityMap::clone(&s.map).with_points(distinct.clone(), distinct.clone()).unwrap();
    let s = Scenario::new(Arc::new(map), s.pre_deployed, s.seed).unwrap();
    let f2 = evaluate_placement(&s, &cfg, agent).unwrap().f2;

    let mut rng = substream(6, "acceptance-knn");
    let mut matches = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let dim = rng.random_range(1..4);
        // small integer RSS values force plenty of distance ties
        let entries: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-5..5) as f64).collect()).collect();
        let positions: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
        let sites = (0..dim).map(|i| Cell::new(i, 0)).collect();
        let db = FingerprintDb::from_parts(sites, entries.clone(), positions.clone()).unwrap();
        let k = rng.random_range(1..=n);
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-5..5) as f64).collect();
        let got = knn_localize(&db, &q, &KnnConfig { k }).unwrap();

        let mut order: Vec<(f64, usize)> =
            entries.iter().enumerate().map(|(i, e)| (e.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (sx, sy) = order[..k].iter().fold((0.0, 0.0), |(x, y), &(_, i)| (x + positions[i].0, y + positions[i].1));
        if got == (sx / k as f64, sy / k as f64) {
            matches += 1;
        }
    }
    let pass = f2 == 0.0 && matches == 100;
    r.line(6, "KNN exactness", pass, format!(
            "K=1 with eval = ref grid gives f2 = {f2} over the {} of {} street cells with a distinct fingerprint; {matches}/100 databases match a full sort",
            distinct.len(),
            street.len()
        ));
    assert!(pass);
}

fn reward_exactness(r: &mut Report) {
    let s = scenario(2);
    let ev = Arc::new(Evaluator::for_scenario(&s, EvalConfig::default()).unwrap());
    let env = Env::new(s.clone(), Arc::clone(&ev), RewardConfig::default()).unwrap();
    let mut illegal = 0;
    let mut bad = Vec::new();
    let mut worst_stay = 0.0f64;
    for &pos in env.positions() {
        for a in Action::ALL {
            let out = env.step(pos, a).unwrap();
            let here = env.ratio_at(pos).unwrap();
            if !out.legal {
                illegal += 1;
                if out.pos != pos || out.reward != here - 0.1 {
                    bad.push((pos, a));
                }
            }
        }
        let stay = env.step(pos, Action::Stay).unwrap();
        let direct = evaluate_placement(&s, ev.config(), env.placement_for(pos)).unwrap();
        let want = direct.f1 / direct.f2.max(0.1);
        worst_stay = worst_stay.max((stay.reward - want).abs() / want.abs().max(1e-300));
    }
    let pass = bad.is_empty() && illegal > 0 && worst_stay <= 4.0 * f64::EPSILON;
    r.line(
        7,
        "reward/penalty exactness",
        pass,
        format!("{illegal} illegal moves, {} wrong; stay reward vs direct evaluation rel. error {worst_stay:.1e}", bad.len()),
    );
    assert!(pass);
}

fn mechanics(r: &mut Report) {
    let mut notes = Vec::new();
    let mut ok = true;

    // replay eviction
    let t = |i: usize| Transition {
        s: EnvState { pre_deployed: Cell::new(0, 0), agent: Cell::new(i, 0) },
        a: 0,
        r: i as f64,
        s_next: EnvState { pre_deployed: Cell::new(0, 0), agent: Cell::new(i, 0) },
        terminal: false,
    };
    let mut buf = ReplayBuffer::new(16).unwrap();
    for i in 0..40 {
        buf.push(t(i));
    }
    let fifo = buf.iter().map(|x| x.r as usize).eq(24..40);
    ok &= fifo;
    notes.push(format!("fifo {fifo}"));

    // target network
    let s = scenario(3);
    let ev = Arc::new(Evaluator::for_scenario(&s, EvalConfig::default()).unwrap());
    let envs = vec![Env::new(s.clone(), ev, RewardConfig::default()).unwrap()];
    let cfg = TrainConfig { episodes: 20, steps_per_episode: 50, batch_size: 8, target_sync: 50, seed: 4, ..TrainConfig::default() };
    let mut tr = Trainer::new(envs, Arch::TraditionalMlp, cfg).unwrap();
    let mut last = tr.target().params().to_vec();
    let mut syncs = 0;
    let mut sync_ok = true;
    while !tr.is_finished() {
        let info = tr.step().unwrap();
        let now = tr.target().params();
        if tr.updates() > 0 && tr.updates() % 50 == 0 && info.loss.is_some() {
            sync_ok &= info.synced && now == tr.online().params();
            syncs += 1;
        } else {
            sync_ok &= !info.synced && now == &last[..];
        }
        last = now.to_vec();
    }
    ok &= sync_ok && syncs > 0;
    notes.push(format!("target sync exact at {syncs} multiples of 50, frozen between: {sync_ok}"));

    // epsilon extremes
    let net = tr.into_network();
    let x = [0.3, -0.2, 0.5, 0.1];
    let q = net.forward(&x).unwrap();
    let greedy = bsplace::agent::argmax(&q);
    let mut rng = substream(9, "acceptance-eps");
    let eps0 = (0..200).all(|_| select_action(&net, &x, 0.0, &mut rng).unwrap() == greedy);
    let mut counts = [0usize; 5];
    for _ in 0..5000 {
        counts[select_action(&net, &x, 1.0, &mut rng).unwrap()] += 1;
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    // 4 degrees of freedom, p = 0.001
    let eps1 = chi2 < 18.47;
    ok &= eps0 && eps1;
    notes.push(format!("eps=0 greedy {eps0}, eps=1 uniform chi2 {chi2:.2}"));

    // coverage monotone in the threshold
    let map = &s.map;
    let points = map.eval_points();
    let field = compute_field(map, &RadioParams::default(), s.pre_deployed_cell(), points).unwrap();
    let rates: Vec<f64> = (0..=12).map(|i| coverage_rate(&[&field], -60.0 - 5.0 * i as f64).unwrap()).collect();
    let mono = rates.windows(2).all(|w| w[1] >= w[0]);
    ok &= mono;
    notes.push(format!("coverage monotone in delta {mono}"));

    // full-run determinism
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, r#"{ "train": { "episodes": 6, "steps_per_episode": 25, "batch_size": 16 } }"#).unwrap();
    let logs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            cli(&["train", "--config", cfg.to_str().unwrap(), "--seed", "11", "--threads", "1", "--out", out.to_str().unwrap()]);
            fs::read(out.join("proposed_log.csv")).unwrap()
        })
        .collect();
    let same = logs[0] == logs[1];
    ok &= same;
    notes.push(format!("identical logs across runs {same}"));

    r.line(8, "mechanics invariants", ok, notes.join("; "));
    assert!(ok);
}

#[test]
fn acceptance() {
    let mut r = Report { failed: Vec::new() };
    oracle_dominance(&mut r);
    trade_off(&mut r);
    learning(&mut r);
    gradient_check(&mut r);
    knn_exactness(&mut r);
    reward_exactness(&mut r);
    mechanics(&mut r);
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance: {} of 8 criteria failed {:?}", r.failed.len(), r.failed).unwrap();
    let exact: Vec<usize> = r.failed.iter().copied().filter(|n| ![3, 4].contains(n)).collect();
    assert!(exact.is_empty(), "exact criteria failed: {exact:?}");
}
