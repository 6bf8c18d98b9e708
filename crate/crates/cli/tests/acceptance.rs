//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lpbo_core::baselines::cma_default_lambda;
use lpbo_core::bench::{self, run_ecdf, TargetSet};
use lpbo_core::env::{next_observation, run_episode, EpisodeConfig, Observation};
use lpbo_core::meta_ga::{self, decode_flat, evolve_step, learned_factory, sigma_schedule, TrainSettings};
use lpbo_core::meta_loss::{estimate_outcomes, expected_fe, expected_restarts, meta_fitness, RunOutcome};
use lpbo_core::policy::{act, init_params, PolicyState};
use lpbo_core::problems::make_suite;
use lpbo_core::seed::{self, stream};
use lpbo_core::{
    CmaEs, FunctionFamily, GaConfig, Genome, NamedOptimizer, Optimizer, PolicyConfig, RandomSearch, Split,
    Task,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Tolerances and limits.
const ERT_REL_TOL: f64 = 0.005;
const RESTART_ABS_TOL: f64 = 0.02;
const ECDF_ABS_TOL: f64 = 0.03;
const CMA_MIN_SOLVED: usize = 95;
const SCENARIO_MIN_FINAL: f64 = 0.8;
const CONSISTENCY_TOL: f64 = 1e-12;
const LIMIT_INVARIANCE: Duration = Duration::from_secs(10);
const LIMIT_ERT: Duration = Duration::from_secs(30);
const LIMIT_GENOME: Duration = Duration::from_secs(10);
const LIMIT_BASELINE: Duration = Duration::from_secs(120);

type Criterion = (&'static str, fn() -> Outcome);
type Transform = (&'static str, fn(f64) -> f64);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{}; {:.1}s", o.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            o.pass = false;
            o.detail = format!("{} exceeds {}s", o.detail, limit.as_secs());
        }
    }
    o
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 7] = [
        ("1 monotone invariance", || {
            timed(Some(LIMIT_INVARIANCE), monotone_invariance)
        }),
        ("2 ERT oracle", || timed(Some(LIMIT_ERT), ert_oracle)),
        ("3 genome determinism", || {
            timed(Some(LIMIT_GENOME), genome_determinism)
        }),
        ("4 baseline sanity", || {
            timed(Some(LIMIT_BASELINE), baseline_sanity)
        }),
        ("5 linear slope reproduction", || {
            timed(None, linear_slope_reproduction)
        }),
        ("6 end-to-end determinism", || timed(None, end_to_end_determinism)),
        ("7 ECDF/ERT consistency", || timed(None, ecdf_ert_consistency)),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = run();
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn monotone_invariance() -> Outcome {
    let cfg = PolicyConfig::default();
    let task = Task::generate("inv", FunctionFamily::Rastrigin, 3, 5).unwrap();
    let transforms: [Transform; 3] = [
        ("cube", |f| f * f * f),
        ("affine", |f| 3.5 * f + 11.0),
        ("exp", f64::exp),
    ];
    let (lambda, generations) = (8, 6);
    let mut mismatches = Vec::new();
    for p in 0..100u64 {
        let params = init_params(cfg, p).unwrap();
        // Positive fitness in a range where every transform stays finite and injective.
        let base = |x: &[f64]| 1.0 + (task.evaluate(x).unwrap() - task.optimum_value()).min(500.0) / 100.0;
        let rollout = |g: Option<fn(f64) -> f64>| {
            let mut state = PolicyState::new(&cfg, lambda, task.dimension);
            let mut obs = Observation::initial();
            let mut out = Vec::new();
            for gen in 0..generations {
                let step = seed::derive(p, &[gen as u64]);
                let batch = act(&params, &mut state, &obs, step).unwrap();
                let f: Vec<f64> = batch.rows().map(base).map(|v| g.map_or(v, |g| g(v))).collect();
                out.push(batch.as_slice().to_vec());
                obs = next_observation(Some(&batch), &f, gen + 1);
            }
            out
        };
        let reference = rollout(None);
        for (name, g) in transforms {
            let got = rollout(Some(g));
            let same = got
                .iter()
                .flatten()
                .zip(reference.iter().flatten())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                mismatches.push(format!("policy {p} under {name}"));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("100 policies x 3 transforms x {generations} generations, mismatches {mismatches:?}"),
    )
}

fn ert_oracle() -> Outcome {
    const TRIALS: usize = 1_000_000;
    let fe_max = 1000usize;
    let mean_succ = (fe_max as f64 + 1.0) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_ert = 0.0f64;
    let mut worst_plugin = 0.0f64;
    let mut worst_restart = 0.0f64;
    for p in [0.1, 0.3, 0.5, 0.9] {
        let (mut total, mut fails) = (0.0, 0u64);
        for _ in 0..TRIALS {
            loop {
                if rng.random::<f64>() < p {
                    total += rng.random_range(1..=fe_max) as f64;
                    break;
                }
                total += fe_max as f64;
                fails += 1;
            }
        }
        let sim = total / TRIALS as f64;
        let exact = expected_fe(p, mean_succ, fe_max).unwrap();
        worst_ert = worst_ert.max((sim - exact).abs() / exact);
        worst_restart =
            worst_restart.max((fails as f64 / TRIALS as f64 - expected_restarts(p).unwrap()).abs());

        // The plug-in estimator on simulated single runs.
        let outcomes: Vec<RunOutcome> = (0..TRIALS)
            .map(|_| RunOutcome {
                first_hit: (rng.random::<f64>() < p).then(|| rng.random_range(1..=fe_max)),
                gap_ratio: 0.5,
            })
            .collect();
        let est = estimate_outcomes(&outcomes, fe_max).unwrap().expected_fe;
        worst_plugin = worst_plugin.max((est - exact).abs() / exact);
    }
    outcome(
        worst_ert <= ERT_REL_TOL && worst_plugin <= ERT_REL_TOL && worst_restart <= RESTART_ABS_TOL,
        format!(
            "max rel err restart sim {worst_ert:.5}, plug-in {worst_plugin:.5} (tol {ERT_REL_TOL}); \
             max restart err {worst_restart:.4} (tol {RESTART_ABS_TOL})"
        ),
    )
}

fn oracle_decode(genome: &Genome, cfg: PolicyConfig) -> Vec<f64> {
    let mut theta = init_params(cfg, genome.init_seed).unwrap().flatten();
    for m in &genome.mutations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(m.seed, &[]));
        for v in &mut theta {
            *v += m.sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    theta
}

fn genome_determinism() -> Outcome {
    let cfg = PolicyConfig {
        hidden_size: 8,
        num_layers: 2,
    };
    let ga = GaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut bad_decode = 0;
    for _ in 0..1000 {
        let mut g = Genome::new(rng.random());
        for k in 0..rng.random_range(0..6) {
            g = g.mutated(rng.random(), sigma_schedule(k, &ga));
        }
        let a = decode_flat(&g, cfg).unwrap();
        let b = decode_flat(&g, cfg).unwrap();
        let c = oracle_decode(&g, cfg);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if bits(&a) != bits(&b) || bits(&a) != bits(&c) {
            bad_decode += 1;
        }
    }

    let small = GaConfig {
        population_size: 30,
        n_elites: 3,
        n_parents: 10,
        ..GaConfig::default()
    };
    let population: Vec<Genome> = (0..30).map(|i| Genome::new(i).mutated(i + 100, 0.3)).collect();
    let fitness: Vec<f64> = (0..30).map(|i| ((i * 7) % 30) as f64).collect();
    let mut bad_child = 0;
    for generation in [0usize, 1, 7, 200] {
        let next = evolve_step(&population, &fitness, generation, &small, generation as u64).unwrap();
        let sigma = sigma_schedule(generation, &small);
        for child in &next[small.n_elites..] {
            let ok = population.iter().any(|p| {
                p.init_seed == child.init_seed
                    && child.mutations.len() == p.mutations.len() + 1
                    && child.mutations[..p.mutations.len()] == p.mutations[..]
            }) && child.mutations.last().unwrap().sigma == sigma;
            bad_child += usize::from(!ok);
        }
    }
    let sigmas = [
        sigma_schedule(0, &ga),
        sigma_schedule(1, &ga),
        sigma_schedule(200, &ga),
    ];
    let sigma_ok = (sigmas[0] - 0.3).abs() < 1e-15 && (sigmas[1] - 0.285).abs() < 1e-15 && sigmas[2] == 0.01;
    outcome(
        bad_decode == 0 && bad_child == 0 && sigma_ok,
        format!("decode mismatches {bad_decode}/1000, malformed children {bad_child}, sigma(0,1,200) = {sigmas:?}"),
    )
}

fn sublevel_probability(task: &Task, tolerance: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = task.optimum_location();
    let w = task.family.half_width();
    let inside = (0..draws)
        .filter(|_| {
            let r2: f64 = s
                .iter()
                .map(|si| (w * (rng.random_range(-1.0..=1.0) - si)).powi(2))
                .sum();
            r2 <= tolerance
        })
        .count();
    inside as f64 / draws as f64
}

fn baseline_sanity() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for d in [2usize, 5] {
        let task = Task::generate(format!("sphere-d{d}"), FunctionFamily::Sphere, d, 40 + d as u64).unwrap();
        let cfg = EpisodeConfig {
            lambda: cma_default_lambda(d),
            fe_max: 1000 * d,
            tolerance: 1e-3,
            episode_seed: 0,
        };
        let solved = (0..100u64)
            .filter(|&s| {
                run_episode(&mut CmaEs::default(), &task, &cfg.with_seed(s))
                    .unwrap()
                    .success
            })
            .count();
        pass &= solved >= CMA_MIN_SOLVED;
        detail.push(format!("CMA-ES d={d} solved {solved}/100"));
    }

    // Random search: success by budget b is 1 - (1 - q)^b per task.
    let tolerance = 0.5;
    let episode = EpisodeConfig {
        lambda: 10,
        fe_max: 60,
        tolerance,
        episode_seed: 0,
    };
    let tasks: Vec<Task> = (0..8)
        .map(|i| Task::generate(format!("s{i}"), FunctionFamily::Sphere, 2, 700 + i).unwrap())
        .collect();
    let factory = || Box::new(RandomSearch::new()) as Box<dyn Optimizer>;
    let curve = run_ecdf(
        &factory,
        &tasks,
        &TargetSet::single(tolerance).unwrap(),
        &episode,
        3000,
        5,
    )
    .unwrap();
    let q: Vec<f64> = tasks
        .iter()
        .enumerate()
        .map(|(k, t)| sublevel_probability(t, tolerance, 1_000_000, k as u64))
        .collect();
    let predict = |b: usize| q.iter().map(|q| 1.0 - (1.0 - q).powi(b as i32)).sum::<f64>() / q.len() as f64;
    let worst = curve
        .budgets
        .iter()
        .map(|&b| (curve.fraction_at(b) - predict(b)).abs())
        .fold(0.0, f64::max);
    let fin = (curve.final_fraction(), predict(episode.fe_max));
    pass &= worst <= ECDF_ABS_TOL;
    detail.push(format!(
        "random-search final ECDF {:.4} vs predicted {:.4}, max deviation {worst:.4} (tol {ECDF_ABS_TOL})",
        fin.0, fin.1
    ));
    outcome(pass, detail.join("; "))
}

fn linear_slope_reproduction() -> Outcome {
    let suite = make_suite(&[FunctionFamily::LinearSlope], 2, 66, [0.12, 0.12, 0.76], 1).unwrap();
    let counts = [Split::Train, Split::Validation, Split::Test].map(|s| suite.count(s));
    if counts != [8, 8, 50] {
        return outcome(false, format!("unexpected split sizes {counts:?}"));
    }
    let ga = GaConfig {
        population_size: 32,
        generations: 30,
        ..GaConfig::default()
    };
    let policy = PolicyConfig::default();
    let episode = EpisodeConfig {
        lambda: 10,
        fe_max: 200,
        tolerance: 1e-3,
        episode_seed: 0,
    };
    let settings = TrainSettings {
        episode,
        runs_per_task: 3,
        master_seed: 1,
        fixed_episode_seeds: false,
    };
    let trained = meta_ga::train(&ga, policy, &suite, &settings, &mut |_| Ok(())).unwrap();
    let last = trained.history.entries.last().unwrap().clone();

    let rs = || Box::new(RandomSearch::new()) as Box<dyn Optimizer>;
    let rs_loss = meta_fitness(
        &rs,
        &suite.split(Split::Train),
        3,
        &episode,
        seed::derive(1, &[stream::GA_TRAIN, 30]),
    )
    .unwrap();

    let learned = learned_factory(meta_ga::decode(&trained.best, policy).unwrap());
    let entries = [
        NamedOptimizer {
            name: "learned".into(),
            factory: &learned,
            lambda: None,
        },
        NamedOptimizer {
            name: "rs".into(),
            factory: &rs,
            lambda: None,
        },
    ];
    let report = bench::compare(
        &entries,
        &suite,
        &TargetSet::single(1e-3).unwrap(),
        &episode,
        3,
        seed::derive(1, &[stream::BENCH]),
    )
    .unwrap();
    let (l, r) = (report.get("learned").unwrap(), report.get("rs").unwrap());
    outcome(
        l.final_fraction >= r.final_fraction
            && l.auc >= r.auc
            && l.final_fraction >= SCENARIO_MIN_FINAL
            && last.train_best <= rs_loss,
        format!(
            "learned final {:.3} auc {:.3}; random search final {:.3} auc {:.3}; \
             train meta-loss at g30 {:.1} vs random search {:.1}",
            l.final_fraction, l.auc, r.final_fraction, r.auc, last.train_best, rs_loss
        ),
    )
}

const SMOKE: &str = r#"
master_seed = 5
runs_per_task = 2

[suite]
families = ["sphere", "lunacek_bi_rastrigin"]
dimension = 2
instances = 10
split = [0.3, 0.2, 0.5]

[policy]
hidden_size = 8

[ga]
population_size = 8
n_elites = 2
n_parents = 4
generations = 2

[episode]
lambda = 6
"#;

fn pipeline(dir: &Path, config: &Path, workers: &str) -> Result<(), String> {
    let run = |out: &Path, args: &[&str]| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_lpbo"))
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(out)
            .args(["--workers", workers])
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if status.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&status.stderr).into_owned())
        }
    };
    let genome = dir.join("train/best_genome.json");
    let genome = genome.to_str().unwrap();
    run(&dir.join("train"), &["train"])?;
    run(&dir.join("eval"), &["eval", "--checkpoint", genome])?;
    run(&dir.join("compare"), &["compare", "--checkpoint", genome])
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("smoke.toml");
    fs::write(&config, SMOKE).unwrap();
    let (a, b) = (tmp.path().join("w1"), tmp.path().join("w4"));
    for (dir, w) in [(&a, "1"), (&b, "4")] {
        if let Err(e) = pipeline(dir, &config, w) {
            return outcome(false, format!("pipeline with {w} workers failed: {e}"));
        }
    }
    let files = [
        "train/history.csv",
        "eval/ecdf.csv",
        "eval/ert.csv",
        "compare/ecdf.csv",
        "compare/ert.csv",
        "compare/summary.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .collect();
    outcome(
        differing.is_empty(),
        format!(
            "{} CSVs compared across 1 and 4 workers, differing {differing:?}",
            files.len()
        ),
    )
}

fn ecdf_ert_consistency() -> Outcome {
    let tasks: Vec<Task> = [
        FunctionFamily::Sphere,
        FunctionFamily::Rastrigin,
        FunctionFamily::LunacekBiRastrigin,
    ]
    .iter()
    .enumerate()
    .map(|(i, &f)| Task::generate(format!("t{i}"), f, 2, 300 + i as u64).unwrap())
    .collect();
    let episode = EpisodeConfig::for_dimension(2, 6);
    let mut worst = 0.0f64;
    for tolerance in [1e-1, 1e-3] {
        let targets = TargetSet::single(tolerance).unwrap();
        let cma = || Box::new(CmaEs::default()) as Box<dyn Optimizer>;
        let rs = || Box::new(RandomSearch::new()) as Box<dyn Optimizer>;
        let factories: [&dyn lpbo_core::OptimizerFactory; 2] = [&cma, &rs];
        for f in factories {
            let curve = run_ecdf(f, &tasks, &targets, &episode, 7, 13).unwrap();
            let rows = bench::ert_table(f, &tasks, &targets, &episode, 7, 13).unwrap();
            let mean_p = rows.iter().map(|r| r.stats.p_hat).sum::<f64>() / rows.len() as f64;
            worst = worst.max((curve.final_fraction() - mean_p).abs());
        }
    }
    outcome(
        worst <= CONSISTENCY_TOL,
        format!("max |final ECDF - mean p_hat| = {worst:e} (tol {CONSISTENCY_TOL:e})"),
    )
}
