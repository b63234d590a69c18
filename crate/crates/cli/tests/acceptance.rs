//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Training criteria run the full protocol (D=100, batches of 100, epochs of
//! 1000 updates, 1000 held-out sequences) and take a long time on a single
//! core. `ACCEPTANCE_ONLY=C5,C9` restricts the run to the listed criteria.
//! Failures are reported but only turn into a nonzero exit status when
//! `ACCEPTANCE_STRICT=1` is set.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ffattn_cli::bench::{run_bench, BenchConfig};
use ffattn_core::model::{param_count, predict};
use ffattn_core::trainer::{is_correct, train_with, RunResult};
use ffattn_core::verify::{
    check_pooling_equivalence, gradient_check_suite, max_permutation_deviation, pooling_difference, random_case,
    CaseShape, DEFAULT_STEP, PERMUTATION_TOLERANCE,
};
use ffattn_core::{
    evaluate, init_params, LengthSpec, ModelParams, PoolingMode, Rng, TaskInstance, TaskKind, TrainConfig,
};

const SEEDS: [u64; 3] = [0, 1, 2];
const NEEDED: usize = 2;
const T0S: [usize; 3] = [50, 100, 500];
const ADDITION_BUDGET: usize = 5;
const MULTIPLICATION_BUDGET: usize = 15;
const VARLEN: LengthSpec = LengthSpec::Range { lo: 50, hi: 500 };
const VARLEN_LR: f64 = 0.001;
const VARLEN_TARGET: f64 = 0.99;
const VARLEN_MAX_EPOCHS: usize = 100;

/// Grid order for the searches below: the rates that solve fastest in
/// practice come first, so the search usually stops after one run.
const ADDITION_ORDER: [f64; 4] = [0.003, 0.01, 0.001, 0.0003];
const MULTIPLICATION_ORDER: [f64; 4] = [0.003, 0.001, 0.01, 0.0003];

type Check = Box<dyn FnOnce(&mut BestEpochs) -> Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("  {}", msg.as_ref());
}

fn protocol(task: TaskKind, lengths: LengthSpec, pooling: PoolingMode, lr: f64, seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        lr,
        seed,
        max_epochs: epochs,
        ..TrainConfig::new(task, lengths, pooling)
    }
}

fn run(config: &TrainConfig) -> RunResult {
    let started = Instant::now();
    let result = train_with(config, None, |_| {}).expect("training run");
    log(format!(
        "{} {} {} lr={} seed={}: epochs {} accuracy {:.3} solved {:?} ({:.0}s)",
        config.task.as_str(),
        config.lengths,
        config.pooling.as_str(),
        config.lr,
        config.seed,
        result.epochs_run(),
        result.final_accuracy,
        result.solved_at_epoch,
        started.elapsed().as_secs_f64()
    ));
    result
}

/// Earliest epoch at which any rate of the grid reaches perfect accuracy,
/// searching no further than `cap` epochs. Each later rate only needs to
/// beat the best epoch found so far, so it runs at most one epoch less.
#[derive(Default)]
struct BestEpochs {
    cache: HashMap<(TaskKind, usize, PoolingMode, u64, usize), Option<usize>>,
}

impl BestEpochs {
    fn get(&mut self, task: TaskKind, t0: usize, pooling: PoolingMode, seed: u64, cap: usize) -> Option<usize> {
        let key = (task, t0, pooling, seed, cap);
        if let Some(&best) = self.cache.get(&key) {
            return best;
        }
        let order = match task {
            TaskKind::Addition => ADDITION_ORDER,
            TaskKind::Multiplication => MULTIPLICATION_ORDER,
        };
        let mut best: Option<usize> = None;
        for lr in order {
            let limit = best.map_or(cap, |b| b - 1);
            if limit == 0 {
                break;
            }
            let result = run(&protocol(task, LengthSpec::Fixed { t0 }, pooling, lr, seed, limit));
            if let Some(epoch) = result.solved_at_epoch {
                best = Some(epoch);
            }
        }
        self.cache.insert(key, best);
        best
    }
}

/// Runs `trial` per seed until `NEEDED` seeds pass or enough have failed
/// that `NEEDED` passes are out of reach.
fn majority_of_seeds(mut trial: impl FnMut(u64) -> (bool, String)) -> (bool, Vec<String>) {
    let mut passes = 0;
    let mut fails = 0;
    let mut notes = Vec::new();
    for seed in SEEDS {
        let (pass, note) = trial(seed);
        notes.push(format!("seed {seed}: {note}"));
        if pass {
            passes += 1;
        } else {
            fails += 1;
        }
        if passes >= NEEDED || fails > SEEDS.len() - NEEDED {
            break;
        }
    }
    (passes >= NEEDED, notes)
}

fn table1_attention(best: &mut BestEpochs, task: TaskKind, budget: usize) -> Outcome {
    let mut all = true;
    let mut parts = Vec::new();
    for t0 in T0S {
        let (pass, notes) = majority_of_seeds(|seed| match best.get(task, t0, PoolingMode::Attention, seed, budget) {
            Some(epoch) => (true, format!("solved at epoch {epoch}")),
            None => (false, format!("unsolved within {budget}")),
        });
        all &= pass;
        parts.push(format!("T0={t0} [{}]", notes.join(", ")));
    }
    Outcome::new(all, format!("within {budget} epochs, {NEEDED}/3 seeds: {}", parts.join("; ")))
}

fn attention_beats_mean(best: &mut BestEpochs) -> Outcome {
    let t0 = 500;
    let (pass, notes) = majority_of_seeds(|seed| {
        let Some(attention) = best.get(TaskKind::Multiplication, t0, PoolingMode::Attention, seed, MULTIPLICATION_BUDGET)
        else {
            return (false, format!("attention unsolved within {MULTIPLICATION_BUDGET}"));
        };
        match best.get(TaskKind::Multiplication, t0, PoolingMode::UnweightedMean, seed, attention) {
            Some(mean) => (false, format!("attention {attention}, mean {mean}")),
            None => (true, format!("attention {attention}, mean unsolved within {attention}")),
        }
    });
    Outcome::new(pass, format!("Multiplication T0=500: {}", notes.join(", ")))
}

/// Trains epoch by epoch until the test accuracy reaches `target` or
/// `max_epochs` have run. Resuming from the previous checkpoint draws the
/// same batches as a single uninterrupted run.
fn train_until(task: TaskKind, pooling: PoolingMode, target: f64, max_epochs: usize) -> RunResult {
    let mut checkpoint = None;
    let mut epoch = 0;
    loop {
        epoch += 1;
        let config = protocol(task, VARLEN, pooling, VARLEN_LR, 0, epoch);
        let result = train_with(&config, checkpoint.take(), |_| {}).expect("training run");
        if result.final_accuracy >= target || epoch >= max_epochs {
            log(format!(
                "{} {} {}: {} epochs, accuracy {:.3}",
                task.as_str(),
                VARLEN,
                pooling.as_str(),
                epoch,
                result.final_accuracy
            ));
            return result;
        }
        checkpoint = Some(result.checkpoint());
    }
}

fn variable_length() -> Outcome {
    let addition = train_until(TaskKind::Addition, PoolingMode::Attention, VARLEN_TARGET, VARLEN_MAX_EPOCHS);
    let addition_ok = addition.final_accuracy >= VARLEN_TARGET;

    let attention = train_until(TaskKind::Multiplication, PoolingMode::Attention, VARLEN_TARGET, VARLEN_MAX_EPOCHS);
    let budget = attention.epochs_run();
    let mean = run(&protocol(TaskKind::Multiplication, VARLEN, PoolingMode::UnweightedMean, VARLEN_LR, 0, budget));
    let mean_ok = mean.final_accuracy < attention.final_accuracy;
    Outcome::new(
        addition_ok && mean_ok,
        format!(
            "{VARLEN}, lr {VARLEN_LR}: addition attention {:.3} after {} epochs (need >= {VARLEN_TARGET}); \
             multiplication after {budget} epochs: mean {:.3} vs attention {:.3}",
            addition.final_accuracy,
            addition.epochs_run(),
            mean.final_accuracy,
            attention.final_accuracy
        ),
    )
}

fn parameter_counts() -> Outcome {
    let count = |pooling| param_count(&init_params(100, pooling, &mut Rng::new(0, 0)).unwrap());
    let attention = count(PoolingMode::Attention);
    let mean = count(PoolingMode::UnweightedMean);
    Outcome::new(
        attention == 10602 && mean == 10501,
        format!("attention {attention}, mean {mean}"),
    )
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let reports = gradient_check_suite(20, 2016, DEFAULT_STEP).unwrap();
    let seconds = started.elapsed().as_secs_f64();
    let failures = reports.iter().filter(|(_, r)| !r.pass).count();
    let worst = reports.iter().map(|(_, r)| r.max_relative_error).fold(0.0, f64::max);
    Outcome::new(
        failures == 0 && seconds < 60.0,
        format!(
            "{} configurations, {failures} failing, worst relative error {worst:.2e}, {seconds:.1}s",
            reports.len()
        ),
    )
}

fn shape(dim: usize, len: usize, batch_size: usize, pooling: PoolingMode) -> CaseShape {
    CaseShape { dim, len, batch_size, pooling }
}

fn permutation_invariance() -> Outcome {
    let mut worst = 0.0f64;
    for draw in 0..100u64 {
        let pooling = PoolingMode::ALL[draw as usize % 2];
        let task = TaskKind::ALL[(draw as usize / 2) % 2];
        let mut rng = Rng::new(7, draw);
        let (params, _) = random_case(shape(10, 1, 1, pooling), &mut rng).unwrap();
        let instance = ffattn_core::tasks::generate(task, LengthSpec::Fixed { t0: 50 }, &rng.substream(1)).unwrap();
        worst = worst.max(max_permutation_deviation(&params, &instance.steps, 10, &mut rng).unwrap());
    }
    Outcome::new(
        worst <= PERMUTATION_TOLERANCE,
        format!("100 parameter draws, largest output change {worst:.2e} (tolerance {PERMUTATION_TOLERANCE:.0e})"),
    )
}

fn pooling_equivalence() -> Outcome {
    let trials = 100u64;
    let mut equivalent = 0;
    let mut distinct = 0;
    for trial in 0..trials {
        let mut rng = Rng::new(8, trial);
        let len = 2 + trial as usize % 30;
        let (params, batch) = random_case(shape(1 + trial as usize % 10, len, 4, PoolingMode::Attention), &mut rng).unwrap();
        if check_pooling_equivalence(&params, &batch).unwrap() {
            equivalent += 1;
        }
        if pooling_difference(&params, &batch).unwrap() > 1e-6 {
            distinct += 1;
        }
    }
    Outcome::new(
        equivalent == trials && distinct * 10 >= trials * 9,
        format!("W_hc = 0 matches mean in {equivalent}/{trials}; random W_hc differs by > 1e-6 in {distinct}/{trials}"),
    )
}

fn accuracy_boundary() -> Outcome {
    let direct = is_correct(0.039, 0.0, 0.04) && !is_correct(0.04, 0.0, 0.04) && is_correct(-0.039, 0.0, 0.04)
        && !is_correct(-0.04, 0.0, 0.04);
    let zero = ModelParams::zeros(3, PoolingMode::Attention);
    let steps = vec![[0.0, 0.0]; 4];
    let instance = |target| TaskInstance { kind: TaskKind::Addition, steps: steps.clone(), target, marked: (0, 2) };
    let output = predict(&zero, &steps).unwrap();
    let accuracy = evaluate(&zero, &[instance(0.039), instance(0.04)], 0.04).unwrap();
    Outcome::new(
        direct && output == 0.0 && accuracy == 0.5,
        format!("0.039 correct, 0.040 incorrect; evaluation over both gives accuracy {accuracy}"),
    )
}

/// Header and rows of an epochs.csv with the timing column removed.
fn numeric_columns(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| &headers[i] != "wall_seconds").collect();
    let names = keep.iter().map(|&i| headers[i].to_string()).collect();
    let rows = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            keep.iter().map(|&i| r[i].to_string()).collect()
        })
        .collect();
    (names, rows)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["--task", "addition", "--t0", "50", "--pooling", "attention", "--lr", "0.001", "--seed", "1"];
    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ffattn"))
            .arg("train")
            .args(flags)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert!(status.success(), "train exited with {status}");
        tables.push(numeric_columns(&out.join("epochs.csv")));
    }
    let (headers, rows) = &tables[0];
    let identical = tables[0] == tables[1];
    let accuracy = headers.iter().position(|h| h == "test_accuracy").unwrap();
    let final_accuracy: f64 = rows.last().map_or(0.0, |r| r[accuracy].parse().unwrap());
    Outcome::new(
        identical && final_accuracy == 1.0,
        format!(
            "train {}: {} epochs, numeric columns {}, final accuracy {final_accuracy}",
            flags.join(" "),
            rows.len(),
            if identical { "identical" } else { "differ" }
        ),
    )
}

fn throughput() -> Outcome {
    let report = run_bench(&BenchConfig {
        t0: 1000,
        batch_size: 100,
        dim: 100,
        workers: vec![1, 2, 4],
        repeats: 3,
        seed: 0,
    })
    .unwrap();
    let speedup = report.speedup(4).unwrap();
    let diff = report.max_output_diff();
    let cores = report.available_cores;
    let identical = diff <= 1e-10;
    if cores >= 4 {
        Outcome::new(
            identical && speedup >= 2.0,
            format!("4 workers {speedup:.2}x of 1 worker, output difference {diff:.1e}"),
        )
    } else {
        Outcome::new(
            false,
            format!(
                "not measurable: host has {cores} core(s), needs 4; observed 4-worker speedup {speedup:.2}x, \
                 output difference {diff:.1e}"
            ),
        )
    }
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(|p| p.trim().to_uppercase()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |id: &str| only.as_ref().is_none_or(|ids| ids.iter().any(|x| x == id));

    let mut best = BestEpochs::default();
    let criteria: Vec<(&str, &str, Check)> = vec![
        ("C1", "addition attention solves fixed lengths", Box::new(|b| table1_attention(b, TaskKind::Addition, ADDITION_BUDGET))),
        (
            "C2",
            "multiplication attention solves fixed lengths",
            Box::new(|b| table1_attention(b, TaskKind::Multiplication, MULTIPLICATION_BUDGET)),
        ),
        ("C3", "attention solves long multiplication before mean", Box::new(attention_beats_mean)),
        ("C4", "variable-length training", Box::new(|_| variable_length())),
        ("C5", "parameter counts", Box::new(|_| parameter_counts())),
        ("C6", "analytic gradients match finite differences", Box::new(|_| gradient_correctness())),
        ("C7", "output invariant under reordering", Box::new(|_| permutation_invariance())),
        ("C8", "pooling equivalence", Box::new(|_| pooling_equivalence())),
        ("C9", "accuracy boundary", Box::new(|_| accuracy_boundary())),
        ("C10", "deterministic training artifacts", Box::new(|_| determinism())),
        ("C11", "worker scaling", Box::new(|_| throughput())),
    ];

    let mut failed = 0;
    for (id, title, check) in criteria {
        if !wanted(id) {
            continue;
        }
        eprintln!("{id} {title} ...");
        let started = Instant::now();
        let outcome = check(&mut best);
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} {id} {title}: {} ({:.0}s)",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failing");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
