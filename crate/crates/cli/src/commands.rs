//! One function per subcommand. Each writes its artifacts under the output
//! directory and reports whether an optional acceptance check held.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use ffattn_core::model::param_count;
use ffattn_core::tasks::make_test_set;
use ffattn_core::trainer::{sweep, train_with, Checkpoint, SweepResult};
use ffattn_core::verify::{gradient_check_suite, CaseShape, GradCheckReport};
use ffattn_core::{Error, LengthSpec, PoolingMode, RunResult, TaskKind, TrainConfig};
use serde::Serialize;

use crate::args::{
    BenchCmd, Command, DumpCmd, GradcheckCmd, Lengths, SweepCmd, Table1Cmd, TrainCmd, VarlenCmd,
};
use crate::bench::{run_bench, BenchConfig};
use crate::output::{read_checkpoint, write_json, write_run_artifacts, AtomicFile, CsvSink, EpochRow};

/// How a command that ran to completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A `--check` threshold was missed.
    CheckFailed,
    /// Analytic and finite-difference gradients disagree.
    GradientMismatch,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::GradientMismatch => 2,
            Outcome::CheckFailed => 3,
        }
    }
}

/// Exit status for a command that failed with `err`: 2 for numeric
/// failures, 1 for everything else.
pub fn error_exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_numeric() => 2,
        _ => 1,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Train(cmd) => with_workers(cmd.protocol.workers, || train(&cmd)),
        Command::Sweep(cmd) => with_workers(cmd.protocol.workers, || sweep_cmd(&cmd)),
        Command::Table1(cmd) => with_workers(cmd.protocol.workers, || table1(&cmd)),
        Command::Varlen(cmd) => with_workers(cmd.protocol.workers, || varlen(&cmd)),
        Command::Gradcheck(cmd) => gradcheck(&cmd),
        Command::Bench(cmd) => bench(&cmd),
        Command::Dump(cmd) => dump(&cmd),
    }
}

fn with_workers(workers: Option<usize>, f: impl FnOnce() -> Result<Outcome> + Send) -> Result<Outcome> {
    match workers {
        None => f(),
        Some(0) => Err(usage("--workers must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f),
    }
}

fn required_lengths(lengths: &Lengths) -> Result<LengthSpec> {
    let spec = lengths
        .spec()
        .ok_or_else(|| usage("one of --t0 or --len-lo/--len-hi is required"))?;
    spec.validate()?;
    Ok(spec)
}

/// Trains one configuration, streaming a CSV row per epoch into `sink`.
fn train_logged(config: &TrainConfig, resume: Option<Checkpoint>, sink: &mut CsvSink) -> Result<RunResult> {
    let mut write_error = None;
    let run = train_with(config, resume, |report| {
        eprintln!(
            "{} {} {} lr={} seed={} epoch {:>3}: loss {:.3e}, accuracy {:.3}",
            config.task,
            config.pooling,
            config.lengths,
            config.lr,
            config.seed,
            report.epoch,
            report.mean_train_loss,
            report.test_accuracy
        );
        if write_error.is_none() {
            write_error = sink.row(&EpochRow::new(config, report)).err();
        }
    })?;
    match write_error {
        Some(e) => Err(e),
        None => Ok(run),
    }
}

fn describe(run: &RunResult) -> String {
    match run.solved_at_epoch {
        Some(epoch) => format!("solved at epoch {epoch}"),
        None => format!(
            "not solved after {} epochs, accuracy {:.3}",
            run.epochs_run(),
            run.final_accuracy
        ),
    }
}

fn train(cmd: &TrainCmd) -> Result<Outcome> {
    let lengths = required_lengths(&cmd.lengths)?;
    let config = cmd
        .protocol
        .config(cmd.task.into(), lengths, cmd.pooling.into(), cmd.lr, cmd.seed);
    config.validate()?;
    let resume = cmd.resume.as_deref().map(read_checkpoint).transpose()?;
    let out = &cmd.protocol.out;
    let mut sink = CsvSink::epochs(&out.join("epochs.csv"))?;
    let run = train_logged(&config, resume, &mut sink);
    sink.commit()?;
    let run = run?;
    write_run_artifacts(out, &run)?;
    println!("{}", describe(&run));
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    lr: f64,
    solved: Option<usize>,
    epochs_run: usize,
    final_accuracy: f64,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    best_lr: f64,
    runs: Vec<SweepEntry>,
}

impl SweepSummary {
    fn new(result: &SweepResult) -> Self {
        SweepSummary {
            best_lr: result.best().config.lr,
            runs: result
                .runs
                .iter()
                .map(|r| SweepEntry {
                    lr: r.config.lr,
                    solved: r.solved_at_epoch,
                    epochs_run: r.epochs_run(),
                    final_accuracy: r.final_accuracy,
                })
                .collect(),
        }
    }
}

/// Runs a learning-rate sweep, appending every run's epochs to `sink`.
fn logged_sweep(template: &TrainConfig, lrs: &[f64], full: bool, sink: &mut CsvSink) -> Result<SweepResult> {
    if lrs.is_empty() {
        return Err(usage("learning-rate grid is empty"));
    }
    let mut write_error = None;
    let result = sweep(template, lrs, !full, |run| {
        eprintln!(
            "{} {} {} lr={} seed={}: {}",
            run.config.task,
            run.config.pooling,
            run.config.lengths,
            run.config.lr,
            run.config.seed,
            describe(run)
        );
        for report in &run.reports {
            if write_error.is_none() {
                write_error = sink.row(&EpochRow::new(&run.config, report)).err();
            }
        }
    })?;
    match write_error {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

fn sweep_cmd(cmd: &SweepCmd) -> Result<Outcome> {
    let lengths = required_lengths(&cmd.lengths)?;
    let template = cmd
        .protocol
        .config(cmd.task.into(), lengths, cmd.pooling.into(), cmd.lr_grid.first().copied().unwrap_or(0.001), cmd.seed);
    let out = &cmd.protocol.out;
    let mut sink = CsvSink::epochs(&out.join("epochs.csv"))?;
    let result = logged_sweep(&template, &cmd.lr_grid, cmd.full, &mut sink);
    sink.commit()?;
    let result = result?;
    write_json(&out.join("sweep.json"), &SweepSummary::new(&result))?;
    write_run_artifacts(out, result.best())?;
    println!("best lr {}: {}", result.best().config.lr, describe(result.best()));
    Ok(Outcome::Success)
}

/// Epochs within which attention must solve each task in `--check` mode.
pub fn epoch_budget(task: TaskKind) -> usize {
    match task {
        TaskKind::Addition => 5,
        TaskKind::Multiplication => 15,
    }
}

/// Smallest count that is at least two thirds of `n`.
pub fn two_thirds(n: usize) -> usize {
    (2 * n).div_ceil(3)
}

/// True when `attention` solved and did so in fewer epochs than `mean`
/// (an unsolved mean run always loses to a solved attention run).
pub fn attention_wins(attention: Option<usize>, mean: Option<usize>) -> bool {
    match (attention, mean) {
        (Some(a), Some(m)) => a < m,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Row {
    pub task: TaskKind,
    pub t0: usize,
    pub pooling: PoolingMode,
    pub seed: u64,
    pub best_lr: f64,
    pub solved_at_epoch: Option<usize>,
    pub final_accuracy: f64,
    pub epochs_run: usize,
    pub param_count: usize,
    /// Epochs to solve, or the final accuracy when unsolved.
    pub result: String,
}

impl Table1Row {
    fn new(t0: usize, best: &RunResult) -> Self {
        Table1Row {
            task: best.config.task,
            t0,
            pooling: best.config.pooling,
            seed: best.config.seed,
            best_lr: best.config.lr,
            solved_at_epoch: best.solved_at_epoch,
            final_accuracy: best.final_accuracy,
            epochs_run: best.epochs_run(),
            param_count: param_count(&best.final_params),
            result: match best.solved_at_epoch {
                Some(epoch) => epoch.to_string(),
                None => format!("{:.1}%", 100.0 * best.final_accuracy),
            },
        }
    }
}

/// Pass/fail lines for the Table 1 checks that the rows allow: attention
/// solving within [`epoch_budget`] in two thirds of the seeds, and on
/// Multiplication with `T0 >= 500` attention beating mean pooling in two
/// thirds of the seeds.
pub fn table1_checks(rows: &[Table1Row]) -> Vec<(String, bool)> {
    let mut groups: Vec<(TaskKind, usize)> = rows.iter().map(|r| (r.task, r.t0)).collect();
    groups.dedup();
    let mut checks = Vec::new();
    for (task, t0) in groups {
        let select = |pooling: PoolingMode| -> Vec<&Table1Row> {
            rows.iter()
                .filter(|r| r.task == task && r.t0 == t0 && r.pooling == pooling)
                .collect()
        };
        let attention = select(PoolingMode::Attention);
        if !attention.is_empty() {
            let budget = epoch_budget(task);
            let solved = attention
                .iter()
                .filter(|r| r.solved_at_epoch.is_some_and(|e| e <= budget))
                .count();
            checks.push((
                format!(
                    "{task} T0={t0} attention solved within {budget} epochs in {solved}/{} seeds",
                    attention.len()
                ),
                solved >= two_thirds(attention.len()),
            ));
        }
        let mean = select(PoolingMode::UnweightedMean);
        if task == TaskKind::Multiplication && t0 >= 500 && !attention.is_empty() && !mean.is_empty() {
            let pairs: Vec<_> = attention
                .iter()
                .filter_map(|a| mean.iter().find(|m| m.seed == a.seed).map(|m| (a, m)))
                .collect();
            let wins = pairs
                .iter()
                .filter(|(a, m)| attention_wins(a.solved_at_epoch, m.solved_at_epoch))
                .count();
            checks.push((
                format!("{task} T0={t0} attention faster than mean in {wins}/{} seeds", pairs.len()),
                !pairs.is_empty() && wins >= two_thirds(pairs.len()),
            ));
        }
    }
    checks
}

fn report_checks(checks: &[(String, bool)]) -> Outcome {
    for (label, pass) in checks {
        println!("{} {label}", if *pass { "PASS" } else { "FAIL" });
    }
    if checks.iter().all(|(_, pass)| *pass) {
        Outcome::Success
    } else {
        Outcome::CheckFailed
    }
}

fn selected<T: Copy, A: Copy + Into<T>>(choice: Option<A>, all: &[T]) -> Vec<T> {
    match choice {
        Some(one) => vec![one.into()],
        None => all.to_vec(),
    }
}

const TASKS: [TaskKind; 2] = [TaskKind::Addition, TaskKind::Multiplication];

fn table1(cmd: &Table1Cmd) -> Result<Outcome> {
    if cmd.lr_grid.is_empty() {
        return Err(usage("learning-rate grid is empty"));
    }
    if cmd.t0_list.is_empty() || cmd.seeds.is_empty() {
        return Err(usage("--t0-list and --seeds must be nonempty"));
    }
    let tasks = selected(cmd.task, &TASKS);
    let poolings = selected(cmd.pooling, &PoolingMode::ALL);
    let out = &cmd.protocol.out;
    let mut sink = CsvSink::epochs(&out.join("epochs.csv"))?;
    let mut rows = Vec::new();
    let mut failure = None;
    'grid: for &task in &tasks {
        for &t0 in &cmd.t0_list {
            for &pooling in &poolings {
                for &seed in &cmd.seeds {
                    let template = cmd.protocol.config(task, LengthSpec::Fixed { t0 }, pooling, cmd.lr_grid[0], seed);
                    match logged_sweep(&template, &cmd.lr_grid, cmd.full, &mut sink) {
                        Ok(result) => rows.push(Table1Row::new(t0, result.best())),
                        Err(e) => {
                            failure = Some(e);
                            break 'grid;
                        }
                    }
                }
            }
        }
    }
    sink.commit()?;
    if let Some(e) = failure {
        return Err(e);
    }

    let mut table = CsvSink::create(
        &out.join("table1.csv"),
        &[
            "task",
            "t0",
            "pooling",
            "seed",
            "best_lr",
            "solved_at_epoch",
            "final_accuracy",
            "epochs_run",
            "param_count",
            "result",
        ],
    )?;
    for row in &rows {
        table.row(row)?;
        println!(
            "{:<14} T0={:<5} {:<9} seed={:<3} lr={:<6} {}",
            row.task.to_string(),
            row.t0,
            row.pooling.to_string(),
            row.seed,
            row.best_lr,
            row.result
        );
    }
    table.commit()?;
    write_json(&out.join("table1.json"), &rows)?;
    Ok(if cmd.check {
        report_checks(&table1_checks(&rows))
    } else {
        Outcome::Success
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VarlenRow {
    pub task: TaskKind,
    pub pooling: PoolingMode,
    pub lengths: LengthSpec,
    pub lr: f64,
    pub epochs_run: usize,
    pub solved_at_epoch: Option<usize>,
    pub final_accuracy: f64,
}

/// Attention on Addition must reach 99%; mean pooling on Multiplication must
/// end strictly below attention.
pub fn varlen_checks(rows: &[VarlenRow]) -> Vec<(String, bool)> {
    let find = |task, pooling| rows.iter().find(|r| r.task == task && r.pooling == pooling);
    let mut checks = Vec::new();
    if let Some(a) = find(TaskKind::Addition, PoolingMode::Attention) {
        checks.push((
            format!("addition attention final accuracy {:.4} >= 0.99", a.final_accuracy),
            a.final_accuracy >= 0.99,
        ));
    }
    if let (Some(a), Some(m)) = (
        find(TaskKind::Multiplication, PoolingMode::Attention),
        find(TaskKind::Multiplication, PoolingMode::UnweightedMean),
    ) {
        checks.push((
            format!(
                "multiplication mean {:.4} < attention {:.4} after {} epochs",
                m.final_accuracy, a.final_accuracy, m.epochs_run
            ),
            m.final_accuracy < a.final_accuracy,
        ));
    }
    checks
}

fn varlen(cmd: &VarlenCmd) -> Result<Outcome> {
    let lengths = LengthSpec::Range {
        lo: cmd.len_lo,
        hi: cmd.len_hi,
    };
    lengths.validate()?;
    let tasks = selected(cmd.task, &TASKS);
    let poolings = selected(cmd.pooling, &PoolingMode::ALL);
    let out = &cmd.protocol.out;
    let mut rows = Vec::new();
    for &task in &tasks {
        let mut attention_epochs = None;
        for &pooling in &poolings {
            let mut config = cmd.protocol.config(task, lengths, pooling, cmd.lr, cmd.seed);
            // mean pooling gets the same number of updates attention used
            if let (PoolingMode::UnweightedMean, Some(epochs)) = (pooling, attention_epochs) {
                config.max_epochs = epochs;
            }
            let dir = out.join(format!("{task}-{pooling}"));
            let mut sink = CsvSink::epochs(&dir.join("epochs.csv"))?;
            let run = train_logged(&config, None, &mut sink);
            sink.commit()?;
            let run = run?;
            write_run_artifacts(&dir, &run)?;
            if pooling == PoolingMode::Attention {
                attention_epochs = Some(run.epochs_run());
            }
            println!("{task} {pooling} {lengths}: {}", describe(&run));
            rows.push(VarlenRow {
                task,
                pooling,
                lengths,
                lr: cmd.lr,
                epochs_run: run.epochs_run(),
                solved_at_epoch: run.solved_at_epoch,
                final_accuracy: run.final_accuracy,
            });
        }
    }
    write_json(&out.join("varlen.json"), &rows)?;
    Ok(if cmd.check {
        report_checks(&varlen_checks(&rows))
    } else {
        Outcome::Success
    })
}

#[derive(Debug, Serialize)]
struct GradcheckCase {
    shape: CaseShape,
    report: GradCheckReport,
}

fn gradcheck(cmd: &GradcheckCmd) -> Result<Outcome> {
    if cmd.configs == 0 {
        return Err(usage("--configs must be at least 1"));
    }
    let results = gradient_check_suite(cmd.configs, cmd.seed, cmd.step)?;
    for (i, (shape, report)) in results.iter().enumerate() {
        println!(
            "case {i}: D={} T={} B={} {}",
            shape.dim, shape.len, shape.batch_size, shape.pooling
        );
        println!("{report}");
    }
    let failed = results.iter().filter(|(_, r)| !r.pass).count();
    println!("{} of {} configurations passed", results.len() - failed, results.len());
    if let Some(dir) = &cmd.out {
        let cases: Vec<_> = results
            .into_iter()
            .map(|(shape, report)| GradcheckCase { shape, report })
            .collect();
        write_json(&dir.join("gradcheck.json"), &cases)?;
    }
    Ok(if failed == 0 {
        Outcome::Success
    } else {
        Outcome::GradientMismatch
    })
}

fn bench(cmd: &BenchCmd) -> Result<Outcome> {
    let config = BenchConfig {
        t0: cmd.t0,
        batch_size: cmd.batch_size,
        dim: cmd.dim,
        workers: cmd.workers.clone(),
        repeats: cmd.repeats,
        seed: cmd.seed,
    };
    let report = run_bench(&config).map_err(|e| match e.downcast::<Error>() {
        Ok(core) => core.into(),
        Err(other) => usage(other.to_string()),
    })?;
    println!(
        "T={} B={} D={} on {} available cores",
        report.sequence_length, config.batch_size, config.dim, report.available_cores
    );
    for t in &report.timings {
        println!(
            "workers {:>3}: {:>12.0} steps/s  speedup {:>5.2}  max |dy| {:.1e}  max |dg| {:.1e}",
            t.workers, t.steps_per_second, t.speedup, t.max_output_diff, t.max_grad_diff
        );
    }
    write_json(&cmd.out.join("bench.json"), &report)?;
    Ok(Outcome::Success)
}

#[derive(Debug, Serialize)]
struct DumpLine<'a> {
    index: usize,
    task: TaskKind,
    len: usize,
    marked: (usize, usize),
    target: f64,
    steps: &'a [[f64; 2]],
}

fn dump(cmd: &DumpCmd) -> Result<Outcome> {
    let lengths = required_lengths(&cmd.lengths)?;
    let instances = make_test_set(cmd.task.into(), lengths, cmd.count, cmd.seed)?;
    let mut text = String::new();
    for (index, inst) in instances.iter().enumerate() {
        let line = DumpLine {
            index,
            task: inst.kind,
            len: inst.len(),
            marked: inst.marked,
            target: inst.target,
            steps: &inst.steps,
        };
        text.push_str(&serde_json::to_string(&line)?);
        text.push('\n');
    }
    match &cmd.out {
        Some(path) => write_text(path, &text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(Outcome::Success)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = AtomicFile::create(path)?;
    file.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    file.commit()
}
