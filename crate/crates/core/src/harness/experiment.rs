use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dirichlet_partition, load_csv, make_synthetic, Dataset, PartitionPlan, Split};
use crate::error::{Error, Result};
use crate::federation::{run_federation, Method, MetricLog, MetricRow};
use crate::harness::config::{layer_count, Budget, Clip, DataSource, ExperimentConfig};
use crate::harness::trace::{write_noise_trace, TraceRow};
use crate::lora::{pretrain_base, BaseModel, LocalTrainConfig};
use crate::numerics::RngState;

/// Everything a federation run needs, derived deterministically from a seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub base: Arc<BaseModel>,
    pub plan: PartitionPlan,
    pub shards: Vec<Dataset>,
    pub pretrain: Option<Dataset>,
    pub val: Dataset,
    pub test: Dataset,
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    RngState::new(seed).split((1 << 32) | tag).next_u64()
}

fn split_counts(n: usize, fractions: [f64; 3]) -> (usize, usize) {
    let train = (n as f64 * fractions[0]).round() as usize;
    let val = ((n as f64 * fractions[1]).round() as usize).min(n - train.min(n));
    (train.min(n), val)
}

/// Builds the data splits, client shards and (pre)trained frozen base.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (train, val, test) = match &cfg.data.source {
        DataSource::Synthetic {
            classes,
            dim,
            samples,
            class_sep,
        } => {
            let all = make_synthetic(*classes, *dim, *samples, *class_sep, sub_seed(seed, 1))?;
            let (n_train, n_val) = split_counts(all.len(), cfg.data.fractions);
            let idx: Vec<usize> = (0..all.len()).collect();
            (
                all.subset(&idx[..n_train], Split::Train),
                all.subset(&idx[n_train..n_train + n_val], Split::Val),
                all.subset(&idx[n_train + n_val..], Split::Test),
            )
        }
        DataSource::Csv { path, label_column } => {
            let s = load_csv(path, label_column, cfg.data.fractions, sub_seed(seed, 1))?;
            (s.train, s.val, s.test)
        }
    };
    for (name, d) in [("train", &train), ("val", &val), ("test", &test)] {
        if d.is_empty() {
            return Err(Error::Data(format!("{name} split is empty; raise the sample count or adjust data.fractions")));
        }
    }

    let n_pre = (train.len() as f64 * cfg.data.pretrain_fraction).round() as usize;
    let idx: Vec<usize> = (0..train.len()).collect();
    let pretrain = (n_pre > 0).then(|| train.subset(&idx[..n_pre], Split::Pretrain));
    let pool = train.subset(&idx[n_pre..], Split::Train);

    let mut base_rng = RngState::new(sub_seed(seed, 2));
    let mut base = BaseModel::random(cfg.model.arch, train.dim(), cfg.model.hidden, train.classes, &mut base_rng)?;
    if let Some(p) = &pretrain {
        if cfg.train.pretrain_epochs > 0 {
            let pc = LocalTrainConfig {
                epochs: cfg.train.pretrain_epochs,
                batch_size: cfg.train.batch_size,
                lr: cfg.train.pretrain_lr,
            };
            base = pretrain_base(base, p, &pc, &mut base_rng)?;
        }
    }

    let min_shard = cfg.data.min_shard.unwrap_or(2 * cfg.train.batch_size);
    let plan = dirichlet_partition(&pool.y, cfg.data.clients, cfg.data.beta, sub_seed(seed, 3), min_shard)?;
    let shards = plan.shards.iter().map(|s| pool.subset(s, Split::Train)).collect();
    Ok(Prepared {
        base: Arc::new(base),
        plan,
        shards,
        pretrain,
        val,
        test,
    })
}

/// Result of one seed (after clip selection, if any).
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub log: MetricLog,
    pub traces: Vec<TraceRow>,
    /// Clip used; `None` without DP.
    pub clip: Option<f64>,
    pub sigma: Option<f64>,
    pub val_accuracy: f64,
    pub shard_sizes: Vec<usize>,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let prep = prepare(cfg, seed)?;
    let clips: Vec<f64> = match (cfg.privacy.enabled, cfg.privacy.clip) {
        (false, _) => vec![f64::INFINITY],
        (true, Clip::Fixed(c)) => vec![c],
        (true, Clip::Auto) => cfg.privacy.clip_grid.clone(),
    };
    let layers = layer_count(cfg.model.arch);
    let one = |clip: f64| -> Result<SeedRun> {
        let fed = cfg.federation(layers, clip)?;
        let (log, state) = run_federation(prep.base.clone(), prep.shards.clone(), &prep.test, &fed, seed)?;
        let (val_accuracy, _) = state.evaluate(&prep.val)?;
        let epsilon = cfg.privacy.epsilon.filter(|_| cfg.privacy.enabled);
        let traces = state
            .traces()
            .iter()
            .map(|t| TraceRow::new(cfg.method, epsilon, seed, t))
            .collect();
        Ok(SeedRun {
            seed,
            log,
            traces,
            clip: cfg.privacy.enabled.then_some(clip),
            sigma: state.privacy().enabled.then_some(state.privacy().sigma),
            val_accuracy,
            shard_sizes: state.shard_sizes(),
        })
    };
    let results: Vec<Result<SeedRun>> = if cfg.train.parallel {
        clips.par_iter().map(|&c| one(c)).collect()
    } else {
        clips.iter().map(|&c| one(c)).collect()
    };
    // A grid value whose training diverges is dropped; other failures, or a
    // grid where every value diverges, are reported.
    let mut best: Option<SeedRun> = None;
    let mut diverged = None;
    for r in results {
        match r {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.val_accuracy > b.val_accuracy) {
                    best = Some(run);
                }
            }
            Err(e) if clips.len() > 1 && e.category() == "numeric" => {
                diverged.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match (best, diverged) {
        (Some(run), _) => Ok(run),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("clip grid is never empty"),
    }
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub clip: Option<f64>,
    pub sigma: Option<f64>,
}

/// Final-round statistics across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub method: Method,
    pub pattern: Option<String>,
    /// `"off"` or the epsilon.
    pub budget: String,
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub final_round: usize,
    pub accuracy: Stat,
    pub macro_f1: Stat,
    pub deviation_norm: Stat,
    pub epsilon_spent: Stat,
    pub per_seed: Vec<SeedSummary>,
}

impl Summary {
    pub fn from_runs(cfg: &ExperimentConfig, runs: &[SeedRun]) -> Summary {
        let finals: Vec<&MetricRow> = runs.iter().map(|r| r.log.last().expect("round 0 always logged")).collect();
        let col = |f: fn(&MetricRow) -> f64| Stat::of(&finals.iter().map(|r| f(r)).collect::<Vec<_>>());
        Summary {
            schema_version: crate::harness::SCHEMA_VERSION,
            method: cfg.method,
            pattern: cfg.pattern.as_ref().map(|p| p.to_string()),
            budget: cfg.budget().to_string(),
            beta: cfg.data.beta,
            seeds: runs.iter().map(|r| r.seed).collect(),
            final_round: finals.first().map_or(0, |r| r.round),
            accuracy: col(|r| r.accuracy),
            macro_f1: col(|r| r.macro_f1),
            deviation_norm: col(|r| r.deviation_norm),
            epsilon_spent: col(|r| r.epsilon_spent),
            per_seed: runs
                .iter()
                .zip(&finals)
                .map(|(r, f)| SeedSummary {
                    seed: r.seed,
                    accuracy: f.accuracy,
                    macro_f1: f.macro_f1,
                    clip: r.clip,
                    sigma: r.sigma,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_seed{seed}.csv"))
}

/// Runs every seed of `cfg` and writes its files into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let runs: Vec<SeedRun> = if cfg.train.parallel {
        cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<_>>()?
    } else {
        cfg.seeds.iter().map(|&s| run_seed(cfg, s)).collect::<Result<_>>()?
    };
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for r in &runs {
        let path = metrics_path(dir, r.seed);
        write_csv(&path, &r.log.rows)?;
        files.push(path);
    }
    let summary = Summary::from_runs(cfg, &runs);
    let path = dir.join("summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    let trace_path = dir.join("noise_trace.csv");
    if cfg.privacy.enabled {
        let rows: Vec<TraceRow> = runs.iter().flat_map(|r| r.traces.iter().cloned()).collect();
        write_noise_trace(&trace_path, &rows)?;
        files.push(trace_path);
    } else if trace_path.exists() {
        // A stale trace from an earlier DP run would contradict this one.
        fs::remove_file(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    }
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(ExperimentOutput { runs, summary, files })
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One (method, budget) cell of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub budget: String,
    pub beta: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub deviation_mean: f64,
}

/// Seed-averaged learning curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: Method,
    pub budget: String,
    pub beta: f64,
    pub round: usize,
    pub accuracy_mean: f64,
    pub macro_f1_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub curves: Vec<CurvePoint>,
}

impl Comparison {
    /// Methods as rows, budgets as columns: `acc ± std (F1)` per cell.
    pub fn to_text(&self) -> String {
        let mut budgets: Vec<(String, f64)> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        for r in &self.rows {
            if !budgets.contains(&(r.budget.clone(), r.beta)) {
                budgets.push((r.budget.clone(), r.beta));
            }
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        let multi_beta = budgets.iter().any(|b| b.1 != budgets[0].1);
        let head = |b: &(String, f64)| {
            let eps = if b.0 == "off" { "no DP".to_string() } else { format!("eps={}", b.0) };
            if multi_beta {
                format!("{eps} beta={}", b.1)
            } else {
                eps
            }
        };
        let mut cells: Vec<Vec<String>> = vec![std::iter::once("method".to_string()).chain(budgets.iter().map(head)).collect()];
        for m in &methods {
            let mut line = vec![m.to_string()];
            for b in &budgets {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.method == *m && r.budget == b.0 && r.beta == b.1)
                    .map(|r| format!("{:.4} ± {:.4} (F1 {:.4})", r.accuracy_mean, r.accuracy_std, r.macro_f1_mean))
                    .unwrap_or_else(|| "-".into());
                line.push(cell);
            }
            cells.push(line);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let padded: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn cell_dir(base: &Path, cfg: &ExperimentConfig, with_beta: bool) -> PathBuf {
    let mut d = base.join(cfg.method.as_str()).join(cfg.budget().label());
    if with_beta {
        d = d.join(format!("beta{}", cfg.data.beta));
    }
    d
}

fn differs_outside_cell(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    let norm = |c: &ExperimentConfig| {
        let mut c = c.with_cell(Method::Deer, Budget::Off, 1.0);
        c.pattern = None;
        c.output_dir = PathBuf::new();
        c.privacy.epsilon = None;
        c
    };
    norm(a) != norm(b)
}

fn summarize_cells(cells: &[(ExperimentConfig, ExperimentOutput)]) -> Comparison {
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (c, out) in cells {
        let s = &out.summary;
        rows.push(ComparisonRow {
            method: c.method,
            budget: s.budget.clone(),
            beta: s.beta,
            accuracy_mean: s.accuracy.mean,
            accuracy_std: s.accuracy.std,
            macro_f1_mean: s.macro_f1.mean,
            macro_f1_std: s.macro_f1.std,
            deviation_mean: s.deviation_norm.mean,
        });
        let rounds = out.runs[0].log.rows.len();
        for t in 0..rounds {
            let acc: Vec<f64> = out.runs.iter().map(|r| r.log.rows[t].accuracy).collect();
            let f1: Vec<f64> = out.runs.iter().map(|r| r.log.rows[t].macro_f1).collect();
            curves.push(CurvePoint {
                method: c.method,
                budget: s.budget.clone(),
                beta: s.beta,
                round: out.runs[0].log.rows[t].round,
                accuracy_mean: Stat::of(&acc).mean,
                macro_f1_mean: Stat::of(&f1).mean,
            });
        }
    }
    Comparison { rows, curves }
}

/// Runs each config (one method each) and tabulates them. All fields other
/// than method, pattern, privacy budget and output directory must agree.
pub fn compare_configs(cfgs: &[ExperimentConfig], output_dir: &Path) -> Result<Comparison> {
    let Some(first) = cfgs.first() else {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    };
    let bad: Vec<String> = cfgs
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| differs_outside_cell(first, c))
        .map(|(i, c)| format!("config {i} ({}) differs from config 0 in a shared field", c.method))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let cells: Vec<(ExperimentConfig, ExperimentOutput)> = cfgs
        .iter()
        .map(|c| run_experiment(c).map(|o| (c.clone(), o)))
        .collect::<Result<_>>()?;
    let cmp = summarize_cells(&cells);
    write_comparison(&cmp, output_dir, "comparison")?;
    Ok(cmp)
}

/// Every listed method under every listed budget.
pub fn compare_methods(cfg: &ExperimentConfig) -> Result<Comparison> {
    let mut cfgs = Vec::new();
    for budget in cfg.budgets() {
        for m in cfg.methods() {
            let mut c = cfg.with_cell(m, budget, cfg.data.beta);
            c.output_dir = cell_dir(&cfg.output_dir, &c, false);
            cfgs.push(c);
        }
    }
    compare_configs(&cfgs, &cfg.output_dir)
}

/// Cartesian product of methods, budgets and betas; seeds within each cell.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Comparison> {
    let mut cells = Vec::new();
    for beta in cfg.betas() {
        for budget in cfg.budgets() {
            for m in cfg.methods() {
                let mut c = cfg.with_cell(m, budget, beta);
                c.output_dir = cell_dir(&cfg.output_dir, &c, true);
                let out = run_experiment(&c)?;
                cells.push((c, out));
            }
        }
    }
    let cmp = summarize_cells(&cells);
    write_comparison(&cmp, &cfg.output_dir, "sweep")?;
    Ok(cmp)
}

fn write_comparison(cmp: &Comparison, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join(format!("{stem}.csv")), &cmp.rows)?;
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, cmp.to_text()).map_err(|e| Error::io(&txt, e))?;
    write_csv(&dir.join(format!("{stem}_curves.csv")), &cmp.curves)
}
