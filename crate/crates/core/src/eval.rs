//! Multilabel micro P/R/F1, relative-drop computation, sweep orchestration
//! over perturbation levels and strategy combinations, and report emission.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    entity_swap_attack, header_synonym_attack, imperceptibility_audit, AttackConfig, AttackError,
    AttackRecord, HeaderSwap, PoolKind, Sampling, Selection,
};
use crate::kb::{EmbeddingStore, EntityKB, KbError};
use crate::table::{Corpus, Table, TableError};
use crate::victim::{PredictionSet, Victim, VictimError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold lists have different lengths ({predictions} vs {gold})")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("baseline score {0} is not positive; relative drop is undefined")]
    NonPositiveBaseline(f64),
    #[error("report rows are missing the unperturbed baseline")]
    MissingBaseline,
    #[error("corpus has no annotated columns to evaluate")]
    NoAnnotatedColumns,
    #[error("sweep spec: {0}")]
    InvalidSpec(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv write failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Micro-averaged precision, recall, and F1 over pooled (column, class)
/// decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Counts pooled over every (column, class) decision: P = TP/(TP+FP),
/// R = TP/(TP+FN), F1 their harmonic mean. P is 0 when nothing was
/// predicted; F1 is 0 when P + R = 0.
pub fn micro_prf(
    predictions: &[PredictionSet],
    gold: &[BTreeSet<String>],
) -> Result<MicroPrf, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (pred, gold) in predictions.iter().zip(gold) {
        for class in pred.iter() {
            if gold.contains(class) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        fn_ += gold.iter().filter(|c| !pred.contains(c)).count();
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MicroPrf {
        precision,
        recall,
        f1,
    })
}

/// 100·(baseline − perturbed)/baseline.
pub fn relative_drop(baseline: f64, perturbed: f64) -> Result<f64, EvalError> {
    if baseline <= 0.0 {
        return Err(EvalError::NonPositiveBaseline(baseline));
    }
    Ok(100.0 * (baseline - perturbed) / baseline)
}

/// Report formatting for a perturbed score: the value at one decimal with
/// its integer relative drop in parentheses, e.g. `26.5 (70%)`.
pub fn format_with_drop(value: f64, baseline: f64) -> Result<String, EvalError> {
    let drop = relative_drop(baseline, value)?.round() as i64;
    Ok(format!("{value:.1} ({drop}%)"))
}

/// The evaluation grid: every combination of these coordinates becomes one
/// sweep cell, attacked across the whole corpus under each seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub p_values: Vec<u8>,
    pub selections: Vec<Selection>,
    pub samplings: Vec<Sampling>,
    pub pools: Vec<PoolKind>,
    pub seeds: Vec<u64>,
    pub allow_duplicates: bool,
    /// Perturb only columns the victim classifies correctly at baseline
    /// (prediction and gold sets intersect); others keep their pristine
    /// prediction and never count toward the success rate.
    pub only_correct: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            p_values: vec![20, 40, 60, 80, 100],
            selections: vec![Selection::Importance, Selection::Random],
            samplings: vec![Sampling::Similarity, Sampling::Random],
            pools: vec![PoolKind::Test, PoolKind::Filtered],
            seeds: vec![1, 2, 3, 4, 5],
            allow_duplicates: false,
            only_correct: true,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, empty) in [
            ("p_values", self.p_values.is_empty()),
            ("selections", self.selections.is_empty()),
            ("samplings", self.samplings.is_empty()),
            ("pools", self.pools.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(EvalError::InvalidSpec(format!("{name} must be non-empty")));
            }
        }
        if let Some(p) = self.p_values.iter().find(|&&p| p == 0 || p > 100) {
            return Err(EvalError::InvalidSpec(format!("p = {p} outside 1..=100")));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(u8, Selection, Sampling, PoolKind, u64)> {
        let mut out = Vec::new();
        for &p in &self.p_values {
            for &selection in &self.selections {
                for &sampling in &self.samplings {
                    for &pool in &self.pools {
                        for &seed in &self.seeds {
                            out.push((p, selection, sampling, pool, seed));
                        }
                    }
                }
            }
        }
        out
    }
}

/// One row of the sweep CSV. The baseline row has p = 0 and no strategy
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub p: u8,
    pub selection: Option<Selection>,
    pub sampling: Option<Sampling>,
    pub pool: Option<PoolKind>,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub drop_f1_pct: f64,
    pub drop_p_pct: f64,
    pub drop_r_pct: f64,
    pub success_rate: f64,
    pub skip_rate: f64,
}

/// Per-class slice of one sweep cell, for type-level diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassRow {
    pub p: u8,
    pub selection: Option<Selection>,
    pub sampling: Option<Sampling>,
    pub pool: Option<PoolKind>,
    pub seed: u64,
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub baseline: MetricsRow,
    pub rows: Vec<MetricsRow>,
    pub per_class: Vec<PerClassRow>,
    pub records: Vec<AttackRecord>,
    /// Every attack's imperceptibility audit outcome, aligned with `records`.
    pub audits: Vec<bool>,
    /// Cells that aborted, with their diagnostics.
    pub failures: Vec<String>,
}

fn gold_sets(columns: &[(&Table, usize)]) -> Vec<BTreeSet<String>> {
    columns
        .iter()
        .map(|(table, col)| {
            table
                .annotation(*col)
                .expect("annotated column")
                .iter()
                .cloned()
                .collect()
        })
        .collect()
}

fn per_class_rows(
    coords: (u8, Option<Selection>, Option<Sampling>, Option<PoolKind>, u64),
    predictions: &[PredictionSet],
    gold: &[BTreeSet<String>],
) -> Vec<PerClassRow> {
    let mut classes: BTreeSet<&str> = BTreeSet::new();
    for g in gold {
        classes.extend(g.iter().map(String::as_str));
    }
    for p in predictions {
        classes.extend(p.iter());
    }
    classes
        .into_iter()
        .map(|class| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fn_ = 0usize;
            for (pred, gold) in predictions.iter().zip(gold) {
                match (pred.contains(class), gold.contains(class)) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            PerClassRow {
                p: coords.0,
                selection: coords.1,
                sampling: coords.2,
                pool: coords.3,
                seed: coords.4,
                class: class.to_string(),
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

fn drop_or_zero(baseline: f64, value: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - value) / baseline
    } else {
        0.0
    }
}

struct CellOutcome {
    row: MetricsRow,
    per_class: Vec<PerClassRow>,
    records: Vec<AttackRecord>,
    audits: Vec<bool>,
}

/// Runs the full evaluation protocol: one baseline measurement of the
/// pristine corpus, then one cell per grid combination with every annotated
/// column attacked. Deterministic per seed regardless of parallelism; a
/// cell that errors is dropped with a diagnostic while the rest complete.
pub fn run_sweep(
    spec: &SweepSpec,
    victim: &dyn Victim,
    test_corpus: &Corpus,
    kb_test: &EntityKB,
    kb_train: &EntityKB,
) -> Result<SweepOutput, EvalError> {
    spec.validate()?;
    let columns = test_corpus.annotated_columns();
    if columns.is_empty() {
        return Err(EvalError::NoAnnotatedColumns);
    }
    let gold = gold_sets(&columns);

    // Baseline on the pristine corpus. A victim that cannot answer here
    // fails the whole sweep; there is nothing meaningful to attack.
    let baseline_preds: Vec<PredictionSet> = columns
        .iter()
        .map(|(table, col)| victim.predict_classes(table, *col))
        .collect::<Result<_, _>>()?;
    let baseline_prf = micro_prf(&baseline_preds, &gold)?;
    let baseline = MetricsRow {
        p: 0,
        selection: None,
        sampling: None,
        pool: None,
        seed: 0,
        precision: baseline_prf.precision,
        recall: baseline_prf.recall,
        f1: baseline_prf.f1,
        drop_f1_pct: 0.0,
        drop_p_pct: 0.0,
        drop_r_pct: 0.0,
        success_rate: 0.0,
        skip_rate: 0.0,
    };
    let correct_at_baseline: Vec<bool> = baseline_preds
        .iter()
        .zip(&gold)
        .map(|(pred, gold)| gold.iter().any(|c| pred.contains(c)))
        .collect();

    let cells = spec.cells();
    let outcomes: Vec<Result<CellOutcome, String>> = cells
        .par_iter()
        .map(|&(p, selection, sampling, pool, seed)| {
            let config = AttackConfig {
                p,
                selection,
                sampling,
                pool,
                seed,
                allow_duplicates: spec.allow_duplicates,
            };
            run_cell(
                &config,
                victim,
                &columns,
                &gold,
                &baseline_preds,
                &correct_at_baseline,
                spec.only_correct,
                &baseline,
                kb_test,
                kb_train,
            )
            .map_err(|e| {
                format!(
                    "cell p={p} selection={selection} sampling={sampling} pool={pool} seed={seed}: {e}"
                )
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut per_class = Vec::new();
    let mut records = Vec::new();
    let mut audits = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(cell) => {
                rows.push(cell.row);
                per_class.extend(cell.per_class);
                records.extend(cell.records);
                audits.extend(cell.audits);
            }
            Err(diagnostic) => {
                log::error!("sweep cell aborted: {diagnostic}");
                failures.push(diagnostic);
            }
        }
    }
    sort_rows(&mut rows);
    Ok(SweepOutput {
        baseline,
        rows,
        per_class,
        records,
        audits,
        failures,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    config: &AttackConfig,
    victim: &dyn Victim,
    columns: &[(&Table, usize)],
    gold: &[BTreeSet<String>],
    baseline_preds: &[PredictionSet],
    correct_at_baseline: &[bool],
    only_correct: bool,
    baseline: &MetricsRow,
    kb_test: &EntityKB,
    kb_train: &EntityKB,
) -> Result<CellOutcome, EvalError> {
    let mut predictions: Vec<PredictionSet> = Vec::with_capacity(columns.len());
    let mut records = Vec::new();
    let mut audits = Vec::new();
    let mut attacked = 0usize;
    let mut successes = 0usize;
    let mut selected_cells = 0usize;
    let mut skips = 0usize;

    for (i, (table, col)) in columns.iter().enumerate() {
        if only_correct && !correct_at_baseline[i] {
            predictions.push(baseline_preds[i].clone());
            continue;
        }
        let result = entity_swap_attack(victim, table, *col, config, kb_test, kb_train)?;
        attacked += 1;
        if result.success {
            successes += 1;
        }
        selected_cells += result.swaps.len() + result.skips;
        skips += result.skips;
        audits.push(imperceptibility_audit(&result, kb_test)?);
        predictions.push(result.pred_after.clone());
        records.push(AttackRecord::from(&result));
    }

    let prf = micro_prf(&predictions, gold)?;
    let coords = (
        config.p,
        Some(config.selection),
        Some(config.sampling),
        Some(config.pool),
        config.seed,
    );
    let row = MetricsRow {
        p: config.p,
        selection: Some(config.selection),
        sampling: Some(config.sampling),
        pool: Some(config.pool),
        seed: config.seed,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        drop_f1_pct: drop_or_zero(baseline.f1, prf.f1),
        drop_p_pct: drop_or_zero(baseline.precision, prf.precision),
        drop_r_pct: drop_or_zero(baseline.recall, prf.recall),
        success_rate: if attacked == 0 {
            0.0
        } else {
            successes as f64 / attacked as f64
        },
        skip_rate: if selected_cells == 0 {
            0.0
        } else {
            skips as f64 / selected_cells as f64
        },
    };
    let per_class = per_class_rows(coords, &predictions, gold);
    Ok(CellOutcome {
        row,
        per_class,
        records,
        audits,
    })
}

fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        (a.p, a.selection, a.sampling, a.pool, a.seed).cmp(&(
            b.p,
            b.selection,
            b.sampling,
            b.pool,
            b.seed,
        ))
    });
}

/// One row of the header-attack sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderMetricsRow {
    pub p: u8,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub drop_f1_pct: f64,
    pub drop_p_pct: f64,
    pub drop_r_pct: f64,
    pub skip_rate: f64,
}

/// Per-table record of a header attack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeaderAttackRecord {
    pub table_id: String,
    pub p: u8,
    pub seed: u64,
    pub swaps: Vec<HeaderSwap>,
    pub skips: usize,
}

#[derive(Debug)]
pub struct HeaderSweepOutput {
    pub baseline: HeaderMetricsRow,
    pub rows: Vec<HeaderMetricsRow>,
    pub records: Vec<HeaderAttackRecord>,
}

/// Sweeps the header-synonym attack over p and seeds, evaluating the
/// victim on each perturbed corpus.
pub fn run_header_sweep(
    p_values: &[u8],
    seeds: &[u64],
    victim: &dyn Victim,
    corpus: &Corpus,
    synonyms: &EmbeddingStore,
) -> Result<HeaderSweepOutput, EvalError> {
    if p_values.is_empty() || seeds.is_empty() {
        return Err(EvalError::InvalidSpec(
            "p_values and seeds must be non-empty".into(),
        ));
    }
    let columns = corpus.annotated_columns();
    if columns.is_empty() {
        return Err(EvalError::NoAnnotatedColumns);
    }
    let gold = gold_sets(&columns);
    let baseline_preds: Vec<PredictionSet> = columns
        .iter()
        .map(|(table, col)| victim.predict_classes(table, *col))
        .collect::<Result<_, _>>()?;
    let baseline_prf = micro_prf(&baseline_preds, &gold)?;
    let baseline = HeaderMetricsRow {
        p: 0,
        seed: 0,
        precision: baseline_prf.precision,
        recall: baseline_prf.recall,
        f1: baseline_prf.f1,
        drop_f1_pct: 0.0,
        drop_p_pct: 0.0,
        drop_r_pct: 0.0,
        skip_rate: 0.0,
    };

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &p in p_values {
        for &seed in seeds {
            let config = AttackConfig::new(
                p,
                Selection::Random,
                Sampling::Similarity,
                PoolKind::Test,
                seed,
            );
            let mut chosen = 0usize;
            let mut skips = 0usize;
            let mut perturbed_tables = Vec::with_capacity(corpus.tables.len());
            for table in &corpus.tables {
                let outcome = header_synonym_attack(table, &config, synonyms)?;
                chosen += outcome.swaps.len() + outcome.skips;
                skips += outcome.skips;
                records.push(HeaderAttackRecord {
                    table_id: table.table_id().to_string(),
                    p,
                    seed,
                    swaps: outcome.swaps.clone(),
                    skips: outcome.skips,
                });
                perturbed_tables.push(outcome.table);
            }
            let perturbed = Corpus::new(perturbed_tables, corpus.split_tag)?;
            let perturbed_columns = perturbed.annotated_columns();
            let predictions: Vec<PredictionSet> = perturbed_columns
                .iter()
                .map(|(table, col)| victim.predict_classes(table, *col))
                .collect::<Result<_, _>>()?;
            let prf = micro_prf(&predictions, &gold)?;
            rows.push(HeaderMetricsRow {
                p,
                seed,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                drop_f1_pct: drop_or_zero(baseline.f1, prf.f1),
                drop_p_pct: drop_or_zero(baseline.precision, prf.precision),
                drop_r_pct: drop_or_zero(baseline.recall, prf.recall),
                skip_rate: if chosen == 0 {
                    0.0
                } else {
                    skips as f64 / chosen as f64
                },
            });
        }
    }
    rows.sort_by_key(|r| (r.p, r.seed));
    Ok(HeaderSweepOutput {
        baseline,
        rows,
        records,
    })
}

fn opt_str<T: std::fmt::Display>(value: &Option<T>) -> String {
    value
        .as_ref()
        .map(|v| v.to_string())
        .unwrap_or_else(|| "none".to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes the sweep CSV: baseline row first, then every cell row in grid
/// order. Byte-identical across reruns of the same sweep.
pub fn write_sweep_csv(output: &SweepOutput, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "p",
        "selection",
        "sampling",
        "pool",
        "seed",
        "precision",
        "recall",
        "f1",
        "drop_f1_pct",
        "success_rate",
        "skip_rate",
    ])?;
    for row in std::iter::once(&output.baseline).chain(&output.rows) {
        w.write_record([
            row.p.to_string(),
            opt_str(&row.selection),
            opt_str(&row.sampling),
            opt_str(&row.pool),
            row.seed.to_string(),
            row.precision.to_string(),
            row.recall.to_string(),
            row.f1.to_string(),
            row.drop_f1_pct.to_string(),
            row.success_rate.to_string(),
            row.skip_rate.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn write_per_class_csv(output: &SweepOutput, path: &Path) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "p", "selection", "sampling", "pool", "seed", "class", "precision", "recall", "f1",
    ])?;
    for row in &output.per_class {
        w.write_record([
            row.p.to_string(),
            opt_str(&row.selection),
            opt_str(&row.sampling),
            opt_str(&row.pool),
            row.seed.to_string(),
            row.class.clone(),
            row.precision.to_string(),
            row.recall.to_string(),
            row.f1.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// The headline results table: the importance + similarity + filtered
/// slice, seed-averaged per p, with percentage scores and integer relative
/// drops against the unperturbed baseline.
fn write_headline_csv(output: &SweepOutput, path: &Path) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "p",
        "f1",
        "f1_drop_pct",
        "precision",
        "precision_drop_pct",
        "recall",
        "recall_drop_pct",
    ])?;
    let b = &output.baseline;
    w.write_record([
        "0".to_string(),
        format!("{:.2}", b.f1 * 100.0),
        "0".into(),
        format!("{:.2}", b.precision * 100.0),
        "0".into(),
        format!("{:.2}", b.recall * 100.0),
        "0".into(),
    ])?;
    let mut ps: Vec<u8> = output.rows.iter().map(|r| r.p).collect::<BTreeSet<_>>().into_iter().collect();
    ps.sort_unstable();
    for p in ps {
        let slice: Vec<&MetricsRow> = output
            .rows
            .iter()
            .filter(|r| {
                r.p == p
                    && r.selection == Some(Selection::Importance)
                    && r.sampling == Some(Sampling::Similarity)
                    && r.pool == Some(PoolKind::Filtered)
            })
            .collect();
        if slice.is_empty() {
            continue;
        }
        let f1 = mean(&slice.iter().map(|r| r.f1).collect::<Vec<_>>());
        let precision = mean(&slice.iter().map(|r| r.precision).collect::<Vec<_>>());
        let recall = mean(&slice.iter().map(|r| r.recall).collect::<Vec<_>>());
        let drop = |base: f64, v: f64| {
            if base > 0.0 {
                (100.0 * (base - v) / base).round() as i64
            } else {
                0
            }
        };
        w.write_record([
            p.to_string(),
            format!("{:.2}", f1 * 100.0),
            drop(b.f1, f1).to_string(),
            format!("{:.2}", precision * 100.0),
            drop(b.precision, precision).to_string(),
            format!("{:.2}", recall * 100.0),
            drop(b.recall, recall).to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Selection-strategy comparison series (similarity sampling, test pool):
/// one point per (p, selection, seed), with the baseline F1 alongside.
fn write_selection_series_csv(output: &SweepOutput, path: &Path) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["p", "selection", "seed", "f1", "baseline_f1"])?;
    for row in &output.rows {
        if row.sampling == Some(Sampling::Similarity) && row.pool == Some(PoolKind::Test) {
            w.write_record([
                row.p.to_string(),
                opt_str(&row.selection),
                row.seed.to_string(),
                row.f1.to_string(),
                output.baseline.f1.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Sampling-strategy and pool comparison series (importance selection):
/// one point per (p, sampling, pool, seed), with the baseline F1 alongside.
fn write_sampling_series_csv(output: &SweepOutput, path: &Path) -> Result<(), EvalError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["p", "sampling", "pool", "seed", "f1", "baseline_f1"])?;
    for row in &output.rows {
        if row.selection == Some(Selection::Importance) {
            w.write_record([
                row.p.to_string(),
                opt_str(&row.sampling),
                opt_str(&row.pool),
                row.seed.to_string(),
                row.f1.to_string(),
                output.baseline.f1.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes one JSON line per attack record.
pub fn write_attack_records(
    records: &[AttackRecord],
    path: impl AsRef<Path>,
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)
            .map_err(|e| EvalError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e),
            })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes the header-attack sweep CSV.
pub fn write_header_sweep_csv(
    output: &HeaderSweepOutput,
    path: impl AsRef<Path>,
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "p",
        "seed",
        "precision",
        "recall",
        "f1",
        "drop_f1_pct",
        "skip_rate",
    ])?;
    for row in std::iter::once(&output.baseline).chain(&output.rows) {
        w.write_record([
            row.p.to_string(),
            row.seed.to_string(),
            row.precision.to_string(),
            row.recall.to_string(),
            row.f1.to_string(),
            row.drop_f1_pct.to_string(),
            row.skip_rate.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Emits every report file for a sweep into `dir`: the long-form sweep CSV,
/// the per-class breakdown, the seed-averaged headline table, and the two
/// comparison series. Returns the written paths.
pub fn emit_report(output: &SweepOutput, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, EvalError> {
    if output.baseline.p != 0 {
        return Err(EvalError::MissingBaseline);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let sweep = dir.join("sweep.csv");
    let per_class = dir.join("per_class.csv");
    let headline = dir.join("results_table.csv");
    let selection = dir.join("selection_series.csv");
    let sampling = dir.join("sampling_series.csv");
    write_sweep_csv(output, &sweep)?;
    write_per_class_csv(output, &per_class)?;
    write_headline_csv(output, &headline)?;
    write_selection_series_csv(output, &selection)?;
    write_sampling_series_csv(output, &sampling)?;
    Ok(vec![sweep, per_class, headline, selection, sampling])
}
