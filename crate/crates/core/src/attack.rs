//! The entity-swap attack: mask-based importance scoring, top-p key-entity
//! selection, adversarial sampling, the header-synonym attack, and the
//! success/imperceptibility judgments.
//!
//! Attacks are pure functions of immutable inputs plus a seed. Per-task
//! randomness is derived by stable hashing of `(seed, table_id, column)`,
//! so results cannot depend on scheduling and arbitrarily many attacks may
//! run in parallel.

use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kb::{filtered_pool, most_dissimilar_in, nearest_synonym, EmbeddingStore, EntityKB,
    EntityRecord, KbError};
use crate::table::{column, mask_entity, swap_entity, CellRef, Table, TableError, MASK};
use crate::victim::{PredictionSet, Victim, VictimError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("column {col} of table {table_id} has no annotation")]
    UnannotatedColumn { table_id: String, col: usize },
    #[error("cell {cell} is not in attacked column {col}")]
    CellNotInColumn { cell: CellRef, col: usize },
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("adversarial entity {surface:?} is missing from the knowledge base")]
    AdversarialEntityMissing { surface: String },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Victim(#[from] VictimError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// How key entities are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Importance,
    Random,
}

/// How adversarial replacements are drawn from the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Similarity,
    Random,
}

/// Which candidate pool replacements come from: all test-split entities of
/// the class, or only those never seen in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Test,
    Filtered,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                match self {
                    $($variant => write!(f, $text)),+
                }
            }
        }
        impl std::str::FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    )),
                }
            }
        }
    };
}

str_enum!(Selection { Selection::Importance => "importance", Selection::Random => "random" });
str_enum!(Sampling { Sampling::Similarity => "similarity", Sampling::Random => "random" });
str_enum!(PoolKind { PoolKind::Test => "test", PoolKind::Filtered => "filtered" });

/// Full parameterization of one entity-swap attack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Percentage of the column's entities to perturb, 1..=100.
    pub p: u8,
    pub selection: Selection,
    pub sampling: Sampling,
    pub pool: PoolKind,
    pub seed: u64,
    /// Whether one adversarial entity may fill several cells of a column.
    pub allow_duplicates: bool,
}

impl AttackConfig {
    pub fn new(p: u8, selection: Selection, sampling: Sampling, pool: PoolKind, seed: u64) -> Self {
        AttackConfig {
            p,
            selection,
            sampling,
            pool,
            seed,
            allow_duplicates: false,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.p == 0 || self.p > 100 {
            return Err(AttackError::InvalidConfig(format!(
                "p = {} outside 1..=100",
                self.p
            )));
        }
        Ok(())
    }
}

/// Importance of one entity cell: the largest ground-truth-class logit
/// delta caused by masking it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub cell: CellRef,
    pub score: f64,
}

/// One applied swap. `score` is the cell's importance score when importance
/// selection was in effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub cell: CellRef,
    pub before: String,
    pub after: String,
    pub score: Option<f64>,
}

/// Everything one attack produced.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub original_table: Table,
    pub adversarial_table: Table,
    pub column: usize,
    pub config: AttackConfig,
    pub swaps: Vec<SwapRecord>,
    /// Importance scores of every candidate cell (empty under random
    /// selection, which never scores).
    pub scores: Vec<ImportanceScore>,
    pub pred_before: PredictionSet,
    pub pred_after: PredictionSet,
    /// Prediction sets before and after share no class.
    pub success: bool,
    /// Success achieved by emptying the prediction set entirely.
    pub abstention: bool,
    /// Selected cells left unperturbed for want of candidates.
    pub skips: usize,
}

impl AttackResult {
    pub fn table_id(&self) -> &str {
        self.original_table.table_id()
    }
}

/// Line-format serialization of an attack (the results file carries one of
/// these per attack, without the table copies).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRecord {
    pub table_id: String,
    pub column: usize,
    pub config: AttackConfig,
    pub swaps: Vec<SwapRecord>,
    pub pred_before: Vec<String>,
    pub pred_after: Vec<String>,
    pub success: bool,
    pub abstention: bool,
    pub skips: usize,
}

impl From<&AttackResult> for AttackRecord {
    fn from(result: &AttackResult) -> Self {
        AttackRecord {
            table_id: result.table_id().to_string(),
            column: result.column,
            config: result.config.clone(),
            swaps: result.swaps.clone(),
            pred_before: result.pred_before.iter().map(str::to_string).collect(),
            pred_after: result.pred_after.iter().map(str::to_string).collect(),
            success: result.success,
            abstention: result.abstention,
            skips: result.skips,
        }
    }
}

/// ceil(p·n/100): the number of cells a p-percent attack touches. Always
/// at least 1 for a non-empty column.
pub fn perturbation_count(p: u8, n: usize) -> usize {
    (p as usize * n).div_ceil(100)
}

/// Stable per-task RNG: derived from the global seed, the table id, the
/// column, and a domain tag, so parallel scheduling cannot reorder draws.
pub fn derive_rng(seed: u64, table_id: &str, col: usize, domain: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0xff]);
    hasher.update(table_id.as_bytes());
    hasher.update([0xff]);
    hasher.update((col as u64).to_le_bytes());
    hasher.update([0xff]);
    hasher.update(domain.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// The largest componentwise delta between the logit vector with the entity
/// in place and the one with it masked.
pub fn max_logit_delta(with_entity: &[f64], masked: &[f64]) -> f64 {
    debug_assert_eq!(with_entity.len(), masked.len());
    with_entity
        .iter()
        .zip(masked)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Importance of one cell: max over the column's ground-truth classes of
/// (logit with entity present − logit with entity masked). Exactly two
/// victim evaluations; the score may be negative.
pub fn importance_score(
    victim: &dyn Victim,
    table: &Table,
    col: usize,
    cell: &CellRef,
    gt_classes: &[String],
) -> Result<f64, AttackError> {
    if cell.col != col {
        return Err(AttackError::CellNotInColumn {
            cell: cell.clone(),
            col,
        });
    }
    let with_entity = victim.predict_logits(table, col, gt_classes)?;
    let masked_table = mask_entity(table, cell)?;
    let masked = victim.predict_logits(&masked_table, col, gt_classes)?;
    Ok(max_logit_delta(&with_entity.scores, &masked.scores))
}

/// Importance scores for every unmasked cell of the column, in row order.
pub fn column_importance_scores(
    victim: &dyn Victim,
    table: &Table,
    col: usize,
    gt_classes: &[String],
) -> Result<Vec<ImportanceScore>, AttackError> {
    let mut scores = Vec::new();
    for (cell, value) in column(table, col)? {
        if value == MASK {
            continue;
        }
        let score = importance_score(victim, table, col, &cell, gt_classes)?;
        scores.push(ImportanceScore { cell, score });
    }
    Ok(scores)
}

fn top_cells_by_score(scores: &[ImportanceScore], k: usize) -> Vec<CellRef> {
    let mut ranked: Vec<&ImportanceScore> = scores.iter().collect();
    // descending score, ties to the lower row index
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("importance scores are finite")
            .then_with(|| a.cell.row.cmp(&b.cell.row))
    });
    ranked.into_iter().take(k).map(|s| s.cell.clone()).collect()
}

fn random_cells(candidates: &[CellRef], k: usize, rng: &mut ChaCha12Rng) -> Vec<CellRef> {
    let mut picked: Vec<CellRef> = sample_indices(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    picked.sort_by_key(|c| c.row);
    picked
}

/// Picks the ceil(p·n/100) key entities of the column: by descending
/// importance score (importance mode, needing the column's annotation) or
/// uniformly without replacement under the config seed (random mode).
pub fn select_key_entities(
    victim: &dyn Victim,
    table: &Table,
    col: usize,
    config: &AttackConfig,
) -> Result<Vec<CellRef>, AttackError> {
    config.validate()?;
    let candidates: Vec<CellRef> = column(table, col)?
        .into_iter()
        .filter(|(_, value)| *value != MASK)
        .map(|(cell, _)| cell)
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let k = perturbation_count(config.p, candidates.len());
    match config.selection {
        Selection::Importance => {
            let gt_classes = table
                .annotation(col)
                .ok_or_else(|| AttackError::UnannotatedColumn {
                    table_id: table.table_id().to_string(),
                    col,
                })?
                .to_vec();
            let scores = column_importance_scores(victim, table, col, &gt_classes)?;
            Ok(top_cells_by_score(&scores, k))
        }
        Selection::Random => {
            let mut rng = derive_rng(config.seed, table.table_id(), col, "select");
            Ok(random_cells(&candidates, k, &mut rng))
        }
    }
}

/// Draws an adversarial replacement for `anchor` from the candidate pool,
/// or `None` (a skip) when no candidate remains. The anchor itself is never
/// returned; without `allow_duplicates`, previously used replacements are
/// excluded too.
pub fn sample_adversarial<'p>(
    pool: &'p [EntityRecord],
    anchor: &EntityRecord,
    config: &AttackConfig,
    used: &BTreeSet<String>,
    rng: &mut ChaCha12Rng,
) -> Option<&'p EntityRecord> {
    let exclusions: BTreeSet<String> = if config.allow_duplicates {
        BTreeSet::new()
    } else {
        used.clone()
    };
    match config.sampling {
        Sampling::Similarity => match most_dissimilar_in(pool, anchor, &exclusions) {
            Ok(record) => Some(record),
            Err(KbError::NoCandidates { .. }) => None,
            Err(_) => None,
        },
        Sampling::Random => {
            let candidates: Vec<&EntityRecord> = pool
                .iter()
                .filter(|r| r.surface != anchor.surface && !exclusions.contains(&r.surface))
                .collect();
            if candidates.is_empty() {
                return None;
            }
            Some(candidates[rng.gen_range(0..candidates.len())])
        }
    }
}

/// Resolves the candidate pool for a class under the configured pool kind.
/// An exhausted filtered pool comes back empty: the attack then skips every
/// cell rather than violating the same-class constraint.
pub fn candidate_pool(
    kb_test: &EntityKB,
    kb_train: &EntityKB,
    class: &str,
    pool: PoolKind,
) -> Result<Vec<EntityRecord>, AttackError> {
    match pool {
        PoolKind::Test => Ok(kb_test.pool(class)?.to_vec()),
        PoolKind::Filtered => match filtered_pool(kb_test, kb_train, class) {
            Ok(records) => Ok(records),
            Err(KbError::EmptyFilteredPool { .. }) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        },
    }
}

/// The two-step entity-swap attack on one column: select key entities,
/// swap each for a class-consistent adversarial entity, and compare
/// prediction sets. Deterministic given the inputs and the config seed.
pub fn entity_swap_attack(
    victim: &dyn Victim,
    table: &Table,
    col: usize,
    config: &AttackConfig,
    kb_test: &EntityKB,
    kb_train: &EntityKB,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    let gt_classes = table
        .annotation(col)
        .ok_or_else(|| AttackError::UnannotatedColumn {
            table_id: table.table_id().to_string(),
            col,
        })?
        .to_vec();
    let class = gt_classes[0].clone();
    let pool = candidate_pool(kb_test, kb_train, &class, config.pool)?;

    let pred_before = victim.predict_classes(table, col)?;

    // Importance scores are computed once, on the pristine column.
    let scores = match config.selection {
        Selection::Importance => column_importance_scores(victim, table, col, &gt_classes)?,
        Selection::Random => Vec::new(),
    };
    let selected = match config.selection {
        Selection::Importance => {
            let candidates = scores.len();
            top_cells_by_score(&scores, perturbation_count(config.p, candidates))
        }
        Selection::Random => select_key_entities(victim, table, col, config)?,
    };

    let mut rng = derive_rng(config.seed, table.table_id(), col, "sample");
    let mut adversarial_table = table.clone();
    let mut swaps = Vec::new();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut skips = 0usize;
    let score_of = |cell: &CellRef| {
        scores
            .iter()
            .find(|s| &s.cell == cell)
            .map(|s| s.score)
    };

    for cell in &selected {
        let surface = table.cell(cell)?.to_string();
        // Anchor resolution goes through the test KB so the embedding is
        // available even when the anchor itself was filtered out of the pool.
        let anchor = kb_test
            .find(&class, &surface)
            .cloned()
            .or_else(|| pool.iter().find(|r| r.surface == surface).cloned());
        let Some(anchor) = anchor else {
            skips += 1;
            continue;
        };
        match sample_adversarial(&pool, &anchor, config, &used, &mut rng) {
            Some(replacement) => {
                adversarial_table = swap_entity(&adversarial_table, cell, &replacement.surface)?;
                used.insert(replacement.surface.clone());
                swaps.push(SwapRecord {
                    cell: cell.clone(),
                    before: surface,
                    after: replacement.surface.clone(),
                    score: score_of(cell),
                });
            }
            None => skips += 1,
        }
    }
    debug_assert_eq!(swaps.len() + skips, selected.len());

    let pred_after = victim.predict_classes(&adversarial_table, col)?;
    let success = pred_before.is_disjoint(&pred_after);
    let abstention = success && pred_after.is_empty();

    Ok(AttackResult {
        original_table: table.clone(),
        adversarial_table,
        column: col,
        config: config.clone(),
        swaps,
        scores,
        pred_before,
        pred_after,
        success,
        abstention,
        skips,
    })
}

/// One replaced header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderSwap {
    pub col: usize,
    pub before: String,
    pub after: String,
}

/// Outcome of a header-synonym attack on one table.
#[derive(Debug, Clone)]
pub struct HeaderAttack {
    pub table: Table,
    pub swaps: Vec<HeaderSwap>,
    /// Headers chosen for perturbation but absent from the vocabulary.
    pub skips: usize,
}

/// The metadata attack: ceil(p·m/100) headers chosen uniformly under the
/// seed, each replaced with its embedding-nearest synonym. Body cells are
/// untouched; out-of-vocabulary headers are skipped and counted.
pub fn header_synonym_attack(
    table: &Table,
    config: &AttackConfig,
    store: &EmbeddingStore,
) -> Result<HeaderAttack, AttackError> {
    config.validate()?;
    let m = table.column_count();
    let k = perturbation_count(config.p, m);
    let mut rng = derive_rng(config.seed, table.table_id(), 0, "header");
    let mut chosen: Vec<usize> = sample_indices(&mut rng, m, k).into_iter().collect();
    chosen.sort_unstable();

    let mut headers: Vec<String> = table.headers().to_vec();
    let mut swaps = Vec::new();
    let mut skips = 0usize;
    for col in chosen {
        let word = headers[col].clone();
        match nearest_synonym(store, &word, &BTreeSet::new()) {
            Ok(synonym) => {
                headers[col] = synonym.clone();
                swaps.push(HeaderSwap {
                    col,
                    before: word,
                    after: synonym,
                });
            }
            Err(KbError::WordNotInVocabulary { .. }) | Err(KbError::NoSynonymCandidates { .. }) => {
                skips += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }

    let perturbed = Table::new(
        table.table_id(),
        headers,
        table.rows().to_vec(),
        table.annotations().clone(),
    )?;
    Ok(HeaderAttack {
        table: perturbed,
        swaps,
        skips,
    })
}

/// Independent check of the imperceptibility constraint: every adversarial
/// entity must belong to the attacked column's most-specific class in the
/// knowledge base. An adversarial entity the KB has never seen is an error
/// naming the surface.
pub fn imperceptibility_audit(result: &AttackResult, kb: &EntityKB) -> Result<bool, AttackError> {
    let class = result
        .original_table
        .most_specific_class(result.column)
        .ok_or_else(|| AttackError::UnannotatedColumn {
            table_id: result.table_id().to_string(),
            col: result.column,
        })?;
    for swap in &result.swaps {
        if kb.find(class, &swap.after).is_some() {
            continue;
        }
        if kb.classes_of(&swap.after).is_empty() {
            return Err(AttackError::AdversarialEntityMissing {
                surface: swap.after.clone(),
            });
        }
        return Ok(false);
    }
    Ok(true)
}
