//! Class-indexed entity pools with an embedding store: similarity search for
//! adversarial candidates, test/filtered pool construction, and the
//! train/test leakage audit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{Corpus, SplitTag, MASK};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding file {path}: line {line}: {message}")]
    EmbeddingFormat {
        path: String,
        line: usize,
        message: String,
    },
    #[error("embedding for {token:?} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        token: String,
        got: usize,
        expected: usize,
    },
    #[error("duplicate embedding token {token:?}")]
    DuplicateToken { token: String },
    #[error("embedding for {token:?} is the zero vector and cannot be normalized")]
    ZeroVector { token: String },
    #[error("vectors have mismatched dimensions ({left} vs {right})")]
    VectorDimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVectorCosine,
    #[error("corpus has no tables")]
    EmptyCorpus,
    #[error("no corpus entity has an embedding; knowledge base would be empty")]
    NoResolvableEntities,
    #[error("class {class:?} has no pool in this knowledge base")]
    UnknownClass { class: String },
    #[error("filtered pool for class {class:?} is empty: every test entity also appears in training")]
    EmptyFilteredPool { class: String },
    #[error("no candidates remain for class {class:?} after exclusions")]
    NoCandidates { class: String },
    #[error("word {word:?} is not in the embedding vocabulary")]
    WordNotInVocabulary { word: String },
    #[error("vocabulary has no candidate other than {word:?}")]
    NoSynonymCandidates { word: String },
}

/// An entity surface form with its most-specific class and unit-norm
/// embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub surface: String,
    pub class: String,
    pub embedding: Vec<f64>,
}

/// Exact-string embedding lookup with a consistent dimension. Vectors are
/// unit-normalized on load.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    vectors: BTreeMap<String, Vec<f64>>,
    dim: usize,
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = l2_norm(&v);
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for x in &mut v {
        *x /= norm;
    }
    Some(v)
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            vectors: BTreeMap::new(),
            dim,
        }
    }

    /// Inserts a vector, unit-normalizing it first.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<(), KbError> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(KbError::DimensionMismatch {
                token,
                got: vector.len(),
                expected: self.dim,
            });
        }
        let unit = normalize(vector).ok_or(KbError::ZeroVector {
            token: token.clone(),
        })?;
        if self.vectors.contains_key(&token) {
            return Err(KbError::DuplicateToken { token });
        }
        self.vectors.insert(token, unit);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Tokens in lexicographic order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Loads an embedding file: first line `count dim`, then one
/// `token<TAB>v1 v2 … vd` entry per line. Tab-separated because entity
/// surfaces contain spaces.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore, KbError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| KbError::Io {
        path: display.clone(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| KbError::EmbeddingFormat {
        path: display.clone(),
        line: 1,
        message: "missing `count dim` header line".into(),
    })?;
    let header = header.map_err(|source| KbError::Io {
        path: display.clone(),
        source,
    })?;
    let mut parts = header.split_whitespace();
    let count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| KbError::EmbeddingFormat {
            path: display.clone(),
            line: 1,
            message: format!("bad header {header:?}; expected `count dim`"),
        })?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| KbError::EmbeddingFormat {
            path: display.clone(),
            line: 1,
            message: format!("bad header {header:?}; expected `count dim`"),
        })?;

    let mut store = EmbeddingStore::new(dim);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|source| KbError::Io {
            path: display.clone(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let (token, rest) = line.split_once('\t').ok_or_else(|| KbError::EmbeddingFormat {
            path: display.clone(),
            line: line_no,
            message: "missing tab between token and vector".into(),
        })?;
        let vector = rest
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| KbError::EmbeddingFormat {
                        path: display.clone(),
                        line: line_no,
                        message: format!("bad float {s:?} for token {token:?}"),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        store.insert(token, vector)?;
    }
    if store.len() != count {
        return Err(KbError::EmbeddingFormat {
            path: display,
            line: 1,
            message: format!("header declares {count} entries, file has {}", store.len()),
        });
    }
    Ok(store)
}

/// Writes a store in the format accepted by [`load_embeddings`].
pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> std::io::Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{} {}", store.len(), store.dim())?;
    for (token, vector) in store.iter() {
        write!(w, "{token}\t")?;
        for (i, x) in vector.iter().enumerate() {
            if i > 0 {
                write!(w, " ")?;
            }
            write!(w, "{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Class-indexed adversarial candidate pools built from one corpus split.
#[derive(Debug, Clone)]
pub struct EntityKB {
    pools: BTreeMap<String, Vec<EntityRecord>>,
    split_tag: SplitTag,
    dim: usize,
    /// Corpus entities that had no embedding and were left out of the pools.
    skipped: usize,
}

impl EntityKB {
    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.pools.keys().map(String::as_str)
    }

    /// The ordered, deduplicated pool for a class.
    pub fn pool(&self, class: &str) -> Result<&[EntityRecord], KbError> {
        self.pools
            .get(class)
            .map(Vec::as_slice)
            .ok_or_else(|| KbError::UnknownClass {
                class: class.to_string(),
            })
    }

    pub fn contains_class(&self, class: &str) -> bool {
        self.pools.contains_key(class)
    }

    /// Looks a surface up within one class pool.
    pub fn find(&self, class: &str, surface: &str) -> Option<&EntityRecord> {
        self.pools
            .get(class)?
            .iter()
            .find(|r| r.surface == surface)
    }

    /// Looks a surface up across all pools, returning every class it
    /// appears under.
    pub fn classes_of(&self, surface: &str) -> Vec<&str> {
        self.pools
            .iter()
            .filter(|(_, pool)| pool.iter().any(|r| r.surface == surface))
            .map(|(class, _)| class.as_str())
            .collect()
    }

    pub fn pool_sizes(&self) -> BTreeMap<String, usize> {
        self.pools
            .iter()
            .map(|(c, p)| (c.clone(), p.len()))
            .collect()
    }
}

/// Builds the class pools A_c for one split: for every annotated column
/// with most-specific class c, each distinct non-mask entity cell joins
/// pool A_c. Entities without embeddings are skipped and counted.
pub fn build_kb(
    corpus: &Corpus,
    embeddings: &EmbeddingStore,
    split_tag: SplitTag,
) -> Result<EntityKB, KbError> {
    if corpus.tables.is_empty() {
        return Err(KbError::EmptyCorpus);
    }
    let mut pools: BTreeMap<String, Vec<EntityRecord>> = BTreeMap::new();
    let mut seen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut skipped = 0usize;
    let mut resolved = 0usize;
    for (table, col) in corpus.annotated_columns() {
        let class = table
            .most_specific_class(col)
            .expect("annotated column has a class")
            .to_string();
        for row in table.rows() {
            let surface = row[col].as_str();
            if surface == MASK || surface.is_empty() {
                continue;
            }
            let seen_for_class = seen.entry(class.clone()).or_default();
            if seen_for_class.contains(surface) {
                continue;
            }
            match embeddings.get(surface) {
                Some(vector) => {
                    seen_for_class.insert(surface.to_string());
                    pools.entry(class.clone()).or_default().push(EntityRecord {
                        surface: surface.to_string(),
                        class: class.clone(),
                        embedding: vector.to_vec(),
                    });
                    resolved += 1;
                }
                None => {
                    seen_for_class.insert(surface.to_string());
                    skipped += 1;
                }
            }
        }
    }
    if resolved == 0 {
        return Err(KbError::NoResolvableEntities);
    }
    pools.retain(|_, pool| !pool.is_empty());
    Ok(EntityKB {
        pools,
        split_tag,
        dim: embeddings.dim(),
        skipped,
    })
}

/// The filtered candidate set for a class: test-pool entities whose surface
/// never occurs in the training pool of the same class, order preserved.
/// An empty result is signaled distinctly so the attack knows no novel
/// candidate exists.
pub fn filtered_pool(
    kb_test: &EntityKB,
    kb_train: &EntityKB,
    class: &str,
) -> Result<Vec<EntityRecord>, KbError> {
    let test_pool = kb_test.pool(class)?;
    let train_surfaces: BTreeSet<&str> = match kb_train.pool(class) {
        Ok(pool) => pool.iter().map(|r| r.surface.as_str()).collect(),
        Err(KbError::UnknownClass { .. }) => BTreeSet::new(),
        Err(e) => return Err(e),
    };
    let filtered: Vec<EntityRecord> = test_pool
        .iter()
        .filter(|r| !train_surfaces.contains(r.surface.as_str()))
        .cloned()
        .collect();
    if filtered.is_empty() {
        return Err(KbError::EmptyFilteredPool {
            class: class.to_string(),
        });
    }
    Ok(filtered)
}

/// dot(u,v) / (‖u‖·‖v‖). Errors on zero vectors or mismatched dimensions.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, KbError> {
    if u.len() != v.len() {
        return Err(KbError::VectorDimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(KbError::ZeroVectorCosine);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

/// Argmin-cosine scan over a candidate slice: the entity most dissimilar
/// from the anchor. The anchor surface and `exclusions` never win; ties go
/// to the earliest pool position.
pub fn most_dissimilar_in<'p>(
    pool: &'p [EntityRecord],
    anchor: &EntityRecord,
    exclusions: &BTreeSet<String>,
) -> Result<&'p EntityRecord, KbError> {
    let mut best: Option<(&EntityRecord, f64)> = None;
    for candidate in pool {
        if candidate.surface == anchor.surface || exclusions.contains(&candidate.surface) {
            continue;
        }
        let sim = cosine_similarity(&anchor.embedding, &candidate.embedding)?;
        match best {
            Some((_, best_sim)) if sim >= best_sim => {}
            _ => best = Some((candidate, sim)),
        }
    }
    best.map(|(r, _)| r).ok_or_else(|| KbError::NoCandidates {
        class: anchor.class.clone(),
    })
}

/// [`most_dissimilar_in`] over the knowledge base's pool for `class`.
pub fn most_dissimilar<'k>(
    kb: &'k EntityKB,
    class: &str,
    anchor: &EntityRecord,
    exclusions: &BTreeSet<String>,
) -> Result<&'k EntityRecord, KbError> {
    most_dissimilar_in(kb.pool(class)?, anchor, exclusions)
}

/// Argmax-cosine token for `word`, excluding the word itself and
/// `exclusions`; ties go to the lexicographically smaller token. A word
/// missing from the vocabulary is an error so callers can count the skip.
pub fn nearest_synonym(
    store: &EmbeddingStore,
    word: &str,
    exclusions: &BTreeSet<String>,
) -> Result<String, KbError> {
    let anchor = store.get(word).ok_or_else(|| KbError::WordNotInVocabulary {
        word: word.to_string(),
    })?;
    let mut best: Option<(&str, f64)> = None;
    // BTreeMap iteration is lexicographic, so first-wins on a strict
    // improvement implements the lexicographic tie-break.
    for (token, vector) in store.iter() {
        if token == word || exclusions.contains(token) {
            continue;
        }
        let sim = cosine_similarity(anchor, vector)?;
        match best {
            Some((_, best_sim)) if sim <= best_sim => {}
            _ => best = Some((token, sim)),
        }
    }
    best.map(|(t, _)| t.to_string())
        .ok_or_else(|| KbError::NoSynonymCandidates {
            word: word.to_string(),
        })
}

/// How leakage totals are counted: distinct surfaces per class, or every
/// cell mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountingMode {
    Unique,
    Mention,
}

impl std::fmt::Display for CountingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CountingMode::Unique => write!(f, "unique"),
            CountingMode::Mention => write!(f, "mention"),
        }
    }
}

impl std::str::FromStr for CountingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unique" => Ok(CountingMode::Unique),
            "mention" => Ok(CountingMode::Mention),
            other => Err(format!("unknown counting mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub class: String,
    pub total: usize,
    pub overlap: usize,
    /// 100·overlap/total, kept at one decimal.
    pub pct: f64,
}

/// Per-class overlap of test entities with the training split, sorted by
/// total descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub mode: CountingMode,
    pub rows: Vec<LeakageRow>,
}

/// One-decimal percentage as printed in the report. Truncates rather than
/// rounds: 29215/47852 must report 61.0, not 61.1.
pub fn leakage_pct(overlap: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let raw = 100.0 * overlap as f64 / total as f64;
    (raw * 10.0).floor() / 10.0
}

fn class_surfaces(corpus: &Corpus) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (table, col) in corpus.annotated_columns() {
        let class = table.most_specific_class(col).unwrap().to_string();
        let set = out.entry(class).or_default();
        for row in table.rows() {
            let surface = row[col].as_str();
            if surface != MASK && !surface.is_empty() {
                set.insert(surface.to_string());
            }
        }
    }
    out
}

/// Audits per-class entity overlap between a train and a test corpus.
pub fn leakage_report(train: &Corpus, test: &Corpus, mode: CountingMode) -> LeakageReport {
    let train_sets = class_surfaces(train);
    let empty = BTreeSet::new();

    let mut totals: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    match mode {
        CountingMode::Unique => {
            for (class, surfaces) in class_surfaces(test) {
                let train_set = train_sets.get(&class).unwrap_or(&empty);
                let overlap = surfaces.iter().filter(|s| train_set.contains(*s)).count();
                totals.insert(class, (surfaces.len(), overlap));
            }
        }
        CountingMode::Mention => {
            for (table, col) in test.annotated_columns() {
                let class = table.most_specific_class(col).unwrap().to_string();
                let train_set = train_sets.get(&class).unwrap_or(&empty);
                let entry = totals.entry(class).or_insert((0, 0));
                for row in table.rows() {
                    let surface = row[col].as_str();
                    if surface == MASK || surface.is_empty() {
                        continue;
                    }
                    entry.0 += 1;
                    if train_set.contains(surface) {
                        entry.1 += 1;
                    }
                }
            }
        }
    }

    let mut rows: Vec<LeakageRow> = totals
        .into_iter()
        .map(|(class, (total, overlap))| LeakageRow {
            class,
            total,
            overlap,
            pct: leakage_pct(overlap, total),
        })
        .collect();
    rows.sort_by(|a, b| b.total.cmp(&a.total).then_with(|| a.class.cmp(&b.class)));
    LeakageReport { mode, rows }
}

/// Writes a leakage report as `class,total,overlap,pct` CSV.
pub fn write_leakage_csv(report: &LeakageReport, writer: impl std::io::Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class", "total", "overlap", "pct"])?;
    for row in &report.rows {
        w.write_record([
            row.class.as_str(),
            &row.total.to_string(),
            &row.overlap.to_string(),
            &format!("{:.1}", row.pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Table;
    use std::collections::BTreeMap;

    fn record(surface: &str, class: &str, embedding: Vec<f64>) -> EntityRecord {
        EntityRecord {
            surface: surface.into(),
            class: class.into(),
            embedding,
        }
    }

    fn single_column_table(id: &str, class: &str, cells: &[&str]) -> Table {
        Table::new(
            id,
            vec!["h".into()],
            cells.iter().map(|c| vec![c.to_string()]).collect(),
            BTreeMap::from([(0, vec![class.to_string()])]),
        )
        .unwrap()
    }

    fn corpus(tables: Vec<Table>, split: SplitTag) -> Corpus {
        Corpus::new(tables, split).unwrap()
    }

    #[test]
    fn load_two_entry_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "2 3\nalpha beta\t1 0 0\ngamma\t0 2 0\n").unwrap();
        let store = load_embeddings(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.dim(), 3);
        assert_eq!(store.get("alpha beta").unwrap(), &[1.0, 0.0, 0.0]);
        // normalized on load
        assert_eq!(store.get("gamma").unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn load_rejects_bad_entries() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short.txt");
        std::fs::write(&short, "1 3\ntok\t1 0\n").unwrap();
        let err = load_embeddings(&short).unwrap_err();
        assert!(err.to_string().contains("tok"), "{err}");

        let dup = dir.path().join("dup.txt");
        std::fs::write(&dup, "2 2\ntok\t1 0\ntok\t0 1\n").unwrap();
        assert!(matches!(
            load_embeddings(&dup).unwrap_err(),
            KbError::DuplicateToken { .. }
        ));

        let zero = dir.path().join("zero.txt");
        std::fs::write(&zero, "1 2\ntok\t0 0\n").unwrap();
        assert!(matches!(
            load_embeddings(&zero).unwrap_err(),
            KbError::ZeroVector { .. }
        ));

        let count = dir.path().join("count.txt");
        std::fs::write(&count, "3 2\ntok\t1 0\n").unwrap();
        assert!(load_embeddings(&count).is_err());
    }

    #[test]
    fn loaded_vectors_are_unit_norm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut content = String::from("5 4\n");
        for i in 0..5 {
            content.push_str(&format!("t{i}\t{} {} {} {}\n", i + 1, 2 * i + 1, 3, 0.5));
        }
        std::fs::write(&path, content).unwrap();
        let store = load_embeddings(&path).unwrap();
        for (_, v) in store.iter() {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn build_kb_dedups_within_class() {
        let mut store = EmbeddingStore::new(2);
        for (tok, v) in [("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![1.0, 1.0])] {
            store.insert(tok, v).unwrap();
        }
        let c = corpus(
            vec![
                single_column_table("t1", "k", &["a", "b", "c"]),
                single_column_table("t2", "k", &["a"]),
            ],
            SplitTag::Test,
        );
        let kb = build_kb(&c, &store, SplitTag::Test).unwrap();
        assert_eq!(kb.pool("k").unwrap().len(), 3);
        assert_eq!(kb.skipped(), 0);
    }

    #[test]
    fn build_kb_counts_missing_embeddings() {
        let mut store = EmbeddingStore::new(2);
        store.insert("a", vec![1.0, 0.0]).unwrap();
        let c = corpus(
            vec![single_column_table("t1", "k", &["a", "unembedded"])],
            SplitTag::Test,
        );
        let kb = build_kb(&c, &store, SplitTag::Test).unwrap();
        assert_eq!(kb.pool("k").unwrap().len(), 1);
        assert_eq!(kb.skipped(), 1);
    }

    #[test]
    fn filtered_pool_modes() {
        let mut store = EmbeddingStore::new(2);
        for (tok, v) in [
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("x", vec![1.0, 1.0]),
        ] {
            store.insert(tok, v).unwrap();
        }
        let test = corpus(
            vec![single_column_table("te", "k", &["a", "b"])],
            SplitTag::Test,
        );
        let kb_test = build_kb(&test, &store, SplitTag::Test).unwrap();

        // disjoint train: identity
        let train = corpus(
            vec![single_column_table("tr", "k", &["x"])],
            SplitTag::Train,
        );
        let kb_train = build_kb(&train, &store, SplitTag::Train).unwrap();
        let pool = filtered_pool(&kb_test, &kb_train, "k").unwrap();
        assert_eq!(
            pool.iter().map(|r| r.surface.as_str()).collect::<Vec<_>>(),
            vec!["a", "b"]
        );

        // identical train: empty signal
        let train2 = corpus(
            vec![single_column_table("tr2", "k", &["a", "b"])],
            SplitTag::Train,
        );
        let kb_train2 = build_kb(&train2, &store, SplitTag::Train).unwrap();
        assert!(matches!(
            filtered_pool(&kb_test, &kb_train2, "k").unwrap_err(),
            KbError::EmptyFilteredPool { .. }
        ));
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.7071 is the frozen hand value for 1/sqrt(2)
    fn cosine_basics() {
        let e1 = [1.0, 2.0, -3.0];
        assert!((cosine_similarity(&e1, &e1).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&[1.0, 0.0], &[0.0, 5.0]).unwrap()).abs() < 1e-12);
        // hand value: cos([1,1,0],[1,0,0]) = 1/sqrt(2)
        let got = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((got - 0.7071).abs() < 1e-4);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(KbError::ZeroVectorCosine)
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(KbError::VectorDimensionMismatch { .. })
        ));
    }

    #[test]
    fn most_dissimilar_prefers_antipodal() {
        let anchor = record("anchor", "k", vec![1.0, 0.0]);
        let near = record("near", "k", normalize(vec![1.0, 0.01]).unwrap());
        let far = record("far", "k", vec![-1.0, 0.0]);
        let pool = vec![near.clone(), far.clone()];
        let got = most_dissimilar_in(&pool, &anchor, &BTreeSet::new()).unwrap();
        assert_eq!(got.surface, "far");

        // singleton pool: that candidate regardless of similarity
        let pool = vec![near.clone()];
        let got = most_dissimilar_in(&pool, &anchor, &BTreeSet::new()).unwrap();
        assert_eq!(got.surface, "near");

        // anchor itself and exclusions never win
        let pool = vec![anchor.clone(), near.clone()];
        let got = most_dissimilar_in(&pool, &anchor, &BTreeSet::new()).unwrap();
        assert_eq!(got.surface, "near");
        let excl: BTreeSet<String> = ["near".to_string()].into();
        assert!(matches!(
            most_dissimilar_in(&pool, &anchor, &excl).unwrap_err(),
            KbError::NoCandidates { .. }
        ));
    }

    #[test]
    fn most_dissimilar_matches_exhaustive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let size = rng.gen_range(1..=50);
            let pool: Vec<EntityRecord> = (0..size)
                .map(|i| {
                    let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    record(&format!("e{i}"), "k", normalize(v).unwrap_or(vec![1.0, 0.0, 0.0, 0.0]))
                })
                .collect();
            let anchor = record("anchor", "k", {
                let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                normalize(v).unwrap_or(vec![0.0, 1.0, 0.0, 0.0])
            });
            // independent linear scan oracle
            let mut best_idx = None;
            let mut best_sim = f64::INFINITY;
            for (i, cand) in pool.iter().enumerate() {
                let dot: f64 = cand
                    .embedding
                    .iter()
                    .zip(&anchor.embedding)
                    .map(|(a, b)| a * b)
                    .sum();
                let sim = dot
                    / (l2_norm(&cand.embedding) * l2_norm(&anchor.embedding));
                if sim < best_sim {
                    best_sim = sim;
                    best_idx = Some(i);
                }
            }
            let got = most_dissimilar_in(&pool, &anchor, &BTreeSet::new()).unwrap();
            assert_eq!(got.surface, pool[best_idx.unwrap()].surface);
        }
    }

    #[test]
    fn nearest_synonym_basics() {
        let mut store = EmbeddingStore::new(2);
        store.insert("word", vec![1.0, 0.0]).unwrap();
        store.insert("clone", vec![2.0, 0.0]).unwrap();
        store.insert("other", vec![0.0, 1.0]).unwrap();
        let got = nearest_synonym(&store, "word", &BTreeSet::new()).unwrap();
        assert_eq!(got, "clone");

        assert!(matches!(
            nearest_synonym(&store, "missing", &BTreeSet::new()).unwrap_err(),
            KbError::WordNotInVocabulary { .. }
        ));

        // two orthogonal candidates: the one with higher cosine wins
        let mut store = EmbeddingStore::new(2);
        store.insert("word", vec![1.0, 0.2]).unwrap();
        store.insert("x_axis", vec![1.0, 0.0]).unwrap();
        store.insert("y_axis", vec![0.0, 1.0]).unwrap();
        let got = nearest_synonym(&store, "word", &BTreeSet::new()).unwrap();
        assert_eq!(got, "x_axis");
    }

    #[test]
    fn nearest_synonym_lexicographic_tie_break() {
        let mut store = EmbeddingStore::new(2);
        store.insert("word", vec![1.0, 0.0]).unwrap();
        store.insert("zeta", vec![3.0, 0.0]).unwrap();
        store.insert("alpha", vec![2.0, 0.0]).unwrap();
        // both candidates normalize to the identical vector
        let got = nearest_synonym(&store, "word", &BTreeSet::new()).unwrap();
        assert_eq!(got, "alpha");
    }

    #[test]
    fn leakage_pct_truncates_to_one_decimal() {
        // 29215/47852 = 61.0528…%; the report prints 61.0
        assert_eq!(leakage_pct(29215, 47852), 61.0);
        assert_eq!(leakage_pct(10, 10), 100.0);
        assert_eq!(leakage_pct(0, 10), 0.0);
        // 21327/34073 = 62.59…% → 62.5 under truncation
        assert_eq!(leakage_pct(21327, 34073), 62.5);
    }

    #[test]
    fn leakage_report_counts_modes() {
        let train = corpus(
            vec![single_column_table("tr", "k", &["a", "b"])],
            SplitTag::Train,
        );
        // "a" mentioned twice in test
        let test = corpus(
            vec![single_column_table("te", "k", &["a", "a", "c"])],
            SplitTag::Test,
        );
        let unique = leakage_report(&train, &test, CountingMode::Unique);
        assert_eq!(unique.rows.len(), 1);
        assert_eq!((unique.rows[0].total, unique.rows[0].overlap), (2, 1));
        assert_eq!(unique.rows[0].pct, 50.0);

        let mention = leakage_report(&train, &test, CountingMode::Mention);
        assert_eq!((mention.rows[0].total, mention.rows[0].overlap), (3, 2));

        // class absent from train: overlap 0, pct 0.0
        let test2 = corpus(
            vec![single_column_table("te2", "other", &["x", "y"])],
            SplitTag::Test,
        );
        let rep = leakage_report(&train, &test2, CountingMode::Unique);
        assert_eq!((rep.rows[0].overlap, rep.rows[0].pct), (0, 0.0));

        // fully overlapped class: 100.0
        let test3 = corpus(
            vec![single_column_table("te3", "k", &["a", "b"])],
            SplitTag::Test,
        );
        let rep = leakage_report(&train, &test3, CountingMode::Unique);
        assert_eq!(rep.rows[0].pct, 100.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn vector() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-10.0f64..10.0, 4).prop_filter("nonzero", |v| {
                v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6
            })
        }

        proptest! {
            #[test]
            fn cosine_is_symmetric(u in vector(), v in vector()) {
                let a = cosine_similarity(&u, &v).unwrap();
                let b = cosine_similarity(&v, &u).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&a));
            }

            #[test]
            fn cosine_of_self_is_one(u in vector()) {
                let a = cosine_similarity(&u, &u).unwrap();
                prop_assert!((a - 1.0).abs() < 1e-12);
            }

            #[test]
            fn leakage_pct_is_consistent(total in 1usize..100_000, overlap_frac in 0.0f64..=1.0) {
                let overlap = ((total as f64) * overlap_frac) as usize;
                let pct = leakage_pct(overlap, total);
                let raw = 100.0 * overlap as f64 / total as f64;
                prop_assert!(pct <= raw + 1e-9);
                prop_assert!(raw - pct < 0.1 + 1e-9);
                prop_assert!((0.0..=100.0).contains(&pct));
            }
        }
    }

    #[test]
    fn leakage_rows_sorted_by_total_descending() {
        let train = corpus(
            vec![single_column_table("tr", "big", &["a"])],
            SplitTag::Train,
        );
        let test = corpus(
            vec![
                single_column_table("t1", "small", &["x"]),
                single_column_table("t2", "big", &["a", "b", "c"]),
            ],
            SplitTag::Test,
        );
        let rep = leakage_report(&train, &test, CountingMode::Unique);
        assert_eq!(rep.rows[0].class, "big");
        assert_eq!(rep.rows[1].class, "small");
        // pct recomputes from its own counts
        for row in &rep.rows {
            assert_eq!(row.pct, leakage_pct(row.overlap, row.total));
        }
    }
}
