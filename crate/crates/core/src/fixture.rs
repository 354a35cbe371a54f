//! Deterministic synthetic fixtures: clustered entity embeddings with
//! planted train/test overlap, a header vocabulary with planted synonym
//! pairs, and the corpora to go with them.
//!
//! Geometry per class: training entities cluster around a unit centroid.
//! The test split reuses a planted fraction of them (the overlap) and adds
//! novel entities placed on a cone at negative cosine to the centroid, so
//! novel same-class entities genuinely look different to an embedding
//! victim. Columns mix overlap and novel entities, which keeps the pristine
//! corpus well classified while giving similarity-based sampling something
//! to exploit.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{write_embeddings, EmbeddingStore};
use crate::table::{write_corpus, Corpus, SplitTag, Table};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("infeasible fixture spec: {0}")]
    Infeasible(String),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub n_classes: usize,
    /// Unique entities per class in each split's pool.
    pub entities_per_class: usize,
    /// Total annotated test columns (split round-robin across classes).
    pub columns: usize,
    pub rows_per_column: usize,
    pub columns_per_table: usize,
    /// Fraction of each class's test pool that also appears in training.
    pub overlap_fraction: f64,
    pub dim: usize,
    /// Embedding cluster noise. Zero collapses every class to its centroid.
    pub sigma: f64,
    /// Center of the per-class cosine between novel-entity directions and
    /// the class centroid (jittered per class).
    pub novel_cos: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            n_classes: 20,
            entities_per_class: 100,
            columns: 200,
            rows_per_column: 10,
            columns_per_table: 5,
            overlap_fraction: 0.61,
            dim: 32,
            sigma: 0.15,
            novel_cos: -0.25,
            seed: 7,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), FixtureError> {
        let err = |msg: String| Err(FixtureError::Infeasible(msg));
        if self.n_classes == 0
            || self.entities_per_class == 0
            || self.columns == 0
            || self.rows_per_column == 0
            || self.columns_per_table == 0
        {
            return err("all counts must be positive".into());
        }
        if self.entities_per_class < self.rows_per_column {
            return err(format!(
                "entities_per_class ({}) < rows_per_column ({}): columns cannot be filled \
                 with distinct entities",
                self.entities_per_class, self.rows_per_column
            ));
        }
        if self.columns < self.n_classes {
            return err(format!(
                "{} columns cannot cover {} classes",
                self.columns, self.n_classes
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return err(format!(
                "overlap_fraction {} outside [0, 1]",
                self.overlap_fraction
            ));
        }
        if self.dim < 2 {
            return err("dim must be at least 2".into());
        }
        if self.sigma < 0.0 {
            return err(format!("sigma {} must be non-negative", self.sigma));
        }
        if !(-1.0..=1.0).contains(&self.novel_cos) {
            return err(format!("novel_cos {} outside [-1, 1]", self.novel_cos));
        }
        Ok(())
    }
}

/// Recommended victim settings for a generated fixture, confirmed by the
/// calibration checks in the test suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimCalibration {
    pub header_weight: f64,
    pub threshold: f64,
    pub expected_min_baseline_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBookkeeping {
    pub class: String,
    pub header: String,
    pub synonym: String,
    /// The unit centroid the class's clusters were drawn around.
    pub centroid: Vec<f64>,
    /// The class's actual novel-cluster cosine after jitter.
    pub novel_cos: f64,
    /// Distinct entities appearing in the generated test columns.
    pub test_pool: usize,
    /// How many of those also appear in the train split.
    pub overlap: usize,
    /// Novel test entities (the filtered pool size).
    pub filtered: usize,
    pub train_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMetadata {
    pub spec: FixtureSpec,
    pub victim: VictimCalibration,
    pub classes: Vec<ClassBookkeeping>,
    pub synonym_pairs: Vec<(String, String)>,
    pub notes: String,
}

#[derive(Debug)]
pub struct Fixture {
    pub train: Corpus,
    pub test: Corpus,
    pub embeddings: EmbeddingStore,
    pub synonyms: EmbeddingStore,
    pub metadata: FixtureMetadata,
}

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

fn gauss_vec(rng: &mut ChaCha12Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * gauss(rng)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

fn random_unit(rng: &mut ChaCha12Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gauss_vec(rng, dim, 1.0);
        if norm(&v) > 1e-9 {
            return normalized(v);
        }
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vector orthogonal to `axis`.
fn random_perp(rng: &mut ChaCha12Rng, axis: &[f64]) -> Vec<f64> {
    loop {
        let v = random_unit(rng, axis.len());
        let projected = add(&v, &scale(axis, -dot(&v, axis)));
        if norm(&projected) > 1e-6 {
            return normalized(projected);
        }
    }
}

struct ClassSpec {
    name: String,
    header: String,
    synonym: String,
    centroid: Vec<f64>,
    novel_cos: f64,
    shared: Vec<String>,
    novel: Vec<String>,
    train_only: Vec<String>,
}

/// Deals the class's test entities into `quota` columns. Novel entities are
/// spread unevenly (alternate columns take a double share) so columns reach
/// their attack tipping points at different perturbation levels; shared
/// entities fill the rest. Cycles the pool when columns need more cells
/// than the pool holds.
fn deal_columns(
    shared: &[String],
    novel: &[String],
    quota: usize,
    rows: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<Vec<String>> {
    let mut shared: Vec<String> = shared.to_vec();
    let mut novel: Vec<String> = novel.to_vec();
    shared.shuffle(rng);
    novel.shuffle(rng);

    // capped at half a column so no pristine column is novel-dominated
    let cap = (rows / 2).max(1);
    let weight = |b: usize| if b % 2 == 1 { 2usize } else { 1 };
    let total_weight: usize = (0..quota).map(weight).sum();
    let mut targets: Vec<usize> = (0..quota)
        .map(|b| (novel.len() * weight(b) / total_weight).min(cap))
        .collect();
    // remainder tops up the emptiest columns first so none goes without
    let mut remainder = novel.len().saturating_sub(targets.iter().sum::<usize>());
    while remainder > 0 {
        let Some((bucket, _)) = targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| t < cap)
            .min_by_key(|(b, &t)| (t, *b))
        else {
            break;
        };
        targets[bucket] += 1;
        remainder -= 1;
    }
    // overflow beyond the cap still has to appear somewhere
    while remainder > 0 {
        let Some((bucket, _)) = targets
            .iter()
            .enumerate()
            .filter(|(_, &t)| t < rows)
            .min_by_key(|(b, &t)| (t, *b))
        else {
            break;
        };
        targets[bucket] += 1;
        remainder -= 1;
    }

    let mut buckets: Vec<Vec<String>> = vec![Vec::with_capacity(rows); quota];
    let mut novel_iter = novel.iter();
    for (bucket, &target) in buckets.iter_mut().zip(&targets) {
        for _ in 0..target {
            if let Some(surface) = novel_iter.next() {
                bucket.push(surface.clone());
            }
        }
    }
    let mut shared_iter = shared.iter();
    let all: Vec<&String> = shared.iter().chain(novel.iter()).collect();
    let mut cycle = 0usize;
    for bucket in &mut buckets {
        while bucket.len() < rows {
            match shared_iter.next() {
                Some(surface) => bucket.push(surface.clone()),
                None => {
                    // pool exhausted: reuse entities
                    bucket.push(all[cycle % all.len()].clone());
                    cycle += 1;
                }
            }
        }
        bucket.shuffle(rng);
    }
    buckets
}

/// (class, header, cells) of one generated column.
type ColumnPlan = (String, String, Vec<String>);

fn assemble_tables(
    prefix: &str,
    column_specs: Vec<ColumnPlan>,
    columns_per_table: usize,
    rows: usize,
) -> Vec<Table> {
    column_specs
        .chunks(columns_per_table)
        .enumerate()
        .map(|(t, chunk)| {
            let headers: Vec<String> = chunk.iter().map(|(_, h, _)| h.clone()).collect();
            let grid: Vec<Vec<String>> = (0..rows)
                .map(|r| chunk.iter().map(|(_, _, cells)| cells[r].clone()).collect())
                .collect();
            let annotations: BTreeMap<usize, Vec<String>> = chunk
                .iter()
                .enumerate()
                .map(|(j, (class, _, _))| (j, vec![class.clone()]))
                .collect();
            Table::new(format!("{prefix}_t{t:03}"), headers, grid, annotations)
                .expect("generated tables satisfy the invariants")
        })
        .collect()
}

fn distinct_per_class(corpus: &Corpus) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (table, col) in corpus.annotated_columns() {
        let class = table.most_specific_class(col).unwrap().to_string();
        let set = out.entry(class).or_default();
        for row in table.rows() {
            set.insert(row[col].clone());
        }
    }
    out
}

/// Generates the corpora, the victim embedding file, the independent
/// synonym embedding file, and the bookkeeping metadata. Deterministic:
/// equal specs produce byte-identical files.
pub fn gen_synthetic_corpus(spec: &FixtureSpec) -> Result<Fixture, FixtureError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let header_sigma = spec.sigma / 3.0;

    let n_overlap = (spec.overlap_fraction * spec.entities_per_class as f64).round() as usize;
    let n_overlap = n_overlap.min(spec.entities_per_class);
    let n_novel = spec.entities_per_class - n_overlap;

    let mut embeddings = EmbeddingStore::new(spec.dim);
    let mut synonyms = EmbeddingStore::new(spec.dim);
    let mut classes: Vec<ClassSpec> = Vec::with_capacity(spec.n_classes);

    let insert = |store: &mut EmbeddingStore, token: String, vector: Vec<f64>| {
        store
            .insert(token, vector)
            .expect("generated tokens are unique and vectors nonzero");
    };

    for c in 0..spec.n_classes {
        let name = format!("class{c:02}");
        let header = format!("col_c{c:02}");
        let synonym = format!("col_c{c:02}_alt");
        let centroid = random_unit(&mut rng, spec.dim);
        // jittered per class so different classes give way at different
        // perturbation levels, which keeps the aggregate decline gradual
        let novel_cos = if spec.sigma == 0.0 {
            1.0
        } else {
            (spec.novel_cos + rng.gen_range(-0.2..0.2)).clamp(-0.9, 0.0)
        };

        let place_near = |rng: &mut ChaCha12Rng| {
            normalized(add(&centroid, &gauss_vec(rng, spec.dim, spec.sigma)))
        };

        let mut shared = Vec::with_capacity(n_overlap);
        for i in 0..n_overlap {
            let surface = format!("c{c:02}_shared{i:03}");
            insert(&mut embeddings, surface.clone(), place_near(&mut rng));
            shared.push(surface);
        }
        let mut novel = Vec::with_capacity(n_novel);
        for i in 0..n_novel {
            let surface = format!("c{c:02}_novel{i:03}");
            let vector = if spec.sigma == 0.0 {
                centroid.clone()
            } else {
                let perp = random_perp(&mut rng, &centroid);
                let direction = add(
                    &scale(&centroid, novel_cos),
                    &scale(&perp, (1.0 - novel_cos * novel_cos).sqrt()),
                );
                normalized(add(&direction, &gauss_vec(&mut rng, spec.dim, spec.sigma)))
            };
            insert(&mut embeddings, surface.clone(), vector);
            novel.push(surface);
        }
        let mut train_only = Vec::with_capacity(n_novel);
        for i in 0..n_novel {
            let surface = format!("c{c:02}_train{i:03}");
            insert(&mut embeddings, surface.clone(), place_near(&mut rng));
            train_only.push(surface);
        }

        // the victim reads headers as class evidence; the planted synonym
        // points the other way so replacing a header actually hurts
        insert(
            &mut embeddings,
            header.clone(),
            normalized(add(&centroid, &gauss_vec(&mut rng, spec.dim, header_sigma))),
        );
        insert(
            &mut embeddings,
            synonym.clone(),
            normalized(add(
                &scale(&centroid, -1.0),
                &gauss_vec(&mut rng, spec.dim, header_sigma),
            )),
        );

        // the independent synonym space only knows that header and synonym
        // are almost identical tokens
        let base = random_unit(&mut rng, spec.dim);
        insert(
            &mut synonyms,
            header.clone(),
            normalized(add(&base, &gauss_vec(&mut rng, spec.dim, 0.02))),
        );
        insert(
            &mut synonyms,
            synonym.clone(),
            normalized(add(&base, &gauss_vec(&mut rng, spec.dim, 0.02))),
        );

        classes.push(ClassSpec {
            name,
            header,
            synonym,
            centroid,
            novel_cos,
            shared,
            novel,
            train_only,
        });
    }

    // round-robin class quota over the requested test columns
    let mut quota = vec![0usize; spec.n_classes];
    for i in 0..spec.columns {
        quota[i % spec.n_classes] += 1;
    }

    let mut test_columns: Vec<ColumnPlan> = Vec::with_capacity(spec.columns);
    let mut train_columns: Vec<ColumnPlan> = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        let test_buckets = deal_columns(
            &class.shared,
            &class.novel,
            quota[c],
            spec.rows_per_column,
            &mut rng,
        );
        for cells in test_buckets {
            test_columns.push((class.name.clone(), class.header.clone(), cells));
        }
        let train_pool: Vec<String> = class
            .shared
            .iter()
            .chain(class.train_only.iter())
            .cloned()
            .collect();
        let train_buckets = deal_columns(
            &train_pool,
            &[],
            quota[c],
            spec.rows_per_column,
            &mut rng,
        );
        for cells in train_buckets {
            train_columns.push((class.name.clone(), class.header.clone(), cells));
        }
    }
    // interleave columns back into round-robin order so tables mix classes
    test_columns = interleave_by_class(test_columns, &classes, &quota);
    train_columns = interleave_by_class(train_columns, &classes, &quota);

    let test_tables = assemble_tables(
        "test",
        test_columns,
        spec.columns_per_table,
        spec.rows_per_column,
    );
    let train_tables = assemble_tables(
        "train",
        train_columns,
        spec.columns_per_table,
        spec.rows_per_column,
    );
    let test = Corpus::new(test_tables, SplitTag::Test).expect("generated ids are unique");
    let train = Corpus::new(train_tables, SplitTag::Train).expect("generated ids are unique");

    // bookkeeping from the corpora themselves
    let test_sets = distinct_per_class(&test);
    let train_sets = distinct_per_class(&train);
    let empty = BTreeSet::new();
    let bookkeeping: Vec<ClassBookkeeping> = classes
        .iter()
        .map(|class| {
            let test_set = test_sets.get(&class.name).unwrap_or(&empty);
            let train_set = train_sets.get(&class.name).unwrap_or(&empty);
            let overlap = test_set.intersection(train_set).count();
            ClassBookkeeping {
                class: class.name.clone(),
                header: class.header.clone(),
                synonym: class.synonym.clone(),
                centroid: class.centroid.clone(),
                novel_cos: class.novel_cos,
                test_pool: test_set.len(),
                overlap,
                filtered: test_set.len() - overlap,
                train_pool: train_set.len(),
            }
        })
        .collect();

    let notes = if spec.sigma == 0.0 {
        "degenerate fixture (sigma = 0): every class collapses to its centroid; baseline F1 = 1.0"
            .to_string()
    } else {
        format!(
            "calibrated for the reference victim at header_weight 0.3, threshold 0.5; \
             novel clusters sit at cosine ~{:.2} to their class centroid",
            spec.novel_cos
        )
    };
    let metadata = FixtureMetadata {
        spec: spec.clone(),
        victim: VictimCalibration {
            header_weight: 0.3,
            threshold: 0.5,
            expected_min_baseline_f1: 0.85,
        },
        classes: bookkeeping,
        synonym_pairs: classes
            .iter()
            .map(|c| (c.header.clone(), c.synonym.clone()))
            .collect(),
        notes,
    };

    Ok(Fixture {
        train,
        test,
        embeddings,
        synonyms,
        metadata,
    })
}

/// Restores round-robin class order after per-class dealing, so each
/// assembled table mixes classes instead of holding five columns of one.
fn interleave_by_class(
    per_class_order: Vec<ColumnPlan>,
    classes: &[ClassSpec],
    quota: &[usize],
) -> Vec<ColumnPlan> {
    let mut by_class: BTreeMap<&str, std::collections::VecDeque<ColumnPlan>> = BTreeMap::new();
    for column in per_class_order {
        by_class
            .entry(match classes.iter().find(|c| c.name == column.0) {
                Some(c) => c.name.as_str(),
                None => unreachable!("column class always exists"),
            })
            .or_default()
            .push_back(column);
    }
    let total: usize = quota.iter().sum();
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let class = &classes[i % classes.len()];
        if let Some(queue) = by_class.get_mut(class.name.as_str()) {
            if let Some(column) = queue.pop_front() {
                out.push(column);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub embeddings: PathBuf,
    pub synonyms: PathBuf,
    pub metadata: PathBuf,
}

/// Writes the fixture's five files into `dir`.
pub fn write_fixture(fixture: &Fixture, dir: impl AsRef<Path>) -> Result<FixturePaths, FixtureError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source: std::io::Error| FixtureError::Io {
            path: path.clone(),
            source,
        }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let paths = FixturePaths {
        train: dir.join("train.jsonl"),
        test: dir.join("test.jsonl"),
        embeddings: dir.join("embeddings.txt"),
        synonyms: dir.join("synonyms.txt"),
        metadata: dir.join("metadata.json"),
    };
    write_corpus(&fixture.train, &paths.train).map_err(io(&paths.train))?;
    write_corpus(&fixture.test, &paths.test).map_err(io(&paths.test))?;
    write_embeddings(&fixture.embeddings, &paths.embeddings).map_err(io(&paths.embeddings))?;
    write_embeddings(&fixture.synonyms, &paths.synonyms).map_err(io(&paths.synonyms))?;
    let json = serde_json::to_string_pretty(&fixture.metadata)
        .expect("metadata serialization cannot fail");
    std::fs::write(&paths.metadata, json).map_err(io(&paths.metadata))?;
    Ok(paths)
}
