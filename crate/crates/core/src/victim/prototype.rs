//! Reference victim: a nearest-class-mean (prototype) classifier over
//! entity embeddings. Deterministic, trains in milliseconds, and sensitive
//! to both entity identity and header text, which is exactly the surface
//! the entity-swap and header attacks exploit.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LogitVector, Victim, VictimError};
use crate::kb::EmbeddingStore;
use crate::table::{Corpus, Table, MASK};

/// What to do when a training entity or header has no embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingEmbeddingPolicy {
    /// Leave it out of the prototype mean and log a warning.
    #[default]
    Skip,
    /// Fail the build naming the offending token.
    Fail,
}

/// Column scorer: `logit(c) = (1-w_h)·cos(entity_mean, prototype_c)
/// + w_h·cos(header, prototype_c)`.
///
/// The entity mean averages the unit embeddings of the column's unmasked
/// cells; masked or unembeddable cells are excluded. A term whose vector is
/// unavailable (all cells masked, header not in the store) contributes 0,
/// so an all-masked column scores `w_h·cos(header, prototype_c)`.
#[derive(Debug, Clone)]
pub struct PrototypeVictim {
    prototypes: BTreeMap<String, Vec<f64>>,
    header_weight: f64,
    threshold: f64,
    dim: usize,
    store: EmbeddingStore,
    vocab: Vec<String>,
}

fn unit_mean(vectors: &[&[f64]], dim: usize) -> Option<Vec<f64>> {
    if vectors.is_empty() {
        return None;
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(*v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    for m in &mut mean {
        *m /= norm;
    }
    Some(mean)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

impl PrototypeVictim {
    pub fn header_weight(&self) -> f64 {
        self.header_weight
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prototypes(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.prototypes
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    /// Same prototypes and store under a different header weight; used to
    /// isolate pure entity attacks (w_h = 0) or entity-blind behavior
    /// (w_h = 1).
    pub fn with_header_weight(&self, header_weight: f64) -> Result<Self, VictimError> {
        if !(0.0..=1.0).contains(&header_weight) {
            return Err(VictimError::HeaderWeightOutOfRange {
                value: header_weight,
            });
        }
        Ok(PrototypeVictim {
            header_weight,
            ..self.clone()
        })
    }

    fn check_column(&self, table: &Table, col: usize) -> Result<(), VictimError> {
        if col >= table.column_count() {
            return Err(VictimError::ColumnOutOfRange {
                table_id: table.table_id().to_string(),
                col,
                m: table.column_count(),
            });
        }
        Ok(())
    }

    /// Unit mean of the column's unmasked, embeddable cells.
    fn column_entity_mean(&self, table: &Table, col: usize) -> Option<Vec<f64>> {
        let vectors: Vec<&[f64]> = table
            .rows()
            .iter()
            .map(|row| row[col].as_str())
            .filter(|cell| *cell != MASK && !cell.is_empty())
            .filter_map(|cell| self.store.get(cell))
            .collect();
        unit_mean(&vectors, self.dim)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VictimError> {
        let model = PrototypeModel {
            header_weight: self.header_weight,
            threshold: self.threshold,
            dim: self.dim,
            prototypes: self.prototypes.clone(),
            embeddings: self
                .store
                .iter()
                .map(|(token, vector)| (token.to_string(), vector.to_vec()))
                .collect(),
        };
        let path = path.as_ref();
        let json = serde_json::to_string(&model).expect("model serialization cannot fail");
        std::fs::write(path, json).map_err(|e| VictimError::Model {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VictimError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let model_err = |message: String| VictimError::Model {
            path: display.clone(),
            message,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| model_err(e.to_string()))?;
        let model: PrototypeModel =
            serde_json::from_str(&raw).map_err(|e| model_err(e.to_string()))?;
        if !(0.0..=1.0).contains(&model.header_weight) {
            return Err(VictimError::HeaderWeightOutOfRange {
                value: model.header_weight,
            });
        }
        if !(-1.0..1.0).contains(&model.threshold) {
            return Err(VictimError::ThresholdOutOfRange {
                value: model.threshold,
            });
        }
        let mut store = EmbeddingStore::new(model.dim);
        for (token, vector) in model.embeddings {
            store
                .insert(token, vector)
                .map_err(|e| model_err(e.to_string()))?;
        }
        let mut prototypes = BTreeMap::new();
        for (class, vector) in model.prototypes {
            if vector.len() != model.dim {
                return Err(model_err(format!(
                    "prototype for {class:?} has dimension {}, expected {}",
                    vector.len(),
                    model.dim
                )));
            }
            let unit = unit_mean(&[&vector], model.dim)
                .ok_or_else(|| VictimError::DegeneratePrototype {
                    class: class.clone(),
                })?;
            prototypes.insert(class, unit);
        }
        if prototypes.is_empty() {
            return Err(model_err("model has no prototypes".into()));
        }
        let vocab = prototypes.keys().cloned().collect();
        Ok(PrototypeVictim {
            prototypes,
            header_weight: model.header_weight,
            threshold: model.threshold,
            dim: model.dim,
            store,
            vocab,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PrototypeModel {
    header_weight: f64,
    threshold: f64,
    dim: usize,
    prototypes: BTreeMap<String, Vec<f64>>,
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl Victim for PrototypeVictim {
    fn classes(&self) -> &[String] {
        &self.vocab
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn predict_logits(
        &self,
        table: &Table,
        col: usize,
        classes: &[String],
    ) -> Result<LogitVector, VictimError> {
        self.check_column(table, col)?;
        if classes.is_empty() {
            return Err(VictimError::EmptyClassList);
        }
        for class in classes {
            if !self.prototypes.contains_key(class) {
                return Err(VictimError::UnknownClass {
                    class: class.clone(),
                });
            }
        }
        let entity_mean = self.column_entity_mean(table, col);
        let header_vec = self
            .store
            .get(table.header(col).expect("column checked"))
            .map(<[f64]>::to_vec);

        let scores = classes
            .iter()
            .map(|class| {
                let proto = &self.prototypes[class];
                let entity_term = entity_mean.as_deref().map_or(0.0, |m| dot(m, proto));
                let header_term = header_vec.as_deref().map_or(0.0, |h| dot(h, proto));
                (1.0 - self.header_weight) * entity_term + self.header_weight * header_term
            })
            .collect();
        Ok(LogitVector::new(classes.to_vec(), scores))
    }
}

/// Trains a prototype per class: the unit-normalized mean of the unit
/// embeddings of all distinct training entities whose column's
/// most-specific class is that class.
pub fn build_prototype_victim(
    train: &Corpus,
    embeddings: &EmbeddingStore,
    header_weight: f64,
    threshold: f64,
    policy: MissingEmbeddingPolicy,
) -> Result<PrototypeVictim, VictimError> {
    if !(0.0..=1.0).contains(&header_weight) {
        return Err(VictimError::HeaderWeightOutOfRange {
            value: header_weight,
        });
    }
    if !(-1.0..1.0).contains(&threshold) {
        return Err(VictimError::ThresholdOutOfRange { value: threshold });
    }

    let mut class_surfaces: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let annotated = train.annotated_columns();
    if annotated.is_empty() {
        return Err(VictimError::NoAnnotatedColumns);
    }
    for (table, col) in annotated {
        let class = table.most_specific_class(col).unwrap().to_string();
        if policy == MissingEmbeddingPolicy::Fail {
            let header = table.header(col).unwrap();
            if !embeddings.contains(header) {
                return Err(VictimError::MissingEmbedding {
                    kind: "header",
                    token: header.to_string(),
                });
            }
        }
        let set = class_surfaces.entry(class).or_default();
        for row in table.rows() {
            let surface = row[col].as_str();
            if surface != MASK && !surface.is_empty() {
                set.insert(surface.to_string());
            }
        }
    }

    let mut prototypes = BTreeMap::new();
    for (class, surfaces) in class_surfaces {
        let mut vectors: Vec<&[f64]> = Vec::with_capacity(surfaces.len());
        for surface in &surfaces {
            match embeddings.get(surface) {
                Some(v) => vectors.push(v),
                None => match policy {
                    MissingEmbeddingPolicy::Fail => {
                        return Err(VictimError::MissingEmbedding {
                            kind: "entity",
                            token: surface.clone(),
                        })
                    }
                    MissingEmbeddingPolicy::Skip => {
                        log::warn!("no embedding for training entity {surface:?}; skipping");
                    }
                },
            }
        }
        if vectors.is_empty() {
            return Err(VictimError::ClassWithoutEntities { class });
        }
        let proto = unit_mean(&vectors, embeddings.dim())
            .ok_or(VictimError::DegeneratePrototype { class: class.clone() })?;
        prototypes.insert(class, proto);
    }

    let vocab = prototypes.keys().cloned().collect();
    Ok(PrototypeVictim {
        prototypes,
        header_weight,
        threshold,
        dim: embeddings.dim(),
        store: embeddings.clone(),
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{mask_entity, CellRef, SplitTag};
    use std::collections::BTreeMap as Map;

    fn store(entries: &[(&str, Vec<f64>)]) -> EmbeddingStore {
        let dim = entries[0].1.len();
        let mut s = EmbeddingStore::new(dim);
        for (token, v) in entries {
            s.insert(*token, v.clone()).unwrap();
        }
        s
    }

    fn one_column_table(id: &str, header: &str, class: &str, cells: &[&str]) -> Table {
        Table::new(
            id,
            vec![header.into()],
            cells.iter().map(|c| vec![c.to_string()]).collect(),
            Map::from([(0, vec![class.to_string()])]),
        )
        .unwrap()
    }

    fn train_victim(
        store: &EmbeddingStore,
        tables: Vec<Table>,
        w_h: f64,
        tau: f64,
    ) -> PrototypeVictim {
        let corpus = Corpus::new(tables, SplitTag::Train).unwrap();
        build_prototype_victim(&corpus, store, w_h, tau, MissingEmbeddingPolicy::Skip).unwrap()
    }

    #[test]
    fn aligned_column_scores_one() {
        let s = store(&[("e", vec![1.0, 0.0, 0.0])]);
        let victim = train_victim(&s, vec![one_column_table("tr", "h", "c", &["e"])], 0.0, 0.5);
        let table = one_column_table("te", "h", "c", &["e", "e", "e"]);
        let logits = victim
            .predict_logits(&table, 0, &["c".to_string()])
            .unwrap();
        assert!((logits.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_class_scores_zero() {
        let s = store(&[("e", vec![1.0, 0.0]), ("o", vec![0.0, 1.0])]);
        let victim = train_victim(
            &s,
            vec![
                one_column_table("tr1", "h", "c", &["e"]),
                one_column_table("tr2", "h", "c_orth", &["o"]),
            ],
            0.0,
            0.5,
        );
        let table = one_column_table("te", "h", "c", &["e", "e"]);
        let logits = victim
            .predict_logits(&table, 0, &["c_orth".to_string()])
            .unwrap();
        assert!(logits.scores[0].abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)] // 0.7071 is the frozen hand value for 1/sqrt(2)
    fn two_entity_column_matches_hand_cosine() {
        // mean of [1,0,0] and [0,1,0] is [0.5,0.5,0]; cosine to the
        // prototype [1,0,0] is 1/sqrt(2) = 0.7071
        let s = store(&[
            ("p", vec![1.0, 0.0, 0.0]),
            ("q", vec![0.0, 1.0, 0.0]),
        ]);
        let victim = train_victim(&s, vec![one_column_table("tr", "h", "c", &["p"])], 0.0, 0.5);
        let table = one_column_table("te", "h", "c", &["p", "q"]);
        let logits = victim
            .predict_logits(&table, 0, &["c".to_string()])
            .unwrap();
        assert!((logits.scores[0] - 0.7071).abs() < 1e-3);
    }

    #[test]
    fn predict_classes_thresholds_vocabulary() {
        let s = store(&[("e", vec![1.0, 0.0]), ("o", vec![0.0, 1.0])]);
        let victim = train_victim(
            &s,
            vec![
                one_column_table("tr1", "h", "c", &["e"]),
                one_column_table("tr2", "h", "c_orth", &["o"]),
            ],
            0.0,
            0.5,
        );
        // exactly one class at logit 1.0 with tau = 0.5: singleton
        let table = one_column_table("te", "h", "c", &["e"]);
        let preds = victim.predict_classes(&table, 0).unwrap();
        assert_eq!(preds.iter().collect::<Vec<_>>(), vec!["c"]);

        // all logits below tau: empty set
        let s2 = store(&[("e", vec![1.0, 0.0]), ("far", vec![-1.0, 0.0])]);
        let victim2 = train_victim(&s2, vec![one_column_table("tr", "h", "c", &["e"])], 0.0, 0.5);
        let table2 = one_column_table("te", "h", "c", &["far"]);
        assert!(victim2.predict_classes(&table2, 0).unwrap().is_empty());
    }

    #[test]
    fn two_class_fixture_clears_threshold_per_hand_cosines() {
        // column mean [0.5,0.5] (unit: [0.7071,0.7071]); prototypes at the
        // axes give cosine 0.7071 each, both clearing tau = 0.5
        let s = store(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
        ]);
        let victim = train_victim(
            &s,
            vec![
                one_column_table("tr1", "h", "c1", &["a"]),
                one_column_table("tr2", "h", "c2", &["b"]),
            ],
            0.0,
            0.5,
        );
        let table = one_column_table("te", "h", "c1", &["a", "b"]);
        let preds = victim.predict_classes(&table, 0).unwrap();
        assert_eq!(preds.iter().collect::<Vec<_>>(), vec!["c1", "c2"]);
    }

    #[test]
    fn single_training_entity_prototype_is_its_unit_vector() {
        let s = store(&[("e", vec![3.0, 4.0])]);
        let victim = train_victim(&s, vec![one_column_table("tr", "h", "c", &["e"])], 0.0, 0.5);
        let proto = &victim.prototypes()["c"];
        assert!((proto[0] - 0.6).abs() < 1e-12);
        assert!((proto[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn antipodal_training_entities_are_degenerate() {
        let s = store(&[("e1", vec![1.0, 0.0]), ("e2", vec![-1.0, 0.0])]);
        let corpus = Corpus::new(
            vec![one_column_table("tr", "h", "c", &["e1", "e2"])],
            SplitTag::Train,
        )
        .unwrap();
        let err = build_prototype_victim(&corpus, &s, 0.0, 0.5, MissingEmbeddingPolicy::Skip)
            .unwrap_err();
        assert!(matches!(err, VictimError::DegeneratePrototype { .. }));
    }

    #[test]
    fn missing_embedding_policy() {
        let s = store(&[("e", vec![1.0, 0.0])]);
        let corpus = Corpus::new(
            vec![one_column_table("tr", "h", "c", &["e", "ghost"])],
            SplitTag::Train,
        )
        .unwrap();
        assert!(
            build_prototype_victim(&corpus, &s, 0.0, 0.5, MissingEmbeddingPolicy::Skip).is_ok()
        );
        let err = build_prototype_victim(&corpus, &s, 0.0, 0.5, MissingEmbeddingPolicy::Fail)
            .unwrap_err();
        assert!(matches!(err, VictimError::MissingEmbedding { .. }));

        // a class whose every entity lacks an embedding cannot be skipped away
        let corpus2 = Corpus::new(
            vec![
                one_column_table("tr1", "h", "c", &["e"]),
                one_column_table("tr2", "h", "empty_class", &["ghost"]),
            ],
            SplitTag::Train,
        )
        .unwrap();
        let err = build_prototype_victim(&corpus2, &s, 0.0, 0.5, MissingEmbeddingPolicy::Skip)
            .unwrap_err();
        assert!(matches!(err, VictimError::ClassWithoutEntities { .. }));
    }

    #[test]
    fn masked_cells_leave_the_mean() {
        let s = store(&[("p", vec![1.0, 0.0]), ("q", vec![0.0, 1.0])]);
        let victim = train_victim(&s, vec![one_column_table("tr", "h", "c", &["p"])], 0.0, 0.5);
        let table = one_column_table("te", "h", "c", &["p", "q"]);
        let masked = mask_entity(&table, &CellRef::new("te", 2, 0)).unwrap();
        let logits = victim
            .predict_logits(&masked, 0, &["c".to_string()])
            .unwrap();
        // only "p" remains: cosine 1.0
        assert!((logits.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_masked_column_reduces_to_weighted_header_cosine() {
        let s = store(&[("p", vec![1.0, 0.0]), ("hdr", vec![1.0, 0.0])]);
        let victim = train_victim(
            &s,
            vec![one_column_table("tr", "hdr", "c", &["p"])],
            0.3,
            0.5,
        );
        let table = one_column_table("te", "hdr", "c", &["p"]);
        let masked = mask_entity(&table, &CellRef::new("te", 1, 0)).unwrap();
        let logits = victim
            .predict_logits(&masked, 0, &["c".to_string()])
            .unwrap();
        // entity mean is gone; logit = w_h * cos(header, prototype) = 0.3
        assert!((logits.scores[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn unknown_class_and_empty_list_rejected() {
        let s = store(&[("e", vec![1.0, 0.0])]);
        let victim = train_victim(&s, vec![one_column_table("tr", "h", "c", &["e"])], 0.0, 0.5);
        let table = one_column_table("te", "h", "c", &["e"]);
        assert!(matches!(
            victim.predict_logits(&table, 0, &["nope".to_string()]),
            Err(VictimError::UnknownClass { .. })
        ));
        assert!(matches!(
            victim.predict_logits(&table, 0, &[]),
            Err(VictimError::EmptyClassList)
        ));
        assert!(matches!(
            victim.predict_logits(&table, 5, &["c".to_string()]),
            Err(VictimError::ColumnOutOfRange { .. })
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let s = store(&[("p", vec![1.0, 0.2]), ("q", vec![0.3, 1.0])]);
        let victim = train_victim(
            &s,
            vec![
                one_column_table("tr1", "h", "c1", &["p"]),
                one_column_table("tr2", "h", "c2", &["q"]),
            ],
            0.3,
            0.5,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        victim.save(&path).unwrap();
        let loaded = PrototypeVictim::load(&path).unwrap();
        let table = one_column_table("te", "h", "c1", &["p", "q"]);
        let a = victim
            .predict_logits(&table, 0, &["c1".into(), "c2".into()])
            .unwrap();
        let b = loaded
            .predict_logits(&table, 0, &["c1".into(), "c2".into()])
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(victim.classes(), loaded.classes());
    }

    #[test]
    fn determinism_across_calls() {
        let s = store(&[("p", vec![0.4, 0.9]), ("q", vec![0.8, 0.1])]);
        let victim = train_victim(
            &s,
            vec![one_column_table("tr", "h", "c", &["p", "q"])],
            0.0,
            0.5,
        );
        let table = one_column_table("te", "h", "c", &["p", "q"]);
        let first = victim.predict_logits(&table, 0, &["c".to_string()]).unwrap();
        for _ in 0..10 {
            let again = victim.predict_logits(&table, 0, &["c".to_string()]).unwrap();
            assert_eq!(first, again);
        }
    }
}
