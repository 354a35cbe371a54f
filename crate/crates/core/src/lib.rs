//! Black-box entity-swap attacks on column type annotation models.
//!
//! The pipeline: parse line-delimited table corpora ([`table`]), index
//! class-consistent adversarial candidates with their embeddings ([`kb`]),
//! probe a victim through a black-box prediction interface ([`victim`]),
//! run mask-importance-guided entity swaps and header-synonym substitutions
//! ([`attack`]), and measure the multilabel F1 degradation across
//! perturbation sweeps ([`eval`]). [`fixture`] generates the deterministic
//! synthetic corpora the test suite calibrates against.

pub mod attack;
pub mod eval;
pub mod fixture;
pub mod kb;
pub mod table;
pub mod victim;

pub use attack::{
    entity_swap_attack, header_synonym_attack, imperceptibility_audit, AttackConfig, AttackError,
    AttackRecord, AttackResult, HeaderAttack, HeaderSwap, ImportanceScore, PoolKind, Sampling,
    Selection, SwapRecord,
};
pub use eval::{
    emit_report, micro_prf, relative_drop, run_header_sweep, run_sweep, EvalError, MetricsRow,
    MicroPrf, SweepOutput, SweepSpec,
};
pub use fixture::{gen_synthetic_corpus, write_fixture, Fixture, FixtureMetadata, FixtureSpec};
pub use kb::{
    build_kb, cosine_similarity, filtered_pool, leakage_report, load_embeddings, most_dissimilar,
    nearest_synonym, CountingMode, EmbeddingStore, EntityKB, EntityRecord, KbError, LeakageReport,
};
pub use table::{
    column, mask_entity, parse_corpus, swap_entity, CellRef, Corpus, SplitTag, Table, TableError,
    MASK,
};
pub use victim::{
    build_prototype_victim, serve_victim, LogitVector, MissingEmbeddingPolicy, PredictionSet,
    PrototypeVictim, RemoteVictim, Victim, VictimError,
};
