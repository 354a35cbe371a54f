//! Shared setup for the benchmark targets: one deterministic fixture with
//! its knowledge bases and reference victim.

use entswap_core::fixture::{gen_synthetic_corpus, Fixture, FixtureSpec};
use entswap_core::kb::{build_kb, EntityKB};
use entswap_core::table::SplitTag;
use entswap_core::victim::{build_prototype_victim, MissingEmbeddingPolicy, PrototypeVictim};

pub struct BenchSetup {
    pub fixture: Fixture,
    pub victim: PrototypeVictim,
    pub kb_test: EntityKB,
    pub kb_train: EntityKB,
}

pub fn setup() -> BenchSetup {
    let spec = FixtureSpec {
        n_classes: 10,
        entities_per_class: 100,
        columns: 50,
        rows_per_column: 10,
        columns_per_table: 5,
        overlap_fraction: 0.61,
        dim: 32,
        sigma: 0.15,
        novel_cos: -0.25,
        seed: 42,
    };
    let fixture = gen_synthetic_corpus(&spec).expect("bench fixture generates");
    let kb_test = build_kb(&fixture.test, &fixture.embeddings, SplitTag::Test).unwrap();
    let kb_train = build_kb(&fixture.train, &fixture.embeddings, SplitTag::Train).unwrap();
    let victim = build_prototype_victim(
        &fixture.train,
        &fixture.embeddings,
        0.3,
        0.5,
        MissingEmbeddingPolicy::Fail,
    )
    .unwrap();
    BenchSetup {
        fixture,
        victim,
        kb_test,
        kb_train,
    }
}
