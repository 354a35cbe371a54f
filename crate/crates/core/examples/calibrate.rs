//! Scratch harness: prints the default fixture's sweep curves so the
//! fixture geometry can be sanity-checked quickly.

use entswap_core::attack::{PoolKind, Sampling, Selection};
use entswap_core::eval::{run_header_sweep, run_sweep, SweepSpec};
use entswap_core::fixture::{gen_synthetic_corpus, FixtureSpec};
use entswap_core::kb::build_kb;
use entswap_core::table::SplitTag;
use entswap_core::victim::{build_prototype_victim, MissingEmbeddingPolicy};

fn main() {
    let mut spec = FixtureSpec::default();
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 {
        spec.novel_cos = args[1].parse().unwrap();
    }
    if args.len() > 2 {
        spec.sigma = args[2].parse().unwrap();
    }
    let start = std::time::Instant::now();
    let fixture = gen_synthetic_corpus(&spec).unwrap();
    let kb_test = build_kb(&fixture.test, &fixture.embeddings, SplitTag::Test).unwrap();
    let kb_train = build_kb(&fixture.train, &fixture.embeddings, SplitTag::Train).unwrap();
    let cal = &fixture.metadata.victim;
    let victim = build_prototype_victim(
        &fixture.train,
        &fixture.embeddings,
        cal.header_weight,
        cal.threshold,
        MissingEmbeddingPolicy::Fail,
    )
    .unwrap();
    println!("fixture+victim built in {:?}", start.elapsed());

    let sweep_spec = SweepSpec::default();
    let start = std::time::Instant::now();
    let output = run_sweep(&sweep_spec, &victim, &fixture.test, &kb_test, &kb_train).unwrap();
    println!(
        "sweep: {} rows, {} records, {} failures in {:?}",
        output.rows.len(),
        output.records.len(),
        output.failures.len(),
        start.elapsed()
    );
    let b = &output.baseline;
    println!(
        "baseline: P={:.4} R={:.4} F1={:.4}",
        b.precision, b.recall, b.f1
    );

    let mean = |rows: &[&entswap_core::eval::MetricsRow], f: fn(&entswap_core::eval::MetricsRow) -> f64| {
        rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
    };
    for selection in [Selection::Importance, Selection::Random] {
        for sampling in [Sampling::Similarity, Sampling::Random] {
            for pool in [PoolKind::Filtered, PoolKind::Test] {
                print!("{selection:>10}+{sampling:<10} {pool:<8}:");
                for p in [20u8, 40, 60, 80, 100] {
                    let rows: Vec<_> = output
                        .rows
                        .iter()
                        .filter(|r| {
                            r.p == p
                                && r.selection == Some(selection)
                                && r.sampling == Some(sampling)
                                && r.pool == Some(pool)
                        })
                        .collect();
                    print!(" p{p}:F1={:.3}", mean(&rows, |r| r.f1));
                }
                println!();
            }
        }
    }
    // P/R at p=100 for the headline slice
    let rows: Vec<_> = output
        .rows
        .iter()
        .filter(|r| {
            r.p == 100
                && r.selection == Some(Selection::Importance)
                && r.sampling == Some(Sampling::Similarity)
                && r.pool == Some(PoolKind::Filtered)
        })
        .collect();
    println!(
        "headline p=100: P={:.4} R={:.4} F1={:.4} success={:.3} skips={:.3}",
        mean(&rows, |r| r.precision),
        mean(&rows, |r| r.recall),
        mean(&rows, |r| r.f1),
        mean(&rows, |r| r.success_rate),
        mean(&rows, |r| r.skip_rate),
    );

    let start = std::time::Instant::now();
    let header = run_header_sweep(
        &[20, 40, 60, 80, 100],
        &[1, 2, 3, 4, 5],
        &victim,
        &fixture.test,
        &fixture.synonyms,
    )
    .unwrap();
    print!("header attack (baseline F1={:.3}):", header.baseline.f1);
    for p in [20u8, 40, 60, 80, 100] {
        let rows: Vec<f64> = header
            .rows
            .iter()
            .filter(|r| r.p == p)
            .map(|r| r.f1)
            .collect();
        print!(" p{p}:F1={:.3}", rows.iter().sum::<f64>() / rows.len() as f64);
    }
    println!(" in {:?}", start.elapsed());
}
