//! Command implementations. Every command records a manifest (input
//! digests, resolved config, seeds, tool version) alongside its outputs,
//! and all randomness flows from the seeds on the command line.

use std::path::Path;
use std::sync::Arc;

use entswap_core::eval::{
    emit_report, run_header_sweep, run_sweep, write_attack_records, write_header_sweep_csv,
    SweepSpec,
};
use entswap_core::fixture::{gen_synthetic_corpus, write_fixture, FixtureSpec};
use entswap_core::kb::{build_kb, leakage_report, load_embeddings, write_leakage_csv};
use entswap_core::table::{parse_corpus, Corpus, SplitTag};
use entswap_core::victim::{
    build_prototype_victim, serve_victim, MissingEmbeddingPolicy, PrototypeVictim, RemoteVictim,
    Victim,
};

use crate::manifest::RunManifest;
use crate::{
    AttackArgs, AuditLeakageArgs, CliError, GenFixturesArgs, HeaderAttackArgs, ServeArgs,
    TrainVictimArgs,
};

/// Victim specs are dispatched by prefix: `prototype:<model file>` loads a
/// saved prototype model, `http://…` (or `http:<url>`) connects to a served
/// victim.
fn resolve_victim(spec: &str) -> Result<Box<dyn Victim>, CliError> {
    if let Some(path) = spec.strip_prefix("prototype:") {
        let victim = PrototypeVictim::load(path).map_err(CliError::from_victim)?;
        return Ok(Box::new(victim));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        let victim = RemoteVictim::connect(spec).map_err(CliError::from_victim)?;
        return Ok(Box::new(victim));
    }
    if let Some(rest) = spec.strip_prefix("http:") {
        let victim =
            RemoteVictim::connect(&format!("http://{rest}")).map_err(CliError::from_victim)?;
        return Ok(Box::new(victim));
    }
    Err(CliError::Usage(format!(
        "unknown victim spec {spec:?}; expected prototype:<model file> or http://<host:port>"
    )))
}

/// The model file backing a `prototype:` spec participates in the input
/// digest list; remote victims have no input file.
fn victim_input_path(spec: &str) -> Option<&Path> {
    spec.strip_prefix("prototype:").map(Path::new)
}

pub fn gen_fixtures(args: GenFixturesArgs) -> Result<(), CliError> {
    let spec = FixtureSpec {
        n_classes: args.classes,
        entities_per_class: args.entities_per_class,
        columns: args.columns,
        rows_per_column: args.rows,
        columns_per_table: args.columns_per_table,
        overlap_fraction: args.overlap,
        dim: args.dim,
        sigma: args.sigma,
        novel_cos: args.novel_cos,
        seed: args.seed,
    };
    let fixture = gen_synthetic_corpus(&spec)?;
    let paths = write_fixture(&fixture, &args.out)?;
    let manifest = RunManifest::new(
        "gen-fixtures",
        serde_json::to_value(&spec).expect("spec serializes"),
        &[],
        vec![args.seed],
    )?;
    manifest.write(&args.out.join("manifest.json"))?;
    println!(
        "wrote {} train tables, {} test tables, {} embeddings, {} synonym tokens",
        fixture.train.tables.len(),
        fixture.test.tables.len(),
        fixture.embeddings.len(),
        fixture.synonyms.len(),
    );
    println!("calibration: {}", fixture.metadata.notes);
    for path in [
        &paths.train,
        &paths.test,
        &paths.embeddings,
        &paths.synonyms,
        &paths.metadata,
    ] {
        println!("  {}", path.display());
    }
    Ok(())
}

pub fn train_victim(args: TrainVictimArgs) -> Result<(), CliError> {
    let manifest = RunManifest::new(
        "train-victim",
        serde_json::json!({
            "train": args.train.display().to_string(),
            "embeddings": args.embeddings.display().to_string(),
            "header_weight": args.header_weight,
            "threshold": args.threshold,
            "missing": args.missing,
        }),
        &[&args.train, &args.embeddings],
        vec![],
    )?;
    let train = parse_corpus(&args.train, SplitTag::Train)?;
    let embeddings = load_embeddings(&args.embeddings)?;
    let policy = match args.missing.as_str() {
        "fail" => MissingEmbeddingPolicy::Fail,
        _ => MissingEmbeddingPolicy::Skip,
    };
    let victim = build_prototype_victim(
        &train,
        &embeddings,
        args.header_weight,
        args.threshold,
        policy,
    )
    .map_err(CliError::from_victim)?;
    victim.save(&args.out).map_err(CliError::from_victim)?;
    manifest.write(&manifest_sibling(&args.out))?;
    println!(
        "saved prototype victim with {} classes (dim {}) to {}",
        victim.classes().len(),
        victim.dim(),
        args.out.display()
    );
    Ok(())
}

pub fn audit_leakage(args: AuditLeakageArgs) -> Result<(), CliError> {
    let manifest = RunManifest::new(
        "audit-leakage",
        serde_json::json!({
            "train": args.train.display().to_string(),
            "test": args.test.display().to_string(),
            "mode": args.mode.to_string(),
        }),
        &[&args.train, &args.test],
        vec![],
    )?;
    let train = parse_corpus(&args.train, SplitTag::Train)?;
    let test = parse_corpus(&args.test, SplitTag::Test)?;
    for (corpus, name) in [(&train, "train"), (&test, "test")] {
        if corpus.annotated_columns().is_empty() {
            return Err(CliError::input(format!(
                "{name} corpus has no annotated columns; nothing to audit"
            )));
        }
    }
    let report = leakage_report(&train, &test, args.mode);
    let file = std::fs::File::create(&args.out)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", args.out.display())))?;
    write_leakage_csv(&report, file).map_err(|e| CliError::input(e.to_string()))?;
    manifest.write(&manifest_sibling(&args.out))?;
    println!(
        "audited {} classes ({} mode) -> {}",
        report.rows.len(),
        report.mode,
        args.out.display()
    );
    for row in report.rows.iter().take(5) {
        println!("  {} total={} overlap={} pct={:.1}", row.class, row.total, row.overlap, row.pct);
    }
    Ok(())
}

fn manifest_sibling(out: &Path) -> std::path::PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "output".to_string());
    name.push_str(".manifest.json");
    out.with_file_name(name)
}

fn load_corpora_and_kbs(
    corpus: &Path,
    train_corpus: &Path,
    embeddings: &Path,
) -> Result<
    (
        Corpus,
        entswap_core::kb::EntityKB,
        entswap_core::kb::EntityKB,
    ),
    CliError,
> {
    let test = parse_corpus(corpus, SplitTag::Test)?;
    let train = parse_corpus(train_corpus, SplitTag::Train)?;
    let store = load_embeddings(embeddings)?;
    let kb_test = build_kb(&test, &store, SplitTag::Test)?;
    let kb_train = build_kb(&train, &store, SplitTag::Train)?;
    Ok((test, kb_test, kb_train))
}

pub fn attack(args: AttackArgs) -> Result<(), CliError> {
    let mut inputs: Vec<&Path> = vec![&args.corpus, &args.train_corpus, &args.embeddings];
    if let Some(model) = victim_input_path(&args.victim) {
        inputs.push(model);
    }
    let spec = SweepSpec {
        p_values: args.p.clone(),
        selections: args.selection.clone(),
        samplings: args.sampling.clone(),
        pools: args.pool.clone(),
        seeds: args.seeds.clone(),
        allow_duplicates: args.allow_duplicates,
        only_correct: !args.attack_all,
    };
    let manifest = RunManifest::new(
        "attack",
        serde_json::json!({
            "corpus": args.corpus.display().to_string(),
            "train_corpus": args.train_corpus.display().to_string(),
            "embeddings": args.embeddings.display().to_string(),
            "victim": args.victim,
            "sweep": spec,
        }),
        &inputs,
        args.seeds.clone(),
    )?;

    // connect/load the victim first: an unreachable endpoint must fail the
    // run before any output is written
    let victim = resolve_victim(&args.victim)?;
    let (test, kb_test, kb_train) =
        load_corpora_and_kbs(&args.corpus, &args.train_corpus, &args.embeddings)?;

    let output = run_sweep(&spec, victim.as_ref(), &test, &kb_test, &kb_train)?;
    if output.rows.is_empty() {
        return Err(CliError::input(format!(
            "every sweep cell failed; first diagnostic: {}",
            output
                .failures
                .first()
                .map(String::as_str)
                .unwrap_or("none recorded")
        )));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", args.out.display())))?;
    emit_report(&output, &args.out)?;
    write_attack_records(&output.records, args.out.join("results.jsonl"))?;
    manifest.write(&args.out.join("manifest.json"))?;

    let b = &output.baseline;
    println!(
        "baseline: precision={:.4} recall={:.4} f1={:.4} over {} columns",
        b.precision,
        b.recall,
        b.f1,
        test.annotated_columns().len()
    );
    for failure in &output.failures {
        eprintln!("warning: {failure}");
    }
    println!(
        "{} sweep rows, {} attack records -> {}",
        output.rows.len(),
        output.records.len(),
        args.out.display()
    );
    Ok(())
}

pub fn header_attack(args: HeaderAttackArgs) -> Result<(), CliError> {
    let mut inputs: Vec<&Path> = vec![&args.corpus, &args.synonyms];
    if let Some(model) = victim_input_path(&args.victim) {
        inputs.push(model);
    }
    let manifest = RunManifest::new(
        "header-attack",
        serde_json::json!({
            "corpus": args.corpus.display().to_string(),
            "synonyms": args.synonyms.display().to_string(),
            "victim": args.victim,
            "p": args.p,
        }),
        &inputs,
        args.seeds.clone(),
    )?;
    let victim = resolve_victim(&args.victim)?;
    let corpus = parse_corpus(&args.corpus, SplitTag::Test)?;
    let synonyms = load_embeddings(&args.synonyms)?;
    let output = run_header_sweep(&args.p, &args.seeds, victim.as_ref(), &corpus, &synonyms)?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", args.out.display())))?;
    write_header_sweep_csv(&output, args.out.join("header_sweep.csv"))?;
    let records_path = args.out.join("header_results.jsonl");
    let file = std::fs::File::create(&records_path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", records_path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    for record in &output.records {
        use std::io::Write;
        serde_json::to_writer(&mut w, record)
            .map_err(|e| CliError::input(e.to_string()))?;
        w.write_all(b"\n")
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    use std::io::Write;
    w.flush().map_err(|e| CliError::input(e.to_string()))?;
    manifest.write(&args.out.join("manifest.json"))?;

    println!(
        "baseline f1={:.4}; {} header sweep rows -> {}",
        output.baseline.f1,
        output.rows.len(),
        args.out.display()
    );
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<(), CliError> {
    let victim = resolve_victim(&args.victim)?;
    let addr = args
        .addr
        .parse()
        .map_err(|e| CliError::Usage(format!("bad --addr {:?}: {e}", args.addr)))?;
    let handle = serve_victim(Arc::from(victim), addr).map_err(CliError::from_victim)?;
    println!("serving victim at {}", handle.url());
    println!("  POST {}/predict", handle.url());
    println!("  POST {}/classes", handle.url());
    handle.join();
    Ok(())
}
