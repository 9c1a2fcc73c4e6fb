//! Subcommand implementations.

use crate::manifest::ManifestBuilder;
use crate::{
    AnalyzeArgs, CompareArgs, ExperimentArgs, GenerateArgs, IngestArgs, LabelArgs, ModelFlags,
};
use anyhow::Context;
use fedimod_core::convgraph::{build_trees, characterize};
use fedimod_core::corpus::{ingest as ingest_corpus, write_size_classes_csv, Corpus, Format};
use fedimod_core::fednet::{fragmentation, propagate, views, FollowGraph};
use fedimod_core::labeler::{score_corpus, LabelerConfig};
use fedimod_core::model::{ModelKind, TrainConfig};
use fedimod_core::strategies::{
    evaluate, run_compare, ExperimentConfig, FederationStrategy, Locality, Pipeline,
    PipelineContext,
};
use fedimod_core::synthgen::{generate as synth_generate, GenConfig};
use fedimod_core::util::derive_seed;
use fedimod_core::walks::WalkConfig;
use serde_json::json;
use std::path::Path;

/// Invalid inputs that are not covered by a library error type.
#[derive(Debug)]
pub struct DataError(String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

fn data_err(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

pub fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let manifest = ManifestBuilder::new("generate");
    let mut config: GenConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).map_err(|e| data_err(format!("config parse error: {e}")))?
        }
        None => GenConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.n_instances {
        config.n_instances = n;
    }
    if let Some(rate) = args.toxic_rate {
        config.toxic_rate = rate;
    }
    if let Some(fraction) = args.context_dependent_fraction {
        config.context_dependent_fraction = fraction;
    }
    if let Some(density) = args.follow_density {
        config.follow_density = density;
    }

    let generated = synth_generate(&config)?;
    generated.write_outputs(&args.out)?;
    println!(
        "generated {} toots across {} instances into {}",
        generated.corpus.len(),
        generated.corpus.instances().len(),
        args.out.display()
    );
    manifest
        .seeds(json!({ "seed": config.seed }))
        .config(serde_json::to_value(&config)?)
        .write(&args.out)
}

pub fn ingest(args: IngestArgs) -> anyhow::Result<()> {
    let manifest = ManifestBuilder::new("ingest").input(&args.input);
    let report = ingest_corpus(&args.input, Format::Jsonl)
        .with_context(|| format!("ingesting {}", args.input.display()))?;
    for key in &report.unknown_keys {
        eprintln!("warning: ignoring unknown key {key:?}");
    }
    if report.dangling_parents > 0 {
        eprintln!(
            "warning: {} toots reference parents missing from the corpus",
            report.dangling_parents
        );
    }
    std::fs::create_dir_all(&args.out)?;
    report
        .corpus
        .export_jsonl_path(&args.out.join("corpus.jsonl"))?;
    let mut classes = std::fs::File::create(args.out.join("size_classes.csv"))?;
    write_size_classes_csv(&report.corpus, &mut classes)?;
    println!(
        "ingested {} toots from {} instances ({} dangling parent references)",
        report.corpus.len(),
        report.corpus.instances().len(),
        report.dangling_parents
    );
    manifest
        .config(json!({
            "dangling_parents": report.dangling_parents,
            "unknown_keys": report.unknown_keys,
        }))
        .write(&args.out)
}

pub fn label(args: LabelArgs) -> anyhow::Result<()> {
    let manifest = ManifestBuilder::new("label").input(&args.input);
    let (corpus, _) = load_corpus_dir(&args.input)?;
    let api_key = std::env::var("FEDIMOD_API_KEY").unwrap_or_default();
    let config = LabelerConfig {
        endpoint: args.endpoint.clone(),
        api_key,
        qps_limit: args.qps,
        do_not_store: true,
        cache_path: args.cache.clone(),
        max_in_flight: args.max_in_flight,
    };
    let report = score_corpus(&corpus, &config)?;
    let out = args.out.clone().unwrap_or_else(|| args.input.clone());
    std::fs::create_dir_all(&out)?;
    report.corpus.export_jsonl_path(&out.join("corpus.jsonl"))?;
    if out != args.input {
        copy_if_present(&args.input, &out, "follows.csv")?;
        copy_if_present(&args.input, &out, "ground_truth.csv")?;
    }
    println!(
        "scored corpus: {} already scored, {} from cache, {} requests, {} failed",
        report.already_scored, report.from_cache, report.requests_issued, report.failed
    );
    for failure in report.failures.iter().take(10) {
        eprintln!("warning: scoring failed: {failure}");
    }
    manifest
        .config(json!({
            "endpoint": args.endpoint,
            "qps": args.qps,
            "max_in_flight": args.max_in_flight,
            "already_scored": report.already_scored,
            "from_cache": report.from_cache,
            "requests_issued": report.requests_issued,
            "failed": report.failed,
        }))
        .write(&out)
}

pub fn analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let manifest = ManifestBuilder::new("analyze").input(&args.input);
    let (corpus, follows) = load_corpus_dir(&args.input)?;
    let report = build_trees(&corpus);
    if !report.broken_cycles.is_empty() {
        eprintln!(
            "warning: broke {} reply cycles: {:?}",
            report.broken_cycles.len(),
            report.broken_cycles
        );
    }
    for conflict in &report.parent_conflicts {
        eprintln!(
            "warning: {} names conflicting parents (url {} vs local id {}); using the URL",
            conflict.child, conflict.by_url, conflict.by_local_id
        );
    }
    let stats = characterize(&report.trees, &corpus);
    std::fs::create_dir_all(&args.out)?;
    stats.write_reports(&args.out)?;

    let all_views = views(&corpus, &report.trees);
    let frag = fragmentation(&all_views, &report.trees);
    let mut frag_csv = std::fs::File::create(args.out.join("fragmentation.csv"))?;
    frag.write_csv(&mut frag_csv)?;
    let mut grouped = std::fs::File::create(args.out.join("fragmentation_by_participants.csv"))?;
    frag.write_grouped_csv(&mut grouped)?;
    let mut classes = std::fs::File::create(args.out.join("size_classes.csv"))?;
    write_size_classes_csv(&corpus, &mut classes)?;

    println!(
        "{} conversations over {} toots; {} fragmented (conversation, instance) pairs of {}",
        report.trees.len(),
        corpus.len(),
        frag.fragmented_count(),
        frag.rows.len()
    );
    manifest
        .config(json!({
            "conversations": report.trees.len(),
            "dangling_parents": report.dangling,
            "broken_cycles": report.broken_cycles.len(),
            "follows_edges": follows.len(),
        }))
        .write(&args.out)
}

fn model_config(seed: u64, flags: &ModelFlags) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(Locality::GLOBAL_GLOBAL, FederationStrategy::None);
    cfg.walk = WalkConfig {
        gamma: flags.gamma,
        length: flags.walk_length,
        discount: flags.discount,
        rng_seed: derive_seed(seed, &[b"walk"]),
    };
    cfg.train = TrainConfig {
        epochs: flags.epochs,
        learning_rate: flags.learning_rate,
        lr_floor: flags.learning_rate / 2.0,
        l2: 1e-6,
        split: flags.split,
        seed: derive_seed(seed, &[b"split"]),
    };
    cfg.threshold = flags.threshold;
    cfg.model_kind = match flags.model_kind.as_str() {
        "aware" => ModelKind::ContextAware,
        "free" => ModelKind::ContextFree,
        other => return Err(data_err(format!("unknown model kind {other:?}"))),
    };
    Ok(cfg)
}

pub fn experiment(args: ExperimentArgs) -> anyhow::Result<()> {
    let manifest = ManifestBuilder::new("experiment").input(&args.input);
    let locality = Locality::parse(&args.locality).ok_or_else(|| {
        data_err(format!(
            "unknown locality {:?} (use g-g|g-l|l-g|l-l)",
            args.locality
        ))
    })?;
    let strategy = match FederationStrategy::parse(&args.strategy) {
        Some(FederationStrategy::TootFederation { .. }) => FederationStrategy::TootFederation {
            min_len: args.model.min_len,
        },
        Some(other) => other,
        None => {
            return Err(data_err(format!(
                "unknown strategy {:?} (use none|full|toot|model)",
                args.strategy
            )))
        }
    };
    let mut cfg = model_config(args.seed, &args.model)?;
    cfg.locality = locality;
    cfg.strategy = strategy;

    let (corpus, follows) = load_corpus_dir(&args.input)?;
    let ctx = PipelineContext::new(&corpus, &follows, cfg.dim);
    let pipeline = Pipeline::new(&ctx, &cfg);
    let outcome = pipeline.run(locality, strategy);
    let report = fedimod_core::evalkit::report(evaluate(&outcome, cfg.threshold));
    write_report(&report, &args.out)?;

    for row in &report.rows {
        println!(
            "{} {} {}: mse={:.4} accuracy={:.4} macro_f1={:.4} ({} instances)",
            row.scope.strategy,
            row.scope.locality,
            row.scope.size_class,
            row.mse,
            row.accuracy,
            row.macro_f1,
            row.n_instances
        );
    }
    manifest
        .seeds(json!({
            "seed": args.seed,
            "walk_seed": cfg.walk.rng_seed,
            "split_seed": cfg.train.seed,
        }))
        .config(json!({
            "locality": locality.name(),
            "strategy": strategy.name(),
            "walk": { "gamma": cfg.walk.gamma, "length": cfg.walk.length, "discount": cfg.walk.discount },
            "train": cfg.train,
            "model_kind": cfg.model_kind.to_string(),
            "threshold": cfg.threshold,
            "donors": outcome.donors,
        }))
        .write(&args.out)
}

pub fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let manifest = ManifestBuilder::new("compare").input(&args.input);
    let cfg = model_config(args.seed, &args.model)?;
    let (corpus, follows) = load_corpus_dir(&args.input)?;
    let ctx = PipelineContext::new(&corpus, &follows, cfg.dim);
    let report = run_compare(&ctx, &cfg);
    write_report(&report, &args.out)?;
    println!(
        "compare grid complete: {} class rows across {} instance evaluations",
        report.rows.len(),
        report.instances.len()
    );
    // Donor selection is strategy-independent: one assignment per instance.
    let donors: Vec<serde_json::Value> = corpus
        .instances()
        .iter()
        .map(|inst| json!({ "target": inst, "donor": ctx.select_donor(inst) }))
        .collect();
    manifest
        .seeds(json!({
            "seed": args.seed,
            "walk_seed": cfg.walk.rng_seed,
            "split_seed": cfg.train.seed,
        }))
        .config(json!({
            "walk": { "gamma": cfg.walk.gamma, "length": cfg.walk.length, "discount": cfg.walk.discount },
            "train": cfg.train,
            "model_kind": cfg.model_kind.to_string(),
            "threshold": cfg.threshold,
            "donors": donors,
        }))
        .write(&args.out)
}

fn write_report(
    report: &fedimod_core::evalkit::ExperimentReport,
    out: &Path,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let mut csv = std::fs::File::create(out.join("report.csv"))?;
    report.write_csv(&mut csv)?;
    let mut instances = std::fs::File::create(out.join("instances.csv"))?;
    report.write_instances_csv(&mut instances)?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    Ok(())
}

fn copy_if_present(from_dir: &Path, to_dir: &Path, name: &str) -> std::io::Result<()> {
    let src = from_dir.join(name);
    if src.exists() {
        std::fs::copy(src, to_dir.join(name))?;
    }
    Ok(())
}

/// Loads `corpus.jsonl` (+ optional `follows.csv`) from a corpus directory.
/// A fully unfederated corpus with a follow graph present is propagated
/// through the delivery rule first.
pub fn load_corpus_dir(dir: &Path) -> anyhow::Result<(Corpus, FollowGraph)> {
    let corpus_path = dir.join("corpus.jsonl");
    if !corpus_path.exists() {
        return Err(data_err(format!(
            "{} does not contain corpus.jsonl",
            dir.display()
        )));
    }
    let report = ingest_corpus(&corpus_path, Format::Jsonl)?;
    for key in &report.unknown_keys {
        eprintln!("warning: ignoring unknown key {key:?}");
    }
    let follows_path = dir.join("follows.csv");
    let follows = if follows_path.exists() {
        FollowGraph::load_csv(&follows_path)?
    } else {
        FollowGraph::new()
    };
    let unfederated = report.corpus.toots().all(|t| t.federated_to.is_empty());
    let corpus = if unfederated && !follows.is_empty() {
        propagate(&report.corpus, &follows)?
    } else {
        report.corpus
    };
    Ok((corpus, follows))
}
