//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p fedimod-core --test acceptance -- --nocapture`
//! to see the per-criterion lines. Criteria 6–8 share one seed-7 synthetic
//! corpus and experiment grid, built once. The determinism criterion for the
//! `compare` command lives in the CLI crate's acceptance test.

mod common;

use common::{oracle_components, random_corpus, tree_components};
use fedimod_core::convgraph::{build_trees, Topology};
use fedimod_core::corpus::{InstanceId, SizeClass, TootUrl};
use fedimod_core::evalkit::{metrics, report, ClassRow};
use fedimod_core::fednet::{fragmentation, propagate, views, FollowGraph};
use fedimod_core::model::{
    featurize, fine_tune, mse_gradient, mse_loss, params_from_parts, train, FeaturePair,
    FeatureVector, ModelKind, ScorerParams, TrainConfig, TrainSample,
};
use fedimod_core::strategies::{
    evaluate, ExperimentConfig, FederationStrategy, Locality, Pipeline, PipelineContext,
};
use fedimod_core::synthgen::{generate, GenConfig, Generated};
use fedimod_core::walks::{rng_for, walk, WalkConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn check(criterion: &str, ok: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Reconstruction oracle.

#[test]
fn criterion_01_reconstruction_oracle() {
    let start = Instant::now();
    for seed in 0..500u64 {
        let corpus = random_corpus(seed, 200, 0.1);
        assert_eq!(
            tree_components(&corpus),
            oracle_components(&corpus),
            "partition mismatch at seed {seed}"
        );
    }
    let elapsed = start.elapsed();
    check(
        "1 (reconstruction oracle)",
        elapsed < Duration::from_secs(5),
        &format!("500 corpora matched the union-find oracle in {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Three-instance federation replay.

#[test]
fn criterion_02_three_instance_replay() {
    let corpus = {
        use fedimod_core::corpus::{Corpus, Toot};
        let toot = |url: &str, origin: &str, parent: Option<&str>, ts: i64| Toot {
            url: TootUrl::new(url),
            origin: InstanceId::new(origin),
            local_id: None,
            parent_url: parent.map(TootUrl::new),
            parent_local_id: None,
            author: "u".into(),
            text: "hi".into(),
            timestamp: ts,
            reblog_count: 0,
            toxicity: None,
            federated_to: Default::default(),
        };
        Corpus::from_toots([
            toot("a", "A", None, 1),
            toot("b", "B", Some("a"), 2),
            toot("c", "C", Some("b"), 3),
        ])
        .unwrap()
    };
    let follows = FollowGraph::from_edges([
        (InstanceId::new("B"), InstanceId::new("A")),
        (InstanceId::new("C"), InstanceId::new("B")),
    ])
    .unwrap();
    let federated = propagate(&corpus, &follows).unwrap();
    let trees = build_trees(&federated).trees;
    let all_views = views(&federated, &trees);
    let visible = |inst: &str| -> Vec<&str> {
        all_views
            .iter()
            .find(|v| v.instance == InstanceId::new(inst))
            .unwrap()
            .visible
            .iter()
            .map(|u| u.as_str())
            .collect()
    };
    let sets_ok =
        visible("a") == ["a", "b"] && visible("b") == ["a", "b", "c"] && visible("c") == ["b", "c"];

    let frag = fragmentation(&all_views, &trees);
    let fraction = |inst: &str| {
        frag.rows
            .iter()
            .find(|r| r.instance == InstanceId::new(inst))
            .unwrap()
            .visible_fraction
    };
    let fracs_ok = (fraction("a") - 66.67).abs() <= 0.01
        && (fraction("b") - 100.0).abs() <= 0.01
        && (fraction("c") - 66.67).abs() <= 0.01;
    check(
        "2 (three-instance replay)",
        sets_ok && fracs_ok,
        &format!(
            "A={:?} B={:?} C={:?}, fractions {:.2}/{:.2}/{:.2}",
            visible("a"),
            visible("b"),
            visible("c"),
            fraction("a"),
            fraction("b"),
            fraction("c")
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Walk statistics.

#[test]
fn criterion_03_walk_statistics() {
    let chain: Vec<TootUrl> = (0..6).map(|i| TootUrl::new(format!("n{i}"))).collect();
    let topo = Topology::from_edges(
        chain.iter().cloned(),
        chain.windows(2).map(|w| (w[1].clone(), w[0].clone())),
    );
    let gamma = 0.75;
    let cfg = WalkConfig {
        gamma,
        length: 1,
        discount: 0.75,
        rng_seed: 0,
    };
    let mut total_steps = 0u64;
    let mut worst: f64 = 0.0;
    for node_idx in 1..5 {
        // Interior nodes have a parent and one child: deg = 2.
        let url = &chain[node_idx];
        let parent = &chain[node_idx - 1];
        let expected = gamma + (1.0 - gamma) / 2.0;
        let runs = 30_000u64;
        let mut hits = 0u64;
        for seed in 0..runs {
            let mut rng = rng_for(seed, url, 0);
            let sample = walk(&topo, url, &cfg, &mut rng).unwrap();
            total_steps += (sample.visited.len() - 1) as u64;
            if sample.visited.len() > 1 && &sample.visited[1].0 == parent {
                hits += 1;
            }
        }
        let freq = hits as f64 / runs as f64;
        worst = worst.max((freq - expected).abs());
    }

    // gamma = 1 walks are exactly the ancestor path from every node.
    let pure = WalkConfig {
        gamma: 1.0,
        length: 8,
        discount: 0.75,
        rng_seed: 3,
    };
    let mut ancestor_ok = true;
    for (idx, url) in chain.iter().enumerate() {
        let mut rng = rng_for(9, url, 0);
        let sample = walk(&topo, url, &pure, &mut rng).unwrap();
        let expected_path: Vec<&TootUrl> = (0..=idx).rev().map(|i| &chain[i]).collect();
        let actual: Vec<&TootUrl> = sample.visited.iter().map(|(u, _)| u).collect();
        ancestor_ok &= actual == expected_path;
    }
    check(
        "3 (walk statistics)",
        total_steps >= 100_000 && worst <= 0.02 && ancestor_ok,
        &format!(
            "{total_steps} steps, worst deviation {worst:.4}, pure ancestor path {}",
            if ancestor_ok { "exact" } else { "broken" }
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Gradient check.

#[test]
fn criterion_04_gradient_check() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(40);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let dim = 5 + (case % 3) as u32;
        let n = 2 + case % 5;
        let samples: Vec<TrainSample> = (0..n)
            .map(|_| {
                let dense = |rng: &mut rand_chacha::ChaCha12Rng| {
                    FeatureVector::from_entries(
                        dim,
                        (0..dim).map(|i| (i, rng.random_range(-1.0..1.0))).collect(),
                    )
                };
                (
                    FeaturePair {
                        self_block: dense(&mut rng),
                        context_block: dense(&mut rng),
                    },
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let params = params_from_parts(
            ModelKind::ContextAware,
            dim,
            (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
            (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
            rng.random_range(-0.5..0.5),
        );
        let l2 = 1e-5;
        let (g_self, g_ctx, g_bias) = mse_gradient(&params, &samples, l2);
        let h = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let perturb = |f: &dyn Fn(&mut ScorerParams, f64)| -> f64 {
            let mut plus = params.clone();
            f(&mut plus, h);
            let mut minus = params.clone();
            f(&mut minus, -h);
            (mse_loss(&plus, &samples, l2) - mse_loss(&minus, &samples, l2)) / (2.0 * h)
        };
        for i in 0..dim as usize {
            analytic.push(g_self[i]);
            numeric.push(perturb(&|p, d| {
                let mut w = params_weights(p);
                w.0[i] += d;
                set_weights(p, w);
            }));
            analytic.push(g_ctx[i]);
            numeric.push(perturb(&|p, d| {
                let mut w = params_weights(p);
                w.1[i] += d;
                set_weights(p, w);
            }));
        }
        analytic.push(g_bias);
        numeric.push(perturb(&|p, d| {
            let w = params_weights(p);
            *p = params_from_parts(ModelKind::ContextAware, p.dim(), w.0, w.1, w.2 + d);
        }));
        let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: f64 = numeric
            .iter()
            .zip(analytic.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    check(
        "4 (gradient check)",
        worst < 1e-4,
        &format!("worst relative error over 20 cases: {worst:.3e}"),
    );
}

// Round-trips parameters through the serialized form to read and rewrite the
// weight blocks (the public surface has no weight accessors).
fn params_weights(p: &ScorerParams) -> (Vec<f64>, Vec<f64>, f64) {
    let mut buf = Vec::new();
    p.save(&mut buf).unwrap();
    let dim = p.dim() as usize;
    let mut offset = 4 + 4 + 1 + 4;
    let read = |buf: &[u8], at: usize| f64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
    let mut self_w = Vec::with_capacity(dim);
    for _ in 0..dim {
        self_w.push(read(&buf, offset));
        offset += 8;
    }
    let mut ctx_w = Vec::with_capacity(dim);
    for _ in 0..dim {
        ctx_w.push(read(&buf, offset));
        offset += 8;
    }
    (self_w, ctx_w, read(&buf, offset))
}

fn set_weights(p: &mut ScorerParams, (self_w, ctx_w, bias): (Vec<f64>, Vec<f64>, f64)) {
    *p = params_from_parts(p.kind(), p.dim(), self_w, ctx_w, bias);
}

// ---------------------------------------------------------------------------
// 5. Model exchange.

#[test]
fn criterion_05_model_exchange() {
    let dim = 1 << 10;
    let samples: Vec<TrainSample> = vec![
        (featurize("sludge venom bile", &[], dim), 0.9),
        (featurize("petals sunshine meadow", &[], dim), 0.1),
        (
            featurize("gravel venom", &[("sludge bile", 0.75)], dim),
            0.85,
        ),
    ];
    let params = train(
        ModelKind::ContextAware,
        dim,
        &samples,
        &TrainConfig::default(),
    )
    .unwrap();

    let mut buf = Vec::new();
    params.save(&mut buf).unwrap();
    let loaded = ScorerParams::load(&mut buf.as_slice()).unwrap();

    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(55);
    let mut identical = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..8);
        let text: Vec<String> = (0..n)
            .map(|_| format!("w{}", rng.random_range(0..2000)))
            .collect();
        let pair = featurize(&text.join(" "), &[], dim);
        let a = params.predict(&pair).unwrap();
        let b = loaded.predict(&pair).unwrap();
        identical &= a.to_bits() == b.to_bits();
    }

    let mut corrupted = buf.clone();
    let mid = corrupted.len() / 2;
    corrupted[mid] ^= 0x01;
    let checksum_rejected = matches!(
        ScorerParams::load(&mut corrupted.as_slice()),
        Err(fedimod_core::model::FormatError::Checksum { .. })
    );

    let zero_cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let untouched = fine_tune(&params, &samples, &zero_cfg).unwrap();
    let identity = untouched == params;

    check(
        "5 (model exchange)",
        identical && checksum_rejected && identity,
        &format!(
            "1000 round-trip predictions bit-identical: {identical}, corrupt byte rejected: {checksum_rejected}, zero-epoch fine-tune identity: {identity}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 6–8 share the seed-7 corpus and grid.

struct GridFixture {
    toxic_fraction: f64,
    cd_aware_macro_f1: f64,
    cd_free_macro_f1: f64,
    /// (strategy, locality) → class rows.
    rows: BTreeMap<(String, String), Vec<ClassRow>>,
    /// Summed over small instances in local-local / strategy none.
    small_ll_true_positives: u64,
    small_ll_toxic_in_test: u64,
    pipeline_elapsed: Duration,
}

fn class_row<'a>(
    fixture: &'a GridFixture,
    strategy: &str,
    locality: &str,
    class: SizeClass,
) -> &'a ClassRow {
    fixture.rows[&(strategy.to_string(), locality.to_string())]
        .iter()
        .find(|r| r.scope.size_class == class)
        .unwrap_or_else(|| panic!("missing row {strategy}/{locality}/{class}"))
}

fn fixture() -> &'static GridFixture {
    static FIXTURE: OnceLock<GridFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let started = Instant::now();
        let generated: &'static Generated = Box::leak(Box::new(
            generate(&GenConfig {
                seed: 7,
                ..GenConfig::default()
            })
            .unwrap(),
        ));
        let toxic = generated
            .corpus
            .toots()
            .filter(|t| t.toxicity.unwrap() > 0.5)
            .count();
        let toxic_fraction = toxic as f64 / generated.corpus.len() as f64;

        let ctx: &'static PipelineContext<'static> = Box::leak(Box::new(PipelineContext::new(
            &generated.corpus,
            &generated.follows,
            fedimod_core::model::DEFAULT_DIM,
        )));

        let mut base = ExperimentConfig::new(Locality::GLOBAL_GLOBAL, FederationStrategy::None);
        base.walk.rng_seed = 7;
        base.train.seed = 7;

        // Context ablation: global training and inference, metrics restricted
        // to the context-dependent test subset.
        let cd_urls: HashSet<TootUrl> = generated
            .truth
            .iter()
            .filter(|g| g.context_dependent)
            .map(|g| g.url.clone())
            .collect();
        let cd_macro = |kind: ModelKind| -> f64 {
            let mut cfg = base.clone();
            cfg.model_kind = kind;
            let pipeline = Pipeline::new(ctx, &cfg);
            let outcome = pipeline.run(Locality::GLOBAL_GLOBAL, FederationStrategy::None);
            let mut subset = Vec::new();
            let mut seen = HashSet::new();
            for inst in &outcome.per_instance {
                for (url, pred, truth) in &inst.predictions {
                    if cd_urls.contains(url) && seen.insert(url.clone()) {
                        subset.push((*pred, *truth));
                    }
                }
            }
            metrics(&subset, 0.5).unwrap().macro_f1
        };
        let cd_aware_macro_f1 = cd_macro(ModelKind::ContextAware);
        let cd_free_macro_f1 = cd_macro(ModelKind::ContextFree);

        // The grid cells the criteria reference.
        let pipeline = Pipeline::new(ctx, &base);
        let mut rows = BTreeMap::new();
        let mut small_ll_true_positives = 0;
        let mut small_ll_toxic_in_test = 0;
        let cells: Vec<(FederationStrategy, Locality)> = FederationStrategy::all_default()
            .into_iter()
            .map(|s| (s, Locality::LOCAL_LOCAL))
            .chain([(FederationStrategy::None, Locality::GLOBAL_LOCAL)])
            .collect();
        for (strategy, locality) in cells {
            let outcome = pipeline.run(locality, strategy);
            if strategy == FederationStrategy::None && locality == Locality::LOCAL_LOCAL {
                let instance_rows = evaluate(&outcome, 0.5);
                for row in &instance_rows {
                    if row.scope.size_class == SizeClass::Small {
                        small_ll_true_positives += row.metrics.confusion.tp;
                        small_ll_toxic_in_test += row.metrics.n_toxic_test;
                    }
                }
                rows.insert(
                    (strategy.name().to_string(), locality.name().to_string()),
                    report(instance_rows).rows,
                );
            } else {
                rows.insert(
                    (strategy.name().to_string(), locality.name().to_string()),
                    report(evaluate(&outcome, 0.5)).rows,
                );
            }
        }

        GridFixture {
            toxic_fraction,
            cd_aware_macro_f1,
            cd_free_macro_f1,
            rows,
            small_ll_true_positives,
            small_ll_toxic_in_test,
            pipeline_elapsed: started.elapsed(),
        }
    })
}

// ---------------------------------------------------------------------------
// 6. Context benefit.

#[test]
fn criterion_06_context_benefit() {
    let f = fixture();
    let gap = f.cd_aware_macro_f1 - f.cd_free_macro_f1;
    let in_time = f.pipeline_elapsed < Duration::from_secs(300);
    check(
        "6 (context benefit)",
        gap >= 0.15 && in_time,
        &format!(
            "context-dependent subset macro-F1: aware {:.4} vs free {:.4} (gap {:.4}); pipeline {:?} (toxic fraction {:.4})",
            f.cd_aware_macro_f1, f.cd_free_macro_f1, gap, f.pipeline_elapsed, f.toxic_fraction
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Locality matrix.

#[test]
fn criterion_07_locality_matrix() {
    let f = fixture();
    let small_zero = f.small_ll_true_positives == 0 && f.small_ll_toxic_in_test > 0;
    let small_row = class_row(f, "none", "local-local", SizeClass::Small);
    let small_f1_toxic_zero = small_row.f1_toxic == Some(0.0);
    let large_ll = class_row(f, "none", "local-local", SizeClass::Large);
    let large_gl = class_row(f, "none", "global-local", SizeClass::Large);
    check(
        "7 (locality matrix)",
        small_zero && small_f1_toxic_zero && large_ll.macro_f1 >= 0.8 && large_ll.macro_f1 >= large_gl.macro_f1,
        &format!(
            "small local-local: 0 toxic detected of {} in test (toxic F1 {:?}); large local-local macro-F1 {:.4} (>= 0.8), global-local {:.4}",
            f.small_ll_toxic_in_test, small_row.f1_toxic, large_ll.macro_f1, large_gl.macro_f1
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Federation strategies.

#[test]
fn criterion_08_federation_strategies() {
    let f = fixture();
    let small = |strategy: &str| class_row(f, strategy, "local-local", SizeClass::Small).macro_f1;
    let large = |strategy: &str| class_row(f, strategy, "local-local", SizeClass::Large).macro_f1;

    let baseline = small("none");
    let fc = small("full_conversations");
    let tf = small("toot_federation");
    let ms = small("model_sharing");
    let ordering = ms >= tf && tf > fc && fc == baseline;
    let ms_gain = ms - baseline;

    let large_baseline = large("none");
    let large_gain_ok = ["full_conversations", "toot_federation", "model_sharing"]
        .iter()
        .all(|s| large(s) - large_baseline <= 0.05);

    check(
        "8 (federation strategies)",
        ordering && ms_gain >= 0.2 && large_gain_ok,
        &format!(
            "small macro-F1: model {ms:.4} >= toot {tf:.4} > full {fc:.4} = baseline {baseline:.4} (model gain {ms_gain:.4}); large gains: full {:+.4}, toot {:+.4}, model {:+.4}",
            large("full_conversations") - large_baseline,
            large("toot_federation") - large_baseline,
            large("model_sharing") - large_baseline
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. Metrics correctness.

#[test]
fn criterion_09_metrics_correctness() {
    // Truth {toxic, toxic, non_toxic, non_toxic}, predicted all non-toxic.
    let pairs = vec![(0.1, 0.9), (0.2, 0.8), (0.15, 0.1), (0.05, 0.2)];
    let m = metrics(&pairs, 0.5).unwrap();
    let hand_ok = (m.macro_f1 - 1.0 / 3.0).abs() <= 1e-9;

    use rand::seq::SliceRandom;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(90);
    let mut scored: Vec<(f64, f64)> = (0..200)
        .map(|i| ((i % 17) as f64 / 17.0, if i % 3 == 0 { 0.9 } else { 0.1 }))
        .collect();
    let baseline = metrics(&scored, 0.5).unwrap();
    let mut invariant = true;
    for _ in 0..100 {
        scored.shuffle(&mut rng);
        invariant &= metrics(&scored, 0.5).unwrap() == baseline;
    }
    check(
        "9 (metrics correctness)",
        hand_ok && invariant,
        &format!(
            "hand-computed macro-F1 {:.10} vs 1/3; permutation-invariant over 100 shuffles: {invariant}",
            m.macro_f1
        ),
    );
}
