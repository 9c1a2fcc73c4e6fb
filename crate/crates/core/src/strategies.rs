//! Orchestrates the global/local training-inference matrix and the
//! federation strategies across instances.
//!
//! Training scope: Global trains one model over every conversation with
//! global-tree walks; Local trains one model per instance over its fragments
//! only. Inference scope picks the walk context the same way. Strategies
//! reshape an instance's *training* inputs (or its initial parameters), never
//! its test set: a toot's train/test membership is a pure function of the
//! split seed and its URL, so every cell and strategy is evaluated on
//! identical test sets.
//!
//! - FullConversations completes an instance's fragments to the full global
//!   trees of the conversations it participates in, for training and for
//!   local inference context.
//! - TootFederation adds all toots of the donor's conversations longer than
//!   `min_len` to the instance's training view only.
//! - ModelSharing adopts the donor's trained parameters and fine-tunes them
//!   on local training data.
//!
//! The donor is the largest instance (by total toot count) among those the
//! target federates with — sharing a follow edge or at least one delivered
//! toot, in either direction — ties broken by lexicographically smallest id.

use crate::convgraph::{build_trees, ConversationTree, Topology};
use crate::corpus::{is_train_split, Corpus, InstanceId, SizeClass, TootUrl};
use crate::evalkit::{self, ExperimentReport, InstanceRow, Scope as EvalScope};
use crate::fednet::{views, FollowGraph, InstanceView};
use crate::model::{
    fine_tune, hash_text, weighted_sum, FeaturePair, FeatureVector, ModelKind, ScorerParams,
    TrainConfig, TrainSample,
};
use crate::walks::{rng_for, walk, ContextSample, WalkConfig, INFERENCE_EPOCH};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

/// Where training or inference context comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Global,
    Local,
}

/// One cell of the training × inference matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locality {
    pub training: Scope,
    pub inference: Scope,
}

impl Locality {
    pub const GLOBAL_GLOBAL: Locality = Locality {
        training: Scope::Global,
        inference: Scope::Global,
    };
    pub const GLOBAL_LOCAL: Locality = Locality {
        training: Scope::Global,
        inference: Scope::Local,
    };
    pub const LOCAL_GLOBAL: Locality = Locality {
        training: Scope::Local,
        inference: Scope::Global,
    };
    pub const LOCAL_LOCAL: Locality = Locality {
        training: Scope::Local,
        inference: Scope::Local,
    };

    pub const ALL: [Locality; 4] = [
        Locality::GLOBAL_GLOBAL,
        Locality::GLOBAL_LOCAL,
        Locality::LOCAL_GLOBAL,
        Locality::LOCAL_LOCAL,
    ];

    /// Accepts the CLI forms `g-g`, `g-l`, `l-g`, `l-l`.
    pub fn parse(s: &str) -> Option<Locality> {
        match s {
            "g-g" => Some(Locality::GLOBAL_GLOBAL),
            "g-l" => Some(Locality::GLOBAL_LOCAL),
            "l-g" => Some(Locality::LOCAL_GLOBAL),
            "l-l" => Some(Locality::LOCAL_LOCAL),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.training, self.inference) {
            (Scope::Global, Scope::Global) => "global-global",
            (Scope::Global, Scope::Local) => "global-local",
            (Scope::Local, Scope::Global) => "local-global",
            (Scope::Local, Scope::Local) => "local-local",
        }
    }
}

impl std::fmt::Display for Locality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The federation strategies an instance can apply to improve local
/// moderation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FederationStrategy {
    None,
    FullConversations,
    TootFederation { min_len: usize },
    ModelSharing,
}

impl FederationStrategy {
    pub const DEFAULT_MIN_LEN: usize = 5;

    /// Accepts the CLI forms `none`, `full`, `toot`, `model`.
    pub fn parse(s: &str) -> Option<FederationStrategy> {
        match s {
            "none" => Some(FederationStrategy::None),
            "full" => Some(FederationStrategy::FullConversations),
            "toot" => Some(FederationStrategy::TootFederation {
                min_len: Self::DEFAULT_MIN_LEN,
            }),
            "model" => Some(FederationStrategy::ModelSharing),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FederationStrategy::None => "none",
            FederationStrategy::FullConversations => "full_conversations",
            FederationStrategy::TootFederation { .. } => "toot_federation",
            FederationStrategy::ModelSharing => "model_sharing",
        }
    }

    pub fn all_default() -> [FederationStrategy; 4] {
        [
            FederationStrategy::None,
            FederationStrategy::FullConversations,
            FederationStrategy::TootFederation {
                min_len: Self::DEFAULT_MIN_LEN,
            },
            FederationStrategy::ModelSharing,
        ]
    }
}

impl std::fmt::Display for FederationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full configuration of one experiment cell.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub locality: Locality,
    pub strategy: FederationStrategy,
    pub walk: WalkConfig,
    pub train: TrainConfig,
    pub model_kind: ModelKind,
    pub dim: u32,
    pub threshold: f64,
}

impl ExperimentConfig {
    pub fn new(locality: Locality, strategy: FederationStrategy) -> Self {
        ExperimentConfig {
            locality,
            strategy,
            walk: WalkConfig::default(),
            train: TrainConfig::default(),
            model_kind: ModelKind::ContextAware,
            dim: crate::model::DEFAULT_DIM,
            threshold: crate::corpus::DEFAULT_THRESHOLD,
        }
    }
}

/// Precomputed shared state: trees, views, hashed text features, partner
/// sets. Built once per corpus and shared read-only by every cell.
pub struct PipelineContext<'a> {
    pub corpus: &'a Corpus,
    pub follows: &'a FollowGraph,
    pub trees: Vec<ConversationTree>,
    pub views: Vec<InstanceView>,
    dim: u32,
    text_features: HashMap<TootUrl, FeatureVector>,
    tree_of: HashMap<TootUrl, usize>,
    partners: BTreeMap<InstanceId, BTreeSet<InstanceId>>,
    counts: BTreeMap<InstanceId, u64>,
    size_classes: BTreeMap<InstanceId, SizeClass>,
}

impl<'a> PipelineContext<'a> {
    pub fn new(corpus: &'a Corpus, follows: &'a FollowGraph, dim: u32) -> Self {
        let trees = build_trees(corpus).trees;
        let views = views(corpus, &trees);
        let mut tree_of = HashMap::with_capacity(corpus.len());
        for (idx, tree) in trees.iter().enumerate() {
            for node in tree.nodes() {
                tree_of.insert(node.clone(), idx);
            }
        }
        let text_features: HashMap<TootUrl, FeatureVector> = corpus
            .toots()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|t| (t.url.clone(), hash_text(&t.text, dim)))
            .collect();

        let mut partners: BTreeMap<InstanceId, BTreeSet<InstanceId>> = corpus
            .instances()
            .iter()
            .map(|i| (i.clone(), BTreeSet::new()))
            .collect();
        for (follower, followed) in follows.edges() {
            if partners.contains_key(follower) && partners.contains_key(followed) {
                partners.get_mut(follower).unwrap().insert(followed.clone());
                partners.get_mut(followed).unwrap().insert(follower.clone());
            }
        }
        for toot in corpus.toots() {
            for target in &toot.federated_to {
                partners
                    .get_mut(&toot.origin)
                    .unwrap()
                    .insert(target.clone());
                partners
                    .get_mut(target)
                    .unwrap()
                    .insert(toot.origin.clone());
            }
        }
        for (inst, set) in partners.iter_mut() {
            set.remove(inst);
        }

        PipelineContext {
            counts: corpus.instance_toot_counts(),
            size_classes: corpus.size_classes(),
            corpus,
            follows,
            trees,
            views,
            dim,
            text_features,
            tree_of,
            partners,
        }
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn view_of(&self, instance: &InstanceId) -> &InstanceView {
        self.views
            .iter()
            .find(|v| &v.instance == instance)
            .expect("view exists for every corpus instance")
    }

    pub fn tree_containing(&self, url: &TootUrl) -> &ConversationTree {
        &self.trees[self.tree_of[url]]
    }

    fn features_of(&self, url: &TootUrl) -> &FeatureVector {
        &self.text_features[url]
    }

    /// Instances the target federates with: a shared follow edge or at least
    /// one delivered toot, in either direction.
    pub fn federation_partners(&self, target: &InstanceId) -> &BTreeSet<InstanceId> {
        static EMPTY: std::sync::OnceLock<BTreeSet<InstanceId>> = std::sync::OnceLock::new();
        self.partners
            .get(target)
            .unwrap_or_else(|| EMPTY.get_or_init(BTreeSet::new))
    }

    /// Largest federating partner by total toot count, ties broken by
    /// lexicographically smallest id. Pure in (corpus, follows).
    pub fn select_donor(&self, target: &InstanceId) -> Option<InstanceId> {
        self.federation_partners(target)
            .iter()
            .max_by(|a, b| {
                self.counts[*a].cmp(&self.counts[*b]).then_with(|| b.cmp(a)) // lexicographically smaller wins ties
            })
            .cloned()
    }
}

/// Donor resolution for one instance under a donor-based strategy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DonorAssignment {
    pub target: InstanceId,
    /// `None` when the instance has no federating partner; the strategy
    /// degenerates to `None` for it.
    pub donor: Option<InstanceId>,
}

/// Per-instance result of one experiment cell.
#[derive(Clone, Debug)]
pub struct InstanceOutcome {
    pub instance: InstanceId,
    pub size_class: SizeClass,
    /// The parameters the instance used for inference in this cell.
    pub params: ScorerParams,
    /// (url, predicted score, truth score) over the instance's test toots.
    pub predictions: Vec<(TootUrl, f64, f64)>,
    pub n_train: usize,
    /// True when the instance had no training data and kept zero params.
    pub zero_model: bool,
}

/// Result of one experiment cell across all instances.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub locality: Locality,
    pub strategy: FederationStrategy,
    pub per_instance: Vec<InstanceOutcome>,
    pub donors: Vec<DonorAssignment>,
}

#[derive(Clone)]
struct LocalModel {
    params: ScorerParams,
    n_train: usize,
    zero_model: bool,
}

/// Runs experiment cells over one corpus with fixed walk/train/model
/// settings, memoizing the global model and per-strategy local models so a
/// full compare grid trains each model family once.
pub struct Pipeline<'a> {
    ctx: &'a PipelineContext<'a>,
    walk: WalkConfig,
    train: TrainConfig,
    model_kind: ModelKind,
    threshold: f64,
    global_model: std::sync::OnceLock<ScorerParams>,
    local_models: Mutex<HashMap<String, std::sync::Arc<BTreeMap<InstanceId, LocalModel>>>>,
}

impl<'a> Pipeline<'a> {
    pub fn new(ctx: &'a PipelineContext<'a>, cfg: &ExperimentConfig) -> Self {
        assert_eq!(
            cfg.dim,
            ctx.dim(),
            "context built for a different dimension"
        );
        Pipeline {
            ctx,
            walk: cfg.walk,
            train: cfg.train,
            model_kind: cfg.model_kind,
            threshold: cfg.threshold,
            global_model: std::sync::OnceLock::new(),
            local_models: Mutex::new(HashMap::new()),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Runs one (locality, strategy) cell.
    pub fn run(&self, locality: Locality, strategy: FederationStrategy) -> ExperimentOutcome {
        let donors = self.donor_assignments(strategy);

        let models: BTreeMap<InstanceId, LocalModel> = match locality.training {
            Scope::Global => {
                let global = self.global_model().clone();
                match strategy {
                    FederationStrategy::ModelSharing => {
                        // Donor models all coincide with the global model;
                        // each instance fine-tunes it on local training data.
                        self.instances()
                            .par_iter()
                            .map(|inst| {
                                let model = self.tune_locally(inst, &global);
                                (inst.clone(), model)
                            })
                            .collect()
                    }
                    // Data-augmentation strategies cannot add anything to a
                    // training pool that is already global.
                    _ => self
                        .instances()
                        .iter()
                        .map(|inst| {
                            (
                                inst.clone(),
                                LocalModel {
                                    params: global.clone(),
                                    n_train: 0,
                                    zero_model: false,
                                },
                            )
                        })
                        .collect(),
                }
            }
            Scope::Local => self.local_models(strategy).as_ref().clone(),
        };

        let per_instance: Vec<InstanceOutcome> = self
            .instances()
            .par_iter()
            .map(|inst| {
                let model = &models[inst];
                let predictions = self.infer(inst, &model.params, locality, strategy);
                InstanceOutcome {
                    instance: inst.clone(),
                    size_class: self.ctx.size_classes[inst],
                    params: model.params.clone(),
                    predictions,
                    n_train: model.n_train,
                    zero_model: model.zero_model,
                }
            })
            .collect();

        ExperimentOutcome {
            locality,
            strategy,
            per_instance,
            donors,
        }
    }

    /// `run` restricted to the locality matrix (strategy `None`).
    pub fn run_locality(&self, locality: Locality) -> ExperimentOutcome {
        self.run(locality, FederationStrategy::None)
    }

    fn instances(&self) -> Vec<InstanceId> {
        self.ctx.corpus.instances().iter().cloned().collect()
    }

    fn donor_assignments(&self, strategy: FederationStrategy) -> Vec<DonorAssignment> {
        match strategy {
            FederationStrategy::TootFederation { .. } | FederationStrategy::ModelSharing => self
                .instances()
                .iter()
                .map(|inst| DonorAssignment {
                    target: inst.clone(),
                    donor: self.ctx.select_donor(inst),
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    fn global_model(&self) -> &ScorerParams {
        self.global_model.get_or_init(|| {
            let topos: BTreeMap<&TootUrl, &Topology> = self
                .ctx
                .trees
                .iter()
                .map(|t| (t.root(), t.topology()))
                .collect();
            let starts = self.train_starts(self.ctx.corpus.urls());
            self.train_over_walks(&topos, &starts, None)
                .params
                .with_provenance(format!("global:{}", self.model_kind))
        })
    }

    fn local_models(
        &self,
        strategy: FederationStrategy,
    ) -> std::sync::Arc<BTreeMap<InstanceId, LocalModel>> {
        let key = match strategy {
            FederationStrategy::TootFederation { min_len } => format!("toot:{min_len}"),
            other => other.name().to_string(),
        };
        if let Some(hit) = self.local_models.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let computed = std::sync::Arc::new(self.compute_local_models(strategy));
        self.local_models
            .lock()
            .unwrap()
            .insert(key, computed.clone());
        computed
    }

    fn compute_local_models(
        &self,
        strategy: FederationStrategy,
    ) -> BTreeMap<InstanceId, LocalModel> {
        match strategy {
            FederationStrategy::ModelSharing => {
                let baseline = self.local_models(FederationStrategy::None);
                self.instances()
                    .par_iter()
                    .map(|inst| {
                        let donor = self.ctx.select_donor(inst);
                        let model = match donor {
                            Some(donor_id) => {
                                let donor_params = &baseline[&donor_id].params;
                                self.tune_locally(inst, donor_params)
                            }
                            // No federating partner: the strategy degenerates
                            // to plain local training.
                            None => baseline[inst].clone(),
                        };
                        (inst.clone(), model)
                    })
                    .collect()
            }
            _ => self
                .instances()
                .par_iter()
                .map(|inst| {
                    let topos = self.training_topos(inst, strategy);
                    let starts = self.train_starts(topos.values().flat_map(|t| t.nodes().iter()));
                    let model = self.train_over_walks(&topos, &starts, None);
                    (inst.clone(), model)
                })
                .collect(),
        }
    }

    /// Fine-tunes donor parameters on the instance's plain local training
    /// view.
    fn tune_locally(&self, inst: &InstanceId, donor_params: &ScorerParams) -> LocalModel {
        let topos = self.training_topos(inst, FederationStrategy::None);
        let starts = self.train_starts(topos.values().flat_map(|t| t.nodes().iter()));
        self.train_over_walks(&topos, &starts, Some(donor_params))
    }

    /// The training topologies of one instance under a strategy, keyed by
    /// conversation root. Donated or completed conversations replace the
    /// corresponding fragment so node sets stay disjoint.
    fn training_topos(
        &self,
        inst: &InstanceId,
        strategy: FederationStrategy,
    ) -> BTreeMap<&TootUrl, &Topology> {
        let view = self.ctx.view_of(inst);
        let mut topos: BTreeMap<&TootUrl, &Topology> = BTreeMap::new();
        match strategy {
            FederationStrategy::None | FederationStrategy::ModelSharing => {
                for (root, fragment) in &view.fragments {
                    topos.insert(root, fragment);
                }
            }
            FederationStrategy::FullConversations => {
                // Fragments completed to the full global trees.
                for root in view.fragments.keys() {
                    let tree = self.ctx.tree_containing(root);
                    topos.insert(tree.root(), tree.topology());
                }
            }
            FederationStrategy::TootFederation { min_len } => {
                for (root, fragment) in &view.fragments {
                    topos.insert(root, fragment);
                }
                if let Some(donor) = self.ctx.select_donor(inst) {
                    let donor_view = self.ctx.view_of(&donor);
                    for root in donor_view.fragments.keys() {
                        let tree = self.ctx.tree_containing(root);
                        if tree.len() > min_len {
                            topos.insert(tree.root(), tree.topology());
                        }
                    }
                }
            }
        }
        topos
    }

    /// Scored train-split toots among the given candidates, in canonical
    /// order.
    fn train_starts<'u>(&self, candidates: impl Iterator<Item = &'u TootUrl>) -> Vec<TootUrl> {
        let mut starts: Vec<TootUrl> = candidates
            .filter(|url| {
                is_train_split(self.train.seed, url, self.train.split)
                    && self
                        .ctx
                        .corpus
                        .get(url)
                        .is_some_and(|t| t.toxicity.is_some())
            })
            .cloned()
            .collect();
        starts.sort();
        starts.dedup();
        starts
    }

    /// SGD over walk-sampled context: each epoch re-walks every training
    /// start (the per-epoch RNG derivation keeps this deterministic), then
    /// takes one pass in canonical order at that epoch's learning rate.
    fn train_over_walks(
        &self,
        topos: &BTreeMap<&TootUrl, &Topology>,
        starts: &[TootUrl],
        init: Option<&ScorerParams>,
    ) -> LocalModel {
        let mut params = match init {
            Some(p) => p.clone(),
            None => ScorerParams::zeros(self.model_kind, self.ctx.dim(), "trained"),
        };
        if starts.is_empty() {
            return LocalModel {
                params,
                n_train: 0,
                zero_model: init.is_none(),
            };
        }
        let start_topo: HashMap<&TootUrl, &Topology> = topos
            .values()
            .flat_map(|t| t.nodes().iter().map(move |n| (n, *t)))
            .collect();
        for epoch in 0..self.train.epochs {
            let samples: Vec<TrainSample> = starts
                .iter()
                .map(|url| {
                    let features = self.features_for(url, start_topo[url], epoch as u64);
                    let target = self.ctx.corpus.get(url).unwrap().toxicity.unwrap();
                    (features, target)
                })
                .collect();
            let epoch_cfg = TrainConfig {
                epochs: 1,
                learning_rate: self.train.lr_at(epoch),
                lr_floor: 0.0,
                ..self.train
            };
            params = fine_tune(&params, &samples, &epoch_cfg)
                .expect("non-empty samples with matching dims");
        }
        LocalModel {
            params,
            n_train: starts.len(),
            zero_model: false,
        }
    }

    /// FeaturePair for one toot: hashed self text plus, for context-aware
    /// models, the discount-weighted context gathered by a walk at `epoch`.
    fn features_for(&self, url: &TootUrl, topo: &Topology, epoch: u64) -> FeaturePair {
        let self_block = self.ctx.features_of(url).clone();
        if self.model_kind == ModelKind::ContextFree {
            return FeaturePair::context_free(self_block);
        }
        let mut rng = rng_for(self.walk.rng_seed, url, epoch);
        let sample: ContextSample =
            walk(topo, url, &self.walk, &mut rng).expect("start lies in its topology");
        let parts: Vec<(&FeatureVector, f64)> = sample
            .context_entries()
            .map(|(ctx_url, w)| (self.ctx.features_of(ctx_url), w))
            .collect();
        FeaturePair {
            self_block,
            context_block: weighted_sum(&parts, self.ctx.dim()),
        }
    }

    /// Test predictions for one instance. The test set is always the scored
    /// test-split toots visible at the instance; only the walk context
    /// changes with locality and strategy.
    fn infer(
        &self,
        inst: &InstanceId,
        params: &ScorerParams,
        locality: Locality,
        strategy: FederationStrategy,
    ) -> Vec<(TootUrl, f64, f64)> {
        let view = self.ctx.view_of(inst);
        let mut test_urls: Vec<&TootUrl> = view
            .visible
            .iter()
            .filter(|url| {
                !is_train_split(self.train.seed, url, self.train.split)
                    && self
                        .ctx
                        .corpus
                        .get(url)
                        .is_some_and(|t| t.toxicity.is_some())
            })
            .collect();
        test_urls.sort();
        test_urls
            .into_iter()
            .map(|url| {
                let topo = match (locality.inference, strategy) {
                    (Scope::Global, _) | (Scope::Local, FederationStrategy::FullConversations) => {
                        self.ctx.tree_containing(url).topology()
                    }
                    (Scope::Local, _) => {
                        let root = self.ctx.tree_containing(url).root();
                        &view.fragments[root]
                    }
                };
                let features = self.features_for(url, topo, INFERENCE_EPOCH);
                let predicted = params.predict(&features).expect("dims match");
                let truth = self.ctx.corpus.get(url).unwrap().toxicity.unwrap();
                (url.clone(), predicted, truth)
            })
            .collect()
    }
}

/// Turns an experiment outcome into per-instance metric rows.
pub fn evaluate(outcome: &ExperimentOutcome, threshold: f64) -> Vec<InstanceRow> {
    outcome
        .per_instance
        .iter()
        .filter(|o| !o.predictions.is_empty())
        .map(|o| {
            let pairs: Vec<(f64, f64)> = o
                .predictions
                .iter()
                .map(|(_, pred, truth)| (*pred, *truth))
                .collect();
            InstanceRow {
                instance: o.instance.as_str().to_string(),
                scope: EvalScope {
                    strategy: outcome.strategy.name().to_string(),
                    locality: outcome.locality.name().to_string(),
                    size_class: o.size_class,
                },
                metrics: evalkit::metrics(&pairs, threshold).expect("non-empty predictions"),
            }
        })
        .collect()
}

/// Runs the full locality × strategy grid and returns one consolidated
/// report (strategies × 4 localities × size classes).
pub fn run_compare(ctx: &PipelineContext<'_>, base: &ExperimentConfig) -> ExperimentReport {
    let pipeline = Pipeline::new(ctx, base);
    let mut all_rows: Vec<InstanceRow> = Vec::new();
    for strategy in FederationStrategy::all_default() {
        for locality in Locality::ALL {
            let outcome = pipeline.run(locality, strategy);
            all_rows.extend(evaluate(&outcome, base.threshold));
        }
    }
    evalkit::report(all_rows)
}
