//! Trajectory-classification models over a shared anchor set.
//!
//! Every model kind lives behind the [`Model`] trait and is registered by
//! name in [`MODEL_REGISTRY`], so callers select one at runtime
//! (`build_model("isap", …)`) and train/evaluate/persist it uniformly.
//! Kinds:
//!
//! * `covernet` — softmax classifier over anchors, cross-entropy loss.
//! * `postcovernet` — same trunk, but the class scores come from a Dirichlet
//!   posterior whose evidence is a normalizing-flow density in latent space.
//! * `isap` — three concept latents (agent kinematics, map, social context),
//!   one flow bank per concept, aggregated Dirichlet posterior, plus
//!   self-supervised reconstruction decoders that keep each latent tied to
//!   its input slice.
//! * `ensemble` — independently initialized softmax classifiers whose
//!   disagreement provides the epistemic signal.

mod backbone;
mod covernet;
mod isap;
mod postcovernet;

pub use backbone::{Backbone, SpatialDecoder};
pub use covernet::{combine_members, CoverNet, Ensemble};
pub use isap::Isap;
pub use postcovernet::PostCoverNet;

use std::collections::BTreeMap;
use std::path::Path;

use diffcore::nn::BatchNorm1d;
use diffcore::{backward, Adam, Tensor};
use thiserror::Error;

use crate::anchors::AnchorSet;
use crate::evidential::LossWeights;
use crate::flows::FlowBank;
use crate::persist::{read_container, write_container, Container, Payload, PersistError};
use crate::rng::stream;
use crate::scenegen::{rasterize, Scene, PAST_LEN};

pub const RASTER_SIZE: usize = 64;
pub const FEAT_DIM: usize = 256;
pub const STATE_DIM: usize = 3;
/// Backbone output width: pooled raster features plus the kinematic state.
pub const X_DIM: usize = FEAT_DIM + STATE_DIM;
pub const LATENT_DIM: usize = 4;
pub const FLOW_LAYERS: usize = 8;
/// Hidden width of the single-head baselines.
pub const BASELINE_HIDDEN: usize = 768;
/// Hidden width of each concept head.
pub const CONCEPT_HIDDEN: usize = 256;
pub const ENSEMBLE_SIZE: usize = 5;
/// Flattened past trail plus state, the agent-decoder target.
pub const AGENT_TARGET_DIM: usize = 2 * PAST_LEN + STATE_DIM;
const EVAL_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model kind {0:?}")]
    UnknownKind(String),
    #[error("checkpoint is missing state entry {0:?}")]
    MissingState(String),
    #[error("bad checkpoint state: {0}")]
    BadState(String),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged at epoch {epoch}: {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

/// One forward-ready minibatch. Reconstruction targets are built only for
/// models that ask for them.
pub struct Batch {
    /// [B, RASTER_SIZE, RASTER_SIZE, 3]
    pub img: Tensor,
    /// [B, STATE_DIM]
    pub state: Tensor,
    /// Anchor class of each ground-truth future.
    pub labels: Vec<usize>,
    /// [B, AGENT_TARGET_DIM]: flattened past waypoints then state.
    pub agent_target: Option<Tensor>,
    /// [B, RASTER_SIZE²]: drivable-area raster channel.
    pub map_target: Option<Tensor>,
    /// [B, RASTER_SIZE²]: neighbor-trail raster channel.
    pub sc_target: Option<Tensor>,
}

pub fn make_batch(scenes: &[&Scene], anchors: &AnchorSet, recon_targets: bool) -> Batch {
    let b = scenes.len();
    assert!(b > 0, "empty batch");
    let hw = RASTER_SIZE * RASTER_SIZE;
    let mut img = Vec::with_capacity(b * hw * 3);
    let mut state = Vec::with_capacity(b * STATE_DIM);
    let mut labels = Vec::with_capacity(b);
    let mut agent = recon_targets.then(|| Vec::with_capacity(b * AGENT_TARGET_DIM));
    let mut map = recon_targets.then(|| Vec::with_capacity(b * hw));
    let mut sc = recon_targets.then(|| Vec::with_capacity(b * hw));

    for scene in scenes {
        let raster = rasterize(scene, RASTER_SIZE);
        img.extend(raster.data.iter().map(|&v| v as f64));
        state.extend(scene.state.iter().map(|&v| v as f64));
        labels.push(anchors.label(&scene.future));
        if let Some(a) = agent.as_mut() {
            for wp in &scene.past {
                a.push(wp[0] as f64);
                a.push(wp[1] as f64);
            }
            a.extend(scene.state.iter().map(|&v| v as f64));
        }
        if let (Some(m), Some(s)) = (map.as_mut(), sc.as_mut()) {
            for px in 0..hw {
                m.push(raster.data[px * 3] as f64);
                s.push(raster.data[px * 3 + 1] as f64);
            }
        }
    }

    Batch {
        img: Tensor::new(&[b, RASTER_SIZE, RASTER_SIZE, 3], img),
        state: Tensor::new(&[b, STATE_DIM], state),
        labels,
        agent_target: agent.map(|a| Tensor::new(&[b, AGENT_TARGET_DIM], a)),
        map_target: map.map(|m| Tensor::new(&[b, hw], m)),
        sc_target: sc.map(|s| Tensor::new(&[b, hw], s)),
    }
}

/// Per-scene model output, already reduced to plain numbers.
#[derive(Clone, Debug)]
pub struct ScenePrediction {
    /// Mean class probabilities (sums to 1).
    pub probs: Vec<f64>,
    /// Dirichlet concentration, when the model produces one.
    pub alpha: Option<Vec<f64>>,
    /// Scalar epistemic-confidence score; higher means "more like the
    /// training data". Evidence total for evidential models, inverse
    /// disagreement for ensembles, absent for plain softmax.
    pub epistemic: Option<f64>,
    /// Per-concept evidence totals `[agent, map, social]`, attributing the
    /// aggregate uncertainty to its sources. Interpretable model only.
    pub branch_alpha0: Option<[f64; 3]>,
}

impl ScenePrediction {
    pub fn top1(&self) -> usize {
        crate::metrics::top_k(&self.probs, 1)[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Keep the weights as they stand after the last epoch.
    FinalEpoch,
    /// Restore the epoch with the lowest validation criterion.
    BestVal,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 5e-4,
            seed: 0,
            selection: Selection::BestVal,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainStats {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub selected_epoch: usize,
}

pub trait Model {
    fn kind(&self) -> &'static str;
    fn anchors(&self) -> &AnchorSet;
    fn params(&self) -> Vec<Tensor>;

    /// Scalar training objective for one batch. `training` switches batch
    /// norm between batch and running statistics.
    fn loss(&self, batch: &Batch, training: bool) -> Tensor;

    fn predict_batch(&self, batch: &Batch) -> Vec<ScenePrediction>;

    /// Install the per-class certainty budget from train-split label counts.
    /// No-op for models without an evidence scale.
    fn set_budget(&mut self, counts: &[u64]) {
        let _ = counts;
    }

    /// Override the loss-term weights before training. No-op for models
    /// whose objective has a single term.
    fn set_loss_weights(&mut self, weights: LossWeights) {
        let _ = weights;
    }

    /// Whether batches must carry reconstruction targets.
    fn wants_recon_targets(&self) -> bool {
        false
    }

    /// Validation criterion used for epoch selection; defaults to the
    /// eval-mode loss. Models whose training loss mixes auxiliary terms may
    /// override to select on the classification part alone.
    fn val_criterion(&self, batch: &Batch) -> f64 {
        self.loss(batch, false).item()
    }

    /// Complete numeric state by name: trainable tensors, batch-norm running
    /// statistics, and the certainty budget when set.
    fn export_state(&self) -> BTreeMap<String, Vec<f64>>;

    fn import_state(&mut self, state: &BTreeMap<String, Vec<f64>>) -> Result<(), ModelError>;

    fn train(
        &mut self,
        train: &[Scene],
        val: &[Scene],
        cfg: &TrainConfig,
    ) -> Result<TrainStats, TrainError> {
        fit(self, train, val, cfg)
    }

    /// Batched inference over an arbitrary scene list (eval mode).
    fn predict(&self, scenes: &[Scene]) -> Vec<ScenePrediction> {
        predict_all(self, scenes)
    }
}

fn predict_all<M: Model + ?Sized>(model: &M, scenes: &[Scene]) -> Vec<ScenePrediction> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(EVAL_BATCH) {
        let refs: Vec<&Scene> = chunk.iter().collect();
        let batch = make_batch(&refs, model.anchors(), false);
        out.extend(model.predict_batch(&batch));
    }
    out
}

pub fn label_histogram(scenes: &[Scene], anchors: &AnchorSet) -> Vec<u64> {
    let mut counts = vec![0u64; anchors.classes];
    for s in scenes {
        counts[anchors.label(&s.future)] += 1;
    }
    counts
}

/// Minibatch training with per-epoch reshuffling and optional best-epoch
/// restoration. OOD scenes are refused outright: the whole point of the
/// evaluation is that the model never saw them.
pub fn fit<M: Model + ?Sized>(
    model: &mut M,
    train: &[Scene],
    val: &[Scene],
    cfg: &TrainConfig,
) -> Result<TrainStats, TrainError> {
    assert!(!train.is_empty(), "empty training set");
    assert!(
        train.iter().chain(val.iter()).all(|s| !s.split.is_ood()),
        "OOD scenes must never reach training or validation"
    );
    let counts = label_histogram(train, model.anchors());
    model.set_budget(&counts);
    let params = model.params();
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut stats = TrainStats::default();
    let mut best: Option<(f64, usize, BTreeMap<String, Vec<f64>>)> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = stream(cfg.seed, &format!("fit/epoch/{epoch}"));
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }

        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                // Batch statistics are undefined on a single row.
                continue;
            }
            let refs: Vec<&Scene> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = make_batch(&refs, model.anchors(), model.wants_recon_targets());
            let loss = model.loss(&batch, true);
            let lv = loss.item();
            if !lv.is_finite() {
                return Err(TrainError::Diverged { epoch, loss: lv });
            }
            let grads = backward(&loss);
            opt.step(&params, &grads);
            loss_sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            validation_criterion(model, val)
        };
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, loss: val_loss });
        }
        log::info!(
            "{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}",
            model.kind()
        );
        stats.train_loss.push(train_loss);
        stats.val_loss.push(val_loss);

        if cfg.selection == Selection::BestVal
            && best.as_ref().map_or(true, |(b, _, _)| val_loss < *b)
        {
            best = Some((val_loss, epoch, model.export_state()));
        }
    }

    stats.selected_epoch = cfg.epochs.saturating_sub(1);
    if let Some((_, epoch, state)) = best {
        model
            .import_state(&state)
            .expect("snapshot of own state must re-import");
        stats.selected_epoch = epoch;
        log::info!("{}: restored epoch {epoch}", model.kind());
    }
    Ok(stats)
}

fn validation_criterion<M: Model + ?Sized>(model: &M, scenes: &[Scene]) -> f64 {
    let (mut sum, mut seen) = (0.0f64, 0usize);
    for chunk in scenes.chunks(EVAL_BATCH) {
        let refs: Vec<&Scene> = chunk.iter().collect();
        let batch = make_batch(&refs, model.anchors(), model.wants_recon_targets());
        sum += model.val_criterion(&batch) * chunk.len() as f64;
        seen += chunk.len();
    }
    sum / seen as f64
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

pub struct ModelSpec {
    pub name: &'static str,
    pub build: fn(AnchorSet, u64) -> Box<dyn Model>,
}

pub static MODEL_REGISTRY: &[ModelSpec] = &[
    ModelSpec {
        name: "covernet",
        build: |a, s| Box::new(CoverNet::new(a, s)),
    },
    ModelSpec {
        name: "postcovernet",
        build: |a, s| Box::new(PostCoverNet::new(a, s)),
    },
    ModelSpec {
        name: "isap",
        build: |a, s| Box::new(Isap::new(a, s)),
    },
    ModelSpec {
        name: "ensemble",
        build: |a, s| Box::new(Ensemble::new(a, s)),
    },
];

pub fn model_names() -> Vec<&'static str> {
    MODEL_REGISTRY.iter().map(|m| m.name).collect()
}

pub fn build_model(
    name: &str,
    anchors: AnchorSet,
    init_seed: u64,
) -> Result<Box<dyn Model>, ModelError> {
    MODEL_REGISTRY
        .iter()
        .find(|m| m.name == name)
        .map(|m| (m.build)(anchors, init_seed))
        .ok_or_else(|| ModelError::UnknownKind(name.to_string()))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const ANCHOR_STATE_KEY: &str = "anchors.data";

/// Write the model (weights, running stats, budget, anchors) as one f64
/// container. Extra metadata is echoed into the manifest.
pub fn save_model(
    base: &Path,
    model: &dyn Model,
    extra_meta: &BTreeMap<String, String>,
    force: bool,
) -> Result<(), PersistError> {
    let mut state = model.export_state();
    let anchors = model.anchors();
    state.insert(
        ANCHOR_STATE_KEY.to_string(),
        anchors.data.iter().map(|&v| v as f64).collect(),
    );
    let mut payload = Vec::new();
    let mut meta = BTreeMap::new();
    for (name, values) in &state {
        meta.insert(format!("state.{name}"), values.len().to_string());
        payload.extend_from_slice(values);
    }
    let mut c = Container::new(Payload::F64(payload));
    for (k, v) in meta {
        c.set(&k, &v);
    }
    c.set("kind", model.kind());
    c.set("classes", &anchors.classes.to_string());
    for (k, v) in extra_meta {
        c.set(k, v);
    }
    write_container(base, &c, force)
}

/// Rebuild a model from a checkpoint written by [`save_model`]. The result
/// is bit-exact: construction seeds only the initializer, which the imported
/// state then overwrites completely.
pub fn load_model(base: &Path) -> Result<Box<dyn Model>, ModelError> {
    let c = read_container(base)?;
    let kind = c.require("kind", base)?.to_string();
    let classes: usize = c
        .require("classes", base)?
        .parse()
        .map_err(|e| ModelError::BadState(format!("classes: {e}")))?;

    // Slice the flat payload back into named entries; BTreeMap order on
    // both sides makes the layout self-describing.
    let prefix = "state.";
    let mut state = BTreeMap::new();
    let payload = c
        .payload
        .as_f64()
        .ok_or_else(|| ModelError::BadState("checkpoint payload must be f64".into()))?;
    let mut at = 0usize;
    for (k, v) in &c.meta {
        if let Some(name) = k.strip_prefix(prefix) {
            let len: usize = v
                .parse()
                .map_err(|e| ModelError::BadState(format!("{k}: {e}")))?;
            if at + len > payload.len() {
                return Err(ModelError::BadState(format!(
                    "state overruns payload at {name}"
                )));
            }
            state.insert(name.to_string(), payload[at..at + len].to_vec());
            at += len;
        }
    }
    if at != payload.len() {
        return Err(ModelError::BadState(format!(
            "payload has {} values beyond declared state",
            payload.len() - at
        )));
    }

    let anchor_data = state
        .remove(ANCHOR_STATE_KEY)
        .ok_or_else(|| ModelError::MissingState(ANCHOR_STATE_KEY.into()))?;
    let anchors = AnchorSet {
        data: anchor_data.iter().map(|&v| v as f32).collect(),
        classes,
    };
    let mut model = build_model(&kind, anchors, 0)?;
    model.import_state(&state)?;
    Ok(model)
}

/// Holder for the per-class certainty budget of the evidential models,
/// together with its constant log tensor used in the graph.
pub(crate) struct BudgetSlot {
    pub budget: Option<crate::evidential::CertaintyBudget>,
    log_tensor: Option<Tensor>,
}

impl BudgetSlot {
    pub fn empty() -> BudgetSlot {
        BudgetSlot {
            budget: None,
            log_tensor: None,
        }
    }

    pub fn install(&mut self, n_c: Vec<f64>) {
        let budget = crate::evidential::CertaintyBudget { n_c };
        let log_n = budget.log_n();
        self.log_tensor = Some(Tensor::new(&[log_n.len()], log_n));
        self.budget = Some(budget);
    }

    pub fn set_from_counts(&mut self, counts: &[u64]) {
        let total = crate::evidential::default_budget_total();
        self.install(crate::evidential::certainty_budget(counts, total).n_c);
    }

    pub fn log_tensor(&self) -> &Tensor {
        self.log_tensor
            .as_ref()
            .expect("certainty budget unset: train first or import a checkpoint")
    }

    pub fn export(&self, map: &mut BTreeMap<String, Vec<f64>>) {
        if let Some(b) = &self.budget {
            map.insert("budget.n_c".to_string(), b.n_c.clone());
        }
    }

    pub fn import(&mut self, map: &BTreeMap<String, Vec<f64>>, classes: usize) -> Result<(), ModelError> {
        if let Some(v) = map.get("budget.n_c") {
            if v.len() != classes {
                return Err(ModelError::BadState("budget.n_c: wrong length".into()));
            }
            self.install(v.clone());
        }
        Ok(())
    }
}

// --- named-state helpers shared by the model impls ---

pub(crate) fn put_t(map: &mut BTreeMap<String, Vec<f64>>, name: &str, t: &Tensor) {
    map.insert(name.to_string(), t.to_vec());
}

pub(crate) fn get_t(
    map: &BTreeMap<String, Vec<f64>>,
    name: &str,
    t: &Tensor,
) -> Result<(), ModelError> {
    let v = map
        .get(name)
        .ok_or_else(|| ModelError::MissingState(name.to_string()))?;
    if v.len() != t.numel() {
        return Err(ModelError::BadState(format!(
            "{name}: expected {} values, found {}",
            t.numel(),
            v.len()
        )));
    }
    t.set_data(v);
    Ok(())
}

pub(crate) fn put_wb(map: &mut BTreeMap<String, Vec<f64>>, prefix: &str, w: &Tensor, b: &Tensor) {
    put_t(map, &format!("{prefix}.w"), w);
    put_t(map, &format!("{prefix}.b"), b);
}

pub(crate) fn get_wb(
    map: &BTreeMap<String, Vec<f64>>,
    prefix: &str,
    w: &Tensor,
    b: &Tensor,
) -> Result<(), ModelError> {
    get_t(map, &format!("{prefix}.w"), w)?;
    get_t(map, &format!("{prefix}.b"), b)
}

pub(crate) fn put_bn(map: &mut BTreeMap<String, Vec<f64>>, prefix: &str, bn: &BatchNorm1d) {
    put_t(map, &format!("{prefix}.gamma"), &bn.gamma);
    put_t(map, &format!("{prefix}.beta"), &bn.beta);
    map.insert(
        format!("{prefix}.running_mean"),
        bn.running_mean.borrow().clone(),
    );
    map.insert(
        format!("{prefix}.running_var"),
        bn.running_var.borrow().clone(),
    );
}

pub(crate) fn get_bn(
    map: &BTreeMap<String, Vec<f64>>,
    prefix: &str,
    bn: &BatchNorm1d,
) -> Result<(), ModelError> {
    get_t(map, &format!("{prefix}.gamma"), &bn.gamma)?;
    get_t(map, &format!("{prefix}.beta"), &bn.beta)?;
    for (key, cell) in [
        ("running_mean", &bn.running_mean),
        ("running_var", &bn.running_var),
    ] {
        let name = format!("{prefix}.{key}");
        let v = map
            .get(&name)
            .ok_or_else(|| ModelError::MissingState(name.clone()))?;
        if v.len() != bn.features() {
            return Err(ModelError::BadState(format!("{name}: wrong length")));
        }
        *cell.borrow_mut() = v.clone();
    }
    Ok(())
}

pub(crate) fn put_bank(map: &mut BTreeMap<String, Vec<f64>>, prefix: &str, bank: &FlowBank) {
    put_bn(map, &format!("{prefix}.bn"), &bank.bn);
    for (i, layer) in bank.layers.iter().enumerate() {
        put_t(map, &format!("{prefix}.layer{i}.z0"), &layer.z0);
        put_t(map, &format!("{prefix}.layer{i}.alpha_raw"), &layer.alpha_raw);
        put_t(map, &format!("{prefix}.layer{i}.beta_raw"), &layer.beta_raw);
    }
}

pub(crate) fn get_bank(
    map: &BTreeMap<String, Vec<f64>>,
    prefix: &str,
    bank: &FlowBank,
) -> Result<(), ModelError> {
    get_bn(map, &format!("{prefix}.bn"), &bank.bn)?;
    for (i, layer) in bank.layers.iter().enumerate() {
        get_t(map, &format!("{prefix}.layer{i}.z0"), &layer.z0)?;
        get_t(map, &format!("{prefix}.layer{i}.alpha_raw"), &layer.alpha_raw)?;
        get_t(map, &format!("{prefix}.layer{i}.beta_raw"), &layer.beta_raw)?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::anchors::fit_anchors;
    use crate::scenegen::{generate_scene, MapKind, NoiseConfig, SceneRecipe, Split};

    /// Small deterministic scene pool with distinct speeds/maps so labels
    /// spread over several anchor classes.
    pub fn tiny_world(n: usize, classes: usize) -> (Vec<Scene>, AnchorSet) {
        let kinds = [
            MapKind::Straight,
            MapKind::Intersection,
            MapKind::Multilane,
            MapKind::Roundabout,
        ];
        let mut scenes: Vec<Scene> = (0..n)
            .map(|i| {
                let recipe = SceneRecipe::fixed(
                    2.0 + 1.7 * (i % 7) as f64,
                    kinds[i % kinds.len()],
                    crate::scenegen::DriveSide::Left,
                );
                let mut s = generate_scene(1000 + i as u64, &recipe, &NoiseConfig::none());
                s.split = Split::Train;
                s
            })
            .collect();
        let futures: Vec<Vec<f64>> = scenes.iter().map(crate::anchors::flatten_future).collect();
        let anchors = fit_anchors(&futures, classes, 42);
        // Re-tag a couple of held-out scenes as validation.
        let n_val = (n / 4).max(1);
        for s in scenes.iter_mut().rev().take(n_val) {
            s.split = Split::ValId;
        }
        (scenes, anchors)
    }

    pub fn split_train_val(scenes: &[Scene]) -> (Vec<Scene>, Vec<Scene>) {
        let train: Vec<Scene> = scenes
            .iter()
            .filter(|s| s.split == Split::Train)
            .cloned()
            .collect();
        let val: Vec<Scene> = scenes
            .iter()
            .filter(|s| s.split == Split::ValId)
            .cloned()
            .collect();
        (train, val)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::scenegen::Split;

    #[test]
    fn registry_builds_every_kind() {
        assert_eq!(
            model_names(),
            vec!["covernet", "postcovernet", "isap", "ensemble"]
        );
        let (_, anchors) = tiny_world(8, 4);
        for spec in MODEL_REGISTRY {
            let m = (spec.build)(anchors.clone(), 3);
            assert_eq!(m.kind(), spec.name);
            assert!(!m.params().is_empty());
        }
        assert!(build_model("nope", anchors, 0).is_err());
    }

    #[test]
    fn batch_assembles_labels_and_targets() {
        let (scenes, anchors) = tiny_world(4, 4);
        let refs: Vec<&Scene> = scenes.iter().collect();
        let batch = make_batch(&refs, &anchors, true);
        assert_eq!(batch.img.shape(), &[4, RASTER_SIZE, RASTER_SIZE, 3]);
        assert_eq!(batch.state.shape(), &[4, STATE_DIM]);
        assert_eq!(batch.labels.len(), 4);
        for (i, s) in scenes.iter().enumerate() {
            assert_eq!(batch.labels[i], anchors.label(&s.future));
        }
        let agent = batch.agent_target.as_ref().unwrap();
        assert_eq!(agent.shape(), &[4, AGENT_TARGET_DIM]);
        // Row 0 starts with the oldest past waypoint and ends with the state.
        let a = agent.to_vec();
        assert_eq!(a[0], scenes[0].past[0][0] as f64);
        assert_eq!(a[AGENT_TARGET_DIM - 1], scenes[0].state[2] as f64);
        // Map target is raster channel 0 of the same image.
        let m = batch.map_target.as_ref().unwrap().to_vec();
        let img = batch.img.to_vec();
        assert_eq!(m[100], img[100 * 3]);
        let sc = batch.sc_target.as_ref().unwrap().to_vec();
        assert_eq!(sc[100], img[100 * 3 + 1]);
        // Eval batches skip target assembly.
        let lean = make_batch(&refs, &anchors, false);
        assert!(lean.agent_target.is_none());
    }

    #[test]
    #[should_panic(expected = "OOD scenes must never reach training")]
    fn fit_refuses_ood_scenes() {
        let (mut scenes, anchors) = tiny_world(4, 4);
        scenes[1].split = Split::TestOod;
        let mut m = build_model("covernet", anchors, 0).unwrap();
        let _ = fit(m.as_mut(), &scenes, &[], &TrainConfig::default());
    }

    /// The evidential comparison is only apples-to-apples while the factored
    /// model costs about as much as the single-latent one: each concept head
    /// must be smaller than the lone head it splits, and the totals (with
    /// decoders) must stay within 20% of each other.
    #[test]
    fn concept_heads_stay_within_single_head_budget() {
        let anchors = AnchorSet {
            data: vec![0.0; 64 * crate::anchors::ANCHOR_DIM],
            classes: 64,
        };
        let isap = build_model("isap", anchors.clone(), 0).unwrap();
        let pcn = build_model("postcovernet", anchors, 0).unwrap();
        let numel = |m: &dyn Model| -> usize { m.params().iter().map(|t| t.data().len()).sum() };
        let (pi, pp) = (numel(isap.as_ref()), numel(pcn.as_ref()));
        let gap = (pi as f64 - pp as f64).abs() / pp as f64;
        assert!(gap < 0.20, "parameter totals diverge: {pi} vs {pp} ({gap:.3})");

        let section = |m: &dyn Model, prefixes: &[&str]| -> usize {
            m.export_state()
                .iter()
                .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
                .map(|(_, v)| v.len())
                .sum()
        };
        let single = section(pcn.as_ref(), &["h1.", "lat.", "bank."]);
        for branch in ["agent.", "map.", "social."] {
            let b = section(isap.as_ref(), &[branch]);
            assert!(b < single, "{branch} head ({b}) outgrew the single head ({single})");
        }
    }
}
