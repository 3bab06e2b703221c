//! Concept-factored evidential predictor. Three heads carve the shared
//! raster/state embedding into agent-kinematics, map, and social-context
//! latents; each latent gets its own per-class flow bank, and the three
//! Dirichlet posteriors are averaged into the final one. Self-supervised
//! decoders reconstruct each concept's slice of the input so the latents
//! cannot collapse to whatever the classification loss finds convenient.

use std::collections::BTreeMap;

use diffcore::nn::{he_std, xavier_std, Linear};
use diffcore::Tensor;

use crate::anchors::AnchorSet;
use crate::evidential::{elbo_graph, posterior_graph, total_loss, LossWeights};
use crate::flows::FlowBank;
use crate::rng::{normal, stream};

use super::{
    get_bank, get_wb, put_bank, put_wb, Backbone, Batch, BudgetSlot, Model, ModelError,
    ScenePrediction, SpatialDecoder, AGENT_TARGET_DIM, CONCEPT_HIDDEN, FLOW_LAYERS, LATENT_DIM,
    X_DIM,
};

struct ConceptBranch {
    l1: Linear,
    l2: Linear,
    bank: FlowBank,
}

impl ConceptBranch {
    fn new(classes: usize, src: &mut dyn FnMut() -> f64) -> ConceptBranch {
        ConceptBranch {
            l1: Linear::new(X_DIM, CONCEPT_HIDDEN, xavier_std(X_DIM), src),
            l2: Linear::new(CONCEPT_HIDDEN, LATENT_DIM, xavier_std(CONCEPT_HIDDEN), src),
            bank: FlowBank::new(classes, LATENT_DIM, FLOW_LAYERS, src),
        }
    }

    /// x: [B, X_DIM] → (pre-latent h [B, CONCEPT_HIDDEN], latent z [B, LATENT_DIM]).
    fn forward(&self, x: &Tensor) -> (Tensor, Tensor) {
        let h = self.l1.forward(x).tanh();
        let z = self.l2.forward(&h);
        (h, z)
    }

    fn params(&self) -> Vec<Tensor> {
        let mut p = self.l1.params();
        p.extend(self.l2.params());
        p.extend(self.bank.params());
        p
    }

    fn export(&self, prefix: &str, m: &mut BTreeMap<String, Vec<f64>>) {
        put_wb(m, &format!("{prefix}.l1"), &self.l1.w, &self.l1.b);
        put_wb(m, &format!("{prefix}.l2"), &self.l2.w, &self.l2.b);
        put_bank(m, &format!("{prefix}.bank"), &self.bank);
    }

    fn import(&self, prefix: &str, m: &BTreeMap<String, Vec<f64>>) -> Result<(), ModelError> {
        get_wb(m, &format!("{prefix}.l1"), &self.l1.w, &self.l1.b)?;
        get_wb(m, &format!("{prefix}.l2"), &self.l2.w, &self.l2.b)?;
        get_bank(m, &format!("{prefix}.bank"), &self.bank)
    }
}

struct Forward {
    alpha: Tensor,
    /// Per-concept posteriors `[agent, map, social]`, pre-averaging.
    branch: [Tensor; 3],
    h_map: Tensor,
    h_sc: Tensor,
    z_agent: Tensor,
}

pub struct Isap {
    backbone: Backbone,
    agent: ConceptBranch,
    map: ConceptBranch,
    social: ConceptBranch,
    dec_agent1: Linear,
    dec_agent2: Linear,
    dec_map: SpatialDecoder,
    dec_sc: SpatialDecoder,
    weights: LossWeights,
    budget: BudgetSlot,
    anchors: AnchorSet,
}

impl Isap {
    pub fn new(anchors: AnchorSet, init_seed: u64) -> Isap {
        let mut rng = stream(init_seed, "init/isap");
        let mut src = move || normal(&mut rng);
        let c = anchors.classes;
        Isap {
            backbone: Backbone::new(&mut src),
            agent: ConceptBranch::new(c, &mut src),
            map: ConceptBranch::new(c, &mut src),
            social: ConceptBranch::new(c, &mut src),
            dec_agent1: Linear::new(LATENT_DIM, 64, he_std(LATENT_DIM), &mut src),
            dec_agent2: Linear::new(64, AGENT_TARGET_DIM, he_std(64), &mut src),
            dec_map: SpatialDecoder::new(CONCEPT_HIDDEN, &mut src),
            dec_sc: SpatialDecoder::new(CONCEPT_HIDDEN, &mut src),
            weights: LossWeights::default(),
            budget: BudgetSlot::empty(),
            anchors,
        }
    }

    fn forward(&self, batch: &Batch, training: bool) -> Forward {
        let x = self.backbone.forward(&batch.img, &batch.state);
        let (_h_a, z_a) = self.agent.forward(&x);
        let (h_m, z_m) = self.map.forward(&x);
        let (h_s, z_s) = self.social.forward(&x);
        let lb = self.budget.log_tensor();
        let a_a = posterior_graph(&self.agent.bank.bank_log_densities(&z_a, training), lb);
        let a_m = posterior_graph(&self.map.bank.bank_log_densities(&z_m, training), lb);
        let a_s = posterior_graph(&self.social.bank.bank_log_densities(&z_s, training), lb);
        // Branch posteriors enter the prediction as their elementwise mean,
        // so a single confident concept cannot drown out the other two.
        let alpha = a_a.add(&a_m).add(&a_s).affine(1.0 / 3.0, 0.0);
        Forward {
            alpha,
            branch: [a_a, a_m, a_s],
            h_map: h_m,
            h_sc: h_s,
            z_agent: z_a,
        }
    }

    fn elbo(&self, fwd: &Forward, labels: &[usize]) -> Tensor {
        elbo_graph(&fwd.alpha, labels, self.weights.kl_scale).mean()
    }
}

fn sse(pred: &Tensor, target: &Tensor) -> Tensor {
    pred.sub(target).square().sum_axis(1, false).mean()
}

impl Model for Isap {
    fn kind(&self) -> &'static str {
        "isap"
    }

    fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    fn params(&self) -> Vec<Tensor> {
        let mut p = self.backbone.params();
        p.extend(self.agent.params());
        p.extend(self.map.params());
        p.extend(self.social.params());
        p.extend(self.dec_agent1.params());
        p.extend(self.dec_agent2.params());
        p.extend(self.dec_map.params());
        p.extend(self.dec_sc.params());
        p
    }

    fn wants_recon_targets(&self) -> bool {
        true
    }

    fn loss(&self, batch: &Batch, training: bool) -> Tensor {
        let fwd = self.forward(batch, training);
        let elbo = self.elbo(&fwd, &batch.labels);
        let agent_pred = self
            .dec_agent2
            .forward(&self.dec_agent1.forward(&fwd.z_agent).relu());
        let rec_a = sse(
            &agent_pred,
            batch.agent_target.as_ref().expect("agent target"),
        );
        let rec_m = sse(
            &self.dec_map.forward(&fwd.h_map),
            batch.map_target.as_ref().expect("map target"),
        );
        let rec_s = sse(
            &self.dec_sc.forward(&fwd.h_sc),
            batch.sc_target.as_ref().expect("social-context target"),
        );
        total_loss(&elbo, &rec_a, &rec_m, &rec_s, &self.weights)
    }

    /// Epoch selection tracks the classification ELBO alone: the
    /// reconstruction terms are scaffolding, and their scale (a 64×64 sum
    /// of squares) would otherwise dominate the criterion.
    fn val_criterion(&self, batch: &Batch) -> f64 {
        let fwd = self.forward(batch, false);
        self.elbo(&fwd, &batch.labels).item()
    }

    fn predict_batch(&self, batch: &Batch) -> Vec<ScenePrediction> {
        let fwd = self.forward(batch, false);
        let d = fwd.alpha.data();
        let by_branch: Vec<Vec<f64>> = fwd.branch.iter().map(|t| t.to_vec()).collect();
        let c = self.anchors.classes;
        (0..batch.labels.len())
            .map(|i| {
                let a = d[i * c..(i + 1) * c].to_vec();
                let a0: f64 = a.iter().sum();
                let row_a0 = |b: &Vec<f64>| b[i * c..(i + 1) * c].iter().sum::<f64>();
                ScenePrediction {
                    probs: a.iter().map(|v| v / a0).collect(),
                    alpha: Some(a),
                    epistemic: Some(a0),
                    branch_alpha0: Some([
                        row_a0(&by_branch[0]),
                        row_a0(&by_branch[1]),
                        row_a0(&by_branch[2]),
                    ]),
                }
            })
            .collect()
    }

    fn set_loss_weights(&mut self, weights: LossWeights) {
        self.weights = weights;
    }

    fn set_budget(&mut self, counts: &[u64]) {
        self.budget.set_from_counts(counts);
    }

    fn export_state(&self) -> BTreeMap<String, Vec<f64>> {
        let mut m = BTreeMap::new();
        for (i, c) in self.backbone.convs.iter().enumerate() {
            put_wb(&mut m, &format!("backbone.conv{i}"), &c.w, &c.b);
        }
        put_wb(&mut m, "backbone.fc", &self.backbone.fc.w, &self.backbone.fc.b);
        self.agent.export("agent", &mut m);
        self.map.export("map", &mut m);
        self.social.export("social", &mut m);
        put_wb(&mut m, "dec.agent1", &self.dec_agent1.w, &self.dec_agent1.b);
        put_wb(&mut m, "dec.agent2", &self.dec_agent2.w, &self.dec_agent2.b);
        for (name, dec) in [("dec.map", &self.dec_map), ("dec.sc", &self.dec_sc)] {
            put_wb(&mut m, &format!("{name}.fc"), &dec.fc.w, &dec.fc.b);
            for (i, d) in dec.deconvs.iter().enumerate() {
                put_wb(&mut m, &format!("{name}.deconv{i}"), &d.w, &d.b);
            }
        }
        self.budget.export(&mut m);
        m
    }

    fn import_state(&mut self, state: &BTreeMap<String, Vec<f64>>) -> Result<(), ModelError> {
        for (i, c) in self.backbone.convs.iter().enumerate() {
            get_wb(state, &format!("backbone.conv{i}"), &c.w, &c.b)?;
        }
        get_wb(state, "backbone.fc", &self.backbone.fc.w, &self.backbone.fc.b)?;
        self.agent.import("agent", state)?;
        self.map.import("map", state)?;
        self.social.import("social", state)?;
        get_wb(state, "dec.agent1", &self.dec_agent1.w, &self.dec_agent1.b)?;
        get_wb(state, "dec.agent2", &self.dec_agent2.w, &self.dec_agent2.b)?;
        for (name, dec) in [("dec.map", &self.dec_map), ("dec.sc", &self.dec_sc)] {
            get_wb(state, &format!("{name}.fc"), &dec.fc.w, &dec.fc.b)?;
            for (i, d) in dec.deconvs.iter().enumerate() {
                get_wb(state, &format!("{name}.deconv{i}"), &d.w, &d.b)?;
            }
        }
        self.budget.import(state, self.anchors.classes)
    }
}
