//! Evidential variant of the anchor classifier: one latent, one flow bank,
//! Dirichlet posterior over the anchor classes.

use std::collections::BTreeMap;

use diffcore::nn::{xavier_std, Linear};
use diffcore::Tensor;

use crate::anchors::AnchorSet;
use crate::evidential::{elbo_graph, posterior_graph, LossWeights};
use crate::flows::FlowBank;
use crate::rng::{normal, stream};

use super::{
    get_bank, get_wb, put_bank, put_wb, Backbone, Batch, BudgetSlot, Model, ModelError,
    ScenePrediction, BASELINE_HIDDEN, FLOW_LAYERS, LATENT_DIM, X_DIM,
};

pub struct PostCoverNet {
    backbone: Backbone,
    h1: Linear,
    lat: Linear,
    bank: FlowBank,
    budget: BudgetSlot,
    kl_scale: f64,
    anchors: AnchorSet,
}

impl PostCoverNet {
    pub fn new(anchors: AnchorSet, init_seed: u64) -> PostCoverNet {
        let mut rng = stream(init_seed, "init/postcovernet");
        let mut src = move || normal(&mut rng);
        PostCoverNet {
            backbone: Backbone::new(&mut src),
            h1: Linear::new(X_DIM, BASELINE_HIDDEN, xavier_std(X_DIM), &mut src),
            lat: Linear::new(BASELINE_HIDDEN, LATENT_DIM, xavier_std(BASELINE_HIDDEN), &mut src),
            bank: FlowBank::new(anchors.classes, LATENT_DIM, FLOW_LAYERS, &mut src),
            budget: BudgetSlot::empty(),
            kl_scale: LossWeights::default().kl_scale,
            anchors,
        }
    }

    /// Dirichlet concentrations [B, C].
    fn alpha(&self, batch: &Batch, training: bool) -> Tensor {
        let x = self.backbone.forward(&batch.img, &batch.state);
        let z = self.lat.forward(&self.h1.forward(&x).tanh());
        let log_r = self.bank.bank_log_densities(&z, training);
        posterior_graph(&log_r, self.budget.log_tensor())
    }
}

impl Model for PostCoverNet {
    fn kind(&self) -> &'static str {
        "postcovernet"
    }

    fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    fn params(&self) -> Vec<Tensor> {
        let mut p = self.backbone.params();
        p.extend(self.h1.params());
        p.extend(self.lat.params());
        p.extend(self.bank.params());
        p
    }

    fn loss(&self, batch: &Batch, training: bool) -> Tensor {
        let alpha = self.alpha(batch, training);
        elbo_graph(&alpha, &batch.labels, self.kl_scale).mean()
    }

    fn predict_batch(&self, batch: &Batch) -> Vec<ScenePrediction> {
        let alpha = self.alpha(batch, false);
        let d = alpha.data();
        let c = self.anchors.classes;
        (0..batch.labels.len())
            .map(|i| {
                let a = d[i * c..(i + 1) * c].to_vec();
                let a0: f64 = a.iter().sum();
                ScenePrediction {
                    probs: a.iter().map(|v| v / a0).collect(),
                    alpha: Some(a),
                    epistemic: Some(a0),
                    branch_alpha0: None,
                }
            })
            .collect()
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
        put_wb(&mut m, "h1", &self.h1.w, &self.h1.b);
        put_wb(&mut m, "lat", &self.lat.w, &self.lat.b);
        put_bank(&mut m, "bank", &self.bank);
        self.budget.export(&mut m);
        m
    }

    fn import_state(&mut self, state: &BTreeMap<String, Vec<f64>>) -> Result<(), ModelError> {
        for (i, c) in self.backbone.convs.iter().enumerate() {
            get_wb(state, &format!("backbone.conv{i}"), &c.w, &c.b)?;
        }
        get_wb(state, "backbone.fc", &self.backbone.fc.w, &self.backbone.fc.b)?;
        get_wb(state, "h1", &self.h1.w, &self.h1.b)?;
        get_wb(state, "lat", &self.lat.w, &self.lat.b)?;
        get_bank(state, "bank", &self.bank)?;
        self.budget.import(state, self.anchors.classes)
    }
}
