//! Softmax anchor classifier and the deep ensemble built from it.

use std::collections::BTreeMap;
use std::rc::Rc;

use diffcore::nn::{he_std, Linear};
use diffcore::Tensor;

use crate::anchors::AnchorSet;
use crate::rng::{normal, stream, stream_seed};
use crate::scenegen::Scene;

use super::{
    fit, get_wb, put_wb, Backbone, Batch, Model, ModelError, ScenePrediction, TrainConfig,
    TrainError, TrainStats, BASELINE_HIDDEN, ENSEMBLE_SIZE, X_DIM,
};

/// Plain cross-entropy classifier over the anchor classes.
pub struct CoverNet {
    backbone: Backbone,
    h1: Linear,
    out: Linear,
    anchors: AnchorSet,
}

impl CoverNet {
    pub fn new(anchors: AnchorSet, init_seed: u64) -> CoverNet {
        let mut rng = stream(init_seed, "init/covernet");
        let mut src = move || normal(&mut rng);
        CoverNet {
            backbone: Backbone::new(&mut src),
            h1: Linear::new(X_DIM, BASELINE_HIDDEN, he_std(X_DIM), &mut src),
            out: Linear::new(BASELINE_HIDDEN, anchors.classes, he_std(BASELINE_HIDDEN), &mut src),
            anchors,
        }
    }

    fn logits(&self, batch: &Batch) -> Tensor {
        let x = self.backbone.forward(&batch.img, &batch.state);
        self.out.forward(&self.h1.forward(&x).relu())
    }

    /// Eval-mode class probabilities, one row per scene.
    pub fn class_probs(&self, batch: &Batch) -> Vec<Vec<f64>> {
        let p = self.logits(batch).log_softmax_last().exp();
        let d = p.data();
        let c = self.anchors.classes;
        (0..batch.labels.len())
            .map(|i| d[i * c..(i + 1) * c].to_vec())
            .collect()
    }
}

impl Model for CoverNet {
    fn kind(&self) -> &'static str {
        "covernet"
    }

    fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    fn params(&self) -> Vec<Tensor> {
        let mut p = self.backbone.params();
        p.extend(self.h1.params());
        p.extend(self.out.params());
        p
    }

    fn loss(&self, batch: &Batch, _training: bool) -> Tensor {
        let log_p = self.logits(batch).log_softmax_last();
        let c = self.anchors.classes;
        let idx: Vec<usize> = batch
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| i * c + y)
            .collect();
        log_p
            .gather(Rc::new(idx), &[batch.labels.len()])
            .mean()
            .neg()
    }

    fn predict_batch(&self, batch: &Batch) -> Vec<ScenePrediction> {
        self.class_probs(batch)
            .into_iter()
            .map(|probs| ScenePrediction {
                probs,
                alpha: None,
                epistemic: None,
                branch_alpha0: None,
            })
            .collect()
    }

    fn export_state(&self) -> BTreeMap<String, Vec<f64>> {
        let mut m = BTreeMap::new();
        export_covernet(self, "", &mut m);
        m
    }

    fn import_state(&mut self, state: &BTreeMap<String, Vec<f64>>) -> Result<(), ModelError> {
        import_covernet(self, "", state)
    }
}

fn export_covernet(net: &CoverNet, prefix: &str, m: &mut BTreeMap<String, Vec<f64>>) {
    for (i, c) in net.backbone.convs.iter().enumerate() {
        put_wb(m, &format!("{prefix}backbone.conv{i}"), &c.w, &c.b);
    }
    put_wb(m, &format!("{prefix}backbone.fc"), &net.backbone.fc.w, &net.backbone.fc.b);
    put_wb(m, &format!("{prefix}h1"), &net.h1.w, &net.h1.b);
    put_wb(m, &format!("{prefix}out"), &net.out.w, &net.out.b);
}

fn import_covernet(
    net: &CoverNet,
    prefix: &str,
    m: &BTreeMap<String, Vec<f64>>,
) -> Result<(), ModelError> {
    for (i, c) in net.backbone.convs.iter().enumerate() {
        get_wb(m, &format!("{prefix}backbone.conv{i}"), &c.w, &c.b)?;
    }
    get_wb(m, &format!("{prefix}backbone.fc"), &net.backbone.fc.w, &net.backbone.fc.b)?;
    get_wb(m, &format!("{prefix}h1"), &net.h1.w, &net.h1.b)?;
    get_wb(m, &format!("{prefix}out"), &net.out.w, &net.out.b)
}

/// Mean probabilities across members, plus the inverse population variance
/// of the member probabilities at the consensus class — the ensemble's
/// epistemic-confidence score (identical members ⇒ huge confidence).
pub fn combine_members(per_member: &[&[f64]]) -> (Vec<f64>, f64) {
    let m = per_member.len();
    assert!(m > 0);
    let c = per_member[0].len();
    let mut mean = vec![0.0f64; c];
    for row in per_member {
        assert_eq!(row.len(), c);
        for (acc, &v) in mean.iter_mut().zip(row.iter()) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let star = crate::metrics::top_k(&mean, 1)[0];
    let at_star: Vec<f64> = per_member.iter().map(|row| row[star]).collect();
    let mu = at_star.iter().sum::<f64>() / m as f64;
    let var = at_star.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
    (mean, 1.0 / (var + 1e-12))
}

/// Independently initialized and independently trained softmax classifiers.
pub struct Ensemble {
    members: Vec<CoverNet>,
    anchors: AnchorSet,
}

impl Ensemble {
    pub fn new(anchors: AnchorSet, init_seed: u64) -> Ensemble {
        let members = (0..ENSEMBLE_SIZE)
            .map(|i| {
                CoverNet::new(
                    anchors.clone(),
                    stream_seed(init_seed, &format!("ensemble/member/{i}")),
                )
            })
            .collect();
        Ensemble { members, anchors }
    }

    pub fn members(&self) -> usize {
        self.members.len()
    }
}

impl Model for Ensemble {
    fn kind(&self) -> &'static str {
        "ensemble"
    }

    fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    fn params(&self) -> Vec<Tensor> {
        self.members.iter().flat_map(|m| m.params()).collect()
    }

    /// Mean member loss. Training goes through the [`Model::train`]
    /// override, which fits each member on its own seed; this joint form
    /// exists so generic consumers still get a meaningful objective.
    fn loss(&self, batch: &Batch, training: bool) -> Tensor {
        let mut acc = self.members[0].loss(batch, training);
        for m in &self.members[1..] {
            acc = acc.add(&m.loss(batch, training));
        }
        acc.affine(1.0 / self.members.len() as f64, 0.0)
    }

    fn train(
        &mut self,
        train: &[Scene],
        val: &[Scene],
        cfg: &TrainConfig,
    ) -> Result<TrainStats, TrainError> {
        let mut agg = TrainStats::default();
        for (i, member) in self.members.iter_mut().enumerate() {
            let member_cfg = TrainConfig {
                seed: cfg.seed + i as u64,
                ..*cfg
            };
            log::info!("ensemble: training member {i}");
            let stats = fit(member, train, val, &member_cfg)?;
            if agg.train_loss.is_empty() {
                agg = stats;
            } else {
                // Aggregate view: mean loss curves, last member's selection.
                for (a, b) in agg.train_loss.iter_mut().zip(&stats.train_loss) {
                    *a += b;
                }
                for (a, b) in agg.val_loss.iter_mut().zip(&stats.val_loss) {
                    *a += b;
                }
                agg.selected_epoch = stats.selected_epoch;
            }
        }
        let n = self.members.len() as f64;
        for v in agg.train_loss.iter_mut().chain(agg.val_loss.iter_mut()) {
            *v /= n;
        }
        Ok(agg)
    }

    fn predict_batch(&self, batch: &Batch) -> Vec<ScenePrediction> {
        let per_member: Vec<Vec<Vec<f64>>> =
            self.members.iter().map(|m| m.class_probs(batch)).collect();
        (0..batch.labels.len())
            .map(|i| {
                let rows: Vec<&[f64]> =
                    per_member.iter().map(|mp| mp[i].as_slice()).collect();
                let (probs, confidence) = combine_members(&rows);
                ScenePrediction {
                    probs,
                    alpha: None,
                    epistemic: Some(confidence),
                    branch_alpha0: None,
                }
            })
            .collect()
    }

    fn export_state(&self) -> BTreeMap<String, Vec<f64>> {
        let mut m = BTreeMap::new();
        for (i, member) in self.members.iter().enumerate() {
            export_covernet(member, &format!("member{i}."), &mut m);
        }
        m
    }

    fn import_state(&mut self, state: &BTreeMap<String, Vec<f64>>) -> Result<(), ModelError> {
        for (i, member) in self.members.iter().enumerate() {
            import_covernet(member, &format!("member{i}."), state)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use crate::model::{build_model, label_histogram, make_batch, Selection};

    #[test]
    fn combine_members_hand_cases() {
        // Two members disagreeing by ±0.1 around 0.5: population variance
        // 0.01, confidence 1/0.01 = 100. Mean ties at 0.5/0.5 → class 0.
        let a = [0.4, 0.6];
        let b = [0.6, 0.4];
        let (mean, conf) = combine_members(&[&a, &b]);
        assert_eq!(mean, vec![0.5, 0.5]);
        assert!((conf - 100.0).abs() < 1e-6);
        // Identical members: variance 0, confidence pinned by the 1e-12 floor.
        let (_, conf) = combine_members(&[&a, &a, &a]);
        assert!((conf - 1e12).abs() < 1.0);
    }

    #[test]
    fn covernet_overfits_a_handful_of_scenes() {
        let (scenes, anchors) = tiny_world(8, 6);
        let (train, val) = split_train_val(&scenes);
        let mut net = CoverNet::new(anchors, 5);
        let cfg = TrainConfig {
            epochs: 40,
            selection: Selection::FinalEpoch,
            ..TrainConfig::default()
        };
        let stats = net.train(&train, &val, &cfg).unwrap();
        assert!(
            stats.train_loss.last().unwrap() < &stats.train_loss[0],
            "loss should drop: {:?}",
            stats.train_loss
        );
        let preds = net.predict(&train);
        let hits = preds
            .iter()
            .zip(&train)
            .filter(|(p, s)| p.top1() == net.anchors().label(&s.future))
            .count();
        assert_eq!(hits, train.len(), "memorizing {} scenes", train.len());
        // Probabilities are a distribution; no epistemic head on the baseline.
        let p0 = &preds[0];
        assert!((p0.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p0.epistemic.is_none() && p0.alpha.is_none());
    }

    #[test]
    fn ensemble_trains_members_apart_and_scores_agreement() {
        let (scenes, anchors) = tiny_world(6, 4);
        let (train, val) = split_train_val(&scenes);
        let counts = label_histogram(&train, &anchors);
        assert_eq!(counts.iter().sum::<u64>() as usize, train.len());

        let mut ens = Ensemble::new(anchors.clone(), 11);
        let cfg = TrainConfig {
            epochs: 2,
            selection: Selection::FinalEpoch,
            ..TrainConfig::default()
        };
        ens.train(&train, &val, &cfg).unwrap();
        let refs: Vec<&crate::scenegen::Scene> = train.iter().collect();
        let batch = make_batch(&refs, &anchors, false);
        let preds = ens.predict_batch(&batch);
        // Freshly diverged members disagree at least a little, so the
        // confidence stays finite and well below the identical-member cap.
        for p in &preds {
            let conf = p.epistemic.unwrap();
            assert!(conf.is_finite() && conf > 0.0 && conf < 1e12);
        }

        // Checkpoint round trip covers the member prefixes.
        let state = ens.export_state();
        let mut rebuilt = build_model("ensemble", anchors, 999).unwrap();
        rebuilt.import_state(&state).unwrap();
        let re = rebuilt.predict_batch(&batch);
        for (a, b) in preds.iter().zip(&re) {
            assert_eq!(a.probs, b.probs);
        }
    }
}
