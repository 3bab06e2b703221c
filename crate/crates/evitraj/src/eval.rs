//! End-to-end evaluation of a trained model on in-distribution and OOD
//! test scenes: trajectory quality, calibration, confidence ranking, OOD
//! detection, and the per-scene samples the report figures are drawn from.

use crate::evidential::{categorical_entropy, dirichlet_entropy, DirichletParams};
use crate::metrics::{
    apr, auroc, brier, ece, fde, mean, min_ade_k, EvalReport, MetricError, ScoredSample,
};
use crate::model::{Model, ScenePrediction};
use crate::scenegen::{scene_speed, Scene};

/// Modes of top-k coverage reported for each set.
const ADE_KS: [usize; 4] = [1, 5, 10, 15];
const ECE_BINS: usize = 10;

/// One evaluated scene, reduced to what the figures need.
#[derive(Clone, Copy, Debug)]
pub struct SceneStat {
    /// Recent-displacement speed heuristic of the past track (m/s · 1s).
    pub speed: f64,
    /// Epistemic confidence when the model has one, else top-1 probability.
    pub confidence: f64,
    /// Dirichlet entropy for evidential models, else categorical entropy.
    pub entropy: f64,
    /// Per-concept evidence totals `[agent, map, social]` where the model
    /// attributes its uncertainty to sources.
    pub branch_alpha0: Option<[f64; 3]>,
}

pub struct EvalArtifacts {
    pub report: EvalReport,
    pub id_stats: Vec<SceneStat>,
    pub ood_stats: Vec<SceneStat>,
}

struct SetSummary {
    n: f64,
    accuracy: f64,
    ade: Vec<f64>,
    fde: f64,
    ece: Option<f64>,
    brier: f64,
    cat_entropy: f64,
    dir_entropy: Option<f64>,
    alpha0_mean: Option<f64>,
    conf_auroc_alea: Option<f64>,
    conf_apr_alea: Option<f64>,
    conf_auroc_epi: Option<f64>,
    conf_apr_epi: Option<f64>,
    stats: Vec<SceneStat>,
}

fn ok_or_none(r: Result<f64, MetricError>) -> Option<f64> {
    match r {
        Ok(v) => Some(v),
        Err(MetricError::DegenerateLabels) => None,
        Err(e) => panic!("metric failed: {e}"),
    }
}

fn summarize(model: &dyn Model, scenes: &[Scene], preds: &[ScenePrediction]) -> SetSummary {
    assert_eq!(scenes.len(), preds.len());
    let anchors = model.anchors();
    let n = scenes.len();

    let mut ade = vec![0.0f64; ADE_KS.len()];
    let mut fde_sum = 0.0f64;
    let mut hits = 0usize;
    let mut brier_sum = 0.0f64;
    let mut conf_correct = Vec::with_capacity(n);
    let mut cat_h = Vec::with_capacity(n);
    let mut dir_h = Vec::with_capacity(n);
    let mut alpha0 = Vec::with_capacity(n);
    let mut epi_samples = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(n);

    for (scene, pred) in scenes.iter().zip(preds) {
        let label = anchors.label(&scene.future);
        let top1 = pred.top1();
        let correct = top1 == label;
        hits += correct as usize;
        for (acc, &k) in ade.iter_mut().zip(ADE_KS.iter()) {
            *acc += min_ade_k(&pred.probs, anchors, &scene.future, k);
        }
        fde_sum += fde(&pred.probs, anchors, &scene.future);
        brier_sum += brier(&pred.probs, label);
        let top_p = pred.probs[top1];
        conf_correct.push((top_p.clamp(0.0, 1.0), correct));
        cat_h.push(categorical_entropy(&pred.probs));
        if let Some(a) = &pred.alpha {
            let dp = DirichletParams::new(a.clone());
            dir_h.push(dirichlet_entropy(&dp));
            alpha0.push(dp.alpha0());
        }
        // Confidence ranking of correct-vs-incorrect predictions. The
        // epistemic score is the branch evidence max for Dirichlet models
        // and the ensemble's agreement score otherwise.
        let epi_conf = match (&pred.alpha, pred.epistemic) {
            (Some(a), _) => Some(a.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
            (None, Some(e)) => Some(e),
            (None, None) => None,
        };
        epi_samples.push(epi_conf.map(|score| ScoredSample {
            score,
            label: correct,
        }));
        let entropy = if let Some(a) = &pred.alpha {
            dirichlet_entropy(&DirichletParams::new(a.clone()))
        } else {
            categorical_entropy(&pred.probs)
        };
        stats.push(SceneStat {
            speed: scene_speed(scene),
            confidence: pred.epistemic.unwrap_or(top_p),
            entropy,
            branch_alpha0: pred.branch_alpha0,
        });
    }

    let alea_samples: Vec<ScoredSample> = conf_correct
        .iter()
        .map(|&(c, k)| ScoredSample { score: c, label: k })
        .collect();
    let epi: Option<Vec<ScoredSample>> = epi_samples.into_iter().collect();

    SetSummary {
        n: n as f64,
        accuracy: hits as f64 / n as f64,
        ade: ade.into_iter().map(|s| s / n as f64).collect(),
        fde: fde_sum / n as f64,
        ece: Some(ece(&conf_correct, ECE_BINS).expect("non-empty set")),
        brier: brier_sum / n as f64,
        cat_entropy: mean(&cat_h),
        dir_entropy: (!dir_h.is_empty()).then(|| mean(&dir_h)),
        alpha0_mean: (!alpha0.is_empty()).then(|| mean(&alpha0)),
        conf_auroc_alea: ok_or_none(auroc(&alea_samples)),
        conf_apr_alea: ok_or_none(apr(&alea_samples)),
        conf_auroc_epi: epi.as_ref().and_then(|s| ok_or_none(auroc(s))),
        conf_apr_epi: epi.as_ref().and_then(|s| ok_or_none(apr(s))),
        stats,
    }
}

/// Detection scores over the ID∪OOD union; ID scenes are the positives, so
/// a well-behaved confidence score ranks them on top.
fn detection(
    id: &[ScenePrediction],
    ood: &[ScenePrediction],
    score: impl Fn(&ScenePrediction) -> Option<f64>,
) -> (Option<f64>, Option<f64>) {
    let mut samples = Vec::with_capacity(id.len() + ood.len());
    for (preds, label) in [(id, true), (ood, false)] {
        for p in preds {
            match score(p) {
                Some(s) => samples.push(ScoredSample { score: s, label }),
                None => return (None, None),
            }
        }
    }
    (ok_or_none(auroc(&samples)), ok_or_none(apr(&samples)))
}

pub fn evaluate(model: &dyn Model, id: &[Scene], ood: &[Scene]) -> EvalArtifacts {
    assert!(!id.is_empty() && !ood.is_empty(), "both test sets required");
    let id_preds = model.predict(id);
    let ood_preds = model.predict(ood);
    let s_id = summarize(model, id, &id_preds);
    let s_ood = summarize(model, ood, &ood_preds);

    let (det_auroc_epi, det_apr_epi) = detection(&id_preds, &ood_preds, |p| p.epistemic);
    let (det_auroc_alea, det_apr_alea) = detection(&id_preds, &ood_preds, |p| {
        Some(p.probs[p.top1()])
    });
    let alpha0_ratio = match (s_id.alpha0_mean, s_ood.alpha0_mean) {
        (Some(i), Some(o)) => Some(o / i),
        _ => None,
    };

    let mut r = EvalReport::default();
    r.push("n_scenes", Some(s_id.n), Some(s_ood.n));
    r.push("top1_accuracy", Some(s_id.accuracy), Some(s_ood.accuracy));
    for (i, &k) in ADE_KS.iter().enumerate() {
        r.push(&format!("min_ade_{k}"), Some(s_id.ade[i]), Some(s_ood.ade[i]));
    }
    r.push("fde", Some(s_id.fde), Some(s_ood.fde));
    r.push("ece", s_id.ece, s_ood.ece);
    r.push("brier", Some(s_id.brier), Some(s_ood.brier));
    r.push("cat_entropy_mean", Some(s_id.cat_entropy), Some(s_ood.cat_entropy));
    r.push("dir_entropy_mean", s_id.dir_entropy, s_ood.dir_entropy);
    r.push("alpha0_mean", s_id.alpha0_mean, s_ood.alpha0_mean);
    r.push("conf_auroc_aleatoric", s_id.conf_auroc_alea, s_ood.conf_auroc_alea);
    r.push("conf_apr_aleatoric", s_id.conf_apr_alea, s_ood.conf_apr_alea);
    r.push("conf_auroc_epistemic", s_id.conf_auroc_epi, s_ood.conf_auroc_epi);
    r.push("conf_apr_epistemic", s_id.conf_apr_epi, s_ood.conf_apr_epi);
    r.push("ood_auroc_epistemic", None, det_auroc_epi);
    r.push("ood_apr_epistemic", None, det_apr_epi);
    r.push("ood_auroc_aleatoric", None, det_auroc_alea);
    r.push("ood_apr_aleatoric", None, det_apr_alea);
    r.push("alpha0_ratio", None, alpha0_ratio);

    EvalArtifacts {
        report: r,
        id_stats: s_id.stats,
        ood_stats: s_ood.stats,
    }
}

const STATS_HEADER: &str = "set,speed,confidence,entropy,alpha0_agent,alpha0_map,alpha0_sc";

/// Per-scene samples as CSV (`set` ∈ {id, ood}), formatted deterministically.
/// The branch columns hold `--` for models without concept attribution.
pub fn stats_csv(artifacts: &EvalArtifacts) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for (tag, stats) in [("id", &artifacts.id_stats), ("ood", &artifacts.ood_stats)] {
        for s in stats {
            out.push_str(&format!(
                "{tag},{:.9},{:.9},{:.9}",
                s.speed, s.confidence, s.entropy
            ));
            match s.branch_alpha0 {
                Some(b) => out.push_str(&format!(",{:.9},{:.9},{:.9}\n", b[0], b[1], b[2])),
                None => out.push_str(",--,--,--\n"),
            }
        }
    }
    out
}

/// Parse [`stats_csv`] output back into (id, ood) sample lists.
pub fn parse_stats_csv(text: &str) -> Result<(Vec<SceneStat>, Vec<SceneStat>), MetricError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == STATS_HEADER => {}
        other => return Err(MetricError::BadReport(format!("bad stats header {other:?}"))),
    }
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(MetricError::BadReport(format!("short stats row {line:?}")));
        }
        let num = |s: &str| -> Result<f64, MetricError> {
            s.parse()
                .map_err(|e| MetricError::BadReport(format!("bad stats cell {s:?}: {e}")))
        };
        let branch_alpha0 = if cells[4] == "--" {
            None
        } else {
            Some([num(cells[4])?, num(cells[5])?, num(cells[6])?])
        };
        let stat = SceneStat {
            speed: num(cells[1])?,
            confidence: num(cells[2])?,
            entropy: num(cells[3])?,
            branch_alpha0,
        };
        match cells[0] {
            "id" => id.push(stat),
            "ood" => ood.push(stat),
            other => {
                return Err(MetricError::BadReport(format!("bad stats set {other:?}")))
            }
        }
    }
    Ok((id, ood))
}
