//! Prediction-quality, calibration, and OOD-detection metrics, plus the
//! tabular evaluation report they are collected into.
//!
//! Conventions, fixed here once: AUROC uses Mann-Whitney ranks with
//! half-credit ties; average precision sums precision at each recall step
//! (ties processed as one block); ECE uses equal-width right-inclusive
//! confidence bins; the Brier score is the full squared norm
//! Σ_c (ξ_c − 1[c=y])². Every function has an independently coded oracle
//! in the tests.

use thiserror::Error;

use crate::anchors::AnchorSet;
use crate::scenegen::FUT_LEN;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric needs both positive and negative samples")]
    DegenerateLabels,
    #[error("metric input is empty")]
    Empty,
    #[error("non-finite score encountered")]
    NonFinite,
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("malformed report: {0}")]
    BadReport(String),
}

/// One scored binary decision (true = positive class).
#[derive(Clone, Copy, Debug)]
pub struct ScoredSample {
    pub score: f64,
    pub label: bool,
}

/// Area under the ROC curve: P(score⁺ > score⁻) + ½P(score⁺ = score⁻),
/// computed via tie-averaged ranks.
pub fn auroc(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n = samples.len();
    let n_pos = samples.iter().filter(|s| s.label).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| samples[a].score.partial_cmp(&samples[b].score).unwrap());

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && samples[idx[j]].score == samples[idx[i]].score {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share the average (i + 1 + j) / 2.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            if samples[k].label {
                rank_sum_pos += avg;
            }
        }
        i = j;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Ok(auc)
}

/// Average precision: Σ over ranked positives of precision at that depth,
/// divided by the positive count. Equal scores are processed as one block.
pub fn apr(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n_pos = samples.iter().filter(|s| s.label).count();
    if n_pos == 0 || n_pos == samples.len() {
        return Err(MetricError::DegenerateLabels);
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| samples[b].score.partial_cmp(&samples[a].score).unwrap());

    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0f64);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let mut group_tp = 0usize;
        while j < idx.len() && samples[idx[j]].score == samples[idx[i]].score {
            if samples[idx[j]].label {
                group_tp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        seen += j - i;
        if group_tp > 0 {
            ap += group_tp as f64 * tp as f64 / seen as f64;
        }
        i = j;
    }
    Ok(ap / n_pos as f64)
}

/// Expected calibration error over `bins` equal-width right-inclusive
/// confidence bins (bin 0 additionally contains confidence 0).
pub fn ece(samples: &[(f64, bool)], bins: usize) -> Result<f64, MetricError> {
    if samples.is_empty() || bins == 0 {
        return Err(MetricError::Empty);
    }
    for &(c, _) in samples {
        if !(0.0..=1.0).contains(&c) {
            return Err(MetricError::BadConfidence(c));
        }
    }
    let mut conf_sum = vec![0.0f64; bins];
    let mut hit_sum = vec![0.0f64; bins];
    let mut count = vec![0usize; bins];
    for &(c, correct) in samples {
        let b = ((c * bins as f64).ceil() as usize).saturating_sub(1).min(bins - 1);
        conf_sum[b] += c;
        hit_sum[b] += correct as u8 as f64;
        count[b] += 1;
    }
    let n = samples.len() as f64;
    let mut e = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let k = count[b] as f64;
            e += (hit_sum[b] / k - conf_sum[b] / k).abs() * k / n;
        }
    }
    Ok(e)
}

/// Brier score of one prediction: squared norm of (ξ − onehot(label)).
pub fn brier(xi: &[f64], label: usize) -> f64 {
    assert!(label < xi.len());
    xi.iter()
        .enumerate()
        .map(|(c, &p)| {
            let t = (c == label) as u8 as f64;
            (p - t) * (p - t)
        })
        .sum()
}

/// Indices of the k most probable classes, most probable first; equal
/// probabilities order by ascending index.
pub fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Smallest mean pointwise displacement between the ground-truth future and
/// any of the top-k anchors.
pub fn min_ade_k(probs: &[f64], set: &AnchorSet, gt: &[[f32; 2]; FUT_LEN], k: usize) -> f64 {
    top_k(probs, k)
        .into_iter()
        .map(|c| set.mean_dist(gt, c))
        .fold(f64::INFINITY, f64::min)
}

/// Final-waypoint displacement of the single most probable anchor.
pub fn fde(probs: &[f64], set: &AnchorSet, gt: &[[f32; 2]; FUT_LEN]) -> f64 {
    let c = top_k(probs, 1)[0];
    let a = set.waypoints(c)[FUT_LEN - 1];
    let g = gt[FUT_LEN - 1];
    let (dx, dy) = ((a[0] - g[0]) as f64, (a[1] - g[1]) as f64);
    (dx * dx + dy * dy).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub id: Option<f64>,
    pub ood: Option<f64>,
}

/// Named metric rows with in-distribution and OOD columns. Renders to a
/// deterministic CSV: identical reports produce identical bytes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.9}"),
        None => "--".to_string(),
    }
}

impl EvalReport {
    pub fn push(&mut self, name: &str, id: Option<f64>, ood: Option<f64>) {
        assert!(!name.contains(','), "metric name may not contain commas");
        self.rows.push(EvalRow {
            name: name.to_string(),
            id,
            ood,
        });
    }

    pub fn get(&self, name: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Convenience for tests and the report command: the ID cell of `name`.
    pub fn id_value(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|r| r.id)
    }

    pub fn ood_value(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|r| r.ood)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,id_value,ood_value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}\n",
                r.name,
                fmt_cell(r.id),
                fmt_cell(r.ood)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<EvalReport, MetricError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(MetricError::BadReport("empty".into()))?;
        if header != "metric,id_value,ood_value" {
            return Err(MetricError::BadReport(format!("bad header {header:?}")));
        }
        let parse = |cell: &str| -> Result<Option<f64>, MetricError> {
            if cell == "--" {
                return Ok(None);
            }
            cell.parse::<f64>()
                .map(Some)
                .map_err(|e| MetricError::BadReport(format!("bad cell {cell:?}: {e}")))
        };
        let mut report = EvalReport::default();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let name = parts
                .next()
                .ok_or_else(|| MetricError::BadReport(format!("short row {line:?}")))?;
            let id = parse(
                parts
                    .next()
                    .ok_or_else(|| MetricError::BadReport(format!("short row {line:?}")))?,
            )?;
            let ood = parse(
                parts
                    .next()
                    .ok_or_else(|| MetricError::BadReport(format!("short row {line:?}")))?,
            )?;
            report.push(name, id, ood);
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_samples(rng: &mut rand_chacha::ChaCha8Rng, n: usize, quantize: bool) -> Vec<ScoredSample> {
        loop {
            let s: Vec<ScoredSample> = (0..n)
                .map(|_| {
                    let raw: f64 = rng.gen_range(-2.0..2.0);
                    ScoredSample {
                        // Coarse quantization forces plenty of exact ties.
                        score: if quantize { (raw * 4.0).round() / 4.0 } else { raw },
                        label: rng.gen::<bool>(),
                    }
                })
                .collect();
            let pos = s.iter().filter(|x| x.label).count();
            if pos > 0 && pos < n {
                return s;
            }
        }
    }

    /// O(n²) pairwise Mann-Whitney oracle.
    fn auroc_oracle(samples: &[ScoredSample]) -> f64 {
        let pos: Vec<f64> = samples.iter().filter(|s| s.label).map(|s| s.score).collect();
        let neg: Vec<f64> = samples.iter().filter(|s| !s.label).map(|s| s.score).collect();
        let mut acc = 0.0;
        for p in &pos {
            for q in &neg {
                acc += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        acc / (pos.len() * neg.len()) as f64
    }

    /// Threshold-rescan average-precision oracle: evaluate P and R from
    /// scratch at each unique score, accumulate ΔR·P.
    fn apr_oracle(samples: &[ScoredSample]) -> f64 {
        let mut thresholds: Vec<f64> = samples.iter().map(|s| s.score).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let n_pos = samples.iter().filter(|s| s.label).count() as f64;
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for t in thresholds {
            let tp = samples.iter().filter(|s| s.score >= t && s.label).count() as f64;
            let fp = samples.iter().filter(|s| s.score >= t && !s.label).count() as f64;
            let recall = tp / n_pos;
            let precision = tp / (tp + fp);
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    /// Brute-force ECE with explicit per-sample bin search.
    fn ece_oracle(samples: &[(f64, bool)], bins: usize) -> f64 {
        let edges: Vec<(f64, f64)> = (0..bins)
            .map(|b| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64))
            .collect();
        let mut total = 0.0;
        for (b, &(lo, hi)) in edges.iter().enumerate() {
            let members: Vec<&(f64, bool)> = samples
                .iter()
                .filter(|(c, _)| {
                    if b == 0 {
                        *c >= lo && *c <= hi
                    } else {
                        *c > lo && *c <= hi
                    }
                })
                .collect();
            if members.is_empty() {
                continue;
            }
            let acc = members.iter().filter(|(_, k)| *k).count() as f64 / members.len() as f64;
            let conf = members.iter().map(|(c, _)| c).sum::<f64>() / members.len() as f64;
            total += (acc - conf).abs() * members.len() as f64 / samples.len() as f64;
        }
        total
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = crate::rng::stream(1, "auroc");
        for i in 0..100 {
            let n = rng.gen_range(2..60);
            let s = random_samples(&mut rng, n, i % 2 == 0);
            let fast = auroc(&s).unwrap();
            let slow = auroc_oracle(&s);
            assert!((fast - slow).abs() < 1e-9, "case {i}: {fast} vs {slow}");
        }
        // Perfect separation and anti-separation.
        let hi = ScoredSample { score: 5.0, label: true };
        let lo = ScoredSample { score: 1.0, label: false };
        assert_eq!(auroc(&[hi, lo]).unwrap(), 1.0);
        assert_eq!(
            auroc(&[ScoredSample { score: 1.0, label: true }, ScoredSample { score: 5.0, label: false }]).unwrap(),
            0.0
        );
        // All ties = chance.
        let flat = [
            ScoredSample { score: 2.0, label: true },
            ScoredSample { score: 2.0, label: false },
        ];
        assert_eq!(auroc(&flat).unwrap(), 0.5);
        assert_eq!(auroc(&[hi]), Err(MetricError::DegenerateLabels));
        assert_eq!(
            auroc(&[ScoredSample { score: f64::NAN, label: true }, lo]),
            Err(MetricError::NonFinite)
        );
    }

    #[test]
    fn apr_matches_threshold_oracle() {
        let mut rng = crate::rng::stream(2, "apr");
        for i in 0..100 {
            let n = rng.gen_range(2..60);
            let s = random_samples(&mut rng, n, i % 2 == 1);
            let fast = apr(&s).unwrap();
            let slow = apr_oracle(&s);
            assert!((fast - slow).abs() < 1e-9, "case {i}: {fast} vs {slow}");
        }
        // A single positive ranked first gives AP = 1.
        let s = [
            ScoredSample { score: 3.0, label: true },
            ScoredSample { score: 2.0, label: false },
            ScoredSample { score: 1.0, label: false },
        ];
        assert_eq!(apr(&s).unwrap(), 1.0);
    }

    #[test]
    fn ece_matches_brute_force_and_examples() {
        let mut rng = crate::rng::stream(3, "ece");
        for i in 0..100 {
            let n = rng.gen_range(1..200);
            let s: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    // Hit bin edges exactly on occasion.
                    let c = if rng.gen::<f64>() < 0.2 {
                        rng.gen_range(0..=10) as f64 / 10.0
                    } else {
                        rng.gen::<f64>()
                    };
                    (c, rng.gen::<bool>())
                })
                .collect();
            let fast = ece(&s, 10).unwrap();
            let slow = ece_oracle(&s, 10);
            assert!((fast - slow).abs() < 1e-9, "case {i}: {fast} vs {slow}");
        }
        // Perfectly calibrated and confidently wrong cases.
        assert_eq!(ece(&[(1.0, true)], 10).unwrap(), 0.0);
        let off = ece(&[(0.75, true), (0.75, false)], 10).unwrap();
        assert!((off - 0.25).abs() < 1e-12);
        assert_eq!(ece(&[], 10), Err(MetricError::Empty));
        assert_eq!(ece(&[(1.5, true)], 10), Err(MetricError::BadConfidence(1.5)));
    }

    #[test]
    fn brier_uniform_64_is_63_over_64() {
        let xi = vec![1.0 / 64.0; 64];
        assert!((brier(&xi, 17) - 0.984375).abs() < 1e-15);
        // Perfect prediction scores 0, worst one-hot scores 2.
        let mut onehot = vec![0.0; 64];
        onehot[5] = 1.0;
        assert_eq!(brier(&onehot, 5), 0.0);
        assert_eq!(brier(&onehot, 6), 2.0);
    }

    #[test]
    fn top_k_orders_and_breaks_ties_low() {
        let probs = vec![0.1, 0.4, 0.1, 0.4];
        assert_eq!(top_k(&probs, 3), vec![1, 3, 0]);
    }

    #[test]
    fn ade_fde_against_hand_geometry() {
        // Two synthetic anchors: one at y = t, one at y = 2t.
        let mut data = Vec::new();
        for speed in [1.0f32, 2.0] {
            for t in 1..=FUT_LEN {
                data.push(0.0);
                data.push(speed * t as f32);
            }
        }
        let set = AnchorSet { data, classes: 2 };
        let gt = set.waypoints(0);

        // Picks anchor 1 at k = 1 (higher prob), anchor 0 enters at k = 2.
        let probs = vec![0.3, 0.7];
        let ade1 = min_ade_k(&probs, &set, &gt, 1);
        // Mean |t − 2t| over t = 1..=12 equals mean of t = 6.5.
        assert!((ade1 - 6.5).abs() < 1e-6);
        assert_eq!(min_ade_k(&probs, &set, &gt, 2), 0.0);
        // FDE of the top-1 anchor: final waypoints differ by 12 m.
        assert!((fde(&probs, &set, &gt) - 12.0).abs() < 1e-6);
        let sure = vec![0.9, 0.1];
        assert_eq!(fde(&sure, &set, &gt), 0.0);
    }

    #[test]
    fn report_round_trips_and_formats_missing_cells() {
        let mut r = EvalReport::default();
        r.push("min_ade_5", Some(1.25), Some(2.5));
        r.push("alpha0_ratio", None, Some(0.145));
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,id_value,ood_value\n"));
        assert!(csv.contains("alpha0_ratio,--,0.145000000\n"));
        let back = EvalReport::from_csv(&csv).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.id_value("min_ade_5"), Some(1.25));
        assert_eq!(back.get("alpha0_ratio").unwrap().id, None);
        // Identical content renders to identical bytes.
        assert_eq!(csv, back.to_csv());
        assert!(EvalReport::from_csv("bogus\n1,2,3").is_err());
    }
}
