//! Discrete trajectory anchor set: k-means over training-set futures.
//!
//! Anchors are stored at f32 precision (they persist in the same container
//! format as datasets), and every distance computation runs on the
//! f32-rounded values in f64 arithmetic — so a freshly fitted set and a
//! reloaded one label identically.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::persist::{self, Container, Payload};
use crate::rng::stream_seed;
use crate::scenegen::{GenError, Scene, FUT_LEN};

/// Flattened future: [x0, y0, x1, y1, ...].
pub const ANCHOR_DIM: usize = 2 * FUT_LEN;

#[derive(Clone, Debug)]
pub struct AnchorSet {
    /// Row-major `[classes, ANCHOR_DIM]`, f32-quantized.
    pub data: Vec<f32>,
    pub classes: usize,
}

impl AnchorSet {
    pub fn anchor(&self, c: usize) -> &[f32] {
        &self.data[c * ANCHOR_DIM..(c + 1) * ANCHOR_DIM]
    }

    /// Mean pointwise Euclidean distance between a future and anchor `c`.
    pub fn mean_dist(&self, fut: &[[f32; 2]; FUT_LEN], c: usize) -> f64 {
        let a = self.anchor(c);
        let mut acc = 0.0;
        for (t, p) in fut.iter().enumerate() {
            let dx = p[0] as f64 - a[2 * t] as f64;
            let dy = p[1] as f64 - a[2 * t + 1] as f64;
            acc += (dx * dx + dy * dy).sqrt();
        }
        acc / FUT_LEN as f64
    }

    /// Class of the nearest anchor; ties break to the lowest index.
    pub fn label(&self, fut: &[[f32; 2]; FUT_LEN]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..self.classes {
            let d = self.mean_dist(fut, c);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    /// Anchor `c` read back as waypoints.
    pub fn waypoints(&self, c: usize) -> [[f32; 2]; FUT_LEN] {
        let a = self.anchor(c);
        let mut out = [[0.0f32; 2]; FUT_LEN];
        for (t, p) in out.iter_mut().enumerate() {
            *p = [a[2 * t], a[2 * t + 1]];
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Runs until assignments converge (max centroid shift < 1e-6) or 200
/// iterations. An emptied cluster is reseeded from the point farthest from
/// its current centroid. If any cluster is still empty at convergence the
/// whole fit retries under a fresh seed (logged) — downstream code assumes
/// every class has at least one training representative.
pub fn fit_anchors(futures: &[Vec<f64>], classes: usize, seed: u64) -> AnchorSet {
    assert!(classes >= 1);
    assert!(
        futures.len() >= classes,
        "need at least {classes} futures, got {}",
        futures.len()
    );
    assert!(futures.iter().all(|f| f.len() == ANCHOR_DIM));

    for round in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "anchors").wrapping_add(round));
        let (centroids, ok) = lloyd(futures, classes, &mut rng);
        if ok {
            if round > 0 {
                log::warn!("anchor fit succeeded after {round} reseed(s)");
            }
            let data: Vec<f32> = centroids
                .iter()
                .flat_map(|c| c.iter().map(|&x| x as f32))
                .collect();
            return AnchorSet { data, classes };
        }
        log::warn!("anchor fit round {round} left an empty cluster; reseeding");
    }
    unreachable!("anchor fitting failed 16 times; degenerate input data");
}

fn lloyd(futures: &[Vec<f64>], classes: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, bool) {
    let n = futures.len();

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(classes);
    centroids.push(futures[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = futures.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < classes {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with existing centroids; any pick works.
            rng.gen_range(0..n)
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                u -= d;
                if u < 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centroids.push(futures[next].clone());
        for (i, f) in futures.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(f, centroids.last().unwrap()));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..200 {
        // Assignment step; ties to the lowest index.
        for (i, f) in futures.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let d = sq_dist(f, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assign[i] = best;
        }

        // Update step.
        let mut sums = vec![vec![0.0f64; ANCHOR_DIM]; classes];
        let mut counts = vec![0usize; classes];
        for (i, f) in futures.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i]].iter_mut().zip(f) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..classes {
            if counts[c] == 0 {
                // Reseed from the globally farthest point.
                let far = (0..n)
                    .max_by(|&i, &j| {
                        let di = sq_dist(&futures[i], &centroids[assign[i]]);
                        let dj = sq_dist(&futures[j], &centroids[assign[j]]);
                        di.partial_cmp(&dj).unwrap()
                    })
                    .unwrap();
                shift += sq_dist(&centroids[c], &futures[far]).sqrt();
                centroids[c] = futures[far].clone();
                continue;
            }
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift += sq_dist(&centroids[c], &mean).sqrt();
            centroids[c] = mean;
        }
        if shift < 1e-6 {
            break;
        }
    }

    // Final emptiness check against the converged centroids.
    let mut used = vec![false; classes];
    for f in futures {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, cent) in centroids.iter().enumerate() {
            let d = sq_dist(f, cent);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        used[best] = true;
    }
    let ok = used.iter().all(|&u| u);
    (centroids, ok)
}

/// Sum over points of squared distance to the nearest centroid.
pub fn kmeans_sse(futures: &[Vec<f64>], set: &AnchorSet) -> f64 {
    futures
        .iter()
        .map(|f| {
            (0..set.classes)
                .map(|c| {
                    let a = set.anchor(c);
                    f.iter()
                        .zip(a.iter())
                        .map(|(x, y)| (x - *y as f64) * (x - *y as f64))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

pub fn flatten_future(scene: &Scene) -> Vec<f64> {
    scene
        .future
        .iter()
        .flat_map(|p| [p[0] as f64, p[1] as f64])
        .collect()
}

pub fn save_anchors(
    base: &Path,
    set: &AnchorSet,
    extra_meta: &BTreeMap<String, String>,
    force: bool,
) -> Result<(), GenError> {
    let mut c = Container::new(Payload::F32(set.data.clone()));
    c.set("kind", "anchors");
    c.set("classes", set.classes);
    c.set("anchor_dim", ANCHOR_DIM);
    for (k, v) in extra_meta {
        c.set(k, v);
    }
    persist::write_container(base, &c, force)?;
    Ok(())
}

pub fn load_anchors(base: &Path) -> Result<(AnchorSet, BTreeMap<String, String>), GenError> {
    let c = persist::read_container(base)?;
    let data = c
        .payload
        .as_f32()
        .ok_or_else(|| GenError::InvalidRecord("anchor payload must be f32".into()))?
        .to_vec();
    let classes: usize = c
        .meta
        .get("classes")
        .ok_or_else(|| GenError::InvalidRecord("anchors manifest missing `classes`".into()))?
        .parse()
        .map_err(|e| GenError::InvalidRecord(format!("classes: {e}")))?;
    if data.len() != classes * ANCHOR_DIM {
        return Err(GenError::InvalidRecord(format!(
            "anchor payload holds {} values, expected {}",
            data.len(),
            classes * ANCHOR_DIM
        )));
    }
    Ok((AnchorSet { data, classes }, c.meta))
}
