//! Dirichlet posterior math for evidential classification.
//!
//! A class-conditional density r(z|c) scaled by a per-class certainty
//! budget N_c yields pseudo-counts β_c = N_c·r(z|c); the posterior over
//! class probabilities is Dir(1 + β). Training minimizes
//! −E[log ξ_label] + kl_scale·KL(Dir(α) ‖ Dir(1)), both in closed form.
//!
//! Everything exists twice: a plain-f64 route used at evaluation time and
//! for oracles, and a batched graph route used inside training losses. The
//! two are equality-tested against each other.

use diffcore::special::{digamma, lgamma};
use diffcore::Tensor;
use std::rc::Rc;

/// Log pseudo-counts are clamped here before exponentiation; beyond this
/// the ELBO is numerically saturated anyway.
pub const LOG_BETA_CAP: f64 = 30.0;

/// Default total certainty budget: e^6.
pub fn default_budget_total() -> f64 {
    std::f64::consts::E.powi(6)
}

/// Per-class certainty budget, split proportional to training-class
/// frequency. Zero-count classes get exactly zero budget and therefore
/// can never accumulate evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct CertaintyBudget {
    pub n_c: Vec<f64>,
}

pub fn certainty_budget(counts: &[u64], total: f64) -> CertaintyBudget {
    assert!(total > 0.0);
    let sum: u64 = counts.iter().sum();
    assert!(sum > 0, "cannot split a budget over zero observations");
    CertaintyBudget {
        n_c: counts
            .iter()
            .map(|&c| total * c as f64 / sum as f64)
            .collect(),
    }
}

impl CertaintyBudget {
    /// ln N_c with a large-negative sentinel for empty classes, so the
    /// graph route stays finite (exp underflows to exactly 0).
    pub fn log_n(&self) -> Vec<f64> {
        self.n_c
            .iter()
            .map(|&n| if n > 0.0 { n.ln() } else { -1e30 })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletParams {
    pub alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Self {
        assert!(alpha.iter().all(|&a| a > 0.0), "alpha must be positive");
        DirichletParams { alpha }
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// β_c = exp(min(ln N_c + log r_c, cap)). Returns the pseudo-counts and
/// whether any entry hit the cap (callers log the event).
pub fn pseudo_counts(log_r: &[f64], budget: &CertaintyBudget) -> (Vec<f64>, bool) {
    assert_eq!(log_r.len(), budget.n_c.len());
    let mut clamped = false;
    let beta = log_r
        .iter()
        .zip(&budget.n_c)
        .map(|(&lr, &n)| {
            if n == 0.0 {
                return 0.0;
            }
            let l = n.ln() + lr;
            if l > LOG_BETA_CAP {
                clamped = true;
                LOG_BETA_CAP.exp()
            } else {
                l.exp()
            }
        })
        .collect();
    (beta, clamped)
}

pub fn posterior(beta: &[f64]) -> DirichletParams {
    DirichletParams::new(beta.iter().map(|b| 1.0 + b).collect())
}

/// Elementwise mean of per-branch posteriors.
pub fn aggregate(branches: &[&DirichletParams]) -> DirichletParams {
    assert!(!branches.is_empty());
    let c = branches[0].classes();
    assert!(branches.iter().all(|b| b.classes() == c));
    let mut alpha = vec![0.0; c];
    for b in branches {
        for (acc, a) in alpha.iter_mut().zip(&b.alpha) {
            *acc += a;
        }
    }
    for a in alpha.iter_mut() {
        *a /= branches.len() as f64;
    }
    DirichletParams::new(alpha)
}

/// Posterior-mean class probabilities ξ̄_c = α_c / α₀.
pub fn categorical_mean(dp: &DirichletParams) -> Vec<f64> {
    let a0 = dp.alpha0();
    dp.alpha.iter().map(|a| a / a0).collect()
}

/// Most probable class; ties break to the lowest index.
pub fn predict(dp: &DirichletParams) -> usize {
    let mut best = 0;
    for (c, a) in dp.alpha.iter().enumerate() {
        if *a > dp.alpha[best] {
            best = c;
        }
    }
    best
}

/// E_{ξ~Dir(α)}[log ξ_label] = ψ(α_label) − ψ(α₀).
pub fn expected_loglik(dp: &DirichletParams, label: usize) -> f64 {
    digamma(dp.alpha[label]) - digamma(dp.alpha0())
}

/// KL(Dir(α) ‖ Dir(1,…,1)), closed form.
pub fn kl_to_uniform(dp: &DirichletParams) -> f64 {
    let c = dp.classes();
    let a0 = dp.alpha0();
    let d0 = digamma(a0);
    let mut kl = lgamma(a0) - lgamma(c as f64);
    for &a in &dp.alpha {
        kl -= lgamma(a);
        kl += (a - 1.0) * (digamma(a) - d0);
    }
    kl
}

/// Per-sample training objective: −E[log ξ_label] + kl_scale·KL.
pub fn elbo_loss(dp: &DirichletParams, label: usize, kl_scale: f64) -> f64 {
    -expected_loglik(dp, label) + kl_scale * kl_to_uniform(dp)
}

/// Differential entropy of Dir(α).
pub fn dirichlet_entropy(dp: &DirichletParams) -> f64 {
    let c = dp.classes();
    let a0 = dp.alpha0();
    let d0 = digamma(a0);
    let mut h = -lgamma(a0) + (a0 - c as f64) * d0;
    for &a in &dp.alpha {
        h += lgamma(a);
        h -= (a - 1.0) * digamma(a);
    }
    h
}

/// Shannon entropy of a categorical distribution (0·log 0 := 0).
pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

// ---------------------------------------------------------------------------
// Graph route (batched, differentiable)
// ---------------------------------------------------------------------------

/// α = 1 + exp(min(log r + ln N, cap)) over a `[B, C]` batch of per-class
/// log densities. `log_budget` is the (constant) tensor of
/// [`CertaintyBudget::log_n`].
pub fn posterior_graph(log_r: &Tensor, log_budget: &Tensor) -> Tensor {
    let lb = log_r.add(log_budget);
    if lb.data().iter().any(|&v| v > LOG_BETA_CAP) {
        log::warn!("pseudo-count log clamped at {LOG_BETA_CAP}");
    }
    lb.clamp_max(LOG_BETA_CAP).exp().affine(1.0, 1.0)
}

/// Per-sample ELBO losses `[B]` for a batch of posteriors `alpha: [B, C]`.
pub fn elbo_graph(alpha: &Tensor, labels: &[usize], kl_scale: f64) -> Tensor {
    let (b, c) = (alpha.shape()[0], alpha.shape()[1]);
    assert_eq!(labels.len(), b);
    let alpha0 = alpha.sum_axis(1, false); // [B]
    let d0 = alpha0.digamma(); // [B]

    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * c + l).collect();
    let a_label = alpha.gather(Rc::new(idx), &[b]);
    let ell = a_label.digamma().sub(&d0); // [B]

    let d0_col = d0.reshape(&[b, 1]);
    let kl = alpha0
        .lgamma()
        .sub(&alpha.lgamma().sum_axis(1, false))
        .affine(1.0, -lgamma(c as f64))
        .add(
            &alpha
                .affine(1.0, -1.0)
                .mul(&alpha.digamma().sub(&d0_col))
                .sum_axis(1, false),
        );
    ell.neg().add(&kl.affine(kl_scale, 0.0))
}

/// Branch-loss weights for the composite objective
/// `mean(ELBO) + λ_a·rec_agent + λ_m·rec_map + λ_s·rec_scene`.
#[derive(Clone, Debug)]
pub struct LossWeights {
    pub lambda_agent: f64,
    pub lambda_map: f64,
    pub lambda_sc: f64,
    pub kl_scale: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_agent: 1.0,
            lambda_map: 1.0,
            lambda_sc: 10.0,
            kl_scale: 1e-5,
        }
    }
}

/// Scalar composite loss from scalar parts.
pub fn total_loss(
    elbo_mean: &Tensor,
    rec_agent: &Tensor,
    rec_map: &Tensor,
    rec_sc: &Tensor,
    w: &LossWeights,
) -> Tensor {
    elbo_mean
        .add(&rec_agent.affine(w.lambda_agent, 0.0))
        .add(&rec_map.affine(w.lambda_map, 0.0))
        .add(&rec_sc.affine(w.lambda_sc, 0.0))
}
