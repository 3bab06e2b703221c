//! Radial normalizing flows, evaluated density-only (normalizing
//! direction): `log p(z) = log N(f(z); 0, I) + log |det Jf(z)|`.
//!
//! One [`RadialLayer`] holds the parameters of the *same* layer slot for C
//! flows in parallel, so a whole bank of per-class flows evaluates as a
//! handful of broadcast ops over `[B, C, D]` instead of C separate graphs.
//! A single flow is just the C = 1 case.
//!
//! Parameterization per layer: `α̂ = softplus(α̂_raw)` and
//! `β̂ = −α̂ + softplus(β̂_raw)`, which keeps `β̂ ≥ −α̂` and therefore the
//! map invertible. At init `α̂_raw = β̂_raw = ln(e−1)` so `α̂ = 1`, `β̂ = 0`
//! and the flow starts as the identity.

use diffcore::nn::BatchNorm1d;
use diffcore::Tensor;

const LN_2PI: f64 = 1.8378770664093453;

/// `ln(e - 1)`: softplus⁻¹(1).
pub const RAW_INIT: f64 = 0.5413248546129181;

/// Scale of the `z0` reference-point init.
pub const Z0_INIT_SD: f64 = 0.1;

/// One radial-flow layer replicated across `classes` parallel flows.
#[derive(Debug)]
pub struct RadialLayer {
    /// `[classes, dim]`
    pub z0: Tensor,
    /// `[classes]`
    pub alpha_raw: Tensor,
    /// `[classes]`
    pub beta_raw: Tensor,
}

impl RadialLayer {
    /// Fresh identity-initialized layer; `sample` supplies standard-normal
    /// draws for `z0`.
    pub fn new(classes: usize, dim: usize, sample: &mut dyn FnMut() -> f64) -> RadialLayer {
        let z0: Vec<f64> = (0..classes * dim).map(|_| Z0_INIT_SD * sample()).collect();
        RadialLayer {
            z0: Tensor::param(&[classes, dim], z0),
            alpha_raw: Tensor::param(&[classes], vec![RAW_INIT; classes]),
            beta_raw: Tensor::param(&[classes], vec![RAW_INIT; classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.z0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.z0.shape()[1]
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.z0.clone(), self.alpha_raw.clone(), self.beta_raw.clone()]
    }
}

/// Apply one radial layer to `y: [B, C, D]` (or `[B, 1, D]`, which
/// broadcasts against the layer's C classes).
///
/// Returns `(y', log|det J|)` with shapes `[B, C, D]` and `[B, C]`.
pub fn radial_apply(y: &Tensor, layer: &RadialLayer) -> (Tensor, Tensor) {
    let d = layer.dim();
    let alpha = layer.alpha_raw.softplus(); // [C]
    let beta = layer.beta_raw.softplus().sub(&alpha); // [C], >= -alpha
    let diff = y.sub(&layer.z0); // [B, C, D]
    let r = diff.norm_last(); // [B, C], smoothed at 0
    let h = Tensor::scalar(1.0).div(&alpha.add(&r)); // [B, C]
    let bh = beta.mul(&h); // [B, C]

    let shape = diff.shape().to_vec();
    let bh3 = bh.reshape(&[shape[0], shape[1], 1]);
    let y_next = y.add(&diff.mul(&bh3));

    // (D-1)·log(1 + β̂h) + log(1 + β̂h − β̂ r h²)
    let first = bh.affine(1.0, 1.0).log().affine((d - 1) as f64, 0.0);
    let second = bh.sub(&beta.mul(&r).mul(&h).mul(&h)).affine(1.0, 1.0).log();
    (y_next, first.add(&second))
}

/// Shared fold: push `z3: [B, C|1, D]` through the layer stack and return
/// per-flow log density `[B, C]`.
fn stack_log_density(layers: &[RadialLayer], z3: &Tensor, dim: usize) -> Tensor {
    let mut y = z3.clone();
    let mut logdet: Option<Tensor> = None;
    for layer in layers {
        let (y2, ld) = radial_apply(&y, layer);
        y = y2;
        logdet = Some(match logdet {
            Some(acc) => acc.add(&ld),
            None => ld,
        });
    }
    let base = y
        .square()
        .sum_axis(2, false)
        .affine(-0.5, -0.5 * dim as f64 * LN_2PI);
    match logdet {
        Some(ld) => base.add(&ld),
        None => base,
    }
}

/// A single flow (stack of C = 1 radial layers). Carries no input
/// normalization; that lives in [`FlowBank`].
#[derive(Debug)]
pub struct ClassFlow {
    pub layers: Vec<RadialLayer>,
    pub dim: usize,
}

impl ClassFlow {
    pub fn new(dim: usize, n_layers: usize, sample: &mut dyn FnMut() -> f64) -> ClassFlow {
        ClassFlow {
            layers: (0..n_layers).map(|_| RadialLayer::new(1, dim, sample)).collect(),
            dim,
        }
    }

    /// `z: [N, D]` -> log density `[N]`.
    pub fn log_density(&self, z: &Tensor) -> Tensor {
        let n = z.shape()[0];
        let z3 = z.reshape(&[n, 1, self.dim]);
        stack_log_density(&self.layers, &z3, self.dim).reshape(&[n])
    }

    /// Forward map only: `z: [N, D]` -> `(f(z): [N, D], log|det Jf|: [N])`.
    pub fn transform(&self, z: &Tensor) -> (Tensor, Tensor) {
        let n = z.shape()[0];
        let mut y = z.reshape(&[n, 1, self.dim]);
        let mut logdet = Tensor::zeros(&[n, 1]);
        for layer in &self.layers {
            let (y2, ld) = radial_apply(&y, layer);
            y = y2;
            logdet = logdet.add(&ld);
        }
        (y.reshape(&[n, self.dim]), logdet.reshape(&[n]))
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

/// C per-class flows sharing a batch-norm over the latent input.
pub struct FlowBank {
    pub bn: BatchNorm1d,
    pub layers: Vec<RadialLayer>,
    pub classes: usize,
    pub dim: usize,
}

impl FlowBank {
    pub fn new(
        classes: usize,
        dim: usize,
        n_layers: usize,
        sample: &mut dyn FnMut() -> f64,
    ) -> FlowBank {
        assert!(n_layers >= 1, "a bank needs at least one layer");
        FlowBank {
            bn: BatchNorm1d::new(dim),
            layers: (0..n_layers)
                .map(|_| RadialLayer::new(classes, dim, sample))
                .collect(),
            classes,
            dim,
        }
    }

    /// `z: [B, D]` -> per-class log densities `[B, C]` of the batch-normed
    /// latent.
    pub fn bank_log_densities(&self, z: &Tensor, training: bool) -> Tensor {
        let b = z.shape()[0];
        let zn = self.bn.forward(z, training).reshape(&[b, 1, self.dim]);
        stack_log_density(&self.layers, &zn, self.dim)
    }

    /// Copy of the class-`c` slice as a standalone flow (constants, not
    /// shared parameters). Used to cross-check the vectorized kernel.
    pub fn class_flow(&self, c: usize) -> ClassFlow {
        assert!(c < self.classes);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let z0 = l.z0.data()[c * self.dim..(c + 1) * self.dim].to_vec();
                RadialLayer {
                    z0: Tensor::new(&[1, self.dim], z0),
                    alpha_raw: Tensor::new(&[1], vec![l.alpha_raw.data()[c]]),
                    beta_raw: Tensor::new(&[1], vec![l.beta_raw.data()[c]]),
                }
            })
            .collect();
        ClassFlow {
            layers,
            dim: self.dim,
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.bn.params();
        p.extend(self.layers.iter().flat_map(|l| l.params()));
        p
    }
}

/// Midpoint-rule mass of `exp(log_density)` over the square
/// `[-half_width, half_width]^2`. Diagnostic: a correctly normalized 2-D
/// flow integrates to ~1.
pub fn quadrature_mass(flow: &ClassFlow, half_width: f64, n: usize) -> f64 {
    assert_eq!(flow.dim, 2, "quadrature grid is 2-D");
    let cell = 2.0 * half_width / n as f64;
    let centers: Vec<f64> = (0..n)
        .map(|i| -half_width + (i as f64 + 0.5) * cell)
        .collect();
    let mut total = 0.0;
    // Chunk rows so the (throwaway) graphs stay small.
    let rows_per_chunk = (8192 / n).max(1);
    let mut row = 0;
    while row < n {
        let hi = (row + rows_per_chunk).min(n);
        let mut pts = Vec::with_capacity((hi - row) * n * 2);
        for y in &centers[row..hi] {
            for x in &centers {
                pts.push(*x);
                pts.push(*y);
            }
        }
        let m = pts.len() / 2;
        let ld = flow.log_density(&Tensor::new(&[m, 2], pts));
        total += ld.data().iter().map(|l| l.exp()).sum::<f64>();
        row = hi;
    }
    total * cell * cell
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream};
    use diffcore::{backward, grad_check};
    use rand::Rng;

    fn sampler(tag: &str) -> impl FnMut() -> f64 {
        let mut rng = stream(0xf10b5, tag);
        move || normal(&mut rng)
    }

    /// Flow with parameters pushed well away from the identity init.
    fn random_flow(dim: usize, n_layers: usize, tag: &str) -> ClassFlow {
        let mut rng = stream(0xf10b5, tag);
        let layers = (0..n_layers)
            .map(|_| RadialLayer {
                z0: Tensor::param(
                    &[1, dim],
                    (0..dim).map(|_| 0.5 * normal(&mut rng)).collect(),
                ),
                alpha_raw: Tensor::param(&[1], vec![rng.gen_range(-1.0..2.0)]),
                beta_raw: Tensor::param(&[1], vec![rng.gen_range(-1.0..2.0)]),
            })
            .collect();
        ClassFlow { layers, dim }
    }

    #[test]
    fn empty_stack_is_standard_normal() {
        let flow = ClassFlow {
            layers: vec![],
            dim: 4,
        };
        let ld = flow.log_density(&Tensor::new(&[1, 4], vec![0.0; 4]));
        // -(D/2)·ln(2π) at the origin for D = 4.
        assert!((ld.item() - (-3.675754132818691)).abs() < 1e-12);

        let z = vec![0.3, -1.2, 0.7, 2.0];
        let ld = flow.log_density(&Tensor::new(&[1, 4], z.clone()));
        let manual: f64 =
            z.iter().map(|x| -0.5 * x * x).sum::<f64>() - 2.0 * LN_2PI;
        assert!((ld.item() - manual).abs() < 1e-12);
    }

    #[test]
    fn identity_init_changes_nothing() {
        let mut s = sampler("ident");
        let flow = ClassFlow::new(3, 5, &mut s);
        let z = Tensor::new(&[2, 3], vec![0.4, -0.2, 1.1, -0.8, 0.05, 0.3]);
        let (y, ld) = flow.transform(&z);
        for (a, b) in y.to_vec().iter().zip(z.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
        for l in ld.to_vec() {
            assert!(l.abs() < 1e-12);
        }
    }

    #[test]
    fn bank_matches_per_class_flows() {
        let mut s = sampler("bank");
        let bank = FlowBank::new(5, 4, 3, &mut s);
        // Push parameters off the identity so the check is non-trivial.
        let mut rng = stream(3, "bank-perturb");
        for l in &bank.layers {
            let n = l.alpha_raw.numel();
            l.alpha_raw
                .set_data(&(0..n).map(|_| rng.gen_range(-1.0..2.0)).collect::<Vec<_>>());
            l.beta_raw
                .set_data(&(0..n).map(|_| rng.gen_range(-1.0..2.0)).collect::<Vec<_>>());
        }

        let b = 7;
        let z = Tensor::new(
            &[b, 4],
            (0..b * 4).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.5).collect(),
        );
        // Skip the bank's BN: compare the raw stacked kernel.
        let z3 = z.reshape(&[b, 1, 4]);
        let bank_ld = stack_log_density(&bank.layers, &z3, 4);
        for c in 0..5 {
            let single = bank.class_flow(c);
            let ld = single.log_density(&z);
            for i in 0..b {
                let dv = (bank_ld.data()[i * 5 + c] - ld.data()[i]).abs();
                assert!(dv < 1e-12, "class {c} sample {i}: {dv}");
            }
        }
    }

    #[test]
    fn quadrature_integrates_to_one() {
        let flow = random_flow(2, 8, "quad");
        let mass = quadrature_mass(&flow, 14.0, 560);
        assert!((0.99..=1.01).contains(&mass), "mass {mass}");
    }

    #[test]
    fn logdet_matches_numerical_jacobian() {
        let flow = random_flow(2, 8, "jac");
        let mut rng = stream(42, "jac-points");
        let h = 1e-5;
        for i in 0..100 {
            let p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let (_, ld) = flow.transform(&Tensor::new(&[1, 2], p.to_vec()));
            let analytic = ld.item();

            // Central differences: 4 evaluations around p.
            let mut jac = [[0.0f64; 2]; 2];
            for j in 0..2 {
                let mut hi = p;
                let mut lo = p;
                hi[j] += h;
                lo[j] -= h;
                let (yh, _) = flow.transform(&Tensor::new(&[1, 2], hi.to_vec()));
                let (yl, _) = flow.transform(&Tensor::new(&[1, 2], lo.to_vec()));
                let (yh, yl) = (yh.to_vec(), yl.to_vec());
                for k in 0..2 {
                    jac[k][j] = (yh[k] - yl[k]) / (2.0 * h);
                }
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            assert!(det > 0.0, "point {i}: negative jacobian det {det}");
            let numeric = det.ln();
            let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
            assert!(err < 1e-5, "point {i}: analytic {analytic} vs {numeric}");
        }
    }

    #[test]
    fn log_density_gradients_pass_grad_check() {
        let flow = random_flow(3, 2, "grad");
        let z = Tensor::param(&[4, 3], vec![0.3, -0.2, 0.9, 1.2, 0.0, -0.7, 0.1, 0.4, -1.1, 0.6, -0.3, 0.2]);
        let mut params = vec![z.clone()];
        params.extend(flow.params());
        let w = Tensor::new(&[4], vec![0.7, -0.4, 1.3, 0.2]);
        let mut f = || flow.log_density(&z).mul(&w).sum();
        let err = grad_check(&mut f, &params, 1e-5);
        assert!(err < 1e-5, "grad err {err}");
    }

    #[test]
    fn banked_gradients_flow_to_every_class_row() {
        let mut s = sampler("bankgrad");
        let bank = FlowBank::new(3, 2, 2, &mut s);
        // At the identity init every z0 adjoint carries a factor β̂ = 0, so
        // push β̂ off zero before checking gradient flow.
        for (i, l) in bank.layers.iter().enumerate() {
            l.beta_raw.set_data(&[1.3 + i as f64, 0.2, 2.1]);
        }
        let z = Tensor::param(&[4, 2], vec![0.1, -0.4, 0.8, 0.2, -0.6, 0.9, 0.3, -0.2]);
        let out = bank.bank_log_densities(&z, true).sum();
        let grads = backward(&out);
        for l in &bank.layers {
            let g = grads.wrt(&l.z0);
            assert_eq!(g.len(), 6);
            assert!(g.iter().all(|v| v.abs() > 0.0), "dead class row: {g:?}");
        }
        assert!(grads.get(&z).is_some());
    }
}
