//! Dense f64 tensors with reverse-mode automatic differentiation, the layer
//! builders needed for small conv nets, Adam, and special functions
//! (digamma / lgamma) with exact adjoints.
//!
//! Everything is 64-bit and single-threaded by design: the models trained on
//! top of this crate are desk-scale, and f64 makes tight gradient-check
//! tolerances meaningful. Graph construction is eager; see [`Tensor`] for op
//! coverage and [`backward`] for differentiation.

mod adam;
mod backward;
mod check;
pub mod nn;
pub mod special;
mod tensor;

pub use adam::Adam;
pub use backward::{backward, Grads};
pub use check::{grad_check, grad_check_strided};
pub use tensor::{concat, Tensor, OOB};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero_is_exact() {
        let x = Tensor::param(&[1], vec![0.0]);
        let y = x.tanh();
        assert_eq!(y.item(), 0.0);
        let grads = backward(&y.sum());
        assert_eq!(grads.wrt(&x), vec![1.0]);
    }

    #[test]
    fn graph_digamma_recurrence() {
        let two = Tensor::new(&[1], vec![2.0]);
        let one = Tensor::new(&[1], vec![1.0]);
        let d = two.digamma().sub(&one.digamma()).item();
        assert!((d - 1.0).abs() <= 1e-10, "got {d}");
    }

    #[test]
    fn adjoint_linearity_sum_of_losses() {
        // backward(f + g) == backward(f) + backward(g), elementwise.
        let x = Tensor::param(&[4], vec![0.3, -0.8, 1.2, 2.1]);
        let f = x.tanh().sum();
        let g = x.square().mean();
        let gf = backward(&f);
        let gg = backward(&g);
        let gsum = backward(&f.add(&g).sum());
        let lhs = gsum.wrt(&x);
        let rhs: Vec<f64> = gf
            .wrt(&x)
            .iter()
            .zip(gg.wrt(&x))
            .map(|(a, b)| a + b)
            .collect();
        for (l, r) in lhs.iter().zip(&rhs) {
            assert!((l - r).abs() < 1e-12, "{lhs:?} vs {rhs:?}");
        }
    }

    #[test]
    fn backward_visits_shared_subgraph_once() {
        // y = x·x via the same tensor twice must give d/dx = 2x, not 4x.
        let x = Tensor::param(&[2], vec![3.0, -2.0]);
        let y = x.mul(&x).sum();
        let g = backward(&y);
        assert_eq!(g.wrt(&x), vec![6.0, -4.0]);
    }

    #[test]
    #[should_panic(expected = "matmul: incompatible shapes")]
    fn matmul_shape_mismatch_panics() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let _ = a.matmul(&b);
    }
}
