//! Central-difference gradient checking.

use crate::backward::backward;
use crate::tensor::Tensor;

/// Compare autodiff gradients of `f` against central differences over every
/// coordinate of every tensor in `params`. Returns the worst
/// |autodiff − finite-diff| / max(1, |finite-diff|).
///
/// `f` must rebuild its graph from the same parameter tensors on each call;
/// the checker perturbs parameter storage in place between calls.
pub fn grad_check(f: &mut dyn FnMut() -> Tensor, params: &[Tensor], h: f64) -> f64 {
    grad_check_inner(f, params, h, usize::MAX)
}

/// Like `grad_check`, but probes at most `max_coords` evenly strided
/// coordinates per parameter — the sane option for parameter counts where
/// 2·n forward passes would take minutes.
pub fn grad_check_strided(
    f: &mut dyn FnMut() -> Tensor,
    params: &[Tensor],
    h: f64,
    max_coords: usize,
) -> f64 {
    grad_check_inner(f, params, h, max_coords)
}

fn grad_check_inner(
    f: &mut dyn FnMut() -> Tensor,
    params: &[Tensor],
    h: f64,
    max_coords: usize,
) -> f64 {
    assert!(h > 0.0, "grad_check: step must be positive");
    let loss = f();
    let grads = backward(&loss);
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let ad = grads.wrt(p);
        let base = p.to_vec();
        let n = base.len();
        let stride = if max_coords == usize::MAX || max_coords == 0 {
            1
        } else {
            (n + max_coords - 1) / max_coords
        };
        // Offset per parameter so strided probes don't all hit coordinate 0.
        let start = if stride > 1 { (pi * 7919) % stride } else { 0 };
        let mut i = start;
        while i < n {
            let mut probe = base.clone();
            probe[i] = base[i] + h;
            p.set_data(&probe);
            let fp = f().item();
            probe[i] = base[i] - h;
            p.set_data(&probe);
            let fm = f().item();
            p.set_data(&base);
            assert!(
                fp.is_finite() && fm.is_finite(),
                "grad_check: non-finite perturbation result at param {pi} coord {i}"
            );
            let fd = (fp - fm) / (2.0 * h);
            let err = (ad[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
            i += stride;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_2x() {
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]);
        let loss = x.square().sum();
        let grads = backward(&loss);
        let g = grads.wrt(&x);
        assert_eq!(g, vec![2.0, 4.0, 6.0]);
        let mut f = || x.square().sum();
        let err = grad_check(&mut f, &[x.clone()], 1e-5);
        assert!(err < 1e-7, "err {err}");
    }

    #[test]
    fn log_softplus_checks_out() {
        let x = Tensor::param(&[1], vec![0.5]);
        let mut f = || x.softplus().log().sum();
        let err = grad_check(&mut f, &[x.clone()], 1e-5);
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::param(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        // loss ignores x entirely
        let mut f = || Tensor::scalar(7.0).sum();
        let loss = f();
        let grads = backward(&loss);
        assert!(grads.wrt(&x).iter().all(|&v| v == 0.0));
        let err = grad_check(&mut f, &[x.clone()], 1e-5);
        assert_eq!(err, 0.0);
    }
}
