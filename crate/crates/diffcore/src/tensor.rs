//! Row-major f64 tensors that record the ops applied to them, so a scalar
//! result can be differentiated back to every parameter it depends on.
//!
//! Graphs are built eagerly: each op allocates a new node holding its forward
//! value, its parents, and enough payload to run the adjoint rule later.
//! Nodes are reference-counted and single-threaded; a training step owns its
//! graph and drops it whole once the optimizer has consumed the gradients.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::special;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Sentinel index for gather/scatter positions that fall outside the source
/// (zero-padding on gather, discarded contributions on scatter).
pub const OOB: usize = usize::MAX;

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Neg,
    Relu,
    Tanh,
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Digamma,
    Lgamma,
    /// y = m·x + c elementwise; only the slope matters to the adjoint.
    Affine { m: f64 },
    /// Reduce all elements to a single value.
    Sum,
    /// Reduce one axis (kept or dropped — the flat adjoint layout is the same).
    SumAxis { axis: usize },
    Reshape,
    Concat { axis: usize },
    /// out[i] = src[idx[i]], with OOB reading as 0.
    Gather { idx: Rc<Vec<usize>> },
    /// out[idx[i]] += src[i], with OOB contributions dropped.
    ScatterAdd { idx: Rc<Vec<usize>> },
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    parents: Vec<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Shared handle to one node of the computation graph.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, needs_grad: bool) -> Tensor {
        assert_eq!(
            data.len(),
            numel_of(&shape),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            parents: Vec::new(),
            op: Op::Leaf,
            needs_grad,
        }))
    }

    /// Constant tensor: participates in forward math, receives no gradient.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf: `backward` will produce an adjoint for it.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(shape, vec![0.0; numel_of(shape)])
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::new(shape, vec![v; numel_of(shape)])
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, op: Op) -> Tensor {
        debug_assert_eq!(data.len(), numel_of(&shape));
        let needs_grad = parents.iter().any(|p| p.0.needs_grad);
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            parents,
            op,
            needs_grad,
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    pub(crate) fn op(&self) -> &Op {
        &self.0.op
    }

    pub(crate) fn parents(&self) -> &[Tensor] {
        &self.0.parents
    }

    /// Borrow the forward value.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrite a leaf's value in place (optimizer updates, finite-diff
    /// probes). Only sensible on leaves: op nodes cache forward values that
    /// would go stale.
    pub fn set_data(&self, new: &[f64]) {
        assert!(
            matches!(self.0.op, Op::Leaf),
            "set_data on non-leaf tensor"
        );
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), new.len());
        d.copy_from_slice(new);
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.borrow().iter().all(|v| v.is_finite())
    }

    // ---- elementwise binary ops (right-aligned broadcasting) ----

    pub fn add(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        binary(self, other, Op::Div, |a, b| a / b)
    }

    // ---- elementwise unary ops ----

    pub fn neg(&self) -> Tensor {
        unary(self, Op::Neg, |x| -x)
    }

    pub fn relu(&self) -> Tensor {
        unary(self, Op::Relu, |x| x.max(0.0))
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, Op::Tanh, f64::tanh)
    }

    pub fn softplus(&self) -> Tensor {
        unary(self, Op::Softplus, softplus_f)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, Op::Sigmoid, sigmoid_f)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, Op::Exp, f64::exp)
    }

    pub fn log(&self) -> Tensor {
        unary(self, Op::Log, f64::ln)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, Op::Sqrt, f64::sqrt)
    }

    pub fn square(&self) -> Tensor {
        unary(self, Op::Square, |x| x * x)
    }

    pub fn digamma(&self) -> Tensor {
        unary(self, Op::Digamma, special::digamma)
    }

    pub fn lgamma(&self) -> Tensor {
        unary(self, Op::Lgamma, special::lgamma)
    }

    /// y = m·x + c with scalar constants (free of extra graph nodes).
    pub fn affine(&self, m: f64, c: f64) -> Tensor {
        let data = self.data().iter().map(|&x| m * x + c).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], Op::Affine { m })
    }

    /// Elementwise min(x, cap), differentiable away from the cap.
    pub fn clamp_max(&self, cap: f64) -> Tensor {
        // min(x, c) = c − relu(c − x)
        self.affine(-1.0, cap).relu().affine(-1.0, cap)
    }

    // ---- reductions ----

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![s], vec![self.clone()], Op::Sum)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().affine(1.0 / n, 0.0)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let shape = self.shape();
        assert!(axis < shape.len(), "sum_axis: axis {axis} out of rank {}", shape.len());
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let obase = o * mid * inner;
            let tbase = o * inner;
            for m in 0..mid {
                let row = &src[obase + m * inner..obase + (m + 1) * inner];
                let acc = &mut out[tbase..tbase + inner];
                for (a, r) in acc.iter_mut().zip(row) {
                    *a += r;
                }
            }
        }
        drop(src);
        let mut oshape: Vec<usize> = shape.to_vec();
        if keepdim {
            oshape[axis] = 1;
        } else {
            oshape.remove(axis);
        }
        if oshape.is_empty() {
            oshape.push(1);
        }
        Tensor::from_op(oshape, out, vec![self.clone()], Op::SumAxis { axis })
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Tensor {
        let n = self.shape()[axis] as f64;
        self.sum_axis(axis, keepdim).affine(1.0 / n, 0.0)
    }

    /// Full L2 norm of all elements, smoothed at zero by a 1e-24 floor under
    /// the square root.
    pub fn norm(&self) -> Tensor {
        self.square().sum().affine(1.0, 1e-24).sqrt()
    }

    /// Row-wise L2 norm over the last axis, same smoothing.
    pub fn norm_last(&self) -> Tensor {
        let axis = self.shape().len() - 1;
        self.square().sum_axis(axis, false).affine(1.0, 1e-24).sqrt()
    }

    // ---- shape ops ----

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel_of(shape),
            self.numel(),
            "reshape: cannot view {:?} as {:?}",
            self.shape(),
            shape
        );
        Tensor::from_op(shape.to_vec(), self.to_vec(), vec![self.clone()], Op::Reshape)
    }

    /// out[i] = self.flat[idx[i]] (OOB → 0). `out_shape` must match idx len.
    pub fn gather(&self, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Tensor {
        assert_eq!(numel_of(out_shape), idx.len(), "gather: shape/index mismatch");
        let src = self.data();
        let n = src.len();
        let out: Vec<f64> = idx
            .iter()
            .map(|&j| {
                if j == OOB {
                    0.0
                } else {
                    assert!(j < n, "gather: index {j} out of bounds {n}");
                    src[j]
                }
            })
            .collect();
        drop(src);
        Tensor::from_op(out_shape.to_vec(), out, vec![self.clone()], Op::Gather { idx })
    }

    /// out[idx[i]] += self.flat[i] (OOB → dropped). idx len must equal numel.
    pub fn scatter_add(&self, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Tensor {
        assert_eq!(idx.len(), self.numel(), "scatter_add: index length mismatch");
        let n = numel_of(out_shape);
        let src = self.data();
        let mut out = vec![0.0; n];
        for (&j, &v) in idx.iter().zip(src.iter()) {
            if j != OOB {
                assert!(j < n, "scatter_add: index {j} out of bounds {n}");
                out[j] += v;
            }
        }
        drop(src);
        Tensor::from_op(out_shape.to_vec(), out, vec![self.clone()], Op::ScatterAdd { idx })
    }

    // ---- matmul ----

    /// 2-D matrix product [m,k]·[k,n] → [m,n].
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (sa, sb) = (self.shape(), other.shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = mm_nn(&self.data(), &other.data(), m, k, n);
        Tensor::from_op(vec![m, n], out, vec![self.clone(), other.clone()], Op::Matmul)
    }

    // ---- softmax family (last axis), composite ops ----

    /// log Σ exp over the last axis (keepdim), max-shifted for stability.
    /// The shift is treated as a constant, which leaves both the value and
    /// the derivative exact.
    pub fn logsumexp_last(&self) -> Tensor {
        let axis = self.shape().len() - 1;
        let m = self.detach_max_last();
        self.sub(&m).exp().sum_axis(axis, true).log().add(&m)
    }

    pub fn log_softmax_last(&self) -> Tensor {
        self.sub(&self.logsumexp_last())
    }

    pub fn softmax_last(&self) -> Tensor {
        self.log_softmax_last().exp()
    }

    /// Row maxima over the last axis as a constant (no gradient path).
    fn detach_max_last(&self) -> Tensor {
        let shape = self.shape();
        let inner = shape[shape.len() - 1];
        let rows = self.numel() / inner;
        let src = self.data();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * inner..(r + 1) * inner];
            out.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        let mut oshape = shape.to_vec();
        *oshape.last_mut().unwrap() = 1;
        Tensor::new(&oshape, out)
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat(xs: &[&Tensor], axis: usize) -> Tensor {
    assert!(!xs.is_empty(), "concat of nothing");
    let rank = xs[0].shape().len();
    assert!(axis < rank);
    for t in xs {
        assert_eq!(t.shape().len(), rank, "concat: rank mismatch");
        for d in 0..rank {
            if d != axis {
                assert_eq!(t.shape()[d], xs[0].shape()[d], "concat: extent mismatch off-axis");
            }
        }
    }
    let outer: usize = xs[0].shape()[..axis].iter().product();
    let inner: usize = xs[0].shape()[axis + 1..].iter().product();
    let total_axis: usize = xs.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    let datas: Vec<_> = xs.iter().map(|t| t.data()).collect();
    for o in 0..outer {
        for (t, d) in xs.iter().zip(&datas) {
            let chunk = t.shape()[axis] * inner;
            out.extend_from_slice(&d[o * chunk..(o + 1) * chunk]);
        }
    }
    drop(datas);
    let mut oshape = xs[0].shape().to_vec();
    oshape[axis] = total_axis;
    let parents = xs.iter().map(|t| (*t).clone()).collect();
    Tensor::from_op(oshape, out, parents, Op::Concat { axis })
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.0.id, self.0.shape)
    }
}

// ---- scalar helpers ----

pub(crate) fn softplus_f(x: f64) -> f64 {
    // ln(1 + eˣ) = max(x, 0) + ln1p(e^{−|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---- broadcasting machinery ----

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "broadcast: incompatible shapes {a:?} vs {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Per-axis element strides of `shape` viewed inside `out` (0 on broadcast axes).
pub(crate) fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Walk every position of the broadcast result of `a` vs `b`, calling
/// `f(out_flat, a_flat, b_flat)`.
pub(crate) fn bcast_walk(a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let out = broadcast_shape(a, b);
    let n = numel_of(&out);
    if a == b {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    // Suffix fast path: the smaller operand's shape equals the trailing axes
    // of the larger (covers vectors-vs-matrices and [C,D] vs [B,C,D]).
    let (na, nb) = (numel_of(a), numel_of(b));
    if out == *a && a.len() >= b.len() && a[a.len() - b.len()..] == *b {
        for i in 0..n {
            f(i, i, i % nb);
        }
        return;
    }
    if out == *b && b.len() >= a.len() && b[b.len() - a.len()..] == *a {
        for i in 0..n {
            f(i, i % na, i);
        }
        return;
    }
    // General odometer.
    let sa = bcast_strides(a, &out);
    let sb = bcast_strides(b, &out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for i in 0..n {
        f(i, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let oshape = broadcast_shape(a.shape(), b.shape());
    let mut out = vec![0.0; numel_of(&oshape)];
    {
        let (da, db) = (a.data(), b.data());
        bcast_walk(a.shape(), b.shape(), |i, ia, ib| {
            out[i] = f(da[ia], db[ib]);
        });
    }
    Tensor::from_op(oshape, out, vec![a.clone(), b.clone()], op)
}

fn unary(x: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(x.shape().to_vec(), data, vec![x.clone()], op)
}

// ---- matmul kernels (also used by the backward pass) ----

/// C = A·B, A:[m,k] B:[k,n].
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    c
}

/// C = A·Bᵀ, A:[m,k] B:[n,k].
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv = acc;
        }
    }
    c
}

/// C = Aᵀ·B, A:[k,m] B:[k,n].
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let crow = &mut c[i * n..(i + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::backward;

    #[test]
    fn broadcast_vector_over_matrix() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = Tensor::new(&[3], vec![10.0, 20.0, 30.0]);
        let y = a.add(&v);
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.to_vec(), vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn broadcast_column_over_matrix() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::new(&[2, 1], vec![10.0, 100.0]);
        let y = a.mul(&c);
        assert_eq!(y.to_vec(), vec![10.0, 20.0, 30.0, 400.0, 500.0, 600.0]);
    }

    #[test]
    fn broadcast_grad_reduces_to_operand_shape() {
        let a = Tensor::param(&[2, 3], vec![1.0; 6]);
        let v = Tensor::param(&[3], vec![2.0, 3.0, 4.0]);
        let loss = a.mul(&v).sum();
        let g = backward(&loss);
        assert_eq!(g.wrt(&a), vec![2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.wrt(&v), vec![2.0, 2.0, 2.0]); // each v_j hits both rows
    }

    #[test]
    fn matmul_small_case() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::new(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let y = a.matmul(&b);
        assert_eq!(y.to_vec(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_kernels_agree() {
        // mm_nt/mm_tn against mm_nn with explicit transposes.
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.7 - 1.0).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // [3,4] or [4,3]
        let t = |m: &[f64], r: usize, c: usize| -> Vec<f64> {
            let mut out = vec![0.0; m.len()];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = m[i * c + j];
                }
            }
            out
        };
        // nt: A[2,3] · (B[4,3])ᵀ
        let want = mm_nn(&a, &t(&b, 4, 3), 2, 3, 4);
        assert_eq!(mm_nt(&a, &b, 2, 3, 4), want);
        // tn: (A[3,2])ᵀ · B[3,4]  — reuse `a` viewed as [3,2]
        let want = mm_nn(&t(&a, 3, 2), &b, 2, 3, 4);
        assert_eq!(mm_tn(&a, &b, 2, 3, 4), want);
    }

    #[test]
    fn sum_axis_middle_of_rank3() {
        let x = Tensor::new(&[2, 3, 2], (0..12).map(|i| i as f64).collect());
        let y = x.sum_axis(1, false);
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.to_vec(), vec![6.0, 9.0, 24.0, 27.0]);
        let yk = x.sum_axis(1, true);
        assert_eq!(yk.shape(), &[2, 1, 2]);
        assert_eq!(yk.to_vec(), vec![6.0, 9.0, 24.0, 27.0]);
    }

    #[test]
    fn gather_reads_and_oob_reads_zero() {
        let x = Tensor::new(&[4], vec![10.0, 20.0, 30.0, 40.0]);
        let idx = Rc::new(vec![3usize, 0, OOB, 1]);
        let y = x.gather(idx, &[4]);
        assert_eq!(y.to_vec(), vec![40.0, 10.0, 0.0, 20.0]);
    }

    #[test]
    fn scatter_accumulates_and_drops_oob() {
        let x = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]);
        let idx = Rc::new(vec![1usize, 1, OOB, 0]);
        let y = x.scatter_add(idx, &[3]);
        assert_eq!(y.to_vec(), vec![4.0, 3.0, 0.0]);
    }

    #[test]
    fn concat_along_axis1() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::new(&[2, 1], vec![9.0, 8.0]);
        let y = concat(&[&a, &b], 1);
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_stay_finite_when_shifted() {
        let x = Tensor::new(&[2, 3], vec![1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0]);
        let p = x.softmax_last();
        let d = p.to_vec();
        for r in 0..2 {
            let s: f64 = d[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
            assert!(d[r * 3..(r + 1) * 3].iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }

    #[test]
    fn clamp_max_caps_and_passes_through() {
        let x = Tensor::new(&[3], vec![-1.0, 2.0, 50.0]);
        assert_eq!(x.clamp_max(30.0).to_vec(), vec![-1.0, 2.0, 30.0]);
    }

    #[test]
    fn norm_of_3_4_is_5() {
        let x = Tensor::new(&[2], vec![3.0, 4.0]);
        assert!((x.norm().item() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn norm_last_rowwise() {
        let x = Tensor::new(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]);
        let n = x.norm_last();
        assert_eq!(n.shape(), &[2]);
        assert!((n.to_vec()[0] - 5.0).abs() < 1e-12);
        assert!(n.to_vec()[1] < 1e-11); // smoothed zero, not NaN
    }

    #[test]
    fn reshape_preserves_data() {
        let x = Tensor::new(&[2, 3], (0..6).map(|i| i as f64).collect());
        let y = x.reshape(&[3, 2]);
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    #[should_panic(expected = "broadcast: incompatible shapes")]
    fn incompatible_broadcast_panics() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        let _ = a.add(&b);
    }
}
