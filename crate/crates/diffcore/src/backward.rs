//! Reverse-mode sweep: topological sort from a scalar loss, then one adjoint
//! rule per op, children before parents, each node visited exactly once.

use std::collections::{HashMap, HashSet};

use crate::special;
use crate::tensor::{bcast_walk, mm_nt, mm_tn, sigmoid_f, Op, Tensor, OOB};

/// Adjoints keyed by tensor id. Interior-node entries are dropped as the
/// sweep consumes them; what remains addresses the leaves.
#[derive(Default)]
pub struct Grads {
    map: HashMap<u64, Vec<f64>>,
}

impl Grads {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    /// Adjoint of `t`, or zeros if the loss never touched it.
    pub fn wrt(&self, t: &Tensor) -> Vec<f64> {
        self.map
            .get(&t.id())
            .cloned()
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Differentiate a scalar loss with respect to every trainable leaf that
/// contributed to it.
pub fn backward(loss: &Tensor) -> Grads {
    assert_eq!(loss.numel(), 1, "backward requires a scalar loss");
    let mut grads = Grads::default();
    if !loss.needs_grad() {
        return grads;
    }

    // Iterative post-order DFS over the needs-grad subgraph.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id());
    while let Some((node, pi)) = stack.pop() {
        let parents = node.parents();
        if pi < parents.len() {
            stack.push((node.clone(), pi + 1));
            let p = &parents[pi];
            if p.needs_grad() && visited.insert(p.id()) {
                stack.push((p.clone(), 0));
            }
        } else {
            order.push(node);
        }
    }

    grads.map.insert(loss.id(), vec![1.0]);
    for node in order.iter().rev() {
        if matches!(node.op(), Op::Leaf) {
            continue;
        }
        // All children sit later in `order`, so this adjoint is complete;
        // take it out to free interior entries as the sweep descends.
        let Some(g) = grads.map.remove(&node.id()) else {
            continue;
        };
        apply_rule(node, &g, &mut grads.map);
    }
    grads
}

fn acc_into<'m>(
    map: &'m mut HashMap<u64, Vec<f64>>,
    t: &Tensor,
) -> Option<&'m mut Vec<f64>> {
    if !t.needs_grad() {
        return None;
    }
    Some(map.entry(t.id()).or_insert_with(|| vec![0.0; t.numel()]))
}

fn apply_rule(node: &Tensor, g: &[f64], map: &mut HashMap<u64, Vec<f64>>) {
    let parents = node.parents();
    match node.op().clone() {
        Op::Leaf => {}
        Op::Add => {
            binary_rule(node, g, map, |_, _| 1.0, |_, _| 1.0);
        }
        Op::Sub => {
            binary_rule(node, g, map, |_, _| 1.0, |_, _| -1.0);
        }
        Op::Mul => {
            binary_rule(node, g, map, |_, b| b, |a, _| a);
        }
        Op::Div => {
            binary_rule(node, g, map, |_, b| 1.0 / b, |a, b| -a / (b * b));
        }
        Op::Matmul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.needs_grad() {
                let da = mm_nt(g, &b.data(), m, n, k);
                add_assign(acc_into(map, a), &da);
            }
            if b.needs_grad() {
                let db = mm_tn(&a.data(), g, k, m, n);
                add_assign(acc_into(map, b), &db);
            }
        }
        Op::Neg => unary_rule(node, g, map, |_, _| -1.0),
        Op::Relu => unary_rule(node, g, map, |x, _| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::Tanh => unary_rule(node, g, map, |_, y| 1.0 - y * y),
        Op::Softplus => unary_rule(node, g, map, |x, _| sigmoid_f(x)),
        Op::Sigmoid => unary_rule(node, g, map, |_, y| y * (1.0 - y)),
        Op::Exp => unary_rule(node, g, map, |_, y| y),
        Op::Log => unary_rule(node, g, map, |x, _| 1.0 / x),
        Op::Sqrt => unary_rule(node, g, map, |_, y| 0.5 / y),
        Op::Square => unary_rule(node, g, map, |x, _| 2.0 * x),
        Op::Digamma => unary_rule(node, g, map, |x, _| special::trigamma(x)),
        Op::Lgamma => unary_rule(node, g, map, |x, _| special::digamma(x)),
        Op::Affine { m } => unary_rule(node, g, map, |_, _| m),
        Op::Sum => {
            let p = &parents[0];
            if let Some(acc) = acc_into(map, p) {
                for v in acc.iter_mut() {
                    *v += g[0];
                }
            }
        }
        Op::SumAxis { axis } => {
            let p = &parents[0];
            let shape = p.shape();
            let outer: usize = shape[..axis].iter().product();
            let mid = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            if let Some(acc) = acc_into(map, p) {
                for o in 0..outer {
                    let grow = &g[o * inner..(o + 1) * inner];
                    for m in 0..mid {
                        let arow = &mut acc[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                        for (a, gv) in arow.iter_mut().zip(grow) {
                            *a += gv;
                        }
                    }
                }
            }
        }
        Op::Reshape => {
            add_assign(acc_into(map, &parents[0]), g);
        }
        Op::Concat { axis } => {
            let outer: usize = node.shape()[..axis].iter().product();
            let inner: usize = node.shape()[axis + 1..].iter().product();
            let mut axis_offset = 0usize;
            let total_axis = node.shape()[axis];
            for p in parents {
                let pa = p.shape()[axis];
                if let Some(acc) = acc_into(map, p) {
                    for o in 0..outer {
                        let gbase = (o * total_axis + axis_offset) * inner;
                        let abase = o * pa * inner;
                        let chunk = pa * inner;
                        for j in 0..chunk {
                            acc[abase + j] += g[gbase + j];
                        }
                    }
                }
                axis_offset += pa;
            }
        }
        Op::Gather { idx } => {
            let p = &parents[0];
            if let Some(acc) = acc_into(map, p) {
                for (i, &j) in idx.iter().enumerate() {
                    if j != OOB {
                        acc[j] += g[i];
                    }
                }
            }
        }
        Op::ScatterAdd { idx } => {
            let p = &parents[0];
            if let Some(acc) = acc_into(map, p) {
                for (i, &j) in idx.iter().enumerate() {
                    if j != OOB {
                        acc[i] += g[j];
                    }
                }
            }
        }
    }
}

fn add_assign(acc: Option<&mut Vec<f64>>, g: &[f64]) {
    if let Some(acc) = acc {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += v;
        }
    }
}

/// Elementwise unary: d(parent) += g · factor(x, y) with x the input value
/// and y the node's own cached output.
fn unary_rule(
    node: &Tensor,
    g: &[f64],
    map: &mut HashMap<u64, Vec<f64>>,
    factor: impl Fn(f64, f64) -> f64,
) {
    let p = &node.parents()[0];
    if !p.needs_grad() {
        return;
    }
    let x = p.data();
    let y = node.data();
    let acc = map.entry(p.id()).or_insert_with(|| vec![0.0; x.len()]);
    for i in 0..g.len() {
        acc[i] += g[i] * factor(x[i], y[i]);
    }
}

/// Broadcast-aware binary: per output position, multiply the incoming
/// adjoint by each side's local factor and accumulate into that side at its
/// broadcast-mapped index.
fn binary_rule(
    node: &Tensor,
    g: &[f64],
    map: &mut HashMap<u64, Vec<f64>>,
    fa: impl Fn(f64, f64) -> f64,
    fb: impl Fn(f64, f64) -> f64,
) {
    let parents = node.parents();
    let (a, b) = (&parents[0], &parents[1]);
    let same = a.id() == b.id();
    let (na, nb) = (a.numel(), b.numel());
    let mut da = if a.needs_grad() { vec![0.0; na] } else { Vec::new() };
    let mut db = if b.needs_grad() && !same { vec![0.0; nb] } else { Vec::new() };
    {
        let (xa, xb) = (a.data(), b.data());
        let (grad_a, grad_b) = (a.needs_grad(), b.needs_grad());
        bcast_walk(a.shape(), b.shape(), |i, ia, ib| {
            let gv = g[i];
            if grad_a {
                da[ia] += gv * fa(xa[ia], xb[ib]);
                if same {
                    da[ib] += gv * fb(xa[ia], xb[ib]);
                }
            }
            if grad_b && !same {
                db[ib] += gv * fb(xa[ia], xb[ib]);
            }
        });
    }
    if !da.is_empty() {
        add_assign(acc_into(map, a), &da);
    }
    if !db.is_empty() {
        add_assign(acc_into(map, b), &db);
    }
}
