//! Reverse pass. Walks node ids from the root downward and emits each op's
//! adjoint as ordinary graph ops, so the returned gradients are themselves
//! differentiable when `create_graph` is set.

use super::{Graph, NodeId, Op, Tensor};

impl Graph {
    pub(crate) fn handle(&self, id: NodeId) -> Tensor {
        Tensor { graph: self.clone(), id }
    }
}

impl Tensor {
    /// Gradients of this scalar with respect to each tensor in `wrt`.
    ///
    /// Every `wrt` entry must be a leaf of this tensor's graph. With
    /// `create_graph` the results stay attached and can be differentiated
    /// again (the backward pass itself is recorded); without it they are
    /// returned as detached constants. Leaves that the root does not depend
    /// on get a zero gradient.
    pub fn backward(&self, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
        assert_eq!(self.numel(), 1, "backward: root must be scalar, got shape {:?}", self.shape());
        let g = self.graph().clone();
        for w in wrt {
            assert!(g.same_graph(w.graph()), "backward: wrt tensor is not in this graph");
            assert!(
                g.with_node(w.id(), |n| matches!(n.op, Op::Leaf)),
                "backward: wrt tensor must be a graph leaf"
            );
        }

        let root = self.id();
        let mut grads: Vec<Option<Tensor>> = vec![None; root + 1];
        grads[root] = Some(g.ones(&self.shape()));

        for id in (0..=root).rev() {
            let Some(grad) = grads[id].clone() else { continue };
            if !g.with_node(id, |n| n.requires_grad) {
                continue;
            }
            let op = g.with_node(id, |n| n.op.clone());
            let out = g.handle(id);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&g, &mut grads, a, || grad.clone());
                    accumulate(&g, &mut grads, b, || grad.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&g, &mut grads, a, || grad.clone());
                    accumulate(&g, &mut grads, b, || grad.neg());
                }
                Op::Mul(a, b) => {
                    accumulate(&g, &mut grads, a, || grad.mul(&g.handle(b)));
                    accumulate(&g, &mut grads, b, || grad.mul(&g.handle(a)));
                }
                Op::Div(a, b) => {
                    // out = a / b: da = g/b, db = -g*out/b
                    accumulate(&g, &mut grads, a, || grad.div(&g.handle(b)));
                    accumulate(&g, &mut grads, b, || grad.mul(&out).div(&g.handle(b)).neg());
                }
                Op::Neg(a) => accumulate(&g, &mut grads, a, || grad.neg()),
                Op::Exp(a) => accumulate(&g, &mut grads, a, || grad.mul(&out)),
                Op::Ln(a) => accumulate(&g, &mut grads, a, || grad.div(&g.handle(a))),
                Op::Sqrt(a) => {
                    accumulate(&g, &mut grads, a, || grad.div(&out.mul_scalar(2.0)));
                }
                Op::Relu(a) => {
                    // Piecewise-constant slope enters as a detached mask.
                    accumulate(&g, &mut grads, a, || {
                        let (shape, mask) = g.with_node(a, |n| {
                            (
                                n.shape.clone(),
                                n.data.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
                            )
                        });
                        grad.mul(&g.constant(mask, &shape))
                    });
                }
                Op::Softplus(a) => {
                    accumulate(&g, &mut grads, a, || grad.mul(&g.handle(a).sigmoid()));
                }
                Op::Sigmoid(a) => {
                    // dσ = σ(1-σ), written on the forward output node.
                    accumulate(&g, &mut grads, a, || {
                        grad.mul(&out).mul(&g.scalar(1.0).sub(&out))
                    });
                }
                Op::Matmul(a, b) => {
                    accumulate(&g, &mut grads, a, || grad.matmul(&g.handle(b).t()));
                    accumulate(&g, &mut grads, b, || g.handle(a).t().matmul(&grad));
                }
                Op::Transpose(a) => accumulate(&g, &mut grads, a, || grad.t()),
                Op::Sum(a) => {
                    let shape = g.with_node(a, |n| n.shape.clone());
                    accumulate(&g, &mut grads, a, || grad.broadcast_to(&shape));
                }
                Op::Reshape(a) => {
                    let shape = g.with_node(a, |n| n.shape.clone());
                    accumulate(&g, &mut grads, a, || grad.reshape(&shape));
                }
                Op::BroadcastTo(a) => {
                    let shape = g.with_node(a, |n| n.shape.clone());
                    accumulate(&g, &mut grads, a, || grad.sum_to_shape(&shape));
                }
                Op::SumToShape(a) => {
                    let shape = g.with_node(a, |n| n.shape.clone());
                    accumulate(&g, &mut grads, a, || grad.broadcast_to(&shape));
                }
                Op::Gather { src, indices } => {
                    let shape = g.with_node(src, |n| n.shape.clone());
                    accumulate(&g, &mut grads, src, || grad.scatter_add(indices.clone(), &shape));
                }
                Op::ScatterAdd { src, indices } => {
                    let shape = g.with_node(src, |n| n.shape.clone());
                    accumulate(&g, &mut grads, src, || grad.gather(indices.clone(), &shape));
                }
            }
        }

        wrt.iter()
            .map(|w| {
                let got = grads.get(w.id()).cloned().flatten();
                let grad = got.unwrap_or_else(|| g.zeros(&w.shape()));
                if create_graph {
                    grad
                } else {
                    grad.detach()
                }
            })
            .collect()
    }
}

fn accumulate(
    g: &Graph,
    grads: &mut [Option<Tensor>],
    parent: NodeId,
    contrib: impl FnOnce() -> Tensor,
) {
    if !g.with_node(parent, |n| n.requires_grad) {
        return;
    }
    let c = contrib();
    grads[parent] = Some(match grads[parent].take() {
        None => c,
        Some(existing) => existing.add(&c),
    });
}
