//! N-dimensional tensors on a recorded computation graph, with reverse-mode
//! differentiation whose backward pass is itself made of graph operations.
//!
//! Because every gradient is assembled from the same primitive set that built
//! the forward pass, gradients are differentiable again: calling
//! [`Tensor::backward`] with `create_graph = true` returns tensors that can be
//! fed into further computation and differentiated a second time. That is the
//! property the training loop relies on for the gradient of the spectral
//! regularizer with respect to the parameters.
//!
//! Everything is `f64`. A [`Graph`] is an append-only arena of nodes; node ids
//! are topologically ordered by construction, and all reductions run in fixed
//! left-to-right order, so replaying the same ops yields bit-identical values.
//!
//! ```
//! use jafr::tensor::Graph;
//!
//! let g = Graph::new();
//! let x = g.var(vec![1.0, 2.0, 3.0], &[3]);
//! let y = x.mul(&x).sum(); // y = Σ x²
//! let grad = &y.backward(&[&x], false)[0];
//! assert_eq!(grad.data(), vec![2.0, 4.0, 6.0]);
//! ```

mod backward;
mod kernels;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub(crate) use kernels::{stable_sigmoid, stable_softplus};

pub(crate) type NodeId = usize;

/// How a node was produced. Ids refer to earlier nodes in the same graph.
#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId),
    Reshape(NodeId),
    BroadcastTo(NodeId),
    SumToShape(NodeId),
    Gather { src: NodeId, indices: Rc<[usize]> },
    ScatterAdd { src: NodeId, indices: Rc<[usize]> },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Append-only computation graph. One graph per training step or evaluation
/// batch; graphs are cheap to create and dropped wholesale.
///
/// Not `Send`: a graph lives on one thread. Distinct graphs may run on
/// distinct threads with no shared state.
#[derive(Clone)]
pub struct Graph {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Rc::new(RefCell::new(Vec::new())) }
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { shape, data, op, requires_grad });
        Tensor { graph: self.clone(), id }
    }

    /// A leaf that does not participate in differentiation.
    pub fn constant(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "constant: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        self.push(shape.to_vec(), data, Op::Leaf, false)
    }

    /// A leaf tracked for gradients.
    pub fn var(&self, data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "var: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        self.push(shape.to_vec(), data, Op::Leaf, true)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(vec![v], &[])
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        self.constant(vec![0.0; shape.iter().product()], shape)
    }

    pub fn ones(&self, shape: &[usize]) -> Tensor {
        self.constant(vec![1.0; shape.iter().product()], shape)
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub(crate) fn with_node<R>(&self, id: NodeId, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.nodes.borrow()[id])
    }
}

/// Handle to one node of a [`Graph`]. Cloning is cheap and refers to the same
/// node.
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: NodeId,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.graph.with_node(self.id, |n| {
            f.debug_struct("Tensor")
                .field("id", &self.id)
                .field("shape", &n.shape)
                .field("requires_grad", &n.requires_grad)
                .finish()
        })
    }
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        self.graph.with_node(self.id, |n| n.shape.clone())
    }

    pub fn numel(&self) -> usize {
        self.graph.with_node(self.id, |n| n.data.len())
    }

    /// Copy of the forward value.
    pub fn data(&self) -> Vec<f64> {
        self.graph.with_node(self.id, |n| n.data.clone())
    }

    /// Read access without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        self.graph.with_node(self.id, |n| f(&n.data))
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.graph.with_node(self.id, |n| {
            assert_eq!(n.data.len(), 1, "item() on tensor of shape {:?}", n.shape);
            n.data[0]
        })
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.with_node(self.id, |n| n.requires_grad)
    }

    pub(crate) fn graph(&self) -> &Graph {
        &self.graph
    }

    pub(crate) fn id(&self) -> NodeId {
        self.id
    }

    /// A new constant leaf holding a copy of this tensor's value. Detached
    /// tensors contribute zero gradient everywhere.
    pub fn detach(&self) -> Tensor {
        let (shape, data) = self.graph.with_node(self.id, |n| (n.shape.clone(), n.data.clone()));
        self.graph.push(shape, data, Op::Leaf, false)
    }

    fn unary(
        &self,
        op: impl FnOnce(NodeId) -> Op,
        f: impl Fn(f64) -> f64,
        shape: Vec<usize>,
    ) -> Tensor {
        let (data, rg) =
            self.graph.with_node(self.id, |n| (n.data.iter().map(|&v| f(v)).collect(), n.requires_grad));
        self.graph.push(shape, data, op(self.id), rg)
    }

    fn check_same_graph(&self, rhs: &Tensor) {
        assert!(
            self.graph.same_graph(&rhs.graph),
            "operands belong to different graphs"
        );
    }

    /// Broadcasts both operands to a common shape and applies `combine`
    /// elementwise, recording the op named by `op`.
    fn binary_broadcast(
        &self,
        rhs: &Tensor,
        op: impl FnOnce(NodeId, NodeId) -> Op,
        combine: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        self.check_same_graph(rhs);
        let sa = self.shape();
        let sb = rhs.shape();
        let out_shape = kernels::broadcast_shape(&sa, &sb)
            .unwrap_or_else(|| panic!("incompatible shapes for broadcast: {:?} vs {:?}", sa, sb));
        let a = self.coerce_to(&out_shape);
        let b = rhs.coerce_to(&out_shape);
        let graph = &self.graph;
        let data: Vec<f64> = graph.with_node(a.id, |na| {
            graph.with_node(b.id, |nb| {
                na.data.iter().zip(&nb.data).map(|(&x, &y)| combine(x, y)).collect()
            })
        });
        let rg = graph.with_node(a.id, |n| n.requires_grad)
            || graph.with_node(b.id, |n| n.requires_grad);
        graph.push(out_shape, data, op(a.id, b.id), rg)
    }

    /// Inserts an explicit broadcast node when the shape differs, so that
    /// elementwise ops always see equal shapes and their adjoints stay trivial.
    fn coerce_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        self.broadcast_to(shape)
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        self.binary_broadcast(rhs, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        self.binary_broadcast(rhs, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        self.binary_broadcast(rhs, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, rhs: &Tensor) -> Tensor {
        self.binary_broadcast(rhs, Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Op::Neg, |v| -v, self.shape())
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp, f64::exp, self.shape())
    }

    /// Natural log. The whole tensor must be strictly positive.
    pub fn ln(&self) -> Tensor {
        self.with_data(|d| {
            assert!(
                d.iter().all(|&v| v > 0.0),
                "ln: domain error, input must be strictly positive"
            );
        });
        self.unary(Op::Ln, f64::ln, self.shape())
    }

    pub fn sqrt(&self) -> Tensor {
        self.with_data(|d| {
            assert!(d.iter().all(|&v| v >= 0.0), "sqrt: domain error, input must be non-negative");
        });
        self.unary(Op::Sqrt, f64::sqrt, self.shape())
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |v| v.max(0.0), self.shape())
    }

    pub fn softplus(&self) -> Tensor {
        self.unary(Op::Softplus, stable_softplus, self.shape())
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, stable_sigmoid, self.shape())
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.add(&self.graph.scalar(c))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.mul(&self.graph.scalar(c))
    }

    /// 2-D matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        self.check_same_graph(rhs);
        let sa = self.shape();
        let sb = rhs.shape();
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {:?} x {:?}",
            sa,
            sb
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = self.with_data(|a| rhs.with_data(|b| kernels::matmul(a, b, m, k, n)));
        let rg = self.requires_grad() || rhs.requires_grad();
        self.graph.push(vec![m, n], data, Op::Matmul(self.id, rhs.id), rg)
    }

    /// 2-D transpose.
    pub fn t(&self) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 2, "t(): tensor must be 2-D, got {:?}", s);
        let data = self.with_data(|d| kernels::transpose(d, s[0], s[1]));
        self.graph.push(vec![s[1], s[0]], data, Op::Transpose(self.id), self.requires_grad())
    }

    /// Sum of all elements, as a scalar (shape `[]`).
    pub fn sum(&self) -> Tensor {
        let data = self.with_data(|d| vec![d.iter().fold(0.0, |acc, &v| acc + v)]);
        self.graph.push(vec![], data, Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        assert!(n > 0, "mean of empty tensor");
        self.sum().mul_scalar(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.numel(), "reshape: {:?} -> {:?} changes element count", self.shape(), shape);
        let data = self.data();
        self.graph.push(shape.to_vec(), data, Op::Reshape(self.id), self.requires_grad())
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        let src = self.shape();
        let ok = kernels::broadcast_shape(&src, shape).map(|s| s == shape).unwrap_or(false);
        assert!(ok, "cannot broadcast {:?} to {:?}", src, shape);
        let data = self.with_data(|d| kernels::broadcast_to(d, &src, shape));
        self.graph.push(shape.to_vec(), data, Op::BroadcastTo(self.id), self.requires_grad())
    }

    /// Folds this tensor down to `shape` by summing over axes that would have
    /// been introduced by broadcasting `shape` up to `self.shape()`.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Tensor {
        let src = self.shape();
        let ok = kernels::broadcast_shape(shape, &src).map(|s| s == src).unwrap_or(false);
        assert!(ok, "cannot fold {:?} down to {:?}", src, shape);
        let data = self.with_data(|d| kernels::sum_to_shape(d, &src, shape));
        self.graph.push(shape.to_vec(), data, Op::SumToShape(self.id), self.requires_grad())
    }

    /// `out[i] = self.flat[indices[i]]`, reshaped to `out_shape`. The adjoint
    /// scatter-adds back, so gather/scatter form an exact linear pair.
    pub fn gather(&self, indices: Rc<[usize]>, out_shape: &[usize]) -> Tensor {
        let numel: usize = out_shape.iter().product();
        assert_eq!(numel, indices.len(), "gather: {} indices for shape {:?}", indices.len(), out_shape);
        let src_len = self.numel();
        assert!(
            indices.iter().all(|&i| i < src_len),
            "gather: index out of bounds (source has {} elements)",
            src_len
        );
        let data = self.with_data(|d| indices.iter().map(|&i| d[i]).collect());
        self.graph.push(
            out_shape.to_vec(),
            data,
            Op::Gather { src: self.id, indices },
            self.requires_grad(),
        )
    }

    /// `out[indices[i]] += self.flat[i]` into a fresh zero tensor of
    /// `out_shape`. Adjoint of [`Tensor::gather`] with the same indices.
    pub fn scatter_add(&self, indices: Rc<[usize]>, out_shape: &[usize]) -> Tensor {
        assert_eq!(
            self.numel(),
            indices.len(),
            "scatter_add: {} indices for {} source elements",
            indices.len(),
            self.numel()
        );
        let out_len: usize = out_shape.iter().product();
        assert!(indices.iter().all(|&i| i < out_len), "scatter_add: index out of bounds");
        let data = self.with_data(|d| {
            let mut out = vec![0.0; out_len];
            for (&v, &i) in d.iter().zip(indices.iter()) {
                out[i] += v;
            }
            out
        });
        self.graph.push(
            out_shape.to_vec(),
            data,
            Op::ScatterAdd { src: self.id, indices },
            self.requires_grad(),
        )
    }

    /// Sum over the last axis of a 2-D tensor: n×k → n×1. Implemented as a
    /// matmul with a ones column so its adjoint is exact at every order.
    pub fn row_sums(&self) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 2, "row_sums: tensor must be 2-D");
        self.matmul(&self.graph.ones(&[s[1], 1]))
    }

    /// Per-row maximum of a 2-D tensor, returned as a detached n×1 constant.
    ///
    /// Only used as the shift in log-sum-exp, where the shifted expression is
    /// identically equal for any shift value, so treating it as a constant is
    /// exact at every order of differentiation.
    pub fn row_max_detached(&self) -> Tensor {
        let s = self.shape();
        assert_eq!(s.len(), 2, "row_max_detached: tensor must be 2-D");
        let (n, k) = (s[0], s[1]);
        assert!(k > 0, "row_max_detached: empty rows");
        let data = self.with_data(|d| {
            (0..n)
                .map(|r| d[r * k..(r + 1) * k].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
                .collect()
        });
        self.graph.constant(data, &[n, 1])
    }

    /// Row-wise log(Σ exp) of a 2-D tensor, n×k → n×1, max-shifted for
    /// stability.
    pub fn logsumexp_rows(&self) -> Tensor {
        let m = self.row_max_detached();
        let shifted = self.sub(&m);
        shifted.exp().row_sums().ln().add(&m)
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax_rows(&self) -> Tensor {
        let lse = self.logsumexp_rows();
        self.sub(&lse).exp()
    }
}

macro_rules! ref_binop {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait<&Tensor> for &Tensor {
            type Output = Tensor;
            fn $method(self, rhs: &Tensor) -> Tensor {
                Tensor::$method(self, rhs)
            }
        }
    };
}

ref_binop!(Add, add);
ref_binop!(Sub, sub);
ref_binop!(Mul, mul);
ref_binop!(Div, div);

impl std::ops::Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        Tensor::neg(self)
    }
}

impl std::ops::Mul<f64> for &Tensor {
    type Output = Tensor;
    fn mul(self, c: f64) -> Tensor {
        self.mul_scalar(c)
    }
}

impl std::ops::Add<f64> for &Tensor {
    type Output = Tensor;
    fn add(self, c: f64) -> Tensor {
        self.add_scalar(c)
    }
}
