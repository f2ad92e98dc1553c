//! Eager reverse-mode tape.
//!
//! A [`Graph`] records one forward computation; [`Graph::backward`] replays
//! it in reverse, producing gradients for every node that influences the
//! root. Graphs are cheap to build and are recreated per forward pass.

use super::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(pub(crate) usize);

type GradFn<T> = Box<dyn FnOnce(&Tensor<T>) -> Vec<Tensor<T>>>;

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) parents: Vec<Value>,
    /// Maps the node's output gradient to one gradient per parent, aligned
    /// with `parents`. `None` for leaves.
    pub(crate) grad_fn: Option<GradFn<T>>,
}

/// Tape of one forward computation.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input node (parameter, data, or constant).
    pub fn leaf(&mut self, value: Tensor<T>) -> Value {
        self.push(value, Vec::new(), None)
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Value>,
        grad_fn: Option<GradFn<T>>,
    ) -> Value {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            parents,
            grad_fn,
        });
        Value(id)
    }

    /// The forward value computed at `v`.
    pub fn value(&self, v: Value) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Reverse-mode sweep from a one-element root.
    ///
    /// Nodes recorded after the root, or not influencing it, receive no
    /// gradient. The tape is consumed: a second sweep over the same graph
    /// panics with "backward before forward".
    pub fn backward(&mut self, root: Value) -> Gradients<T> {
        assert!(
            !self.consumed,
            "backward before forward: this tape was already swept; record a new forward pass"
        );
        self.consumed = true;
        assert_eq!(
            self.nodes[root.0].value.numel(),
            1,
            "backward root must be a one-element tensor"
        );
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(
            self.nodes[root.0].value.shape().to_vec(),
            T::ONE,
        ));
        for id in (0..=root.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            if self.nodes[id].grad_fn.is_none() {
                continue; // leaf
            }
            let grad_fn = self.nodes[id].grad_fn.take().expect("grad_fn taken twice");
            let g = grads[id].clone().unwrap();
            let parent_grads = grad_fn(&g);
            assert_eq!(
                parent_grads.len(),
                self.nodes[id].parents.len(),
                "grad_fn arity mismatch at node {id}"
            );
            for (p, pg) in self.nodes[id].parents.clone().into_iter().zip(parent_grads) {
                assert_eq!(
                    pg.shape(),
                    self.nodes[p.0].value.shape(),
                    "gradient shape mismatch for parent {p:?}"
                );
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of a backward sweep: one optional gradient per node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient at `v`, if `v` influenced the root.
    pub fn get(&self, v: Value) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient at `v`, panicking if none was produced.
    pub fn wrt(&self, v: Value) -> &Tensor<T> {
        self.get(v)
            .unwrap_or_else(|| panic!("no gradient recorded for {v:?}"))
    }

    /// Gradient at `v`, or zeros of the given shape when `v` did not
    /// influence the root (e.g. an unused parameter).
    pub fn wrt_or_zeros(&self, v: Value, shape: &[usize]) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}
