use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use ndarray::Array2;

use crate::ops::Op;

pub(crate) struct Node {
    pub(crate) value: Rc<Array2<f64>>,
    pub(crate) op: Op,
    pub(crate) parents: Vec<Var>,
    pub(crate) requires_grad: bool,
}

impl Drop for Node {
    // Unrolled recurrences make chains deep enough to overflow a recursive drop.
    fn drop(&mut self) {
        let mut stack = std::mem::take(&mut self.parents);
        while let Some(Var(rc)) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(rc) {
                stack.append(&mut node.parents);
            }
        }
    }
}

/// A node in the computation graph.
///
/// Cloning a `Var` is cheap and shares the node.
#[derive(Clone)]
pub struct Var(pub(crate) Rc<Node>);

impl Var {
    /// A leaf that participates in differentiation.
    pub fn param(value: Array2<f64>) -> Var {
        Var::leaf(Rc::new(value), true)
    }

    /// A leaf that is treated as a constant.
    pub fn constant(value: Array2<f64>) -> Var {
        Var::leaf(Rc::new(value), false)
    }

    /// Leaf sharing an existing buffer, so binding stored parameters does not copy them.
    pub fn leaf(value: Rc<Array2<f64>>, requires_grad: bool) -> Var {
        Var(Rc::new(Node {
            value,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
        }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Array2::from_elem((1, 1), v))
    }

    pub fn zeros(rows: usize, cols: usize) -> Var {
        Var::constant(Array2::zeros((rows, cols)))
    }

    pub(crate) fn from_op(value: Array2<f64>, op: Op, parents: Vec<Var>) -> Var {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        // Constants do not keep their inputs alive.
        let parents = if requires_grad { parents } else { Vec::new() };
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node {
            value: Rc::new(value),
            op,
            parents,
            requires_grad,
        }))
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.0.value
    }

    pub fn shared_value(&self) -> Rc<Array2<f64>> {
        Rc::clone(&self.0.value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.value.dim()
    }

    pub fn rows(&self) -> usize {
        self.0.value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.value.ncols()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a `1×1` matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar {:?}", self.shape());
        self.0.value[[0, 0]]
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::leaf(self.shared_value(), false)
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients are differentiable functions
/// of every leaf that requires grad; otherwise they are constants. Inputs
/// that `output` does not depend on get a zero gradient.
pub fn grad(output: &Var, wrt: &[&Var], create_graph: bool) -> Vec<Var> {
    assert_eq!(
        output.shape(),
        (1, 1),
        "grad() needs a scalar output, got {:?}",
        output.shape()
    );
    let targets: HashMap<usize, ()> = wrt.iter().map(|v| (v.id(), ())).collect();
    let order = relevant_topo_order(output, &targets);

    let mut grads: HashMap<usize, Var> = HashMap::new();
    if output.requires_grad() {
        grads.insert(output.id(), Var::scalar(1.0));
    }

    for node in order.iter().rev() {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        if node.0.parents.is_empty() {
            continue;
        }
        let (out, parents, g) = if create_graph {
            (node.clone(), node.0.parents.clone(), g)
        } else {
            (
                node.detach(),
                node.0.parents.iter().map(Var::detach).collect(),
                g.detach(),
            )
        };
        let parent_grads = node.0.op.backward(&out, &parents, &g);
        for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
            let Some(pg) = pg else { continue };
            if !parent.requires_grad() {
                continue;
            }
            debug_assert_eq!(pg.shape(), parent.shape());
            let pg = if create_graph { pg } else { pg.detach() };
            grads
                .entry(parent.id())
                .and_modify(|acc| *acc = acc.add(&pg))
                .or_insert(pg);
        }
    }

    wrt.iter()
        .map(|v| match grads.get(&v.id()) {
            Some(g) if create_graph => g.clone(),
            Some(g) => g.detach(),
            None => Var::zeros(v.rows(), v.cols()),
        })
        .collect()
}

/// Post-order over the nodes that require grad and lead to one of `targets`.
/// Iterative so that long unrolled recurrences do not overflow the stack.
fn relevant_topo_order(output: &Var, targets: &HashMap<usize, ()>) -> Vec<Var> {
    let mut relevant: HashMap<usize, bool> = HashMap::new();
    let mut order = Vec::new();
    let mut stack: Vec<(Var, usize)> = vec![(output.clone(), 0)];

    while let Some((node, child)) = stack.pop() {
        if child == 0 && relevant.contains_key(&node.id()) {
            continue;
        }
        if !node.requires_grad() {
            relevant.insert(node.id(), false);
            continue;
        }
        if child < node.0.parents.len() {
            let next = node.0.parents[child].clone();
            stack.push((node, child + 1));
            if !relevant.contains_key(&next.id()) {
                stack.push((next, 0));
            }
            continue;
        }
        let reaches = targets.contains_key(&node.id())
            || node
                .0
                .parents
                .iter()
                .any(|p| relevant.get(&p.id()).copied().unwrap_or(false));
        relevant.insert(node.id(), reaches);
        if reaches {
            order.push(node);
        }
    }
    order
}
