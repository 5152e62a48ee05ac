use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape error in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("mask error: {0}")]
    Mask(&'static str),
    #[error("numerics error: {0}")]
    Numerics(&'static str),
    #[error("optimizer error: {0}")]
    Optimizer(String),
}

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> DiffError {
    DiffError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Named parameter buffers with their gradients and initial `None` grad
/// state; gradients appear once [`backward`] runs (or [`ParamStore::zero_grads`]
/// seeds them) and then accumulate by summation until zeroed again.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    grads: Vec<Option<Vec<f64>>>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "parameter {name}: value length does not match shape"
        );
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.names.len();
        self.names.push(String::from(name));
        self.shapes.push(shape);
        self.values.push(values);
        self.grads.push(None);
        self.by_name.insert(String::from(name), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Ids in registration order (stable, deterministic).
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn total_values(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Resets every gradient to an explicit zero buffer.
    pub fn zero_grads(&mut self) {
        for (g, v) in self.grads.iter_mut().zip(self.values.iter()) {
            *g = Some(vec![0.0; v.len()]);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, contribution: &[f64]) {
        let slot = &mut self.grads[idx];
        match slot {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Graph leaf carrying this parameter's current values; gradients from
    /// [`backward`] flow back into the store.
    pub fn leaf(&self, id: ParamId) -> Tensor {
        Tensor::new_node(Node {
            shape: self.shapes[id.0].clone(),
            data: self.values[id.0].clone(),
            parents: Vec::new(),
            grad_fn: None,
            param: Some(id.0),
            requires_grad: true,
        })
    }
}

/// Sink that the backward closure of each node feeds: `(parent index,
/// gradient contribution)` pairs.
pub(crate) type GradSink<'a> = &'a mut dyn FnMut(usize, Vec<f64>);
pub(crate) type GradFn = Box<dyn Fn(&Node, &[f64], GradSink)>;

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) grad_fn: Option<GradFn>,
    pub(crate) param: Option<usize>,
    pub(crate) requires_grad: bool,
}

/// Dense real array in a dynamically built computation graph. Cloning is a
/// cheap reference-count bump; values are immutable once created.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) node: Rc<Node>,
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub(crate) fn new_node(node: Node) -> Self {
        Self {
            node: Rc::new(node),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn constant(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "constant data length does not match shape"
        );
        Self::new_node(Node {
            shape,
            data,
            parents: Vec::new(),
            grad_fn: None,
            param: None,
            requires_grad: false,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::constant(shape, vec![0.0; n])
    }

    /// 0/1 constant from a boolean mask.
    pub fn from_mask(mask: &[bool]) -> Self {
        Self::constant(
            vec![mask.len()],
            mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "scalar_value on non-scalar tensor");
        self.node.data[0]
    }

    pub(crate) fn ptr(&self) -> usize {
        Rc::as_ptr(&self.node) as usize
    }
}

/// Builds an op node, tracking gradients only when some parent needs them.
pub(crate) fn op_node(
    shape: Vec<usize>,
    data: Vec<f64>,
    parents: Vec<Tensor>,
    grad_fn: impl Fn(&Node, &[f64], GradSink) + 'static,
) -> Tensor {
    let requires_grad = parents.iter().any(|p| p.node.requires_grad);
    Tensor::new_node(Node {
        shape,
        data,
        parents,
        grad_fn: if requires_grad {
            Some(Box::new(grad_fn))
        } else {
            None
        },
        param: None,
        requires_grad,
    })
}

/// Reverse-mode sweep from a scalar loss. Gradients of every reachable
/// parameter accumulate (sum) into `store`; intermediate buffers are freed
/// as the sweep retreats and the graph itself is released when the caller
/// drops its tensors.
pub fn backward(loss: &Tensor, store: &mut ParamStore) -> Result<(), DiffError> {
    if loss.numel() != 1 {
        return Err(shape_err("backward", loss.shape(), &[1]));
    }
    if !loss.scalar_value().is_finite() {
        return Err(DiffError::Numerics("non-finite loss"));
    }
    if !loss.node.requires_grad {
        return Ok(());
    }

    // Iterative post-order DFS; reversed, it is a valid topological order
    // with every consumer ahead of its producers.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: BTreeSet<usize> = BTreeSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.ptr());
    while let Some((node, child)) = stack.pop() {
        if child < node.node.parents.len() {
            stack.push((node.clone(), child + 1));
            let parent = node.node.parents[child].clone();
            if parent.node.requires_grad && !visited.contains(&parent.ptr()) {
                visited.insert(parent.ptr());
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    grads.insert(loss.ptr(), vec![1.0]);

    for tensor in order.iter().rev() {
        let Some(grad) = grads.remove(&tensor.ptr()) else {
            continue;
        };
        if let Some(pidx) = tensor.node.param {
            store.accumulate_grad(pidx, &grad);
        }
        if let Some(grad_fn) = &tensor.node.grad_fn {
            let parents = &tensor.node.parents;
            let mut sink = |parent_idx: usize, contribution: Vec<f64>| {
                let parent = &parents[parent_idx];
                if !parent.node.requires_grad {
                    return;
                }
                debug_assert_eq!(
                    contribution.len(),
                    parent.numel(),
                    "gradient contribution shape mismatch"
                );
                match grads.get_mut(&parent.ptr()) {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contribution) {
                            *a += c;
                        }
                    }
                    None => {
                        grads.insert(parent.ptr(), contribution);
                    }
                }
            };
            grad_fn(&tensor.node, &grad, &mut sink);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::ops;

    #[test]
    fn sum_of_squares_gradient() {
        let mut store = ParamStore::new();
        let w = store.register("w", vec![3], vec![1.0, 2.0, 3.0]);
        let leaf = store.leaf(w);
        let loss = ops::sum(&ops::mul(&leaf, &leaf).unwrap());
        backward(&loss, &mut store).unwrap();
        assert_eq!(store.grad(w).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grads_accumulate_until_zeroed() {
        let mut store = ParamStore::new();
        let w = store.register("w", vec![2], vec![1.0, -1.0]);
        for _ in 0..2 {
            let leaf = store.leaf(w);
            let loss = ops::sum(&ops::mul(&leaf, &leaf).unwrap());
            backward(&loss, &mut store).unwrap();
        }
        assert_eq!(store.grad(w).unwrap(), &[4.0, -4.0]);
        store.zero_grads();
        assert_eq!(store.grad(w).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let w = store.register("w", vec![2], vec![1.0, 2.0]);
        let leaf = store.leaf(w);
        assert!(matches!(
            backward(&leaf, &mut store),
            Err(DiffError::Shape { .. })
        ));
    }

    #[test]
    fn nan_loss_rejected() {
        let mut store = ParamStore::new();
        let w = store.register("w", vec![1], vec![-1.0]);
        let leaf = store.leaf(w);
        let loss = ops::log(&leaf); // log(-1) = NaN
        assert!(matches!(
            backward(&loss, &mut store),
            Err(DiffError::Numerics(_))
        ));
    }

    #[test]
    fn fan_out_sums_contributions() {
        let mut store = ParamStore::new();
        let w = store.register("w", vec![1], vec![3.0]);
        let leaf = store.leaf(w);
        // loss = w*w + w -> d/dw = 2w + 1 = 7
        let loss = ops::add(&ops::mul(&leaf, &leaf).unwrap(), &leaf).unwrap();
        backward(&ops::sum(&loss), &mut store).unwrap();
        assert_eq!(store.grad(w).unwrap(), &[7.0]);
    }

    #[test]
    fn constants_get_no_grad() {
        let mut store = ParamStore::new();
        let w = store.register("w", vec![1], vec![2.0]);
        let leaf = store.leaf(w);
        let c = Tensor::scalar(5.0);
        let loss = ops::sum(&ops::mul(&leaf, &c).unwrap());
        backward(&loss, &mut store).unwrap();
        assert_eq!(store.grad(w).unwrap(), &[5.0]);
    }
}
