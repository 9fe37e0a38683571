use super::{Result, Tensor, TensorError};

/// Backward rule: `(all nodes, this node's output, upstream gradient)` to
/// gradient contributions for the node's inputs.
pub(crate) type BackwardFn = Box<dyn Fn(&[Node], &Tensor, &Tensor) -> Vec<(Var, Tensor)>>;

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered record of forward operations.
///
/// A tape is single-threaded. Independent forward passes use separate tapes.
pub struct Tape {
    nodes: Vec<Node>,
    record: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// A tape that never records backward rules. Leaves created on it do not
    /// require gradients.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let requires_grad = self.record;
        self.nodes.push(Node {
            value,
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: false,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push<F>(
        &mut self,
        op: &'static str,
        value: Tensor,
        inputs: &[Var],
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&[Node], &Tensor, &Tensor) -> Vec<(Var, Tensor)> + 'static,
    {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar output. Each recorded operation is visited
    /// at most once, in reverse recording order. Gradients are kept for leaves
    /// only.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(TensorError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (var, contribution) in backward(&self.nodes, &node.value, &g) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(contribution.shape(), self.nodes[var.0].value.shape());
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub(crate) fn needs(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        // f(x) = x*x + 2x at x = 1.5 -> 2x + 2 = 5
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let sq = tape.mul(x, x).unwrap();
        let lin = tape.scale(x, 2.0).unwrap();
        let y = tape.add(sq, lin).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let mut tape = Tape::inference();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        assert!(!tape.requires_grad(y));
        let g = tape.backward(y).unwrap();
        assert!(g.get(x).is_none());
    }

    #[test]
    fn non_finite_forward_fails_fast() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        assert!(matches!(
            tape.log(x),
            Err(TensorError::NonFinite { op: "log" })
        ));
    }
}
