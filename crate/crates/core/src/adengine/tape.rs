use std::collections::BTreeMap;

use super::ops::{self, OpKind};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Node {
    /// `None` for leaves.
    op: Option<OpKind>,
    parents: Vec<usize>,
    value: Tensor,
    /// Depends on at least one param.
    live: bool,
}

/// Computation record. Nodes are appended in evaluation order, so parents
/// always precede children.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
    cosine_fault: Option<f64>,
}

/// Gradient of a scalar with respect to every differentiable leaf.
#[derive(Clone, Debug, Default)]
pub struct GradientMap {
    grads: BTreeMap<Var, Tensor>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(&v, t)| (v, t))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Constant leaf; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(None, Vec::new(), value, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let v = self.push(None, Vec::new(), value, true);
        self.params.push(v.0);
        v
    }

    fn push(&mut self, op: Option<OpKind>, parents: Vec<usize>, value: Tensor, live: bool) -> Var {
        self.nodes.push(Node {
            op,
            parents,
            value,
            live,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `kind` on the given operands and records the result.
    pub fn apply(&mut self, kind: OpKind, operands: &[Var]) -> Result<Var> {
        for v in operands {
            if v.0 >= self.nodes.len() {
                return Err(Error::UnknownNode(v.0));
            }
        }
        let inputs: Vec<&Tensor> = operands.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = ops::forward(&kind, &inputs)?;
        let live = operands.iter().any(|v| self.nodes[v.0].live);
        Ok(self.push(Some(kind), operands.iter().map(|v| v.0).collect(), value, live))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn params(&self) -> impl Iterator<Item = Var> + '_ {
        self.params.iter().map(|&i| Var(i))
    }

    /// Test hook: scales every cosine adjoint by `factor`, producing wrong
    /// gradients on purpose.
    #[doc(hidden)]
    pub fn inject_cosine_adjoint_fault(&mut self, factor: f64) {
        self.cosine_fault = Some(factor);
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Shift(c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.apply(OpKind::AddRow, &[a, bias])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::RowSoftmax, &[a])
    }

    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::LayerNorm, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::MeanPool, &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Dot, &[a, b])
    }

    pub fn norm(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Norm, &[a])
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Cosine, &[a, b])
    }

    pub fn hinge(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Hinge, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Abs, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    /// Sums a list of same-shape nodes left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Invalid("add_all of no terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse accumulation from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let node = self.nodes.get(loss.0).ok_or(Error::UnknownNode(loss.0))?;
        if !node.value.is_scalar() {
            return Err(Error::NonScalarLoss(node.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::filled(node.value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op else { continue };
            let Some(g) = adj[i].take() else { continue };
            if !node.live {
                continue;
            }
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let want: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].live).collect();
            let mut grads = ops::vjp_selected(&op, &inputs, &node.value, &g, &want);
            if let (OpKind::Cosine, Some(f)) = (op, self.cosine_fault) {
                for t in grads.iter_mut().flatten() {
                    *t = t.map(|v| v * f);
                }
            }
            for (&p, gp) in node.parents.iter().zip(grads) {
                let Some(gp) = gp else { continue };
                match &mut adj[p] {
                    Some(acc) => acc.add_assign(&gp),
                    slot @ None => *slot = Some(gp),
                }
            }
        }
        let mut grads = BTreeMap::new();
        for &p in &self.params {
            let g = if p <= loss.0 {
                adj[p].take()
            } else {
                None
            };
            let g = g.unwrap_or_else(|| Tensor::zeros(self.nodes[p].value.shape()));
            grads.insert(Var(p), g);
        }
        Ok(GradientMap { grads })
    }

    /// Re-evaluates every node with some leaves replaced, returning the
    /// value of `target`. Only descendants of the replaced leaves are
    /// recomputed; everything else is read from the record.
    pub fn replay(&self, overrides: &[(Var, Tensor)], target: Var) -> Result<Tensor> {
        let mut fresh: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, t) in overrides {
            let node = self.nodes.get(v.0).ok_or(Error::UnknownNode(v.0))?;
            if node.op.is_some() {
                return Err(Error::Invalid(format!("node {} is not a leaf", v.0)));
            }
            if t.shape() != node.value.shape() {
                return Err(Error::ShapeMismatch {
                    kind: "replay",
                    lhs: node.value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            fresh[v.0] = Some(t.clone());
        }
        let start = overrides.iter().map(|(v, _)| v.0).min().unwrap_or(self.nodes.len());
        for i in start..=target.0 {
            let node = &self.nodes[i];
            let Some(op) = node.op else { continue };
            if node.parents.iter().all(|&p| fresh[p].is_none()) {
                continue;
            }
            let inputs: Vec<&Tensor> = node
                .parents
                .iter()
                .map(|&p| fresh[p].as_ref().unwrap_or(&self.nodes[p].value))
                .collect();
            fresh[i] = Some(ops::forward(&op, &inputs)?);
        }
        Ok(fresh[target.0]
            .take()
            .unwrap_or_else(|| self.nodes[target.0].value.clone()))
    }
}
