//! Reverse-mode differentiation over field-valued nodes.
//!
//! Every node holds a vector (scalars are length-1 vectors). The primitive
//! set is just large enough to express Runge-Kutta rollouts of the sliding
//! MLP operator and the training loss built from them.

use super::{BatchCache, Mlp};
use crate::error::{invalid, Error, Result};
use crate::grid::wrap;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Differentiable leaf.
    Input,
    Constant,
    /// Sliding MLP over every periodic stencil of the argument field.
    Operator { arg: NodeId, cache: BatchCache },
    /// `sum_j c_j x_j`, evaluated left to right.
    Linear { terms: Vec<(f64, NodeId)> },
    Mul { a: NodeId, b: NodeId },
    /// Scalar `sum_i w_i x_i^2` (unit weights when `weights` is `None`).
    SumSquares { arg: NodeId, weights: Option<Vec<f64>> },
    /// Scalar `||theta||^2`, either over every parameter or weights only.
    ParamNormSq { weights_only: bool },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Recording of one computation against a fixed network.
pub struct Tape<'a> {
    mlp: &'a Mlp,
    radius: usize,
    nodes: Vec<Node>,
}

/// Adjoints of a scalar output.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    inputs: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to an [`Tape::input`] leaf.
    pub fn input(&self, id: NodeId) -> Option<&[f64]> {
        self.inputs.get(id).and_then(|g| g.as_deref())
    }
}

impl<'a> Tape<'a> {
    /// `radius` is the stencil half-width used by [`Tape::operator`]; the
    /// network input width must be `2 * radius + 1`.
    pub fn new(mlp: &'a Mlp, radius: usize) -> Result<Self> {
        if mlp.input_width() != 2 * radius + 1 || mlp.output_width() != 1 {
            return invalid(format!(
                "network {:?} does not map a radius-{radius} stencil to a scalar",
                mlp.widths()
            ));
        }
        Ok(Self {
            mlp,
            radius,
            nodes: Vec::new(),
        })
    }

    pub fn mlp(&self) -> &Mlp {
        self.mlp
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn operator(&mut self, arg: NodeId) -> Result<NodeId> {
        let n = self.nodes[arg].value.len();
        if 2 * self.radius + 1 > n {
            return invalid(format!("field of {n} points is narrower than the stencil"));
        }
        let cache = apply_sliding(self.mlp, self.radius, &self.nodes[arg].value)?;
        let value = cache.output().to_vec();
        Ok(self.push(value, Op::Operator { arg, cache }))
    }

    pub fn linear(&mut self, terms: &[(f64, NodeId)]) -> Result<NodeId> {
        let value = eval_linear(&self.nodes, terms)?;
        Ok(self.push(value, Op::Linear { terms: terms.to_vec() }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.linear(&[(1.0, a), (1.0, b)])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.linear(&[(1.0, a), (-1.0, b)])
    }

    pub fn scale(&mut self, c: f64, a: NodeId) -> Result<NodeId> {
        self.linear(&[(c, a)])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.len() != vb.len() {
            return invalid("mul: length mismatch");
        }
        let value = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn sum_squares(&mut self, arg: NodeId, weights: Option<Vec<f64>>) -> Result<NodeId> {
        let value = vec![eval_sum_squares(&self.nodes[arg].value, weights.as_deref())?];
        Ok(self.push(value, Op::SumSquares { arg, weights }))
    }

    /// Scalar sum of scalar nodes.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let t: Vec<(f64, NodeId)> = terms.iter().map(|&id| (1.0, id)).collect();
        self.linear(&t)
    }

    pub fn param_norm_sq(&mut self, weights_only: bool) -> NodeId {
        let value = vec![eval_param_norm(self.mlp, weights_only)];
        self.push(value, Op::ParamNormSq { weights_only })
    }

    /// Re-evaluates every node from its leaves and checks the result is
    /// bit-identical to what was recorded.
    pub fn replay(&self) -> Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            let fresh = match &node.op {
                Op::Input | Op::Constant => continue,
                Op::Operator { arg, .. } => {
                    apply_sliding(self.mlp, self.radius, &self.nodes[*arg].value)?
                        .output()
                        .to_vec()
                }
                Op::Linear { terms } => eval_linear(&self.nodes, terms)?,
                Op::Mul { a, b } => self.nodes[*a]
                    .value
                    .iter()
                    .zip(&self.nodes[*b].value)
                    .map(|(x, y)| x * y)
                    .collect(),
                Op::SumSquares { arg, weights } => {
                    vec![eval_sum_squares(&self.nodes[*arg].value, weights.as_deref())?]
                }
                Op::ParamNormSq { weights_only } => vec![eval_param_norm(self.mlp, *weights_only)],
            };
            let same = fresh.len() == node.value.len()
                && fresh.iter().zip(&node.value).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::Internal(format!("tape replay diverged at node {id}")));
            }
        }
        Ok(())
    }
}

fn apply_sliding(mlp: &Mlp, radius: usize, field: &[f64]) -> Result<BatchCache> {
    let n = field.len();
    let w = 2 * radius + 1;
    let mut patches = Vec::with_capacity(n * w);
    for i in 0..n {
        for o in -(radius as isize)..=radius as isize {
            patches.push(field[wrap(i, o, n)]);
        }
    }
    mlp.forward_cached(&patches, n)
}

fn eval_linear(nodes: &[Node], terms: &[(f64, NodeId)]) -> Result<Vec<f64>> {
    let (&(c0, first), rest) = terms
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("linear combination needs at least one term".into()))?;
    let mut out: Vec<f64> = nodes[first].value.iter().map(|v| c0 * v).collect();
    for &(c, id) in rest {
        let v = &nodes[id].value;
        if v.len() != out.len() {
            return invalid("linear combination: length mismatch");
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += c * x;
        }
    }
    Ok(out)
}

fn eval_sum_squares(x: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    match weights {
        None => Ok(x.iter().map(|v| v * v).sum()),
        Some(w) if w.len() == x.len() => Ok(x.iter().zip(w).map(|(v, w)| w * v * v).sum()),
        Some(_) => invalid("sum_squares: weight length mismatch"),
    }
}

fn eval_param_norm(mlp: &Mlp, weights_only: bool) -> f64 {
    if weights_only {
        mlp.weight_norm_sq()
    } else {
        mlp.params().iter().map(|p| p * p).sum()
    }
}

/// Reverse sweep from the scalar node `output`.
pub fn grad(tape: &Tape<'_>, output: NodeId) -> Result<Gradients> {
    if tape.nodes.get(output).map(|n| n.value.len()) != Some(1) {
        return invalid("gradient requested for a non-scalar node");
    }
    let mlp = tape.mlp;
    let mut params = vec![0.0; mlp.n_params()];
    let mut adj: Vec<Option<Vec<f64>>> = vec![None; tape.nodes.len()];
    adj[output] = Some(vec![1.0]);

    fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl Fn(usize) -> f64) {
        let slot = adj[id].get_or_insert_with(|| vec![0.0; len]);
        for (i, s) in slot.iter_mut().enumerate() {
            *s += f(i);
        }
    }

    for id in (0..=output).rev() {
        let Some(g) = adj[id].take() else { continue };
        let node = &tape.nodes[id];
        match &node.op {
            Op::Input => {
                adj[id] = Some(g);
            }
            Op::Constant => {}
            Op::Operator { arg, cache } => {
                let d_patch = mlp.backward(cache, &g, &mut params);
                let n = cache.batch();
                let r = tape.radius;
                let w = 2 * r + 1;
                let slot = adj[*arg].get_or_insert_with(|| vec![0.0; n]);
                for i in 0..n {
                    for (j, o) in (-(r as isize)..=r as isize).enumerate() {
                        slot[wrap(i, o, n)] += d_patch[i * w + j];
                    }
                }
            }
            Op::Linear { terms } => {
                for &(c, t) in terms {
                    accumulate(&mut adj, t, g.len(), |i| c * g[i]);
                }
            }
            Op::Mul { a, b } => {
                let va = &tape.nodes[*a].value;
                let vb = &tape.nodes[*b].value;
                accumulate(&mut adj, *a, g.len(), |i| vb[i] * g[i]);
                accumulate(&mut adj, *b, g.len(), |i| va[i] * g[i]);
            }
            Op::SumSquares { arg, weights } => {
                let x = &tape.nodes[*arg].value;
                let s = g[0];
                match weights {
                    None => accumulate(&mut adj, *arg, x.len(), |i| 2.0 * x[i] * s),
                    Some(w) => accumulate(&mut adj, *arg, x.len(), |i| 2.0 * w[i] * x[i] * s),
                }
            }
            Op::ParamNormSq { weights_only } => {
                let s = g[0];
                if *weights_only {
                    for (p, (&theta, keep)) in params.iter_mut().zip(mlp.params().iter().zip(mlp.weight_mask())) {
                        if keep {
                            *p += 2.0 * theta * s;
                        }
                    }
                } else {
                    for (p, &theta) in params.iter_mut().zip(mlp.params()) {
                        *p += 2.0 * theta * s;
                    }
                }
            }
        }
    }
    // Only leaves marked as inputs keep their adjoints.
    for (id, node) in tape.nodes.iter().enumerate() {
        if !matches!(node.op, Op::Input) {
            adj[id] = None;
        } else if adj[id].is_none() {
            adj[id] = Some(vec![0.0; node.value.len()]);
        }
    }
    Ok(Gradients { params, inputs: adj })
}
