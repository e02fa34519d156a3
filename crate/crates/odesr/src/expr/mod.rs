//! Expression trees for the right-hand sides of ODE systems.
//!
//! Each state variable of a system gets one tree; a full candidate model
//! ([`OdeSystemModel`]) is an array of trees plus a flat parameter vector
//! shared across them. Trees are stored in prefix (pre-order) layout with a
//! cached subtree length per node, which makes subtree extraction and
//! replacement O(1) on addresses and keeps evaluation allocation-free.
//!
//! Evaluation comes in two flavours: plain values, and forward-mode dual
//! evaluation that carries derivative directions for the numeric parameters
//! (and optionally the state variables, which is what the sensitivity
//! integration needs).

mod create;
mod genetic;
mod text;

pub use create::{create_random_tree, Grammar, TreeLimits};
pub use genetic::{
    crossover_models, mutate, subtree_crossover, MutationKind, CROSSOVER_RETRIES,
};
pub use text::{deserialize, serialize, serialize_with_names, ParseError};

use thiserror::Error;

/// A single node symbol. `Variable` and `Parameter` are indices into the
/// owning system's state vector and shared parameter vector respectively.
/// `PowConst` raises its argument to a fixed real exponent; it is not part
/// of the default search grammar but is needed to express benchmark systems
/// with non-integer powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Symbol {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    PowConst(f64),
    Variable(usize),
    Parameter(usize),
    Constant(f64),
}

impl Symbol {
    pub fn arity(&self) -> usize {
        match self {
            Symbol::Add | Symbol::Sub | Symbol::Mul | Symbol::Div => 2,
            Symbol::Sin | Symbol::Cos | Symbol::PowConst(_) => 1,
            Symbol::Variable(_) | Symbol::Parameter(_) | Symbol::Constant(_) => 0,
        }
    }

    pub fn is_function(&self) -> bool {
        self.arity() > 0
    }

    /// Discriminant-level equality (ignores indices, constants, exponents).
    pub fn same_kind(&self, other: &Symbol) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    symbol: Symbol,
    /// Number of nodes in the subtree rooted here, including this node.
    subtree_len: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("empty prefix sequence")]
    Empty,
    #[error("malformed prefix sequence: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model must have at least one state variable")]
    EmptySystem,
    #[error("parameter slot {slot} out of range for theta of length {len}")]
    ParameterOutOfRange { slot: usize, len: usize },
    #[error("parameter slot {0} is referenced by more than one node")]
    DuplicateParameterSlot(usize),
    #[error("variable index {index} out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
}

/// An expression in prefix layout. Always well-formed by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTree {
    nodes: Vec<Node>,
}

/// Value plus partial derivatives with respect to the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub value: f64,
    pub partials: Vec<f64>,
}

/// Reusable buffers for stack-based evaluation.
#[derive(Debug, Default, Clone)]
pub struct EvalWorkspace {
    values: Vec<f64>,
    grads: Vec<f64>,
}

/// Which terminals carry derivative seed directions during dual evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualSeeding {
    /// Directions 0..|theta| seed the parameters.
    Parameters,
    /// Directions 0..D seed the state variables, D..D+|theta| the parameters.
    StateThenParameters { dim: usize },
}

impl ExpressionTree {
    /// Builds a tree from a prefix symbol sequence, validating that the
    /// arity bookkeeping yields exactly one well-formed expression.
    pub fn from_prefix(symbols: Vec<Symbol>) -> Result<Self, TreeError> {
        if symbols.is_empty() {
            return Err(TreeError::Empty);
        }
        let mut lens = vec![0usize; symbols.len()];
        let mut stack: Vec<usize> = Vec::new();
        for (i, sym) in symbols.iter().enumerate().rev() {
            match sym.arity() {
                0 => {
                    lens[i] = 1;
                    stack.push(1);
                }
                1 => {
                    let a = stack.pop().ok_or(TreeError::Malformed("missing operand"))?;
                    lens[i] = 1 + a;
                    stack.push(lens[i]);
                }
                2 => {
                    let a = stack.pop().ok_or(TreeError::Malformed("missing operand"))?;
                    let b = stack.pop().ok_or(TreeError::Malformed("missing operand"))?;
                    lens[i] = 1 + a + b;
                    stack.push(lens[i]);
                }
                _ => unreachable!(),
            }
        }
        if stack.len() != 1 {
            return Err(TreeError::Malformed("sequence parses to more than one root"));
        }
        if lens[0] != symbols.len() {
            return Err(TreeError::Malformed("dangling nodes after root"));
        }
        let nodes = symbols
            .into_iter()
            .zip(lens)
            .map(|(symbol, subtree_len)| Node { symbol, subtree_len })
            .collect();
        Ok(ExpressionTree { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.nodes.iter().map(|n| &n.symbol)
    }

    pub fn symbol_at(&self, index: usize) -> Symbol {
        self.nodes[index].symbol
    }

    /// Length of the subtree rooted at `index`.
    pub fn subtree_len(&self, index: usize) -> usize {
        self.nodes[index].subtree_len
    }

    /// Copies the subtree rooted at `index` into a standalone tree.
    pub fn subtree(&self, index: usize) -> ExpressionTree {
        let end = index + self.nodes[index].subtree_len;
        ExpressionTree { nodes: self.nodes[index..end].to_vec() }
    }

    /// Returns a new tree with the subtree at `index` replaced.
    pub fn with_replaced_subtree(&self, index: usize, replacement: &ExpressionTree) -> ExpressionTree {
        let end = index + self.nodes[index].subtree_len;
        let mut nodes = Vec::with_capacity(self.nodes.len() - (end - index) + replacement.nodes.len());
        nodes.extend_from_slice(&self.nodes[..index]);
        nodes.extend_from_slice(&replacement.nodes);
        nodes.extend_from_slice(&self.nodes[end..]);
        // Subtree lengths of ancestors change; rebuild them.
        Self::from_prefix(nodes.into_iter().map(|n| n.symbol).collect())
            .expect("splicing well-formed subtrees preserves well-formedness")
    }

    /// Maximum nesting depth; a single node has depth 1.
    pub fn depth(&self) -> usize {
        let mut max_depth = 0usize;
        let mut pending: Vec<usize> = Vec::new();
        for node in &self.nodes {
            let d = pending.len() + 1;
            max_depth = max_depth.max(d);
            let arity = node.symbol.arity();
            if arity > 0 {
                pending.push(arity);
            } else {
                while let Some(last) = pending.last_mut() {
                    *last -= 1;
                    if *last == 0 {
                        pending.pop();
                    } else {
                        break;
                    }
                }
            }
        }
        max_depth
    }

    /// Largest parameter slot referenced, if any.
    pub fn max_parameter_slot(&self) -> Option<usize> {
        self.symbols()
            .filter_map(|s| match s {
                Symbol::Parameter(k) => Some(*k),
                _ => None,
            })
            .max()
    }

    pub(crate) fn map_symbols(&self, mut f: impl FnMut(Symbol) -> Symbol) -> ExpressionTree {
        ExpressionTree {
            nodes: self
                .nodes
                .iter()
                .map(|n| Node { symbol: f(n.symbol), subtree_len: n.subtree_len })
                .collect(),
        }
    }

    /// Evaluates the tree at the given state and parameter values. Arithmetic
    /// is plain IEEE: division is unprotected and non-finite values propagate.
    pub fn evaluate(&self, state: &[f64], theta: &[f64]) -> f64 {
        let mut stack = Vec::with_capacity(self.nodes.len());
        self.evaluate_into(state, theta, &mut stack)
    }

    /// Allocation-free variant of [`evaluate`](Self::evaluate) for hot loops.
    pub fn evaluate_into(&self, state: &[f64], theta: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        // Reverse iteration over the prefix layout: operands are on the stack
        // by the time their operator is reached; the first pop is the left one.
        for node in self.nodes.iter().rev() {
            match node.symbol {
                Symbol::Variable(i) => stack.push(state[i]),
                Symbol::Parameter(k) => stack.push(theta[k]),
                Symbol::Constant(c) => stack.push(c),
                Symbol::Sin => {
                    let a = stack.last_mut().unwrap();
                    *a = a.sin();
                }
                Symbol::Cos => {
                    let a = stack.last_mut().unwrap();
                    *a = a.cos();
                }
                Symbol::PowConst(c) => {
                    let a = stack.last_mut().unwrap();
                    *a = a.powf(c);
                }
                Symbol::Add => {
                    let l = stack.pop().unwrap();
                    let r = stack.last_mut().unwrap();
                    *r += l;
                }
                Symbol::Sub => {
                    let l = stack.pop().unwrap();
                    let r = stack.last_mut().unwrap();
                    *r = l - *r;
                }
                Symbol::Mul => {
                    let l = stack.pop().unwrap();
                    let r = stack.last_mut().unwrap();
                    *r *= l;
                }
                Symbol::Div => {
                    let l = stack.pop().unwrap();
                    let r = stack.last_mut().unwrap();
                    *r = l / *r;
                }
            }
        }
        debug_assert_eq!(stack.len(), 1);
        stack[0]
    }

    /// Forward-mode evaluation: the returned partials are exact derivatives
    /// with respect to theta (same rounding behaviour as `evaluate`).
    pub fn evaluate_with_gradient(&self, state: &[f64], theta: &[f64]) -> DualVector {
        let mut ws = EvalWorkspace::default();
        let mut partials = vec![0.0; theta.len()];
        let value = self.eval_dual_into(state, theta, DualSeeding::Parameters, &mut ws, &mut partials);
        DualVector { value, partials }
    }

    /// Dual evaluation with caller-provided buffers. `out` must have length
    /// |theta| for `Parameters` seeding, or `dim + |theta|` for
    /// `StateThenParameters`; on return it holds the directional derivatives.
    pub fn eval_dual_into(
        &self,
        state: &[f64],
        theta: &[f64],
        seeding: DualSeeding,
        ws: &mut EvalWorkspace,
        out: &mut [f64],
    ) -> f64 {
        let dirs = match seeding {
            DualSeeding::Parameters => theta.len(),
            DualSeeding::StateThenParameters { dim } => dim + theta.len(),
        };
        assert_eq!(out.len(), dirs);
        let cap = self.nodes.len().max(1);
        ws.values.clear();
        ws.values.reserve(cap);
        ws.grads.clear();
        ws.grads.resize(cap * dirs, 0.0);

        let mut sp = 0usize; // value stack pointer; grad rows share it
        macro_rules! grad {
            ($slot:expr) => {
                &mut ws.grads[$slot * dirs..($slot + 1) * dirs]
            };
        }

        for node in self.nodes.iter().rev() {
            match node.symbol {
                Symbol::Variable(i) => {
                    ws.values.push(state[i]);
                    let g = grad!(sp);
                    g.fill(0.0);
                    if let DualSeeding::StateThenParameters { .. } = seeding {
                        g[i] = 1.0;
                    }
                    sp += 1;
                }
                Symbol::Parameter(k) => {
                    ws.values.push(theta[k]);
                    let g = grad!(sp);
                    g.fill(0.0);
                    match seeding {
                        DualSeeding::Parameters => g[k] = 1.0,
                        DualSeeding::StateThenParameters { dim } => g[dim + k] = 1.0,
                    }
                    sp += 1;
                }
                Symbol::Constant(c) => {
                    ws.values.push(c);
                    grad!(sp).fill(0.0);
                    sp += 1;
                }
                Symbol::Sin => {
                    let a = ws.values[sp - 1];
                    ws.values[sp - 1] = a.sin();
                    let da = a.cos();
                    for g in grad!(sp - 1).iter_mut() {
                        *g *= da;
                    }
                }
                Symbol::Cos => {
                    let a = ws.values[sp - 1];
                    ws.values[sp - 1] = a.cos();
                    let da = -a.sin();
                    for g in grad!(sp - 1).iter_mut() {
                        *g *= da;
                    }
                }
                Symbol::PowConst(c) => {
                    let a = ws.values[sp - 1];
                    ws.values[sp - 1] = a.powf(c);
                    let da = c * a.powf(c - 1.0);
                    for g in grad!(sp - 1).iter_mut() {
                        *g *= da;
                    }
                }
                Symbol::Add | Symbol::Sub | Symbol::Mul | Symbol::Div => {
                    let l = ws.values.pop().unwrap();
                    sp -= 1;
                    let r = ws.values[sp - 1];
                    let (split_l, split_r) = ws.grads.split_at_mut(sp * dirs);
                    let gl = &split_r[..dirs];
                    let gr = &mut split_l[(sp - 1) * dirs..sp * dirs];
                    match node.symbol {
                        Symbol::Add => {
                            ws.values[sp - 1] = l + r;
                            for (r_i, l_i) in gr.iter_mut().zip(gl) {
                                *r_i += *l_i;
                            }
                        }
                        Symbol::Sub => {
                            ws.values[sp - 1] = l - r;
                            for (r_i, l_i) in gr.iter_mut().zip(gl) {
                                *r_i = *l_i - *r_i;
                            }
                        }
                        Symbol::Mul => {
                            ws.values[sp - 1] = l * r;
                            for (r_i, l_i) in gr.iter_mut().zip(gl) {
                                *r_i = l * *r_i + r * *l_i;
                            }
                        }
                        Symbol::Div => {
                            ws.values[sp - 1] = l / r;
                            let inv = 1.0 / r;
                            let scale = l * inv * inv;
                            for (r_i, l_i) in gr.iter_mut().zip(gl) {
                                *r_i = *l_i * inv - scale * *r_i;
                            }
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
        debug_assert_eq!(sp, 1);
        out.copy_from_slice(&ws.grads[..dirs]);
        ws.values[0]
    }
}

/// A candidate ODE system: one tree per state variable plus the shared flat
/// parameter vector. Tree `i` defines `du_i/dt`. Every `Parameter` node owns
/// a distinct slot of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSystemModel {
    trees: Vec<ExpressionTree>,
    theta: Vec<f64>,
}

impl OdeSystemModel {
    /// Validates the structural invariants: at least one tree, every
    /// parameter slot in range and referenced by exactly one node, and all
    /// variable indices below the system dimension.
    pub fn new(trees: Vec<ExpressionTree>, theta: Vec<f64>) -> Result<Self, ModelError> {
        if trees.is_empty() {
            return Err(ModelError::EmptySystem);
        }
        let dim = trees.len();
        let mut seen = vec![false; theta.len()];
        for tree in &trees {
            for sym in tree.symbols() {
                match *sym {
                    Symbol::Parameter(k) => {
                        if k >= theta.len() {
                            return Err(ModelError::ParameterOutOfRange { slot: k, len: theta.len() });
                        }
                        if seen[k] {
                            return Err(ModelError::DuplicateParameterSlot(k));
                        }
                        seen[k] = true;
                    }
                    Symbol::Variable(i) if i >= dim => {
                        return Err(ModelError::VariableOutOfRange { index: i, dim });
                    }
                    _ => {}
                }
            }
        }
        Ok(OdeSystemModel { trees, theta })
    }

    /// Builds a model from trees whose parameter slots point into
    /// `source_theta`, renumbering slots into pre-order encounter order and
    /// compacting the vector to exactly the referenced values. All creation
    /// and variation paths go through here, so models are canonical.
    pub fn assemble(trees: Vec<ExpressionTree>, source_theta: &[f64]) -> Result<Self, ModelError> {
        if trees.is_empty() {
            return Err(ModelError::EmptySystem);
        }
        let mut theta = Vec::new();
        let mut remapped = Vec::with_capacity(trees.len());
        for tree in &trees {
            remapped.push(tree.map_symbols(|s| match s {
                Symbol::Parameter(k) => {
                    let slot = theta.len();
                    theta.push(source_theta[k]);
                    Symbol::Parameter(slot)
                }
                other => other,
            }));
        }
        Self::new(remapped, theta)
    }

    pub fn dimension(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[ExpressionTree] {
        &self.trees
    }

    pub fn tree(&self, i: usize) -> &ExpressionTree {
        &self.trees[i]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn parameter_count(&self) -> usize {
        self.theta.len()
    }

    /// Replaces the parameter values (structure unchanged). Used for the
    /// Lamarckian write-back after local optimization.
    pub fn set_theta(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.theta.len());
        self.theta.copy_from_slice(theta);
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), self.theta.len());
        OdeSystemModel { trees: self.trees.clone(), theta }
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(|t| t.len()).sum()
    }

    /// Evaluates all right-hand sides at once: `out[i] = f_i(state, theta)`.
    pub fn eval_rhs(&self, state: &[f64], theta: &[f64], out: &mut [f64], stack: &mut Vec<f64>) {
        debug_assert_eq!(out.len(), self.trees.len());
        for (o, tree) in out.iter_mut().zip(&self.trees) {
            *o = tree.evaluate_into(state, theta, stack);
        }
    }
}

#[cfg(test)]
mod tests;
