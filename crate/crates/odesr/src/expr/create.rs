//! Random tree creation (PTC2) and the search grammar.

use rand::Rng;

use super::{ExpressionTree, Symbol};

/// Size caps enforced on every tree the search produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeLimits {
    pub max_length: usize,
    pub max_depth: usize,
}

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits { max_length: 25, max_depth: 8 }
    }
}

/// The symbol alphabet available to random creation and mutation. Terminals
/// are the state variables plus fresh numeric parameters; the function set
/// defaults to `{+, -, *, /, sin, cos}` and is configurable per run.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub functions: Vec<Symbol>,
    pub n_variables: usize,
    /// Fresh parameter leaves are initialized uniformly from this range.
    pub parameter_init_range: (f64, f64),
}

impl Grammar {
    pub fn standard(n_variables: usize) -> Self {
        Grammar {
            functions: vec![Symbol::Add, Symbol::Sub, Symbol::Mul, Symbol::Div, Symbol::Sin, Symbol::Cos],
            n_variables,
            parameter_init_range: (-2.0, 2.0),
        }
    }

    pub(crate) fn random_function<R: Rng + ?Sized>(&self, rng: &mut R) -> Symbol {
        self.functions[rng.random_range(0..self.functions.len())]
    }

    /// Draws a terminal; a fresh `Parameter` claims the next slot in `theta`.
    pub(crate) fn random_terminal<R: Rng + ?Sized>(&self, rng: &mut R, theta: &mut Vec<f64>) -> Symbol {
        let choice = rng.random_range(0..=self.n_variables);
        if choice < self.n_variables {
            Symbol::Variable(choice)
        } else {
            let (lo, hi) = self.parameter_init_range;
            let slot = theta.len();
            theta.push(rng.random_range(lo..hi));
            Symbol::Parameter(slot)
        }
    }

    /// Function symbols of the same arity that can replace `sym`.
    pub(crate) fn swap_candidates(&self, sym: &Symbol) -> Vec<Symbol> {
        self.functions
            .iter()
            .copied()
            .filter(|f| f.arity() == sym.arity() && !f.same_kind(sym))
            .collect()
    }
}

struct ArenaNode {
    symbol: Symbol,
    children: Vec<usize>,
}

/// PTC2: grow the tree by expanding a uniformly chosen frontier slot with a
/// function node until the length budget is met, then fill every remaining
/// slot with a terminal. Depth-capped slots are filled with terminals right
/// away. New parameter leaves push their initial values onto `theta`.
pub fn create_random_tree<R: Rng + ?Sized>(
    rng: &mut R,
    grammar: &Grammar,
    theta: &mut Vec<f64>,
    target_length: usize,
    max_depth: usize,
) -> ExpressionTree {
    assert!(target_length >= 1);
    if target_length == 1 || max_depth <= 1 || grammar.functions.is_empty() {
        let sym = grammar.random_terminal(rng, theta);
        return ExpressionTree::from_prefix(vec![sym]).expect("single terminal is well-formed");
    }

    let mut arena: Vec<ArenaNode> = Vec::with_capacity(target_length);
    let root_sym = grammar.random_function(rng);
    arena.push(ArenaNode { symbol: root_sym, children: Vec::new() });
    // (parent index, child position, depth of the slot)
    let mut frontier: Vec<(usize, usize, usize)> = (0..root_sym.arity()).map(|c| (0, c, 2)).collect();
    let mut size = 1usize;

    // `size + frontier.len()` is the final length if every open slot were
    // filled with a terminal right now; placing a node of arity `a` raises it
    // by `a`, so expansion is gated on the headroom to the target. The cap is
    // hard: the result never exceeds `target_length`.
    while !frontier.is_empty() {
        let prospective = size + frontier.len();
        if prospective >= target_length {
            break;
        }
        let headroom = target_length - prospective;
        let pick = rng.random_range(0..frontier.len());
        let (parent, pos, depth) = frontier.swap_remove(pick);
        let symbol = if depth >= max_depth || headroom < 2 {
            grammar.random_terminal(rng, theta)
        } else {
            grammar.random_function(rng)
        };
        let idx = arena.len();
        arena.push(ArenaNode { symbol, children: Vec::new() });
        attach(&mut arena, parent, pos, idx);
        for c in 0..symbol.arity() {
            frontier.push((idx, c, depth + 1));
        }
        size += 1;
    }
    for (parent, pos, _) in frontier {
        let symbol = grammar.random_terminal(rng, theta);
        let idx = arena.len();
        arena.push(ArenaNode { symbol, children: Vec::new() });
        attach(&mut arena, parent, pos, idx);
    }

    let mut prefix = Vec::with_capacity(arena.len());
    flatten(&arena, 0, &mut prefix);
    ExpressionTree::from_prefix(prefix).expect("PTC2 output is well-formed")
}

fn attach(arena: &mut [ArenaNode], parent: usize, pos: usize, child: usize) {
    let children = &mut arena[parent].children;
    if children.len() <= pos {
        children.resize(pos + 1, usize::MAX);
    }
    children[pos] = child;
}

fn flatten(arena: &[ArenaNode], idx: usize, out: &mut Vec<Symbol>) {
    let node = &arena[idx];
    out.push(node.symbol);
    for c in 0..node.symbol.arity() {
        flatten(arena, node.children[c], out);
    }
}
