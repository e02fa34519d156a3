//! Genetic variation operators: subtree crossover (position-segregated) and
//! the four mutation kinds.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{create_random_tree, ExpressionTree, Grammar, OdeSystemModel, Symbol, TreeLimits};

/// How many crossover point pairs are tried before giving up and returning a
/// copy of the first parent (only needed when every splice would violate the
/// tree limits).
pub const CROSSOVER_RETRIES: usize = 16;

/// Subtree crossover between two trees at the same state-variable position.
/// The child is `parent_a` with one uniformly chosen subtree replaced by a
/// uniformly chosen subtree of `parent_b`. Parameter slots are copied as-is;
/// callers that combine trees from different models must remap slots first
/// (see [`crossover_models`]).
pub fn subtree_crossover<R: Rng + ?Sized>(
    parent_a: &ExpressionTree,
    parent_b: &ExpressionTree,
    limits: &TreeLimits,
    rng: &mut R,
) -> ExpressionTree {
    for _ in 0..CROSSOVER_RETRIES {
        let point_a = rng.random_range(0..parent_a.len());
        let point_b = rng.random_range(0..parent_b.len());
        let child_len = parent_a.len() - parent_a.subtree_len(point_a) + parent_b.subtree_len(point_b);
        if child_len > limits.max_length {
            continue;
        }
        let donor = parent_b.subtree(point_b);
        let child = parent_a.with_replaced_subtree(point_a, &donor);
        if child.depth() <= limits.max_depth {
            return child;
        }
    }
    parent_a.clone()
}

/// Per-position subtree crossover over whole systems. Each tree position
/// crosses with probability `rate_per_tree`; positions that do not fire copy
/// the first parent's tree. The child's parameter vector is rebuilt from the
/// slots that survive, so it is canonical regardless of which parent each
/// node came from.
pub fn crossover_models<R: Rng + ?Sized>(
    a: &OdeSystemModel,
    b: &OdeSystemModel,
    rate_per_tree: f64,
    limits: &TreeLimits,
    rng: &mut R,
) -> OdeSystemModel {
    assert_eq!(a.dimension(), b.dimension(), "crossover requires equal dimensions");
    let offset = a.parameter_count();
    let mut combined = Vec::with_capacity(offset + b.parameter_count());
    combined.extend_from_slice(a.theta());
    combined.extend_from_slice(b.theta());

    let mut child_trees = Vec::with_capacity(a.dimension());
    for i in 0..a.dimension() {
        if rng.random_range(0.0..1.0) < rate_per_tree {
            let shifted_b = b.tree(i).map_symbols(|s| match s {
                Symbol::Parameter(k) => Symbol::Parameter(k + offset),
                other => other,
            });
            child_trees.push(subtree_crossover(a.tree(i), &shifted_b, limits, rng));
        } else {
            child_trees.push(a.tree(i).clone());
        }
    }
    OdeSystemModel::assemble(child_trees, &combined).expect("crossover preserves model invariants")
}

/// The four mutation kinds of the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    /// Replace a uniformly chosen subtree with a freshly grown random branch.
    ReplaceSubtree,
    /// Add x ~ N(0,1) independently to every numeric parameter.
    PerturbAllParameters,
    /// Add x ~ N(0,1) to a single uniformly chosen numeric parameter.
    PerturbOneParameter,
    /// Swap one function symbol for another of the same arity.
    ChangeFunctionSymbol,
}

impl MutationKind {
    pub const ALL: [MutationKind; 4] = [
        MutationKind::ReplaceSubtree,
        MutationKind::PerturbAllParameters,
        MutationKind::PerturbOneParameter,
        MutationKind::ChangeFunctionSymbol,
    ];
}

/// Applies exactly one mutation kind. Structural kinds pick one tree
/// uniformly; parameter kinds act on the flat vector. A symbol change on a
/// tree without function nodes (or without same-arity alternatives) falls
/// back to the single-parameter perturbation, as does any parameter kind on
/// a model without parameters (which then returns an unchanged copy).
pub fn mutate<R: Rng + ?Sized>(
    model: &OdeSystemModel,
    grammar: &Grammar,
    limits: &TreeLimits,
    kind: MutationKind,
    rng: &mut R,
) -> OdeSystemModel {
    match kind {
        MutationKind::ReplaceSubtree => {
            let t = rng.random_range(0..model.dimension());
            let tree = model.tree(t);
            let point = rng.random_range(0..tree.len());
            let room = limits
                .max_length
                .saturating_sub(tree.len() - tree.subtree_len(point))
                .max(1);
            let target = rng.random_range(1..=room);
            let slot_depth = depth_of_node(tree, point);
            let branch_depth_budget = (limits.max_depth + 1).saturating_sub(slot_depth).max(1);

            // Fresh branch parameters claim slots past the existing vector.
            let mut extended = model.theta().to_vec();
            let branch = create_random_tree(rng, grammar, &mut extended, target, branch_depth_budget);
            let mut trees: Vec<ExpressionTree> = model.trees().to_vec();
            trees[t] = tree.with_replaced_subtree(point, &branch);
            OdeSystemModel::assemble(trees, &extended).expect("mutation preserves model invariants")
        }
        MutationKind::PerturbAllParameters => {
            let mut theta = model.theta().to_vec();
            for v in theta.iter_mut() {
                let eps: f64 = StandardNormal.sample(rng);
                *v += eps;
            }
            model.with_theta(theta)
        }
        MutationKind::PerturbOneParameter => {
            if model.parameter_count() == 0 {
                return model.clone();
            }
            let mut theta = model.theta().to_vec();
            let k = rng.random_range(0..theta.len());
            let eps: f64 = StandardNormal.sample(rng);
            theta[k] += eps;
            model.with_theta(theta)
        }
        MutationKind::ChangeFunctionSymbol => {
            let t = rng.random_range(0..model.dimension());
            let tree = model.tree(t);
            let candidates: Vec<usize> = (0..tree.len())
                .filter(|&i| {
                    tree.symbol_at(i).is_function() && !grammar.swap_candidates(&tree.symbol_at(i)).is_empty()
                })
                .collect();
            if candidates.is_empty() {
                return mutate(model, grammar, limits, MutationKind::PerturbOneParameter, rng);
            }
            let point = candidates[rng.random_range(0..candidates.len())];
            let options = grammar.swap_candidates(&tree.symbol_at(point));
            let replacement = options[rng.random_range(0..options.len())];
            let mut idx = 0usize;
            let mutated = tree.map_symbols(|s| {
                let out = if idx == point { replacement } else { s };
                idx += 1;
                out
            });
            let mut trees: Vec<ExpressionTree> = model.trees().to_vec();
            trees[t] = mutated;
            OdeSystemModel::new(trees, model.theta().to_vec()).expect("symbol swap preserves invariants")
        }
    }
}

/// Depth (root = 1) of the node at `index` in prefix layout.
fn depth_of_node(tree: &ExpressionTree, index: usize) -> usize {
    let mut pending: Vec<usize> = Vec::new();
    for i in 0..tree.len() {
        let d = pending.len() + 1;
        if i == index {
            return d;
        }
        let arity = tree.symbol_at(i).arity();
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
    unreachable!("index within tree");
}
