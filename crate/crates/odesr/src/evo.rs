//! Offspring-selection genetic algorithm over ODE system models.
//!
//! Reproduction draws the first parent fitness-proportionally and the second
//! uniformly, applies per-position subtree crossover and (rarely) one of four
//! mutation kinds, and accepts an offspring into the next generation only if
//! it is strictly better than both parents. A generation that needs more than
//! `max_selection_pressure` attempts per population slot terminates the run.
//! Replacement is generational with elites; optimized parameter values are
//! written back into individuals whenever they are evaluated.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::expr::{
    create_random_tree, crossover_models, mutate, Grammar, MutationKind, OdeSystemModel, TreeLimits,
};
use crate::fitness::{evaluate_fitness, FitContext};

#[derive(Debug, Clone, PartialEq)]
pub struct GpConfig {
    pub population_size: usize,
    /// Probability that each tree position performs subtree crossover.
    pub crossover_rate_per_tree: f64,
    /// Probability that the assembled offspring is mutated (one kind, chosen
    /// uniformly).
    pub mutation_rate_per_individual: f64,
    /// Run terminates when attempted offspring / population size exceeds this
    /// within one generation.
    pub max_selection_pressure: f64,
    pub max_generations: usize,
    pub max_evaluated_solutions: u64,
    pub elite_count: usize,
    pub grammar: Grammar,
    pub tree_limits: TreeLimits,
    pub seed: u64,
    /// Optional early stop once the best fitness drops below this value.
    pub target_fitness: Option<f64>,
    /// PTC2 target lengths are drawn uniformly from this range.
    pub init_length_range: (usize, usize),
    pub selection: SelectionScheme,
}

impl GpConfig {
    pub fn new(grammar: Grammar, seed: u64) -> Self {
        let limits = TreeLimits::default();
        GpConfig {
            population_size: 300,
            crossover_rate_per_tree: 0.30,
            mutation_rate_per_individual: 0.05,
            max_selection_pressure: 100.0,
            max_generations: 25,
            max_evaluated_solutions: 100_000,
            elite_count: 1,
            grammar,
            tree_limits: limits,
            seed,
            target_fitness: None,
            init_length_range: (3, limits.max_length),
            selection: SelectionScheme::InverseFitness,
        }
    }
}

/// Weighting used for the fitness-proportional first parent. Fitness is
/// minimized, so "proportional" needs an inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionScheme {
    /// Weight 1 / (fitness + epsilon).
    InverseFitness,
    /// Weight population_size - rank (best rank 0).
    RankProportional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub model: OdeSystemModel,
    pub fitness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    Generations,
    EvaluationBudget,
    SelectionPressure,
    TargetFitness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fitness: f64,
    pub best_so_far: f64,
    pub median_fitness: f64,
    pub attempts: u64,
    pub accepted: usize,
    pub evaluated_total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Best individual over everything ever evaluated, including rejected
    /// offspring.
    pub best: Individual,
    pub generations: usize,
    pub evaluated_solutions: u64,
    pub lm_residual_evaluations: u64,
    pub tree_evaluations: u64,
    pub ivp_solves: u64,
    pub termination_reason: TerminationReason,
    pub trace: Vec<GenerationStats>,
}

/// Fitness-proportional selection (weights 1/(fitness + 1e-12)); penalty
/// individuals get vanishing but non-zero probability. Returns an index.
pub fn proportional_select<R: Rng + ?Sized>(fitnesses: &[f64], rng: &mut R) -> usize {
    let dist = proportional_weights(fitnesses);
    dist.sample(rng)
}

fn proportional_weights(fitnesses: &[f64]) -> WeightedIndex<f64> {
    assert!(!fitnesses.is_empty(), "selection over empty population");
    WeightedIndex::new(fitnesses.iter().map(|f| 1.0 / (f + 1e-12)))
        .expect("fitness values are non-negative and finite")
}

fn rank_weights(fitnesses: &[f64]) -> WeightedIndex<f64> {
    let n = fitnesses.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b]));
    let mut weights = vec![0.0; n];
    for (rank, idx) in order.into_iter().enumerate() {
        weights[idx] = (n - rank) as f64;
    }
    WeightedIndex::new(weights).expect("rank weights are positive")
}

/// Runs the algorithm to termination, seeding a dedicated RNG from
/// `config.seed`. Identical (config, dataset) pairs replay identically.
pub fn run(config: &GpConfig, ctx: &FitContext) -> RunResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_with_rng(config, ctx, &mut rng)
}

pub fn run_with_rng<R: Rng + ?Sized>(config: &GpConfig, ctx: &FitContext, rng: &mut R) -> RunResult {
    assert!(config.population_size >= 1);
    assert!(config.elite_count < config.population_size);
    assert_eq!(
        config.grammar.n_variables,
        ctx.dataset().dimension(),
        "grammar dimension must match the dataset"
    );
    let dim = ctx.dataset().dimension();
    let start_evals = ctx.budget().snapshot();
    let evaluated = |ctx: &FitContext| ctx.budget().snapshot().fitness_evaluations - start_evals.fitness_evaluations;

    // Initial population.
    let mut population: Vec<Individual> = (0..config.population_size)
        .map(|_| {
            let mut theta = Vec::new();
            let trees = (0..dim)
                .map(|_| {
                    let target =
                        rng.random_range(config.init_length_range.0..=config.init_length_range.1);
                    create_random_tree(rng, &config.grammar, &mut theta, target, config.tree_limits.max_depth)
                })
                .collect();
            let mut model = OdeSystemModel::assemble(trees, &theta).expect("random model is valid");
            let (fitness, theta_opt) = evaluate_fitness(&model, ctx);
            model.set_theta(&theta_opt);
            Individual { model, fitness }
        })
        .collect();

    let mut best = population
        .iter()
        .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
        .cloned()
        .expect("population is non-empty");
    let mut trace: Vec<GenerationStats> = Vec::new();
    let mut generations = 0usize;

    let record = |trace: &mut Vec<GenerationStats>,
                  population: &[Individual],
                  generation: usize,
                  best_so_far: f64,
                  attempts: u64,
                  accepted: usize,
                  evaluated_total: u64| {
        let mut fits: Vec<f64> = population.iter().map(|p| p.fitness).collect();
        fits.sort_by(f64::total_cmp);
        trace.push(GenerationStats {
            generation,
            best_fitness: fits[0],
            best_so_far,
            median_fitness: fits[fits.len() / 2],
            attempts,
            accepted,
            evaluated_total,
        });
    };
    record(&mut trace, &population, 0, best.fitness, 0, population.len(), evaluated(ctx));

    let finish = |reason: TerminationReason,
                  best: Individual,
                  generations: usize,
                  trace: Vec<GenerationStats>,
                  ctx: &FitContext| {
        let snap = ctx.budget().snapshot();
        RunResult {
            best,
            generations,
            evaluated_solutions: snap.fitness_evaluations - start_evals.fitness_evaluations,
            lm_residual_evaluations: snap.lm_residual_evaluations - start_evals.lm_residual_evaluations,
            tree_evaluations: snap.tree_evaluations - start_evals.tree_evaluations,
            ivp_solves: snap.ivp_solves - start_evals.ivp_solves,
            termination_reason: reason,
            trace,
        }
    };

    if let Some(target) = config.target_fitness {
        if best.fitness < target {
            return finish(TerminationReason::TargetFitness, best, 0, trace, ctx);
        }
    }
    if evaluated(ctx) >= config.max_evaluated_solutions {
        return finish(TerminationReason::EvaluationBudget, best, 0, trace, ctx);
    }

    while generations < config.max_generations {
        let fitnesses: Vec<f64> = population.iter().map(|p| p.fitness).collect();
        let first_parent_dist = match config.selection {
            SelectionScheme::InverseFitness => proportional_weights(&fitnesses),
            SelectionScheme::RankProportional => rank_weights(&fitnesses),
        };

        // Elites survive unchanged.
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b]));
        let mut next: Vec<Individual> =
            order[..config.elite_count].iter().map(|&i| population[i].clone()).collect();

        let mut attempts = 0u64;
        let attempt_cap = (config.max_selection_pressure * config.population_size as f64) as u64;

        while next.len() < config.population_size {
            // The cap terminates the run once attempted/population exceeds it.
            if attempts > attempt_cap {
                generations += 1;
                record(&mut trace, &population, generations, best.fitness, attempts, next.len(), evaluated(ctx));
                return finish(TerminationReason::SelectionPressure, best, generations, trace, ctx);
            }
            if evaluated(ctx) >= config.max_evaluated_solutions {
                generations += 1;
                record(&mut trace, &population, generations, best.fitness, attempts, next.len(), evaluated(ctx));
                return finish(TerminationReason::EvaluationBudget, best, generations, trace, ctx);
            }
            attempts += 1;

            let pa = first_parent_dist.sample(rng);
            let pb = rng.random_range(0..population.len());
            let mut child_model = crossover_models(
                &population[pa].model,
                &population[pb].model,
                config.crossover_rate_per_tree,
                &config.tree_limits,
                rng,
            );
            if rng.random_range(0.0..1.0) < config.mutation_rate_per_individual {
                let kind = MutationKind::ALL[rng.random_range(0..MutationKind::ALL.len())];
                child_model = mutate(&child_model, &config.grammar, &config.tree_limits, kind, rng);
            }

            let (fitness, theta_opt) = evaluate_fitness(&child_model, ctx);
            child_model.set_theta(&theta_opt);
            let child = Individual { model: child_model, fitness };

            if child.fitness < best.fitness {
                best = child.clone();
            }
            // Offspring selection: strictly better than both parents.
            if child.fitness < population[pa].fitness && child.fitness < population[pb].fitness {
                assert!(
                    child.fitness < population[pa].fitness.min(population[pb].fitness),
                    "accepted offspring must be strictly better than both parents"
                );
                next.push(child);
            }

            if let Some(target) = config.target_fitness {
                if best.fitness < target {
                    generations += 1;
                    record(&mut trace, &population, generations, best.fitness, attempts, next.len(), evaluated(ctx));
                    return finish(TerminationReason::TargetFitness, best, generations, trace, ctx);
                }
            }
        }

        population = next;
        generations += 1;
        let accepted = population.len() - config.elite_count;
        record(&mut trace, &population, generations, best.fitness, attempts, accepted, evaluated(ctx));
    }

    finish(TerminationReason::Generations, best, generations, trace, ctx)
}

#[cfg(test)]
mod tests;
