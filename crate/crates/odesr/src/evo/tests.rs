use super::*;
use crate::fitness::{ConfigurationId, FitContext, PENALTY_FITNESS};
use crate::odeint::IvpControls;
use crate::problems::{generate, Instance};

fn chemical_context(config_id: ConfigurationId) -> FitContext {
    FitContext::new(generate(Instance::ChemicalReaction).unwrap(), config_id.fitness_config())
}

fn small_config(seed: u64) -> GpConfig {
    let mut config = GpConfig::new(Grammar::standard(3), seed);
    config.population_size = 20;
    config.max_generations = 3;
    config.max_evaluated_solutions = 50_000;
    config
}

mod selection {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_individual_is_always_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(proportional_select(&[0.37], &mut rng), 0);
        }
    }

    #[test]
    fn equal_fitness_is_a_coin_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let mut first = 0usize;
        for _ in 0..draws {
            if proportional_select(&[1.0, 1.0], &mut rng) == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn tenfold_better_fitness_wins_ten_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let mut first = 0usize;
        for _ in 0..draws {
            if proportional_select(&[0.1, 1.0], &mut rng) == 0 {
                first += 1;
            }
        }
        let freq = first as f64 / draws as f64;
        let expected = 10.0 / 11.0;
        assert!((freq - expected).abs() < 0.02, "frequency {freq} vs {expected}");
    }

    #[test]
    fn penalty_individuals_are_effectively_never_picked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut penalized = 0usize;
        for _ in 0..10_000 {
            if proportional_select(&[0.5, PENALTY_FITNESS], &mut rng) == 1 {
                penalized += 1;
            }
        }
        assert!(penalized < 5, "penalty individual picked {penalized} times");
    }
}

mod runs {
    use super::*;

    #[test]
    fn elitism_keeps_the_best_and_best_is_monotone() {
        let ctx = chemical_context(ConfigurationId::D);
        let config = small_config(5);
        let result = run(&config, &ctx);
        for w in result.trace.windows(2) {
            assert!(
                w[1].best_so_far <= w[0].best_so_far,
                "best-so-far increased: {:?} -> {:?}",
                w[0],
                w[1]
            );
            assert!(
                w[1].best_fitness <= w[0].best_fitness + 1e-15,
                "population best worsened despite elitism"
            );
        }
        assert_eq!(result.best.fitness, result.trace.last().unwrap().best_so_far);
    }

    #[test]
    fn hopeless_population_terminates_on_selection_pressure() {
        // max_steps = 0 makes every IVP fail, so every individual scores the
        // same penalty and no offspring can be strictly better.
        let mut fitness_config = ConfigurationId::I.fitness_config();
        fitness_config.controls = IvpControls { max_steps: 0, ..IvpControls::default() };
        let ctx = FitContext::new(generate(Instance::ChemicalReaction).unwrap(), fitness_config);
        let mut config = small_config(6);
        config.population_size = 5;
        config.max_selection_pressure = 20.0;
        let result = run(&config, &ctx);
        assert_eq!(result.termination_reason, TerminationReason::SelectionPressure);
        let last = result.trace.last().unwrap();
        assert!(
            last.attempts as f64 / config.population_size as f64 > 20.0,
            "attempted/population = {} should exceed the cap",
            last.attempts as f64 / config.population_size as f64
        );
        assert_eq!(result.best.fitness, PENALTY_FITNESS);
    }

    #[test]
    fn replay_from_the_same_seed_is_identical() {
        let config = small_config(7);
        let a = run(&config, &chemical_context(ConfigurationId::D));
        let b = run(&config, &chemical_context(ConfigurationId::D));
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.best.model, b.best.model);
        assert_eq!(a.best.fitness.to_bits(), b.best.fitness.to_bits());
        assert_eq!(a.evaluated_solutions, b.evaluated_solutions);
    }

    #[test]
    fn evaluation_budget_is_respected_with_slack() {
        let ctx = chemical_context(ConfigurationId::D);
        let mut config = small_config(8);
        config.max_generations = 50;
        config.max_evaluated_solutions = 100;
        let result = run(&config, &ctx);
        assert_eq!(result.termination_reason, TerminationReason::EvaluationBudget);
        assert!(
            result.evaluated_solutions <= config.max_evaluated_solutions + config.population_size as u64,
            "evaluated {} against budget {}",
            result.evaluated_solutions,
            config.max_evaluated_solutions
        );
    }

    #[test]
    fn target_fitness_stops_the_run_early() {
        let ctx = chemical_context(ConfigurationId::IOptDOpt);
        let mut config = small_config(9);
        config.max_generations = 25;
        config.target_fitness = Some(1e9);
        let result = run(&config, &ctx);
        assert_eq!(result.termination_reason, TerminationReason::TargetFitness);
        assert!(result.best.fitness < 1e9);
    }

    #[test]
    fn accepted_offspring_counter_matches_population_turnover() {
        let ctx = chemical_context(ConfigurationId::D);
        let config = small_config(10);
        let result = run(&config, &ctx);
        for stats in &result.trace[1..] {
            if stats.generation > 0 && result.termination_reason == TerminationReason::Generations {
                assert_eq!(stats.accepted, config.population_size - config.elite_count);
            }
            assert!(stats.attempts >= stats.accepted as u64);
        }
    }
}
