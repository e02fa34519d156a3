//! Library-level pipeline test: benchmark dataset -> evolutionary search ->
//! best model -> textual round trip -> independent rescoring.

use odesr::evo::{self, GpConfig};
use odesr::expr::{deserialize, serialize_with_names, Grammar};
use odesr::fitness::{ivp_snmse, ConfigurationId, FitContext, FitnessConfig};
use odesr::odeint::IvpControls;
use odesr::problems::{generate, Instance};

#[test]
fn search_serialize_and_rescore_agree() {
    let dataset = generate(Instance::ChemicalReaction).unwrap();
    let mut fitness_config = ConfigurationId::DOpt.fitness_config();
    fitness_config.controls = IvpControls { max_steps: 2_000, ..IvpControls::default() };
    let ctx = FitContext::new(dataset.clone(), fitness_config);

    let mut gp = GpConfig::new(Grammar::standard(3), 42);
    gp.population_size = 30;
    gp.max_generations = 4;
    gp.max_evaluated_solutions = 3_000;
    let result = evo::run(&gp, &ctx);

    assert!(result.best.fitness.is_finite());
    assert!(result.evaluated_solutions > 0);
    assert_eq!(result.trace.first().unwrap().generation, 0);

    // The winner round-trips through the text format bit-exactly.
    let text = serialize_with_names(&result.best.model, dataset.variable_names());
    let reparsed = deserialize(&text).unwrap();
    assert_eq!(reparsed, result.best.model);

    // An independent context rescoring the reparsed model agrees with the
    // original model's score under the same controls.
    let eval_ctx = FitContext::new(dataset, FitnessConfig::default());
    let a = ivp_snmse(&result.best.model, result.best.model.theta(), &eval_ctx);
    let b = ivp_snmse(&reparsed, reparsed.theta(), &eval_ctx);
    assert_eq!(a.to_bits(), b.to_bits(), "rescoring a round-tripped model must be bit-identical");
}

#[test]
fn budgets_propagate_to_the_run_result() {
    let dataset = generate(Instance::Glider).unwrap();
    let ctx = FitContext::new(dataset, ConfigurationId::D.fitness_config());
    let mut gp = GpConfig::new(Grammar::standard(2), 7);
    gp.population_size = 15;
    gp.max_generations = 2;
    gp.max_evaluated_solutions = 500;
    let result = evo::run(&gp, &ctx);
    let snap = ctx.budget().snapshot();
    assert_eq!(result.evaluated_solutions, snap.fitness_evaluations);
    assert_eq!(result.tree_evaluations, snap.tree_evaluations);
    assert!(result.evaluated_solutions <= 500 + 15);
}
