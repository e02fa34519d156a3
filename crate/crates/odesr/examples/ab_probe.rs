// A/B probe: selection scheme and step-cap variants on one instance
use odesr::evo::{self, GpConfig, SelectionScheme};
use odesr::expr::{Grammar, Symbol};
use odesr::fitness::{ivp_snmse, ConfigurationId, FitContext, FitnessConfig};
use odesr::odeint::IvpControls;
use odesr::problems::{generate, Instance};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let instance = Instance::from_name(&args[1]).unwrap();
    let variant = args[2].as_str();
    let seeds: Vec<u64> = args[3..].iter().map(|s| s.parse().unwrap()).collect();
    let dataset = generate(instance).unwrap();

    let worker = |seed: u64| {
            let mut fitness_config = ConfigurationId::IOptDOpt.fitness_config();
            let max_steps = if variant == "steps5k" { 5_000 } else { 2_000 };
            fitness_config.controls = IvpControls { max_steps, ..IvpControls::default() };
            let ctx = FitContext::new(dataset.clone(), fitness_config);
            let mut grammar = Grammar::standard(dataset.dimension());
            if variant == "paperfns" {
                grammar.functions = vec![Symbol::Add, Symbol::Mul, Symbol::Sin, Symbol::Cos];
            }
            let mut gp = GpConfig::new(grammar, seed);
            gp.max_generations = 25;
            gp.max_evaluated_solutions = 100_000;
            gp.target_fitness = Some(0.01);
            if variant == "rank" {
                gp.selection = SelectionScheme::RankProportional;
            }
            let result = evo::run(&gp, &ctx);
            let eval_ctx = FitContext::new(dataset.clone(), FitnessConfig::default());
            let snmse = ivp_snmse(&result.best.model, result.best.model.theta(), &eval_ctx);
            (seed, snmse < 0.01, snmse, result.generations)
    };
    let runs: Vec<(u64, bool, f64, usize)> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds.iter().map(|&s| scope.spawn(move || worker(s))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (seed, ok, snmse, gens) in &runs {
        println!("{} {variant} seed {seed}: {} snmse {snmse:.4e} gens {gens}", instance.name(), if *ok { "OK  " } else { "FAIL" });
    }
    let wins = runs.iter().filter(|r| r.1).count();
    println!("{} {variant}: {wins}/{}", instance.name(), runs.len());
}
