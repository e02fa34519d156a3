use super::*;
use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tree(symbols: Vec<Symbol>) -> ExpressionTree {
    ExpressionTree::from_prefix(symbols).unwrap()
}

fn random_model<R: Rng>(rng: &mut R, dim: usize, limits: &TreeLimits) -> OdeSystemModel {
    let grammar = Grammar::standard(dim);
    let mut theta = Vec::new();
    let trees = (0..dim)
        .map(|_| {
            let target = rng.random_range(3..=limits.max_length.min(20));
            create_random_tree(rng, &grammar, &mut theta, target, limits.max_depth)
        })
        .collect();
    OdeSystemModel::assemble(trees, &theta).unwrap()
}

mod evaluation {
    use super::*;

    #[test]
    fn linear_decay_term() {
        let t = tree(vec![Symbol::Mul, Symbol::Constant(-1.4), Symbol::Variable(0)]);
        assert_relative_eq!(t.evaluate(&[0.1, 0.0, 0.0], &[]), -0.14, max_relative = 1e-15);
    }

    #[test]
    fn identity_variable() {
        let t = tree(vec![Symbol::Variable(0)]);
        assert_eq!(t.evaluate(&[7.0], &[]), 7.0);
    }

    #[test]
    fn sin_plus_cos_at_zero() {
        let t = tree(vec![
            Symbol::Add,
            Symbol::Sin,
            Symbol::Parameter(0),
            Symbol::Cos,
            Symbol::Parameter(0),
        ]);
        assert_eq!(t.evaluate(&[], &[0.0]), 1.0);
    }

    #[test]
    fn operand_order_of_sub_and_div() {
        let s = tree(vec![Symbol::Sub, Symbol::Variable(0), Symbol::Variable(1)]);
        assert_eq!(s.evaluate(&[5.0, 3.0], &[]), 2.0);
        let d = tree(vec![Symbol::Div, Symbol::Variable(0), Symbol::Variable(1)]);
        assert_eq!(d.evaluate(&[6.0, 3.0], &[]), 2.0);
    }

    #[test]
    fn division_is_unprotected() {
        let d = tree(vec![Symbol::Div, Symbol::Constant(1.0), Symbol::Variable(0)]);
        assert!(d.evaluate(&[0.0], &[]).is_infinite());
    }

    #[test]
    fn pow_const_matches_powf() {
        let p = tree(vec![Symbol::PowConst(-0.1), Symbol::Variable(0)]);
        assert_relative_eq!(p.evaluate(&[0.5], &[]), 0.5f64.powf(-0.1), max_relative = 1e-15);
    }

    #[test]
    fn malformed_prefix_sequences_are_rejected() {
        assert_eq!(ExpressionTree::from_prefix(vec![]), Err(TreeError::Empty));
        assert!(ExpressionTree::from_prefix(vec![Symbol::Add, Symbol::Variable(0)]).is_err());
        assert!(ExpressionTree::from_prefix(vec![Symbol::Variable(0), Symbol::Variable(1)]).is_err());
    }
}

mod gradients {
    use super::*;

    #[test]
    fn product_rule() {
        let t = tree(vec![Symbol::Mul, Symbol::Parameter(0), Symbol::Variable(0)]);
        let dual = t.evaluate_with_gradient(&[3.0], &[2.0]);
        assert_eq!(dual.value, 6.0);
        assert_eq!(dual.partials, vec![3.0]);
    }

    #[test]
    fn sine_derivative_at_zero() {
        let t = tree(vec![Symbol::Sin, Symbol::Parameter(0)]);
        let dual = t.evaluate_with_gradient(&[], &[0.0]);
        assert_eq!(dual.value, 0.0);
        assert_eq!(dual.partials, vec![1.0]);
    }

    #[test]
    fn state_seeding_gives_state_jacobian_rows() {
        // f = x0 * x1 + theta0: df/dx0 = x1, df/dx1 = x0, df/dtheta0 = 1.
        let t = tree(vec![
            Symbol::Add,
            Symbol::Mul,
            Symbol::Variable(0),
            Symbol::Variable(1),
            Symbol::Parameter(0),
        ]);
        let mut ws = EvalWorkspace::default();
        let mut grad = vec![0.0; 3];
        let v = t.eval_dual_into(&[2.0, 5.0], &[1.0], DualSeeding::StateThenParameters { dim: 2 }, &mut ws, &mut grad);
        assert_eq!(v, 11.0);
        assert_eq!(grad, vec![5.0, 2.0, 1.0]);
    }

    /// Independent recursive evaluator used as the oracle's value route.
    /// Also reports the smallest divisor magnitude seen, so near-pole cases
    /// can be excluded from finite differencing.
    fn reference_eval(t: &ExpressionTree, idx: usize, state: &[f64], theta: &[f64]) -> (f64, f64) {
        match t.symbol_at(idx) {
            Symbol::Variable(i) => (state[i], f64::INFINITY),
            Symbol::Parameter(k) => (theta[k], f64::INFINITY),
            Symbol::Constant(c) => (c, f64::INFINITY),
            Symbol::Sin => {
                let (a, d) = reference_eval(t, idx + 1, state, theta);
                (a.sin(), d)
            }
            Symbol::Cos => {
                let (a, d) = reference_eval(t, idx + 1, state, theta);
                (a.cos(), d)
            }
            Symbol::PowConst(c) => {
                let (a, d) = reference_eval(t, idx + 1, state, theta);
                (a.powf(c), d.min(a.abs()))
            }
            op @ (Symbol::Add | Symbol::Sub | Symbol::Mul | Symbol::Div) => {
                let left = idx + 1;
                let right = left + t.subtree_len(left);
                let (l, dl) = reference_eval(t, left, state, theta);
                let (r, dr) = reference_eval(t, right, state, theta);
                let d = dl.min(dr);
                match op {
                    Symbol::Add => (l + r, d),
                    Symbol::Sub => (l - r, d),
                    Symbol::Mul => (l * r, d),
                    Symbol::Div => (l / r, d.min(r.abs())),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Forward-mode partials against a Richardson-extrapolated central
    /// finite-difference oracle on random trees. Cases where the oracle
    /// itself is unreliable (near a division pole, or visibly truncation
    /// limited) are skipped; the autodiff values must match wherever the
    /// oracle is trustworthy.
    #[test]
    fn matches_finite_differences_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let grammar = Grammar::standard(3);
        let limits = TreeLimits::default();
        let h = 1e-6;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 100 && attempts < 50_000 {
            attempts += 1;
            let mut theta = Vec::new();
            let target = rng.random_range(3..=20);
            let t = create_random_tree(&mut rng, &grammar, &mut theta, target, limits.max_depth);
            if theta.is_empty() {
                continue;
            }
            let state: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();

            let (ref_value, min_divisor) = reference_eval(&t, 0, &state, &theta);
            if !ref_value.is_finite() || ref_value.abs() > 1e3 || min_divisor < 1e-2 {
                continue;
            }
            // The two value routes must agree regardless of conditioning.
            let value = t.evaluate(&state, &theta);
            assert!(
                (value - ref_value).abs() <= 1e-9 * 1.0f64.max(ref_value.abs()),
                "stack evaluation {value} disagrees with recursive evaluation {ref_value}"
            );

            let central = |theta: &[f64], k: usize, step: f64| -> Option<f64> {
                let mut tp = theta.to_vec();
                tp[k] += step;
                let mut tm = theta.to_vec();
                tm[k] -= step;
                let (fp, dp) = reference_eval(&t, 0, &state, &tp);
                let (fm, dm) = reference_eval(&t, 0, &state, &tm);
                (fp.is_finite() && fm.is_finite() && fp.abs().max(fm.abs()) < 1e3 && dp.min(dm) > 1e-2)
                    .then(|| (fp - fm) / (2.0 * step))
            };

            let dual = t.evaluate_with_gradient(&state, &theta);
            if !dual.partials.iter().all(|p| p.is_finite() && p.abs() < 1e4) {
                continue;
            }
            let mut usable = true;
            let mut asserted = 0;
            for k in 0..theta.len() {
                let (Some(t1), Some(t2)) = (central(&theta, k, h), central(&theta, k, h / 2.0)) else {
                    usable = false;
                    break;
                };
                let scale = 1.0f64.max(dual.partials[k].abs()).max(t2.abs());
                if (t1 - t2).abs() > 1e-7 * scale {
                    // Oracle truncation dominated at this point; not usable.
                    continue;
                }
                let fd = (4.0 * t2 - t1) / 3.0;
                assert!(
                    (dual.partials[k] - fd).abs() <= 1e-6 * scale,
                    "case {checked}: partial {k} = {} vs finite difference {}",
                    dual.partials[k],
                    fd
                );
                asserted += 1;
            }
            if usable && asserted > 0 {
                checked += 1;
            }
        }
        assert_eq!(checked, 100, "not enough well-conditioned cases");
    }
}

mod creation {
    use super::*;

    #[test]
    fn unit_budget_yields_single_terminal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grammar = Grammar::standard(2);
        let mut theta = Vec::new();
        for _ in 0..100 {
            let t = create_random_tree(&mut rng, &grammar, &mut theta, 1, 8);
            assert_eq!(t.len(), 1);
            assert!(!t.symbol_at(0).is_function());
        }
    }

    #[test]
    fn length_distribution_tracks_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grammar = Grammar::standard(2);
        let limits = TreeLimits::default();
        let mut total = 0usize;
        for _ in 0..10_000 {
            let mut theta = Vec::new();
            let t = create_random_tree(&mut rng, &grammar, &mut theta, 15, limits.max_depth);
            assert!(t.len() <= limits.max_length, "length {} over cap", t.len());
            assert!(t.depth() <= limits.max_depth, "depth {} over cap", t.depth());
            total += t.len();
        }
        let mean = total as f64 / 10_000.0;
        assert!((10.0..=20.0).contains(&mean), "mean length {mean} outside [10, 20]");
    }

    #[test]
    fn created_models_round_trip_through_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let limits = TreeLimits::default();
        for _ in 0..500 {
            let model = random_model(&mut rng, 2, &limits);
            let text = serialize(&model);
            let back = deserialize(&text).unwrap();
            assert_eq!(back, model, "round trip failed for:\n{text}");
        }
    }
}

mod crossover {
    use super::*;

    #[test]
    fn terminal_first_parent_forces_root_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let limits = TreeLimits::default();
        let a = tree(vec![Symbol::Variable(0)]);
        let b = tree(vec![Symbol::Add, Symbol::Variable(0), Symbol::Sin, Symbol::Variable(1)]);
        for _ in 0..50 {
            let child = subtree_crossover(&a, &b, &limits, &mut rng);
            let is_subtree_of_b = (0..b.len()).any(|i| b.subtree(i) == child);
            assert!(is_subtree_of_b, "child {child:?} is not a subtree of b");
        }
    }

    #[test]
    fn children_respect_length_cap_over_many_crossovers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let limits = TreeLimits::default();
        let grammar = Grammar::standard(2);
        for _ in 0..10_000 {
            let mut theta = Vec::new();
            let ta = rng.random_range(3..=24);
            let tb = rng.random_range(3..=24);
            let a = create_random_tree(&mut rng, &grammar, &mut theta, ta, 8);
            let b = create_random_tree(&mut rng, &grammar, &mut theta, tb, 8);
            let child = subtree_crossover(&a, &b, &limits, &mut rng);
            assert!(child.len() <= limits.max_length);
            assert!(child.depth() <= limits.max_depth);
        }
    }

    #[test]
    fn identical_parents_only_recombine_existing_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let limits = TreeLimits::default();
        let grammar = Grammar::standard(2);
        for _ in 0..200 {
            let mut theta = Vec::new();
            let p = create_random_tree(&mut rng, &grammar, &mut theta, 12, 8);
            let child = subtree_crossover(&p, &p, &limits, &mut rng);
            for sym in child.symbols() {
                assert!(
                    p.symbols().any(|s| s == sym),
                    "child node {sym:?} does not occur in the parent"
                );
            }
        }
    }

    #[test]
    fn model_crossover_stays_within_grammar() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let limits = TreeLimits::default();
        for _ in 0..500 {
            let a = random_model(&mut rng, 3, &limits);
            let b = random_model(&mut rng, 3, &limits);
            let child = crossover_models(&a, &b, 0.5, &limits, &mut rng);
            for t in child.trees() {
                for sym in t.symbols() {
                    match sym {
                        Symbol::Add | Symbol::Sub | Symbol::Mul | Symbol::Div | Symbol::Sin | Symbol::Cos => {}
                        Symbol::Variable(i) => assert!(*i < 3),
                        Symbol::Parameter(k) => assert!(*k < child.parameter_count()),
                        other => panic!("symbol {other:?} outside the standard grammar"),
                    }
                }
            }
        }
    }
}

mod mutation {
    use super::*;

    fn fixed_model() -> OdeSystemModel {
        // du0/dt = p0 * u0 + p1, du1/dt = sin(u1)
        let t0 = tree(vec![
            Symbol::Add,
            Symbol::Mul,
            Symbol::Parameter(0),
            Symbol::Variable(0),
            Symbol::Parameter(1),
        ]);
        let t1 = tree(vec![Symbol::Sin, Symbol::Variable(1)]);
        OdeSystemModel::new(vec![t0, t1], vec![1.0, 2.0]).unwrap()
    }

    #[test]
    fn perturb_all_parameters_keeps_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = fixed_model();
        let grammar = Grammar::standard(2);
        let limits = TreeLimits::default();
        let mutated = mutate(&model, &grammar, &limits, MutationKind::PerturbAllParameters, &mut rng);
        assert_eq!(mutated.trees(), model.trees());
        assert_eq!(mutated.parameter_count(), 2);
        for (a, b) in mutated.theta().iter().zip(model.theta()) {
            assert_ne!(a, b, "every parameter should receive gaussian noise");
        }
    }

    #[test]
    fn symbol_change_swaps_within_the_same_arity() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let add = tree(vec![Symbol::Add, Symbol::Variable(0), Symbol::Variable(0)]);
        let model = OdeSystemModel::new(vec![add], vec![]).unwrap();
        let grammar = Grammar::standard(1);
        let limits = TreeLimits::default();
        for _ in 0..50 {
            let mutated = mutate(&model, &grammar, &limits, MutationKind::ChangeFunctionSymbol, &mut rng);
            let root = mutated.tree(0).symbol_at(0);
            assert!(
                matches!(root, Symbol::Mul | Symbol::Sub | Symbol::Div),
                "unexpected root {root:?}"
            );
            assert_eq!(mutated.tree(0).len(), 3);
        }
    }

    #[test]
    fn symbol_change_without_function_nodes_falls_back_to_parameter_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let leaf = tree(vec![Symbol::Parameter(0)]);
        let model = OdeSystemModel::new(vec![leaf], vec![1.0]).unwrap();
        let grammar = Grammar::standard(1);
        let limits = TreeLimits::default();
        let mutated = mutate(&model, &grammar, &limits, MutationKind::ChangeFunctionSymbol, &mut rng);
        assert_eq!(mutated.trees(), model.trees());
        assert_ne!(mutated.theta()[0], 1.0);
    }

    #[test]
    fn subtree_replacement_respects_caps_over_many_trials() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let grammar = Grammar::standard(2);
        let limits = TreeLimits::default();
        for _ in 0..10_000 {
            let model = random_model(&mut rng, 2, &limits);
            let mutated = mutate(&model, &grammar, &limits, MutationKind::ReplaceSubtree, &mut rng);
            for t in mutated.trees() {
                assert!(t.len() <= limits.max_length);
                assert!(t.depth() <= limits.max_depth);
            }
            // Canonical parameter numbering: slots are unique and in range.
            OdeSystemModel::new(mutated.trees().to_vec(), mutated.theta().to_vec()).unwrap();
        }
    }
}

mod text_format {
    use super::*;

    fn chemical_reaction() -> OdeSystemModel {
        let t1 = tree(vec![Symbol::Mul, Symbol::Parameter(0), Symbol::Variable(0)]);
        let t2 = tree(vec![
            Symbol::Sub,
            Symbol::Mul,
            Symbol::Parameter(1),
            Symbol::Variable(0),
            Symbol::Mul,
            Symbol::Parameter(2),
            Symbol::Variable(1),
        ]);
        let t3 = tree(vec![Symbol::Mul, Symbol::Parameter(3), Symbol::Variable(1)]);
        OdeSystemModel::new(vec![t1, t2, t3], vec![-1.4, 1.4, 4.2, 4.2]).unwrap()
    }

    #[test]
    fn chemical_reaction_serializes_with_printed_coefficients() {
        let text = serialize(&chemical_reaction());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4, "3 equations plus the theta listing");
        assert!(lines[0].contains("-1.4"));
        assert!(lines[1].contains("4.2"));
        assert!(lines[2].contains("4.2"));
        assert!(lines[3].starts_with("theta:"));
    }

    #[test]
    fn structure_preserving_parentheses() {
        // a + (b + c) must not flatten into left association.
        let nested = tree(vec![
            Symbol::Add,
            Symbol::Variable(0),
            Symbol::Add,
            Symbol::Variable(0),
            Symbol::Variable(0),
        ]);
        let model = OdeSystemModel::new(vec![nested], vec![]).unwrap();
        let text = serialize(&model);
        assert!(text.contains("y1 + (y1 + y1)"), "got: {text}");
        assert_eq!(deserialize(&text).unwrap(), model);
    }

    #[test]
    fn unclosed_call_reports_position() {
        let e = deserialize("dy/dt = sin(").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(e.column >= 12, "column {} should point at the unclosed call", e.column);
    }

    #[test]
    fn bad_timestamps_and_identifiers_report_lines() {
        let e = deserialize("dy1/dt = y1\ndy2/dt = y1 * zz\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("zz"));
    }

    #[test]
    fn pow_round_trips() {
        let model = deserialize("dy1/dt = 10 * pow(y1, -0.1) - pow(y1, 2)\ntheta: 1e1\n").unwrap();
        let text = serialize(&model);
        assert_eq!(deserialize(&text).unwrap(), model);
    }

    #[test]
    fn random_models_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let limits = TreeLimits::default();
        for i in 0..1000 {
            let dim = rng.random_range(1..=4);
            let model = random_model(&mut rng, dim, &limits);
            let text = serialize(&model);
            let back = deserialize(&text).unwrap_or_else(|e| panic!("case {i}: {e}\n{text}"));
            assert_eq!(back, model, "case {i} failed:\n{text}");
        }
    }

    #[test]
    fn theta_listing_overrides_inline_literals_exactly() {
        let text = "dy1/dt = 0.1 * y1\ntheta: 1.0000000000000001e-1\n";
        let model = deserialize(text).unwrap();
        assert_eq!(model.theta(), &[0.1f64]);
    }
}

mod model_invariants {
    use super::*;

    #[test]
    fn duplicate_parameter_slots_are_rejected() {
        let t0 = tree(vec![Symbol::Parameter(0)]);
        let t1 = tree(vec![Symbol::Parameter(0)]);
        assert_eq!(
            OdeSystemModel::new(vec![t0, t1], vec![1.0]),
            Err(ModelError::DuplicateParameterSlot(0))
        );
    }

    #[test]
    fn out_of_range_indices_are_rejected() {
        let t = tree(vec![Symbol::Parameter(3)]);
        assert!(matches!(
            OdeSystemModel::new(vec![t], vec![1.0]),
            Err(ModelError::ParameterOutOfRange { slot: 3, len: 1 })
        ));
        let t = tree(vec![Symbol::Variable(2)]);
        assert!(matches!(
            OdeSystemModel::new(vec![t], vec![]),
            Err(ModelError::VariableOutOfRange { index: 2, dim: 1 })
        ));
    }

    #[test]
    fn assemble_compacts_to_preorder_slots() {
        // Tree references slots 2 and 0 of a wider source vector.
        let t = tree(vec![Symbol::Add, Symbol::Parameter(2), Symbol::Parameter(0)]);
        let model = OdeSystemModel::assemble(vec![t], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(model.theta(), &[12.0, 10.0]);
        let slots: Vec<usize> = model
            .tree(0)
            .symbols()
            .filter_map(|s| match s {
                Symbol::Parameter(k) => Some(*k),
                _ => None,
            })
            .collect();
        assert_eq!(slots, vec![0, 1]);
    }
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn operator_fuzz_preserves_invariants(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let limits = TreeLimits::default();
            let grammar = Grammar::standard(2);
            let a = random_model(&mut rng, 2, &limits);
            let b = random_model(&mut rng, 2, &limits);
            let child = crossover_models(&a, &b, 0.6, &limits, &mut rng);
            let kind = MutationKind::ALL[rng.random_range(0..4)];
            let mutated = mutate(&child, &grammar, &limits, kind, &mut rng);
            for m in [&child, &mutated] {
                prop_assert!(OdeSystemModel::new(m.trees().to_vec(), m.theta().to_vec()).is_ok());
                for t in m.trees() {
                    prop_assert!(t.len() <= limits.max_length);
                    prop_assert!(t.depth() <= limits.max_depth);
                }
            }
        }

        #[test]
        fn serialization_is_identity(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let limits = TreeLimits::default();
            let model = random_model(&mut rng, 3, &limits);
            let back = deserialize(&serialize(&model)).unwrap();
            prop_assert_eq!(back, model);
        }
    }
}
