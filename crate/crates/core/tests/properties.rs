use delayctl::delayop::invert::roundtrip_residual;
use delayctl::delayop::{
    invert_collocation, op_selfadjoint_check, quad_form, xi_feasible, InvertConfig, OpLayout, PqrsOperator, ZElement,
};
use delayctl::gains::{reconstruct_controller, reconstruct_observer, GainConfig};
use delayctl::model::DelayModel;
use delayctl::sdp::{ClarabelSolver, SolveStatus};
use delayctl::synthesis::{m0, m1, map_l1, map_l2, ControllerVarLayout, EstimatorVarLayout, SymParam};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn taus_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        (0.2f64..2.0).prop_map(|t| vec![t]),
        (0.2f64..1.0, 0.1f64..1.0).prop_map(|(a, b)| vec![a, a + b]),
    ]
}

fn rvec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn boundary_coupled_operators_are_selfadjoint(taus in taus_strategy(), d in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sym = SymParam::new(2, &taus, d, true);
        let op = sym.op(&rvec(&mut rng, sym.dim(), 1.0));
        let rep = op_selfadjoint_check(&op, 200, &mut rng);
        prop_assert!(rep.ok, "{rep:?}");
        prop_assert!(rep.symbolic_residual <= 1e-9 * op.max_abs().max(1.0));
        prop_assert!(rep.sampled_residual <= 1e-9, "{rep:?}");
    }

    #[test]
    fn certified_operators_are_nonnegative(taus in taus_strategy(), shift in 1.0f64..4.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sym = SymParam::new(1, &taus, 1, false);
        let op = sym.op(&rvec(&mut rng, sym.dim(), 0.2)).shifted(-shift);
        let sol = xi_feasible(&op, 1, &ClarabelSolver::default()).unwrap();
        prop_assume!(sol.status == SolveStatus::Optimal);
        for _ in 0..50 {
            let z = ZElement::random(&mut rng, 1, 1, &taus, 4);
            let f = quad_form(&op, &z).unwrap();
            prop_assert!(f >= -1e-9 * z.norm().powi(2), "form {f}");
        }
    }

    #[test]
    fn scaled_identity_round_trips(a in 0.1f64..10.0, n in 1usize..3, taus in taus_strategy()) {
        let op = PqrsOperator::scaled_identity(a, n, &taus);
        let (inv, _, rep) = invert_collocation(&op, &InvertConfig::default()).unwrap();
        prop_assert!(rep.residual <= 1e-8, "{rep:?}");
        prop_assert!(roundtrip_residual(&op, &inv, 20, 99).unwrap() <= 1e-8);
    }

    #[test]
    fn gain_identities_hold_for_scaled_identity_storage(a in 0.2f64..5.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taus = [0.4, 1.1];
        let lay = ControllerVarLayout::new(2, 1, &taus, 1);
        let mut v = lay.unpack(&rvec(&mut rng, lay.len(), 1.0));
        v.p1 = PqrsOperator::scaled_identity(a, 2, &taus);
        let (_, rep) = reconstruct_controller(&v, &GainConfig::default()).unwrap();
        prop_assert!(rep.residual <= 1e-4, "{rep:?}");
        let lay = EstimatorVarLayout::new(2, 1, &taus, 1);
        let mut v = lay.unpack(&rvec(&mut rng, lay.len(), 1.0));
        v.p2 = PqrsOperator::scaled_identity(a, 2, &taus);
        let (_, rep) = reconstruct_observer(&v, &GainConfig::default()).unwrap();
        prop_assert!(rep.residual <= 1e-4, "{rep:?}");
    }

    #[test]
    fn dissipation_maps_are_affine(ex in 0usize..3, d in 1usize..3, gamma in 0.1f64..5.0, alpha in -2.0f64..2.0, seed in any::<u64>()) {
        let model = DelayModel::example(["example1", "example2", "example3"][ex]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cl = ControllerVarLayout::new(model.n(), model.m(), &model.taus, d);
        let co = OpLayout::for_degree(m0(&model), model.n(), &model.taus, d);
        let el = EstimatorVarLayout::new(model.n(), model.q(), &model.taus, d);
        let eo = OpLayout::for_degree(m1(&model), model.n(), &model.taus, d);
        let f1 = |x: &[f64]| co.flatten(&map_l1(&cl.unpack(x), &model, gamma)).unwrap();
        let f2 = |x: &[f64]| eo.flatten(&map_l2(&el.unpack(x), &model, gamma)).unwrap();
        for (len, f) in [(cl.len(), &f1 as &dyn Fn(&[f64]) -> Vec<f64>), (el.len(), &f2)] {
            let (a, b) = (rvec(&mut rng, len, 1.0), rvec(&mut rng, len, 1.0));
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
            let c0 = f(&vec![0.0; len]);
            let (fa, fb, fc) = (f(&a), f(&b), f(&combo));
            for k in 0..c0.len() {
                let expect = alpha * (fa[k] - c0[k]) + (fb[k] - c0[k]);
                prop_assert!((fc[k] - c0[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}
