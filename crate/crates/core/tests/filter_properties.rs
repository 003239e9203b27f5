use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use safe_cbf_lab::feasibility::{classify, ConstraintData};
use safe_cbf_lab::filter::{gp_cbf_socp, FilterConfig};
use safe_cbf_lab::harness::verify::random_constraint;

/// A random instance the classifier calls feasible, with its witness.
fn feasible_instance(seed: u64, m: usize) -> Option<(ConstraintData, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cd = random_constraint(&mut rng, m);
    let rep = classify(&cd).ok()?;
    let w = rep.witness?;
    rep.feasible.then_some((cd, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn solution_is_feasible_and_no_farther_than_the_witness(
        seed in 0u64..10_000,
        m in 1usize..=2,
        r in proptest::collection::vec(-5.0..5.0f64, 2),
    ) {
        let Some((cd, w)) = feasible_instance(seed, m) else { return Ok(()) };
        let u_ref = DVector::from_iterator(m, r.into_iter().take(m));
        let (u, _, _) = gp_cbf_socp(&u_ref, &cd, None, &FilterConfig::default(), Some(&w)).unwrap();
        prop_assert!(cd.margin(&u) >= -1e-8, "margin {}", cd.margin(&u));
        prop_assert!((&u - &u_ref).norm() <= (&w - &u_ref).norm() + 1e-6);
    }

    #[test]
    fn feasible_reference_passes_through(seed in 0u64..10_000, m in 1usize..=2, s in 0.0..3.0f64) {
        let Some((cd, w)) = feasible_instance(seed, m) else { return Ok(()) };
        // points past the witness along the backup direction stay feasible
        let rep = classify(&cd).unwrap();
        let u_ref = &w + &rep.e_dagger * s;
        prop_assume!(cd.margin(&u_ref) >= 0.0);
        let (u, d, _) = gp_cbf_socp(&u_ref, &cd, None, &FilterConfig::default(), Some(&w)).unwrap();
        prop_assert_eq!(u, u_ref);
        prop_assert!(d.is_none());
    }

    #[test]
    fn filter_is_nonexpansive(
        seed in 0u64..10_000,
        m in 1usize..=2,
        r in proptest::collection::vec(-5.0..5.0f64, 2),
        dr in proptest::collection::vec(-0.5..0.5f64, 2),
    ) {
        let Some((cd, w)) = feasible_instance(seed, m) else { return Ok(()) };
        let a = DVector::from_iterator(m, r.iter().copied().take(m));
        let b = &a + DVector::from_iterator(m, dr.iter().copied().take(m));
        let cfg = FilterConfig::default();
        let (ua, _, _) = gp_cbf_socp(&a, &cd, None, &cfg, Some(&w)).unwrap();
        let (ub, _, _) = gp_cbf_socp(&b, &cd, None, &cfg, Some(&w)).unwrap();
        // projection onto a convex set is 1-Lipschitz
        prop_assert!((&ua - &ub).norm() <= (&a - &b).norm() + 1e-5);
    }
}
