use nalgebra::DVector;
use proptest::prelude::*;

use safe_cbf_lab::gp::{augment, Dataset, KernelConfig, SeKernel};

fn kernel(n: usize, m: usize, var: &[f64], ls: f64, noise: f64) -> KernelConfig {
    let comps = (0..=m)
        .map(|i| SeKernel::new(var[i % var.len()], vec![ls; n]))
        .collect();
    KernelConfig::new(comps, noise)
}

prop_compose! {
    fn sequence(n: usize, m: usize)(
        pts in proptest::collection::vec(
            (proptest::collection::vec(-2.0..2.0f64, n),
             proptest::collection::vec(-3.0..3.0f64, m),
             -1.0..1.0f64),
            1..25),
        q in proptest::collection::vec(-2.0..2.0f64, n),
        var in proptest::collection::vec(0.1..2.0f64, m + 1),
        ls in 0.3..2.0f64,
        noise in 0.05..0.5f64,
    ) -> (Vec<(DVector<f64>, DVector<f64>, f64)>, DVector<f64>, KernelConfig) {
        let data = pts
            .into_iter()
            .map(|(x, u, z)| (DVector::from_vec(x), DVector::from_vec(u), z))
            .collect();
        (data, DVector::from_vec(q), kernel(n, m, &var, ls, noise))
    }
}

fn incremental(k: &KernelConfig, data: &[(DVector<f64>, DVector<f64>, f64)]) -> Dataset {
    let mut ds = Dataset::new(k.clone(), data[0].0.len()).unwrap();
    for (x, u, z) in data {
        ds.add_measurement(x, u, *z).unwrap();
    }
    ds
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incremental_matches_batch((data, q, k) in sequence(2, 2)) {
        let inc = incremental(&k, &data);
        let batch = Dataset::from_measurements(
            k.clone(),
            data.iter().map(|d| d.0.clone()).collect(),
            data.iter().map(|d| d.1.clone()).collect(),
            data.iter().map(|d| d.2).collect(),
        ).unwrap();
        let (m1, c1) = inc.posterior_moments(&q).unwrap();
        let (m2, c2) = batch.posterior_moments(&q).unwrap();
        let gap = (&m1 - &m2).amax().max((&c1 - &c2).amax());
        prop_assert!(gap <= 1e-8 * m2.amax().max(c2.amax()).max(1.0), "gap {gap:e}");
    }

    #[test]
    fn mean_affine_and_variance_quadratic_in_u(
        (data, q, k) in sequence(3, 2),
        u0 in proptest::collection::vec(-3.0..3.0f64, 2),
        d in proptest::collection::vec(-1.0..1.0f64, 2),
    ) {
        let ds = incremental(&k, &data);
        let (u0, d) = (DVector::from_vec(u0), DVector::from_vec(d));
        let v: Vec<(f64, f64)> = (0..4).map(|s| ds.predict(&q, &(&u0 + &d * s as f64)).unwrap()).collect();
        let scale = v.iter().fold(1.0f64, |a, (mu, var)| a.max(mu.abs()).max(*var));
        prop_assert!((v[2].0 - 2.0 * v[1].0 + v[0].0).abs() <= 1e-10 * scale);
        prop_assert!((v[3].1 - 3.0 * v[2].1 + 3.0 * v[1].1 - v[0].1).abs() <= 1e-10 * scale);
    }

    #[test]
    fn variance_bounded_by_prior((data, q, k) in sequence(2, 1), u in -3.0..3.0f64) {
        let ds = incremental(&k, &data);
        let empty = Dataset::new(k.clone(), 2).unwrap();
        let u = DVector::from_vec(vec![u]);
        let (_, post) = ds.predict(&q, &u).unwrap();
        let (_, prior) = empty.predict(&q, &u).unwrap();
        prop_assert!(post >= 0.0);
        prop_assert!(post <= prior * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn measuring_a_point_shrinks_its_variance((data, q, k) in sequence(2, 1), u in -3.0..3.0f64) {
        let mut ds = incremental(&k, &data);
        let u = DVector::from_vec(vec![u]);
        let (_, before) = ds.predict(&q, &u).unwrap();
        ds.add_measurement(&q, &u, 0.0).unwrap();
        let (_, after) = ds.predict(&q, &u).unwrap();
        prop_assert!(after <= before + 1e-12);
    }
}

#[test]
fn empty_dataset_returns_prior() {
    let k = kernel(2, 1, &[0.7, 0.2], 1.0, 0.1);
    let ds = Dataset::new(k, 2).unwrap();
    let x = DVector::from_vec(vec![0.3, -1.0]);
    let (mean, cov) = ds.posterior_moments(&x).unwrap();
    assert_eq!(mean, DVector::zeros(2));
    assert_eq!(cov[(0, 0)], 0.7);
    assert_eq!(cov[(1, 1)], 0.2);
    assert_eq!(cov[(0, 1)], 0.0);
    // sigma_B^2(u) = y^T Sigma y with y = [1, u]
    let u = DVector::from_vec(vec![2.0]);
    let (mu, var) = ds.predict(&x, &u).unwrap();
    assert_eq!(mu, 0.0);
    let y = augment(&u);
    assert!((var - (0.7 * y[0] * y[0] + 0.2 * y[1] * y[1])).abs() < 1e-15);
}

#[test]
fn dataset_json_round_trip() {
    let k = kernel(2, 1, &[0.5], 0.8, 0.1);
    let mut ds = Dataset::new(k, 2).unwrap();
    for i in 0..5 {
        let s = i as f64;
        ds.add_measurement(
            &DVector::from_vec(vec![s, -s]),
            &DVector::from_vec(vec![0.1 * s]),
            0.2 * s,
        )
        .unwrap();
    }
    let back = Dataset::from_json(&ds.to_json()).unwrap();
    let q = DVector::from_vec(vec![0.5, 0.5]);
    assert_eq!(ds.posterior_moments(&q).unwrap(), back.posterior_moments(&q).unwrap());
}
