//! Certificates and classification on instances with known answers.

use std::sync::Arc;

use lorascape::constants::TheoryConstants;
use lorascape::landscape::*;
use lorascape::matcore::{balanced_factors, svt_prox};
use lorascape::objectives::*;
use lorascape::optim::*;
use lorascape::rng;
use lorascape::{FactorTuple, MatrixTuple};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn planted() -> (PlantedInstance, RegularizedObjective, TheoryConstants) {
    let p = planted_spurious_quadratic().unwrap();
    let obj = RegularizedObjective::factored(Arc::new(p.objective.clone()), p.lambda).unwrap();
    let th = TheoryConstants::analytic_quadratic(&p.objective);
    (p, obj, th)
}

fn factors_of(x: &MatrixTuple, r: usize) -> FactorTuple {
    FactorTuple::new(
        x.layers()
            .iter()
            .map(|l| balanced_factors(l, r).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Dense factored Hessian assembled column by column from the HVP.
fn dense_hessian(obj: &RegularizedObjective, point: &FactorTuple) -> DMatrix<f64> {
    let dim = point.num_entries();
    let mut h = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = vec![0.0; dim];
        e[j] = 1.0;
        let col = obj.factored_hvp(point, &point.like_from_slice(&e)).to_vector();
        h.set_column(j, &col);
    }
    h
}

#[test]
fn lanczos_matches_dense_hessian() {
    let f = Arc::new(matrix_sensing_objective(25, (3, 4), 2, 7).unwrap());
    let obj = RegularizedObjective::factored(f, 0.1).unwrap();
    let mut g = rng::seeded(3);
    for trial in 0..5u64 {
        let a = rng::gaussian_matrix(&mut g, 3, 2);
        let b = rng::gaussian_matrix(&mut g, 4, 2);
        let point = FactorTuple::new(vec![lorascape::FactorPair::new(a, b).unwrap()]).unwrap();
        let h = dense_hessian(&obj, &point);
        assert!((&h - h.transpose()).norm() < 1e-10 * (1.0 + h.norm()));
        let oracle = SymmetricEigen::new(h).eigenvalues.min();
        let res = lanczos_min_eig(
            point.num_entries(),
            |v| obj.factored_hvp(&point, &point.like_from_slice(v.as_slice())).to_vector(),
            200,
            trial,
        );
        assert!(res.converged);
        assert!((res.value - oracle).abs() < 1e-7 * (1.0 + oracle.abs()), "{} vs {oracle}", res.value);
    }
}

#[test]
fn planted_global_point_is_certified_global() {
    let (p, obj, th) = planted();
    let point = factors_of(&p.global, p.rank);
    let cert = check_sosp(&obj, &point, &SospTolerances::default_for(&obj)).unwrap();
    assert!(cert.is_sosp, "{cert:?}");
    assert!(spectral_bound_check(&cert, &th.beta, p.lambda).unwrap().passes);
    let rf = Reference::exact(&obj, p.global.clone());
    let rep = classify(&cert, &th, p.rank_star, Some(&rf)).unwrap();
    assert_eq!(rep.verdict, Verdict::Global);
    assert!(rep.theory_consistent);
}

#[test]
fn planted_spurious_point_is_certified_spurious() {
    let (p, obj, th) = planted();
    assert!(2.0 * th.alpha[0] <= th.beta[0]);
    let point = factors_of(&p.spurious, p.rank);
    let cert = check_sosp(&obj, &point, &SospTolerances::default_for(&obj)).unwrap();
    assert!(cert.is_sosp, "{cert:?}");
    // Rotating the balanced factors is a flat direction.
    assert!(cert.min_hess_eig.abs() < 1e-8);
    let rf = Reference::exact(&obj, p.global.clone());
    let rep = classify(&cert, &th, p.rank_star, Some(&rf)).unwrap();
    assert_eq!(rep.verdict, Verdict::Spurious);
    assert!(rep.theory_consistent);
    let layer = &rep.per_layer[0];
    assert!(layer.flagged);
    assert_eq!(layer.rank, p.rank);
    let dist = (p.spurious.layer(0) - p.global.layer(0)).norm();
    assert!(dist >= layer.distance_bound.unwrap());
    assert!(p.spurious.layer(0).norm() >= layer.magnitude_bound.unwrap());
    // Without a reference the bounds alone already say spurious.
    assert_eq!(classify(&cert, &th, p.rank_star, None).unwrap().verdict, Verdict::Spurious);
}

#[test]
fn saddle_at_origin_is_not_sosp() {
    let (p, obj, _) = planted();
    let cert = check_sosp(&obj, &FactorTuple::zeros(&[(3, 3)], p.rank), &SospTolerances::default_for(&obj)).unwrap();
    assert!(cert.grad_norm < 1e-12);
    assert!(cert.min_hess_eig < -0.5);
    assert!(!cert.is_sosp);
}

#[test]
fn approx_classification_with_exact_reference() {
    let (p, obj, th) = planted();
    let rf = Reference::approximate(&obj, p.global.clone(), 1e-5);
    for (x, expect) in [(&p.global, Verdict::Global), (&p.spurious, Verdict::Spurious)] {
        let cert = check_sosp(&obj, &factors_of(x, p.rank), &SospTolerances::default_for(&obj)).unwrap();
        let rep = classify_approx(&cert, &th, p.rank_star, 0.1, 1e-5, Some(&rf)).unwrap();
        assert_eq!(rep.verdict, expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Isotropic quadratics sit in the special regime: every converged
    /// factored-descent endpoint is global and matches SVT.
    #[test]
    fn special_regime_endpoints_are_global(seed in any::<u64>(), lambda in prop_oneof![Just(0.0), Just(0.1)]) {
        let mut g = rng::seeded(seed);
        let m = rng::gaussian_matrix(&mut g, 3, 1) * rng::gaussian_matrix(&mut g, 1, 3);
        let f = QuadraticObjective::with_basis(&[1.0; 9], MatrixTuple::single(m.clone()).unwrap(), Basis::Identity).unwrap();
        let obj = RegularizedObjective::factored(Arc::new(f.clone()), lambda).unwrap();
        let cfg = RunConfig { learning_rate: 0.05, weight_decay: lambda, max_steps: 50_000, grad_tol: 1e-9, ..Default::default() };
        let out = factored_gd(&obj, &InitScheme::centered(0.5, seed), 2, &cfg).unwrap();
        prop_assume!(out.status == Status::Converged);
        let cert = check_sosp(&obj, &out.final_point, &SospTolerances::default_for(&obj)).unwrap();
        prop_assume!(cert.is_sosp);
        let th = TheoryConstants::analytic_quadratic(&f);
        let rep = classify(&cert, &th, 1, None).unwrap();
        prop_assert_eq!(rep.verdict, Verdict::Global);
        let best = obj.full_value(&MatrixTuple::single(svt_prox(&m, lambda).unwrap()).unwrap());
        prop_assert!((cert.full_value - best).abs() <= 1e-6 * best.abs().max(1e-12) + 1e-12);
    }
}

#[test]
fn certificate_json_omits_the_product() {
    let (p, obj, _) = planted();
    let cert = check_sosp(&obj, &factors_of(&p.global, 2), &SospTolerances::default_for(&obj)).unwrap();
    let v = serde_json::to_value(&cert).unwrap();
    assert!(v.get("product").is_none());
    assert_eq!(v["singulars"][0].as_array().unwrap().len(), 3);
}
