//! Objective generators: derivative consistency, closed forms and the
//! weight-decay / nuclear-norm equivalence.

use std::sync::Arc;

use lorascape::matcore::{balanced_factors, nuclear_norm, svt_prox};
use lorascape::objectives::*;
use lorascape::rng;
use lorascape::{FactorTuple, MatrixTuple};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_tuple(shapes: &[(usize, usize)], scale: f64, seed: u64) -> MatrixTuple {
    let mut g = rng::seeded(seed);
    MatrixTuple::new(
        shapes
            .iter()
            .map(|&(m, n)| rng::gaussian_matrix(&mut g, m, n) * scale)
            .collect(),
    )
    .unwrap()
}

fn shipped() -> Vec<(&'static str, Arc<dyn Objective>)> {
    let target = random_tuple(&[(3, 4), (2, 2)], 1.0, 1);
    let spectrum: Vec<f64> = (0..16).map(|i| 0.5 + i as f64 * 0.25).collect();
    let quad = quadratic_objective(&spectrum, target, 2).unwrap();
    let sensing = matrix_sensing_objective(30, (4, 3), 2, 3).unwrap();
    let data = synthetic_dataset(12, 3, 2, 4).unwrap();
    let hidden = mlp_objective((3, 5, 2), data.clone(), TunedLayer::Hidden, 5).unwrap();
    let output = mlp_objective((3, 5, 2), data, TunedLayer::Output, 6).unwrap();
    let planted = planted_spurious_quadratic().unwrap().objective;
    vec![
        ("quadratic", Arc::new(quad)),
        ("sensing", Arc::new(sensing)),
        ("mlp_hidden", Arc::new(hidden)),
        ("mlp_output", Arc::new(output)),
        ("planted", Arc::new(planted)),
    ]
}

#[test]
fn shipped_objectives_pass_derivative_checks() {
    for (name, f) in shipped() {
        for k in 0..5u64 {
            let x = random_tuple(f.shapes(), 0.7, 100 + k);
            let c = derivative_check(f.as_ref(), &x, 1e-5, 6, k).unwrap();
            assert!(c.grad_err < 1e-5, "{name}: grad_err {}", c.grad_err);
            assert!(c.hess_err < 1e-4, "{name}: hess_err {}", c.hess_err);
        }
    }
}

#[test]
fn quadratic_has_its_target_as_minimizer() {
    let target = random_tuple(&[(2, 3)], 1.0, 9);
    let f = quadratic_objective(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], target.clone(), 9).unwrap();
    assert!(f.value(&target).abs() < 1e-15);
    assert!(f.gradient(&target).frobenius_norm() < 1e-14);
    assert_eq!(f.spectrum_bounds(), (1.0, 6.0));
}

#[test]
fn mlp_output_layer_loss_is_quadratic() {
    // Exact second-order Taylor expansion in the output-layer update.
    let data = synthetic_dataset(10, 3, 4, 1).unwrap();
    let f = mlp_objective((3, 6, 4), data, TunedLayer::Output, 2).unwrap();
    let x = random_tuple(f.shapes(), 0.5, 3);
    let d = random_tuple(f.shapes(), 0.5, 4);
    let mut moved = x.clone();
    moved.axpy(1.0, &d);
    let predicted = f.value(&x) + f.gradient(&x).dot(&d) + 0.5 * f.hessian_quadratic(&x, &d);
    assert!((f.value(&moved) - predicted).abs() < 1e-12);
}

#[test]
fn scaled_objective_scales_everything() {
    let (_, f) = shipped().remove(1);
    let s = ScaledObjective::new(f.clone(), 2.5).unwrap();
    let x = random_tuple(f.shapes(), 1.0, 8);
    let d = random_tuple(f.shapes(), 1.0, 9);
    assert!((s.value(&x) - 2.5 * f.value(&x)).abs() < 1e-12);
    assert!((s.hessian_quadratic(&x, &d) - 2.5 * f.hessian_quadratic(&x, &d)).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// At balanced factors the factored value equals the nuclear value.
    #[test]
    fn weight_decay_equals_nuclear_at_balance(seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let target = random_tuple(&[(3, 3)], 1.0, seed);
        let f = quadratic_objective(&[1.0; 9], target, seed).unwrap();
        let obj = RegularizedObjective::factored(Arc::new(f), lambda).unwrap();
        let x = random_tuple(&[(3, 3)], 1.0, seed ^ 1);
        let fac = FactorTuple::new(vec![balanced_factors(x.layer(0), 3).unwrap()]).unwrap();
        let full = obj.full_value(&x);
        prop_assert!((obj.factored_value(&fac) - full).abs() <= 1e-10 * (1.0 + full.abs()));
        // Any other factorization of X costs at least as much.
        let mut g = rng::seeded(seed);
        let q = rng::orthonormal_columns(&mut g, 3, 3);
        let t = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5, 1.0]));
        let p = fac.pairs()[0].clone();
        let a = &p.a * &q * &t;
        let b = &p.b * &q * t.try_inverse().unwrap();
        let other = FactorTuple::new(vec![lorascape::FactorPair::new(a, b).unwrap()]).unwrap();
        prop_assert!(obj.factored_value(&other) >= full - 1e-10 * (1.0 + full.abs()));
    }

    /// Isotropic quadratic: the nuclear-regularized minimizer is SVT of the target.
    #[test]
    fn isotropic_minimizer_is_svt(seed in any::<u64>(), lambda in 0.0f64..1.5) {
        let target = random_tuple(&[(3, 2)], 1.0, seed);
        let f = QuadraticObjective::with_basis(&[1.0; 6], target.clone(), Basis::Identity).unwrap();
        let obj = RegularizedObjective::nuclear(Arc::new(f), lambda).unwrap();
        let xs = MatrixTuple::single(svt_prox(target.layer(0), lambda).unwrap()).unwrap();
        let best = obj.full_value(&xs);
        let mut g = rng::seeded(seed ^ 7);
        for _ in 0..50 {
            let mut y = xs.clone();
            y.axpy(0.1, &MatrixTuple::single(rng::gaussian_matrix(&mut g, 3, 2)).unwrap());
            prop_assert!(obj.full_value(&y) >= best - 1e-12);
        }
        prop_assert!((best - (0.5 * (xs.layer(0) - target.layer(0)).norm_squared() + lambda * nuclear_norm(xs.layer(0)))).abs() < 1e-12);
    }
}
