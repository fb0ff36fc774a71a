mod common;

use common::*;
use nalgebra::DVector;
use nodal_core::calculus::EnergyProblem;
use nodal_core::cone::{project_cone, random_field, region_of, RegionLabel, Sign};
use nodal_core::flow::{integrate_flow, FlowConfig};
use nodal_core::linking::count_sign_changes;
use nodal_core::refine::{newton_refine, RefineOptions};
use nodal_core::{DiscreteSpace, Field, GridSpec, PiecewisePotential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn eigenvalues_match_closed_form_on_three_nodes() {
    let space = interval_space(3);
    let pairs = space.eigenpairs(3).unwrap();
    for (k, p) in pairs.iter().enumerate() {
        let exact = closed_form_eigenvalue(3, k + 1);
        assert!(
            (p.value - exact).abs() <= 1e-12 * exact,
            "k={}: {} vs {exact}",
            k + 1,
            p.value
        );
    }
}

#[test]
fn eigenvalues_match_dense_solver() {
    for n in [15, 31] {
        let space = interval_space(n);
        let dense = dense_eigenvalues(&space);
        let pairs = space.eigenpairs(5).unwrap();
        for (p, d) in pairs.iter().zip(&dense) {
            assert!((p.value - d).abs() <= 1e-9 * d, "n={n}: {} vs {d}", p.value);
        }
        let rect = DiscreteSpace::new(GridSpec::rectangle((0.0, 1.0), (0.0, 2.0), 5, 7)).unwrap();
        let dense = dense_eigenvalues(&rect);
        for (p, d) in rect.eigenpairs(6).unwrap().iter().zip(&dense) {
            assert!(
                (p.value - d).abs() <= 1e-9 * d,
                "rectangle: {} vs {d}",
                p.value
            );
        }
    }
}

#[test]
fn first_eigenvalue_converges_at_second_order() {
    let pi2 = std::f64::consts::PI.powi(2);
    let errs: Vec<f64> = [15, 31, 63]
        .iter()
        .map(|&n| (interval_space(n).eigenpairs(1).unwrap()[0].value - pi2).abs())
        .collect();
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!((rate - 2.0).abs() < 0.1, "observed order {rate}");
    }
}

#[test]
fn slope_matches_grid_oracle_on_four_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let space = interval_space(4);
    for _ in 0..10 {
        let u: DVector<f64> = DVector::from_vec(vec![-1.3, 0.4, 1.1, -0.2]);
        let (lo, hi): (Vec<f64>, Vec<f64>) = (0..4)
            .map(|_| {
                let c = rng.gen_range(-20.0..20.0);
                let r = rng.gen_range(0.0..6.0);
                (c - r, c + r)
            })
            .unzip();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&i, &j| u[i].total_cmp(&u[j]));
        let breaks: Vec<f64> = order.iter().map(|&i| u[i]).collect();
        let left: Vec<f64> = order.iter().map(|&i| lo[i]).collect();
        let right: Vec<f64> = order.iter().map(|&i| hi[i]).collect();
        let prob = EnergyProblem::new(
            interval_space(4),
            kinked_potential(&breaks, &left, &right),
            1.0,
        )
        .unwrap();
        let m = prob
            .slope(&Field::from_vec(u.iter().copied().collect()))
            .unwrap()
            .value;
        let oracle = slope_grid_oracle(&space, 1.0, &u, &lo, &hi);
        assert!((m - oracle).abs() <= 1e-6, "{m} vs {oracle}");
    }
}

#[test]
fn projection_matches_active_set_enumeration() {
    let space = interval_space(4);
    let oracle = ExhaustiveProjector::new(space.stiffness().to_dense());
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let u = random_field(&space, &mut rng, 3.0).unwrap();
        for sign in Sign::both() {
            let got = project_cone(&space, &u, sign).unwrap();
            let (want, dist) = oracle.project(&u, sign);
            assert!((got.projection.as_vector() - &want).amax() <= 1e-10);
            assert!((got.distance - dist).abs() <= 1e-10 * (1.0 + dist));
        }
    }
}

#[test]
fn flow_from_five_phi1_stays_positive_and_descends() {
    let prob = benchmark(127, 1.0);
    let space = prob.space();
    let u0 = space.eigenpairs(1).unwrap().remove(0).vector.scale(5.0);
    let cfg = FlowConfig {
        mu0: Some(0.5),
        max_steps: 400,
        ..Default::default()
    };
    let traj = integrate_flow(&prob, &u0, &cfg).unwrap();
    // 5φ₁ lies beyond the positive solution on its ray, so descent leaves every bounded set
    assert!(traj
        .records
        .iter()
        .all(|r| r.label == RegionLabel::PositiveRegion));
    assert!(traj.records.windows(2).all(|w| w[1].energy <= w[0].energy));
    assert!(traj.records.last().unwrap().energy < 0.0);
}

#[test]
fn newton_from_five_phi1_matches_damped_newton_oracle() {
    let prob = benchmark(127, 1.0);
    let space = prob.space();
    let u0 = space.eigenpairs(1).unwrap().remove(0).vector.scale(5.0);
    let refined = newton_refine(&prob, &u0, RefineOptions::default()).unwrap();
    assert!(refined.residual <= 1e-6);
    let oracle = damped_newton_cubic(space, 1.0, u0.as_vector()).expect("Newton oracle converges");
    let err = (refined.u.as_vector() - &oracle).amax() / oracle.amax();
    assert!(err <= 1e-6, "relative difference {err}");
    assert_eq!(
        region_of(space, &refined.u, 0.5).unwrap(),
        RegionLabel::PositiveRegion
    );
    assert!(refined.u.min() > 0.0);
}

#[test]
fn refined_nodal_solution_matches_shooting() {
    let prob = benchmark(127, 1.0);
    let space = prob.space();
    let phi2 = space.eigenpairs(2).unwrap().remove(1).vector;
    let oracle = shooting_nodal(1.0);
    let u0 = phi2.scale(oracle.amplitude / phi2.amax());
    let refined = newton_refine(&prob, &u0, RefineOptions::default()).unwrap();
    assert!(refined.residual <= 1e-8);
    assert_eq!(count_sign_changes(refined.u.as_vector()), 1);
    let energy = prob.energy(&refined.u).unwrap();
    assert!(
        (energy - oracle.energy).abs() <= 0.01 * oracle.energy,
        "{energy} vs {}",
        oracle.energy
    );
    let amp = refined.u.amax();
    assert!(
        (amp - oracle.amplitude).abs() <= 0.01 * oracle.amplitude,
        "{amp} vs {}",
        oracle.amplitude
    );
}

#[test]
fn newton_oracle_agrees_with_smooth_power_potential() {
    let space = interval_space(31);
    let prob = EnergyProblem::new(
        interval_space(31),
        PiecewisePotential::builtin("power:4").unwrap(),
        2.0,
    )
    .unwrap();
    let phi = space.eigenpairs(1).unwrap().remove(0).vector;
    let u0 = phi.scale(3.0 / phi.amax());
    let oracle = damped_newton_cubic(&space, 2.0, u0.as_vector()).unwrap();
    let refined = newton_refine(&prob, &u0, RefineOptions::default()).unwrap();
    assert!((refined.u.as_vector() - &oracle).amax() <= 1e-8 * oracle.amax());
}
