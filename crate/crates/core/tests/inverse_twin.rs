mod common;

use std::time::Instant;

use common::{desk, identification_errors, next_slice, problem};
use gsrecon::inverse::{ReconstructionOptions, RegularizationConfig};

#[test]
fn noise_free_data_is_closed_by_the_reconstruction() {
    let d = desk();
    let meas = d.case.measurements(&d.reference).unwrap();
    let res = problem(&d)
        .reconstruct(
            &meas,
            &RegularizationConfig::with_epsilon(1e-5),
            &ReconstructionOptions::default(),
        )
        .unwrap();
    println!("{}", res.summary());
    assert!(res.converged);
    assert!(
        res.equilibrium.ip_errors.iter().all(|&e| e <= 1e-10),
        "{:?}",
        res.equilibrium.ip_errors
    );
    let e = identification_errors(&d, &res);
    println!("{e:?}");
    assert!(e.lambda_a < 0.1 && e.lambda_b_weighted < 0.1);
    assert!(e.j_mean < 0.02 && e.q < 0.02);
    let mesh_boundary_ok = d
        .case
        .mesh
        .boundary()
        .iter()
        .zip(&meas.g_d)
        .all(|(&b, &g)| res.equilibrium.psi[b] == g);
    assert!(mesh_boundary_ok);
}

#[test]
fn internal_measurements_recover_the_density() {
    let d = desk();
    let meas = d.case.measurements(&d.reference).unwrap();
    let opts = ReconstructionOptions {
        use_internal: true,
        ..Default::default()
    };
    let res = problem(&d)
        .reconstruct(&meas, &RegularizationConfig::with_epsilon(1e-5), &opts)
        .unwrap();
    assert!(res.converged);
    let ne = res.profiles.ne.as_ref().expect("density identified");
    let (mut err, mut norm) = (0.0, 0.0);
    for i in 0..=20 {
        let x = i as f64 / 20.0;
        let truth = d.reference.profiles.ne(x).unwrap();
        err += (res.profiles.basis.combine(ne, x) - truth).abs();
        norm += truth.abs();
    }
    println!("ne error {}", err / norm);
    assert!(err / norm < 0.1);
    assert!(res.costs.j2 >= 0.0 && res.costs.j1 >= 0.0);
}

#[test]
fn warm_started_slice_needs_two_iterations() {
    let d = desk();
    let prob = problem(&d);
    let meas = d.case.measurements(&d.reference).unwrap();
    let reg = RegularizationConfig::with_epsilon(1e-2);
    let first = prob
        .reconstruct(&meas, &reg, &ReconstructionOptions::default())
        .unwrap();
    let second = next_slice(&d);
    let opts = ReconstructionOptions {
        max_iter: 2,
        warm_start: Some(first.warm_start()),
        ..Default::default()
    };
    let clock = Instant::now();
    let res = prob.reconstruct(&second, &reg, &opts).unwrap();
    let elapsed = clock.elapsed();
    println!("residuals {:?} in {elapsed:?}", res.residuals);
    assert_eq!(res.iterations(), 2);
    assert!(*res.residuals.last().unwrap() <= 5e-3);
}
