mod common;

use common::{homogeneous_error, rectangle};
use gsrecon::fem::{assemble_stiffness, MU0};
use gsrecon::mesh::Point;
use proptest::prelude::*;

#[test]
fn constant_and_vertical_fields_are_reproduced() {
    let mesh = rectangle(20);
    assert!(homogeneous_error(&mesh, |_| 3.25) <= 1e-10);
    assert!(homogeneous_error(&mesh, |p| p.z) <= 1e-10);
}

#[test]
fn quadratic_radial_field_converges_at_second_order() {
    let coarse = homogeneous_error(&rectangle(20), |p| p.r * p.r);
    let fine = homogeneous_error(&rectangle(40), |p| p.r * p.r);
    let ratio = coarse / fine;
    println!("r^2 errors {coarse:e} {fine:e} ratio {ratio}");
    assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn affine_in_z_data_is_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, cells in 4usize..16) {
        let mesh = rectangle(cells);
        prop_assert!(homogeneous_error(&mesh, |p: Point| a + b * p.z) <= 1e-10 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn stiffness_is_symmetric_with_constant_null_space(cells in 2usize..10, scale in 0.5f64..3.0) {
        let mesh = gsrecon::mesh::build_rect_mesh(scale, 2.0 * scale, -0.5, 0.5, cells, cells + 1).unwrap();
        let k = assemble_stiffness(&mesh, MU0);
        let kx = k.mul_vec(&vec![1.0; k.n()]);
        let diag = (0..k.n()).map(|i| k.get(i, i)).fold(0.0, f64::max);
        prop_assert!(kx.iter().all(|v| v.abs() <= 1e-12 * diag));
        for i in 0..k.n() {
            for j in 0..k.n() {
                prop_assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
    }
}
