#![allow(dead_code)]

use gsrecon::fem::{dirichlet_vector, prepare, MU0};
use gsrecon::mesh::{build_rect_mesh, Mesh, Point};

pub const R_MIN: f64 = 1.0;
pub const R_MAX: f64 = 2.0;
pub const Z_HALF: f64 = 0.5;

pub fn rectangle(cells: usize) -> Mesh {
    build_rect_mesh(R_MIN, R_MAX, -Z_HALF, Z_HALF, cells, cells).expect("rectangle mesh")
}

/// Max-norm nodal error of the discrete solution with Dirichlet data and zero
/// source, for an exact field annihilated by the operator.
pub fn homogeneous_error(mesh: &Mesh, exact: impl Fn(Point) -> f64) -> f64 {
    let (_, fact) = prepare(mesh, MU0).expect("factorise");
    let g_d: Vec<f64> = mesh.boundary().iter().map(|&b| exact(mesh.nodes()[b])).collect();
    let psi = fact.solve(&dirichlet_vector(mesh, &g_d).unwrap()).unwrap();
    mesh.nodes()
        .iter()
        .zip(&psi)
        .map(|(&p, v)| (v - exact(p)).abs())
        .fold(0.0, f64::max)
}

use gsrecon::fem::Factorization;
use gsrecon::forward::{Equilibrium, FixedPointOptions};
use gsrecon::twin::{DeskGeometry, TwinCase};

pub struct Desk {
    pub case: TwinCase,
    pub fact: Factorization,
    pub reference: Equilibrium,
}

pub fn desk() -> Desk {
    let case = TwinCase::desk(&DeskGeometry::default()).expect("desk case");
    let fact = case.factorize().expect("factorise");
    let reference = case
        .reference_equilibrium(&fact, &FixedPointOptions::default())
        .expect("reference equilibrium");
    Desk { case, fact, reference }
}

/// Residuals from the third iteration on never increase.
pub fn monotone_tail(residuals: &[f64]) -> bool {
    residuals.get(2..).is_some_and(|t| t.windows(2).all(|w| w[1] <= w[0]))
}

use gsrecon::basis::SplineBasis;
use gsrecon::diagnostics::{mean_relative_error, ProfileTable, TableOptions};
use gsrecon::inverse::{InverseProblem, ReconstructionResult};

pub fn problem(d: &Desk) -> InverseProblem<'_> {
    InverseProblem::new(&d.case.mesh, &d.fact, SplineBasis::default(), d.case.params).expect("inverse problem")
}

/// Mean relative errors of an identified equilibrium against the reference.
#[derive(Debug, Clone, Copy)]
pub struct IdentificationErrors {
    pub lambda_a: f64,
    pub lambda_b_weighted: f64,
    pub j_mean: f64,
    pub q: f64,
}

pub fn identification_errors(d: &Desk, res: &ReconstructionResult) -> IdentificationErrors {
    let opts = TableOptions::default();
    let truth = ProfileTable::compute(&d.case.mesh, &d.reference, &opts).expect("reference table");
    let found = ProfileTable::compute(&d.case.mesh, &res.equilibrium, &opts).expect("identified table");
    let some = |v: &[f64]| v.iter().copied().map(Some).collect::<Vec<_>>();
    IdentificationErrors {
        lambda_a: mean_relative_error(&some(&found.lambda_a), &some(&truth.lambda_a)).unwrap(),
        lambda_b_weighted: mean_relative_error(&found.lambda_b_weighted, &truth.lambda_b_weighted).unwrap(),
        j_mean: mean_relative_error(&found.j_mean, &truth.j_mean).unwrap(),
        q: mean_relative_error(&found.q, &truth.q).unwrap(),
    }
}

/// A second time slice: slightly more current and a stronger vacuum field.
pub fn next_slice(d: &Desk) -> gsrecon::observation::MeasurementSet {
    let g = DeskGeometry::default();
    let case = TwinCase::desk(&DeskGeometry {
        ip: 1.02 * g.ip,
        vacuum: 1.01 * g.vacuum,
        ..g
    })
    .expect("second slice");
    let eq = case
        .reference_equilibrium(&d.fact, &FixedPointOptions::default())
        .expect("second slice equilibrium");
    case.measurements(&eq).expect("second slice measurements")
}
