//! Identification of the current profiles from measurements: the density
//! least-squares problem, the `A`/`B` normal equation and the reconstruction
//! fixed point that alternates them with direct solves.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::basis::{ProfileExpansion, Profiles, SplineBasis};
use crate::error::{Error, Result};
use crate::fem::{dirichlet_vector, dvector, Factorization};
use crate::forward::{
    assemble_source_matrix, current_error, lambda_from_quadrature, relative_residual, Equilibrium, FluxState,
    MachineParams,
};
use crate::mesh::{Mesh, NodalField};
use crate::observation::{
    build_interferometry_matrix, build_neumann_observer, build_polarimetry_observer, Chord, MeasurementSet,
    WeightConfig,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationConfig {
    /// Shared weight of the `A` and `B` curvature penalties.
    pub epsilon: f64,
    /// Nondimensional density penalty (the value multiplying `Lambda` once
    /// the density is scaled by `alpha_scale`).
    pub epsilon_ne: f64,
    /// Density scale (m^-3).
    pub alpha_scale: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            epsilon: 5e-2,
            epsilon_ne: 1e-2,
            alpha_scale: 1e19,
        }
    }
}

impl RegularizationConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !(self.epsilon_ne > 0.0) || !(self.alpha_scale > 0.0) {
            return Err(Error::Argument(format!(
                "regularization parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Solves the symmetric positive semi-definite system, failing when it is singular.
fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let scale = a.amax();
    let lu = a.lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min_pivot > 1e-14 * scale) {
        return Err(Error::Regularization(format!(
            "{what}: pivot {min_pivot:e} against scale {scale:e}"
        )));
    }
    lu.solve(&b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Regularization(what.to_string()))
}

/// Density coefficients `v = alpha v_hat` from
/// `(alpha^2 (WB)^T (WB) + eps Lambda) v_hat = alpha (WB)^T W gamma`.
pub fn identify_ne(
    b_int: &DMatrix<f64>,
    gamma: &[f64],
    weights: &[f64],
    epsilon_ne: f64,
    alpha: f64,
    lambda_reg: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    if b_int.nrows() != gamma.len() || weights.len() != gamma.len() {
        return Err(Error::Argument(format!(
            "{} chords in B but {} measurements and {} weights",
            b_int.nrows(),
            gamma.len(),
            weights.len()
        )));
    }
    let w = dvector(weights);
    let mut wb = b_int.clone();
    for (i, mut row) in wb.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let wg = dvector(gamma).component_mul(&w);
    let normal = wb.transpose() * &wb * (alpha * alpha) + lambda_reg * epsilon_ne;
    let rhs = wb.transpose() * wg * alpha;
    let v_hat = solve_spd(normal, rhs, "density normal equation")?;
    Ok(v_hat.iter().map(|v| v * alpha).collect())
}

/// Weighted problem data for the `A`/`B` normal equation.
#[derive(Debug, Clone)]
pub struct AbSystem {
    /// `W E` with `E = C K^-1 Y`.
    pub e_tilde: DMatrix<f64>,
    /// `W f` with `f = d - C K^-1 g`.
    pub f_tilde: DVector<f64>,
}

impl AbSystem {
    pub fn new(e: &DMatrix<f64>, f: &[f64], weights: &[f64]) -> Result<Self> {
        if e.nrows() != f.len() || weights.len() != f.len() {
            return Err(Error::Argument("observation, data and weight sizes differ".into()));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::State("non-finite entries in the sensitivity matrix".into()));
        }
        let mut e_tilde = e.clone();
        for (i, mut row) in e_tilde.row_iter_mut().enumerate() {
            row *= weights[i];
        }
        let f_tilde = dvector(f).component_mul(&dvector(weights));
        Ok(Self { e_tilde, f_tilde })
    }

    /// `u*` solving `(E~^T E~ + eps Lambda) u = E~^T f~`.
    pub fn solve(&self, epsilon: f64, lambda_reg: &DMatrix<f64>) -> Result<Vec<f64>> {
        let normal = self.e_tilde.transpose() * &self.e_tilde + lambda_reg * epsilon;
        let rhs = self.e_tilde.transpose() * &self.f_tilde;
        Ok(solve_spd(normal, rhs, "profile normal equation")?
            .iter()
            .copied()
            .collect())
    }

    /// `1/2 ||E~ u - f~||^2`.
    pub fn misfit(&self, u: &[f64]) -> f64 {
        0.5 * (&self.e_tilde * dvector(u) - &self.f_tilde).norm_squared()
    }

    /// Gradient of the regularized objective at `u`.
    pub fn gradient(&self, u: &[f64], epsilon: f64, lambda_reg: &DMatrix<f64>) -> Vec<f64> {
        let u = dvector(u);
        let g = self.e_tilde.transpose() * (&self.e_tilde * &u - &self.f_tilde) + lambda_reg * &u * epsilon;
        g.iter().copied().collect()
    }
}

/// Solves the `A`/`B` normal equation with weights `weights` (the diagonal of `D^{1/2}`).
pub fn identify_ab(
    e: &DMatrix<f64>,
    f: &[f64],
    weights: &[f64],
    epsilon: f64,
    lambda_reg: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    AbSystem::new(e, f, weights)?.solve(epsilon, lambda_reg)
}

/// Block-diagonal penalty over the free `A` and `B` coefficients.
pub fn ab_regularization(basis: &SplineBasis) -> Result<DMatrix<f64>> {
    let block = basis.free_regularization_matrix()?;
    let k = block.nrows();
    let mut out = DMatrix::zeros(2 * k, 2 * k);
    out.view_mut((0, 0), (k, k)).copy_from(&block);
    out.view_mut((k, k), (k, k)).copy_from(&block);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub u: Vec<f64>,
    pub lambda: f64,
    /// Set when every `A` coefficient is zero and no scaling was applied.
    pub skipped: bool,
}

/// Divides the stacked free dofs by `max |a_i|` (over the first `n_a` entries)
/// and multiplies `lambda` by it.
pub fn rescale_dofs(u: &[f64], lambda: f64, n_a: usize) -> Rescaled {
    let m = u[..n_a.min(u.len())].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return Rescaled {
            u: u.to_vec(),
            lambda,
            skipped: true,
        };
    }
    Rescaled {
        u: u.iter().map(|v| v / m).collect(),
        lambda: lambda * m,
        skipped: false,
    }
}

/// Starting point carried over from a previous reconstruction.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub psi: NodalField,
    pub profiles: ProfileExpansion,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionOptions {
    pub use_internal: bool,
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<WarmStart>,
    /// Overrides the default weights derived from the measurements.
    pub weights: Option<WeightConfig>,
}

impl Default for ReconstructionOptions {
    fn default() -> Self {
        Self {
            use_internal: false,
            tol: 1e-6,
            max_iter: 30,
            warm_start: None,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    /// Neumann misfit.
    pub j0: f64,
    /// Polarimetry misfit.
    pub j1: f64,
    /// Interferometry misfit.
    pub j2: f64,
    /// `eps/2 u^T Lambda u + eps_ne/2 v_hat^T Lambda v_hat`.
    pub j_eps: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.j0 + self.j1 + self.j2 + self.j_eps
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub equilibrium: Equilibrium,
    pub profiles: ProfileExpansion,
    pub costs: CostBreakdown,
    pub residuals: Vec<f64>,
    pub lambda_history: Vec<f64>,
    pub converged: bool,
    pub epsilon: f64,
}

impl ReconstructionResult {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            psi: self.equilibrium.psi.clone(),
            profiles: self.profiles.clone(),
            lambda: self.equilibrium.lambda,
        }
    }

    /// Plain-text summary block.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "converged {}", self.converged);
        let _ = writeln!(s, "iterations {}", self.iterations());
        let _ = writeln!(
            s,
            "final_residual {:e}",
            self.residuals.last().copied().unwrap_or(f64::NAN)
        );
        let _ = writeln!(s, "lambda {:e}", self.equilibrium.lambda);
        let _ = writeln!(s, "epsilon {:e}", self.epsilon);
        let c = &self.costs;
        let _ = writeln!(
            s,
            "J0 {:e}\nJ1 {:e}\nJ2 {:e}\nJ_eps {:e}\nJ {:e}",
            c.j0,
            c.j1,
            c.j2,
            c.j_eps,
            c.total()
        );
        let _ = writeln!(
            s,
            "psi_axis {:e}\npsi_boundary {:e}",
            self.equilibrium.domain.psi_axis, self.equilibrium.domain.psi_boundary
        );
        let _ = writeln!(
            s,
            "axis {} {}\nmode {}",
            self.equilibrium.domain.axis.r,
            self.equilibrium.domain.axis.z,
            self.equilibrium.domain.mode.as_str()
        );
        let _ = writeln!(
            s,
            "residuals {}",
            self.residuals
                .iter()
                .map(|r| format!("{r:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
        s
    }
}

/// Problem data shared by every iteration (and by every replicate on the same mesh).
pub struct InverseProblem<'a> {
    pub mesh: &'a Mesh,
    pub fact: &'a Factorization,
    pub basis: SplineBasis,
    pub params: MachineParams,
    lambda_ab: DMatrix<f64>,
    lambda_ne: DMatrix<f64>,
}

impl<'a> InverseProblem<'a> {
    pub fn new(mesh: &'a Mesh, fact: &'a Factorization, basis: SplineBasis, params: MachineParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            lambda_ab: ab_regularization(&basis)?,
            lambda_ne: basis.regularization_matrix()?,
            mesh,
            fact,
            basis,
            params,
        })
    }

    pub fn ab_penalty(&self) -> &DMatrix<f64> {
        &self.lambda_ab
    }

    pub fn ne_penalty(&self) -> &DMatrix<f64> {
        &self.lambda_ne
    }

    pub fn default_weights(&self, meas: &MeasurementSet) -> Result<WeightConfig> {
        WeightConfig::default_weights(
            meas.ip,
            self.mesh.boundary_length(),
            meas.g_n.len(),
            meas.chords.len(),
            self.params.mu0,
        )
    }

    /// Full reconstruction loop.
    pub fn reconstruct(
        &self,
        meas: &MeasurementSet,
        reg: &RegularizationConfig,
        opts: &ReconstructionOptions,
    ) -> Result<ReconstructionResult> {
        reg.validate()?;
        meas.validate(self.mesh)?;
        let params = MachineParams {
            ip: meas.ip,
            b0: meas.b0,
            ..self.params
        };
        params.validate()?;
        let weights = match opts.weights {
            Some(w) => w,
            None => self.default_weights(meas)?,
        };
        weights.validate()?;
        let mesh = self.mesh;
        let k = self.basis.n_free();

        let g = dirichlet_vector(mesh, &meas.g_d)?;
        let kinv_g = self.fact.solve(&g)?;
        let c0 = build_neumann_observer(mesh, &meas.neumann_points())?;
        let chords: Vec<Chord> = if opts.use_internal {
            meas.build_chords(mesh)?
        } else {
            Vec::new()
        };
        let gammas = meas.gammas();
        let alphas = meas.alphas();
        let n_mag = c0.nrows();
        let n_c = chords.len();
        let mut obs_weights = vec![weights.w_mag(); n_mag];
        obs_weights.extend(std::iter::repeat_n(weights.w_polar(), n_c));
        let inter_weights = vec![weights.w_inter(); n_c];
        let mut data = meas.neumann_values();
        data.extend(alphas.iter().take(n_c));

        let (mut psi, mut cold, mut profiles, mut lambda) = match &opts.warm_start {
            Some(w) => (w.psi.clone(), false, w.profiles.clone(), w.lambda),
            None => {
                let mean = meas.g_d.iter().sum::<f64>() / meas.g_d.len() as f64;
                (
                    NodalField::constant(mesh, mean),
                    true,
                    ProfileExpansion::first_guess(self.basis.clone()),
                    1.0,
                )
            }
        };
        if profiles.basis != self.basis {
            return Err(Error::Argument("warm-start profiles use a different basis".into()));
        }
        let mut residuals = Vec::new();
        let mut lambda_history = Vec::new();
        let mut ip_errors = Vec::new();
        let mut converged = false;
        let mut last: Option<(AbSystem, Vec<f64>, Option<Vec<f64>>)> = None;
        let mut ne_coeffs = profiles.ne.clone();

        for _ in 0..opts.max_iter {
            let state = if cold {
                cold = false;
                FluxState::cold(mesh)
            } else {
                FluxState::from_psi(mesh, &psi)?
            };
            // (i) lambda from the previous profiles on the current domain, then rescale
            let quad = state.quadrature(mesh);
            let current = Profiles::Expansion(profiles.clone());
            lambda = match lambda_from_quadrature(&quad, &current, params.ip, params.r0) {
                Ok(l) => {
                    ip_errors.push(current_error(mesh, &quad, &current, l, &params));
                    l
                }
                Err(Error::DivergentLambda { .. }) if residuals.is_empty() => lambda,
                Err(e) => return Err(e),
            };
            let scaled = rescale_dofs(&profiles.free_dofs(), lambda, k);
            lambda = scaled.lambda;
            lambda_history.push(lambda);

            // (ii) density from interferometry
            let mut c = c0.clone();
            if opts.use_internal && n_c > 0 {
                let b_int = build_interferometry_matrix(mesh, &chords, &self.basis, &state.psibar, &state.domain);
                let v = identify_ne(
                    &b_int,
                    &gammas,
                    &inter_weights,
                    reg.epsilon_ne,
                    reg.alpha_scale,
                    &self.lambda_ne,
                )?;
                let basis = &self.basis;
                let c1 =
                    build_polarimetry_observer(mesh, &chords, |x| basis.combine(&v, x), &state.psibar, &state.domain);
                c = stack_rows(&c0, &c1);
                ne_coeffs = Some(v);
            }

            // (iii) A/B from the normal equation
            let y = assemble_source_matrix(mesh, &state, &self.basis, lambda, params.r0)?;
            let y_free = free_columns(&y, self.basis.m(), k);
            let z = self.fact.solve_multi(&y_free)?;
            let e = &c * &z;
            let ckg = &c * dvector(&kinv_g);
            let f: Vec<f64> = data.iter().zip(ckg.iter()).map(|(d, v)| d - v).collect();
            let system = AbSystem::new(&e, &f, &obs_weights)?;
            let u = system.solve(reg.epsilon, &self.lambda_ab)?;

            // (iv) direct step reusing K^-1 Y
            let zu = &z * dvector(&u);
            let next = NodalField::from_vec_unchecked(zu.iter().zip(&kinv_g).map(|(a, b)| a + b).collect());
            let res = relative_residual(&next, &psi);
            residuals.push(res);
            psi = next;
            profiles = ProfileExpansion::from_free(self.basis.clone(), &u, ne_coeffs.clone())?;
            last = Some((system, u, ne_coeffs.clone()));
            if res <= opts.tol {
                converged = true;
                break;
            }
        }

        // (v) final domain; lambda re-normalised so the stored state carries Ip
        let state = FluxState::from_psi(mesh, &psi)?;
        let quad = state.quadrature(mesh);
        let final_profiles = Profiles::Expansion(profiles.clone());
        let lambda_final = lambda_from_quadrature(&quad, &final_profiles, params.ip, params.r0)?;
        ip_errors.push(current_error(mesh, &quad, &final_profiles, lambda_final, &params));
        let scaled = rescale_dofs(&profiles.free_dofs(), lambda_final, k);
        let profiles = ProfileExpansion::from_free(self.basis.clone(), &scaled.u, ne_coeffs.clone())?;

        let (system, u, ne) = last.ok_or_else(|| Error::Argument("max_iter must be at least 1".into()))?;
        let mut costs = CostBreakdown::default();
        let pred = &c0 * dvector(&psi);
        costs.j0 = 0.5
            * pred
                .iter()
                .zip(meas.neumann_values())
                .map(|(p, d)| (weights.w_mag() * (p - d)).powi(2))
                .sum::<f64>();
        costs.j_eps = 0.5 * reg.epsilon * (dvector(&u).transpose() * &self.lambda_ab * dvector(&u))[(0, 0)];
        if let (true, Some(v)) = (opts.use_internal && n_c > 0, ne.as_ref()) {
            let b_int = build_interferometry_matrix(mesh, &chords, &self.basis, &state.psibar, &state.domain);
            let basis = &self.basis;
            let c1 = build_polarimetry_observer(mesh, &chords, |x| basis.combine(v, x), &state.psibar, &state.domain);
            let pol = &c1 * dvector(&psi);
            costs.j1 = 0.5
                * pol
                    .iter()
                    .zip(&alphas)
                    .map(|(p, d)| (weights.w_polar() * (p - d)).powi(2))
                    .sum::<f64>();
            let inter = &b_int * dvector(v);
            costs.j2 = 0.5
                * inter
                    .iter()
                    .zip(&gammas)
                    .map(|(p, d)| (weights.w_inter() * (p - d)).powi(2))
                    .sum::<f64>();
            let v_hat = dvector(v) / reg.alpha_scale;
            costs.j_eps += 0.5 * reg.epsilon_ne * (v_hat.transpose() * &self.lambda_ne * &v_hat)[(0, 0)];
        }
        let _ = system;

        let equilibrium = Equilibrium {
            params,
            psi,
            domain: state.domain,
            profiles: Profiles::Expansion(profiles.clone()),
            lambda: scaled.lambda,
            residuals: residuals.clone(),
            ip_errors,
            converged,
        };
        Ok(ReconstructionResult {
            equilibrium,
            profiles,
            costs,
            residuals,
            lambda_history,
            converged,
            epsilon: reg.epsilon,
        })
    }
}

/// Columns of the free `A` and `B` coefficients out of an `n x 2m` source matrix.
pub fn free_columns(y: &DMatrix<f64>, m: usize, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(y.nrows(), 2 * k);
    out.view_mut((0, 0), (y.nrows(), k))
        .copy_from(&y.view((0, 0), (y.nrows(), k)));
    out.view_mut((0, k), (y.nrows(), k))
        .copy_from(&y.view((0, m), (y.nrows(), k)));
    out
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}
