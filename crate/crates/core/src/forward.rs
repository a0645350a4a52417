//! Direct free-boundary solver: plasma source assembly, the total-current
//! normalisation and the Picard fixed point producing reference equilibria.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::{MonotoneCubic, ProfileExpansion, Profiles, SplineBasis};
use crate::error::{Error, Result};
use crate::fem::{dvector, Factorization};
use crate::geometry::{normalized_flux, plasma_quadrature, BoundaryMode, PlasmaDomain, QuadPoint};
use crate::mesh::{Mesh, NodalField, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineParams {
    /// Major radius (m).
    pub r0: f64,
    /// Vacuum toroidal field at `(r0, 0)` (T).
    pub b0: f64,
    /// Total plasma current (A).
    pub ip: f64,
    pub mu0: f64,
}

impl MachineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0) || !(self.mu0 > 0.0) || self.ip == 0.0 || !self.ip.is_finite() {
            return Err(Error::Argument(format!(
                "machine parameters need r0 > 0, mu0 > 0 and Ip != 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Normalised flux together with the plasma domain it was computed against.
#[derive(Debug, Clone)]
pub struct FluxState {
    pub psibar: NodalField,
    pub domain: PlasmaDomain,
}

impl FluxState {
    pub fn from_psi(mesh: &Mesh, psi: &NodalField) -> Result<Self> {
        let domain = PlasmaDomain::detect(mesh, psi)?;
        let psibar = normalized_flux(psi, domain.psi_axis, domain.psi_boundary)?;
        Ok(Self { psibar, domain })
    }

    /// Starting state for a constant initial flux, where no axis exists yet:
    /// `psibar = rho^2` with `rho` the distance to the limiter centroid measured
    /// in units of the limiter's distance along the same ray. The mesh boundary
    /// stands in for limiters with fewer than three points.
    pub fn cold(mesh: &Mesh) -> Self {
        let wall: Vec<Point> = if mesh.limiter().len() >= 3 {
            mesh.limiter().to_vec()
        } else {
            mesh.boundary().iter().map(|&b| mesh.nodes()[b]).collect()
        };
        let n = wall.len() as f64;
        let centre = Point::new(
            wall.iter().map(|p| p.r).sum::<f64>() / n,
            wall.iter().map(|p| p.z).sum::<f64>() / n,
        );
        let psibar = NodalField::from_vec_unchecked(
            mesh.nodes()
                .iter()
                .map(|&p| {
                    let d = p.dist(centre);
                    if d == 0.0 {
                        return 0.0;
                    }
                    match ray_exit(&wall, centre, ((p.r - centre.r) / d, (p.z - centre.z) / d)) {
                        Some(reach) => (d / reach).powi(2),
                        None => f64::INFINITY,
                    }
                })
                .collect(),
        );
        Self {
            psibar,
            domain: PlasmaDomain {
                psi_axis: 0.0,
                psi_boundary: 1.0,
                axis: centre,
                xpoint: None,
                mode: BoundaryMode::Limiter,
            },
        }
    }

    pub fn quadrature(&self, mesh: &Mesh) -> Vec<QuadPoint> {
        plasma_quadrature(mesh, &self.psibar, &self.domain)
    }
}

/// Largest distance along the unit direction `dir` from `from` to an edge of
/// the closed polygon.
fn ray_exit(poly: &[Point], from: Point, dir: (f64, f64)) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (k, &a) in poly.iter().enumerate() {
        let b = poly[(k + 1) % poly.len()];
        let (ex, ez) = (b.r - a.r, b.z - a.z);
        let det = dir.0 * (-ez) - dir.1 * (-ex);
        if det.abs() < 1e-300 {
            continue;
        }
        let (wx, wz) = (a.r - from.r, a.z - from.z);
        let t = (wx * (-ez) - wz * (-ex)) / det;
        let s = (dir.0 * wz - dir.1 * wx) / det;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = Some(best.map_or(t, |v: f64| v.max(t)));
        }
    }
    best
}

/// `int_{Omega_p} [(r/r0) A + (r0/r) B] dx` by the plasma quadrature.
pub fn source_integral(quad: &[QuadPoint], profiles: &Profiles, r0: f64) -> f64 {
    quad.iter()
        .map(|q| q.weight * (q.at.r / r0 * profiles.a(q.psibar) + r0 / q.at.r * profiles.b(q.psibar)))
        .sum()
}

/// Scale `lambda = Ip / int [(r/r0) A + (r0/r) B]`.
pub fn compute_lambda(mesh: &Mesh, state: &FluxState, profiles: &Profiles, ip: f64, r0: f64) -> Result<f64> {
    let quad = state.quadrature(mesh);
    lambda_from_quadrature(&quad, profiles, ip, r0)
}

pub(crate) fn lambda_from_quadrature(quad: &[QuadPoint], profiles: &Profiles, ip: f64, r0: f64) -> Result<f64> {
    if quad.is_empty() {
        return Err(Error::EmptySource);
    }
    let integral = source_integral(quad, profiles, r0);
    let area: f64 = quad.iter().map(|q| q.weight).sum();
    if !(integral.abs() > 1e-12 * area) || !integral.is_finite() {
        return Err(Error::DivergentLambda { integral, ip });
    }
    Ok(ip / integral)
}

/// Source matrix `Y` (n x 2m) without the Dirichlet modification:
/// `Y[i][j] = lambda int (r/r0) Phi_j v_i`, `Y[i][m+j] = lambda int (r0/r) Phi_j v_i`.
pub fn assemble_source_matrix_unconstrained(
    mesh: &Mesh,
    state: &FluxState,
    basis: &SplineBasis,
    lambda: f64,
    r0: f64,
) -> Result<DMatrix<f64>> {
    let quad = state.quadrature(mesh);
    if quad.is_empty() {
        return Err(Error::EmptySource);
    }
    let m = basis.m();
    let mut y = DMatrix::zeros(mesh.n_nodes(), 2 * m);
    let mut phi = vec![0.0; m];
    for q in &quad {
        basis.eval_into(q.psibar, &mut phi);
        let ca = lambda * q.weight * q.at.r / r0;
        let cb = lambda * q.weight * r0 / q.at.r;
        let tri = mesh.triangles()[q.tri];
        for (k, &node) in tri.iter().enumerate() {
            let v = q.bary[k];
            if v == 0.0 {
                continue;
            }
            for (j, &p) in phi.iter().enumerate() {
                if p != 0.0 {
                    y[(node, j)] += ca * p * v;
                    y[(node, m + j)] += cb * p * v;
                }
            }
        }
    }
    Ok(y)
}

/// Source matrix with the rows of Dirichlet nodes zeroed, matching `K psi = Y u + g`.
pub fn assemble_source_matrix(
    mesh: &Mesh,
    state: &FluxState,
    basis: &SplineBasis,
    lambda: f64,
    r0: f64,
) -> Result<DMatrix<f64>> {
    let mut y = assemble_source_matrix_unconstrained(mesh, state, basis, lambda, r0)?;
    for &b in mesh.boundary() {
        y.row_mut(b).fill(0.0);
    }
    Ok(y)
}

/// Source vector for arbitrary profiles, Dirichlet rows left at zero unless
/// `keep_boundary_rows` is set.
pub fn assemble_source_vector(
    mesh: &Mesh,
    quad: &[QuadPoint],
    profiles: &Profiles,
    lambda: f64,
    r0: f64,
    keep_boundary_rows: bool,
) -> Vec<f64> {
    let mut y = vec![0.0; mesh.n_nodes()];
    for q in quad {
        let j = lambda * q.weight * (q.at.r / r0 * profiles.a(q.psibar) + r0 / q.at.r * profiles.b(q.psibar));
        for (k, &node) in mesh.triangles()[q.tri].iter().enumerate() {
            y[node] += j * q.bary[k];
        }
    }
    if !keep_boundary_rows {
        for &b in mesh.boundary() {
            y[b] = 0.0;
        }
    }
    y
}

/// One linear solve `K psi = Y u + g`.
pub fn direct_step(fact: &Factorization, y: &DMatrix<f64>, u: &[f64], g: &[f64]) -> Result<NodalField> {
    if u.len() != y.ncols() || g.len() != y.nrows() {
        return Err(Error::Argument(format!(
            "source matrix is {}x{} but u has {} entries and g has {}",
            y.nrows(),
            y.ncols(),
            u.len(),
            g.len()
        )));
    }
    let mut rhs = (y * dvector(u)).as_slice().to_vec();
    for (r, gi) in rhs.iter_mut().zip(g) {
        *r += gi;
    }
    fact.solve_field(&rhs)
}

/// Relative change `||new - old|| / ||old||` in the discrete L2 norm.
pub fn relative_residual(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let base: f64 = old.iter().map(|v| v * v).sum::<f64>().sqrt();
    if base == 0.0 {
        f64::INFINITY
    } else {
        diff / base
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Under-relaxation weight on the new iterate; 1 disables relaxation.
    pub relaxation: f64,
    pub warm_start: Option<NodalField>,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 30,
            relaxation: 1.0,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub params: MachineParams,
    pub psi: NodalField,
    pub domain: PlasmaDomain,
    pub profiles: Profiles,
    pub lambda: f64,
    /// Relative flux residual of every iteration.
    pub residuals: Vec<f64>,
    /// `|lambda * integral - Ip| / |Ip|` recomputed after every lambda update.
    pub ip_errors: Vec<f64>,
    pub converged: bool,
}

impl Equilibrium {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn flux_state(&self) -> Result<FluxState> {
        let psibar = normalized_flux(&self.psi, self.domain.psi_axis, self.domain.psi_boundary)?;
        Ok(FluxState {
            psibar,
            domain: self.domain.clone(),
        })
    }

    /// `lambda int [(r/r0) A + (r0/r) B]` over the current plasma domain.
    pub fn total_current(&self, mesh: &Mesh) -> Result<f64> {
        let state = self.flux_state()?;
        Ok(self.lambda * source_integral(&state.quadrature(mesh), &self.profiles, self.params.r0))
    }
}

/// Independent check of the current constraint: the unconstrained source vector
/// sums to the plasma current because the P1 hat functions partition unity.
pub(crate) fn current_error(
    mesh: &Mesh,
    quad: &[QuadPoint],
    profiles: &Profiles,
    lambda: f64,
    params: &MachineParams,
) -> f64 {
    let y = assemble_source_vector(mesh, quad, profiles, lambda, params.r0, true);
    let total: f64 = y.iter().sum();
    (total - params.ip).abs() / params.ip.abs()
}

/// Picard iteration for the direct problem with prescribed profiles and
/// Dirichlet flux `g_d` (one value per boundary node, in loop order).
pub fn forward_fixed_point(
    mesh: &Mesh,
    fact: &Factorization,
    params: &MachineParams,
    profiles: &Profiles,
    g_d: &[f64],
    opts: &FixedPointOptions,
) -> Result<Equilibrium> {
    params.validate()?;
    let g = crate::fem::dirichlet_vector(mesh, g_d)?;
    let (mut psi, mut cold) = match &opts.warm_start {
        Some(p) => (p.clone(), false),
        None => {
            let mean = g_d.iter().sum::<f64>() / g_d.len() as f64;
            (NodalField::constant(mesh, mean), true)
        }
    };
    let mut residuals = Vec::new();
    let mut ip_errors = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let state = if cold {
            cold = false;
            FluxState::cold(mesh)
        } else {
            FluxState::from_psi(mesh, &psi)?
        };
        let quad = state.quadrature(mesh);
        let lambda = lambda_from_quadrature(&quad, profiles, params.ip, params.r0)?;
        ip_errors.push(current_error(mesh, &quad, profiles, lambda, params));
        let y = assemble_source_vector(mesh, &quad, profiles, lambda, params.r0, false);
        let rhs: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a + b).collect();
        let mut next = fact.solve_field(&rhs)?;
        if opts.relaxation != 1.0 {
            let w = opts.relaxation;
            for (n, o) in next.values_mut().iter_mut().zip(psi.iter()) {
                *n = w * *n + (1.0 - w) * o;
            }
            for (&b, &v) in mesh.boundary().iter().zip(g_d) {
                next.values_mut()[b] = v;
            }
        }
        let res = relative_residual(&next, &psi);
        residuals.push(res);
        psi = next;
        if res <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations: residuals.len(),
            last: residuals.last().copied().unwrap_or(f64::NAN),
            history: residuals,
        });
    }
    let state = FluxState::from_psi(mesh, &psi)?;
    let quad = state.quadrature(mesh);
    let lambda = lambda_from_quadrature(&quad, profiles, params.ip, params.r0)?;
    ip_errors.push(current_error(mesh, &quad, profiles, lambda, params));
    Ok(Equilibrium {
        params: *params,
        psi,
        domain: state.domain,
        profiles: profiles.clone(),
        lambda,
        residuals,
        ip_errors,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Equilibrium text file
// ---------------------------------------------------------------------------

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl Equilibrium {
    /// Plain-text serialisation; see the README for the layout.
    pub fn to_text(&self) -> String {
        let mut s = String::from("equilibrium v1\n");
        let p = &self.params;
        let d = &self.domain;
        let _ = writeln!(s, "r0 {}\nb0 {}\nip {}\nmu0 {}", p.r0, p.b0, p.ip, p.mu0);
        let _ = writeln!(
            s,
            "lambda {}\npsi_axis {}\npsi_boundary {}",
            self.lambda, d.psi_axis, d.psi_boundary
        );
        let _ = writeln!(s, "axis {} {}\nmode {}", d.axis.r, d.axis.z, d.mode.as_str());
        match d.xpoint {
            Some(x) => {
                let _ = writeln!(s, "xpoint {} {}", x.r, x.z);
            }
            None => s.push_str("xpoint none\n"),
        }
        match &self.profiles {
            Profiles::Expansion(e) => {
                let _ = writeln!(
                    s,
                    "profiles expansion {} {} {}",
                    e.basis.m(),
                    e.basis.degree(),
                    u8::from(e.basis.end_constraint())
                );
                let _ = writeln!(s, "a {}\nb {}", join(&e.a), join(&e.b));
                match &e.ne {
                    Some(c) => {
                        let _ = writeln!(s, "ne {}", join(c));
                    }
                    None => s.push_str("ne none\n"),
                }
            }
            Profiles::Tabulated { a, b, ne } => {
                s.push_str("profiles tabulated\n");
                for (name, t) in [("a", Some(a)), ("b", Some(b)), ("ne", ne.as_ref())] {
                    match t {
                        Some(t) => {
                            let (x, y) = t.points();
                            let _ = writeln!(s, "{name}_x {}\n{name}_y {}", join(x), join(y));
                        }
                        None => {
                            let _ = writeln!(s, "{name}_x none\n{name}_y none");
                        }
                    }
                }
            }
        }
        let _ = writeln!(s, "converged {}", u8::from(self.converged));
        let _ = writeln!(s, "residuals {}", join(&self.residuals));
        let _ = writeln!(s, "ip_errors {}", join(&self.ip_errors));
        let _ = writeln!(s, "psi {}", self.psi.len());
        for v in self.psi.iter() {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected `{key}`")))?;
            let mut tok = l.split_whitespace();
            match tok.next() {
                Some(k) if k == key => Ok((n, tok.collect())),
                other => Err(Error::parse(
                    n,
                    format!("expected `{key}`, found `{}`", other.unwrap_or("")),
                )),
            }
        };
        let num = |n: usize, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(n, format!("cannot parse `{s}`")))
        };
        let nums = |n: usize, v: &[&str]| -> Result<Vec<f64>> { v.iter().map(|s| num(n, s)).collect() };
        let scalar = |(n, v): (usize, Vec<&str>)| -> Result<f64> {
            match v.as_slice() {
                [x] => num(n, x),
                _ => Err(Error::parse(n, "expected one value")),
            }
        };
        let (n0, v0) = next("equilibrium")?;
        if v0 != ["v1"] {
            return Err(Error::parse(n0, "unsupported equilibrium version"));
        }
        let params = MachineParams {
            r0: scalar(next("r0")?)?,
            b0: scalar(next("b0")?)?,
            ip: scalar(next("ip")?)?,
            mu0: scalar(next("mu0")?)?,
        };
        let lambda = scalar(next("lambda")?)?;
        let psi_axis = scalar(next("psi_axis")?)?;
        let psi_boundary = scalar(next("psi_boundary")?)?;
        let (n, v) = next("axis")?;
        let axis = match nums(n, &v)?.as_slice() {
            [r, z] => Point::new(*r, *z),
            _ => return Err(Error::parse(n, "axis needs two values")),
        };
        let (n, v) = next("mode")?;
        let mode = match v.as_slice() {
            ["limiter"] => BoundaryMode::Limiter,
            ["xpoint"] => BoundaryMode::XPoint,
            _ => return Err(Error::parse(n, "mode must be `limiter` or `xpoint`")),
        };
        let (n, v) = next("xpoint")?;
        let xpoint = match v.as_slice() {
            ["none"] => None,
            _ => match nums(n, &v)?.as_slice() {
                [r, z] => Some(Point::new(*r, *z)),
                _ => return Err(Error::parse(n, "xpoint needs two values or `none`")),
            },
        };
        let (n, v) = next("profiles")?;
        let profiles = match v.as_slice() {
            ["expansion", m, deg, ec] => {
                let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(n, "bad basis size"));
                let basis = SplineBasis::open_uniform(parse_usize(m)?, parse_usize(deg)?, *ec == "1")?;
                let (na, va) = next("a")?;
                let a = nums(na, &va)?;
                let (nb, vb) = next("b")?;
                let b = nums(nb, &vb)?;
                let (ne_line, vn) = next("ne")?;
                let ne = if vn == ["none"] {
                    None
                } else {
                    Some(nums(ne_line, &vn)?)
                };
                Profiles::Expansion(ProfileExpansion::new(basis, a, b, ne)?)
            }
            ["tabulated"] => {
                let mut table = |name: &'static str, name_y: &'static str| -> Result<Option<MonotoneCubic>> {
                    let (nx, vx) = next(name)?;
                    let (ny, vy) = next(name_y)?;
                    if vx == ["none"] {
                        return Ok(None);
                    }
                    Ok(Some(MonotoneCubic::new(nums(nx, &vx)?, nums(ny, &vy)?)?))
                };
                let a = table("a_x", "a_y")?.ok_or_else(|| Error::parse(n, "missing A table"))?;
                let b = table("b_x", "b_y")?.ok_or_else(|| Error::parse(n, "missing B table"))?;
                let ne = table("ne_x", "ne_y")?;
                Profiles::Tabulated { a, b, ne }
            }
            _ => {
                return Err(Error::parse(
                    n,
                    "profiles must be `expansion m degree end` or `tabulated`",
                ))
            }
        };
        let converged = scalar(next("converged")?)? != 0.0;
        let (n, v) = next("residuals")?;
        let residuals = nums(n, &v)?;
        let (n, v) = next("ip_errors")?;
        let ip_errors = nums(n, &v)?;
        let (n, v) = next("psi")?;
        let count = match v.as_slice() {
            [c] => c.parse::<usize>().map_err(|_| Error::parse(n, "bad node count"))?,
            _ => return Err(Error::parse(n, "psi needs a node count")),
        };
        let mut psi = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = lines.next().ok_or_else(|| Error::parse(0, "truncated psi section"))?;
            psi.push(num(n, l.trim())?);
        }
        Ok(Self {
            params,
            psi: NodalField::from_vec_unchecked(psi),
            domain: PlasmaDomain {
                psi_axis,
                psi_boundary,
                axis,
                xpoint,
                mode,
            },
            profiles,
            lambda,
            residuals,
            ip_errors,
            converged,
        })
    }
}
