//! Free-boundary bookkeeping: magnetic axis, X-point, boundary flux, normalised
//! flux and the plasma characteristic function.
//!
//! Sign convention: the flux is maximal on the magnetic axis and the plasma is
//! the set where `psi >= psi_b`. Fields with the opposite orientation must be
//! negated before they reach this module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh::{point_in_polygon, Mesh, NodalField, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    Limiter,
    XPoint,
}

impl BoundaryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryMode::Limiter => "limiter",
            BoundaryMode::XPoint => "xpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlasmaDomain {
    pub psi_axis: f64,
    pub psi_boundary: f64,
    pub axis: Point,
    pub xpoint: Option<Point>,
    pub mode: BoundaryMode,
}

impl PlasmaDomain {
    /// Locates axis, X-point and boundary flux of `psi`. Saddles outside the
    /// limiter polygon are ignored.
    pub fn detect(mesh: &Mesh, psi: &NodalField) -> Result<Self> {
        let (axis, psi_axis) = find_axis(mesh, psi)?;
        let lim = mesh.limiter();
        let tol = 1e-9 * mesh.boundary_length();
        let xpoint =
            find_xpoint(mesh, psi).filter(|&(p, v)| v < psi_axis && (lim.len() < 3 || point_in_polygon(lim, p, tol)));
        let (psi_boundary, mode) = boundary_flux(mesh, psi, psi_axis, xpoint)?;
        Ok(Self {
            psi_axis,
            psi_boundary,
            axis,
            xpoint: match mode {
                BoundaryMode::XPoint => xpoint.map(|x| x.0),
                BoundaryMode::Limiter => None,
            },
            mode,
        })
    }

    pub fn normalize(&self, psi: f64) -> f64 {
        (psi - self.psi_axis) / (self.psi_boundary - self.psi_axis)
    }

    /// Characteristic function at a point with normalised flux `psibar`.
    ///
    /// In X-point mode the half-plane beyond the X-point (away from the axis)
    /// is excluded so the private-flux region never counts as plasma.
    pub fn mask(&self, p: Point, psibar: f64) -> f64 {
        if !(psibar <= 1.0) {
            return 0.0;
        }
        if let Some(x) = self.xpoint {
            let toward_axis = (self.axis.r - x.r) * (p.r - x.r) + (self.axis.z - x.z) * (p.z - x.z);
            if toward_axis < 0.0 {
                return 0.0;
            }
        }
        1.0
    }
}

/// Quadratic least-squares model `c0 + c1 dx + c2 dz + c3 dx^2 + c4 dx dz + c5 dz^2`
/// around a centre node.
#[derive(Debug, Clone, Copy)]
struct LocalQuadratic {
    centre: Point,
    scale: f64,
    c: [f64; 6],
}

impl LocalQuadratic {
    fn fit(mesh: &Mesh, psi: &[f64], node: usize) -> Option<Self> {
        let mut support = mesh.node_neighbors(node);
        if support.len() < 6 {
            let mut ring2: Vec<usize> = support.iter().flat_map(|&n| mesh.node_neighbors(n)).collect();
            ring2.retain(|&n| n != node);
            support.extend(ring2);
            support.sort_unstable();
            support.dedup();
        }
        if support.len() < 5 {
            return None;
        }
        let centre = mesh.nodes()[node];
        let scale = support
            .iter()
            .map(|&n| mesh.nodes()[n].dist(centre))
            .fold(0.0, f64::max);
        let rows = support.len() + 1;
        let mut a = DMatrix::zeros(rows, 6);
        let mut b = DVector::zeros(rows);
        for (k, &n) in std::iter::once(&node).chain(&support).enumerate() {
            let p = mesh.nodes()[n];
            let (x, z) = ((p.r - centre.r) / scale, (p.z - centre.z) / scale);
            for (j, v) in [1.0, x, z, x * x, x * z, z * z].into_iter().enumerate() {
                a[(k, j)] = v;
            }
            b[k] = psi[n];
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-10 * smax {
            return None;
        }
        let c = svd.solve(&b, 0.0).ok()?;
        Some(Self {
            centre,
            scale,
            c: [c[0], c[1], c[2], c[3], c[4], c[5]],
        })
    }

    /// Hessian determinant in scaled coordinates.
    fn hessian_det(&self) -> f64 {
        4.0 * self.c[3] * self.c[5] - self.c[4] * self.c[4]
    }

    fn stationary(&self) -> Option<(Point, f64)> {
        let det = self.hessian_det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (h11, h12, h22) = (2.0 * self.c[3], self.c[4], 2.0 * self.c[5]);
        let x = (-self.c[1] * h22 + self.c[2] * h12) / det;
        let z = (-self.c[2] * h11 + self.c[1] * h12) / det;
        let value =
            self.c[0] + self.c[1] * x + self.c[2] * z + self.c[3] * x * x + self.c[4] * x * z + self.c[5] * z * z;
        Some((
            Point::new(self.centre.r + x * self.scale, self.centre.z + z * self.scale),
            value,
        ))
    }
}

/// True when `p` is at least as close to `node` as to every one of its neighbours.
fn claimed_by(mesh: &Mesh, node: usize, p: Point) -> bool {
    let d = p.dist(mesh.nodes()[node]);
    mesh.node_neighbors(node).iter().all(|&n| d <= p.dist(mesh.nodes()[n]))
}

/// Magnetic axis: interior argmax of `psi` refined by a local quadratic fit.
pub fn find_axis(mesh: &Mesh, psi: &NodalField) -> Result<(Point, f64)> {
    let boundary_max = mesh
        .boundary()
        .iter()
        .map(|&b| psi[b])
        .fold(f64::NEG_INFINITY, f64::max);
    let (node, &peak) = psi
        .iter()
        .enumerate()
        .filter(|(i, _)| !mesh.is_boundary(*i))
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::NoPlasma("mesh has no interior nodes".into()))?;
    if !(peak > boundary_max) {
        return Err(Error::NoPlasma(format!(
            "flux maximum {peak:e} is not above the boundary maximum {boundary_max:e}"
        )));
    }
    let refined = LocalQuadratic::fit(mesh, psi, node).and_then(|q| {
        let hessian_negative = q.hessian_det() > 0.0 && q.c[3] < 0.0;
        let (p, v) = q.stationary()?;
        (hessian_negative && p.dist(q.centre) <= q.scale && v >= peak).then_some((p, v))
    });
    Ok(refined.unwrap_or((mesh.nodes()[node], peak)))
}

/// Saddle of `psi` with the largest flux, if any interior node's quadratic fit
/// has an indefinite Hessian and a stationary point within that node's cell.
pub fn find_xpoint(mesh: &Mesh, psi: &NodalField) -> Option<(Point, f64)> {
    let max_abs = psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs == 0.0 {
        return None;
    }
    let mut best: Option<(Point, f64)> = None;
    for node in (0..mesh.n_nodes()).filter(|&i| !mesh.is_boundary(i)) {
        let Some(q) = LocalQuadratic::fit(mesh, psi, node) else {
            continue;
        };
        // Hessian in scaled coordinates carries a factor scale^2 already.
        if !(q.hessian_det() < -1e-12 * max_abs * max_abs) {
            continue;
        }
        let Some((p, v)) = q.stationary() else { continue };
        if !claimed_by(mesh, node, p) {
            continue;
        }
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((p, v));
        }
    }
    best
}

/// Boundary flux: maximum over the limiter, or the X-point flux when the
/// separatrix lies inside the limiter flux surface (ties go to the X-point).
pub fn boundary_flux(
    mesh: &Mesh,
    psi: &NodalField,
    psi_axis: f64,
    xpoint: Option<(Point, f64)>,
) -> Result<(f64, BoundaryMode)> {
    let mut loc = mesh.locator();
    let limiter_max = mesh
        .limiter()
        .iter()
        .filter_map(|&p| loc.interpolate(psi, p).ok())
        .fold(f64::NEG_INFINITY, f64::max);
    let (psi_b, mode) = match xpoint {
        Some((_, vx)) if vx >= limiter_max && vx < psi_axis => (vx, BoundaryMode::XPoint),
        _ if limiter_max.is_finite() => (limiter_max, BoundaryMode::Limiter),
        _ => return Err(Error::NoPlasma("no limiter points and no X-point".into())),
    };
    let scale = psi_axis.abs().max(psi_b.abs()).max(f64::MIN_POSITIVE);
    if (psi_axis - psi_b).abs() <= 1e-14 * scale {
        return Err(Error::DegeneratePlasma(psi_axis));
    }
    if psi_b > psi_axis {
        return Err(Error::NoPlasma(format!(
            "boundary flux {psi_b:e} exceeds axis flux {psi_axis:e}"
        )));
    }
    Ok((psi_b, mode))
}

pub fn normalized_flux(psi: &NodalField, psi_axis: f64, psi_boundary: f64) -> Result<NodalField> {
    if psi_axis == psi_boundary {
        return Err(Error::DegeneratePlasma(psi_axis));
    }
    let d = psi_boundary - psi_axis;
    Ok(NodalField::from_vec_unchecked(
        psi.iter().map(|&v| (v - psi_axis) / d).collect(),
    ))
}

/// One quadrature point of the mid-edge rule, restricted to the plasma.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub tri: usize,
    /// Barycentric weights of the triangle's vertices at this point.
    pub bary: [f64; 3],
    pub at: Point,
    pub psibar: f64,
    pub weight: f64,
}

/// Triangles belonging to the plasma: the edge-connected set of triangles with
/// at least one vertex at `psibar <= 1`, grown from the triangle holding the
/// axis. Regions of closed flux disconnected from the axis are left out.
pub fn plasma_triangles(mesh: &Mesh, psibar: &NodalField, domain: &PlasmaDomain) -> Vec<bool> {
    let n = mesh.n_triangles();
    let mut keep = vec![false; n];
    let touches = |t: usize| mesh.triangles()[t].iter().any(|&v| psibar[v] <= 1.0);
    let seed = match mesh.locator().locate(domain.axis) {
        Some((t, _)) => t,
        None => return keep,
    };
    if !touches(seed) {
        return keep;
    }
    let mut stack = vec![seed];
    keep[seed] = true;
    while let Some(t) = stack.pop() {
        for nb in mesh.neighbors(t).into_iter().flatten() {
            if !keep[nb] && touches(nb) {
                keep[nb] = true;
                stack.push(nb);
            }
        }
    }
    keep
}

/// Mid-edge three-point rule over the plasma triangles, keeping points where
/// the characteristic function is one.
pub fn plasma_quadrature(mesh: &Mesh, psibar: &NodalField, domain: &PlasmaDomain) -> Vec<QuadPoint> {
    let region = plasma_triangles(mesh, psibar, domain);
    let mut out = Vec::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if !region[t] {
            continue;
        }
        let w = mesh.area(t) / 3.0;
        let v = mesh.vertices(t);
        for k in 0..3 {
            let (a, b) = ((k + 1) % 3, (k + 2) % 3);
            let at = Point::new(0.5 * (v[a].r + v[b].r), 0.5 * (v[a].z + v[b].z));
            let x = 0.5 * (psibar[tri[a]] + psibar[tri[b]]);
            if domain.mask(at, x) > 0.0 {
                let mut bary = [0.0; 3];
                bary[a] = 0.5;
                bary[b] = 0.5;
                out.push(QuadPoint {
                    tri: t,
                    bary,
                    at,
                    psibar: x,
                    weight: w,
                });
            }
        }
    }
    out
}

/// Pointwise characteristic function of the plasma at arbitrary points.
pub fn plasma_mask(mesh: &Mesh, psibar: &NodalField, domain: &PlasmaDomain, points: &[Point]) -> Vec<f64> {
    let region = plasma_triangles(mesh, psibar, domain);
    let mut loc = mesh.locator();
    points
        .iter()
        .map(|&p| match loc.locate(p) {
            Some((t, l)) if region[t] => {
                let tri = mesh.triangles()[t];
                let x = l[0] * psibar[tri[0]] + l[1] * psibar[tri[1]] + l[2] * psibar[tri[2]];
                domain.mask(p, x)
            }
            _ => 0.0,
        })
        .collect()
}
