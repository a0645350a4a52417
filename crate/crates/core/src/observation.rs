//! Measurements and the linear observation operators: boundary Neumann data
//! (`C0`), interferometry (`B_int`) and polarimetry (`C1`).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::SplineBasis;
use crate::error::{Error, Result};
use crate::geometry::{plasma_triangles, PlasmaDomain};
use crate::mesh::{Mesh, NodalField, Point};

/// Density unit used inside the polarimetry operator: `n_e` enters `C1` as
/// `n_e / NE_UNIT`, so the Faraday constant is folded into `sigma_polar`.
pub const NE_UNIT: f64 = 1e19;

/// Value of `(1/r) dpsi/dn` at a boundary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannProbe {
    pub at: Point,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChordData {
    pub from: Point,
    pub to: Point,
    /// Interferometry line integral of `n_e` (m^-2).
    pub gamma: f64,
    /// Polarimetry line integral.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// Flux at each boundary node, in boundary-loop order.
    pub g_d: Vec<f64>,
    pub g_n: Vec<NeumannProbe>,
    pub chords: Vec<ChordData>,
    pub ip: f64,
    pub b0: f64,
}

/// Straight line of sight sampled by the composite midpoint rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Chord {
    from: Point,
    to: Point,
    points: Vec<Point>,
    weights: Vec<f64>,
    normal: (f64, f64),
}

impl Chord {
    /// Midpoint rule with at least `ceil(len / max_step)` cells.
    pub fn new(from: Point, to: Point, max_step: f64) -> Result<Self> {
        let len = from.dist(to);
        if !(len > 0.0) || !(max_step > 0.0) {
            return Err(Error::Argument(format!(
                "chord needs distinct endpoints and a positive step (length {len}, step {max_step})"
            )));
        }
        let cells = (len / max_step).ceil().max(1.0) as usize;
        let w = len / cells as f64;
        let points = (0..cells)
            .map(|k| {
                let t = (k as f64 + 0.5) / cells as f64;
                Point::new(from.r + t * (to.r - from.r), from.z + t * (to.z - from.z))
            })
            .collect();
        let (tr, tz) = ((to.r - from.r) / len, (to.z - from.z) / len);
        Ok(Self {
            from,
            to,
            points,
            weights: vec![w; cells],
            normal: (tz, -tr),
        })
    }

    /// Step of half the longest mesh edge.
    pub fn for_mesh(mesh: &Mesh, from: Point, to: Point) -> Result<Self> {
        Self::new(from, to, 0.5 * mesh.max_edge())
    }

    pub fn from(&self) -> Point {
        self.from
    }

    pub fn to(&self) -> Point {
        self.to
    }

    pub fn length(&self) -> f64 {
        self.from.dist(self.to)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unit normal `(t_z, -t_r)` for direction `(t_r, t_z)`.
    pub fn normal(&self) -> (f64, f64) {
        self.normal
    }
}

/// Chord quadrature point resolved against the mesh and the plasma.
#[derive(Debug, Clone, Copy)]
pub struct ChordSample {
    pub tri: usize,
    pub at: Point,
    pub weight: f64,
    pub psibar: f64,
}

/// Quadrature points of `chord` lying inside the plasma.
pub fn chord_samples(
    mesh: &Mesh,
    chord: &Chord,
    psibar: &NodalField,
    domain: &PlasmaDomain,
    region: &[bool],
) -> Vec<ChordSample> {
    let mut loc = mesh.locator();
    let mut out = Vec::new();
    for (&p, &w) in chord.points().iter().zip(chord.weights()) {
        let Some((t, l)) = loc.locate(p) else { continue };
        if !region[t] {
            continue;
        }
        let tri = mesh.triangles()[t];
        let x = l[0] * psibar[tri[0]] + l[1] * psibar[tri[1]] + l[2] * psibar[tri[2]];
        if domain.mask(p, x) > 0.0 {
            out.push(ChordSample {
                tri: t,
                at: p,
                weight: w,
                psibar: x,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    pub sigma_mag: f64,
    pub sigma_polar: f64,
    pub sigma_inter: f64,
    pub n_mag: usize,
    pub n_chords: usize,
}

impl WeightConfig {
    /// `sigma_mag = 0.01 mu0 Ip / |Gamma|`, `sigma_polar = 0.1`, `sigma_inter = 1e18`.
    pub fn default_weights(ip: f64, boundary_length: f64, n_mag: usize, n_chords: usize, mu0: f64) -> Result<Self> {
        if !(boundary_length > 0.0) || ip == 0.0 || n_mag == 0 {
            return Err(Error::Argument(format!(
                "weights need |Gamma| > 0, Ip != 0 and N >= 1 (got {boundary_length}, {ip}, {n_mag})"
            )));
        }
        let b_m = mu0 * ip.abs() / boundary_length;
        Ok(Self {
            sigma_mag: 0.01 * b_m,
            sigma_polar: 0.1,
            sigma_inter: 1e18,
            n_mag,
            n_chords,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if [self.sigma_mag, self.sigma_polar, self.sigma_inter]
            .iter()
            .any(|s| !(*s > 0.0))
        {
            return Err(Error::Argument(format!(
                "standard deviations must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn w_mag(&self) -> f64 {
        1.0 / ((self.n_mag as f64).sqrt() * self.sigma_mag)
    }

    pub fn w_polar(&self) -> f64 {
        1.0 / ((self.n_chords.max(1) as f64).sqrt() * self.sigma_polar)
    }

    pub fn w_inter(&self) -> f64 {
        1.0 / ((self.n_chords.max(1) as f64).sqrt() * self.sigma_inter)
    }
}

/// Boundary edge `(a, b, tri)` records touching point `p`.
fn boundary_edges_at(mesh: &Mesh, p: Point, tol: f64) -> Vec<(usize, usize, usize)> {
    mesh.boundary_edge_triangles()
        .into_iter()
        .filter(|&(a, b, _)| {
            let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
            let (er, ez) = (pb.r - pa.r, pb.z - pa.z);
            let len2 = er * er + ez * ez;
            let t = (((p.r - pa.r) * er + (p.z - pa.z) * ez) / len2).clamp(0.0, 1.0);
            let q = Point::new(pa.r + t * er, pa.z + t * ez);
            q.dist(p) <= tol
        })
        .collect()
}

/// `C0`: row `k` maps nodal flux to `(1/r) dpsi/dn` at `points[k]`, using the
/// P1 gradient of the boundary triangles adjacent to the point (averaged when
/// the point is a node shared by two boundary edges) and the outward normal.
pub fn build_neumann_observer(mesh: &Mesh, points: &[Point]) -> Result<DMatrix<f64>> {
    let tol = 1e-9 * mesh.boundary_length();
    let orient = mesh.boundary_orientation();
    let mut c = DMatrix::zeros(points.len(), mesh.n_nodes());
    for (k, &p) in points.iter().enumerate() {
        let edges = boundary_edges_at(mesh, p, tol);
        if edges.is_empty() {
            return Err(Error::Argument(format!(
                "Neumann point ({}, {}) is not on the boundary",
                p.r, p.z
            )));
        }
        let node = edges
            .iter()
            .flat_map(|&(a, b, _)| [a, b])
            .find(|&n| mesh.nodes()[n].dist(p) <= tol);
        let normal = match node {
            Some(n) => mesh.boundary_normal(n).expect("boundary node"),
            None => {
                let (a, b, _) = edges[0];
                let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
                let (dr, dz) = (pb.r - pa.r, pb.z - pa.z);
                let len = dr.hypot(dz);
                (orient * dz / len, -orient * dr / len)
            }
        };
        let share = 1.0 / (edges.len() as f64 * p.r);
        for &(_, _, t) in &edges {
            let grads = mesh.shape_gradients(t);
            for (j, &node) in mesh.triangles()[t].iter().enumerate() {
                c[(k, node)] += share * (grads[j].0 * normal.0 + grads[j].1 * normal.1);
            }
        }
    }
    Ok(c)
}

/// `B_int[i][j] = int_{c_i} Phi_j(psibar) chi dl`.
pub fn build_interferometry_matrix(
    mesh: &Mesh,
    chords: &[Chord],
    basis: &SplineBasis,
    psibar: &NodalField,
    domain: &PlasmaDomain,
) -> DMatrix<f64> {
    let region = plasma_triangles(mesh, psibar, domain);
    let m = basis.m();
    let mut out = DMatrix::zeros(chords.len(), m);
    let mut phi = vec![0.0; m];
    for (i, chord) in chords.iter().enumerate() {
        for s in chord_samples(mesh, chord, psibar, domain, &region) {
            basis.eval_into(s.psibar, &mut phi);
            for (j, &p) in phi.iter().enumerate() {
                out[(i, j)] += s.weight * p;
            }
        }
    }
    out
}

/// `C1`: row `k` maps nodal flux to `int_{c_k} (n_e(psibar)/NE_UNIT) / r * dpsi/dn dl`
/// with `n` the chord normal. `ne` is any density profile of `psibar` in m^-3.
pub fn build_polarimetry_observer(
    mesh: &Mesh,
    chords: &[Chord],
    ne: impl Fn(f64) -> f64,
    psibar: &NodalField,
    domain: &PlasmaDomain,
) -> DMatrix<f64> {
    let region = plasma_triangles(mesh, psibar, domain);
    let mut out = DMatrix::zeros(chords.len(), mesh.n_nodes());
    for (k, chord) in chords.iter().enumerate() {
        let (nr, nz) = chord.normal();
        for s in chord_samples(mesh, chord, psibar, domain, &region) {
            let scale = s.weight * ne(s.psibar) / NE_UNIT / s.at.r;
            if scale == 0.0 {
                continue;
            }
            let grads = mesh.shape_gradients(s.tri);
            for (j, &node) in mesh.triangles()[s.tri].iter().enumerate() {
                out[(k, node)] += scale * (grads[j].0 * nr + grads[j].1 * nz);
            }
        }
    }
    out
}

impl MeasurementSet {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.g_n.is_empty() {
            return Err(Error::Argument("at least one Neumann measurement is required".into()));
        }
        if self.g_d.len() != mesh.boundary().len() {
            return Err(Error::Argument(format!(
                "{} Dirichlet values for {} boundary nodes",
                self.g_d.len(),
                mesh.boundary().len()
            )));
        }
        let finite = self.g_d.iter().all(|v| v.is_finite())
            && self.g_n.iter().all(|p| p.value.is_finite())
            && self.chords.iter().all(|c| c.gamma.is_finite() && c.alpha.is_finite())
            && self.ip.is_finite()
            && self.b0.is_finite();
        if !finite {
            return Err(Error::Argument("measurements contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn neumann_points(&self) -> Vec<Point> {
        self.g_n.iter().map(|p| p.at).collect()
    }

    pub fn neumann_values(&self) -> Vec<f64> {
        self.g_n.iter().map(|p| p.value).collect()
    }

    pub fn build_chords(&self, mesh: &Mesh) -> Result<Vec<Chord>> {
        self.chords
            .iter()
            .map(|c| Chord::for_mesh(mesh, c.from, c.to))
            .collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.chords.iter().map(|c| c.gamma).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.chords.iter().map(|c| c.alpha).collect()
    }

    /// Text layout: `gD n` then n values, `gN N` then `r z value` lines,
    /// `chords Nc` then `r1 z1 r2 z2 gamma alpha` lines, then `Ip v` and `B0 v`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gD {}", self.g_d.len());
        for v in &self.g_d {
            let _ = writeln!(s, "{v}");
        }
        let _ = writeln!(s, "gN {}", self.g_n.len());
        for p in &self.g_n {
            let _ = writeln!(s, "{} {} {}", p.at.r, p.at.z, p.value);
        }
        let _ = writeln!(s, "chords {}", self.chords.len());
        for c in &self.chords {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {}",
                c.from.r, c.from.z, c.to.r, c.to.z, c.gamma, c.alpha
            );
        }
        let _ = writeln!(s, "Ip {}\nB0 {}", self.ip, self.b0);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut row = |key: Option<&str>, width: usize| -> Result<Vec<f64>> {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::parse(0, "truncated measurement file"))?;
            let mut tokens = l.split_whitespace();
            if let Some(key) = key {
                if tokens.next() != Some(key) {
                    return Err(Error::parse(n, format!("expected `{key}`, found `{l}`")));
                }
            }
            let vals = tokens
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(n, format!("cannot parse `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != width {
                return Err(Error::parse(
                    n,
                    format!("expected {width} values, found {}", vals.len()),
                ));
            }
            Ok(vals)
        };
        let count = |v: Vec<f64>| -> usize { v[0].max(0.0) as usize };
        let n_d = count(row(Some("gD"), 1)?);
        let g_d = (0..n_d).map(|_| row(None, 1).map(|v| v[0])).collect::<Result<_>>()?;
        let n_n = count(row(Some("gN"), 1)?);
        let g_n = (0..n_n)
            .map(|_| {
                row(None, 3).map(|v| NeumannProbe {
                    at: Point::new(v[0], v[1]),
                    value: v[2],
                })
            })
            .collect::<Result<_>>()?;
        let n_c = count(row(Some("chords"), 1)?);
        let chords = (0..n_c)
            .map(|_| {
                row(None, 6).map(|v| ChordData {
                    from: Point::new(v[0], v[1]),
                    to: Point::new(v[2], v[3]),
                    gamma: v[4],
                    alpha: v[5],
                })
            })
            .collect::<Result<_>>()?;
        let ip = row(Some("Ip"), 1)?[0];
        let b0 = row(Some("B0"), 1)?[0];
        Ok(Self {
            g_d,
            g_n,
            chords,
            ip,
            b0,
        })
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{dvector, MU0};
    use crate::geometry::BoundaryMode;
    use crate::mesh::build_rect_mesh;

    fn rect() -> Mesh {
        build_rect_mesh(1.0, 2.0, -0.5, 0.5, 20, 20).unwrap()
    }

    fn domain(axis: Point) -> PlasmaDomain {
        PlasmaDomain {
            psi_axis: 1.0,
            psi_boundary: 0.0,
            axis,
            xpoint: None,
            mode: BoundaryMode::Limiter,
        }
    }

    /// `psibar` depending on `r` only, below one on `|r - rc| < a`.
    fn slab(mesh: &Mesh, rc: f64, a: f64) -> NodalField {
        NodalField::from_fn(mesh, |p| ((p.r - rc) / a).powi(2))
    }

    #[test]
    fn default_weights_follow_the_mean_field() {
        let w = WeightConfig::default_weights(1e6, 10.0, 100, 4, MU0).unwrap();
        assert!((w.sigma_mag - 1.2566e-3).abs() < 1e-6);
        assert_eq!(w.sigma_polar, 0.1);
        assert_eq!(w.sigma_inter, 1e18);
        let w4 = WeightConfig::default_weights(1e6, 10.0, 400, 4, MU0).unwrap();
        assert!((w4.w_mag() - 0.5 * w.w_mag()).abs() < 1e-15 * w.w_mag());
        assert!(matches!(
            WeightConfig::default_weights(1e6, 0.0, 100, 4, MU0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn neumann_rows_of_affine_fields_are_exact() {
        let mesh = rect();
        let top: Vec<Point> = (1..20).map(|i| Point::new(1.0 + 0.05 * i as f64, 0.5)).collect();
        let c0 = build_neumann_observer(&mesh, &top).unwrap();
        let constant = c0.clone() * dvector(&vec![3.0; mesh.n_nodes()]);
        assert!(constant.amax() < 1e-12);
        let z = NodalField::from_fn(&mesh, |p| p.z);
        let got = c0 * dvector(&z);
        for (k, p) in top.iter().enumerate() {
            assert!((got[k] - 1.0 / p.r).abs() < 1e-12);
        }
    }

    #[test]
    fn neumann_row_of_r_squared_on_the_outer_side() {
        let mesh = rect();
        let side: Vec<Point> = (1..20).map(|i| Point::new(2.0, -0.5 + 0.05 * i as f64)).collect();
        let c0 = build_neumann_observer(&mesh, &side).unwrap();
        let got = c0 * dvector(&NodalField::from_fn(&mesh, |p| p.r * p.r));
        let h = 0.05;
        for v in got.iter() {
            assert!((v - 2.0).abs() <= h, "{v}");
        }
        // A point between nodes uses the edge normal.
        let mid = build_neumann_observer(&mesh, &[Point::new(2.0, 0.0125)]).unwrap();
        let v = (mid * dvector(&NodalField::from_fn(&mesh, |p| p.r)))
            .into_iter()
            .copied()
            .collect::<Vec<_>>();
        assert!((v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interior_neumann_point_is_rejected() {
        let mesh = rect();
        assert!(matches!(
            build_neumann_observer(&mesh, &[Point::new(1.5, 0.0)]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn chord_weights_sum_to_its_length() {
        let c = Chord::new(Point::new(1.1, -0.3), Point::new(1.8, 0.4), 0.013).unwrap();
        let sum: f64 = c.weights().iter().sum();
        assert!((sum - c.length()).abs() < 1e-14);
        let (nr, nz) = c.normal();
        assert!((nr.hypot(nz) - 1.0).abs() < 1e-15);
        assert!(Chord::new(Point::new(1.0, 0.0), Point::new(1.0, 0.0), 0.1).is_err());
    }

    #[test]
    fn interferometry_rows_measure_the_plasma_length() {
        let mesh = rect();
        let basis = SplineBasis::default();
        let ones = DVector::from_element(basis.m(), 1.0);
        let axis = Point::new(1.5, 0.0);

        let inside = Chord::for_mesh(&mesh, Point::new(1.5, -0.45), Point::new(1.5, 0.45)).unwrap();
        let far = Chord::for_mesh(&mesh, Point::new(1.95, -0.45), Point::new(1.95, 0.45)).unwrap();
        let across = Chord::for_mesh(&mesh, Point::new(1.5, 0.1), Point::new(1.95, 0.1)).unwrap();
        let psibar = slab(&mesh, 1.5, 0.2);
        let b = build_interferometry_matrix(
            &mesh,
            &[inside.clone(), far, across.clone()],
            &basis,
            &psibar,
            &domain(axis),
        );
        let lengths = &b * ones;
        assert!((lengths[0] - inside.length()).abs() < 1e-12);
        assert_eq!(b.row(1).amax(), 0.0);
        let step = across.weights()[0];
        assert!((lengths[2] - 0.2).abs() <= 2.0 * step, "{}", lengths[2]);
    }

    use nalgebra::DVector;

    #[test]
    fn polarimetry_of_a_radial_flux() {
        let mesh = rect();
        let axis = Point::new(1.5, 0.0);
        let psibar = slab(&mesh, 1.5, 10.0);
        let dom = domain(axis);
        let psi_r = dvector(&NodalField::from_fn(&mesh, |p| p.r));
        let vertical = Chord::for_mesh(&mesh, Point::new(1.3, -0.4), Point::new(1.3, 0.4)).unwrap();
        let (a, b) = (Point::new(1.1, -0.4), Point::new(1.9, 0.3));
        let slanted = Chord::for_mesh(&mesh, a, b).unwrap();
        let c1 = build_polarimetry_observer(&mesh, &[vertical.clone(), slanted.clone()], |_| NE_UNIT, &psibar, &dom);
        let got = &c1 * &psi_r;
        assert!((got[0] - 0.8 / 1.3).abs() < 1e-12);
        let nr = slanted.normal().0;
        let exact = nr * slanted.length() / (b.r - a.r) * (b.r / a.r).ln();
        assert!((got[1] - exact).abs() < 1e-4 * exact.abs(), "{} vs {exact}", got[1]);

        let flat = &c1 * dvector(&vec![2.0; mesh.n_nodes()]);
        assert!(flat.amax() < 1e-12);
        let zero = build_polarimetry_observer(&mesh, &[vertical], |_| 0.0, &psibar, &dom);
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn observers_are_linear() {
        let mesh = rect();
        let pts: Vec<Point> = mesh.boundary().iter().map(|&b| mesh.nodes()[b]).collect();
        let c0 = build_neumann_observer(&mesh, &pts).unwrap();
        let u = dvector(&NodalField::from_fn(&mesh, |p| (3.0 * p.r).sin() * p.z));
        let v = dvector(&NodalField::from_fn(&mesh, |p| p.r * p.r - p.z));
        let lhs = &c0 * (&u * 2.0 - &v * 0.5);
        let rhs = &c0 * &u * 2.0 - &c0 * &v * 0.5;
        assert!((lhs - rhs).amax() < 1e-12);
    }

    fn sample_set() -> MeasurementSet {
        MeasurementSet {
            g_d: vec![0.1, -0.25, 1.0 / 3.0],
            g_n: vec![NeumannProbe {
                at: Point::new(1.0, 0.2),
                value: -1.5e-3,
            }],
            chords: vec![ChordData {
                from: Point::new(1.2, -0.5),
                to: Point::new(1.2, 0.5),
                gamma: 2.7e19,
                alpha: 0.031,
            }],
            ip: 2e6,
            b0: 3.0,
        }
    }

    #[test]
    fn measurement_text_round_trips() {
        let m = sample_set();
        let back = MeasurementSet::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meas.txt");
        m.save(&path).unwrap();
        assert_eq!(MeasurementSet::load(&path).unwrap(), m);
    }

    #[test]
    fn malformed_measurements_report_the_line() {
        let text = sample_set().to_text().replace("gN 1", "gN 1\n1.0 nope 3");
        assert!(matches!(
            MeasurementSet::parse(&text),
            Err(Error::Parse { line: 6, .. })
        ));
        assert!(matches!(MeasurementSet::parse("gD 2\n1\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            MeasurementSet::load("/nonexistent/meas.txt"),
            Err(Error::Io { .. })
        ));
    }
}
