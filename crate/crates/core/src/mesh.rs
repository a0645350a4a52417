//! Triangulated poloidal cross-section, point location and P1 interpolation.
//!
//! Nodes are `(r, z)` pairs with `r > 0`. Triangles are stored counter-clockwise,
//! the boundary is an ordered closed loop of node indices and the limiter is an
//! independent list of points lying inside (or on) the boundary.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::ops::Deref;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub r: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(r: f64, z: f64) -> Self {
        Self { r, z }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.r - other.r).hypot(self.z - other.z)
    }
}

/// One value per mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField(Vec<f64>);

impl NodalField {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::Argument(format!(
                "nodal field has {} values for {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        Ok(Self(values))
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Self {
        Self(mesh.nodes().iter().map(|&p| f(p)).collect())
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        Self(vec![value; mesh.n_nodes()])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Discrete L2 norm over nodal values.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for NodalField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
struct BucketGrid {
    origin: Point,
    cell: (f64, f64),
    dims: (usize, usize),
    buckets: Vec<Vec<usize>>,
}

impl BucketGrid {
    fn build(nodes: &[Point], triangles: &[[usize; 3]]) -> Self {
        let (mut rmin, mut rmax, mut zmin, mut zmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in nodes {
            rmin = rmin.min(p.r);
            rmax = rmax.max(p.r);
            zmin = zmin.min(p.z);
            zmax = zmax.max(p.z);
        }
        let side = (triangles.len() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = (side, side);
        let cell = (
            ((rmax - rmin) / side as f64).max(f64::MIN_POSITIVE),
            ((zmax - zmin) / side as f64).max(f64::MIN_POSITIVE),
        );
        let mut grid = Self {
            origin: Point::new(rmin, zmin),
            cell,
            dims,
            buckets: vec![Vec::new(); side * side],
        };
        for (t, tri) in triangles.iter().enumerate() {
            let ps = tri.map(|i| nodes[i]);
            let lo = grid.cell_of(Point::new(
                ps.iter().map(|p| p.r).fold(f64::MAX, f64::min),
                ps.iter().map(|p| p.z).fold(f64::MAX, f64::min),
            ));
            let hi = grid.cell_of(Point::new(
                ps.iter().map(|p| p.r).fold(f64::MIN, f64::max),
                ps.iter().map(|p| p.z).fold(f64::MIN, f64::max),
            ));
            for j in lo.1..=hi.1 {
                for i in lo.0..=hi.0 {
                    grid.buckets[j * dims.0 + i].push(t);
                }
            }
        }
        grid
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let fi = ((p.r - self.origin.r) / self.cell.0).floor();
        let fj = ((p.z - self.origin.z) / self.cell.1).floor();
        let clamp = |f: f64, n: usize| (f.max(0.0) as usize).min(n - 1);
        (clamp(fi, self.dims.0), clamp(fj, self.dims.1))
    }

    fn candidates(&self, p: Point) -> Option<&[usize]> {
        let r_hi = self.origin.r + self.cell.0 * self.dims.0 as f64;
        let z_hi = self.origin.z + self.cell.1 * self.dims.1 as f64;
        let slack = 1e-9 * (self.cell.0 + self.cell.1);
        if p.r < self.origin.r - slack || p.r > r_hi + slack || p.z < self.origin.z - slack || p.z > z_hi + slack {
            return None;
        }
        let (i, j) = self.cell_of(p);
        Some(&self.buckets[j * self.dims.0 + i])
    }
}

/// Triangulated domain. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<usize>,
    limiter: Vec<Point>,
    on_boundary: Vec<bool>,
    node_triangles: Vec<Vec<usize>>,
    /// `neighbors[t][k]` is the triangle across the edge opposite vertex `k`.
    neighbors: Vec<[Option<usize>; 3]>,
    grid: BucketGrid,
    warnings: Vec<String>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.r - a.r) * (c.z - a.z) - (c.r - a.r) * (b.z - a.z))
}

fn invalid(invariant: &'static str, detail: impl Into<String>) -> Error {
    Error::Validation {
        invariant,
        detail: detail.into(),
    }
}

impl Mesh {
    /// Validates the invariants and builds the topology. Clockwise triangles are
    /// reoriented and reported through [`Mesh::warnings`].
    pub fn new(
        nodes: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        boundary: Vec<usize>,
        limiter: Vec<Point>,
    ) -> Result<Self> {
        let n = nodes.len();
        let mut warnings = Vec::new();
        for (i, p) in nodes.iter().enumerate() {
            if !(p.r > 0.0) || !p.r.is_finite() || !p.z.is_finite() {
                return Err(invalid("node r > 0", format!("node {i} at r = {}", p.r)));
            }
        }
        if triangles.is_empty() {
            return Err(invalid("non-empty triangulation", "no triangles"));
        }
        for (t, tri) in triangles.iter_mut().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(invalid(
                    "triangle indices < node count",
                    format!("triangle {t} references node {bad} of {n}"),
                ));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area < 0.0 {
                tri.swap(1, 2);
                warnings.push(format!("triangle {t} was clockwise and has been reoriented"));
            } else if area == 0.0 || !area.is_finite() {
                return Err(invalid("positive triangle area", format!("triangle {t} is degenerate")));
            }
        }

        let mut node_triangles = vec![Vec::new(); n];
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                node_triangles[i].push(t);
            }
        }

        // edge -> (triangle, local opposite vertex)
        let mut edges: std::collections::HashMap<(usize, usize), Vec<(usize, usize)>> =
            std::collections::HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push((t, k));
            }
        }
        let mut neighbors = vec![[None; 3]; triangles.len()];
        let mut boundary_edges = 0usize;
        for (key, owners) in &edges {
            match owners.as_slice() {
                [_] => boundary_edges += 1,
                [(t1, k1), (t2, k2)] => {
                    neighbors[*t1][*k1] = Some(*t2);
                    neighbors[*t2][*k2] = Some(*t1);
                }
                _ => {
                    return Err(invalid(
                        "manifold triangulation",
                        format!("edge {key:?} shared by {} triangles", owners.len()),
                    ))
                }
            }
        }

        if boundary.len() < 3 {
            return Err(invalid("closed boundary loop", "fewer than 3 boundary nodes"));
        }
        let mut on_boundary = vec![false; n];
        for &b in &boundary {
            if b >= n {
                return Err(invalid(
                    "closed boundary loop",
                    format!("boundary node {b} out of range"),
                ));
            }
            if on_boundary[b] {
                return Err(invalid(
                    "closed boundary loop",
                    format!("node {b} repeated in the loop"),
                ));
            }
            on_boundary[b] = true;
        }
        for k in 0..boundary.len() {
            let (a, b) = (boundary[k], boundary[(k + 1) % boundary.len()]);
            match edges.get(&(a.min(b), a.max(b))) {
                Some(owners) if owners.len() == 1 => {}
                _ => {
                    return Err(invalid(
                        "closed boundary loop",
                        format!("({a}, {b}) is not a boundary edge of the triangulation"),
                    ))
                }
            }
        }
        if boundary_edges != boundary.len() {
            return Err(invalid(
                "closed boundary loop",
                format!(
                    "triangulation has {boundary_edges} boundary edges but the loop has {}",
                    boundary.len()
                ),
            ));
        }

        let grid = BucketGrid::build(&nodes, &triangles);
        let mesh = Self {
            nodes,
            triangles,
            boundary,
            limiter,
            on_boundary,
            node_triangles,
            neighbors,
            grid,
            warnings,
        };
        if !(mesh.boundary_length() > 0.0) {
            return Err(invalid("boundary length > 0", "zero-length boundary"));
        }
        for (k, &p) in mesh.limiter.iter().enumerate() {
            if !mesh.contains(p) {
                return Err(invalid(
                    "limiter inside domain",
                    format!("limiter point {k} ({}, {}) lies outside the boundary", p.r, p.z),
                ));
            }
        }
        Ok(mesh)
    }

    /// Replaces the limiter contour.
    pub fn with_limiter(self, limiter: Vec<Point>) -> Result<Self> {
        let Self {
            nodes,
            triangles,
            boundary,
            ..
        } = self;
        Self::new(nodes, triangles, boundary, limiter)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn limiter(&self) -> &[Point] {
        &self.limiter
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.on_boundary[node]
    }

    pub fn node_triangles(&self, node: usize) -> &[usize] {
        &self.node_triangles[node]
    }

    pub fn neighbors(&self, tri: usize) -> [Option<usize>; 3] {
        self.neighbors[tri]
    }

    pub fn vertices(&self, tri: usize) -> [Point; 3] {
        self.triangles[tri].map(|i| self.nodes[i])
    }

    pub fn area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.vertices(tri);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, tri: usize) -> Point {
        let [a, b, c] = self.vertices(tri);
        Point::new((a.r + b.r + c.r) / 3.0, (a.z + b.z + c.z) / 3.0)
    }

    /// Gradients of the three P1 hat functions on `tri` as `(d/dr, d/dz)` pairs.
    pub fn shape_gradients(&self, tri: usize) -> [(f64, f64); 3] {
        let [a, b, c] = self.vertices(tri);
        let twice = 2.0 * signed_area(a, b, c);
        [
            ((b.z - c.z) / twice, (c.r - b.r) / twice),
            ((c.z - a.z) / twice, (a.r - c.r) / twice),
            ((a.z - b.z) / twice, (b.r - a.r) / twice),
        ]
    }

    /// Constant gradient of the P1 interpolant of `field` on `tri`.
    pub fn field_gradient(&self, tri: usize, field: &[f64]) -> (f64, f64) {
        let g = self.shape_gradients(tri);
        let idx = self.triangles[tri];
        (0..3).fold((0.0, 0.0), |(gr, gz), k| {
            (gr + g[k].0 * field[idx[k]], gz + g[k].1 * field[idx[k]])
        })
    }

    /// Barycentric coordinates of `p` with respect to `tri`.
    pub fn barycentric(&self, tri: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.vertices(tri);
        let total = signed_area(a, b, c);
        let l0 = signed_area(p, b, c) / total;
        let l1 = signed_area(a, p, c) / total;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Total length of the ordered boundary loop.
    pub fn boundary_length(&self) -> f64 {
        let b = &self.boundary;
        (0..b.len())
            .map(|k| self.nodes[b[k]].dist(self.nodes[b[(k + 1) % b.len()]]))
            .sum()
    }

    /// Longest edge length, used as the mesh size `h`.
    pub fn max_edge(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .map(|(a, b)| self.nodes[a].dist(self.nodes[b]))
            .fold(0.0, f64::max)
    }

    /// Point-in-polygon test against the boundary loop, inclusive of the loop itself.
    pub fn contains(&self, p: Point) -> bool {
        let poly: Vec<Point> = self.boundary.iter().map(|&i| self.nodes[i]).collect();
        point_in_polygon(&poly, p, 1e-9 * self.boundary_length())
    }

    /// Outward unit normal at a boundary node: normalised mean of the two adjacent
    /// edge normals. Returns `None` for interior nodes.
    pub fn boundary_normal(&self, node: usize) -> Option<(f64, f64)> {
        let pos = self.boundary.iter().position(|&b| b == node)?;
        let nb = self.boundary.len();
        let prev = self.nodes[self.boundary[(pos + nb - 1) % nb]];
        let here = self.nodes[node];
        let next = self.nodes[self.boundary[(pos + 1) % nb]];
        let orient = self.boundary_orientation();
        let edge_normal = |a: Point, b: Point| {
            let (dr, dz) = (b.r - a.r, b.z - a.z);
            let len = dr.hypot(dz);
            // right-hand normal of a counter-clockwise loop points outward
            (orient * dz / len, -orient * dr / len)
        };
        let n1 = edge_normal(prev, here);
        let n2 = edge_normal(here, next);
        let (nr, nz) = (n1.0 + n2.0, n1.1 + n2.1);
        let len = nr.hypot(nz);
        Some((nr / len, nz / len))
    }

    /// +1 when the boundary loop runs counter-clockwise, -1 otherwise.
    pub fn boundary_orientation(&self) -> f64 {
        let b = &self.boundary;
        let twice: f64 = (0..b.len())
            .map(|k| {
                let p = self.nodes[b[k]];
                let q = self.nodes[b[(k + 1) % b.len()]];
                p.r * q.z - q.r * p.z
            })
            .sum();
        twice.signum()
    }

    /// Ordered boundary edges `(a, b)` paired with the triangle owning each edge.
    pub fn boundary_edge_triangles(&self) -> Vec<(usize, usize, usize)> {
        let nb = self.boundary.len();
        (0..nb)
            .map(|k| {
                let (a, b) = (self.boundary[k], self.boundary[(k + 1) % nb]);
                let t = *self.node_triangles[a]
                    .iter()
                    .find(|&&t| self.triangles[t].contains(&b))
                    .expect("boundary edge validated at construction");
                (a, b, t)
            })
            .collect()
    }

    /// Nodes sharing an edge with `node`.
    pub fn node_neighbors(&self, node: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.node_triangles[node]
            .iter()
            .flat_map(|&t| self.triangles[t])
            .filter(|&i| i != node)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn locator(&self) -> Locator<'_> {
        Locator { mesh: self, hint: None }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "nodes {} triangles {} boundary {} limiter {}",
            self.nodes.len(),
            self.triangles.len(),
            self.boundary.len(),
            self.limiter.len()
        );
        for p in &self.nodes {
            let _ = writeln!(s, "{} {}", p.r, p.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        for b in &self.boundary {
            let _ = writeln!(s, "{b}");
        }
        for p in &self.limiter {
            let _ = writeln!(s, "{} {}", p.r, p.z);
        }
        s
    }

    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((n, Err(e))) => Err(Error::parse(n, e.to_string())),
                None => Err(Error::parse(0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (hl, header) = next("header")?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        let counts = match tok.as_slice() {
            ["nodes", n, "triangles", t, "boundary", b, "limiter", l] => [n, t, b, l].map(|s| s.parse::<usize>()),
            _ => return Err(Error::parse(hl, "expected `nodes N triangles T boundary B limiter L`")),
        };
        let [n, t, b, l] = match counts {
            [Ok(n), Ok(t), Ok(b), Ok(l)] => [n, t, b, l],
            _ => return Err(Error::parse(hl, "header counts must be non-negative integers")),
        };
        fn fields<T: std::str::FromStr, const K: usize>(line: usize, s: &str) -> Result<[T; K]> {
            let parts: Vec<&str> = s.split_whitespace().collect();
            if parts.len() != K {
                return Err(Error::parse(
                    line,
                    format!("expected {K} fields, found {}", parts.len()),
                ));
            }
            let mut out = Vec::with_capacity(K);
            for p in parts {
                out.push(
                    p.parse::<T>()
                        .map_err(|_| Error::parse(line, format!("cannot parse `{p}`")))?,
                );
            }
            out.try_into().map_err(|_| Error::parse(line, "field count"))
        }
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, s) = next("node")?;
            let [r, z] = fields::<f64, 2>(ln, &s)?;
            nodes.push(Point::new(r, z));
        }
        let mut triangles = Vec::with_capacity(t);
        for _ in 0..t {
            let (ln, s) = next("triangle")?;
            triangles.push(fields::<usize, 3>(ln, &s)?);
        }
        let mut boundary = Vec::with_capacity(b);
        for _ in 0..b {
            let (ln, s) = next("boundary index")?;
            let [i] = fields::<usize, 1>(ln, &s)?;
            boundary.push(i);
        }
        let mut limiter = Vec::with_capacity(l);
        for _ in 0..l {
            let (ln, s) = next("limiter point")?;
            let [r, z] = fields::<f64, 2>(ln, &s)?;
            limiter.push(Point::new(r, z));
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(ln, "trailing data after limiter section"));
        }
        Self::new(nodes, triangles, boundary, limiter)
    }
}

/// Even-odd point-in-polygon test; points within `tol` of an edge count as inside.
pub fn point_in_polygon(poly: &[Point], p: Point, tol: f64) -> bool {
    let n = poly.len();
    let mut inside = false;
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        if segment_distance(a, b, p) <= tol {
            return true;
        }
        if (a.z > p.z) != (b.z > p.z) {
            let r_cross = a.r + (p.z - a.z) / (b.z - a.z) * (b.r - a.r);
            if p.r < r_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let (dr, dz) = (b.r - a.r, b.z - a.z);
    let len2 = dr * dr + dz * dz;
    let s = if len2 > 0.0 {
        (((p.r - a.r) * dr + (p.z - a.z) * dz) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(Point::new(a.r + s * dr, a.z + s * dz))
}

/// Point locator with a per-caller walking hint.
#[derive(Debug, Clone)]
pub struct Locator<'m> {
    mesh: &'m Mesh,
    hint: Option<usize>,
}

const BARY_TOL: f64 = 1e-12;

impl<'m> Locator<'m> {
    /// Containing triangle and barycentric coordinates, or `None` outside the mesh.
    pub fn locate(&mut self, p: Point) -> Option<(usize, [f64; 3])> {
        if let Some(start) = self.hint {
            if let Some(found) = self.walk(start, p) {
                self.hint = Some(found.0);
                return Some(found);
            }
        }
        let found = self
            .mesh
            .grid
            .candidates(p)?
            .iter()
            .map(|&t| (t, self.mesh.barycentric(t, p)))
            .find(|(_, l)| l.iter().all(|&c| c >= -BARY_TOL))?;
        self.hint = Some(found.0);
        Some(found)
    }

    fn walk(&self, start: usize, p: Point) -> Option<(usize, [f64; 3])> {
        let mut t = start;
        for _ in 0..64 {
            let l = self.mesh.barycentric(t, p);
            let (k, &worst) = l
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("three coordinates");
            if worst >= -BARY_TOL {
                return Some((t, l));
            }
            t = self.mesh.neighbors[t][k]?;
        }
        None
    }

    pub fn interpolate(&mut self, field: &[f64], p: Point) -> Result<f64> {
        let (t, l) = self.locate(p).ok_or(Error::OutsideDomain(p.r, p.z))?;
        let idx = self.mesh.triangles[t];
        Ok(l[0] * field[idx[0]] + l[1] * field[idx[1]] + l[2] * field[idx[2]])
    }
}

/// Barycentric P1 interpolation of `field` at `p`.
pub fn interpolate(mesh: &Mesh, field: &NodalField, p: Point) -> Result<f64> {
    mesh.locator().interpolate(field, p)
}

/// Structured rectangle split into `2 nr nz` triangles, boundary ordered
/// counter-clockwise from `(r_min, z_min)`. The limiter is the ring of nodes one
/// cell inside the boundary (the boundary itself when the grid is one cell thick).
pub fn build_rect_mesh(r_min: f64, r_max: f64, z_min: f64, z_max: f64, nr: usize, nz: usize) -> Result<Mesh> {
    if !(r_min > 0.0) {
        return Err(Error::Domain(format!("r_min must be positive, got {r_min}")));
    }
    if nr == 0 || nz == 0 {
        return Err(Error::Argument(format!(
            "cell counts must be at least 1, got {nr} x {nz}"
        )));
    }
    if !(r_max > r_min) || !(z_max > z_min) {
        return Err(Error::Argument("empty rectangle".into()));
    }
    let id = |i: usize, j: usize| j * (nr + 1) + i;
    let mut nodes = Vec::with_capacity((nr + 1) * (nz + 1));
    for j in 0..=nz {
        let z = z_min + (z_max - z_min) * j as f64 / nz as f64;
        for i in 0..=nr {
            let r = r_min + (r_max - r_min) * i as f64 / nr as f64;
            nodes.push(Point::new(r, z));
        }
    }
    let mut triangles = Vec::with_capacity(2 * nr * nz);
    for j in 0..nz {
        for i in 0..nr {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let ring = |i0: usize, j0: usize, i1: usize, j1: usize| {
        let mut loop_ = Vec::new();
        loop_.extend((i0..i1).map(|i| id(i, j0)));
        loop_.extend((j0..j1).map(|j| id(i1, j)));
        loop_.extend((i0 + 1..=i1).rev().map(|i| id(i, j1)));
        loop_.extend((j0 + 1..=j1).rev().map(|j| id(i0, j)));
        loop_
    };
    let boundary = ring(0, 0, nr, nz);
    let limiter_ids = if nr >= 3 && nz >= 3 {
        ring(1, 1, nr - 1, nz - 1)
    } else {
        boundary.clone()
    };
    let limiter = limiter_ids.iter().map(|&i| nodes[i]).collect();
    Mesh::new(nodes, triangles, boundary, limiter)
}

/// Limiter polygon approximating an ellipse centred at `centre`.
pub fn elliptic_limiter(centre: Point, half_width: f64, half_height: f64, n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Point::new(centre.r + half_width * t.cos(), centre.z + half_height * t.sin())
        })
        .collect()
}
