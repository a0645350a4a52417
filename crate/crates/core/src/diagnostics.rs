//! Flux contours, flux-surface averages, mean current density, the diamagnetic
//! function and the safety factor.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::basis::Profiles;
use crate::error::{Error, Result};
use crate::forward::Equilibrium;
use crate::geometry::PlasmaDomain;
use crate::mesh::{point_in_polygon, Mesh, NodalField, Point};

/// Closed level line of the normalized flux with the poloidal field on each segment.
#[derive(Debug, Clone)]
pub struct FluxContour {
    level: f64,
    points: Vec<Point>,
    bp: Vec<f64>,
}

impl FluxContour {
    /// `points` must be closed (first equals last) and `bp` hold one value per segment.
    pub fn from_parts(level: f64, points: Vec<Point>, bp: Vec<f64>) -> Result<Self> {
        if points.len() < 4 || points.first() != points.last() {
            return Err(Error::Validation {
                invariant: "closed contour",
                detail: format!("{} points, first and last must coincide", points.len()),
            });
        }
        if bp.len() + 1 != points.len() {
            return Err(Error::Validation {
                invariant: "one poloidal field per segment",
                detail: format!("{} values for {} segments", bp.len(), points.len() - 1),
            });
        }
        if let Some(b) = bp.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Validation {
                invariant: "poloidal field nonnegative",
                detail: format!("B_p = {b}"),
            });
        }
        Ok(Self { level, points, bp })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Closed polyline, first point repeated at the end.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn poloidal_field(&self) -> &[f64] {
        &self.bp
    }

    pub fn perimeter(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    pub fn encloses(&self, p: Point) -> bool {
        point_in_polygon(&self.points[..self.points.len() - 1], p, 0.0)
    }

    pub fn r_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.r), hi.max(p.r))
            })
    }

    /// `int f dl / B_p` by the trapezoid rule.
    pub fn integrate_over_bp(&self, f: impl Fn(Point) -> f64) -> Result<f64> {
        let mut sum = 0.0;
        let mut prev = f(self.points[0]);
        for (w, &bp) in self.points.windows(2).zip(&self.bp) {
            let next = f(w[1]);
            let dl = w[0].dist(w[1]);
            if dl > 0.0 {
                if bp == 0.0 {
                    return Err(Error::DegenerateSurface(self.level));
                }
                sum += 0.5 * (prev + next) * dl / bp;
            }
            prev = next;
        }
        Ok(sum)
    }

    /// Flux-surface average `int f dl/B_p / int dl/B_p`.
    pub fn average(&self, f: impl Fn(Point) -> f64) -> Result<f64> {
        let den = self.integrate_over_bp(|_| 1.0)?;
        if !(den > 0.0) {
            return Err(Error::DegenerateSurface(self.level));
        }
        Ok(self.integrate_over_bp(f)? / den)
    }

    fn signed_area(&self) -> f64 {
        0.5 * self
            .points
            .windows(2)
            .map(|w| w[0].r * w[1].z - w[1].r * w[0].z)
            .sum::<f64>()
    }
}

/// Level line `psibar = level` traced by marching triangles, keeping the closed
/// branch that encloses the magnetic axis. The loop is oriented counterclockwise.
pub fn extract_contour(mesh: &Mesh, psibar: &NodalField, domain: &PlasmaDomain, level: f64) -> Result<FluxContour> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!(
            "contour level must lie in (0, 1), got {level}"
        )));
    }
    let scale = (domain.psi_boundary - domain.psi_axis).abs();
    if scale == 0.0 {
        return Err(Error::DegeneratePlasma(domain.psi_axis));
    }
    let nodes = mesh.nodes();

    let mut crossing: HashMap<(usize, usize), usize> = HashMap::new();
    let mut points: Vec<Point> = Vec::new();
    let mut segments: Vec<([usize; 2], usize)> = Vec::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let above = tri.map(|n| psibar[n] >= level);
        if above[0] == above[1] && above[1] == above[2] {
            continue;
        }
        let mut ends = [0usize; 2];
        let mut k = 0;
        for (i, j) in [(0, 1), (1, 2), (2, 0)] {
            if above[i] == above[j] {
                continue;
            }
            let (a, b) = (tri[i], tri[j]);
            let key = (a.min(b), a.max(b));
            let id = *crossing.entry(key).or_insert_with(|| {
                let s = (level - psibar[a]) / (psibar[b] - psibar[a]);
                let (pa, pb) = (nodes[a], nodes[b]);
                points.push(Point::new(pa.r + s * (pb.r - pa.r), pa.z + s * (pb.z - pa.z)));
                points.len() - 1
            });
            ends[k] = id;
            k += 1;
        }
        segments.push((ends, t));
    }

    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); points.len()];
    for (s, (ends, _)) in segments.iter().enumerate() {
        incident[ends[0]].push(s);
        incident[ends[1]].push(s);
    }

    let mut used = vec![false; segments.len()];
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain = vec![segments[start].0[0], segments[start].0[1]];
        let mut tris = vec![segments[start].1];
        let walk = |chain: &mut Vec<usize>, tris: &mut Vec<usize>, used: &mut Vec<bool>| loop {
            let cur = *chain.last().expect("chain is never empty");
            let Some(&s) = incident[cur].iter().find(|&&s| !used[s]) else {
                break;
            };
            used[s] = true;
            let [a, b] = segments[s].0;
            chain.push(if a == cur { b } else { a });
            tris.push(segments[s].1);
        };
        walk(&mut chain, &mut tris, &mut used);
        if chain.first() != chain.last() {
            // Finish the other direction so every segment of this branch is consumed.
            chain.reverse();
            tris.reverse();
            walk(&mut chain, &mut tris, &mut used);
            continue;
        }
        let loop_points: Vec<Point> = chain.iter().map(|&i| points[i]).collect();
        if !point_in_polygon(&loop_points[..loop_points.len() - 1], domain.axis, 0.0) {
            continue;
        }
        let bp = loop_points
            .windows(2)
            .zip(&tris)
            .map(|(w, &t)| {
                let (gr, gz) = mesh.field_gradient(t, psibar);
                let r = 0.5 * (w[0].r + w[1].r);
                scale * gr.hypot(gz) / r
            })
            .collect();
        let mut contour = FluxContour::from_parts(level, loop_points, bp)?;
        if contour.signed_area() < 0.0 {
            contour.points.reverse();
            contour.bp.reverse();
        }
        return Ok(contour);
    }
    Err(Error::OpenContour(level))
}

/// `f(psibar)` on `grid` from `f^2 = (B0 r0)^2 + 2 lambda mu0 r0 (psi_a - psi_b) int_psibar^1 B`,
/// integrated inward from the boundary by the trapezoid rule. `grid` must be
/// increasing and end at 1.
#[allow(clippy::too_many_arguments)]
pub fn integrate_f(
    b: impl Fn(f64) -> f64,
    grid: &[f64],
    lambda: f64,
    psi_axis: f64,
    psi_boundary: f64,
    b0: f64,
    r0: f64,
    mu0: f64,
) -> Result<Vec<f64>> {
    if grid.last() != Some(&1.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument("f grid must increase strictly and end at 1".into()));
    }
    let edge = b0 * r0;
    let coef = 2.0 * lambda * mu0 * r0 * (psi_axis - psi_boundary);
    let n = grid.len();
    let mut f = vec![0.0; n];
    f[n - 1] = edge;
    let mut integral = 0.0;
    let mut b_hi = b(grid[n - 1]);
    for i in (0..n - 1).rev() {
        let b_lo = b(grid[i]);
        integral += 0.5 * (b_lo + b_hi) * (grid[i + 1] - grid[i]);
        b_hi = b_lo;
        let radicand = edge * edge + coef * integral;
        if !(radicand >= 0.0) {
            return Err(Error::NonphysicalProfile(format!(
                "f^2 = {radicand:e} at psibar = {}",
                grid[i]
            )));
        }
        f[i] = radicand.sqrt().copysign(edge);
    }
    Ok(f)
}

/// `q = (1 / 2 pi) int f / (r^2 B_p) dl` on one contour, `f` constant on it.
pub fn contour_safety_factor(contour: &FluxContour, f: f64) -> Result<f64> {
    Ok(f * contour.integrate_over_bp(|p| 1.0 / (p.r * p.r))? / (2.0 * PI))
}

/// `q` per level; absent where the contour is missing or degenerate.
pub fn safety_factor(contours: &[Option<FluxContour>], f: &[f64]) -> Vec<Option<f64>> {
    contours
        .iter()
        .zip(f)
        .map(|(c, &fv)| c.as_ref().and_then(|c| contour_safety_factor(c, fv).ok()))
        .collect()
}

/// `<1/r^2>` per contour.
pub fn inverse_r2_average(contours: &[Option<FluxContour>]) -> Vec<Option<f64>> {
    contours
        .iter()
        .map(|c| c.as_ref().and_then(|c| c.average(|p| 1.0 / (p.r * p.r)).ok()))
        .collect()
}

/// `r0 <j/r> = lambda A + lambda r0^2 <1/r^2> B` per level.
pub fn mean_current_density(
    lambda: f64,
    r0: f64,
    profiles: &Profiles,
    levels: &[f64],
    inv_r2: &[Option<f64>],
) -> Vec<Option<f64>> {
    levels
        .iter()
        .zip(inv_r2)
        .map(|(&x, w)| w.map(|w| lambda * profiles.a(x) + lambda * r0 * r0 * w * profiles.b(x)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOptions {
    pub n_points: usize,
    /// Levels closer than this to 0 or 1 are extrapolated instead of traced.
    pub margin: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            n_points: 101,
            margin: 0.02,
        }
    }
}

/// Derived profiles of an equilibrium on a uniform `psibar` grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub psibar: Vec<f64>,
    pub inv_r2: Vec<Option<f64>>,
    pub lambda_a: Vec<f64>,
    /// `lambda r0^2 <1/r^2> B`.
    pub lambda_b_weighted: Vec<Option<f64>>,
    /// `r0 <j/r>`.
    pub j_mean: Vec<Option<f64>>,
    pub q: Vec<Option<f64>>,
    pub f: Vec<f64>,
    pub ne: Vec<Option<f64>>,
}

pub fn uniform_grid(n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    g[n - 1] = 1.0;
    g
}

/// Fills entries outside `[lo, hi]` linearly from the two nearest traced levels.
fn extrapolate_ends(grid: &[f64], values: &mut [Option<f64>], lo: f64, hi: f64) {
    let inner: Vec<usize> = (0..grid.len())
        .filter(|&i| grid[i] >= lo && grid[i] <= hi && values[i].is_some())
        .collect();
    if inner.len() < 2 {
        return;
    }
    let known: Vec<f64> = values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let line = |i: usize, j: usize, x: f64| {
        let (yi, yj) = (known[i], known[j]);
        yi + (yj - yi) * (x - grid[i]) / (grid[j] - grid[i])
    };
    let (a, b) = (inner[0], inner[1]);
    let (c, d) = (inner[inner.len() - 2], inner[inner.len() - 1]);
    for k in 0..grid.len() {
        if grid[k] < lo {
            values[k] = Some(line(a, b, grid[k]));
        } else if grid[k] > hi {
            values[k] = Some(line(c, d, grid[k]));
        }
    }
}

impl ProfileTable {
    pub fn compute(mesh: &Mesh, eq: &Equilibrium, opts: &TableOptions) -> Result<Self> {
        if opts.n_points < 4 || !(opts.margin > 0.0 && opts.margin < 0.5) {
            return Err(Error::Argument(format!(
                "profile table needs at least 4 points and a margin in (0, 0.5), got {} and {}",
                opts.n_points, opts.margin
            )));
        }
        let state = eq.flux_state()?;
        let grid = uniform_grid(opts.n_points);
        let (lo, hi) = (opts.margin, 1.0 - opts.margin);
        let contours: Vec<Option<FluxContour>> = grid
            .par_iter()
            .map(|&x| {
                (x >= lo && x <= hi)
                    .then(|| extract_contour(mesh, &state.psibar, &state.domain, x).ok())
                    .flatten()
            })
            .collect();

        let p = &eq.params;
        let f = integrate_f(
            |x| eq.profiles.b(x),
            &grid,
            eq.lambda,
            eq.domain.psi_axis,
            eq.domain.psi_boundary,
            p.b0,
            p.r0,
            p.mu0,
        )?;
        let mut inv_r2 = inverse_r2_average(&contours);
        extrapolate_ends(&grid, &mut inv_r2, lo, hi);
        let mut q = safety_factor(&contours, &f);
        extrapolate_ends(&grid, &mut q, lo, hi);

        let lambda_a = grid.iter().map(|&x| eq.lambda * eq.profiles.a(x)).collect();
        let lambda_b_weighted = grid
            .iter()
            .zip(&inv_r2)
            .map(|(&x, w)| w.map(|w| eq.lambda * p.r0 * p.r0 * w * eq.profiles.b(x)))
            .collect();
        let j_mean = mean_current_density(eq.lambda, p.r0, &eq.profiles, &grid, &inv_r2);
        let ne = grid.iter().map(|&x| eq.profiles.ne(x)).collect();
        Ok(Self {
            psibar: grid,
            inv_r2,
            lambda_a,
            lambda_b_weighted,
            j_mean,
            q,
            f,
            ne,
        })
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("psibar,lambdaA,lambdaB_weighted,j_mean,q,f,ne\n");
        for i in 0..self.psibar.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                self.psibar[i],
                self.lambda_a[i],
                cell(self.lambda_b_weighted[i]),
                cell(self.j_mean[i]),
                cell(self.q[i]),
                self.f[i],
                cell(self.ne[i]),
            );
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `sum |x - reference| / sum |reference|` over entries present in both.
pub fn mean_relative_error(values: &[Option<f64>], reference: &[Option<f64>]) -> Option<f64> {
    let (num, den) = values
        .iter()
        .zip(reference)
        .filter_map(|(v, r)| Some(((*v)? - (*r)?).abs()).zip(r.map(f64::abs)))
        .fold((0.0, 0.0), |(n, d), (e, r)| (n + e, d + r));
    (den > 0.0).then(|| num / den)
}
