//! Twin experiments: a reference equilibrium, synthetic measurements, noise,
//! replicate statistics and L-curves.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::basis::{MonotoneCubic, Profiles};
use crate::diagnostics::{ProfileTable, TableOptions};
use crate::error::{Error, Result};
use crate::fem::{prepare, Factorization, MU0};
use crate::forward::{forward_fixed_point, Equilibrium, FixedPointOptions, MachineParams};
use crate::geometry::plasma_triangles;
use crate::inverse::{identify_ne, InverseProblem, ReconstructionOptions, RegularizationConfig};
use crate::mesh::{build_rect_mesh, elliptic_limiter, Mesh, Point};
use crate::observation::{
    build_neumann_observer, build_polarimetry_observer, chord_samples, Chord, ChordData, MeasurementSet, NeumannProbe,
};

/// Name of the generator behind [`perturb`], echoed in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), one stream per replicate";

/// Geometry and reference profiles of a twin experiment.
#[derive(Debug, Clone)]
pub struct TwinCase {
    pub mesh: Mesh,
    pub params: MachineParams,
    pub reference: Profiles,
    pub g_d: Vec<f64>,
    pub chords: Vec<(Point, Point)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskGeometry {
    pub cells: usize,
    pub r0: f64,
    /// Half width of the computational box.
    pub half_width: f64,
    pub limiter_radius: f64,
    /// Height-to-width ratio of the domain and the limiter.
    pub elongation: f64,
    pub ip: f64,
    pub b0: f64,
    /// Curvature of the vacuum flux `c (r^2 - r0^2)` imposed on the boundary.
    pub vacuum: f64,
    pub n_chords: usize,
}

impl Default for DeskGeometry {
    fn default() -> Self {
        Self {
            cells: 40,
            r0: 3.0,
            half_width: 1.1,
            limiter_radius: 1.0,
            elongation: 1.6,
            ip: 2e6,
            b0: 3.0,
            vacuum: -0.015,
            n_chords: 7,
        }
    }
}

pub fn reference_a(x: f64) -> f64 {
    1.0 - x * x
}

pub fn reference_b(x: f64) -> f64 {
    0.6 * (1.0 - x) * (1.0 + 0.5 * x)
}

pub fn reference_ne(x: f64) -> f64 {
    3e19 * (1.0 - 0.7 * x * x)
}

impl TwinCase {
    /// Box around `(r0, 0)`, elliptic limiter, reference profiles
    /// tabulated at 21 points, and vertical chords spread over the limiter.
    pub fn desk(geom: &DeskGeometry) -> Result<Self> {
        let (r0, hw, k) = (geom.r0, geom.half_width, geom.elongation);
        let hh = hw * k;
        let nz = ((geom.cells as f64) * k).round().max(1.0) as usize;
        let mesh = build_rect_mesh(r0 - hw, r0 + hw, -hh, hh, geom.cells, nz)?.with_limiter(elliptic_limiter(
            Point::new(r0, 0.0),
            geom.limiter_radius,
            geom.limiter_radius * k,
            64,
        ))?;
        let g_d = mesh
            .boundary()
            .iter()
            .map(|&b| {
                let p = mesh.nodes()[b];
                geom.vacuum * (p.r * p.r - r0 * r0)
            })
            .collect();
        let span = 0.75 * geom.limiter_radius;
        let chords = (0..geom.n_chords)
            .map(|i| {
                let t = if geom.n_chords == 1 {
                    0.5
                } else {
                    i as f64 / (geom.n_chords - 1) as f64
                };
                let r = r0 - span + 2.0 * span * t;
                (Point::new(r, -hh), Point::new(r, hh))
            })
            .collect();
        Ok(Self {
            mesh,
            params: MachineParams {
                r0,
                b0: geom.b0,
                ip: geom.ip,
                mu0: MU0,
            },
            reference: Profiles::Tabulated {
                a: MonotoneCubic::sample(reference_a, 21),
                b: MonotoneCubic::sample(reference_b, 21),
                ne: Some(MonotoneCubic::sample(reference_ne, 21)),
            },
            g_d,
            chords,
        })
    }

    pub fn factorize(&self) -> Result<Factorization> {
        Ok(prepare(&self.mesh, self.params.mu0)?.1)
    }

    pub fn build_chords(&self) -> Result<Vec<Chord>> {
        self.chords
            .iter()
            .map(|&(a, b)| Chord::for_mesh(&self.mesh, a, b))
            .collect()
    }

    /// Boundary nodes used as Neumann points.
    pub fn probes(&self) -> Vec<Point> {
        self.mesh.boundary().iter().map(|&b| self.mesh.nodes()[b]).collect()
    }

    pub fn reference_equilibrium(&self, fact: &Factorization, opts: &FixedPointOptions) -> Result<Equilibrium> {
        forward_fixed_point(&self.mesh, fact, &self.params, &self.reference, &self.g_d, opts)
    }

    pub fn measurements(&self, eq: &Equilibrium) -> Result<MeasurementSet> {
        synthesize_measurements(&self.mesh, eq, &self.build_chords()?, &self.probes())
    }
}

/// Measurements an ideal diagnostic set would record on `eq`: boundary flux,
/// `C0 psi` at `probes`, and chord integrals of the equilibrium's density.
/// Without a density profile, `gamma = alpha = 0`.
pub fn synthesize_measurements(
    mesh: &Mesh,
    eq: &Equilibrium,
    chords: &[Chord],
    probes: &[Point],
) -> Result<MeasurementSet> {
    let g_d = mesh.boundary().iter().map(|&b| eq.psi[b]).collect();
    let c0 = build_neumann_observer(mesh, probes)?;
    let gn = &c0 * crate::fem::dvector(&eq.psi);
    let g_n = probes
        .iter()
        .zip(gn.iter())
        .map(|(&at, &value)| NeumannProbe { at, value })
        .collect();
    let state = eq.flux_state()?;
    let region = plasma_triangles(mesh, &state.psibar, &state.domain);
    let ne = |x: f64| eq.profiles.ne(x).unwrap_or(0.0);
    let c1 = build_polarimetry_observer(mesh, chords, ne, &state.psibar, &state.domain);
    let alpha = &c1 * crate::fem::dvector(&eq.psi);
    let chords = chords
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let gamma = chord_samples(mesh, c, &state.psibar, &state.domain, &region)
                .iter()
                .map(|s| s.weight * ne(s.psibar))
                .sum();
            ChordData {
                from: c.from(),
                to: c.to(),
                gamma,
                alpha: alpha[i],
            }
        })
        .collect();
    Ok(MeasurementSet {
        g_d,
        g_n,
        chords,
        ip: eq.params.ip,
        b0: eq.params.b0,
    })
}

/// Adds zero-mean Gaussian noise of standard deviation `rate |m|` to every
/// flux, Neumann, interferometry and polarimetry value.
pub fn perturb(meas: &MeasurementSet, rate: f64, seed: u64) -> Result<MeasurementSet> {
    if !(rate >= 0.0) {
        return Err(Error::Argument(format!("noise rate must be non-negative, got {rate}")));
    }
    let mut out = meas.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noisy = |v: &mut f64| *v += rate * v.abs() * normal.sample(&mut rng);
    out.g_d.iter_mut().for_each(&mut noisy);
    out.g_n.iter_mut().for_each(|p| noisy(&mut p.value));
    for c in &mut out.chords {
        noisy(&mut c.gamma);
        noisy(&mut c.alpha);
    }
    Ok(out)
}

/// Seed of replicate `k` derived from the master seed.
pub fn replicate_seed(master: u64, k: usize) -> u64 {
    // SplitMix64 step keeps neighbouring replicates decorrelated.
    let mut z = master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pointwise statistics of one profile across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStats {
    pub mean: Vec<f64>,
    pub median: Vec<f64>,
    pub std: Vec<f64>,
}

impl ProfileStats {
    /// Reduces `samples[replicate][point]`, skipping absent entries. Points with
    /// no sample get NaN. The standard deviation uses the `n - 1` normalisation.
    pub fn from_samples(samples: &[Vec<Option<f64>>], n_points: usize) -> Self {
        let mut out = Self {
            mean: Vec::with_capacity(n_points),
            median: Vec::with_capacity(n_points),
            std: Vec::with_capacity(n_points),
        };
        for i in 0..n_points {
            let mut column: Vec<f64> = samples.iter().filter_map(|s| s[i]).filter(|v| v.is_finite()).collect();
            if column.is_empty() {
                out.mean.push(f64::NAN);
                out.median.push(f64::NAN);
                out.std.push(f64::NAN);
                continue;
            }
            let n = column.len() as f64;
            let mean = pairwise_sum(&column) / n;
            let dev: Vec<f64> = column.iter().map(|v| (v - mean) * (v - mean)).collect();
            let var = if column.len() > 1 {
                pairwise_sum(&dev) / (n - 1.0)
            } else {
                0.0
            };
            column.sort_by(f64::total_cmp);
            let k = column.len();
            let median = if k % 2 == 1 {
                column[k / 2]
            } else {
                0.5 * (column[k / 2 - 1] + column[k / 2])
            };
            out.mean.push(mean);
            out.median.push(median);
            out.std.push(var.sqrt());
        }
        out
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Replicate statistics at one regularization weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateStats {
    pub epsilon: f64,
    pub seed: u64,
    pub psibar: Vec<f64>,
    pub requested: usize,
    pub succeeded: usize,
    /// Replicates that did not converge or failed, with the reason.
    pub failures: Vec<(usize, String)>,
    pub lambda_a: ProfileStats,
    pub lambda_b_weighted: ProfileStats,
    pub j_mean: ProfileStats,
    pub q: ProfileStats,
    pub ne: Option<ProfileStats>,
}

impl ReplicateStats {
    fn from_tables(
        epsilon: f64,
        seed: u64,
        requested: usize,
        outcomes: Vec<std::result::Result<ProfileTable, String>>,
    ) -> Result<Self> {
        let mut failures = Vec::new();
        let mut tables = Vec::new();
        for (k, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(t) => tables.push(t),
                Err(e) => failures.push((k, e)),
            }
        }
        let Some(first) = tables.first() else {
            return Err(Error::EmptyStats(requested));
        };
        let psibar = first.psibar.clone();
        let n = psibar.len();
        let stats = |get: &dyn Fn(&ProfileTable) -> Vec<Option<f64>>| {
            ProfileStats::from_samples(&tables.iter().map(get).collect::<Vec<_>>(), n)
        };
        let has_ne = tables.iter().all(|t| t.ne.iter().all(Option::is_some));
        Ok(Self {
            epsilon,
            seed,
            requested,
            succeeded: tables.len(),
            failures,
            lambda_a: stats(&|t| t.lambda_a.iter().copied().map(Some).collect()),
            lambda_b_weighted: stats(&|t| t.lambda_b_weighted.clone()),
            j_mean: stats(&|t| t.j_mean.clone()),
            q: stats(&|t| t.q.clone()),
            ne: has_ne.then(|| stats(&|t| t.ne.clone())),
            psibar,
        })
    }

    /// `psibar, mean_*, median_*, std_*` per profile.
    pub fn to_csv(&self) -> String {
        let mut named: Vec<(&str, &ProfileStats)> = vec![
            ("lambdaA", &self.lambda_a),
            ("lambdaB_weighted", &self.lambda_b_weighted),
            ("j_mean", &self.j_mean),
            ("q", &self.q),
        ];
        if let Some(ne) = &self.ne {
            named.push(("ne", ne));
        }
        let mut s = String::from("psibar");
        for (name, _) in &named {
            let _ = write!(s, ",mean_{name},median_{name},std_{name}");
        }
        s.push('\n');
        for i in 0..self.psibar.len() {
            let _ = write!(s, "{}", self.psibar[i]);
            for (_, p) in &named {
                let _ = write!(s, ",{},{},{}", p.mean[i], p.median[i], p.std[i]);
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct StatsConfig {
    pub n_replicates: usize,
    pub noise_rate: f64,
    pub master_seed: u64,
    pub regularization: RegularizationConfig,
    pub options: ReconstructionOptions,
    pub table: TableOptions,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            n_replicates: 200,
            noise_rate: 0.01,
            master_seed: 20_090_901,
            regularization: RegularizationConfig::default(),
            options: ReconstructionOptions::default(),
            table: TableOptions::default(),
            jobs: None,
        }
    }
}

/// Reconstructs `n_replicates` noisy copies of `clean` for every `epsilon`.
/// Replicate `k` uses the same noise draw at every `epsilon`.
pub fn replicate_stats(
    problem: &InverseProblem<'_>,
    clean: &MeasurementSet,
    config: &StatsConfig,
    epsilons: &[f64],
) -> Result<Vec<ReplicateStats>> {
    if config.n_replicates == 0 {
        return Err(Error::Argument("at least one replicate is required".into()));
    }
    let noisy: Vec<MeasurementSet> = (0..config.n_replicates)
        .map(|k| perturb(clean, config.noise_rate, replicate_seed(config.master_seed, k)))
        .collect::<Result<_>>()?;
    let run = || {
        epsilons
            .iter()
            .map(|&epsilon| {
                let reg = RegularizationConfig {
                    epsilon,
                    ..config.regularization
                };
                reg.validate()?;
                let outcomes = noisy
                    .par_iter()
                    .map(|meas| {
                        let res = problem
                            .reconstruct(meas, &reg, &config.options)
                            .map_err(|e| e.to_string())?;
                        if !res.converged {
                            return Err(format!("not converged after {} iterations", res.iterations()));
                        }
                        ProfileTable::compute(problem.mesh, &res.equilibrium, &config.table).map_err(|e| e.to_string())
                    })
                    .collect();
                ReplicateStats::from_tables(epsilon, config.master_seed, config.n_replicates, outcomes)
            })
            .collect::<Result<Vec<_>>>()
    };
    match config.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// One point of an L-curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LCurvePoint {
    pub epsilon: f64,
    /// `1/2 ||D^(1/2) (E v - d)||^2`.
    pub misfit: f64,
    /// `1/2 v^T Lambda v`.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LCurve {
    pub points: Vec<LCurvePoint>,
    /// `log misfit`, `log penalty` and signed curvature per point.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub curvature: Vec<f64>,
    pub corner: usize,
    pub corner_epsilon: f64,
    /// Raised when the curve has no distinct corner.
    pub flat: bool,
    /// Weights whose solve failed and which carry no point.
    pub dropped: Vec<f64>,
}

/// Growth factor of the misfit over the whole grid below which the curve is a
/// vertical line without a corner.
pub const FLAT_MISFIT_GROWTH: f64 = 2.0;

impl LCurve {
    /// Corner by maximum curvature of `(log misfit, log penalty)` parametrised by
    /// `log epsilon`; `points` must be sorted by increasing `epsilon`.
    pub fn from_points(points: Vec<LCurvePoint>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Argument(format!(
                "an L-curve needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.windows(2).any(|w| !(w[1].epsilon > w[0].epsilon)) {
            return Err(Error::Argument("L-curve weights must increase strictly".into()));
        }
        if let Some(p) = points.iter().find(|p| !(p.misfit > 0.0 && p.penalty > 0.0)) {
            return Err(Error::Argument(format!(
                "L-curve terms must be positive at epsilon {:e}",
                p.epsilon
            )));
        }
        let t: Vec<f64> = points.iter().map(|p| p.epsilon.ln()).collect();
        let x: Vec<f64> = points.iter().map(|p| p.misfit.ln()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.penalty.ln()).collect();
        let n = points.len();
        let mut curvature = vec![0.0; n];
        for i in 1..n - 1 {
            let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            let d1 = |v: &[f64]| (v[i + 1] - v[i - 1]) / (h0 + h1);
            let d2 = |v: &[f64]| 2.0 * (h0 * v[i + 1] - (h0 + h1) * v[i] + h1 * v[i - 1]) / (h0 * h1 * (h0 + h1));
            let (xp, yp, xpp, ypp) = (d1(&x), d1(&y), d2(&x), d2(&y));
            let speed = (xp * xp + yp * yp).powf(1.5);
            curvature[i] = if speed > 0.0 {
                (xp * ypp - xpp * yp) / speed
            } else {
                0.0
            };
        }
        let corner = (1..n - 1)
            .max_by(|&a, &b| curvature[a].total_cmp(&curvature[b]))
            .expect("at least one interior point");
        let x_span =
            x.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a)) - x.iter().fold(f64::INFINITY, |m, &a| m.min(a));
        let flat = !(curvature[corner] > 0.0) || x_span < FLAT_MISFIT_GROWTH.ln();
        Ok(Self {
            corner_epsilon: points[corner].epsilon,
            points,
            x,
            y,
            curvature,
            corner,
            flat,
            dropped: Vec::new(),
        })
    }

    /// Misfit nondecreasing and penalty nonincreasing along the grid, up to `rel_tol`.
    pub fn arms_monotone(&self, rel_tol: f64) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].misfit >= w[0].misfit * (1.0 - rel_tol) && w[1].penalty <= w[0].penalty * (1.0 + rel_tol))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,misfit,penalty,log_misfit,log_penalty,curvature\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                p.epsilon, p.misfit, p.penalty, self.x[i], self.y[i], self.curvature[i]
            );
        }
        s
    }
}

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1).max(1) as f64))
        .collect()
}

/// L-curve of the density identification on fixed chord geometry.
pub fn ne_lcurve(
    b_int: &DMatrix<f64>,
    gamma: &[f64],
    weights: &[f64],
    alpha: f64,
    lambda_reg: &DMatrix<f64>,
    epsilons: &[f64],
) -> Result<LCurve> {
    let points = epsilons
        .iter()
        .map(|&eps| {
            let v = identify_ne(b_int, gamma, weights, eps, alpha, lambda_reg)?;
            let fit = b_int * DVector::from_column_slice(&v);
            let misfit = 0.5
                * fit
                    .iter()
                    .zip(gamma)
                    .zip(weights)
                    .map(|((p, g), w)| (w * (p - g)).powi(2))
                    .sum::<f64>();
            let v_hat = DVector::from_iterator(v.len(), v.iter().map(|x| x / alpha));
            let penalty = 0.5 * v_hat.dot(&(lambda_reg * &v_hat));
            Ok(LCurvePoint {
                epsilon: eps,
                misfit,
                penalty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LCurve::from_points(points)
}

/// L-curve of the full `A`/`B` reconstruction, one reconstruction per weight.
/// The misfit is the magnetic term `J0` and the penalty `1/2 u^T Lambda u`.
/// Weights whose reconstruction fails or does not converge are dropped.
pub fn ab_lcurve(
    problem: &InverseProblem<'_>,
    meas: &MeasurementSet,
    base: &RegularizationConfig,
    options: &ReconstructionOptions,
    epsilons: &[f64],
) -> Result<LCurve> {
    let outcomes: Vec<Option<LCurvePoint>> = epsilons
        .par_iter()
        .map(|&epsilon| {
            let reg = RegularizationConfig { epsilon, ..*base };
            let res = problem.reconstruct(meas, &reg, options).ok().filter(|r| r.converged)?;
            let u = DVector::from_vec(res.profiles.free_dofs());
            Some(LCurvePoint {
                epsilon,
                misfit: res.costs.j0,
                penalty: 0.5 * u.dot(&(problem.ab_penalty() * &u)),
            })
        })
        .collect();
    let dropped = epsilons
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| o.is_none())
        .map(|(&e, _)| e)
        .collect();
    let mut curve = LCurve::from_points(outcomes.into_iter().flatten().collect())?;
    curve.dropped = dropped;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Point;

    fn flat_set(n: usize) -> MeasurementSet {
        MeasurementSet {
            g_d: vec![1.0; n],
            g_n: vec![NeumannProbe {
                at: Point { r: 1.0, z: 0.0 },
                value: -2.0,
            }],
            chords: vec![ChordData {
                from: Point { r: 1.0, z: -1.0 },
                to: Point { r: 1.0, z: 1.0 },
                gamma: 1e19,
                alpha: 0.3,
            }],
            ip: 1e6,
            b0: 2.0,
        }
    }

    #[test]
    fn zero_noise_leaves_measurements_untouched() {
        let m = flat_set(10);
        assert_eq!(perturb(&m, 0.0, 4).unwrap(), m);
        assert!(perturb(&m, -0.1, 4).is_err());
    }

    #[test]
    fn noise_is_reproducible_and_relative() {
        let m = flat_set(100_000);
        let a = perturb(&m, 0.01, 17).unwrap();
        assert_eq!(a, perturb(&m, 0.01, 17).unwrap());
        assert_ne!(a, perturb(&m, 0.01, 18).unwrap());
        let dev: Vec<f64> = a.g_d.iter().map(|v| v - 1.0).collect();
        let n = dev.len() as f64;
        let mean = dev.iter().sum::<f64>() / n;
        let std = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.01).abs() < 1e-4, "std {std}");
        assert!(mean.abs() < 1e-4);
        let shift = (a.chords[0].gamma - 1e19) / 1e19;
        assert!(shift.abs() < 0.06);
        assert_eq!(a.ip, m.ip);
    }

    #[test]
    fn replicate_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|k| replicate_seed(20_090_901, k)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(replicate_seed(7, 3), replicate_seed(7, 3));
    }

    #[test]
    fn profile_stats_of_a_known_sample() {
        let samples = vec![
            vec![Some(1.0), None],
            vec![Some(2.0), None],
            vec![Some(4.0), Some(3.0)],
            vec![Some(5.0), None],
        ];
        let s = ProfileStats::from_samples(&samples, 2);
        assert_eq!(s.mean[0], 3.0);
        assert_eq!(s.median[0], 3.0);
        assert!((s.std[0] - (10.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert_eq!((s.mean[1], s.median[1], s.std[1]), (3.0, 3.0, 0.0));
        let none = ProfileStats::from_samples(&[vec![None]], 1);
        assert!(none.mean[0].is_nan());
    }

    #[test]
    fn pairwise_sum_matches_plain_sum() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }

    fn table(scale: f64) -> ProfileTable {
        let psibar = vec![0.0, 0.5, 1.0];
        ProfileTable {
            lambda_a: psibar.iter().map(|x| scale * (1.0 - x)).collect(),
            inv_r2: vec![Some(1.0); 3],
            lambda_b_weighted: vec![Some(scale); 3],
            j_mean: vec![Some(2.0 * scale); 3],
            q: vec![Some(1.0), Some(2.0), Some(3.0)],
            f: vec![1.0; 3],
            ne: vec![None; 3],
            psibar,
        }
    }

    #[test]
    fn failed_replicates_are_recorded() {
        let outcomes = vec![Ok(table(1.0)), Err("diverged".to_string()), Ok(table(3.0))];
        let s = ReplicateStats::from_tables(0.1, 5, 3, outcomes).unwrap();
        assert_eq!(s.succeeded, 2);
        assert_eq!(s.failures, vec![(1, "diverged".to_string())]);
        assert_eq!(s.lambda_a.mean, vec![2.0, 1.0, 0.0]);
        assert!(s.ne.is_none());
        let csv = s.to_csv();
        assert!(csv.starts_with("psibar,mean_lambdaA,median_lambdaA,std_lambdaA"));
        assert_eq!(csv.lines().count(), 4);

        let all_failed = ReplicateStats::from_tables(0.1, 5, 2, vec![Err("a".into()), Err("b".into())]);
        assert!(matches!(all_failed, Err(Error::EmptyStats(2))));
    }

    fn synthetic(eps: &[f64]) -> Vec<LCurvePoint> {
        // Misfit saturates once eps passes 1e-2 while the penalty keeps falling before it.
        eps.iter()
            .map(|&e| LCurvePoint {
                epsilon: e,
                misfit: 1.0 + (e / 1e-2).powi(2),
                penalty: 1.0 + (1e-2 / e).powi(2),
            })
            .collect()
    }

    #[test]
    fn corner_of_a_synthetic_curve() {
        let grid = log_grid(1e-5, 1e1, 61);
        let curve = LCurve::from_points(synthetic(&grid)).unwrap();
        assert!(
            (curve.corner_epsilon.log10() + 2.0).abs() <= 0.2,
            "{}",
            curve.corner_epsilon
        );
        assert!(!curve.flat);
        assert!(curve.arms_monotone(0.0));
        assert_eq!(curve.to_csv().lines().count(), 62);
    }

    #[test]
    fn curve_without_misfit_growth_is_flat() {
        let grid = log_grid(1e-5, 1e-3, 11);
        let points = grid
            .iter()
            .map(|&e| LCurvePoint {
                epsilon: e,
                misfit: 1.0 + 1e-3 * e,
                penalty: 1.0 / e,
            })
            .collect();
        assert!(LCurve::from_points(points).unwrap().flat);
    }

    #[test]
    fn malformed_curves_are_rejected() {
        let pts = synthetic(&[1e-3, 1e-2]);
        assert!(LCurve::from_points(pts).is_err());
        let mut pts = synthetic(&[1e-3, 1e-2, 1e-1]);
        pts.swap(0, 1);
        assert!(LCurve::from_points(pts).is_err());
        let mut pts = synthetic(&[1e-3, 1e-2, 1e-1]);
        pts[1].penalty = 0.0;
        assert!(LCurve::from_points(pts).is_err());
    }

    #[test]
    fn log_grid_hits_its_ends() {
        let g = log_grid(1e-6, 1e2, 33);
        assert_eq!(g.len(), 33);
        assert!((g[0] - 1e-6).abs() < 1e-20 && (g[32] - 1e2).abs() < 1e-10);
        assert!((g[4] - 1e-5).abs() < 1e-18);
    }
}
