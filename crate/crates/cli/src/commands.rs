use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gsrecon::basis::{MonotoneCubic, Profiles};
use gsrecon::diagnostics::{mean_relative_error, ProfileTable, TableOptions};
use gsrecon::fem::Factorization;
use gsrecon::forward::{forward_fixed_point, Equilibrium, FixedPointOptions};
use gsrecon::inverse::{InverseProblem, ReconstructionOptions, ReconstructionResult, WarmStart};
use gsrecon::mesh::{Mesh, Point};
use gsrecon::observation::{build_interferometry_matrix, MeasurementSet};
use gsrecon::twin::{
    ab_lcurve, log_grid, ne_lcurve, perturb, replicate_seed, replicate_stats, TwinCase, RNG_ALGORITHM,
};

use crate::config::{GridSpec, ProfileChoice, RunConfig};
use crate::CliError;

/// Run manifest written next to every command's outputs.
struct Manifest {
    command: &'static str,
    lines: Vec<String>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            lines: Vec::new(),
        }
    }

    fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    fn write(&self, cfg: &RunConfig) -> Result<(), CliError> {
        let mut s = format!("command = {}\nversion = {}\n", self.command, env!("CARGO_PKG_VERSION"));
        for l in &self.lines {
            let _ = writeln!(s, "{l}");
        }
        s.push_str("\n[config]\n");
        s.push_str(&cfg.echo());
        write_file(&cfg.output.join("manifest.txt"), &s)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&cfg.output)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", cfg.output.display())))?;
    Ok(&cfg.output)
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output.join(name)
}

/// Vertical chords spread over the middle three quarters of the limiter.
fn default_chords(mesh: &Mesh, r0: f64, n: usize) -> Vec<(Point, Point)> {
    let pts = if mesh.limiter().is_empty() {
        mesh.nodes()
    } else {
        mesh.limiter()
    };
    let r_lo = pts.iter().map(|p| p.r).fold(f64::INFINITY, f64::min);
    let r_hi = pts.iter().map(|p| p.r).fold(f64::NEG_INFINITY, f64::max);
    let z_lo = mesh.nodes().iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_hi = mesh.nodes().iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let span = 0.75 * 0.5 * (r_hi - r_lo);
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            let r = r0 - span + 2.0 * span * t;
            (Point::new(r, z_lo), Point::new(r, z_hi))
        })
        .collect()
}

fn build_case(cfg: &RunConfig) -> Result<TwinCase, CliError> {
    let mut case = TwinCase::desk(&cfg.geometry).map_err(|e| CliError::Input(e.to_string()))?;
    if let Some(path) = &cfg.mesh_file {
        let mesh = Mesh::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let r0 = cfg.machine.r0;
        case.g_d = mesh
            .boundary()
            .iter()
            .map(|&b| {
                let p = mesh.nodes()[b];
                cfg.geometry.vacuum * (p.r * p.r - r0 * r0)
            })
            .collect();
        case.chords = default_chords(&mesh, r0, cfg.geometry.n_chords);
        case.mesh = mesh;
    }
    if let Some(chords) = &cfg.chords {
        case.chords = chords.clone();
    }
    case.params = cfg.machine;
    if cfg.profiles == ProfileChoice::Zero {
        case.reference = Profiles::Tabulated {
            a: MonotoneCubic::sample(|_| 0.0, 2),
            b: MonotoneCubic::sample(|_| 0.0, 2),
            ne: None,
        };
    }
    Ok(case)
}

fn reference(cfg: &RunConfig, case: &TwinCase) -> Result<(Factorization, Equilibrium), CliError> {
    let fact = case.factorize()?;
    let opts = FixedPointOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let eq = case.reference_equilibrium(&fact, &opts)?;
    Ok((fact, eq))
}

fn problem<'a>(cfg: &RunConfig, case: &'a TwinCase, fact: &'a Factorization) -> Result<InverseProblem<'a>, CliError> {
    Ok(InverseProblem::new(&case.mesh, fact, cfg.basis()?, cfg.machine)?)
}

fn options(
    cfg: &RunConfig,
    problem: &InverseProblem<'_>,
    meas: &MeasurementSet,
) -> Result<ReconstructionOptions, CliError> {
    let mut w = problem.default_weights(meas)?;
    w.sigma_mag = cfg.sigma_mag.unwrap_or(w.sigma_mag);
    w.sigma_polar = cfg.sigma_polar.unwrap_or(w.sigma_polar);
    w.sigma_inter = cfg.sigma_inter.unwrap_or(w.sigma_inter);
    Ok(ReconstructionOptions {
        use_internal: cfg.internal,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        warm_start: None,
        weights: Some(w),
    })
}

fn residual_csv(res: &ReconstructionResult) -> String {
    let mut s = String::from("iteration,residual,lambda\n");
    for (i, (r, l)) in res.residuals.iter().zip(&res.lambda_history).enumerate() {
        let _ = writeln!(s, "{},{r},{l}", i + 1);
    }
    s
}

fn table(case: &TwinCase, eq: &Equilibrium) -> Result<ProfileTable, CliError> {
    Ok(ProfileTable::compute(&case.mesh, eq, &TableOptions::default())?)
}

fn grid(g: GridSpec) -> Vec<f64> {
    log_grid(g.lo, g.hi, g.n)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|e| format!("{e:e}")).collect::<Vec<_>>().join(",")
}

pub fn mesh_gen(cfg: &RunConfig) -> Result<(), CliError> {
    output_dir(cfg)?;
    let case = build_case(cfg)?;
    case.mesh.save(out(cfg, "mesh.txt"))?;
    println!(
        "mesh: {} nodes, {} triangles, {} boundary nodes",
        case.mesh.n_nodes(),
        case.mesh.n_triangles(),
        case.mesh.boundary().len()
    );
    for w in case.mesh.warnings() {
        println!("warning: {w}");
    }
    let mut m = Manifest::new("mesh-gen");
    m.note("nodes", case.mesh.n_nodes());
    m.write(cfg)
}

pub fn forward(cfg: &RunConfig) -> Result<(), CliError> {
    output_dir(cfg)?;
    let case = build_case(cfg)?;
    let mut m = Manifest::new("forward");
    let fact = case.factorize()?;
    let opts = FixedPointOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let eq = match forward_fixed_point(&case.mesh, &fact, &case.params, &case.reference, &case.g_d, &opts) {
        Ok(eq) => eq,
        Err(e) => {
            m.note("status", format!("failed: {e}"));
            m.write(cfg)?;
            return Err(e.into());
        }
    };
    eq.save(out(cfg, "equilibrium.txt"))?;
    table(&case, &eq)?.save_csv(out(cfg, "profiles.csv"))?;
    case.measurements(&eq)?.save(out(cfg, "measurements.txt"))?;
    println!(
        "forward: converged in {} iterations, residual {:.3e}, lambda {:.6e}, axis ({:.4}, {:.4}), boundary {}",
        eq.iterations(),
        eq.residuals.last().copied().unwrap_or(f64::NAN),
        eq.lambda,
        eq.domain.axis.r,
        eq.domain.axis.z,
        eq.domain.mode.as_str()
    );
    m.note("iterations", eq.iterations());
    m.note("residuals", join(&eq.residuals));
    m.write(cfg)
}

pub fn reconstruct(cfg: &RunConfig, measurements: &Path, realtime: bool, warm: Option<&Path>) -> Result<(), CliError> {
    let meas =
        MeasurementSet::load(measurements).map_err(|e| CliError::Input(format!("{}: {e}", measurements.display())))?;
    output_dir(cfg)?;
    let case = build_case(cfg)?;
    let fact = case.factorize()?;
    let prob = problem(cfg, &case, &fact)?;
    let mut opts = options(cfg, &prob, &meas)?;
    if realtime {
        // Fixed iteration budget, no early stop.
        opts.max_iter = cfg.realtime_iterations;
        opts.tol = 0.0;
    }
    if let Some(path) = warm {
        let eq = Equilibrium::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let Profiles::Expansion(profiles) = eq.profiles else {
            return Err(CliError::Input(format!(
                "{} holds no basis expansion to warm-start from",
                path.display()
            )));
        };
        opts.warm_start = Some(WarmStart {
            psi: eq.psi,
            profiles,
            lambda: eq.lambda,
        });
    }
    let res = prob.reconstruct(&meas, &cfg.regularization, &opts)?;
    println!("{}", res.summary());
    for (i, r) in res.residuals.iter().enumerate() {
        println!("iteration {} residual {r:.6e}", i + 1);
    }
    res.equilibrium.save(out(cfg, "equilibrium.txt"))?;
    write_file(&out(cfg, "residuals.csv"), &residual_csv(&res))?;
    table(&case, &res.equilibrium)?.save_csv(out(cfg, "reconstruction.csv"))?;
    let mut m = Manifest::new("reconstruct");
    m.note("measurements", measurements.display());
    m.note("realtime", realtime);
    m.note("iterations", res.iterations());
    m.note("converged", res.converged);
    m.write(cfg)?;
    if !res.converged && !realtime {
        return Err(CliError::Numerical(format!(
            "reconstruction did not converge in {} iterations",
            res.iterations()
        )));
    }
    Ok(())
}

pub fn twin(cfg: &RunConfig) -> Result<(), CliError> {
    output_dir(cfg)?;
    let case = build_case(cfg)?;
    let (fact, eq) = reference(cfg, &case)?;
    let clean = case.measurements(&eq)?;
    let seed = replicate_seed(cfg.seed, 0);
    let noisy = perturb(&clean, cfg.noise_rate, seed)?;
    clean.save(out(cfg, "measurements_clean.txt"))?;
    noisy.save(out(cfg, "measurements.txt"))?;
    let prob = problem(cfg, &case, &fact)?;
    let opts = options(cfg, &prob, &noisy)?;
    let res = prob.reconstruct(&noisy, &cfg.regularization, &opts)?;
    let truth = table(&case, &eq)?;
    let found = table(&case, &res.equilibrium)?;
    truth.save_csv(out(cfg, "reference.csv"))?;
    found.save_csv(out(cfg, "identified.csv"))?;
    write_file(&out(cfg, "residuals.csv"), &residual_csv(&res))?;
    let some = |v: &[f64]| v.iter().copied().map(Some).collect::<Vec<_>>();
    let errors = [
        (
            "lambdaA",
            mean_relative_error(&some(&found.lambda_a), &some(&truth.lambda_a)),
        ),
        (
            "lambdaB_weighted",
            mean_relative_error(&found.lambda_b_weighted, &truth.lambda_b_weighted),
        ),
        ("j_mean", mean_relative_error(&found.j_mean, &truth.j_mean)),
        ("q", mean_relative_error(&found.q, &truth.q)),
    ];
    println!("{}", res.summary());
    let mut m = Manifest::new("twin");
    m.note("rng", RNG_ALGORITHM);
    m.note("seed", seed);
    m.note("epsilon", format!("{:e}", cfg.regularization.epsilon));
    m.note("converged", res.converged);
    for (name, e) in errors {
        let e = e.map_or("n/a".to_string(), |v| format!("{v:.4e}"));
        println!("mean relative error {name}: {e}");
        m.note(&format!("error_{name}"), e);
    }
    m.write(cfg)?;
    if !res.converged {
        return Err(CliError::Numerical(format!(
            "reconstruction did not converge in {} iterations",
            res.iterations()
        )));
    }
    Ok(())
}

pub fn stats(cfg: &RunConfig, jobs: Option<usize>) -> Result<(), CliError> {
    output_dir(cfg)?;
    let case = build_case(cfg)?;
    let (fact, eq) = reference(cfg, &case)?;
    let clean = case.measurements(&eq)?;
    let prob = problem(cfg, &case, &fact)?;
    let mut stats_cfg = cfg.stats();
    stats_cfg.options = options(cfg, &prob, &clean)?;
    if cfg.sigma_mag.is_none() && cfg.sigma_polar.is_none() && cfg.sigma_inter.is_none() {
        // Each replicate derives its own default weights.
        stats_cfg.options.weights = None;
    }
    stats_cfg.jobs = jobs;
    table(&case, &eq)?.save_csv(out(cfg, "reference.csv"))?;
    let mut m = Manifest::new("stats");
    m.note("rng", RNG_ALGORITHM);
    m.note("seed", cfg.seed);
    m.note("noise_rate", cfg.noise_rate);
    m.note("epsilon_grid", join(&cfg.epsilons));
    m.note("replicates", cfg.replicates);
    let all = match replicate_stats(&prob, &clean, &stats_cfg, &cfg.epsilons) {
        Ok(s) => s,
        Err(e) => {
            m.note("status", format!("failed: {e}"));
            m.write(cfg)?;
            return Err(e.into());
        }
    };
    for (i, s) in all.iter().enumerate() {
        let name = format!("stats_{i}.csv");
        write_file(&out(cfg, &name), &s.to_csv())?;
        println!(
            "epsilon {:e}: {}/{} replicates succeeded -> {name}",
            s.epsilon, s.succeeded, s.requested
        );
        m.note(&format!("file_{i}"), format!("{name} epsilon {:e}", s.epsilon));
        m.note(&format!("succeeded_{i}"), s.succeeded);
        for (k, reason) in &s.failures {
            m.note(&format!("failure_{i}"), format!("replicate {k}: {reason}"));
        }
    }
    m.write(cfg)
}

pub fn lcurve(cfg: &RunConfig) -> Result<(), CliError> {
    output_dir(cfg)?;
    let case = build_case(cfg)?;
    let (fact, eq) = reference(cfg, &case)?;
    let clean = case.measurements(&eq)?;
    let seed = replicate_seed(cfg.seed, 0);
    let noisy = perturb(&clean, cfg.noise_rate, seed)?;
    let prob = problem(cfg, &case, &fact)?;
    let opts = options(cfg, &prob, &noisy)?;
    let weights = opts.weights.expect("weights resolved");
    let state = eq.flux_state()?;
    let chords = case.build_chords()?;
    let b_int = build_interferometry_matrix(&case.mesh, &chords, &prob.basis, &state.psibar, &state.domain);
    let ne = ne_lcurve(
        &b_int,
        &noisy.gammas(),
        &vec![weights.w_inter(); chords.len()],
        cfg.regularization.alpha_scale,
        prob.ne_penalty(),
        &grid(cfg.ne_lcurve),
    )?;
    let ab_opts = ReconstructionOptions {
        use_internal: false,
        ..opts
    };
    let ab = ab_lcurve(&prob, &noisy, &cfg.regularization, &ab_opts, &grid(cfg.ab_lcurve))?;
    write_file(&out(cfg, "lcurve_ne.csv"), &ne.to_csv())?;
    write_file(&out(cfg, "lcurve_ab.csv"), &ab.to_csv())?;
    println!(
        "ne: corner epsilon {:e}, flat {}, monotone arms {}",
        ne.corner_epsilon,
        ne.flat,
        ne.arms_monotone(1e-9)
    );
    println!(
        "A/B: corner epsilon {:e}, flat {}, monotone arms {}, dropped {}",
        ab.corner_epsilon,
        ab.flat,
        ab.arms_monotone(1e-9),
        ab.dropped.len()
    );
    let mut m = Manifest::new("lcurve");
    m.note("rng", RNG_ALGORITHM);
    m.note("seed", seed);
    m.note("ne_grid", join(&grid(cfg.ne_lcurve)));
    m.note("ab_grid", join(&grid(cfg.ab_lcurve)));
    m.note("ne_corner", format!("{:e}", ne.corner_epsilon));
    m.note("ab_corner", format!("{:e} flat {}", ab.corner_epsilon, ab.flat));
    if !ab.dropped.is_empty() {
        m.note("ab_dropped", join(&ab.dropped));
    }
    m.write(cfg)
}
