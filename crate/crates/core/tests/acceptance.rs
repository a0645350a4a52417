//! Acceptance criteria of the reconstruction code, one PASS/FAIL line each.
//! Failing criteria are reported, not asserted: the line and its measured
//! values are the result.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{desk, homogeneous_error, identification_errors, monotone_tail, next_slice, problem, rectangle, Desk};
use gsrecon::diagnostics::{contour_safety_factor, extract_contour, ProfileTable, TableOptions};
use gsrecon::inverse::{ReconstructionOptions, RegularizationConfig};
use gsrecon::observation::build_interferometry_matrix;
use gsrecon::twin::{
    ab_lcurve, log_grid, ne_lcurve, perturb, replicate_seed, replicate_stats, ProfileStats, ReplicateStats, StatsConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let clock = Instant::now();
    let out = run();
    let elapsed = clock.elapsed();
    let pass = out.pass && elapsed < limit;
    let line = format!(
        "{} criterion {id} ({name}): {} [{:.2} s, limit {} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    // Bypass the test harness capture so the lines always reach the log.
    let _ = writeln!(std::io::stdout().lock(), "{line}");
    pass
}

fn fem_correctness() -> Outcome {
    let mesh = rectangle(20);
    let constant = homogeneous_error(&mesh, |_| 1.5);
    let vertical = homogeneous_error(&mesh, |p| p.z);
    let coarse = homogeneous_error(&mesh, |p| p.r * p.r);
    let fine = homogeneous_error(&rectangle(40), |p| p.r * p.r);
    let ratio = coarse / fine;
    Outcome {
        pass: constant <= 1e-10 && vertical <= 1e-10 && (3.6..=4.4).contains(&ratio),
        detail: format!("const {constant:.1e}, z {vertical:.1e}, r^2 ratio {ratio:.3}"),
    }
}

fn fixed_point(d: &Desk) -> Outcome {
    let r = &d.reference.residuals;
    let last = *r.last().unwrap();
    Outcome {
        pass: d.reference.converged && last < 1e-6 && r.len() <= 15 && r[1] < 0.1 && monotone_tail(r),
        detail: format!(
            "{} iterations, residual {last:.2e}, iteration-2 residual {:.4}, monotone tail {}",
            r.len(),
            r[1],
            monotone_tail(r)
        ),
    }
}

fn ip_constraint(d: &Desk) -> Outcome {
    let meas = d.case.measurements(&d.reference).unwrap();
    let inverse = problem(d)
        .reconstruct(
            &meas,
            &RegularizationConfig::with_epsilon(1e-2),
            &ReconstructionOptions::default(),
        )
        .map(|r| r.equilibrium.ip_errors)
        .unwrap_or_default();
    let forward = d.reference.ip_errors.iter().copied().fold(0.0, f64::max);
    let inv = inverse.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: !inverse.is_empty() && forward <= 1e-10 && inv <= 1e-10,
        detail: format!(
            "max error forward {forward:.1e} over {} updates, inverse {inv:.1e} over {} updates",
            d.reference.ip_errors.len(),
            inverse.len()
        ),
    }
}

fn noise_free(d: &Desk) -> Outcome {
    let meas = d.case.measurements(&d.reference).unwrap();
    let res = match problem(d).reconstruct(
        &meas,
        &RegularizationConfig::with_epsilon(1e-5),
        &ReconstructionOptions::default(),
    ) {
        Ok(r) => r,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("reconstruction failed: {e}"),
            }
        }
    };
    let e = identification_errors(d, &res);
    let ab = e.lambda_a.min(e.lambda_b_weighted);
    Outcome {
        pass: res.converged
            && e.lambda_a <= 0.1
            && e.lambda_b_weighted <= 0.1
            && e.j_mean <= 0.02
            && e.q <= 0.02
            && e.j_mean.max(e.q) < ab,
        detail: format!(
            "lambdaA {:.4}, lambdaB {:.4}, j {:.4}, q {:.4}",
            e.lambda_a, e.lambda_b_weighted, e.j_mean, e.q
        ),
    }
}

const STAT_EPSILONS: [f64; 3] = [1e-2, 1e-1, 1.0];

fn stats_config(internal: bool) -> StatsConfig {
    StatsConfig {
        n_replicates: 50,
        options: ReconstructionOptions {
            use_internal: internal,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn band_fraction(stats: &ProfileStats, reference: &[Option<f64>]) -> f64 {
    let (mut inside, mut total) = (0, 0);
    for (i, r) in reference.iter().enumerate() {
        if let Some(v) = r {
            total += 1;
            if (v - stats.mean[i]).abs() <= 2.0 * stats.std[i] {
                inside += 1;
            }
        }
    }
    inside as f64 / total.max(1) as f64
}

fn robust_observables(d: &Desk, stats: &[ReplicateStats]) -> Outcome {
    let truth = ProfileTable::compute(&d.case.mesh, &d.reference, &TableOptions::default()).unwrap();
    let mut pass = stats.len() == STAT_EPSILONS.len();
    let mut parts = Vec::new();
    for s in stats {
        let band_j = band_fraction(&s.j_mean, &truth.j_mean);
        let band_q = band_fraction(&s.q, &truth.q);
        let n = s.psibar.len();
        let smaller = (0..n).filter(|&i| s.j_mean.std[i] < s.lambda_a.std[i]).count() as f64 / n as f64;
        pass &= band_j >= 0.9 && band_q >= 0.9 && smaller >= 0.8;
        parts.push(format!(
            "eps {:.0e}: j band {band_j:.2}, q band {band_q:.2}, std j<A {smaller:.2}, {}/{} ok",
            s.epsilon, s.succeeded, s.requested
        ));
    }
    Outcome {
        pass,
        detail: parts.join("; "),
    }
}

fn inner_std(s: &ReplicateStats) -> f64 {
    let idx: Vec<usize> = (0..s.psibar.len()).filter(|&i| s.psibar[i] <= 0.5).collect();
    idx.iter().map(|&i| s.lambda_a.std[i]).sum::<f64>() / idx.len() as f64
}

fn internal_improvement(magnetic: &[ReplicateStats], internal: &[ReplicateStats]) -> Outcome {
    let mut pass = magnetic.len() == internal.len() && !magnetic.is_empty();
    let mut parts = Vec::new();
    for (m, i) in magnetic.iter().zip(internal) {
        let (sm, si) = (inner_std(m), inner_std(i));
        pass &= si < sm;
        parts.push(format!("eps {:.0e}: {sm:.3e} -> {si:.3e}", m.epsilon));
    }
    Outcome {
        pass,
        detail: format!("mean std of lambdaA on [0, 0.5] {}", parts.join("; ")),
    }
}

fn lcurves(d: &Desk) -> Outcome {
    let prob = problem(d);
    let clean = d.case.measurements(&d.reference).unwrap();
    let noisy = perturb(&clean, 0.01, replicate_seed(StatsConfig::default().master_seed, 0)).unwrap();
    let state = d.reference.flux_state().unwrap();
    let chords = d.case.build_chords().unwrap();
    let b_int = build_interferometry_matrix(&d.case.mesh, &chords, &prob.basis, &state.psibar, &state.domain);
    let weights = vec![prob.default_weights(&noisy).unwrap().w_inter(); chords.len()];
    let reg = RegularizationConfig::default();
    let ne = ne_lcurve(
        &b_int,
        &noisy.gammas(),
        &weights,
        reg.alpha_scale,
        prob.ne_penalty(),
        &log_grid(1e-6, 1e2, 33),
    )
    .unwrap();
    let ab = ab_lcurve(
        &prob,
        &noisy,
        &reg,
        &ReconstructionOptions::default(),
        &log_grid(1e-5, 1.0, 11),
    )
    .unwrap();
    let decades = (ne.corner_epsilon / 1e-2).log10().abs();
    let monotone = ne.arms_monotone(1e-9);
    Outcome {
        pass: decades <= 1.0 + 1e-9 && monotone && !ne.flat && ab.flat,
        detail: format!(
            "ne corner {:.3e} ({decades:.2} decades from 1e-2), arms monotone {monotone}, A/B flat {} ({} dropped)",
            ne.corner_epsilon,
            ab.flat,
            ab.dropped.len()
        ),
    }
}

fn identities(d: &Desk) -> Outcome {
    let state = d.reference.flux_state().unwrap();
    let contour = extract_contour(&d.case.mesh, &state.psibar, &state.domain, 0.5).unwrap();
    let avg = contour.average(|_| 3.7).unwrap();
    let avg_err = (avg - 3.7).abs() / 3.7;
    let table = ProfileTable::compute(&d.case.mesh, &d.reference, &TableOptions::default()).unwrap();
    let f_edge = *table.f.last().unwrap();
    let b0r0 = d.reference.params.b0 * d.reference.params.r0;
    let basis = problem(d).basis;
    let lam = basis.regularization_matrix().unwrap();
    let affine: Vec<f64> = basis.greville().iter().map(|g| 0.7 - 2.3 * g).collect();
    let annihilated = (&lam * nalgebra::DVector::from_column_slice(&affine)).amax() / lam.amax();
    let q1 = contour_safety_factor(&contour, b0r0).unwrap();
    let q2 = contour_safety_factor(&contour, 2.0 * b0r0).unwrap();
    let doubling = (q2 - 2.0 * q1).abs() / q1.abs();
    Outcome {
        pass: avg_err <= 1e-12 && f_edge == b0r0 && annihilated <= 1e-12 && doubling <= 1e-12,
        detail: format!(
            "<const> {avg_err:.1e}, f(1) - B0 r0 = {:e}, Lambda affine {annihilated:.1e}, q doubling {doubling:.1e}",
            f_edge - b0r0
        ),
    }
}

fn real_time(d: &Desk) -> Outcome {
    let prob = problem(d);
    let meas = d.case.measurements(&d.reference).unwrap();
    let reg = RegularizationConfig::with_epsilon(1e-2);
    let first = prob
        .reconstruct(&meas, &reg, &ReconstructionOptions::default())
        .unwrap();
    let second = next_slice(d);
    let opts = ReconstructionOptions {
        max_iter: 2,
        warm_start: Some(first.warm_start()),
        ..Default::default()
    };
    let clock = Instant::now();
    let res = prob.reconstruct(&second, &reg, &opts);
    let elapsed = clock.elapsed();
    match res {
        Ok(r) => {
            let last = *r.residuals.last().unwrap();
            Outcome {
                pass: r.iterations() == 2 && last <= 5e-3 && elapsed < Duration::from_secs(1),
                detail: format!(
                    "2 iterations, residual {last:.2e}, {:.0} ms",
                    elapsed.as_secs_f64() * 1e3
                ),
            }
        }
        Err(e) => Outcome {
            pass: false,
            detail: format!("warm-started slice failed: {e}"),
        },
    }
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let mut results = vec![report(1, "FEM correctness", secs(5), fem_correctness)];
    let mut built = None;
    results.push(report(2, "fixed-point convergence", secs(30), || {
        let d = desk();
        let out = fixed_point(&d);
        built = Some(d);
        out
    }));
    let d = built.expect("desk case");
    results.push(report(3, "Ip constraint", secs(60), || ip_constraint(&d)));
    results.push(report(4, "noise-free identification", secs(60), || noise_free(&d)));

    let clean = d.case.measurements(&d.reference).unwrap();
    let prob = problem(&d);
    let mut magnetic = Vec::new();
    results.push(report(
        5,
        "robust-observable statistics",
        secs(600),
        || match replicate_stats(&prob, &clean, &stats_config(false), &STAT_EPSILONS) {
            Ok(s) => {
                magnetic = s;
                robust_observables(&d, &magnetic)
            }
            Err(e) => Outcome {
                pass: false,
                detail: format!("replicates failed: {e}"),
            },
        },
    ));
    results.push(report(
        6,
        "internal-measurement improvement",
        secs(600),
        || match replicate_stats(&prob, &clean, &stats_config(true), &STAT_EPSILONS) {
            Ok(internal) => internal_improvement(&magnetic, &internal),
            Err(e) => Outcome {
                pass: false,
                detail: format!("replicates failed: {e}"),
            },
        },
    ));
    results.push(report(7, "L-curve", secs(120), || lcurves(&d)));
    results.push(report(8, "averaging identities", secs(10), || identities(&d)));
    results.push(report(9, "real-time regime", secs(10), || real_time(&d)));
    let passed = results.iter().filter(|&&p| p).count();
    let _ = writeln!(
        std::io::stdout().lock(),
        "acceptance: {passed}/{} criteria pass",
        results.len()
    );
}
