//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ifslab::diagnostics::{gap_margin, lyapunov_margin, robustness_probe};
use ifslab::measures::{fm_distance, fm_oracle, m1_epsilon_membership, random_tail_class_measure, tail_check, tail_check_with_slack};
use ifslab::perturbation::{plateau_limit_system, verify_density_construction, DensityOptions, PlateauSpec};
use ifslab::sampling::{backward_ensemble, diameter_stats, empirical_measure, forward_orbit, martingale_ensemble, BackwardOptions};
use ifslab::system::DEFAULT_BETA;
use ifslab::transfer::{fixed_point, perturbation_inequality_check, push_forward, tail_bound_certificate, FixedPointOptions};
use ifslab::{example_e1, GridMeasure, IfsSystem, IntervalMap};

const N: usize = 4096;

type Criterion = (&'static str, fn() -> Outcome);

/// Outcome of one criterion: named checks plus free-form notes.
#[derive(Default)]
struct Outcome {
    checks: Vec<(String, bool)>,
    notes: Vec<String>,
}

impl Outcome {
    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.1)
    }
}

fn e1_fixed_point(n_cells: usize, tol: f64) -> GridMeasure {
    let opts = FixedPointOptions {
        tol,
        max_iter: 10_000,
        n_cells,
        check_admissible: true,
    };
    let fp = fixed_point(&example_e1(), &opts).expect("E1 is admissible");
    assert!(fp.converged, "E1 fixed point did not converge at N = {n_cells}");
    fp.measure
}

fn criterion_1() -> Outcome {
    let mut out = Outcome::default();
    let start = Instant::now();
    let opts = FixedPointOptions {
        tol: 1e-6,
        max_iter: 10_000,
        n_cells: N,
        check_admissible: true,
    };
    let fp = fixed_point(&example_e1(), &opts).expect("E1 is admissible");
    let elapsed = start.elapsed();
    let cdf = fp.measure.cdf();
    let defect = (0..=N).map(|j| (cdf[j] + cdf[N - j] - 1.0).abs()).fold(0.0, f64::max);
    out.check("residual <= 1e-6", fp.converged && fp.residual <= 1e-6);
    out.check("iterations <= 1e4", fp.iterations <= 10_000);
    out.check("symmetry defect <= 1e-3", defect <= 1e-3);
    out.check("runtime < 30 s", elapsed < Duration::from_secs(30));
    out.note(format!(
        "residual {:e}, {} iterations, defect {:e}, {:.2?}",
        fp.residual, fp.iterations, defect, elapsed
    ));
    out
}

fn criterion_2() -> Outcome {
    let mut out = Outcome::default();
    let start = Instant::now();
    let e1 = example_e1();
    let mu = e1_fixed_point(N, 1e-6);
    let samples = backward_ensemble(&e1, &BackwardOptions::default(), 2024, 100_000).unwrap();
    let backward = empirical_measure(&samples, N).unwrap();
    let d_back = fm_distance(&backward, &mu).unwrap();
    let orbit = forward_orbit(&e1, 0.5, 101_000, 1_000, 2024, 0, N).unwrap();
    let d_fwd = fm_distance(&orbit.measure, &mu).unwrap();
    let elapsed = start.elapsed();
    out.check("backward fm <= 0.01", d_back <= 0.01);
    out.check("forward fm <= 0.02", d_fwd <= 0.02);
    out.check("runtime < 60 s", elapsed < Duration::from_secs(60));
    out.note(format!("backward {d_back:.2e}, forward {d_fwd:.2e}, {elapsed:.2?}"));
    out
}

fn random_atomic(rng: &mut ChaCha8Rng, n_cells: usize) -> GridMeasure {
    let count = rng.gen_range(1..=10);
    let raw: Vec<(f64, f64)> = (0..count).map(|_| (rng.gen::<f64>(), rng.gen::<f64>() + 1e-3)).collect();
    let total: f64 = raw.iter().map(|a| a.1).sum();
    let atoms: Vec<(f64, f64)> = raw.into_iter().map(|(x, w)| (x, w / total)).collect();
    GridMeasure::from_atoms(&atoms, n_cells).unwrap()
}

fn criterion_3() -> Outcome {
    let mut out = Outcome::default();
    let m = 1 << 12;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (a, b) = (random_atomic(&mut rng, 1024), random_atomic(&mut rng, 1024));
        let gap = (fm_distance(&a, &b).unwrap() - fm_oracle(&a, &b, m).unwrap()).abs();
        worst = worst.max(gap);
    }
    out.check("|fm - oracle| <= 2/m on 50 pairs", worst <= 2.0 / m as f64);
    out.note(format!("worst gap {worst:.2e}, bound {:.2e}", 2.0 / m as f64));
    out
}

fn criterion_4() -> Outcome {
    let mut out = Outcome::default();
    let e1 = example_e1();
    let cert = tail_bound_certificate(&e1).unwrap();
    let left = &cert.left;
    out.check("x0 = 0.1", left.x0 == 0.1);
    out.check(
        "lambda = (5, 5/9)",
        (left.lambdas[0] - 5.0).abs() < 1e-12 && (left.lambdas[1] - 5.0 / 9.0).abs() < 1e-12,
    );
    out.check("alpha = 0.5 feasible", (cert.alpha - 0.5).abs() < 1e-12 && cert.f_alpha < 1.0);
    out.check("F(0.5) = 0.8944 +- 1e-4", (cert.f_alpha - 0.8944).abs() <= 1e-4);
    out.check("M = 3.1623 +- 1e-4", (cert.m - 3.1623).abs() <= 1e-4);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let slack = 2.0 * cert.m / (N as f64).powf(cert.alpha);
    let (mut members, mut preserved) = (0, 0);
    for _ in 0..100 {
        let mu = random_tail_class_measure(&mut rng, N, cert.m, cert.alpha);
        if tail_check(&mu, cert.m, cert.alpha) {
            members += 1;
        }
        let pushed = push_forward(&e1, &mu).unwrap();
        if tail_check_with_slack(&pushed, cert.m, cert.alpha, slack) {
            preserved += 1;
        }
    }
    out.check("100 random members of N_{M,a}", members == 100);
    out.check("push_forward stays in N_{M,a} (slack 2M/N^a)", preserved == 100);
    out.note(format!(
        "x0={} lambdas={:?} alpha={} F_alpha={} M={}; {preserved}/100 preserved",
        left.x0, left.lambdas, cert.alpha, cert.f_alpha, cert.m
    ));
    out
}

fn random_pwl(rng: &mut ChaCha8Rng) -> IntervalMap {
    loop {
        let n = rng.gen_range(1..=3);
        let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(DEFAULT_BETA..1.0 - DEFAULT_BETA)).collect();
        let mut ys: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let mut knots = vec![(0.0, 0.0)];
        knots.extend(xs.into_iter().zip(ys));
        knots.push((1.0, 1.0));
        if let Ok(map) = IntervalMap::piecewise_linear(knots) {
            return map;
        }
    }
}

fn random_pwl_system(rng: &mut ChaCha8Rng, k: usize) -> IfsSystem {
    let maps = (0..k).map(|_| random_pwl(rng)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let head: f64 = probs[..k - 1].iter().sum();
    probs[k - 1] = 1.0 - head;
    IfsSystem::new(maps, probs, DEFAULT_BETA).unwrap()
}

fn criterion_5() -> Outcome {
    let mut out = Outcome::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let k = 2 + trial % 2;
        let s = random_pwl_system(&mut rng, k);
        let t = random_pwl_system(&mut rng, k);
        let (mu1, mu2) = (random_atomic(&mut rng, 512), random_atomic(&mut rng, 512));
        worst = worst.max(perturbation_inequality_check(&s, &t, &mu1, &mu2).unwrap());
    }
    out.check("ratio <= 1 + 1e-9 on 100 cases", worst <= 1.0 + 1e-9);
    out.note(format!("largest ratio {worst:.4}"));
    out
}

fn criterion_6() -> Outcome {
    let mut out = Outcome::default();
    let opts = BackwardOptions {
        tol: 1e-8,
        max_n: 100_000,
        ..BackwardOptions::default()
    };
    let stats = diameter_stats(&example_e1(), &opts, 6, 1000).unwrap();
    out.check("E1: 1000/1000 converge", stats.nonconverged_fraction == 0.0);
    let identity = IfsSystem::new(vec![IntervalMap::identity()], vec![1.0], DEFAULT_BETA).unwrap();
    let id_stats = diameter_stats(&identity, &opts, 6, 100).unwrap();
    out.check("identity: 100% nonconverged", id_stats.nonconverged_fraction == 1.0);
    out.note(format!(
        "median n_stop {:?}, p90 {:?}, p99 {:?}",
        stats.median, stats.p90, stats.p99
    ));
    out
}

fn criterion_7() -> Outcome {
    let mut out = Outcome::default();
    let mu = e1_fixed_point(N, 1e-6);
    let f: Vec<f64> = (0..=N).map(|j| j as f64 / N as f64).collect();
    let traces = martingale_ensemble(&example_e1(), &f, &mu, 100, 7, 1000).unwrap();
    for n in [5, 20, 100] {
        let diffs: Vec<f64> = traces.iter().map(|t| t[n - 1] - t[0]).collect();
        let count = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / count;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (count - 1.0);
        let se = (var / count).sqrt();
        out.check(format!("n={n}: |mean| <= 3 SE"), mean.abs() <= 3.0 * se);
        out.note(format!("n={n}: mean {mean:+.2e}, SE {se:.2e}"));
    }
    out
}

fn criterion_8() -> Outcome {
    let mut out = Outcome::default();
    let e1 = example_e1();
    let spec = PlateauSpec {
        map_index: 0,
        u: 0.45,
        v: 0.55,
        x0: e1.maps()[0].apply(0.5),
        epsilon: 0.25,
    };
    let s0 = plateau_limit_system(&e1, &spec).unwrap();
    let solve = FixedPointOptions {
        tol: 1e-9,
        max_iter: 100_000,
        n_cells: N,
        check_admissible: true,
    };
    let mut atoms = Vec::new();
    for n in [1 << 8, 1 << 9, 1 << 10, 1 << 11, 1 << 12, 1 << 13] {
        let fp = fixed_point(&s0, &FixedPointOptions { n_cells: n, ..solve })
            .unwrap()
            .require_converged()
            .unwrap();
        atoms.push((n, fp.measure.cell_mass_at(spec.x0)));
    }
    out.check("atom cell mass >= 0.05 at every N", atoms.iter().all(|&(_, a)| a >= 0.05));
    out.note(format!(
        "atom mass by N: {}",
        atoms.iter().map(|(n, a)| format!("{n}:{a:.5}")).collect::<Vec<_>>().join(" ")
    ));

    let report = verify_density_construction(
        &e1,
        &spec,
        &DensityOptions {
            solve,
            ..DensityOptions::default()
        },
    )
    .unwrap();
    out.check("d < 0.25 for all m", report.members.iter().all(|m| m.d_to_base < 0.25));
    let rates: Vec<f64> = report.members.iter().map(|m| m.rate_constant).collect();
    let (lo, hi) = rates.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    out.check("d0 * m bounded", hi.is_finite() && hi <= 2.0 * lo);
    out.check("fm(mu_m, mu_0) decreasing", report.fm_decreasing());
    let last = report.members.last().unwrap();
    let membership = m1_epsilon_membership(&last.measure, 0.1);
    out.check("mu_256 in M_1^0.1", last.m == 256 && membership.member);
    out.note(format!(
        "d: {}",
        report.members.iter().map(|m| format!("{:.4}", m.d_to_base)).collect::<Vec<_>>().join(" ")
    ));
    out.note(format!(
        "d0*m: {}",
        rates.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" ")
    ));
    out.note(format!(
        "fm(mu_m, mu_0): {}",
        report.members.iter().map(|m| format!("{:.2e}", m.fm_to_limit)).collect::<Vec<_>>().join(" ")
    ));
    out.note(format!(
        "mu_256: mass {:.4} on {} cells of {} (needs > 0.95)",
        membership.mass,
        membership.cells.len(),
        N
    ));
    out
}

fn criterion_9() -> Outcome {
    let mut out = Outcome::default();
    let e1 = example_e1();
    let delta0 = gap_margin(&e1, 10).unwrap();
    out.check("gap margin = 2/45 within 1e-9", (delta0 - 2.0 / 45.0).abs() <= 1e-9);
    let lyap = lyapunov_margin(&e1).unwrap();
    out.check("delta2 = 0.3409 within 1e-3", (lyap.delta2 - 0.3409).abs() <= 1e-3);
    let probe = robustness_probe(&e1, 100, 9, 1.0, 10).unwrap();
    out.check("100/100 jitters admissible", probe.admissible == 100 && !probe.calibration);
    out.note(format!(
        "delta0 {delta0}, delta2 {}, safe {}, probe radius {:.4}, max d {:.4}",
        lyap.delta2, lyap.safe, probe.radius, probe.max_distance
    ));
    out
}

fn criterion_10() -> Outcome {
    let mut out = Outcome::default();
    let tol = 1e-6;
    for n in [1 << 9, 1 << 10, 1 << 11] {
        let coarse = e1_fixed_point(n, tol);
        let fine = e1_fixed_point(2 * n, tol).resample(n);
        let d = fm_distance(&coarse, &fine).unwrap();
        out.check(format!("N={n}: fm <= 5 tol"), d <= 5.0 * tol);
        out.note(format!("N={n}: {d:.2e}"));
    }
    out
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("transfer fixed point (E1)", criterion_1),
        ("estimator agreement", criterion_2),
        ("FM oracle agreement", criterion_3),
        ("tail certificate (E1)", criterion_4),
        ("perturbation inequality", criterion_5),
        ("backward contraction", criterion_6),
        ("martingale property", criterion_7),
        ("plateau construction", criterion_8),
        ("margins", criterion_9),
        ("grid stability", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        match outcome {
            Ok(outcome) => {
                let verdict = if outcome.passed() { "PASS" } else { "FAIL" };
                println!("criterion {:>2} {verdict}: {name} ({elapsed:.1?})", i + 1);
                for (check, ok) in &outcome.checks {
                    println!("      [{}] {check}", if *ok { "ok" } else { "FAILED" });
                }
                for note in &outcome.notes {
                    println!("      {note}");
                }
                if !outcome.passed() {
                    failed += 1;
                }
            }
            Err(_) => {
                println!("criterion {:>2} FAIL: {name} (panicked)", i + 1);
                failed += 1;
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
