//! `ifslab` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O, parse or usage error, 2 system not
//! admissible (`check`), 3 solver did not converge (`solve`).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tempfile::NamedTempFile;

use ifslab::config::SystemConfig;
use ifslab::diagnostics::{self, DEFAULT_LADDER, DEFAULT_LEVELS};
use ifslab::measures::{fm_distance, DEFAULT_CELLS};
use ifslab::perturbation::{self, DensityOptions, PlateauSpec};
use ifslab::sampling::{self, BackwardOptions, DiameterStats};
use ifslab::system::{admissibility_check_with, CheckOptions};
use ifslab::transfer::{self, FixedPointOptions};
use ifslab::{format_f64, GridMeasure, IfsSystem};

const EXIT_ERROR: u8 = 1;
const EXIT_NOT_ADMISSIBLE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "ifslab", version, about = "Invariant measures of interval IFS")]
struct Cli {
    /// Worker threads for ensembles and ladders (default: all cores).
    #[arg(long, global = true, env = "IFSLAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check admissibility and report margins.
    Check {
        config: PathBuf,
        /// Grid for the gap condition on [1/(N+1), N/(N+1)].
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        /// The gap margin is taken over (1/n, 1 - 1/n).
        #[arg(long, default_value_t = 10)]
        margin_n: usize,
        /// Jitter trials for the robustness probe; 0 skips it.
        #[arg(long, default_value_t = 0)]
        probe: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve for the invariant measure on the grid.
    Solve {
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CELLS)]
        n_cells: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        /// Measure CSV (`x,cdf`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the invariant measure by forward orbit or backward iteration.
    Sample {
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Backward: independent trials. Forward: recorded orbit steps.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Forward burn-in steps.
        #[arg(long, default_value_t = 1000)]
        burn: usize,
        /// Backward stopping diameter.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_n: usize,
        #[arg(long, default_value_t = DEFAULT_CELLS)]
        n_cells: usize,
        /// Backward: per-trial CSV. Forward: measure CSV.
        #[arg(long)]
        out: PathBuf,
        /// Backward only: also write the empirical measure CSV.
        #[arg(long)]
        measure_out: Option<PathBuf>,
    },
    /// Fortet-Mourier distance between two measure CSVs.
    Fm { a: PathBuf, b: PathBuf },
    /// Power-tail certificate as key=value lines.
    Tailbound { config: PathBuf },
    /// Plateau construction and the perturbed family approaching it.
    Perturb {
        config: PathBuf,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        v: f64,
        /// Plateau height; defaults to the map's value at (u+v)/2.
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        map_index: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [4, 16, 64, 256])]
        m_ladder: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_CELLS)]
        n_cells: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Receives limit.json, gamma_m<m>.json and report.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Concentration profile along a refinement ladder.
    Singularity {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LADDER)]
        ladder: Vec<usize>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        /// Profile CSV (`N,q,L`); printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Forward,
    Backward,
}

fn load_system(path: &Path) -> Result<IfsSystem> {
    let config = SystemConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    config.to_system().with_context(|| format!("in {}", path.display()))
}

/// Write through a temp file in the target directory, then rename, so a
/// failed command never leaves a partial file behind.
fn write_atomic(path: &Path, write: impl FnOnce(&mut NamedTempFile) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    write(&mut tmp)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_measure(path: &Path, mu: &GridMeasure) -> Result<()> {
    write_atomic(path, |f| Ok(mu.write_csv(f)?))
}

fn opt<T: std::fmt::Display>(value: Option<T>) -> String {
    value.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn cmd_check(config: &Path, grid: usize, margin_n: usize, probe: usize, seed: u64) -> Result<u8> {
    let sys = load_system(config)?;
    let report = admissibility_check_with(
        &sys,
        &CheckOptions {
            grid_n: grid,
            margin_n,
            ..CheckOptions::default()
        },
    )?;
    let admissible = report.admissible();
    println!("admissible={admissible}");
    println!("condition1_margin={}", format_f64(report.condition1_margin));
    println!("lyap0={}", format_f64(report.lyap0));
    println!("lyap1={}", format_f64(report.lyap1));
    println!("probs_positive={}", report.probs_positive);
    println!("delta0={}", opt(report.delta0));
    println!("delta2={}", opt(report.delta2));
    if let Some(cf) = &report.ratio_cf {
        let terms: Vec<String> = cf.terms.iter().map(u64::to_string).collect();
        println!("log_ratio={}", format_f64(cf.ratio));
        println!("log_ratio_cf={}", terms.join(","));
        println!("log_ratio_resonant={}", cf.resonant);
    }
    println!("coverage={}", sampling::orbit_coverage(&sys, 100, 100_000, seed));
    if probe > 0 && admissible {
        let p = diagnostics::robustness_probe(&sys, probe, seed, 1.0, margin_n)?;
        println!("probe_radius={}", format_f64(p.radius));
        println!("probe_admissible={}/{}", p.admissible, p.trials);
        println!("probe_passed={}", p.passed());
    }
    Ok(if admissible { 0 } else { EXIT_NOT_ADMISSIBLE })
}

fn cmd_solve(config: &Path, n_cells: usize, tol: f64, max_iter: usize, out: Option<&Path>) -> Result<u8> {
    let sys = load_system(config)?;
    let opts = FixedPointOptions {
        tol,
        max_iter,
        n_cells,
        check_admissible: true,
    };
    let fp = transfer::fixed_point(&sys, &opts)?;
    println!("converged={}", fp.converged);
    println!("residual={}", format_f64(fp.residual));
    println!("iterations={}", fp.iterations);
    println!("endpoint_mass={}", format_f64(fp.endpoint_mass));
    println!("leakage={}", fp.leakage);
    if !fp.converged {
        return Ok(EXIT_NOT_CONVERGED);
    }
    if let Some(path) = out {
        write_measure(path, &fp.measure)?;
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    config: &Path,
    mode: Mode,
    trials: usize,
    seed: u64,
    burn: usize,
    backward: BackwardOptions,
    n_cells: usize,
    out: &Path,
    measure_out: Option<&Path>,
) -> Result<u8> {
    let sys = load_system(config)?;
    match mode {
        Mode::Forward => {
            let run = sampling::forward_orbit(&sys, 0.5, burn + trials, burn, seed, 0, n_cells)?;
            write_measure(out, &run.measure)?;
            println!("steps={trials}");
            println!("burn={burn}");
            println!("mean={}", run.measure.mean());
        }
        Mode::Backward => {
            let samples = sampling::backward_ensemble(&sys, &backward, seed, trials)?;
            write_atomic(out, |f| Ok(sampling::write_samples_csv(&samples, f)?))?;
            let stats = DiameterStats::from_samples(&samples);
            println!("trials={}", stats.trials);
            println!("median_n_stop={}", opt(stats.median));
            println!("p90_n_stop={}", opt(stats.p90));
            println!("p99_n_stop={}", opt(stats.p99));
            println!("nonconverged_fraction={}", format_f64(stats.nonconverged_fraction));
            if let Some(path) = measure_out {
                write_measure(path, &sampling::empirical_measure(&samples, n_cells)?)?;
            }
        }
    }
    Ok(0)
}

fn cmd_fm(a: &Path, b: &Path) -> Result<u8> {
    let read = |p: &Path| GridMeasure::read_csv_file(p).with_context(|| format!("reading {}", p.display()));
    println!("{}", format_f64(fm_distance(&read(a)?, &read(b)?)?));
    Ok(0)
}

fn cmd_tailbound(config: &Path) -> Result<u8> {
    let sys = load_system(config)?;
    print!("{}", transfer::tail_bound_certificate(&sys)?.to_key_values());
    Ok(0)
}

fn cmd_perturb(config: &Path, spec: PlateauSpec, ladder: Vec<usize>, n_cells: usize, seed: u64, out_dir: &Path) -> Result<u8> {
    let sys = load_system(config)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let save = |name: String, s: &IfsSystem| -> Result<()> {
        let json = SystemConfig::from_system(s).to_json()?;
        write_atomic(&out_dir.join(name), |f| Ok(f.write_all(json.as_bytes())?))
    };

    let opts = DensityOptions {
        ladder,
        solve: FixedPointOptions {
            n_cells,
            ..DensityOptions::default().solve
        },
        seed,
        ..DensityOptions::default()
    };
    let report = perturbation::verify_density_construction(&sys, &spec, &opts)?;
    save("limit.json".into(), &report.limit)?;
    for m in &opts.ladder {
        save(format!("gamma_m{m}.json"), &perturbation::perturbed_family(&sys, &spec, *m)?.system)?;
    }

    let mut csv = String::from("m,d,d0,d0_times_m,lyap0,lyap1,fm_to_limit,residual,certificate_holds\n");
    for r in &report.members {
        let reals = [r.d_to_base, r.d0_to_limit, r.rate_constant, r.lyap0, r.lyap1, r.fm_to_limit, r.residual];
        let reals: Vec<String> = reals.into_iter().map(format_f64).collect();
        csv.push_str(&format!("{},{},{}\n", r.m, reals.join(","), r.certificate_holds));
    }
    write_atomic(&out_dir.join("report.csv"), |f| Ok(f.write_all(csv.as_bytes())?))?;

    println!("x0={}", spec.x0);
    println!("atom_mass={}", format_f64(report.atom_mass));
    println!("fm_decreasing={}", report.fm_decreasing());
    println!("certificate_shared={}", report.certificate_shared());
    println!("max_d0_times_m={}", format_f64(report.max_rate_constant()));
    Ok(0)
}

fn cmd_singularity(config: &Path, ladder: &[usize], tol: f64, max_iter: usize, out: Option<&Path>) -> Result<u8> {
    let sys = load_system(config)?;
    let opts = FixedPointOptions {
        tol,
        max_iter,
        ..FixedPointOptions::default()
    };
    let report = diagnostics::singularity_report(&sys, ladder, &DEFAULT_LEVELS, &opts)?;
    match out {
        Some(path) => {
            write_atomic(path, |f| Ok(report.write_csv(f)?))?;
            print!("{report}");
        }
        None => report.write_csv(io::stdout().lock())?,
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Check {
            config,
            grid,
            margin_n,
            probe,
            seed,
        } => cmd_check(&config, grid, margin_n, probe, seed),
        Command::Solve {
            config,
            n_cells,
            tol,
            max_iter,
            out,
        } => cmd_solve(&config, n_cells, tol, max_iter, out.as_deref()),
        Command::Sample {
            config,
            mode,
            trials,
            seed,
            burn,
            tol,
            max_n,
            n_cells,
            out,
            measure_out,
        } => {
            let backward = BackwardOptions {
                tol,
                max_n,
                ..BackwardOptions::default()
            };
            cmd_sample(&config, mode, trials, seed, burn, backward, n_cells, &out, measure_out.as_deref())
        }
        Command::Fm { a, b } => cmd_fm(&a, &b),
        Command::Tailbound { config } => cmd_tailbound(&config),
        Command::Perturb {
            config,
            u,
            v,
            x0,
            eps,
            map_index,
            m_ladder,
            n_cells,
            seed,
            out_dir,
        } => {
            let x0 = match x0 {
                Some(x0) => x0,
                None => {
                    let sys = load_system(&config)?;
                    let Some(map) = sys.maps().get(map_index) else {
                        bail!("--map-index {map_index} out of range for {} maps", sys.k());
                    };
                    map.apply(0.5 * (u + v))
                }
            };
            let spec = PlateauSpec {
                map_index,
                u,
                v,
                x0,
                epsilon: eps,
            };
            cmd_perturb(&config, spec, m_ladder, n_cells, seed, &out_dir)
        }
        Command::Singularity {
            config,
            ladder,
            tol,
            max_iter,
            out,
        } => cmd_singularity(&config, &ladder, tol, max_iter, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
