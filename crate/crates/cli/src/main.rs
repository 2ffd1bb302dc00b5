use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crt_power::em::{em_fit, wald_decision, EmOptions};
use crt_power::power::{power_grid, GridAxis};
use crt_power::scenario::{Scenario, SolveFor};
use crt_power::sim::{empirical_power, type_i_error, TrialDataset};
use crt_power::types::TestSpec;

#[derive(Parser)]
#[command(name = "crtpower", version, about = "Power, sample size and simulation for cluster randomized trials with co-primary endpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic power of the scenario's design.
    Power(Common),
    /// Smallest number of clusters (or mean cluster size) reaching the target power.
    Samplesize {
        #[command(flatten)]
        common: Common,
        /// Quantity to solve for; defaults to the scenario's solver block.
        #[arg(long, value_enum)]
        solve: Option<SolveArg>,
        /// Target power; defaults to the scenario's solver block (0.8).
        #[arg(long)]
        target: Option<f64>,
    },
    /// Empirical power (or type I error) by simulating and fitting trials.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Zero the first effect to estimate the type I error.
        #[arg(long)]
        null: bool,
    },
    /// Fit the mixed model to a trial CSV (cluster_id, arm, y1..yK).
    Fit {
        /// Trial dataset.
        #[arg(long)]
        data: PathBuf,
        /// Also report the decision of this test.
        #[arg(long, value_enum)]
        test: Option<TestArg>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 5000)]
        max_iter: usize,
        /// Machine-readable output path ("-" for standard output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Power over a grid of ICC values.
    Contour {
        #[command(flatten)]
        common: Common,
        /// Axis such as `rho0[1,2.4]=0.01:0.09:9`, `rho1_ratio=0.1:1.5:15`, `rho2=0.4,0.79`.
        #[arg(long, required = true)]
        axis: Vec<GridAxis>,
    },
    /// Write one simulated trial of the scenario as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Replicate index (random stream) within the seed.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's test.
    #[arg(long, value_enum)]
    test: Option<TestArg>,
    /// Machine-readable output path ("-" for standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Omnibus,
    Homogeneity,
    Iu,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveArg {
    N,
    M,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl Common {
    fn load(&self) -> Result<Scenario> {
        let s = Scenario::from_path(&self.scenario)
            .with_context(|| format!("reading scenario {}", self.scenario.display()))?;
        let test = match self.test {
            None => return Ok(s),
            Some(TestArg::Omnibus) => TestSpec::Omnibus,
            Some(TestArg::Homogeneity) => TestSpec::Homogeneity,
            Some(TestArg::Iu) => TestSpec::IntersectionUnion,
            Some(TestArg::Custom) => match &s.test {
                t @ TestSpec::Custom { .. } => t.clone(),
                _ => bail!(crt_power::Error::Invalid(
                    "--test custom needs a custom contrast in the scenario's test block".into()
                )),
            },
        };
        Ok(s.with_test(test)?)
    }

    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }
}

/// Machine output goes to `out` ("-" meaning standard output); without an
/// `out` path only the summary is printed.
fn emit(out: Option<&Path>, summary: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(p) if p == Path::new("-") => {
            eprintln!("{summary}");
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
        Some(p) => {
            println!("{summary}");
            let mut f = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            write(&mut f)?;
            f.flush()?;
        }
        None => println!("{summary}"),
    }
    Ok(())
}

fn write_json(w: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Power(common) => {
            let s = common.load()?;
            let r = s.power()?;
            let mc = r.mc_error.map(|e| format!(" (±{e:.1e})")).unwrap_or_default();
            let summary = format!("{} test, n = {}: power {:.4}{mc}", s.test.name(), r.n, r.power);
            emit(common.out.as_deref(), &summary, |w| match common.format(Format::Json) {
                Format::Json => write_json(w, &json!({ "scenario": s, "icc": s.icc, "result": r })),
                Format::Csv => {
                    writeln!(w, "test,n,power,noncentrality,mc_error")?;
                    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    writeln!(w, "{},{},{},{},{}", s.test.name(), r.n, r.power, opt(r.noncentrality), opt(r.mc_error))?;
                    Ok(())
                }
            })?;
        }
        Command::Samplesize { common, solve, target } => {
            let mut s = common.load()?;
            if let Some(t) = target {
                s.solver.target_power = t;
            }
            let what = match solve {
                Some(SolveArg::N) => SolveFor::N,
                Some(SolveArg::M) => SolveFor::M,
                None => s.solver.solve_for,
            };
            let sol = s.solve(what)?;
            let name = match what {
                SolveFor::N => "n",
                SolveFor::M => "m_bar",
            };
            let below = sol.power_below.map(|p| format!(", {p:.4} one step below")).unwrap_or_default();
            let summary = format!(
                "{} test: {name} = {} (power {:.4}{below}; target {})",
                s.test.name(),
                sol.value,
                sol.power.power,
                s.solver.target_power
            );
            emit(common.out.as_deref(), &summary, |w| match common.format(Format::Json) {
                Format::Json => write_json(w, &json!({ "scenario": s, "icc": s.icc, "solve_for": name, "solution": sol })),
                Format::Csv => {
                    writeln!(w, "test,solve_for,value,power,power_below")?;
                    let below = sol.power_below.map(|p| p.to_string()).unwrap_or_default();
                    writeln!(w, "{},{name},{},{},{below}", s.test.name(), sol.value, sol.power.power)?;
                    Ok(())
                }
            })?;
        }
        Command::Simulate { common, reps, seed, null } => {
            let s = common.load()?;
            let spec = s.simulation_spec()?;
            let reps = reps.unwrap_or(s.simulation.reps);
            let seed = seed.unwrap_or(s.simulation.seed);
            let report = if null {
                type_i_error(&spec, reps, seed)?
            } else {
                empirical_power(&spec, reps, seed)?
            };
            let summary = format!(
                "{} test, {} replicates ({} analysed, {} not converged, {} failed): {} {:.4} ± {:.4}",
                report.test,
                report.replicates,
                report.analysed,
                report.non_converged,
                report.failed,
                if null { "type I error" } else { "empirical power" },
                report.empirical_power,
                report.mc_se
            );
            emit(common.out.as_deref(), &summary, |w| match common.format(Format::Json) {
                Format::Json => write_json(w, &json!({ "scenario": s, "icc": s.icc, "report": report })),
                Format::Csv => Ok(report.write_outcomes_csv(w)?),
            })?;
        }
        Command::Fit { data, test, alpha, tol, max_iter, out } => {
            let file = File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let dataset = TrialDataset::read_csv(file).with_context(|| format!("reading {}", data.display()))?;
            let fit = em_fit(&dataset, &EmOptions { tol, max_iter }, None)?;
            let decision = match test {
                None => None,
                Some(TestArg::Omnibus) => Some(wald_decision(&fit, &TestSpec::Omnibus, alpha)?),
                Some(TestArg::Homogeneity) => Some(wald_decision(&fit, &TestSpec::Homogeneity, alpha)?),
                Some(TestArg::Iu) => Some(wald_decision(&fit, &TestSpec::IntersectionUnion, alpha)?),
                Some(TestArg::Custom) => bail!(crt_power::Error::Invalid("fit supports omnibus, homogeneity and iu".into())),
            };
            let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
            let mut summary = format!(
                "K = {}, {} clusters: beta = ({}), se = ({}), loglik {:.4}, {} iterations{}",
                fit.k,
                fit.n_clusters,
                fmt(&fit.beta_hat),
                fmt(&fit.se_beta),
                fit.loglik,
                fit.iterations,
                if fit.converged { "" } else { " (not converged)" }
            );
            if let Some(d) = &decision {
                summary.push_str(&format!("\nreject: {}", d.reject));
            }
            emit(out.as_deref(), &summary, |w| write_json(w, &json!({ "fit": fit, "decision": decision })))?;
            if !fit.converged {
                eprintln!("error: EM did not converge within {max_iter} iterations");
                return Ok(ExitCode::from(3));
            }
        }
        Command::Contour { common, axis } => {
            let s = common.load()?;
            let grid = power_grid(&s.icc, &s.design()?, &s.effect.beta, &s.test, &axis, &s.numerics.iu_options())?;
            let powers: Vec<f64> = grid.feasible_powers().collect();
            let lo = powers.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = powers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let summary = format!(
                "{} test, n = {}: {} cells ({} infeasible), power range [{lo:.4}, {hi:.4}]",
                grid.test,
                grid.n,
                grid.cells.len(),
                grid.cells.len() - powers.len()
            );
            emit(common.out.as_deref(), &summary, |w| match common.format(Format::Csv) {
                Format::Csv => Ok(grid.write_csv(w)?),
                Format::Json => write_json(w, &json!({ "scenario": s, "icc": s.icc, "grid": grid })),
            })?;
        }
        Command::Generate { common, seed, replicate } => {
            let s = common.load()?;
            let data = s
                .simulation_spec()?
                .generate(seed.unwrap_or(s.simulation.seed), replicate)?;
            let summary = format!("{} clusters, {} subjects, K = {}", data.n_clusters(), data.n_subjects(), data.k());
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("-"));
            emit(Some(&out), &summary, |w| Ok(data.write_csv(w)?))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .find_map(|c| c.downcast_ref::<crt_power::Error>())
                .is_some_and(|e| e.is_numerical());
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}
