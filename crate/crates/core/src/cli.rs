//! The `teamfield` command line.
//!
//! Exit codes: 0 on success, 1 on usage or validation failure, 2 on budget
//! or convergence failure (outputs are still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dynamic::{
    cluster_dynamic_hits, dynamic_epsilon_estimate, dynamic_exact_feasible,
    dynamic_grid_fixed_point_search, simulate_finite_n, solve_dynamic_mf_fixed_point,
    DynEpsilonOptions, DynTeamPolicy, DynamicMFEquilibrium, StagePolicy,
};
use crate::error::{Error, Result};
use crate::finite_n::{
    epsilon_monte_carlo, epsilon_ne_certify, exact_feasible, mc_cost, sizes_with_ratio,
    sweep_team_sizes, FiniteGameInstance, SweepOptions,
};
use crate::fixed_point::{InitPolicy, SolverConfig};
use crate::mf_static::{
    cluster_hits, grid_fixed_point_search, solve_mf_fixed_point, MFEquilibrium,
};
use crate::output::{
    cost_csv, epsilon_csv, json_document, render_json, write_output, EpsilonRow, SCHEMA,
};
use crate::policy::TeamPolicy;
use crate::spec::{load_spec, DynamicGameSpec, GameSpec, StaticGameSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;

/// Environment variable capping the worker count (0 or unset = automatic).
pub const THREADS_ENV: &str = "TEAMFIELD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "teamfield",
    version,
    about = "Solve and certify two-team mean-field games"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Game spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Proceed even if validation reports issues.
    #[arg(long)]
    pub force: bool,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Weight of the new response in each damped update.
    #[arg(long, default_value_t = 0.5)]
    pub damping: f64,
    /// Convergence tolerance on best-response gaps and consistency.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Iteration budget; exit code 2 when exhausted.
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    /// Initial softmax temperature (0 = exact best responses).
    #[arg(long, default_value_t = 1.0)]
    pub smooth_init: f64,
    /// Temperature multiplier applied each time the smoothed iteration settles.
    #[arg(long, default_value_t = 0.5)]
    pub anneal: f64,
    /// Temperatures below this become exact best responses.
    #[arg(long, default_value_t = 1e-8)]
    pub min_temperature: f64,
    /// Random initial kernels from this seed (uniform kernels when omitted).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from the kernel mapping every observation to this action.
    #[arg(long, conflicts_with = "seed")]
    pub init_action: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let init = match (self.seed, self.init_action) {
            (Some(s), _) => InitPolicy::Random(s),
            (None, Some(a)) => InitPolicy::Action(a),
            (None, None) => InitPolicy::Uniform,
        };
        SolverConfig {
            damping: self.damping,
            tol: self.tol,
            max_iters: self.max_iters,
            smoothing: self.smooth_init,
            anneal: self.anneal,
            min_temperature: self.min_temperature,
            init,
        }
    }
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Episodes per Monte Carlo evaluation (>= 100).
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    /// Seed of Monte Carlo runs; required whenever one is needed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid steps per kernel row for symmetric Monte Carlo deviations.
    #[arg(long, default_value_t = 10)]
    pub grid_steps: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a spec and print the report.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve a static mean-field equilibrium.
    SolveMf {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Solve a dynamic mean-field equilibrium.
    SolveMfDyn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Epsilon-Nash certificate of a team-policy profile at fixed team sizes.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Policy file: {"policies": [team1, team2]}.
        #[arg(long)]
        policy: PathBuf,
        /// Team sizes: one value for equal sizes, or N1 N2.
        #[arg(long, num_args = 1..=2, required = true)]
        n: Vec<usize>,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Certify mean-field kernels deployed at a list of team sizes.
    SweepN {
        #[command(flatten)]
        common: Common,
        /// Output of solve-mf.
        #[arg(long)]
        mfeq: PathBuf,
        /// Comma-separated sizes N (team 2 gets ratio * N); may be empty.
        #[arg(long, default_value = "")]
        ns: String,
        /// Team 2 size as a multiple of team 1 size.
        #[arg(long, default_value_t = 1)]
        ratio: usize,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Monte Carlo simulation of the finite-N game.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy file: {"policies": [team1, team2]}.
        #[arg(long, conflicts_with = "mfeq")]
        policy: Option<PathBuf>,
        /// Output of solve-mf or solve-mf-dyn.
        #[arg(long)]
        mfeq: Option<PathBuf>,
        /// Team sizes: one value for equal sizes, or N1 N2.
        #[arg(long, num_args = 1..=2, required = true)]
        n: Vec<usize>,
        /// Episodes to simulate (>= 100).
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// Seed of the simulation.
        #[arg(long)]
        seed: u64,
    },
    /// Epsilon-Nash estimate of dynamic stage policies at fixed team sizes.
    EpsDyn {
        #[command(flatten)]
        common: Common,
        /// Policy file: {"policies": [stages1, stages2]}.
        #[arg(long, conflicts_with = "mfeq")]
        policy: Option<PathBuf>,
        /// Output of solve-mf-dyn.
        #[arg(long)]
        mfeq: Option<PathBuf>,
        /// Team sizes: one value for equal sizes, or N1 N2.
        #[arg(long, num_args = 1..=2, required = true)]
        n: Vec<usize>,
        /// Require exact enumeration (budget failure otherwise).
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        mc: McArgs,
    },
    /// Exhaustive grid search for approximate mean-field fixed points.
    GridSearch {
        #[command(flatten)]
        common: Common,
        /// Grid resolution in (0, 0.1].
        #[arg(long, default_value_t = 0.01)]
        resolution: f64,
        /// Report every hit instead of one representative per cluster.
        #[arg(long)]
        all: bool,
        /// Linkage distance of clusters (default: twice the resolution).
        #[arg(long)]
        radius: Option<f64>,
    },
}

/// Policy file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile<T> {
    pub policies: [T; 2],
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn team_sizes(n: &[usize]) -> Result<[usize; 2]> {
    let sizes = match n {
        [a] => [*a, *a],
        [a, b] => [*a, *b],
        _ => return Err(Error::InvalidConfig("--n takes one or two sizes".into())),
    };
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig("team sizes must be >= 1".into()));
    }
    Ok(sizes)
}

fn parse_ns(ns: &str) -> Result<Vec<usize>> {
    ns.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::InvalidConfig(format!("invalid team size '{s}' in --ns")))
        })
        .collect()
}

fn need_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::InvalidConfig(format!("--seed is required for Monte Carlo {what}")))
}

fn load_static(common: &Common) -> Result<StaticGameSpec> {
    match load_spec(&common.spec, common.force)?.0 {
        GameSpec::Static(s) => Ok(s),
        GameSpec::Dynamic(_) => Err(Error::InvalidConfig(format!(
            "{}: command needs a static spec",
            common.spec.display()
        ))),
    }
}

fn load_dynamic(common: &Common) -> Result<DynamicGameSpec> {
    match load_spec(&common.spec, common.force)?.0 {
        GameSpec::Dynamic(d) => Ok(d),
        GameSpec::Static(_) => Err(Error::InvalidConfig(format!(
            "{}: command needs a dynamic spec",
            common.spec.display()
        ))),
    }
}

fn check_format(format: Option<Format>, default: Format, allowed: &[Format]) -> Result<Format> {
    let f = format.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(Error::InvalidConfig(format!(
            "format {f:?} is not available for this command"
        )))
    }
}

/// What a command produced: the artifact text, a summary line, and whether
/// it counts as a convergence failure.
struct Outcome {
    text: String,
    summary: String,
    failed: bool,
}

fn ok(text: String, summary: String) -> Result<Outcome> {
    Ok(Outcome {
        text,
        summary,
        failed: false,
    })
}

fn fmt_pair(x: [f64; 2]) -> String {
    format!("({:.3e}, {:.3e})", x[0], x[1])
}

fn static_policies(policy: &Option<PathBuf>, mfeq: &Option<PathBuf>) -> Result<[TeamPolicy; 2]> {
    match (policy, mfeq) {
        (Some(p), _) => Ok(read_json::<PolicyFile<TeamPolicy>>(p)?.policies),
        (None, Some(m)) => {
            let eq: MFEquilibrium = read_json(m)?;
            let [a, b] = eq.policies;
            Ok([TeamPolicy::symmetric(a), TeamPolicy::symmetric(b)])
        }
        (None, None) => Err(Error::InvalidConfig(
            "one of --policy or --mfeq is required".into(),
        )),
    }
}

fn dynamic_policies(policy: &Option<PathBuf>, mfeq: &Option<PathBuf>) -> Result<[StagePolicy; 2]> {
    match (policy, mfeq) {
        (Some(p), _) => Ok(read_json::<PolicyFile<StagePolicy>>(p)?.policies),
        (None, Some(m)) => Ok(read_json::<DynamicMFEquilibrium>(m)?.policies),
        (None, None) => Err(Error::InvalidConfig(
            "one of --policy or --mfeq is required".into(),
        )),
    }
}

fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Validate { common } => {
            let format = check_format(common.format, Format::Json, &[Format::Json])?;
            let text =
                std::fs::read_to_string(&common.spec).map_err(|e| Error::io(&common.spec, e))?;
            let spec = GameSpec::from_json_str(&text, &common.spec)?;
            let report = spec.validate();
            let _ = format;
            let mut doc = serde_json::Map::new();
            doc.insert("schema".into(), SCHEMA.into());
            doc.insert("kind".into(), "validation-report".into());
            doc.insert("valid".into(), report.is_valid().into());
            doc.insert("issues".into(), serde_json::to_value(&report.issues)?);
            doc.insert(
                "cost_bounds".into(),
                serde_json::to_value(&report.cost_bounds)?,
            );
            let summary = if report.is_valid() {
                format!("{}: valid", common.spec.display())
            } else {
                format!(
                    "{}: {} issue(s)\n{report}",
                    common.spec.display(),
                    report.issues.len()
                )
            };
            Ok(Outcome {
                text: render_json(&serde_json::Value::Object(doc)),
                summary: summary.trim_end().to_string(),
                failed: !report.is_valid(),
            })
        }
        Command::SolveMf { common, solver } => {
            check_format(common.format, Format::Json, &[Format::Json])?;
            let spec = load_static(common)?;
            let eq = solve_mf_fixed_point(&spec, &solver.config())?;
            Ok(Outcome {
                text: json_document("mf-equilibrium", &eq)?,
                summary: format!(
                    "solve-mf: converged={} iterations={} br_residual={} consistency_residual={}",
                    eq.converged,
                    eq.iterations,
                    fmt_pair(eq.br_residual),
                    fmt_pair(eq.consistency_residual)
                ),
                failed: !eq.converged,
            })
        }
        Command::SolveMfDyn { common, solver } => {
            check_format(common.format, Format::Json, &[Format::Json])?;
            let spec = load_dynamic(common)?;
            let eq = solve_dynamic_mf_fixed_point(&spec, &solver.config())?;
            Ok(Outcome {
                text: json_document("dynamic-mf-equilibrium", &eq)?,
                summary: format!(
                    "solve-mf-dyn: converged={} iterations={} br_residual={} consistency_residual={:.3e}",
                    eq.converged,
                    eq.iterations,
                    fmt_pair(eq.br_residual),
                    eq.consistency_residual
                ),
                failed: !eq.converged,
            })
        }
        Command::Certify {
            common,
            policy,
            n,
            mc,
        } => {
            let format = check_format(common.format, Format::Csv, &[Format::Csv, Format::Json])?;
            let spec = load_static(common)?;
            let sizes = team_sizes(n)?;
            let [p1, p2] = read_json::<PolicyFile<TeamPolicy>>(policy)?.policies;
            let inst = FiniteGameInstance::new(spec, sizes)?;
            let report = if exact_feasible(&inst, [&p1, &p2]) {
                epsilon_ne_certify(&inst, &p1, &p2)?
            } else {
                let opts = SweepOptions {
                    reps: mc.reps,
                    seed: need_seed(mc.seed, "certification")?,
                    grid_steps: mc.grid_steps,
                };
                epsilon_monte_carlo(&inst, &p1, &p2, &opts)?
            };
            let text = match format {
                Format::Csv => epsilon_csv(&[EpsilonRow::from(&report)])?,
                Format::Json => json_document("epsilon-report", &report)?,
            };
            ok(
                text,
                format!(
                    "certify: N=({}, {}) eps={} method={}",
                    sizes[0],
                    sizes[1],
                    fmt_pair(report.eps),
                    report.method.as_str()
                ),
            )
        }
        Command::SweepN {
            common,
            mfeq,
            ns,
            ratio,
            mc,
        } => {
            let format = check_format(common.format, Format::Csv, &[Format::Csv, Format::Json])?;
            let spec = load_static(common)?;
            let eq: MFEquilibrium = read_json(mfeq)?;
            if *ratio == 0 {
                return Err(Error::InvalidConfig("--ratio must be >= 1".into()));
            }
            let sizes = sizes_with_ratio(&parse_ns(ns)?, *ratio);
            let p = [0, 1].map(|i| TeamPolicy::symmetric(eq.policies[i].clone()));
            let mut seed = mc.seed.unwrap_or(0);
            for &s in &sizes {
                let inst = FiniteGameInstance::new(spec.clone(), s)?;
                if !exact_feasible(&inst, [&p[0], &p[1]]) {
                    seed = need_seed(mc.seed, "certification")?;
                }
            }
            let opts = SweepOptions {
                reps: mc.reps,
                seed,
                grid_steps: mc.grid_steps,
            };
            let reports = sweep_team_sizes(&spec, &eq.policies, &sizes, &opts)?;
            let text = match format {
                Format::Csv => {
                    epsilon_csv(&reports.iter().map(EpsilonRow::from).collect::<Vec<_>>())?
                }
                Format::Json => json_document("epsilon-sweep", &reports)?,
            };
            ok(
                text,
                format!("sweep-n: {} team size(s) certified", reports.len()),
            )
        }
        Command::Simulate {
            common,
            policy,
            mfeq,
            n,
            reps,
            seed,
        } => {
            let format = check_format(common.format, Format::Json, &[Format::Json, Format::Csv])?;
            let sizes = team_sizes(n)?;
            match load_spec(&common.spec, common.force)?.0 {
                GameSpec::Static(spec) => {
                    let [p1, p2] = static_policies(policy, mfeq)?;
                    let inst = FiniteGameInstance::new(spec, sizes)?;
                    let est = [0, 1]
                        .map(|i| mc_cost(&inst, &p1, &p2, i, *reps, *seed))
                        .into_iter()
                        .collect::<Result<Vec<_>>>()?;
                    let rows: Vec<_> = est
                        .iter()
                        .enumerate()
                        .map(|(i, e)| (i + 1, e.estimate, e.ci_halfwidth, e.reps))
                        .collect();
                    let text = match format {
                        Format::Csv => cost_csv(&rows)?,
                        Format::Json => {
                            #[derive(Serialize)]
                            struct StaticSimulation<'a> {
                                team_sizes: [usize; 2],
                                cost: &'a [crate::finite_n::McEstimate],
                            }
                            json_document(
                                "static-simulation",
                                &StaticSimulation {
                                    team_sizes: sizes,
                                    cost: &est,
                                },
                            )?
                        }
                    };
                    ok(
                        text,
                        format!(
                            "simulate: cost=({:.6}, {:.6})",
                            est[0].estimate, est[1].estimate
                        ),
                    )
                }
                GameSpec::Dynamic(spec) => {
                    let pols = dynamic_policies(policy, mfeq)?;
                    let p = pols.map(|stages| DynTeamPolicy::Symmetric { stages });
                    let report = simulate_finite_n(&spec, sizes, [&p[0], &p[1]], *reps, *seed)?;
                    let text = match format {
                        Format::Csv => cost_csv(
                            &report
                                .cost
                                .iter()
                                .enumerate()
                                .map(|(i, e)| (i + 1, e.estimate, e.ci_halfwidth, e.reps))
                                .collect::<Vec<_>>(),
                        )?,
                        Format::Json => json_document("dynamic-simulation", &report)?,
                    };
                    ok(
                        text,
                        format!(
                            "simulate: cost=({:.6}, {:.6})",
                            report.cost[0].estimate, report.cost[1].estimate
                        ),
                    )
                }
            }
        }
        Command::EpsDyn {
            common,
            policy,
            mfeq,
            n,
            exact,
            mc,
        } => {
            let format = check_format(common.format, Format::Csv, &[Format::Csv, Format::Json])?;
            let spec = load_dynamic(common)?;
            let sizes = team_sizes(n)?;
            let pols = dynamic_policies(policy, mfeq)?;
            let feasible = dynamic_exact_feasible(&spec, sizes);
            if *exact && !feasible {
                return Err(Error::BudgetExceeded {
                    what: "exact dynamic epsilon",
                    size: sizes[0].max(sizes[1]) as u128,
                    limit: 0,
                    hint: "drop --exact to use Monte Carlo estimation",
                });
            }
            let seed = if feasible {
                mc.seed.unwrap_or(0)
            } else {
                need_seed(mc.seed, "estimation")?
            };
            let opts = DynEpsilonOptions {
                prefer_exact: true,
                reps: mc.reps,
                seed,
                grid_steps: mc.grid_steps,
            };
            let report = dynamic_epsilon_estimate(&spec, sizes, &pols, &opts)?;
            let text = match format {
                Format::Csv => epsilon_csv(&[EpsilonRow::from(&report)])?,
                Format::Json => json_document("dynamic-epsilon-report", &report)?,
            };
            ok(
                text,
                format!(
                    "eps-dyn: N=({}, {}) eps={} method={}",
                    sizes[0],
                    sizes[1],
                    fmt_pair(report.eps),
                    report.method.as_str()
                ),
            )
        }
        Command::GridSearch {
            common,
            resolution,
            all,
            radius,
        } => {
            check_format(common.format, Format::Json, &[Format::Json])?;
            if !(*resolution > 0.0 && *resolution <= 0.1) {
                return Err(Error::InvalidConfig(format!(
                    "resolution {resolution} must lie in (0, 0.1]"
                )));
            }
            let radius = radius.unwrap_or(2.0 * resolution);
            match load_spec(&common.spec, common.force)?.0 {
                GameSpec::Static(spec) => {
                    let hits = grid_fixed_point_search(&spec, *resolution)?;
                    let total = hits.len();
                    let shown = if *all {
                        hits
                    } else {
                        cluster_hits(&hits, radius)
                    };
                    ok(
                        json_document("grid-search", &shown)?,
                        format!("grid-search: {total} hit(s), {} reported", shown.len()),
                    )
                }
                GameSpec::Dynamic(spec) => {
                    let hits = dynamic_grid_fixed_point_search(&spec, *resolution)?;
                    let total = hits.len();
                    let shown = if *all {
                        hits
                    } else {
                        cluster_dynamic_hits(&hits, radius)
                    };
                    ok(
                        json_document("dynamic-grid-search", &shown)?,
                        format!("grid-search: {total} hit(s), {} reported", shown.len()),
                    )
                }
            }
        }
    }
}

fn out_path(command: &Command) -> Option<&Path> {
    let common = match command {
        Command::Validate { common }
        | Command::SolveMf { common, .. }
        | Command::SolveMfDyn { common, .. }
        | Command::Certify { common, .. }
        | Command::SweepN { common, .. }
        | Command::Simulate { common, .. }
        | Command::EpsDyn { common, .. }
        | Command::GridSearch { common, .. } => common,
    };
    common.out.as_deref()
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV}={v} is not a worker count"))),
        _ => Ok(0),
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_budget() {
        EXIT_BUDGET
    } else {
        EXIT_INVALID
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    let threads = match thread_count() {
        Ok(t) => t,
        Err(e) => return report_error(&e),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return report_error(&Error::InvalidConfig(format!("thread pool: {e}"))),
    };
    let outcome = match pool.install(|| execute(&cli.command)) {
        Ok(o) => o,
        Err(e) => return report_error(&e),
    };
    let out = out_path(&cli.command);
    if let Err(e) = write_output(out, &outcome.text) {
        return report_error(&e);
    }
    if out.is_some() {
        println!("{}", outcome.summary);
    } else {
        eprintln!("{}", outcome.summary);
    }
    match (&cli.command, outcome.failed) {
        (_, false) => EXIT_OK,
        (Command::Validate { .. }, true) => EXIT_INVALID,
        (_, true) => EXIT_BUDGET,
    }
}
