//! `hilbert-mfg`: solve, certify and simulate LQ mean field games from JSON
//! model files.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hilbert_mfg::experiments::{
    convergence_study, epsnash_study, toy_model, truncation_sweep, Deviation, StudyConfig, DEFAULT_LADDER, DEFAULT_PATHS,
};
use hilbert_mfg::io::{load_model_with_info, save_model};
use hilbert_mfg::mean_field::{certify_contraction, feasibility_horizon, fixed_point, DEFAULT_MAX_ITER, DEFAULT_TOL};
use hilbert_mfg::noise::sample_increments;
use hilbert_mfg::population::{evaluate_cost, simulate_population, StrategyProfile};
use hilbert_mfg::{EquilibriumSolution, GameModel, MfgError};

use crate::output::{write_csv, write_json, CliError};

#[derive(Parser)]
#[command(name = "hilbert-mfg", version, about = "LQ mean field games on truncated Hilbert spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean-field fixed point and write the equilibrium paths.
    Solve(SolveArgs),
    /// Evaluate the contraction certificate.
    Certify(CertifyArgs),
    /// Simulate one N-player population path under the equilibrium.
    Simulate(SimulateArgs),
    /// Average-state error across a ladder of population sizes.
    Convergence(StudyArgs),
    /// Cost gaps of the equilibrium and of unilateral deviations.
    Epsnash(StudyArgs),
    /// Write the toy preset model file.
    Toy(ToyArgs),
    /// Solve the toy family at increasing truncation sizes.
    Refine(RefineArgs),
}

#[derive(Args)]
struct Common {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "HILBERT_MFG_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct Solver {
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: Solver,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// Also search for the largest certified horizon up to this value.
    #[arg(long)]
    t_max: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: Solver,
    #[arg(long, default_value_t = 64)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Index of the Monte Carlo path, selecting the noise streams.
    #[arg(long, default_value_t = 0)]
    path: u64,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: Solver,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    /// Comma-separated population sizes.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LADDER)]
    ladder: Vec<usize>,
    /// Draw independent streams for each population size.
    #[arg(long)]
    no_crn: bool,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    /// State dimension of the preset.
    #[arg(long, default_value_t = 4)]
    n_state: usize,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8, 16, 32])]
    sizes: Vec<usize>,
    #[arg(long, env = "HILBERT_MFG_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    solver: Solver,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let threads = match &command {
        Command::Solve(a) => a.common.threads,
        Command::Certify(a) => a.common.threads,
        Command::Simulate(a) => a.common.threads,
        Command::Convergence(a) | Command::Epsnash(a) => a.common.threads,
        Command::Refine(a) => a.threads,
        Command::Toy(_) => None,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;
    pool.install(|| match command {
        Command::Solve(a) => solve(a),
        Command::Certify(a) => certify(a),
        Command::Simulate(a) => simulate(a),
        Command::Convergence(a) => study(a, false),
        Command::Epsnash(a) => study(a, true),
        Command::Toy(a) => toy(a),
        Command::Refine(a) => refine(a),
    })
}

fn load(common: &Common) -> Result<GameModel, CliError> {
    let (model, info) = load_model_with_info(&common.model)?;
    if let Some(tail) = info.discarded_tail_mass {
        eprintln!("note: truncation discards covariance trace mass {tail:.6e}");
    }
    std::fs::create_dir_all(&common.out)?;
    Ok(model)
}

fn equilibrium(model: &GameModel, solver: &Solver) -> Result<EquilibriumSolution, CliError> {
    match fixed_point(model, solver.tol, solver.max_iter) {
        Ok(eq) => Ok(eq),
        Err(MfgError::NonConvergence(report)) => {
            eprintln!("residual history: {:?}", report.residuals);
            Err(MfgError::NonConvergence(report).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn times(model: &GameModel) -> impl Iterator<Item = (usize, f64)> + '_ {
    (0..model.grid.n_nodes()).map(|k| (k, model.grid.time(k)))
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn solve(args: SolveArgs) -> Result<(), CliError> {
    let model = load(&args.common)?;
    let eq = equilibrium(&model, &args.solver)?;
    let out = &args.common.out;
    let n = model.n_state();

    let rows = times(&model).map(|(k, t)| {
        let pi = eq.riccati.at_forward(k);
        let norm = hilbert_mfg::spectral::operator_norm(pi);
        vec![k.to_string(), t.to_string(), norm.to_string(), pi.trace().to_string()]
    });
    write_csv(&out.join("riccati_norms.csv"), "riccati_norms", &["k", "t", "pi_norm", "pi_trace"], rows)?;

    let vector_csv = |file: &str, schema: &str, prefix: &str, at: &dyn Fn(usize) -> Vec<f64>| {
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend(indexed(prefix, n));
        let rows = times(&model).map(|(k, t)| {
            let mut row = vec![k.to_string(), t.to_string()];
            row.extend(at(k).iter().map(f64::to_string));
            row
        });
        write_csv(&out.join(file), schema, &header, rows)
    };
    vector_csv("offset.csv", "offset", "q", &|k| eq.offset.at_forward(k).as_slice().to_vec())?;
    vector_csv("mean_field.csv", "mean_field", "x", &|k| eq.mean_field.values()[k].as_slice().to_vec())?;

    let summary = output::SolveSummary {
        iterations: eq.iterations,
        residual: eq.residual,
        residual_history: eq.residual_history.clone(),
        contraction_ratios: eq.contraction_ratios(),
        riccati_max_norm: eq.riccati.max_norm(),
        mean_field_sup: eq.mean_field.sup_norm(),
        certificate: certify_contraction(&model),
    };
    write_json(&out.join("summary.json"), &summary)
}

fn certify(args: CertifyArgs) -> Result<(), CliError> {
    let model = load(&args.common)?;
    let certificate = certify_contraction(&model);
    let feasible_horizon = match args.t_max {
        Some(t) => match feasibility_horizon(&model, t) {
            Ok(h) => Some(h),
            Err(MfgError::InfeasibleModel { .. }) => None,
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    let report = output::CertifyReport { certificate, t_max: args.t_max, feasible_horizon };
    write_json(&args.common.out.join("certificate.json"), &report)
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let model = load(&args.common)?;
    let eq = equilibrium(&model, &args.solver)?;
    let batch = sample_increments(&model.spectrum, &model.grid, args.agents, args.path, args.seed);
    let traj = simulate_population(&model, &eq, args.agents, &StrategyProfile::equilibrium(), &batch)?;
    let (n, m) = (model.n_state(), model.n_control());

    let mut header = vec!["k".to_string(), "t".to_string(), "agent".to_string()];
    header.extend(indexed("x", n));
    header.extend(indexed("u", m));
    let steps = model.grid.n_steps();
    let rows = times(&model).flat_map(|(k, t)| {
        let traj = &traj;
        (0..args.agents).map(move |i| {
            let mut row = vec![k.to_string(), t.to_string(), i.to_string()];
            row.extend(traj.states[k].column(i).iter().map(f64::to_string));
            // No control is applied at the final node.
            if k < steps {
                row.extend(traj.controls[k].column(i).iter().map(f64::to_string));
            } else {
                row.extend(std::iter::repeat_n(String::new(), m));
            }
            row
        })
    });
    write_csv(&args.common.out.join("trajectory.csv"), "trajectory", &header, rows)?;

    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend(indexed("avg", n));
    header.extend(indexed("xbar", n));
    let rows = times(&model).map(|(k, t)| {
        let mut row = vec![k.to_string(), t.to_string()];
        row.extend(traj.empirical_avg[k].iter().map(f64::to_string));
        row.extend(eq.mean_field.values()[k].iter().map(f64::to_string));
        row
    });
    write_csv(&args.common.out.join("average.csv"), "average", &header, rows)?;

    let agents = (0..args.agents)
        .map(|i| evaluate_cost(&traj, &model, i).map(output::AgentCost::from))
        .collect::<Result<Vec<_>, _>>()?;
    let mean_total = agents.iter().map(|a| a.total).sum::<f64>() / agents.len().max(1) as f64;
    let report = output::CostSummary { seed: args.seed, path: args.path, n_agents: args.agents, mean_total, agents };
    write_json(&args.common.out.join("cost.json"), &report)
}

fn study(args: StudyArgs, with_costs: bool) -> Result<(), CliError> {
    let model = load(&args.common)?;
    let eq = equilibrium(&model, &args.solver)?;
    let mut cfg = StudyConfig::new(args.ladder, args.paths, args.seed);
    cfg.common_random_numbers = !args.no_crn;
    let report = if with_costs {
        epsnash_study(&model, &eq, &cfg, &Deviation::builtins())?
    } else {
        convergence_study(&model, &eq, &cfg)?
    };

    let mut header: Vec<String> = ["n", "mse", "mse_se"].map(String::from).to_vec();
    if with_costs {
        header.extend(["gap", "gap_se"].map(String::from));
        for d in &report.deviations {
            header.push(format!("{}_gap", d.name));
            header.push(format!("{}_se", d.name));
        }
    }
    let rows = report.ladder.iter().enumerate().map(|(r, n)| {
        let mse = report.avg_state_mse[r];
        let mut row = vec![n.to_string(), mse.mean.to_string(), mse.stderr.to_string()];
        if with_costs {
            let gap = report.cost_gap[r];
            row.extend([gap.mean.to_string(), gap.stderr.to_string()]);
            for d in &report.deviations {
                row.extend([d.gaps[r].mean.to_string(), d.gaps[r].stderr.to_string()]);
            }
        }
        row
    });
    let (name, schema) = if with_costs { ("epsnash", "epsnash_per_n") } else { ("convergence", "convergence_per_n") };
    write_csv(&args.common.out.join(format!("{name}_per_n.csv")), schema, &header, rows)?;
    write_json(&args.common.out.join(format!("{name}.json")), &report)
}

fn toy(args: ToyArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("model.json");
    save_model(&toy_model(args.n_state), &path)?;
    println!("{}", path.display());
    Ok(())
}

fn refine(args: RefineArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out)?;
    let rows = truncation_sweep(&args.sizes, args.solver.tol, args.solver.max_iter)?;
    let header = ["n_state", "riccati_max_norm", "mean_field_sup", "iterations", "residual"];
    let records = rows.iter().map(|r| {
        vec![
            r.n_state.to_string(),
            r.riccati_max_norm.to_string(),
            r.mean_field_sup.to_string(),
            r.iterations.to_string(),
            r.residual.to_string(),
        ]
    });
    write_csv(Path::new(&args.out.join("refine.csv")), "refine", &header, records)
}
