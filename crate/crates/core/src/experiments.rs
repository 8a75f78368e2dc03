//! Monte Carlo studies of the finite-population rates and the toy preset.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mean_field::EquilibriumSolution;
use crate::model::{GameModel, StateOperator};
use crate::noise::{sample_increments, TimeGrid};
use crate::population::{evaluate_cost, Coupling, Simulator, StrategyKind, StrategyProfile};
use crate::spectral::{BasisTruncation, CovarianceSpectrum, GeneratorSpec, GrowthBound};

pub const DEFAULT_LADDER: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];
pub const DEFAULT_PATHS: usize = 2000;

/// The toy game: `A = diag(−k²)`, `B = I`, `F1 = F2 = D = E = 0`,
/// `F̂1 = F̂2 = I`, `M = G = 0.05 I`, `T = 0.5`, one additive noise mode.
pub fn toy_model_preset() -> GameModel {
    toy_model(4)
}

/// The toy family at state dimension `n`.
pub fn toy_model(n: usize) -> GameModel {
    let trunc = BasisTruncation::new(n, n, 1).expect("positive dimensions");
    let grid = TimeGrid::new(0.5, 50).expect("valid grid");
    let mut model = GameModel::zeros(trunc, grid);
    model.generator =
        GeneratorSpec::diagonal((1..=n).map(|k| -((k * k) as f64)).collect(), GrowthBound { m_a: 1.0, alpha: 0.0 });
    model.set_b(DMatrix::identity(n, n));
    model.set_state_op(StateOperator::Fhat1, DMatrix::identity(n, n));
    model.set_state_op(StateOperator::Fhat2, DMatrix::identity(n, n));
    model.set_state_op(StateOperator::M, DMatrix::identity(n, n) * 0.05);
    model.set_state_op(StateOperator::G, DMatrix::identity(n, n) * 0.05);
    model.spectrum = CovarianceSpectrum::new(vec![1.0]).expect("positive eigenvalue");
    model.couplings.sigma = vec![DVector::from_fn(n, |k, _| 0.5 / (k + 1) as f64)];
    model.init_mean = DVector::from_fn(n, |k, _| 0.5f64.powi(k as i32));
    model.init_cov_scale = 0.1;
    model
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, stderr: (var / n).sqrt() }
    }
}

/// Ordinary least squares fit of `log y` on `log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Fits `log y = a + b log x`; `None` with fewer than three points or any
/// nonpositive value.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 3 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    Some(SlopeFit { slope, intercept, stderr })
}

/// A deviation strategy probed by the ε-Nash study.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub name: String,
    pub kind: StrategyKind,
}

impl Deviation {
    /// Zero control, equilibrium feedback scaled by 0.5, and equilibrium
    /// feedback against the realized average.
    pub fn builtins() -> Vec<Deviation> {
        vec![
            Deviation { name: "zero".into(), kind: StrategyKind::Zero },
            Deviation { name: "scaled_0.5".into(), kind: StrategyKind::ScaledEquilibrium(0.5) },
            Deviation { name: "realized_mean".into(), kind: StrategyKind::RealizedMeanEquilibrium },
        ]
    }
}

/// The `C/√N` envelope with `C = max |gap_N| √N` over the three smallest
/// `N`, checked at every rung with a `3σ` allowance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c: f64,
    pub holds: bool,
}

pub fn sqrt_envelope(ladder: &[usize], gaps: &[Estimate]) -> Envelope {
    let c = ladder
        .iter()
        .zip(gaps)
        .take(3)
        .map(|(n, g)| g.mean.abs() * (*n as f64).sqrt())
        .fold(0.0, f64::max);
    let holds = ladder
        .iter()
        .zip(gaps)
        .all(|(n, g)| g.mean.abs() <= c / (*n as f64).sqrt() + 3.0 * g.stderr);
    Envelope { c, holds }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub name: String,
    pub gaps: Vec<Estimate>,
    pub slope: Option<SlopeFit>,
    pub envelope: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub ladder: Vec<usize>,
    /// `sup_t Ê|x̄(t) − x^(N)(t)|²` with the standard error at the maximizing node.
    pub avg_state_mse: Vec<Estimate>,
    pub mse_slope: Option<SlopeFit>,
    /// `Ĵ^N − Ĵ^∞` averaged over agents under the all-equilibrium profile.
    pub cost_gap: Vec<Estimate>,
    pub cost_gap_slope: Option<SlopeFit>,
    pub deviations: Vec<DeviationReport>,
    pub mc_paths: usize,
    pub seed: u64,
    pub common_random_numbers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub ladder: Vec<usize>,
    pub mc_paths: usize,
    pub seed: u64,
    /// Reuse one set of agent streams across the ladder.
    pub common_random_numbers: bool,
}

impl StudyConfig {
    pub fn new(ladder: Vec<usize>, mc_paths: usize, seed: u64) -> Self {
        Self { ladder, mc_paths, seed, common_random_numbers: true }
    }

    fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.ladder.is_empty() || self.ladder.windows(2).any(|w| w[0] >= w[1]) || self.ladder[0] == 0 {
            bad.push("ladder strictly increasing and positive".to_string());
        }
        if self.mc_paths < 2 {
            bad.push("at least two Monte Carlo paths".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(crate::MfgError::Validation(bad))
        }
    }

    fn path_key(&self, path: usize, rung: usize) -> u64 {
        if self.common_random_numbers {
            path as u64
        } else {
            (rung * self.mc_paths + path) as u64
        }
    }
}

struct PathSample {
    /// Per rung, `|x̄ − x^(N)|²` at every node.
    sq_err: Vec<Vec<f64>>,
    eq_gap: Vec<f64>,
    dev_gap: Vec<Vec<f64>>,
}

fn run_path(
    model: &GameModel,
    sim: &Simulator<'_>,
    cfg: &StudyConfig,
    deviations: &[Deviation],
    with_costs: bool,
    path: usize,
) -> Result<PathSample> {
    let n_max = *cfg.ladder.last().expect("nonempty ladder");
    let xbar = sim.mean_field();
    let mut out = PathSample {
        sq_err: Vec::with_capacity(cfg.ladder.len()),
        eq_gap: Vec::new(),
        dev_gap: vec![Vec::new(); deviations.len()],
    };
    let shared = cfg
        .common_random_numbers
        .then(|| sample_increments(&model.spectrum, &model.grid, n_max, path as u64, cfg.seed));
    let limit_costs = match (&shared, with_costs) {
        (Some(batch), true) => {
            let traj = sim.run(&StrategyProfile::equilibrium(), batch, Coupling::Limit)?;
            Some((0..n_max).map(|i| evaluate_cost(&traj, model, i).map(|c| c.total)).collect::<Result<Vec<_>>>()?)
        }
        _ => None,
    };
    for (rung, &n) in cfg.ladder.iter().enumerate() {
        let batch = match &shared {
            Some(b) => b.first_agents(n)?,
            None => sample_increments(&model.spectrum, &model.grid, n, cfg.path_key(path, rung), cfg.seed),
        };
        let traj = sim.run(&StrategyProfile::equilibrium(), &batch, Coupling::Population)?;
        out.sq_err.push(traj.empirical_avg.iter().zip(xbar).map(|(a, b)| (a - b).norm_squared()).collect());
        if !with_costs {
            continue;
        }
        let limit = match &limit_costs {
            Some(c) => c[..n].to_vec(),
            None => {
                let lt = sim.run(&StrategyProfile::equilibrium(), &batch, Coupling::Limit)?;
                (0..n).map(|i| evaluate_cost(&lt, model, i).map(|c| c.total)).collect::<Result<Vec<_>>>()?
            }
        };
        let mut gap = 0.0;
        for (i, lim) in limit.iter().enumerate() {
            gap += evaluate_cost(&traj, model, i)?.total - lim;
        }
        out.eq_gap.push(gap / n as f64);
        for (d, dev) in deviations.iter().enumerate() {
            let profile = StrategyProfile::deviating(dev.kind.clone());
            let finite = sim.run(&profile, &batch, Coupling::Population)?;
            let single = batch.first_agents(1)?;
            let limit = sim.run(&profile, &single, Coupling::Limit)?;
            out.dev_gap[d].push(evaluate_cost(&finite, model, 0)?.total - evaluate_cost(&limit, model, 0)?.total);
        }
    }
    Ok(out)
}

fn study(
    model: &GameModel,
    eq: &EquilibriumSolution,
    cfg: &StudyConfig,
    deviations: &[Deviation],
    with_costs: bool,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let sim = Simulator::new(model, eq)?;
    let samples: Vec<PathSample> = (0..cfg.mc_paths)
        .into_par_iter()
        .map(|p| run_path(model, &sim, cfg, deviations, with_costs, p))
        .collect::<Result<Vec<_>>>()?;

    let nodes = model.grid.n_nodes();
    let mut mse = Vec::with_capacity(cfg.ladder.len());
    for rung in 0..cfg.ladder.len() {
        let per_node: Vec<Estimate> = (0..nodes)
            .map(|k| Estimate::from_samples(&samples.iter().map(|s| s.sq_err[rung][k]).collect::<Vec<_>>()))
            .collect();
        let best = per_node.iter().copied().fold(Estimate { mean: f64::NEG_INFINITY, stderr: 0.0 }, |a, b| {
            if b.mean > a.mean {
                b
            } else {
                a
            }
        });
        mse.push(best);
    }
    let xs: Vec<f64> = cfg.ladder.iter().map(|n| *n as f64).collect();
    let fit = |est: &[Estimate]| log_log_slope(&xs, &est.iter().map(|e| e.mean.abs()).collect::<Vec<_>>());

    let (cost_gap, devs) = if with_costs {
        let gaps: Vec<Estimate> = (0..cfg.ladder.len())
            .map(|r| Estimate::from_samples(&samples.iter().map(|s| s.eq_gap[r]).collect::<Vec<_>>()))
            .collect();
        let devs = deviations
            .iter()
            .enumerate()
            .map(|(d, dev)| {
                let g: Vec<Estimate> = (0..cfg.ladder.len())
                    .map(|r| Estimate::from_samples(&samples.iter().map(|s| s.dev_gap[d][r]).collect::<Vec<_>>()))
                    .collect();
                DeviationReport { name: dev.name.clone(), slope: fit(&g), envelope: sqrt_envelope(&cfg.ladder, &g), gaps: g }
            })
            .collect();
        (gaps, devs)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(ConvergenceReport {
        ladder: cfg.ladder.clone(),
        mse_slope: fit(&mse),
        avg_state_mse: mse,
        cost_gap_slope: if with_costs { fit(&cost_gap) } else { None },
        cost_gap,
        deviations: devs,
        mc_paths: cfg.mc_paths,
        seed: cfg.seed,
        common_random_numbers: cfg.common_random_numbers,
    })
}

/// Average-state error `sup_t Ê|x̄ − x^(N)|²` across the ladder under the
/// all-equilibrium profile, with its log-log slope.
pub fn convergence_study(model: &GameModel, eq: &EquilibriumSolution, cfg: &StudyConfig) -> Result<ConvergenceReport> {
    study(model, eq, cfg, &[], false)
}

/// Cost gaps `Ĵ^N − Ĵ^∞` for the equilibrium profile and for each unilateral
/// deviation of agent 0, plus the average-state errors of the same runs.
pub fn epsnash_study(
    model: &GameModel,
    eq: &EquilibriumSolution,
    cfg: &StudyConfig,
    deviations: &[Deviation],
) -> Result<ConvergenceReport> {
    study(model, eq, cfg, deviations, true)
}

/// One row of a truncation sweep over the toy family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub n_state: usize,
    pub riccati_max_norm: f64,
    pub mean_field_sup: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves the toy family at each state dimension.
pub fn truncation_sweep(sizes: &[usize], tol: f64, max_iter: usize) -> Result<Vec<RefinementRow>> {
    sizes
        .iter()
        .map(|&n| {
            let model = toy_model(n);
            let sol = crate::mean_field::fixed_point(&model, tol, max_iter)?;
            Ok(RefinementRow {
                n_state: n,
                riccati_max_norm: sol.riccati.max_norm(),
                mean_field_sup: sol.mean_field.sup_norm(),
                iterations: sol.iterations,
                residual: sol.residual,
            })
        })
        .collect()
}
