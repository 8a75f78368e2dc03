//! Monte Carlo simulation of the N-player system and of the limiting agent.
//!
//! Every scheme is exponential Euler on the mild form: over a step the
//! drift and the stochastic integrand are frozen at the left node and the
//! semigroup is applied exactly,
//! `x_{k+1} = S(Δt)[x_k + Δt F(t_k, x_k) + Σ_j B_j(t_k, x_k) Δβ_j]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{MfgError, Result};
use crate::lq::ClosedLoop;
use crate::mean_field::EquilibriumSolution;
use crate::model::GameModel;
use crate::noise::{sample_initial_states, Channel, NoiseBatch, NormalStream};
use crate::spectral::{gamma2, GeneratorSpec};

/// Control rule of one agent.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind {
    /// `u = −K⁻¹L x − τ` with `τ` built from the limiting mean field.
    Equilibrium,
    Zero,
    /// `γ` times the equilibrium control.
    ScaledEquilibrium(f64),
    /// Equilibrium feedback with `Γ2` evaluated at the realized `x^(N)`.
    RealizedMeanEquilibrium,
    /// `u = gain·x + offset`.
    Affine { gain: DMatrix<f64>, offset: DVector<f64> },
    /// Equilibrium control plus `gain·x + offset`.
    PerturbedEquilibrium { gain: DMatrix<f64>, offset: DVector<f64> },
    /// One control per grid step.
    OpenLoop(Vec<DVector<f64>>),
}

/// All agents follow `others`; agent 0 may deviate.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    pub others: StrategyKind,
    pub deviator: Option<StrategyKind>,
}

impl StrategyProfile {
    pub fn equilibrium() -> Self {
        Self { others: StrategyKind::Equilibrium, deviator: None }
    }

    pub fn uniform(kind: StrategyKind) -> Self {
        Self { others: kind, deviator: None }
    }

    pub fn deviating(kind: StrategyKind) -> Self {
        Self { others: StrategyKind::Equilibrium, deviator: Some(kind) }
    }

    fn kind(&self, agent: usize) -> &StrategyKind {
        match (&self.deviator, agent) {
            (Some(k), 0) => k,
            _ => &self.others,
        }
    }
}

/// Which mean the agents are coupled to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// The realized empirical average `x^(N)`.
    Population,
    /// The limiting mean field `x̄`: every agent is an independent copy of the
    /// representative agent.
    Limit,
}

#[derive(Debug, Clone)]
pub struct PopulationTrajectory {
    /// One `n_state × N` matrix per grid node, agent per column.
    pub states: Vec<DMatrix<f64>>,
    /// One `n_control × N` matrix per grid step.
    pub controls: Vec<DMatrix<f64>>,
    /// `x^(N)(t_k)`.
    pub empirical_avg: Vec<DVector<f64>>,
    /// The mean entering drift, diffusion and cost: `x^(N)` or `x̄`.
    pub reference: Vec<DVector<f64>>,
    pub dt: f64,
    pub seed: u64,
    pub path_index: u64,
}

impl PopulationTrajectory {
    pub fn n_agents(&self) -> usize {
        self.states.first().map_or(0, |s| s.ncols())
    }

    pub fn state(&self, agent: usize, k: usize) -> DVector<f64> {
        self.states[k].column(agent).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub agent: usize,
    pub running_cost: f64,
    pub terminal_cost: f64,
    pub total: f64,
    /// Variance of the mean estimator across paths; zero for a single path.
    pub estimator_variance: f64,
}

impl CostReport {
    /// Path average of single-path reports for one agent.
    pub fn average(reports: &[CostReport]) -> CostReport {
        let n = reports.len() as f64;
        let mean = |f: fn(&CostReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let total = mean(|r| r.total);
        let var = if reports.len() > 1 {
            reports.iter().map(|r| (r.total - total).powi(2)).sum::<f64>() / (n - 1.0) / n
        } else {
            0.0
        };
        CostReport {
            agent: reports.first().map_or(0, |r| r.agent),
            running_cost: mean(|r| r.running_cost),
            terminal_cost: mean(|r| r.terminal_cost),
            total,
            estimator_variance: var,
        }
    }
}

fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// Running cost `∫ |M^{1/2}(x_i − F̂1 r)|² + |u_i|² dt` (trapezoid for the
/// state term, controls held on steps) plus `|G^{1/2}(x_i(T) − F̂2 r(T))|²`,
/// with `r` the trajectory's reference mean.
pub fn evaluate_cost(traj: &PopulationTrajectory, model: &GameModel, agent: usize) -> Result<CostReport> {
    if agent >= traj.n_agents() {
        return Err(MfgError::IndexOutOfRange { context: "evaluate_cost", index: agent, len: traj.n_agents() });
    }
    let (m, fhat1) = (model.m.matrix(), model.fhat1.matrix());
    let n = traj.states.len() - 1;
    let dt = traj.dt;
    let state_term = |k: usize| {
        let e = traj.states[k].column(agent) - fhat1 * &traj.reference[k];
        quad(m, &e)
    };
    let mut running = 0.5 * (state_term(0) + state_term(n));
    for k in 1..n {
        running += state_term(k);
    }
    running *= dt;
    running += traj.controls.iter().map(|u| u.column(agent).norm_squared()).sum::<f64>() * dt;
    let e = traj.states[n].column(agent) - model.fhat2.matrix() * &traj.reference[n];
    let terminal = quad(model.g.matrix(), &e);
    Ok(CostReport {
        agent,
        running_cost: running,
        terminal_cost: terminal,
        total: running + terminal,
        estimator_variance: 0.0,
    })
}

fn row_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let mut mean = DVector::zeros(x.nrows());
    for c in x.column_iter() {
        mean += c;
    }
    mean / x.ncols() as f64
}

fn initial_matrix(model: &GameModel, batch: &NoiseBatch) -> DMatrix<f64> {
    let init = sample_initial_states(
        &model.init_mean,
        model.init_cov_scale,
        0..batch.n_agents(),
        batch.path_index,
        batch.seed,
    );
    DMatrix::from_columns(&init)
}

fn is_zero(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| *v == 0.0)
}

/// Shared closed-loop data for simulating one equilibrium many times.
pub struct Simulator<'a> {
    model: &'a GameModel,
    cl: ClosedLoop,
    xbar: Vec<DVector<f64>>,
    pi_fwd: Vec<DMatrix<f64>>,
    d_active: Vec<bool>,
    e_active: Vec<bool>,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a GameModel, eq: &EquilibriumSolution) -> Result<Self> {
        let n = model.grid.n_steps();
        Ok(Self {
            model,
            cl: eq.closed_loop(model)?,
            xbar: eq.mean_field.values().to_vec(),
            pi_fwd: (0..=n).map(|k| eq.riccati.at_forward(k).clone()).collect(),
            d_active: model.couplings.d.iter().map(|d| !is_zero(d)).collect(),
            e_active: model.couplings.e.iter().map(|e| !is_zero(e)).collect(),
        })
    }

    pub fn closed_loop(&self) -> &ClosedLoop {
        &self.cl
    }

    pub fn mean_field(&self) -> &[DVector<f64>] {
        &self.xbar
    }

    fn equilibrium_control(&self, k: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut u = &self.cl.kinv_l[k] * x;
        u.neg_mut();
        for mut col in u.column_iter_mut() {
            col -= &self.cl.tau[k];
        }
        u
    }

    fn controls(&self, profile: &StrategyProfile, k: usize, x: &DMatrix<f64>, r: &DVector<f64>) -> DMatrix<f64> {
        let n_agents = x.ncols();
        let mut u = self.equilibrium_control(k, x);
        let c = &self.model.couplings;
        let mut realized_tau = None;
        for agent in 0..n_agents {
            let kind = profile.kind(agent);
            if matches!(kind, StrategyKind::Equilibrium) {
                continue;
            }
            let xi = x.column(agent);
            let new: Option<DVector<f64>> = match kind {
                StrategyKind::Equilibrium => None,
                StrategyKind::Zero => Some(DVector::zeros(u.nrows())),
                StrategyKind::ScaledEquilibrium(gamma) => Some(u.column(agent) * *gamma),
                StrategyKind::RealizedMeanEquilibrium => {
                    let tau = realized_tau.get_or_insert_with(|| {
                        let gam = gamma2(&self.pi_fwd[k], &c.p_family(r), c);
                        &self.cl.k_inv[k] * (&self.cl.bt_q[k] + gam)
                    });
                    Some(-(&self.cl.kinv_l[k] * xi) - &*tau)
                }
                StrategyKind::Affine { gain, offset } => Some(gain * xi + offset),
                StrategyKind::PerturbedEquilibrium { gain, offset } => Some(u.column(agent) + gain * xi + offset),
                StrategyKind::OpenLoop(series) => Some(series[k].clone()),
            };
            if let Some(v) = new {
                u.set_column(agent, &v);
            }
        }
        u
    }

    /// Simulates all agents of `batch` under `profile`.
    pub fn run(&self, profile: &StrategyProfile, batch: &NoiseBatch, coupling: Coupling) -> Result<PopulationTrajectory> {
        let model = self.model;
        let steps = model.grid.n_steps();
        if batch.n_steps() != steps || batch.n_modes() != model.n_noise() {
            return Err(MfgError::dims(
                "noise batch (steps, modes)",
                format!("({steps}, {})", model.n_noise()),
                format!("({}, {})", batch.n_steps(), batch.n_modes()),
            ));
        }
        if let StrategyKind::OpenLoop(s) = profile.kind(0) {
            if s.len() < steps {
                return Err(MfgError::dims("open-loop control series", steps, s.len()));
            }
        }
        let n_agents = batch.n_agents();
        let dt = model.grid.dt();
        let (b, f1) = (model.b.matrix(), model.f1.matrix());
        let c = &model.couplings;
        let r_modes = model.n_noise();

        let mut x = initial_matrix(model, batch);
        let mut states = Vec::with_capacity(steps + 1);
        let mut controls = Vec::with_capacity(steps);
        let mut avgs = Vec::with_capacity(steps + 1);
        let mut refs = Vec::with_capacity(steps + 1);
        let mut db = vec![0.0; r_modes];

        for k in 0..=steps {
            let avg = row_mean(&x);
            let r = match coupling {
                Coupling::Population => avg.clone(),
                Coupling::Limit => self.xbar[k].clone(),
            };
            states.push(x.clone());
            avgs.push(avg);
            refs.push(r.clone());
            if k == steps {
                break;
            }
            let u = self.controls(profile, k, &x, &r);
            let mut y = &x + (b * &u) * dt;
            let f1r = f1 * &r * dt;
            for mut col in y.column_iter_mut() {
                col += &f1r;
            }
            let shifts: Vec<DVector<f64>> = (0..r_modes).map(|j| &c.f2[j] * &r + &c.sigma[j]).collect();
            let state_parts: Vec<Option<DMatrix<f64>>> =
                (0..r_modes).map(|j| self.d_active[j].then(|| &c.d[j] * &x)).collect();
            let control_parts: Vec<Option<DMatrix<f64>>> =
                (0..r_modes).map(|j| self.e_active[j].then(|| &c.e[j] * &u)).collect();
            for i in 0..n_agents {
                batch.standard_increment(i, k, &mut db);
                let mut col = y.column_mut(i);
                for j in 0..r_modes {
                    let w = db[j];
                    col.axpy(w, &shifts[j], 1.0);
                    if let Some(sp) = &state_parts[j] {
                        col.axpy(w, &sp.column(i), 1.0);
                    }
                    if let Some(cp) = &control_parts[j] {
                        col.axpy(w, &cp.column(i), 1.0);
                    }
                }
            }
            x = &self.cl.step * y;
            if let Some(bad) = x.column_iter().position(|col| !col.iter().all(|v| v.is_finite())) {
                return Err(MfgError::SimulationBlowUp { agent: bad, step: k + 1 });
            }
            controls.push(u);
        }
        Ok(PopulationTrajectory {
            states,
            controls,
            empirical_avg: avgs,
            reference: refs,
            dt,
            seed: batch.seed,
            path_index: batch.path_index,
        })
    }
}

/// The N-player system driven by `batch`; equilibrium
/// feedback uses `Π`, `q` and the limiting `x̄`, never `x^(N)`.
pub fn simulate_population(
    model: &GameModel,
    eq: &EquilibriumSolution,
    n_agents: usize,
    profile: &StrategyProfile,
    batch: &NoiseBatch,
) -> Result<PopulationTrajectory> {
    if batch.n_agents() != n_agents {
        return Err(MfgError::dims("noise batch agents", n_agents, batch.n_agents()));
    }
    Simulator::new(model, eq)?.run(profile, batch, Coupling::Population)
}

/// Independent representative agents coupled to `x̄`, one per agent stream
/// of `batch`, with the path-averaged cost of agent 0's stream.
pub fn simulate_limit_agent(
    model: &GameModel,
    eq: &EquilibriumSolution,
    batch: &NoiseBatch,
) -> Result<(PopulationTrajectory, CostReport)> {
    let traj = Simulator::new(model, eq)?.run(&StrategyProfile::equilibrium(), batch, Coupling::Limit)?;
    let reports = (0..traj.n_agents())
        .map(|i| evaluate_cost(&traj, model, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((traj, CostReport::average(&reports)))
}

/// A coupled system `dx_i = (A x_i + F_i(t, x, u_i))dt + B_i(t, x, u_i) dW_i`
/// with feedback controls, given by evaluable maps.
pub trait CoupledSystemSpec: Sync {
    fn n_state(&self) -> usize;
    fn n_control(&self) -> usize;
    fn n_modes(&self) -> usize;
    fn generator(&self) -> &GeneratorSpec;
    /// Control of `agent` at step `k` given the full state (columns = agents).
    fn control(&self, k: usize, agent: usize, x: &DMatrix<f64>) -> DVector<f64>;
    fn drift(&self, k: usize, agent: usize, x: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// Columns multiply the standard Brownian increments of each mode, so
    /// the Frobenius norm is the Hilbert–Schmidt norm on `V_Q`.
    fn diffusion(&self, k: usize, agent: usize, x: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    /// Declared Lipschitz constant in the state.
    fn lipschitz(&self) -> f64;
    /// Declared linear-growth constant.
    fn growth(&self) -> f64;
}

pub const PROBE_COUNT: usize = 100;

/// Probes the declared Lipschitz and growth inequalities on deterministic
/// random pairs of full states and controls.
pub fn spot_check<S: CoupledSystemSpec + ?Sized>(
    spec: &S,
    n_agents: usize,
    n_steps: usize,
    seed: u64,
) -> Result<()> {
    let (n, m) = (spec.n_state(), spec.n_control());
    let (lip, growth) = (spec.lipschitz(), spec.growth());
    if !(lip.is_finite() && lip >= 0.0 && growth.is_finite() && growth >= 0.0) {
        return Err(MfgError::InvalidSpec(format!("declared constants finite and nonnegative: ({lip}, {growth})")));
    }
    let mut rng = NormalStream::new(seed, 0, Channel::Probe, 0, 0);
    for probe in 0..PROBE_COUNT {
        let scale = 10f64.powi((probe % 5) as i32 - 2);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| scale * rng.next_normal());
        let x = draw(n, n_agents);
        let y = draw(n, n_agents);
        let u = DVector::from_column_slice(draw(m, 1).as_slice());
        let k = probe % n_steps.max(1);
        let agent = probe % n_agents.max(1);
        let (fx, fy) = (spec.drift(k, agent, &x, &u), spec.drift(k, agent, &y, &u));
        let (bx, by) = (spec.diffusion(k, agent, &x, &u), spec.diffusion(k, agent, &y, &u));
        let dist = (&x - &y).norm();
        let lhs = (&fx - &fy).norm() + (&bx - &by).norm();
        if lhs > lip * dist * (1.0 + 1e-9) + 1e-12 {
            return Err(MfgError::InvalidSpec(format!(
                "Lipschitz inequality violated at probe {probe}: {lhs:.6e} > C|x - y| = {:.6e}",
                lip * dist
            )));
        }
        let lhs = fx.norm_squared() + bx.norm_squared();
        let rhs = growth * growth * (1.0 + x.norm_squared() + u.norm_squared());
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
            return Err(MfgError::InvalidSpec(format!(
                "linear-growth inequality violated at probe {probe}: {lhs:.6e} > {rhs:.6e}"
            )));
        }
    }
    Ok(())
}

/// Exponential Euler for a general coupled system, after a spot check of its
/// declared constants.
pub fn simulate_coupled<S: CoupledSystemSpec + ?Sized>(
    spec: &S,
    batch: &NoiseBatch,
    initial: &[DVector<f64>],
) -> Result<PopulationTrajectory> {
    let n_agents = batch.n_agents();
    if initial.len() != n_agents {
        return Err(MfgError::dims("initial states", n_agents, initial.len()));
    }
    if batch.n_modes() != spec.n_modes() {
        return Err(MfgError::dims("noise modes", spec.n_modes(), batch.n_modes()));
    }
    spot_check(spec, n_agents, batch.n_steps(), batch.seed)?;
    let dt = batch.dt();
    let step = spec.generator().semigroup(dt)?;
    let mut x = DMatrix::from_columns(initial);
    let steps = batch.n_steps();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut avgs = Vec::with_capacity(steps + 1);
    let mut db = vec![0.0; batch.n_modes()];
    for k in 0..=steps {
        states.push(x.clone());
        avgs.push(row_mean(&x));
        if k == steps {
            break;
        }
        let mut u_all = DMatrix::zeros(spec.n_control(), n_agents);
        let mut y = x.clone();
        for i in 0..n_agents {
            let u = spec.control(k, i, &x);
            let mut col = y.column_mut(i);
            col.axpy(dt, &spec.drift(k, i, &x, &u), 1.0);
            batch.standard_increment(i, k, &mut db);
            col.gemv(1.0, &spec.diffusion(k, i, &x, &u), &DVector::from_column_slice(&db), 1.0);
            u_all.set_column(i, &u);
        }
        x = &step * y;
        if let Some(bad) = x.column_iter().position(|col| !col.iter().all(|v| v.is_finite())) {
            return Err(MfgError::SimulationBlowUp { agent: bad, step: k + 1 });
        }
        controls.push(u_all);
    }
    Ok(PopulationTrajectory {
        states,
        controls,
        reference: avgs.clone(),
        empirical_avg: avgs,
        dt,
        seed: batch.seed,
        path_index: batch.path_index,
    })
}

/// The LQ population as a [`CoupledSystemSpec`], for cross-checking the
/// dedicated simulator.
pub struct LqCoupledSpec<'a> {
    model: &'a GameModel,
    sim: Simulator<'a>,
    lip: f64,
    growth: f64,
}

impl<'a> LqCoupledSpec<'a> {
    pub fn new(model: &'a GameModel, eq: &EquilibriumSolution) -> Result<Self> {
        let fro = |fam: &[DMatrix<f64>]| fam.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let c = &model.couplings;
        let (nb, nf1) = (model.b.norm(), model.f1.norm());
        let (d, e, f2) = (fro(&c.d), fro(&c.e), fro(&c.f2));
        let s = c.sigma.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        // |x_i|, |x^(N)| ≤ |x|_{H^N}; Cauchy–Schwarz on the affine bounds.
        let lip = nf1 + d + f2;
        let growth = (nb * nb + nf1 * nf1 + (d + f2).powi(2) + e * e + s * s).sqrt();
        Ok(Self { model, sim: Simulator::new(model, eq)?, lip, growth })
    }
}

impl CoupledSystemSpec for LqCoupledSpec<'_> {
    fn n_state(&self) -> usize {
        self.model.n_state()
    }

    fn n_control(&self) -> usize {
        self.model.n_control()
    }

    fn n_modes(&self) -> usize {
        self.model.n_noise()
    }

    fn generator(&self) -> &GeneratorSpec {
        &self.model.generator
    }

    fn control(&self, k: usize, agent: usize, x: &DMatrix<f64>) -> DVector<f64> {
        self.sim.cl.control(k, &x.column(agent).into_owned())
    }

    fn drift(&self, _k: usize, _agent: usize, x: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.model.b.matrix() * u + self.model.f1.matrix() * row_mean(x)
    }

    fn diffusion(&self, _k: usize, agent: usize, x: &DMatrix<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        let c = &self.model.couplings;
        let avg = row_mean(x);
        let xi = x.column(agent);
        let cols: Vec<DVector<f64>> = (0..c.n_modes())
            .map(|j| &c.d[j] * xi + &c.e[j] * u + &c.f2[j] * &avg + &c.sigma[j])
            .collect();
        DMatrix::from_columns(&cols)
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }

    fn growth(&self) -> f64 {
        self.growth
    }
}
