//! Nash certainty equivalence: the fixed point of `g ↦ E[x°]` and its
//! contraction certificate.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::lq::{solve_offset, solve_riccati, ClosedLoop, OffsetPath, RiccatiPath};
use crate::model::GameModel;
use crate::spectral::{compute_bounds, BoundSet};

/// An `H`-valued path on the forward grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldPath {
    values: Vec<DVector<f64>>,
}

impl MeanFieldPath {
    pub fn new(values: Vec<DVector<f64>>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<DVector<f64>> {
        self.values
    }

    /// `sup_k |self(t_k) − other(t_k)|`.
    pub fn sup_distance(&self, other: &MeanFieldPath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `t_k ↦ S(t_k) ξ̄`.
pub fn uncontrolled_mean(model: &GameModel) -> Result<MeanFieldPath> {
    let step = model.generator.semigroup(model.grid.dt())?;
    let mut x = model.init_mean.clone();
    let mut values = Vec::with_capacity(model.grid.n_nodes());
    values.push(x.clone());
    for _ in 0..model.grid.n_steps() {
        x = &step * x;
        values.push(x.clone());
    }
    Ok(MeanFieldPath::new(values))
}

/// Mean of the closed-loop state for input `g`, by exponential Euler:
/// `m_{k+1} = S(Δt)[m_k − Δt(B(K⁻¹L m_k + τ_k) − F1 g_k)]`, `m_0 = ξ̄`.
pub fn propagate_mean(
    model: &GameModel,
    riccati: &RiccatiPath,
    offset: &OffsetPath,
    g: &MeanFieldPath,
) -> Result<MeanFieldPath> {
    let cl = ClosedLoop::new(model, riccati, offset, g)?;
    propagate_with(model, &cl, g)
}

pub(crate) fn propagate_with(model: &GameModel, cl: &ClosedLoop, g: &MeanFieldPath) -> Result<MeanFieldPath> {
    let dt = model.grid.dt();
    let b = model.b.matrix();
    let f1 = model.f1.matrix();
    let mut m = model.init_mean.clone();
    let mut values = Vec::with_capacity(model.grid.n_nodes());
    values.push(m.clone());
    for k in 0..model.grid.n_steps() {
        let u = cl.control(k, &m);
        let drift = b * u + f1 * &g.values()[k];
        m = &cl.step * (m + drift * dt);
        if !m.iter().all(|v| v.is_finite()) {
            return Err(MfgError::SolverInstability { what: "mean propagation", index: k + 1, detail: "non-finite".into() });
        }
        values.push(m.clone());
    }
    Ok(MeanFieldPath::new(values))
}

/// The consistency triple `(Π, q, x̄)` with its fixed-point diagnostics.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub riccati: RiccatiPath,
    pub offset: OffsetPath,
    pub mean_field: MeanFieldPath,
    /// Number of evaluations of the fixed-point map.
    pub iterations: usize,
    /// `sup_t |Υ(x̄) − x̄|`.
    pub residual: f64,
    /// `sup_t |g^{k+1} − g^k|` for every evaluation.
    pub residual_history: Vec<f64>,
}

impl EquilibriumSolution {
    /// `|g^{k+1} − g^k| / |g^k − g^{k−1}|` for `k ≥ 1`, skipping exact zeros.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.residual_history
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .collect()
    }

    pub fn closed_loop(&self, model: &GameModel) -> Result<ClosedLoop> {
        ClosedLoop::new(model, &self.riccati, &self.offset, &self.mean_field)
    }
}

/// What the iteration had reached when it gave up.
#[derive(Debug, Clone)]
pub struct NonConvergenceReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub iterates: Vec<MeanFieldPath>,
}

impl NonConvergenceReport {
    pub fn last_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Picard iteration `g^{k+1} = Υ(g^k)` from `g⁰ = S(t)ξ̄`.
pub fn fixed_point(model: &GameModel, tol: f64, max_iter: usize) -> Result<EquilibriumSolution> {
    let riccati = solve_riccati(model)?;
    let g0 = uncontrolled_mean(model)?;
    fixed_point_from(model, riccati, g0, tol, max_iter)
}

/// Picard iteration from an arbitrary initial iterate, reusing a Riccati solve.
pub fn fixed_point_from(
    model: &GameModel,
    riccati: RiccatiPath,
    g0: MeanFieldPath,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumSolution> {
    if !(tol > 0.0) {
        return Err(MfgError::Validation(vec![format!("fixed-point tolerance positive: {tol}")]));
    }
    if g0.values.len() != model.grid.n_nodes() {
        return Err(MfgError::dims("initial iterate nodes", model.grid.n_nodes(), g0.values.len()));
    }
    let mut g = g0;
    let mut residuals = Vec::new();
    let mut iterates = Vec::new();
    for it in 1..=max_iter {
        let offset = solve_offset(model, &riccati, &g)?;
        let next = propagate_mean(model, &riccati, &offset, &g)?;
        let r = next.sup_distance(&g);
        residuals.push(r);
        if r <= tol {
            return Ok(EquilibriumSolution {
                riccati,
                offset,
                mean_field: g,
                iterations: it,
                residual: r,
                residual_history: residuals,
            });
        }
        if !r.is_finite() {
            break;
        }
        iterates.push(std::mem::replace(&mut g, next));
    }
    iterates.push(g);
    Err(MfgError::NonConvergence(Box::new(NonConvergenceReport {
        iterations: residuals.len(),
        residuals,
        iterates,
    })))
}

/// Constants of the contraction condition for the fixed-point map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub horizon: f64,
    pub m_t: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub bounds: BoundSet,
    /// `C4 · exp(T M_T ‖B‖ C1 R6)`.
    pub lhs: f64,
    pub satisfied: bool,
    /// `T C6 exp(4 T M_T C6)` when the model has the toy structure.
    pub toy_lhs: Option<f64>,
}

/// The certificate for the model's own horizon.
pub fn certify_contraction(model: &GameModel) -> ContractionCertificate {
    certify_at_horizon(model, model.horizon())
}

/// The certificate with `T` replaced by `horizon`.
pub fn certify_at_horizon(model: &GameModel, horizon: f64) -> ContractionCertificate {
    let bs = compute_bounds(model);
    let t = horizon;
    let m_t = model.generator.m_t(t);
    let c1 = 2.0 * m_t * m_t * (8.0 * t * m_t * m_t * bs.norm_d * bs.norm_d * bs.trace_q).exp() * (bs.norm_g + t * bs.norm_m);
    let c2 = c1 * (bs.r1 * bs.norm_f2 + c1 * bs.r6 * bs.r2 * bs.norm_f2 + bs.norm_f1) + bs.norm_m * bs.norm_fhat1;
    let c3 = c1 * bs.r6 * bs.norm_b;
    let c4 = t
        * m_t
        * (m_t * bs.norm_b * bs.norm_b * (t * c2 + bs.norm_g * bs.norm_fhat2) * (m_t * t * c3).exp()
            + c1 * bs.r2 * bs.norm_b * bs.norm_f2
            + bs.norm_f1);
    let lhs = c4 * (t * m_t * bs.norm_b * c1 * bs.r6).exp();
    let toy_lhs = is_toy_structure(model).then(|| {
        let c6 = 2.0 * m_t * m_t * bs.norm_b * bs.norm_b * (bs.norm_g + t * bs.norm_m);
        t * c6 * (4.0 * t * m_t * c6).exp()
    });
    ContractionCertificate { horizon: t, m_t, c1, c2, c3, c4, bounds: bs, lhs, satisfied: lhs < 1.0, toy_lhs }
}

/// `F1 = F2 = D = E = 0` and `F̂1 = F̂2 = I`.
pub fn is_toy_structure(model: &GameModel) -> bool {
    let zero = |m: &nalgebra::DMatrix<f64>| m.iter().all(|v| *v == 0.0);
    let ident = |m: &nalgebra::DMatrix<f64>| m.is_square() && *m == nalgebra::DMatrix::identity(m.nrows(), m.ncols());
    let c = &model.couplings;
    zero(model.f1.matrix())
        && c.f2.iter().all(zero)
        && c.d.iter().all(zero)
        && c.e.iter().all(zero)
        && ident(model.fhat1.matrix())
        && ident(model.fhat2.matrix())
}

/// Largest horizon in `(0, t_max]`, to resolution `1e-4 t_max`, at which the
/// contraction condition holds. The left-hand side increases with `T`, so
/// bisection applies.
pub fn feasibility_horizon(model: &GameModel, t_max: f64) -> Result<f64> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(MfgError::Validation(vec![format!("horizon search bound positive: {t_max}")]));
    }
    let ok = |t: f64| certify_at_horizon(model, t).satisfied;
    if ok(t_max) {
        return Ok(t_max);
    }
    let t_min = 1e-6 * t_max;
    if !ok(t_min) {
        return Err(MfgError::InfeasibleModel { t_min, t_max });
    }
    let (mut lo, mut hi) = (t_min, t_max);
    while hi - lo > 1e-4 * t_max {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
