//! Operator Riccati and offset equations of the LQ best-response problem.
//!
//! Both are stored in reversed time `s = T − t`, so `Π(0) = G` and
//! `q(0) = −G F̂2 g(T)`. Public accessors that take a forward grid index do
//! the translation.

use nalgebra::{DMatrix, DVector};

use crate::error::{MfgError, Result};
use crate::mean_field::MeanFieldPath;
use crate::model::GameModel;
use crate::spectral::{delta1, delta2, delta3, gamma1, gamma2, operator_norm, symmetrize, NoiseCouplings};

const BLOWUP_NORM: f64 = 1e12;
const PSD_TOL: f64 = 1e-9;

/// `Π(s_k)` on the reversed-time grid, with dense output between substeps.
#[derive(Debug, Clone)]
pub struct RiccatiPath {
    values: Vec<DMatrix<f64>>,
    fine: Vec<DMatrix<f64>>,
    fine_deriv: Vec<DMatrix<f64>>,
    substeps: usize,
    max_norm: f64,
}

impl RiccatiPath {
    /// `Π(s_k)` for `k = 0..=n_steps`, reversed time.
    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn at_reversed(&self, k: usize) -> &DMatrix<f64> {
        &self.values[k]
    }

    /// `Π(T − t_k)`.
    pub fn at_forward(&self, k: usize) -> &DMatrix<f64> {
        &self.values[self.values.len() - 1 - k]
    }

    pub fn max_norm(&self) -> f64 {
        self.max_norm
    }

    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    /// `Π` at substep point `i` and at the midpoint towards `i + 1` by cubic
    /// Hermite interpolation.
    fn substep(&self, i: usize, h: f64) -> (&DMatrix<f64>, DMatrix<f64>, &DMatrix<f64>) {
        let (p0, p1) = (&self.fine[i], &self.fine[i + 1]);
        let mid = (p0 + p1) * 0.5 + (&self.fine_deriv[i] - &self.fine_deriv[i + 1]) * (h / 8.0);
        (p0, mid, p1)
    }
}

/// Feedback gains at one time.
#[derive(Debug, Clone)]
pub struct GainSnapshot {
    pub k: DMatrix<f64>,
    pub k_inv: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub affine: Option<AffineGains>,
}

/// The mean-field dependent parts of the closed loop:
/// `τ = K⁻¹(Bᵀq + Γ2)`, `ψ = BK⁻¹Γ2 − F1 g`, `φ_j = −E_j K⁻¹Γ2 + F2_j g + σ_j`.
#[derive(Debug, Clone)]
pub struct AffineGains {
    pub tau: DVector<f64>,
    pub psi: DVector<f64>,
    pub phi_fam: Vec<DVector<f64>>,
}

/// `K = I + Δ3(Π)` and `L = BᵀΠ + Δ1(Π)`.
fn k_and_l(b: &DMatrix<f64>, c: &NoiseCouplings, pi: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = b.ncols();
    let mut k = DMatrix::identity(m, m) + delta3(pi, c);
    symmetrize(&mut k);
    let l = b.transpose() * pi + delta1(pi, c);
    (k, l)
}

fn spd_inverse(k: &DMatrix<f64>) -> DMatrix<f64> {
    match k.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => k.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(k.nrows(), k.ncols(), f64::NAN)),
    }
}

struct RiccatiData {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    m: DMatrix<f64>,
    couplings: NoiseCouplings,
}

impl RiccatiData {
    fn new(model: &GameModel) -> Self {
        Self {
            a: model.generator.matrix(),
            b: model.b.matrix().clone(),
            m: model.m.matrix().clone(),
            couplings: model.couplings.clone(),
        }
    }

    fn rhs(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        let (k, l) = k_and_l(&self.b, &self.couplings, pi);
        let kinv_l = match k.clone().cholesky() {
            Some(ch) => ch.solve(&l),
            None => k.lu().solve(&l).unwrap_or_else(|| DMatrix::from_element(l.nrows(), l.ncols(), f64::NAN)),
        };
        let at_pi = self.a.transpose() * pi;
        &at_pi + at_pi.transpose() - l.transpose() * kinv_l + delta2(pi, &self.couplings) + &self.m
    }
}

fn sym_check(pi: &DMatrix<f64>, index: usize, s: f64) -> Result<f64> {
    if !pi.iter().all(|v| v.is_finite()) {
        return Err(MfgError::SolverInstability { what: "riccati", index, detail: "non-finite entries".into() });
    }
    let eig = pi.clone().symmetric_eigenvalues();
    let norm = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if norm > BLOWUP_NORM {
        return Err(MfgError::HorizonTooLong { s, norm });
    }
    let min = eig.min();
    if min < -PSD_TOL * norm.max(1.0) {
        return Err(MfgError::SolverInstability {
            what: "riccati",
            index,
            detail: format!("lost positivity, min eigenvalue {min:.3e}"),
        });
    }
    Ok(norm)
}

/// Integrates `dΠ/ds = AᵀΠ + ΠA − LᵀK⁻¹L + Δ2(Π) + M`, `Π(0) = G`, by RK4
/// with `model.substeps` substeps per grid step.
pub fn solve_riccati(model: &GameModel) -> Result<RiccatiPath> {
    let data = RiccatiData::new(model);
    let grid = &model.grid;
    let subs = model.substeps.max(1);
    let h = grid.dt() / subs as f64;

    let mut pi = model.g.matrix().clone();
    symmetrize(&mut pi);
    let mut max_norm = sym_check(&pi, 0, 0.0)?;
    let mut values = Vec::with_capacity(grid.n_nodes());
    let mut fine = Vec::with_capacity(grid.n_steps() * subs + 1);
    let mut fine_deriv = Vec::with_capacity(grid.n_steps() * subs + 1);
    values.push(pi.clone());

    let mut k1 = data.rhs(&pi);
    for step in 0..grid.n_steps() {
        for _ in 0..subs {
            fine.push(pi.clone());
            fine_deriv.push(k1.clone());
            let k2 = data.rhs(&(&pi + &k1 * (0.5 * h)));
            let k3 = data.rhs(&(&pi + &k2 * (0.5 * h)));
            let k4 = data.rhs(&(&pi + &k3 * h));
            pi += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            symmetrize(&mut pi);
            if !pi.iter().all(|v| v.is_finite()) {
                return Err(MfgError::SolverInstability {
                    what: "riccati",
                    index: step + 1,
                    detail: "non-finite entries".into(),
                });
            }
            k1 = data.rhs(&pi);
        }
        let s = grid.time(step + 1);
        max_norm = max_norm.max(sym_check(&pi, step + 1, s)?);
        values.push(pi.clone());
    }
    fine.push(pi);
    fine_deriv.push(k1);
    Ok(RiccatiPath { values, fine, fine_deriv, substeps: subs, max_norm })
}

/// `K` and `L` at reversed-time index `s`.
pub fn gains_at(model: &GameModel, riccati: &RiccatiPath, s: usize) -> Result<GainSnapshot> {
    if s >= riccati.values.len() {
        return Err(MfgError::IndexOutOfRange { context: "gains_at", index: s, len: riccati.values.len() });
    }
    let (k, l) = k_and_l(model.b.matrix(), &model.couplings, &riccati.values[s]);
    let k_inv = spd_inverse(&k);
    Ok(GainSnapshot { k, k_inv, l, affine: None })
}

/// Gains at forward index `t` including `τ`, `ψ`, `φ` for the input `g`.
pub fn full_gains_at(
    model: &GameModel,
    riccati: &RiccatiPath,
    offset: &OffsetPath,
    g: &MeanFieldPath,
    t: usize,
) -> Result<GainSnapshot> {
    let n = model.grid.n_steps();
    if t > n {
        return Err(MfgError::IndexOutOfRange { context: "full_gains_at", index: t, len: n + 1 });
    }
    let mut snap = gains_at(model, riccati, n - t)?;
    let gt = &g.values()[t];
    let c = &model.couplings;
    let gamma = gamma2(riccati.at_forward(t), &c.p_family(gt), c);
    let kinv_gamma = &snap.k_inv * &gamma;
    let tau = &snap.k_inv * (model.b.matrix().transpose() * offset.at_forward(t) + &gamma);
    let psi = model.b.matrix() * &kinv_gamma - model.f1.matrix() * gt;
    let phi_fam = c
        .e
        .iter()
        .zip(c.f2.iter().zip(&c.sigma))
        .map(|(e, (f2, sig))| -(e * &kinv_gamma) + f2 * gt + sig)
        .collect();
    snap.affine = Some(AffineGains { tau, psi, phi_fam });
    Ok(snap)
}

/// `q(s_k)` on the reversed-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetPath {
    values: Vec<DVector<f64>>,
}

impl OffsetPath {
    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn at_reversed(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    /// `q(T − t_k)`.
    pub fn at_forward(&self, k: usize) -> &DVector<f64> {
        &self.values[self.values.len() - 1 - k]
    }
}

/// `g` at forward time `t`, linear between nodes.
fn interpolate(g: &MeanFieldPath, dt: f64, t: f64) -> DVector<f64> {
    let vals = g.values();
    let n = vals.len() - 1;
    let x = (t / dt).clamp(0.0, n as f64);
    let k = (x.floor() as usize).min(n.saturating_sub(1));
    let w = x - k as f64;
    if n == 0 || w == 0.0 {
        return vals[k].clone();
    }
    &vals[k] * (1.0 - w) + &vals[k + 1] * w
}

/// Integrates, in reversed time,
/// `dq/ds = (Aᵀ − LᵀK⁻¹Bᵀ)q + Γ1 − LᵀK⁻¹Γ2 + (ΠF1 − MF̂1) g(T − s)`
/// with `q(0) = −G F̂2 g(T)` and `p = F2 g + σ`.
pub fn solve_offset(model: &GameModel, riccati: &RiccatiPath, g: &MeanFieldPath) -> Result<OffsetPath> {
    let grid = &model.grid;
    if g.values().len() != grid.n_nodes() || riccati.values.len() != grid.n_nodes() {
        return Err(MfgError::dims("solve_offset grid nodes", grid.n_nodes(), g.values().len()));
    }
    let subs = riccati.substeps;
    let h = grid.dt() / subs as f64;
    let horizon = grid.horizon();
    let a_t = model.generator.matrix().transpose();
    let b = model.b.matrix();
    let c = &model.couplings;
    let f1 = model.f1.matrix();
    let m_fhat1 = model.m.matrix() * model.fhat1.matrix();

    // The affine source and linear coefficient at reversed time s with Π given.
    let coeffs = |pi: &DMatrix<f64>, s: f64| -> (DMatrix<f64>, DVector<f64>) {
        let gt = interpolate(g, grid.dt(), horizon - s);
        let (k, l) = k_and_l(b, c, pi);
        let lt_kinv = (spd_inverse(&k) * &l).transpose();
        let p = c.p_family(&gt);
        let lin = &a_t - &lt_kinv * b.transpose();
        let src = gamma1(pi, &p, c) - &lt_kinv * gamma2(pi, &p, c) + (pi * f1 - &m_fhat1) * gt;
        (lin, src)
    };

    let mut q = -(model.g.matrix() * model.fhat2.matrix() * &g.values()[grid.n_steps()]);
    let mut values = Vec::with_capacity(grid.n_nodes());
    values.push(q.clone());
    for step in 0..grid.n_steps() {
        for sub in 0..subs {
            let i = step * subs + sub;
            let s0 = grid.time(step) + sub as f64 * h;
            let (p0, pm, p1) = riccati.substep(i, h);
            let (l0, c0) = coeffs(p0, s0);
            let (lm, cm) = coeffs(&pm, s0 + 0.5 * h);
            let (l1, c1) = coeffs(p1, s0 + h);
            let k1 = &l0 * &q + c0;
            let k2 = &lm * (&q + &k1 * (0.5 * h)) + &cm;
            let k3 = &lm * (&q + &k2 * (0.5 * h)) + cm;
            let k4 = &l1 * (&q + &k3 * h) + c1;
            q += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(MfgError::SolverInstability { what: "offset", index: step + 1, detail: "non-finite".into() });
        }
        values.push(q.clone());
    }
    Ok(OffsetPath { values })
}

/// The equilibrium control `u = −K⁻¹[Lx + Γ2((F2 g + σ)*Π) + Bᵀq]` at
/// forward grid index `t`.
pub fn feedback_control(
    model: &GameModel,
    riccati: &RiccatiPath,
    offset: &OffsetPath,
    g: &MeanFieldPath,
    x: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    let snap = full_gains_at(model, riccati, offset, g, t)?;
    let tau = snap.affine.expect("affine gains").tau;
    Ok(-(&snap.k_inv * (&snap.l * x)) - tau)
}

/// Per-node closed-loop data in forward time, precomputed once for
/// simulation and mean propagation.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    /// `S(Δt)`.
    pub step: DMatrix<f64>,
    /// `K⁻¹(T − t_k) L(T − t_k)`.
    pub kinv_l: Vec<DMatrix<f64>>,
    pub k_inv: Vec<DMatrix<f64>>,
    /// `Bᵀ q(T − t_k)`.
    pub bt_q: Vec<DVector<f64>>,
    /// `τ(t_k)` for the mean field the table was built with.
    pub tau: Vec<DVector<f64>>,
}

impl ClosedLoop {
    pub fn new(model: &GameModel, riccati: &RiccatiPath, offset: &OffsetPath, g: &MeanFieldPath) -> Result<Self> {
        let n = model.grid.n_steps();
        let b_t = model.b.matrix().transpose();
        let c = &model.couplings;
        let mut out = Self {
            step: model.generator.semigroup(model.grid.dt())?,
            kinv_l: Vec::with_capacity(n + 1),
            k_inv: Vec::with_capacity(n + 1),
            bt_q: Vec::with_capacity(n + 1),
            tau: Vec::with_capacity(n + 1),
        };
        for t in 0..=n {
            let snap = gains_at(model, riccati, n - t)?;
            let bt_q = &b_t * offset.at_forward(t);
            let gamma = gamma2(riccati.at_forward(t), &c.p_family(&g.values()[t]), c);
            out.tau.push(&snap.k_inv * (&bt_q + gamma));
            out.kinv_l.push(&snap.k_inv * &snap.l);
            out.k_inv.push(snap.k_inv);
            out.bt_q.push(bt_q);
        }
        Ok(out)
    }

    /// `u = −K⁻¹L x − τ` at forward index `k`.
    pub fn control(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        -(&self.kinv_l[k] * x) - &self.tau[k]
    }
}

/// Largest `‖Π(s)‖` recomputed by singular values, as a cross-check of
/// [`RiccatiPath::max_norm`].
pub fn riccati_sup_norm(path: &RiccatiPath) -> f64 {
    path.values.iter().map(operator_norm).fold(0.0, f64::max)
}
