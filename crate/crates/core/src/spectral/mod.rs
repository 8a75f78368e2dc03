//! Truncated spectral representation of the state, control and noise spaces.
//!
//! Every Hilbert space is replaced by a finite coordinate block: `H ≅ ℝⁿ`,
//! `U ≅ ℝᵐ`, and the noise space `V` by the first `r` eigenmodes of the
//! covariance `Q`. Operators are dense real matrices tagged with the pair of
//! spaces they map between.
//!
//! Noise couplings follow the mode decomposition `D_j x = √λ_j (Dx) e_j`, so
//! every family member already carries its `√λ_j` factor and multiplies the
//! standard Brownian increment of mode `j`.

mod expm;

pub use expm::expm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::model::GameModel;
use crate::noise::TimeGrid;

/// Dimensions of the truncated state, control and noise spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTruncation {
    pub n_state: usize,
    pub n_control: usize,
    pub n_noise: usize,
}

impl BasisTruncation {
    pub fn new(n_state: usize, n_control: usize, n_noise: usize) -> Result<Self> {
        let mut bad = Vec::new();
        for (name, v) in [("n_state", n_state), ("n_control", n_control), ("n_noise", n_noise)] {
            if v == 0 {
                bad.push(format!("truncation dimensions positive: {name} = 0"));
            }
        }
        if bad.is_empty() {
            Ok(Self { n_state, n_control, n_noise })
        } else {
            Err(MfgError::Validation(bad))
        }
    }
}

/// Retained eigenvalues `λ_j` of the noise covariance `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpectrum {
    eigenvalues: Vec<f64>,
}

impl CovarianceSpectrum {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        let mut bad = Vec::new();
        if eigenvalues.is_empty() {
            bad.push("covariance eigenvalues positive: no modes retained".to_string());
        }
        for (j, &l) in eigenvalues.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                bad.push(format!("covariance eigenvalues positive: lambda[{j}] = {l}"));
            }
        }
        if bad.is_empty() {
            Ok(Self { eigenvalues })
        } else {
            Err(MfgError::Validation(bad))
        }
    }

    /// `λ_j = scale · j^(−exponent)` for `j = 1..=n_modes`, together with the
    /// mass `Σ_{j > n_modes} λ_j` discarded by the truncation.
    pub fn power_law(scale: f64, exponent: f64, n_modes: usize) -> Result<(Self, f64)> {
        if !(exponent > 1.0) {
            return Err(MfgError::Validation(vec![format!(
                "covariance trace finite: power-law exponent {exponent} must exceed 1"
            )]));
        }
        let eig = (1..=n_modes).map(|j| scale * (j as f64).powf(-exponent)).collect();
        let spectrum = Self::new(eig)?;
        Ok((spectrum, scale * zeta_tail(exponent, n_modes)))
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// `Σ_{j > n} j^(−p)` by direct summation of the first terms plus an
/// Euler–Maclaurin remainder.
fn zeta_tail(p: f64, n: usize) -> f64 {
    let direct_terms = 1000usize;
    let mut sum = 0.0;
    for j in (n + 1)..=(n + direct_terms) {
        sum += (j as f64).powf(-p);
    }
    let m = (n + direct_terms) as f64;
    // ∫_m^∞ x^(−p) dx − f(m)/2 − f'(m)/12
    sum + m.powf(1.0 - p) / (p - 1.0) - 0.5 * m.powf(-p) + p * m.powf(-p - 1.0) / 12.0
}

/// Growth constants with `‖S(t)‖ ≤ M_A e^{αt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub m_a: f64,
    pub alpha: f64,
}

impl Default for GrowthBound {
    fn default() -> Self {
        Self { m_a: 1.0, alpha: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorKind {
    /// Generator diagonal in the state basis, `A e_k = a_k e_k`.
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

/// The semigroup generator `A` together with its declared growth bound.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub growth: GrowthBound,
}

impl GeneratorSpec {
    pub fn diagonal(eigenvalues: Vec<f64>, growth: GrowthBound) -> Self {
        Self { kind: GeneratorKind::Diagonal(DVector::from_vec(eigenvalues)), growth }
    }

    pub fn dense(matrix: DMatrix<f64>, growth: GrowthBound) -> Self {
        Self { kind: GeneratorKind::Dense(matrix), growth }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            GeneratorKind::Diagonal(d) => d.len(),
            GeneratorKind::Dense(m) => m.nrows(),
        }
    }

    /// The generator as a dense matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.kind {
            GeneratorKind::Diagonal(d) => DMatrix::from_diagonal(d),
            GeneratorKind::Dense(m) => m.clone(),
        }
    }

    /// `S(t) = e^{tA}`.
    pub fn semigroup(&self, t: f64) -> Result<DMatrix<f64>> {
        if !(t >= 0.0) {
            return Err(MfgError::dims("semigroup time", "t >= 0", t));
        }
        let s = match &self.kind {
            GeneratorKind::Diagonal(d) => DMatrix::from_diagonal(&d.map(|a| (a * t).exp())),
            GeneratorKind::Dense(m) => {
                expm(&(m * t)).ok_or(MfgError::GeneratorOverflow { t })?
            }
        };
        if s.iter().all(|v| v.is_finite()) {
            Ok(s)
        } else {
            Err(MfgError::GeneratorOverflow { t })
        }
    }

    /// `M_T = M_A e^{αT}`.
    pub fn m_t(&self, horizon: f64) -> f64 {
        self.growth.m_a * (self.growth.alpha * horizon).exp()
    }

    /// Largest `‖S(t_k)‖` over the grid nodes.
    pub fn max_grid_norm(&self, grid: &TimeGrid) -> Result<f64> {
        let step = self.semigroup(grid.dt())?;
        let mut s = DMatrix::identity(self.dim(), self.dim());
        let mut max = operator_norm(&s);
        for _ in 0..grid.n_steps() {
            s = &step * &s;
            max = max.max(operator_norm(&s));
        }
        Ok(max)
    }

    /// Violations of `‖S(t_k)‖ ≤ M_A e^{α t_k}` on the grid, beyond 1e-6.
    pub fn growth_violations(&self, grid: &TimeGrid) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        if !(self.growth.m_a >= 1.0) || !(self.growth.alpha >= 0.0) {
            bad.push(format!(
                "semigroup growth bound: need M_A >= 1 and alpha >= 0, got ({}, {})",
                self.growth.m_a, self.growth.alpha
            ));
            return Ok(bad);
        }
        let step = self.semigroup(grid.dt())?;
        let n = self.dim();
        let mut s = DMatrix::identity(n, n);
        for k in 0..=grid.n_steps() {
            if k > 0 {
                s = &step * &s;
            }
            let t = grid.time(k);
            let norm = operator_norm(&s);
            let bound = self.growth.m_a * (self.growth.alpha * t).exp();
            if norm > bound + 1e-6 {
                bad.push(format!(
                    "semigroup growth bound: ||S({t})|| = {norm:.9} exceeds M_A e^(alpha t) = {bound:.9}"
                ));
                break;
            }
        }
        Ok(bad)
    }
}

/// Evaluates `S(t)` as a state-to-state operator.
pub fn semigroup_at(gen: &GeneratorSpec, t: f64) -> Result<LinearOperatorRep> {
    Ok(LinearOperatorRep::new_unchecked(OperatorRole::StateToState, gen.semigroup(t)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorRole {
    StateToState,
    ControlToState,
    StateToControl,
    ControlToControl,
}

impl OperatorRole {
    /// `(rows, cols)` the role requires.
    pub fn shape(self, trunc: &BasisTruncation) -> (usize, usize) {
        let (n, m) = (trunc.n_state, trunc.n_control);
        match self {
            OperatorRole::StateToState => (n, n),
            OperatorRole::ControlToState => (n, m),
            OperatorRole::StateToControl => (m, n),
            OperatorRole::ControlToControl => (m, m),
        }
    }
}

/// A real matrix tagged with the spaces it maps between.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperatorRep {
    role: OperatorRole,
    matrix: DMatrix<f64>,
}

impl LinearOperatorRep {
    pub fn new(role: OperatorRole, matrix: DMatrix<f64>, trunc: &BasisTruncation) -> Result<Self> {
        let want = role.shape(trunc);
        let got = matrix.shape();
        if want != got {
            return Err(MfgError::dims(format!("{role:?} operator"), format!("{want:?}"), format!("{got:?}")));
        }
        Ok(Self { role, matrix })
    }

    pub(crate) fn new_unchecked(role: OperatorRole, matrix: DMatrix<f64>) -> Self {
        Self { role, matrix }
    }

    pub fn role(&self) -> OperatorRole {
        self.role
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn norm(&self) -> f64 {
        operator_norm(&self.matrix)
    }
}

/// Mode-decomposed noise couplings `D_j`, `E_j`, `σ_j`, `F2_j`, one entry per
/// retained noise mode, each including its `√λ_j` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCouplings {
    pub d: Vec<DMatrix<f64>>,
    pub e: Vec<DMatrix<f64>>,
    pub sigma: Vec<DVector<f64>>,
    pub f2: Vec<DMatrix<f64>>,
}

impl NoiseCouplings {
    pub fn zeros(trunc: &BasisTruncation) -> Self {
        let (n, m, r) = (trunc.n_state, trunc.n_control, trunc.n_noise);
        Self {
            d: vec![DMatrix::zeros(n, n); r],
            e: vec![DMatrix::zeros(n, m); r],
            sigma: vec![DVector::zeros(n); r],
            f2: vec![DMatrix::zeros(n, n); r],
        }
    }

    pub fn n_modes(&self) -> usize {
        self.d.len()
    }

    /// Invariant violations against the truncation, one message per problem.
    pub fn violations(&self, trunc: &BasisTruncation) -> Vec<String> {
        let (n, m, r) = (trunc.n_state, trunc.n_control, trunc.n_noise);
        let mut bad = Vec::new();
        for (name, len) in [
            ("D_fam", self.d.len()),
            ("E_fam", self.e.len()),
            ("sigma_fam", self.sigma.len()),
            ("F2_fam", self.f2.len()),
        ] {
            if len != r {
                bad.push(format!("noise family length equals n_noise: {name} has {len} entries, n_noise = {r}"));
            }
        }
        let shape_check = |name: &str, fam: &[DMatrix<f64>], shape: (usize, usize), bad: &mut Vec<String>| {
            for (j, mat) in fam.iter().enumerate() {
                if mat.shape() != shape {
                    bad.push(format!("{name}[{j}] shape: expected {shape:?}, found {:?}", mat.shape()));
                } else if !mat.iter().all(|v| v.is_finite()) {
                    bad.push(format!("noise couplings finite: {name}[{j}]"));
                }
            }
        };
        shape_check("D_fam", &self.d, (n, n), &mut bad);
        shape_check("E_fam", &self.e, (n, m), &mut bad);
        shape_check("F2_fam", &self.f2, (n, n), &mut bad);
        for (j, s) in self.sigma.iter().enumerate() {
            if s.len() != n {
                bad.push(format!("sigma_fam[{j}] length: expected {n}, found {}", s.len()));
            } else if !s.iter().all(|v| v.is_finite()) {
                bad.push(format!("noise couplings finite: sigma_fam[{j}]"));
            }
        }
        bad
    }

    /// `p_j = F2_j g + σ_j`, the mode columns of `p = F2 g + σ`.
    pub fn p_family(&self, g: &DVector<f64>) -> Vec<DVector<f64>> {
        self.f2.iter().zip(&self.sigma).map(|(f, s)| f * g + s).collect()
    }

    pub fn has_control_noise(&self) -> bool {
        self.e.iter().any(|e| e.iter().any(|v| *v != 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RieszDelta {
    /// `Δ1(R) = Σ E_jᵀ R D_j`, mapping `H → U`.
    One,
    /// `Δ2(R) = Σ D_jᵀ R D_j`, mapping `H → H`.
    Two,
    /// `Δ3(R) = Σ E_jᵀ R E_j`, mapping `U → U`.
    Three,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RieszGamma {
    /// `Γ1(p*Π) = Σ D_jᵀ Π p_j ∈ H`.
    One,
    /// `Γ2(p*Π) = Σ E_jᵀ Π p_j ∈ U`.
    Two,
}

fn sandwich(left: &[DMatrix<f64>], r: &DMatrix<f64>, right: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = left.first().map_or(0, |l| l.ncols());
    let cols = right.first().map_or(0, |m| m.ncols());
    let mut acc = DMatrix::zeros(rows, cols);
    for (l, m) in left.iter().zip(right) {
        acc += l.transpose() * (r * m);
    }
    acc
}

pub(crate) fn delta1(r: &DMatrix<f64>, c: &NoiseCouplings) -> DMatrix<f64> {
    sandwich(&c.e, r, &c.d)
}

pub(crate) fn delta2(r: &DMatrix<f64>, c: &NoiseCouplings) -> DMatrix<f64> {
    sandwich(&c.d, r, &c.d)
}

pub(crate) fn delta3(r: &DMatrix<f64>, c: &NoiseCouplings) -> DMatrix<f64> {
    sandwich(&c.e, r, &c.e)
}

pub(crate) fn gamma1(pi: &DMatrix<f64>, p_fam: &[DVector<f64>], c: &NoiseCouplings) -> DVector<f64> {
    let mut acc = DVector::zeros(pi.nrows());
    for (d, p) in c.d.iter().zip(p_fam) {
        acc += d.transpose() * (pi * p);
    }
    acc
}

pub(crate) fn gamma2(pi: &DMatrix<f64>, p_fam: &[DVector<f64>], c: &NoiseCouplings) -> DVector<f64> {
    let m = c.e.first().map_or(0, |e| e.ncols());
    let mut acc = DVector::zeros(m);
    for (e, p) in c.e.iter().zip(p_fam) {
        acc += e.transpose() * (pi * p);
    }
    acc
}

fn check_square(r: &DMatrix<f64>, c: &NoiseCouplings, context: &str) -> Result<()> {
    let n = c.d.first().map_or(r.nrows(), |d| d.nrows());
    if r.nrows() != n || r.ncols() != n {
        return Err(MfgError::dims(context, format!("({n}, {n})"), format!("{:?}", r.shape())));
    }
    if c.d.len() != c.e.len() {
        return Err(MfgError::dims(context, format!("{} E modes", c.d.len()), c.e.len()));
    }
    Ok(())
}

/// The Riesz mappings `Δ1`, `Δ2`, `Δ3` applied to a state operator `R`.
pub fn riesz_delta(r: &LinearOperatorRep, couplings: &NoiseCouplings, which: RieszDelta) -> Result<LinearOperatorRep> {
    check_square(r.matrix(), couplings, "riesz_delta")?;
    let out = match which {
        RieszDelta::One => LinearOperatorRep::new_unchecked(OperatorRole::StateToControl, delta1(r.matrix(), couplings)),
        RieszDelta::Two => LinearOperatorRep::new_unchecked(OperatorRole::StateToState, delta2(r.matrix(), couplings)),
        RieszDelta::Three => {
            LinearOperatorRep::new_unchecked(OperatorRole::ControlToControl, delta3(r.matrix(), couplings))
        }
    };
    Ok(out)
}

/// The Riesz vectors `Γ1(p*Π)` and `Γ2(p*Π)` for the mode columns `p_fam`.
pub fn riesz_gamma(
    pi: &LinearOperatorRep,
    p_fam: &[DVector<f64>],
    couplings: &NoiseCouplings,
    which: RieszGamma,
) -> Result<DVector<f64>> {
    check_square(pi.matrix(), couplings, "riesz_gamma")?;
    if p_fam.len() != couplings.n_modes() {
        return Err(MfgError::dims("riesz_gamma p_fam", couplings.n_modes(), p_fam.len()));
    }
    if let Some(bad) = p_fam.iter().find(|p| p.len() != pi.matrix().nrows()) {
        return Err(MfgError::dims("riesz_gamma p_j", pi.matrix().nrows(), bad.len()));
    }
    Ok(match which {
        RieszGamma::One => gamma1(pi.matrix(), p_fam, couplings),
        RieszGamma::Two => gamma2(pi.matrix(), p_fam, couplings),
    })
}

/// Spectral norm (largest singular value).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Upper bound `(Σ_j λ_j⁻¹ ‖X_j‖²)^{1/2}` on the norm of an operator into
/// `L(V, H)` given by its mode family.
pub fn certified_family_norm(family: &[DMatrix<f64>], spectrum: &CovarianceSpectrum) -> f64 {
    family
        .iter()
        .zip(spectrum.eigenvalues())
        .map(|(x, l)| operator_norm(x).powi(2) / l)
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Operator norms and Riesz-mapping bounds `R1`–`R6` of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSet {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub r5: f64,
    pub r6: f64,
    pub norm_b: f64,
    pub norm_d: f64,
    pub norm_e: f64,
    pub norm_f1: f64,
    pub norm_f2: f64,
    pub norm_m: f64,
    pub norm_g: f64,
    pub norm_fhat1: f64,
    pub norm_fhat2: f64,
    pub trace_q: f64,
}

pub fn compute_bounds(model: &GameModel) -> BoundSet {
    let q = &model.spectrum;
    let c = &model.couplings;
    let trace_q = q.trace();
    let norm_b = model.b.norm();
    let norm_d = certified_family_norm(&c.d, q);
    let norm_e = certified_family_norm(&c.e, q);
    let norm_f2 = certified_family_norm(&c.f2, q);
    let r3 = trace_q * norm_d * norm_e;
    BoundSet {
        r1: trace_q * norm_d,
        r2: trace_q * norm_e,
        r3,
        r4: trace_q * norm_d * norm_d,
        r5: trace_q * norm_e * norm_e,
        r6: norm_b + r3,
        norm_b,
        norm_d,
        norm_e,
        norm_f1: model.f1.norm(),
        norm_f2,
        norm_m: model.m.norm(),
        norm_g: model.g.norm(),
        norm_fhat1: model.fhat1.norm(),
        norm_fhat2: model.fhat2.norm(),
        trace_q,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_generator_gives_identity() {
        let gen = GeneratorSpec::diagonal(vec![0.0, 0.0], GrowthBound::default());
        let s = semigroup_at(&gen, 1.0).unwrap();
        assert_eq!(s.matrix(), &DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn diagonal_semigroup_is_elementwise_exponential() {
        let gen = GeneratorSpec::diagonal(vec![-1.0, -4.0], GrowthBound::default());
        let s = gen.semigroup(0.5).unwrap();
        assert_relative_eq!(s[(0, 0)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(s[(1, 1)], (-2.0f64).exp(), epsilon = 1e-15);
        assert_eq!(s[(0, 1)], 0.0);
    }

    #[test]
    fn dense_nilpotent_semigroup() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let gen = GeneratorSpec::dense(a, GrowthBound { m_a: 1.0, alpha: 1.0 });
        let s = gen.semigroup(2.0).unwrap();
        assert_relative_eq!(s, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), epsilon = 1e-13);
        assert_eq!(gen.semigroup(0.0).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn semigroup_overflow_is_an_error() {
        let gen = GeneratorSpec::diagonal(vec![1000.0], GrowthBound::default());
        assert!(matches!(gen.semigroup(1.0), Err(MfgError::GeneratorOverflow { .. })));
        let dense = GeneratorSpec::dense(DMatrix::from_element(1, 1, 1000.0), GrowthBound::default());
        assert!(matches!(dense.semigroup(1.0), Err(MfgError::GeneratorOverflow { .. })));
    }

    #[test]
    fn semigroup_property_diagonal() {
        let gen = GeneratorSpec::diagonal(vec![-1.0, -4.0, -9.0, 0.3], GrowthBound { m_a: 1.0, alpha: 0.3 });
        for (t, s) in [(0.1, 0.25), (0.7, 1.3), (2.0, 0.05)] {
            let lhs = gen.semigroup(t + s).unwrap();
            let rhs = gen.semigroup(t).unwrap() * gen.semigroup(s).unwrap();
            assert!((lhs - rhs).abs().max() < 1e-9);
        }
    }

    #[test]
    fn growth_check_flags_understated_bound() {
        let gen = GeneratorSpec::diagonal(vec![0.5], GrowthBound { m_a: 1.0, alpha: 0.0 });
        let grid = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(gen.growth_violations(&grid).unwrap().len(), 1);
        let ok = GeneratorSpec::diagonal(vec![0.5], GrowthBound { m_a: 1.0, alpha: 0.5 });
        assert!(ok.growth_violations(&grid).unwrap().is_empty());
        assert_relative_eq!(ok.max_grid_norm(&grid).unwrap(), 0.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn operator_norm_examples() {
        assert_relative_eq!(operator_norm(&DMatrix::identity(5, 5)), 1.0, epsilon = 1e-14);
        assert_relative_eq!(operator_norm(&DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]))), 3.0, epsilon = 1e-14);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_relative_eq!(operator_norm(&nil), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn power_law_tail_mass() {
        // Σ_{j>2} j^-2 = π²/6 − 1 − 1/4
        let (q, tail) = CovarianceSpectrum::power_law(1.0, 2.0, 2).unwrap();
        assert_eq!(q.eigenvalues(), &[1.0, 0.25]);
        let exact = std::f64::consts::PI.powi(2) / 6.0 - 1.25;
        assert_relative_eq!(tail, exact, epsilon = 1e-12);
    }

    #[test]
    fn spectrum_rejects_nonpositive_modes() {
        let err = CovarianceSpectrum::new(vec![1.0, 0.0, -2.0]).unwrap_err();
        match err {
            MfgError::Validation(v) => assert_eq!(v.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_must_be_positive() {
        assert!(BasisTruncation::new(1, 1, 1).is_ok());
        assert!(BasisTruncation::new(0, 1, 0).is_err());
    }

    #[test]
    fn riesz_zero_inputs() {
        let trunc = BasisTruncation::new(3, 2, 2).unwrap();
        let mut c = NoiseCouplings::zeros(&trunc);
        c.d[0] = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        let zero = LinearOperatorRep::new(OperatorRole::StateToState, DMatrix::zeros(3, 3), &trunc).unwrap();
        for which in [RieszDelta::One, RieszDelta::Two, RieszDelta::Three] {
            assert!(riesz_delta(&zero, &c, which).unwrap().matrix().iter().all(|v| *v == 0.0));
        }
        // E ≡ 0 kills Δ1 and Δ3 for any R.
        let r = LinearOperatorRep::new(OperatorRole::StateToState, DMatrix::from_fn(3, 3, |i, j| (i * j + 1) as f64), &trunc)
            .unwrap();
        assert!(riesz_delta(&r, &c, RieszDelta::One).unwrap().matrix().iter().all(|v| *v == 0.0));
        assert!(riesz_delta(&r, &c, RieszDelta::Three).unwrap().matrix().iter().all(|v| *v == 0.0));
        assert_eq!(riesz_delta(&r, &c, RieszDelta::One).unwrap().role(), OperatorRole::StateToControl);
        let p_zero = vec![DVector::zeros(3); 2];
        assert!(riesz_gamma(&r, &p_zero, &c, RieszGamma::One).unwrap().iter().all(|v| *v == 0.0));
        let p = vec![DVector::from_element(3, 1.0); 2];
        assert!(riesz_gamma(&zero, &p, &c, RieszGamma::Two).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn riesz_dimension_errors() {
        let trunc = BasisTruncation::new(3, 2, 2).unwrap();
        let c = NoiseCouplings::zeros(&trunc);
        let r = LinearOperatorRep::new_unchecked(OperatorRole::StateToState, DMatrix::zeros(2, 2));
        assert!(matches!(riesz_delta(&r, &c, RieszDelta::Two), Err(MfgError::DimensionMismatch { .. })));
        let pi = LinearOperatorRep::new_unchecked(OperatorRole::StateToState, DMatrix::zeros(3, 3));
        assert!(riesz_gamma(&pi, &[DVector::zeros(3)], &c, RieszGamma::One).is_err());
        assert!(LinearOperatorRep::new(OperatorRole::ControlToState, DMatrix::zeros(3, 3), &trunc).is_err());
    }

    #[test]
    fn coupling_violations_name_family_length() {
        let trunc = BasisTruncation::new(2, 1, 2).unwrap();
        let mut c = NoiseCouplings::zeros(&trunc);
        c.d.pop();
        let v = c.violations(&trunc);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("noise family length equals n_noise"));
    }
}
