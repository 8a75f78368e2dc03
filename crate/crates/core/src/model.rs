//! The full operator description of the LQ game in truncated coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{MfgError, Result};
use crate::noise::TimeGrid;
use crate::spectral::{
    min_symmetric_eigenvalue, BasisTruncation, CovarianceSpectrum, GeneratorSpec, GrowthBound, LinearOperatorRep,
    NoiseCouplings, OperatorRole,
};

pub const DEFAULT_SUBSTEPS: usize = 4;

/// Dynamics `dx = (Ax + Bu + F1 x̄)dt + Σ_j (D_j x + E_j u + F2_j x̄ + σ_j) dβ_j`
/// with running cost `|M^{1/2}(x − F̂1 x̄)|² + |u|²` and terminal cost
/// `|G^{1/2}(x(T) − F̂2 x̄(T))|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameModel {
    pub trunc: BasisTruncation,
    pub generator: GeneratorSpec,
    pub b: LinearOperatorRep,
    pub couplings: NoiseCouplings,
    pub f1: LinearOperatorRep,
    pub fhat1: LinearOperatorRep,
    pub fhat2: LinearOperatorRep,
    pub m: LinearOperatorRep,
    pub g: LinearOperatorRep,
    pub spectrum: CovarianceSpectrum,
    pub grid: TimeGrid,
    pub init_mean: DVector<f64>,
    pub init_cov_scale: f64,
    /// Runge–Kutta substeps per grid step for the Riccati and offset solves.
    pub substeps: usize,
}

fn op(role: OperatorRole, m: DMatrix<f64>) -> LinearOperatorRep {
    LinearOperatorRep::new_unchecked(role, m)
}

impl GameModel {
    /// A model with every operator zero, `A = 0`, unit noise spectrum and
    /// zero initial law; a starting point for building test cases.
    pub fn zeros(trunc: BasisTruncation, grid: TimeGrid) -> Self {
        let (n, m, r) = (trunc.n_state, trunc.n_control, trunc.n_noise);
        Self {
            trunc,
            generator: GeneratorSpec::diagonal(vec![0.0; n], GrowthBound::default()),
            b: op(OperatorRole::ControlToState, DMatrix::zeros(n, m)),
            couplings: NoiseCouplings::zeros(&trunc),
            f1: op(OperatorRole::StateToState, DMatrix::zeros(n, n)),
            fhat1: op(OperatorRole::StateToState, DMatrix::zeros(n, n)),
            fhat2: op(OperatorRole::StateToState, DMatrix::zeros(n, n)),
            m: op(OperatorRole::StateToState, DMatrix::zeros(n, n)),
            g: op(OperatorRole::StateToState, DMatrix::zeros(n, n)),
            spectrum: CovarianceSpectrum::new(vec![1.0; r]).expect("unit spectrum"),
            grid,
            init_mean: DVector::zeros(n),
            init_cov_scale: 0.0,
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    pub fn n_state(&self) -> usize {
        self.trunc.n_state
    }

    pub fn n_control(&self) -> usize {
        self.trunc.n_control
    }

    pub fn n_noise(&self) -> usize {
        self.trunc.n_noise
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn set_b(&mut self, m: DMatrix<f64>) {
        self.b = op(OperatorRole::ControlToState, m);
    }

    pub fn set_state_op(&mut self, which: StateOperator, m: DMatrix<f64>) {
        let target = match which {
            StateOperator::F1 => &mut self.f1,
            StateOperator::Fhat1 => &mut self.fhat1,
            StateOperator::Fhat2 => &mut self.fhat2,
            StateOperator::M => &mut self.m,
            StateOperator::G => &mut self.g,
        };
        *target = op(OperatorRole::StateToState, m);
    }

    /// Same model on `[0, horizon]` with the same number of steps.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        let mut out = self.clone();
        out.grid = TimeGrid::new(horizon, self.grid.n_steps())?;
        Ok(out)
    }

    /// Every invariant violation, each message starting with the invariant name.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let t = &self.trunc;
        let (n, r) = (t.n_state, t.n_noise);
        if n == 0 || t.n_control == 0 || r == 0 {
            bad.push("truncation dimensions positive".to_string());
        }
        if self.generator.dim() != n {
            bad.push(format!("generator dimension equals n_state: {} vs {n}", self.generator.dim()));
        }
        if let crate::spectral::GeneratorKind::Dense(a) = &self.generator.kind {
            if a.nrows() != a.ncols() {
                bad.push("generator dimension equals n_state: dense generator not square".to_string());
            }
        }
        let ops: [(&str, &LinearOperatorRep, OperatorRole); 6] = [
            ("B", &self.b, OperatorRole::ControlToState),
            ("F1", &self.f1, OperatorRole::StateToState),
            ("Fhat1", &self.fhat1, OperatorRole::StateToState),
            ("Fhat2", &self.fhat2, OperatorRole::StateToState),
            ("M", &self.m, OperatorRole::StateToState),
            ("G", &self.g, OperatorRole::StateToState),
        ];
        for (name, o, role) in ops {
            let want = role.shape(t);
            if o.matrix().shape() != want {
                bad.push(format!("{name} shape: expected {want:?}, found {:?}", o.matrix().shape()));
            } else if !o.matrix().iter().all(|v| v.is_finite()) {
                bad.push(format!("{name} entries finite"));
            }
        }
        for (name, o) in [("M", &self.m), ("G", &self.g)] {
            let mat = o.matrix();
            if mat.shape() == (n, n) && mat.iter().all(|v| v.is_finite()) {
                let asym = (mat - mat.transpose()).abs().max();
                let scale = mat.abs().max().max(1.0);
                if asym > 1e-10 * scale {
                    bad.push(format!("{name} symmetric PSD: asymmetry {asym:.3e}"));
                } else if min_symmetric_eigenvalue(mat) < -1e-10 * scale {
                    bad.push(format!("{name} symmetric PSD: negative eigenvalue {:.3e}", min_symmetric_eigenvalue(mat)));
                }
            }
        }
        bad.extend(self.couplings.violations(t));
        if self.spectrum.len() != r {
            bad.push(format!("covariance spectrum length equals n_noise: {} vs {r}", self.spectrum.len()));
        }
        if self.init_mean.len() != n {
            bad.push(format!("initial mean length equals n_state: {} vs {n}", self.init_mean.len()));
        }
        if !(self.init_cov_scale.is_finite() && self.init_cov_scale >= 0.0) {
            bad.push(format!("initial spread nonnegative: {}", self.init_cov_scale));
        }
        if self.substeps == 0 {
            bad.push("integrator substeps >= 1".to_string());
        }
        if self.generator.dim() == n {
            match self.generator.growth_violations(&self.grid) {
                Ok(v) => bad.extend(v),
                Err(e) => bad.push(format!("semigroup growth bound: {e}")),
            }
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(MfgError::Validation(bad))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateOperator {
    F1,
    Fhat1,
    Fhat2,
    M,
    G,
}
