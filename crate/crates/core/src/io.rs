//! JSON model files.
//!
//! Matrices are row-major nested arrays. Noise families hold one entry per
//! retained mode and already include the `√λ_j` factor. Missing optional
//! operators default to zero.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::model::{GameModel, DEFAULT_SUBSTEPS};
use crate::noise::TimeGrid;
use crate::spectral::{
    BasisTruncation, CovarianceSpectrum, GeneratorKind, GeneratorSpec, GrowthBound, LinearOperatorRep, NoiseCouplings,
    OperatorRole,
};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncationDoc {
    n_state: usize,
    n_control: usize,
    n_noise: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum GeneratorDoc {
    Diagonal {
        eigenvalues: Vec<f64>,
        #[serde(default)]
        growth: GrowthBound,
    },
    Dense {
        matrix: Rows,
        #[serde(default)]
        growth: GrowthBound,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorsDoc {
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "F1", default, skip_serializing_if = "Option::is_none")]
    f1: Option<Rows>,
    #[serde(rename = "Fhat1", default, skip_serializing_if = "Option::is_none")]
    fhat1: Option<Rows>,
    #[serde(rename = "Fhat2", default, skip_serializing_if = "Option::is_none")]
    fhat2: Option<Rows>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerLawDoc {
    scale: f64,
    exponent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<f64>>,
    /// `λ_j = scale · j^(−exponent)`, truncated at `n_noise`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spectrum: Option<PowerLawDoc>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<Vec<Rows>>,
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    e: Option<Vec<Rows>>,
    #[serde(rename = "F2", default, skip_serializing_if = "Option::is_none")]
    f2: Option<Vec<Rows>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostDoc {
    #[serde(rename = "M")]
    m: Rows,
    #[serde(rename = "G")]
    g: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    horizon: f64,
    n_steps: usize,
    #[serde(default = "default_substeps")]
    substeps: usize,
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialDoc {
    mean: Vec<f64>,
    #[serde(default)]
    cov_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    truncation: TruncationDoc,
    generator: GeneratorDoc,
    operators: OperatorsDoc,
    noise: NoiseDoc,
    cost: CostDoc,
    grid: GridDoc,
    initial: InitialDoc,
}

/// Facts about a loaded file that are not part of the model itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelInfo {
    /// `Σ_{j > n_noise} λ_j` when the spectrum was given as a power law.
    pub discarded_tail_mass: Option<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: &Rows, bad: &mut Vec<String>) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        bad.push(format!("{name} rows of equal length"));
        return None;
    }
    Some(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn op_or_zero(name: &str, rows: &Option<Rows>, shape: (usize, usize), bad: &mut Vec<String>) -> DMatrix<f64> {
    match rows {
        Some(r) => matrix(name, r, bad).unwrap_or_else(|| DMatrix::zeros(shape.0, shape.1)),
        None => DMatrix::zeros(shape.0, shape.1),
    }
}

fn family(name: &str, fam: &Option<Vec<Rows>>, shape: (usize, usize), r: usize, bad: &mut Vec<String>) -> Vec<DMatrix<f64>> {
    match fam {
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(j, rows)| matrix(&format!("{name}[{j}]"), rows, bad).unwrap_or_else(|| DMatrix::zeros(shape.0, shape.1)))
            .collect(),
        None => vec![DMatrix::zeros(shape.0, shape.1); r],
    }
}

fn build(doc: ModelDoc) -> Result<(GameModel, ModelInfo)> {
    let t = &doc.truncation;
    let trunc = BasisTruncation::new(t.n_state, t.n_control, t.n_noise)?;
    let (n, m, r) = (t.n_state, t.n_control, t.n_noise);
    let mut bad = Vec::new();

    let generator = match &doc.generator {
        GeneratorDoc::Diagonal { eigenvalues, growth } => GeneratorSpec::diagonal(eigenvalues.clone(), *growth),
        GeneratorDoc::Dense { matrix: rows, growth } => {
            GeneratorSpec::dense(matrix("generator matrix", rows, &mut bad).unwrap_or_else(|| DMatrix::zeros(n, n)), *growth)
        }
    };

    let mut info = ModelInfo::default();
    let spectrum = match (&doc.noise.eigenvalues, &doc.noise.spectrum) {
        (Some(ev), None) => CovarianceSpectrum::new(ev.clone()),
        (None, Some(p)) => CovarianceSpectrum::power_law(p.scale, p.exponent, r).map(|(s, tail)| {
            info.discarded_tail_mass = Some(tail);
            s
        }),
        _ => Err(MfgError::Validation(vec!["noise spectrum given exactly once (eigenvalues or spectrum)".into()])),
    };
    let spectrum = match spectrum {
        Ok(s) => Some(s),
        Err(MfgError::Validation(v)) => {
            bad.extend(v);
            None
        }
        Err(e) => {
            bad.push(format!("covariance spectrum: {e}"));
            None
        }
    };

    let ops = &doc.operators;
    let b = matrix("B", &ops.b, &mut bad).unwrap_or_else(|| DMatrix::zeros(n, m));
    let f1 = op_or_zero("F1", &ops.f1, (n, n), &mut bad);
    let fhat1 = op_or_zero("Fhat1", &ops.fhat1, (n, n), &mut bad);
    let fhat2 = op_or_zero("Fhat2", &ops.fhat2, (n, n), &mut bad);
    let cm = matrix("M", &doc.cost.m, &mut bad).unwrap_or_else(|| DMatrix::zeros(n, n));
    let cg = matrix("G", &doc.cost.g, &mut bad).unwrap_or_else(|| DMatrix::zeros(n, n));
    let couplings = NoiseCouplings {
        d: family("D_fam", &doc.noise.d, (n, n), r, &mut bad),
        e: family("E_fam", &doc.noise.e, (n, m), r, &mut bad),
        sigma: match &doc.noise.sigma {
            Some(list) => list.iter().map(|v| DVector::from_vec(v.clone())).collect(),
            None => vec![DVector::zeros(n); r],
        },
        f2: family("F2_fam", &doc.noise.f2, (n, n), r, &mut bad),
    };
    let grid = match TimeGrid::new(doc.grid.horizon, doc.grid.n_steps) {
        Ok(g) => Some(g),
        Err(e) => {
            bad.push(format!("grid horizon and steps positive: {e}"));
            None
        }
    };

    let (Some(spectrum), Some(grid)) = (spectrum, grid) else {
        return Err(MfgError::Validation(bad));
    };
    let op = |role, mat| LinearOperatorRep::new_unchecked(role, mat);
    let model = GameModel {
        trunc,
        generator,
        b: op(OperatorRole::ControlToState, b),
        couplings,
        f1: op(OperatorRole::StateToState, f1),
        fhat1: op(OperatorRole::StateToState, fhat1),
        fhat2: op(OperatorRole::StateToState, fhat2),
        m: op(OperatorRole::StateToState, cm),
        g: op(OperatorRole::StateToState, cg),
        spectrum,
        grid,
        init_mean: DVector::from_vec(doc.initial.mean.clone()),
        init_cov_scale: doc.initial.cov_scale,
        substeps: doc.grid.substeps,
    };
    bad.extend(model.violations());
    if bad.is_empty() {
        Ok((model, info))
    } else {
        Err(MfgError::Validation(bad))
    }
}

fn to_doc(model: &GameModel) -> ModelDoc {
    let generator = match &model.generator.kind {
        GeneratorKind::Diagonal(d) => GeneratorDoc::Diagonal { eigenvalues: d.iter().copied().collect(), growth: model.generator.growth },
        GeneratorKind::Dense(mat) => GeneratorDoc::Dense { matrix: rows_of(mat), growth: model.generator.growth },
    };
    let c = &model.couplings;
    let fam = |f: &[DMatrix<f64>]| Some(f.iter().map(rows_of).collect());
    ModelDoc {
        truncation: TruncationDoc {
            n_state: model.trunc.n_state,
            n_control: model.trunc.n_control,
            n_noise: model.trunc.n_noise,
        },
        generator,
        operators: OperatorsDoc {
            b: rows_of(model.b.matrix()),
            f1: Some(rows_of(model.f1.matrix())),
            fhat1: Some(rows_of(model.fhat1.matrix())),
            fhat2: Some(rows_of(model.fhat2.matrix())),
        },
        noise: NoiseDoc {
            eigenvalues: Some(model.spectrum.eigenvalues().to_vec()),
            spectrum: None,
            d: fam(&c.d),
            e: fam(&c.e),
            f2: fam(&c.f2),
            sigma: Some(c.sigma.iter().map(|s| s.iter().copied().collect()).collect()),
        },
        cost: CostDoc { m: rows_of(model.m.matrix()), g: rows_of(model.g.matrix()) },
        grid: GridDoc { horizon: model.grid.horizon(), n_steps: model.grid.n_steps(), substeps: model.substeps },
        initial: InitialDoc { mean: model.init_mean.iter().copied().collect(), cov_scale: model.init_cov_scale },
    }
}

/// Parses and validates a model document, reporting every violation.
pub fn parse_model(text: &str) -> Result<(GameModel, ModelInfo)> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| MfgError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    build(doc)
}

pub fn model_to_json(model: &GameModel) -> String {
    serde_json::to_string_pretty(&to_doc(model)).expect("model document serializes")
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GameModel> {
    load_model_with_info(path).map(|(m, _)| m)
}

pub fn load_model_with_info(path: impl AsRef<Path>) -> Result<(GameModel, ModelInfo)> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn save_model(model: &GameModel, path: impl AsRef<Path>) -> Result<()> {
    let mut text = model_to_json(model);
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_errors_carry_position() {
        match parse_model("{\n  \"truncation\": [1,\n") {
            Err(MfgError::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("{other:?}"),
        }
    }
}
