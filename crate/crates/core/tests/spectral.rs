use approx::assert_relative_eq;
use hilbert_mfg::experiments::toy_model_preset;
use hilbert_mfg::mean_field::certify_contraction;
use hilbert_mfg::model::{GameModel, StateOperator};
use hilbert_mfg::noise::TimeGrid;
use hilbert_mfg::spectral::{
    certified_family_norm, compute_bounds, operator_norm, riesz_delta, BasisTruncation, CovarianceSpectrum,
    GeneratorSpec, GrowthBound, LinearOperatorRep, NoiseCouplings, OperatorRole, RieszDelta,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

/// Dimensions, spectrum and a coupling family with `√λ_j` folded in.
fn instance() -> impl Strategy<Value = (BasisTruncation, CovarianceSpectrum, NoiseCouplings)> {
    (1usize..=6, 1usize..=6, 1usize..=4).prop_flat_map(|(n, m, r)| {
        (
            proptest::collection::vec(0.05f64..2.0, r),
            proptest::collection::vec(matrix(n, n), r),
            proptest::collection::vec(matrix(n, m), r),
        )
            .prop_map(move |(lambda, d, e)| {
                let trunc = BasisTruncation::new(n, m, r).unwrap();
                let scale = |fam: Vec<DMatrix<f64>>| fam.into_iter().zip(&lambda).map(|(x, l)| x * l.sqrt()).collect();
                let c = NoiseCouplings {
                    d: scale(d),
                    e: scale(e),
                    sigma: vec![DVector::zeros(n); r],
                    f2: vec![DMatrix::zeros(n, n); r],
                };
                (trunc, CovarianceSpectrum::new(lambda).unwrap(), c)
            })
    })
}

fn state_op(m: DMatrix<f64>, t: &BasisTruncation) -> LinearOperatorRep {
    LinearOperatorRep::new(OperatorRole::StateToState, m, t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta3_keeps_positivity((t, _q, c) in instance(), seed in matrix(6, 6)) {
        let n = t.n_state;
        let a = seed.view((0, 0), (n, n)).into_owned();
        let pi = &a * a.transpose();
        let d3 = riesz_delta(&state_op(pi, &t), &c, RieszDelta::Three).unwrap();
        let min = d3.matrix().clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-12);
    }

    #[test]
    fn deltas_are_linear((t, _q, c) in instance(), r1 in matrix(6, 6), r2 in matrix(6, 6), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let n = t.n_state;
        let r1 = r1.view((0, 0), (n, n)).into_owned();
        let r2 = r2.view((0, 0), (n, n)).into_owned();
        for which in [RieszDelta::One, RieszDelta::Two, RieszDelta::Three] {
            let lhs = riesz_delta(&state_op(&r1 * a + &r2 * b, &t), &c, which).unwrap();
            let rhs = riesz_delta(&state_op(r1.clone(), &t), &c, which).unwrap().into_matrix() * a
                + riesz_delta(&state_op(r2.clone(), &t), &c, which).unwrap().into_matrix() * b;
            prop_assert!((lhs.matrix() - rhs).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn deltas_respect_certified_bounds((t, q, c) in instance(), seed in matrix(6, 6)) {
        let n = t.n_state;
        let a = seed.view((0, 0), (n, n)).into_owned();
        let pi = &a * a.transpose();
        let norm_pi = operator_norm(&pi);
        let (nd, ne) = (certified_family_norm(&c.d, &q), certified_family_norm(&c.e, &q));
        let tr = q.trace();
        let op = state_op(pi, &t);
        let tol = 1e-12 * (1.0 + norm_pi);
        prop_assert!(riesz_delta(&op, &c, RieszDelta::One).unwrap().norm() <= tr * nd * ne * norm_pi + tol);
        prop_assert!(riesz_delta(&op, &c, RieszDelta::Two).unwrap().norm() <= tr * nd * nd * norm_pi + tol);
        prop_assert!(riesz_delta(&op, &c, RieszDelta::Three).unwrap().norm() <= tr * ne * ne * norm_pi + tol);
    }

    #[test]
    fn diagonal_semigroup_property(a in proptest::collection::vec(-5.0f64..1.0, 1..6), t in 0.0f64..2.0, s in 0.0f64..2.0) {
        let gen = GeneratorSpec::diagonal(a, GrowthBound { m_a: 1.0, alpha: 1.0 });
        let lhs = gen.semigroup(t + s).unwrap();
        let rhs = gen.semigroup(t).unwrap() * gen.semigroup(s).unwrap();
        prop_assert!((lhs - rhs).abs().max() <= 1e-9);
    }

    #[test]
    fn dense_semigroup_property(a in matrix(3, 3), t in 0.0f64..1.5, s in 0.0f64..1.5) {
        let gen = GeneratorSpec::dense(a, GrowthBound::default());
        let lhs = gen.semigroup(t + s).unwrap();
        let rhs = gen.semigroup(t).unwrap() * gen.semigroup(s).unwrap();
        prop_assert!((&lhs - rhs).abs().max() <= 1e-9 * (1.0 + lhs.abs().max()));
    }
}

#[test]
fn growth_bound_holds_on_toy_grid() {
    let model = toy_model_preset();
    let max = model.generator.max_grid_norm(&model.grid).unwrap();
    assert!(max <= model.generator.m_t(model.horizon()) + 1e-12);
    assert!(model.generator.growth_violations(&model.grid).unwrap().is_empty());
}

fn bounds_model(r: usize) -> GameModel {
    let mut model = GameModel::zeros(BasisTruncation::new(2, 2, r).unwrap(), TimeGrid::new(1.0, 10).unwrap());
    model.set_b(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -0.5])));
    model
}

#[test]
fn bounds_without_noise() {
    let b = compute_bounds(&bounds_model(1));
    assert_eq!([b.r1, b.r2, b.r3, b.r4, b.r5], [0.0; 5]);
    assert_relative_eq!(b.r6, 2.0, epsilon = 1e-12);
}

#[test]
fn bounds_single_identity_mode() {
    let mut model = bounds_model(1);
    model.couplings.d = vec![DMatrix::identity(2, 2)];
    let b = compute_bounds(&model);
    assert_relative_eq!(b.r1, 1.0, epsilon = 1e-12);
    assert_relative_eq!(b.r4, 1.0, epsilon = 1e-12);
    assert_eq!([b.r2, b.r3, b.r5], [0.0; 3]);
}

#[test]
fn bounds_two_modes() {
    let mut model = bounds_model(2);
    model.spectrum = CovarianceSpectrum::new(vec![1.0, 0.5]).unwrap();
    model.couplings.d = vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5f64.sqrt()];
    let b = compute_bounds(&model);
    assert_relative_eq!(b.norm_d, 2f64.sqrt(), epsilon = 1e-12);
    assert_relative_eq!(b.r4, 3.0, epsilon = 1e-12);
    assert_relative_eq!(b.r3, b.trace_q * b.norm_d * b.norm_e, epsilon = 1e-15);
    assert_relative_eq!(b.r6, b.norm_b + b.r3, epsilon = 1e-15);
}

#[test]
fn certificate_c1_example() {
    let mut model = GameModel::zeros(BasisTruncation::new(1, 1, 1).unwrap(), TimeGrid::new(0.5, 10).unwrap());
    model.set_state_op(StateOperator::M, DMatrix::identity(1, 1));
    model.set_state_op(StateOperator::G, DMatrix::identity(1, 1));
    let cert = certify_contraction(&model);
    assert_relative_eq!(cert.c1, 3.0, epsilon = 1e-12);
    assert_eq!(cert.c4, 0.0);
}
