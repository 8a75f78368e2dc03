use approx::assert_relative_eq;
use hilbert_mfg::experiments::toy_model_preset;
use hilbert_mfg::lq::{solve_offset, solve_riccati};
use hilbert_mfg::mean_field::{
    certify_contraction, feasibility_horizon, fixed_point, fixed_point_from, is_toy_structure, propagate_mean,
    uncontrolled_mean, MeanFieldPath,
};
use hilbert_mfg::model::{GameModel, StateOperator};
use hilbert_mfg::noise::TimeGrid;
use hilbert_mfg::spectral::{BasisTruncation, GeneratorSpec, GrowthBound};
use hilbert_mfg::MfgError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const A: f64 = -1.0;
const F1: f64 = 0.1;
const M: f64 = 1.0;
const G: f64 = 0.5;
const XI: f64 = 1.0;

/// Scalar game with mean-field drift `F1 x̄` and tracking costs.
fn coupled_scalar(steps: usize) -> GameModel {
    let mut model = GameModel::zeros(BasisTruncation::new(1, 1, 1).unwrap(), TimeGrid::new(1.0, steps).unwrap());
    model.generator = GeneratorSpec::diagonal(vec![A], GrowthBound::default());
    model.set_b(DMatrix::from_element(1, 1, 1.0));
    let one = DMatrix::from_element(1, 1, 1.0);
    model.set_state_op(StateOperator::F1, one.clone() * F1);
    model.set_state_op(StateOperator::Fhat1, one.clone());
    model.set_state_op(StateOperator::Fhat2, one.clone());
    model.set_state_op(StateOperator::M, one.clone() * M);
    model.set_state_op(StateOperator::G, one * G);
    model.init_mean = DVector::from_element(1, XI);
    model
}

fn upsilon(model: &GameModel, riccati: &hilbert_mfg::lq::RiccatiPath, g: &[f64]) -> Vec<f64> {
    let path = MeanFieldPath::new(g.iter().map(|v| DVector::from_element(1, *v)).collect());
    let q = solve_offset(model, riccati, &path).unwrap();
    propagate_mean(model, riccati, &q, &path).unwrap().values().iter().map(|v| v[0]).collect()
}

/// The discrete map is affine in `g`; its fixed point solves `(I − A) g = b`.
#[test]
fn scalar_fixed_point_matches_linear_solve() {
    let model = coupled_scalar(40);
    let riccati = solve_riccati(&model).unwrap();
    let n = model.grid.n_nodes();
    let b = DVector::from_vec(upsilon(&model, &riccati, &vec![0.0; n]));
    let mut lin = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = DVector::from_vec(upsilon(&model, &riccati, &e)) - &b;
        lin.set_column(j, &col);
    }
    let exact = (DMatrix::identity(n, n) - lin).lu().solve(&b).unwrap();
    let sol = fixed_point(&model, 1e-12, 200).unwrap();
    for k in 0..n {
        assert!((sol.mean_field.values()[k][0] - exact[k]).abs() < 1e-6);
    }
}

/// Continuous solution of the forward-backward system by shooting on `q(0)`,
/// with `π` integrated backward on a fine grid.
fn shooting_mean(fine: usize) -> Vec<f64> {
    let h = 1.0 / fine as f64;
    // π on nodes and midpoints, index i ↔ t = i h / 2.
    let mut pi = vec![0.0; 2 * fine + 1];
    pi[2 * fine] = G;
    let f = |p: f64| -(2.0 * A * p - p * p + M);
    for i in (0..fine).rev() {
        let p = pi[2 * i + 2];
        let k1 = f(p);
        let k2 = f(p - 0.5 * h * k1);
        let k3 = f(p - 0.5 * h * k2);
        let k4 = f(p - h * k3);
        pi[2 * i] = p - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        // Midpoint value from a half step for the forward sweep.
        let hh = 0.5 * h;
        let j1 = f(p);
        let j2 = f(p - 0.5 * hh * j1);
        let j3 = f(p - 0.5 * hh * j2);
        let j4 = f(p - hh * j3);
        pi[2 * i + 1] = p - hh / 6.0 * (j1 + 2.0 * j2 + 2.0 * j3 + j4);
    }
    let rhs = |p: f64, x: f64, q: f64| {
        let u = -(p * x + q);
        (A * x + u + F1 * x, -((A - p) * q + (p * F1 - M) * x))
    };
    let shoot = |q0: f64| {
        let (mut x, mut q) = (XI, q0);
        let mut xs = vec![x];
        for i in 0..fine {
            let (p0, pm, p1) = (pi[2 * i], pi[2 * i + 1], pi[2 * i + 2]);
            let (a1, b1) = rhs(p0, x, q);
            let (a2, b2) = rhs(pm, x + 0.5 * h * a1, q + 0.5 * h * b1);
            let (a3, b3) = rhs(pm, x + 0.5 * h * a2, q + 0.5 * h * b2);
            let (a4, b4) = rhs(p1, x + h * a3, q + h * b3);
            x += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            q += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            xs.push(x);
        }
        (xs, q + G * x)
    };
    let (_, r0) = shoot(0.0);
    let (_, r1) = shoot(1.0);
    shoot(-r0 / (r1 - r0)).0
}

#[test]
fn mean_field_converges_at_first_order_to_continuous_solution() {
    let fine = 4000;
    let exact = shooting_mean(fine);
    let err = |steps: usize| {
        let sol = fixed_point(&coupled_scalar(steps), 1e-12, 200).unwrap();
        let stride = fine / steps;
        (0..=steps).map(|k| (sol.mean_field.values()[k][0] - exact[k * stride]).abs()).fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(50), err(100), err(200));
    assert!(e1 < 0.05, "coarse error {e1}");
    for ratio in [e1 / e2, e2 / e3] {
        assert!(ratio > 1.6 && ratio < 2.5, "refinement ratio {ratio}");
    }
}

#[test]
fn propagation_without_control_is_semigroup_flow() {
    let mut model = toy_model_preset();
    model.set_b(DMatrix::zeros(4, 4));
    let riccati = solve_riccati(&model).unwrap();
    let g = uncontrolled_mean(&model).unwrap();
    let q = solve_offset(&model, &riccati, &g).unwrap();
    let m = propagate_mean(&model, &riccati, &q, &g).unwrap();
    assert!(m.sup_distance(&g) < 1e-14);
    for (k, v) in g.values().iter().enumerate() {
        let exact = model.generator.semigroup(model.grid.time(k)).unwrap() * &model.init_mean;
        assert!((v - exact).norm() < 1e-12);
    }
}

#[test]
fn equilibrium_is_a_fixed_point_of_propagation() {
    let model = toy_model_preset();
    let sol = fixed_point(&model, 1e-10, 200).unwrap();
    let next = propagate_mean(&model, &sol.riccati, &sol.offset, &sol.mean_field).unwrap();
    assert!(next.sup_distance(&sol.mean_field) <= 1e-10);
    assert_eq!(sol.residual_history.len(), sol.iterations);
    assert!(sol.contraction_ratios().iter().all(|r| *r < 1.0));
}

#[test]
fn fixed_point_is_independent_of_the_initial_iterate() {
    let model = coupled_scalar(50);
    let a = fixed_point(&model, 1e-11, 200).unwrap();
    let riccati = solve_riccati(&model).unwrap();
    let g0 = MeanFieldPath::new(vec![DVector::from_element(1, -3.0); 51]);
    let b = fixed_point_from(&model, riccati, g0, 1e-11, 200).unwrap();
    assert!(a.mean_field.sup_distance(&b.mean_field) < 1e-9);
}

#[test]
fn non_convergence_carries_history() {
    let model = coupled_scalar(50);
    match fixed_point(&model, 1e-14, 1) {
        Err(MfgError::NonConvergence(report)) => {
            assert_eq!(report.iterations, 1);
            assert_eq!(report.residuals.len(), 1);
            assert!(report.last_residual() > 1e-14);
            assert_eq!(report.iterates.len(), 2);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
    assert!(matches!(fixed_point(&model, 0.0, 10), Err(MfgError::Validation(_))));
}

#[test]
fn toy_certificate_values() {
    let model = toy_model_preset();
    assert!(is_toy_structure(&model));
    let cert = certify_contraction(&model);
    assert!(cert.satisfied);
    let toy = cert.toy_lhs.unwrap();
    // C6 = 2 M_T² ‖B‖² (‖G‖ + T‖M‖) = 2 · 0.075 with M_T = 1.
    let c6: f64 = 0.15;
    assert_relative_eq!(toy, 0.5 * c6 * (4.0 * 0.5 * c6).exp(), epsilon = 1e-12);
    assert!((toy - 0.1012).abs() < 1e-4);
    assert!(cert.lhs <= toy);
    assert!(!is_toy_structure(&coupled_scalar(10)));
    assert!(certify_contraction(&coupled_scalar(10)).toy_lhs.is_none());
}

#[test]
fn feasibility_examples() {
    let mut free = toy_model_preset();
    free.set_b(DMatrix::zeros(4, 4));
    assert_eq!(feasibility_horizon(&free, 3.0).unwrap(), 3.0);
    let toy = toy_model_preset();
    assert!(feasibility_horizon(&toy, 10.0).unwrap() >= 0.5);
    let t = feasibility_horizon(&toy, 10.0).unwrap();
    if t < 10.0 {
        assert!(hilbert_mfg::mean_field::certify_at_horizon(&toy, t).satisfied);
        assert!(!hilbert_mfg::mean_field::certify_at_horizon(&toy, t + 2e-3).satisfied);
    }
    assert!(feasibility_horizon(&toy, -1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn larger_running_cost_never_extends_horizon(scale in 0.01f64..2.0) {
        let mut model = toy_model_preset();
        model.set_state_op(StateOperator::M, DMatrix::identity(4, 4) * scale);
        let t1 = feasibility_horizon(&model, 20.0).unwrap();
        model.set_state_op(StateOperator::M, DMatrix::identity(4, 4) * (2.0 * scale));
        let t2 = feasibility_horizon(&model, 20.0).unwrap();
        prop_assert!(t2 <= t1 + 1e-12);
    }
}
