use mgce::baselines::{self, LossKind};
use mgce::data::{self, Dataset, SplitSpec};
use mgce::gradients::{self, finite_difference_oracle, relative_error};
use mgce::harness;
use mgce::loss::{self, LossParams};
use mgce::metrics::{self, SceConfig};
use mgce::models::LinearModel;
use mgce::objective::{self, UncertaintyStats};
use mgce::Model;
use ndarray::Array2;
use proptest::prelude::*;

const EPS: f64 = loss::DEFAULT_BISECT_TOL;

fn margins(k: std::ops::RangeInclusive<usize>, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    k.prop_flat_map(move |k| prop::collection::vec(-scale..scale, k))
}

fn beta() -> impl Strategy<Value = f64> {
    (0.0f64..50f64.ln()).prop_map(f64::exp)
}

fn simplex(k: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    k.prop_flat_map(|k| prop::collection::vec(0.01f64..1.0, k)).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

/// `p*` drawn as normalized `0.2 + U(0, 1)` weights.
fn calibration_target() -> impl Strategy<Value = Vec<f64>> {
    (2usize..=5).prop_flat_map(|k| prop::collection::vec(0.2f64..1.2, k)).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn pair(k: std::ops::RangeInclusive<usize>, scale: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    k.prop_flat_map(move |k| {
        (
            prop::collection::vec(-scale..scale, k),
            prop::collection::vec(-scale..scale, k),
            0..k,
        )
    })
}

proptest! {
    #[test]
    fn constraint_is_nondecreasing(f in margins(2..=30, 5.0), b in beta(), nu in -20.0f64..20.0, dnu in 0.0f64..5.0) {
        prop_assert!(loss::constraint_value(&f, b, nu) <= loss::constraint_value(&f, b, nu + dnu));
    }

    #[test]
    fn bracket_contains_root(f in margins(2..=200, 10.0), b in beta()) {
        let (lo, hi) = loss::phi_bracket(&f, b);
        prop_assert!(loss::constraint_value(&f, b, lo) <= 1.0 + 1e-12);
        prop_assert!(loss::constraint_value(&f, b, hi) >= 1.0 - 1e-12);
    }

    #[test]
    fn bisection_meets_its_contract(f in margins(2..=50, 10.0), b in beta(), tol in prop::sample::select(vec![1e-3, 1e-4, 1e-8])) {
        let sol = loss::solve_phi(&f, &LossParams::with_tol(b, tol).unwrap()).unwrap();
        prop_assert!(sol.bracket_hi - sol.bracket_lo < tol);
        prop_assert!(sol.bracket_lo <= sol.phi && sol.phi <= sol.bracket_hi);
        let (lo, hi) = sol.initial_bracket;
        prop_assert!(sol.iterations <= harness::iteration_bound(hi - lo, tol));
    }

    #[test]
    fn link_is_a_probability_vector(f in margins(2..=50, 10.0), b in beta()) {
        let h = loss::link_probabilities(&f, &LossParams::new(b).unwrap()).unwrap();
        prop_assert!(h.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifting_margins_shifts_the_potential(f in margins(2..=20, 5.0), b in beta(), c in -10.0f64..10.0, y in 0usize..2) {
        let params = LossParams::new(b).unwrap();
        let g: Vec<f64> = f.iter().map(|v| v + c).collect();
        let a = loss::solve_phi(&f, &params).unwrap().phi;
        let s = loss::solve_phi(&g, &params).unwrap().phi;
        prop_assert!((s - (a - c)).abs() <= 2.0 * EPS);
        let la = loss::margin_loss(&f, y, &params).unwrap();
        let lb = loss::margin_loss(&g, y, &params).unwrap();
        prop_assert!((la - lb).abs() <= 2.0 * EPS);
    }

    #[test]
    fn raising_the_label_margin_never_raises_the_loss((f, _, y) in pair(2..=20, 5.0), b in beta(), up in 0.0f64..3.0) {
        let params = LossParams::new(b).unwrap();
        let mut g = f.clone();
        g[y] += up;
        prop_assert!(loss::margin_loss(&g, y, &params).unwrap() <= loss::margin_loss(&f, y, &params).unwrap() + 2.0 * EPS);
        prop_assert!(gradients::margin_loss_grad(&f, y, &params).unwrap()[y] <= 0.0);
    }

    #[test]
    fn margin_loss_is_midpoint_convex((f1, f2, y) in pair(2..=20, 5.0), b in beta()) {
        let params = LossParams::new(b).unwrap();
        let mid: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 0.5 * (a + b)).collect();
        let l = |f: &[f64]| loss::margin_loss(f, y, &params).unwrap();
        prop_assert!(l(&mid) <= 0.5 * (l(&f1) + l(&f2)) + 4.0 * EPS);
    }

    #[test]
    fn potential_is_midpoint_concave((f1, f2, _) in pair(2..=20, 5.0), b in beta()) {
        let params = LossParams::new(b).unwrap();
        let mid: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 0.5 * (a + b)).collect();
        let phi = |f: &[f64]| loss::solve_phi(f, &params).unwrap().phi;
        prop_assert!(phi(&mid) >= 0.5 * (phi(&f1) + phi(&f2)) - 4.0 * EPS);
    }

    #[test]
    fn alpha_loss_sandwiches_mae(h in 0.0f64..=1.0, b in beta()) {
        let l = loss::alpha_probability_loss(h, &LossParams::new(b).unwrap()).unwrap();
        let mae = 1.0 - h;
        prop_assert!(l / b <= mae + 1e-12);
        prop_assert!(mae <= l + 1e-12);
        prop_assert!(l - mae <= b - 1.0 + 1e-12);
    }

    #[test]
    fn class_sum_stays_within_bounds(h in simplex(2..=20), b in beta()) {
        let params = LossParams::new(b).unwrap();
        let sum: f64 = h.iter().map(|&v| loss::alpha_probability_loss(v, &params).unwrap()).sum();
        let (lo, hi) = loss::class_sum_bounds(b, h.len());
        prop_assert!(lo - 1e-9 <= sum && sum <= hi + 1e-9);
    }

    #[test]
    fn worst_case_map_round_trips(h in simplex(2..=12), b in prop::sample::select(vec![1.2, 2.0, 5.0])) {
        let p = loss::worst_case_from_probs(&h, b).unwrap();
        let back = loss::probs_from_worst_case(&p, b).unwrap();
        for (x, y) in h.iter().zip(back.iter()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn worst_case_crosses_at_the_exact_threshold(h in simplex(2..=12), b in 1.05f64..20.0) {
        let p = loss::worst_case_from_probs(&h, b).unwrap();
        let z: f64 = h.iter().map(|v| v.powf((b - 1.0) / b)).sum();
        let crossover = z.powf(-b);
        let k = h.len() as f64;
        for y in 0..h.len() {
            if (crossover - h[y]).abs() > 1e-12 && (p[y] - h[y]).abs() > 1e-12 {
                prop_assert_eq!((p[y] - h[y]).signum(), (crossover - h[y]).signum());
            }
            if h[y] <= 1.0 / k {
                prop_assert!(p[y] >= h[y] - 1e-12);
            }
            if h.len() == 2 && h[y] > 0.5 + 1e-12 {
                prop_assert!(p[y] < h[y]);
            }
        }
    }

    #[test]
    fn link_approaches_softmax(f in margins(2..=100, 3.0)) {
        let s = loss::softmax(&f);
        let dev = |b: f64| {
            let h = loss::link_probabilities(&f, &LossParams::with_tol(b, loss::TIGHT_BISECT_TOL).unwrap()).unwrap();
            h.iter().zip(&s).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let ladder = [dev(10.0), dev(100.0), dev(1000.0)];
        prop_assert!(ladder[0] > ladder[1] && ladder[1] > ladder[2]);
        let h = loss::link_probabilities(&f, &LossParams::new(1e4).unwrap()).unwrap();
        prop_assert!(h.iter().zip(&s).all(|(x, y)| (x - y).abs() < 1e-3));
    }

    #[test]
    fn link_preserves_argmax(f in margins(2..=30, 3.0), b in beta()) {
        // rounding to one decimal produces ties, which must resolve to the lowest index
        let f: Vec<f64> = f.iter().map(|v| (v * 10.0).round() / 10.0).collect();
        let h = loss::link_probabilities(&f, &LossParams::new(b).unwrap()).unwrap();
        if h.iter().filter(|&&v| v > 0.0).count() > 0 {
            prop_assert_eq!(loss::argmax(&h), loss::argmax(&f));
        }
    }

    #[test]
    fn margin_gradient_sums_to_zero((f, _, y) in pair(2..=50, 5.0), b in beta()) {
        let g = gradients::margin_loss_grad(&f, y, &LossParams::new(b).unwrap()).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn margin_gradient_matches_differences((f, _, y) in pair(2..=10, 3.0), b in 1.1f64..30.0) {
        let params = LossParams::with_tol(b, loss::TIGHT_BISECT_TOL).unwrap();
        let analytic = gradients::margin_loss_grad(&f, y, &params).unwrap();
        let numeric = finite_difference_oracle(|m| loss::margin_loss(m, y, &params), &f, 1e-6).unwrap();
        prop_assert!(relative_error(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn gradient_at_mae_is_uniform_on_the_support((f, _, y) in pair(2..=20, 3.0)) {
        let params = LossParams::new(1.0).unwrap();
        let g = gradients::margin_loss_grad(&f, y, &params).unwrap();
        let p = loss::worst_case_from_margins(&f, &params).unwrap();
        let positive: Vec<f64> = p.iter().copied().filter(|&v| v > 0.0).collect();
        prop_assert!(positive.iter().all(|&v| (v - positive[0]).abs() < 1e-12));
        for j in 0..f.len() {
            let expected = p[j] - if j == y { 1.0 } else { 0.0 };
            prop_assert!((g[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_in_ce_mode_is_softmax((f, _, y) in pair(2..=20, 3.0)) {
        let params = LossParams::cross_entropy();
        let g = gradients::margin_loss_grad(&f, y, &params).unwrap();
        let p = loss::worst_case_from_margins(&f, &params).unwrap();
        let s = loss::softmax(&f);
        prop_assert_eq!(&*p, s.as_slice());
        for j in 0..f.len() {
            prop_assert_eq!(g[j], p[j] - if j == y { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn expected_gradient_vanishes_at_the_calibrated_point(p_star in calibration_target(), b in prop::sample::select(vec![1.2, 2.0, 5.0])) {
        let fit = objective::calibration_fit(&p_star, b).unwrap();
        let params = LossParams::with_tol(b, loss::TIGHT_BISECT_TOL).unwrap();
        let mut expected = vec![0.0; p_star.len()];
        for (y, &w) in p_star.iter().enumerate() {
            let g = gradients::margin_loss_grad(&fit.mu_star, y, &params).unwrap();
            expected.iter_mut().zip(g.iter()).for_each(|(e, v)| *e += w * v);
        }
        prop_assert!(expected.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-5);
    }

    #[test]
    fn margins_are_linear_in_the_coefficients(x in prop::collection::vec(-1.0f64..1.0, 4), a in -2.0f64..2.0, c in -2.0f64..2.0, seed in 0u64..1000) {
        let m1 = Model::mlp(4, 6, 3, seed);
        let mut m2 = m1.clone();
        let mut mix = m1.clone();
        let mu1: Vec<f64> = (0..18).map(|i| ((i as f64) * 0.37).sin()).collect();
        let mu2: Vec<f64> = (0..18).map(|i| ((i as f64) * 1.3 + seed as f64).cos()).collect();
        let mut m1 = m1;
        m1.set_mu_flat(&mu1).unwrap();
        m2.set_mu_flat(&mu2).unwrap();
        mix.set_mu_flat(&mu1.iter().zip(&mu2).map(|(u, v)| a * u + c * v).collect::<Vec<_>>()).unwrap();
        let (f1, f2, fm) = (m1.forward_margins(&x).unwrap(), m2.forward_margins(&x).unwrap(), mix.forward_margins(&x).unwrap());
        for y in 0..3 {
            prop_assert!((fm[y] - (a * f1[y] + c * f2[y])).abs() < 1e-12);
        }
    }

    #[test]
    fn margins_agree_with_the_feature_map(x in prop::collection::vec(-1.0f64..1.0, 5), seed in 0u64..1000) {
        let mut model = Model::mlp(5, 7, 4, seed);
        let mu: Vec<f64> = (0..28).map(|i| ((i as f64) + seed as f64).sin()).collect();
        model.set_mu_flat(&mu).unwrap();
        let f = model.forward_margins(&x).unwrap();
        for y in 0..4 {
            let phi = model.feature_map(&x, y).unwrap();
            let dot: f64 = phi.iter().zip(&mu).map(|(p, m)| p * m).sum();
            prop_assert!((dot - f[y]).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_is_midpoint_convex_in_mu(seed in 0u64..1000, b in beta()) {
        let ds = data::synth_gaussian_mixture(3, 4, 60, 1.5, seed).unwrap();
        let params = LossParams::new(b).unwrap();
        let stats = objective::estimate_stats_kronecker(ds.features.view(), &ds.labels, 3, 0.3).unwrap();
        let mu1: Vec<f64> = (0..12).map(|i| ((i as f64) * 0.7 + seed as f64).sin()).collect();
        let mu2: Vec<f64> = (0..12).map(|i| ((i as f64) * 1.9 - seed as f64).cos()).collect();
        let value = |mu: &[f64]| {
            let mut model = Model::linear(4, 3);
            model.set_mu_flat(mu).unwrap();
            objective::evaluate_objective(&model, &stats, ds.features.view(), &params).unwrap()
        };
        let mid: Vec<f64> = mu1.iter().zip(&mu2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (v1, v2, vm) = (value(&mu1), value(&mu2), value(&mid));
        prop_assert!(vm.v_beta <= 0.5 * (v1.v_beta + v2.v_beta) + 4.0 * EPS);
        prop_assert_eq!(vm.v_beta, vm.term_tau + vm.term_lambda + vm.term_phi_mean);
    }

    #[test]
    fn lambda_scales_the_deviations(seed in 0u64..1000, lambda0 in 0.0f64..3.0) {
        let ds = data::synth_gaussian_mixture(2, 3, 40, 1.0, seed).unwrap();
        let stats = objective::estimate_stats_kronecker(ds.features.view(), &ds.labels, 2, lambda0).unwrap();
        prop_assert!(stats.s.iter().all(|&s| s >= 0.0));
        for (l, s) in stats.lambda.iter().zip(&stats.s) {
            prop_assert_eq!(*l, lambda0 * s);
        }
    }

    #[test]
    fn gce_matches_its_own_differences((f, _, y) in pair(2..=10, 3.0), b in 1.05f64..10.0) {
        let (_, g) = baselines::gce_loss_and_grad(&f, y, b).unwrap();
        let numeric = finite_difference_oracle(|m| baselines::gce_loss_and_grad(m, y, b).map(|(l, _)| l), &f, 1e-6).unwrap();
        prop_assert!(relative_error(&g, &numeric) < 1e-5);
    }

    #[test]
    fn gce_tends_to_ce((f, _, y) in pair(2..=20, 3.0)) {
        let beta = 1e4;
        let (gce, _) = baselines::gce_loss_and_grad(&f, y, beta).unwrap();
        let (ce, _) = baselines::ce_loss_and_grad(&f, y).unwrap();
        // ce - beta * (1 - exp(-ce / beta)) lies in [0, ce^2 / (2 beta)]
        prop_assert!(gce <= ce + 1e-12);
        prop_assert!(ce - gce <= ce * ce / (2.0 * beta) + 1e-12);
        if ce < 4.0 {
            prop_assert!(ce - gce < 1e-3);
        }
    }

    #[test]
    fn mgce_in_ce_mode_is_ce((f, _, y) in pair(2..=20, 3.0)) {
        let (a, _) = LossKind::Mgce.loss_and_grad(&f, y, &LossParams::cross_entropy()).unwrap();
        let (b, _) = baselines::ce_loss_and_grad(&f, y).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn sce_is_a_fraction(probs in prop::collection::vec(simplex(3..=3), 1..80), labels in prop::collection::vec(0usize..3, 80), bins in 1usize..20) {
        let labels = &labels[..probs.len()];
        let v = metrics::sce(&probs, labels, SceConfig { bins }).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn mae_risk_of_hard_predictions_is_the_error_rate(picks in prop::collection::vec(0usize..4, 1..60), labels in prop::collection::vec(0usize..4, 60)) {
        let probs: Vec<Vec<f64>> = picks.iter().map(|&j| (0..4).map(|c| if c == j { 1.0 } else { 0.0 }).collect()).collect();
        let labels = &labels[..probs.len()];
        let acc = metrics::accuracy(&probs, labels).unwrap();
        prop_assert!((metrics::mae_risk(&probs, labels).unwrap() - (1.0 - acc)).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ignores_monotone_reshaping(probs in prop::collection::vec(simplex(4..=4), 1..60), labels in prop::collection::vec(0usize..4, 60)) {
        let labels = &labels[..probs.len()];
        let sharpened: Vec<Vec<f64>> = probs
            .iter()
            .map(|p| {
                let w: Vec<f64> = p.iter().map(|v| v.powi(3)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect();
        prop_assert_eq!(metrics::accuracy(&probs, labels).unwrap(), metrics::accuracy(&sharpened, labels).unwrap());
    }

    #[test]
    fn noise_never_keeps_a_flipped_label(seed in 0u64..1000, eta in 0.0f64..=1.0, k in 2usize..6) {
        let ds = data::synth_gaussian_mixture(k, 2, 50, 1.0, seed).unwrap();
        let (noisy, mask) = data::inject_symmetric_noise(&ds, eta, seed).unwrap();
        for ((&flipped, a), b) in mask.iter().zip(&noisy.labels).zip(&ds.labels) {
            prop_assert_eq!(flipped, a != b);
        }
        let again = data::inject_symmetric_noise(&ds, eta, seed).unwrap();
        prop_assert_eq!(noisy, again.0);
    }

    #[test]
    fn split_and_standardize_keep_shapes(seed in 0u64..1000, frac in 0.05f64..0.5) {
        let ds = data::synth_gaussian_mixture(3, 4, 90, 1.0, seed).unwrap();
        let spec = SplitSpec { val_fraction: frac, seed };
        let (tr, va) = data::split(&ds, spec).unwrap();
        prop_assert_eq!(tr.n() + va.n(), ds.n());
        prop_assert_eq!(data::split(&ds, spec).unwrap(), (tr.clone(), va.clone()));
        let (st, others) = data::standardize(&tr, &[&va]).unwrap();
        prop_assert_eq!((st.n(), st.d(), st.k), (tr.n(), tr.d(), tr.k));
        prop_assert_eq!((others[0].n(), others[0].d(), others[0].k), (va.n(), va.d(), va.k));
        prop_assert!(st.features.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn mlp_initialization_is_seeded() {
    assert_eq!(Model::mlp(6, 9, 3, 42), Model::mlp(6, 9, 3, 42));
    assert_ne!(Model::mlp(6, 9, 3, 42), Model::mlp(6, 9, 3, 43));
}

#[test]
fn zero_coefficients_give_the_uniform_potential() {
    let model = Model::Linear(LinearModel { mu: Array2::zeros((4, 3)) });
    let params = LossParams::new(2.0).unwrap();
    let f = model.forward_margins(&[0.3, -1.0, 2.0]).unwrap();
    let phi = loss::solve_phi(&f, &params).unwrap();
    assert_eq!(phi.phi, loss::c_beta(2.0, 4));
    assert_eq!(phi.iterations, 0);
    let stats = UncertaintyStats::zeros(12);
    let xs = Array2::from_shape_vec((1, 3), vec![0.3, -1.0, 2.0]).unwrap();
    let v = objective::evaluate_objective(&model, &stats, xs.view(), &params).unwrap();
    assert_eq!(v.v_beta, -loss::c_beta(2.0, 4));
}

#[test]
fn constant_feature_survives_standardization() {
    let features = Array2::from_shape_vec((3, 2), vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
    let ds = Dataset::new("c", features, vec![0, 1, 0], 2).unwrap();
    let (st, _) = data::standardize(&ds, &[]).unwrap();
    assert!(st.features.column(1).iter().all(|&v| v == 0.0));
}
