use hinfopt::certify::{self, LiftedTriple};
use hinfopt::hinf::{self, HinfOptions};
use hinfopt::landscape::{self, SampleSpec};
use hinfopt::linalg::{self, CMat, Mat};
use hinfopt::optimizer::{self, MoreauOptions, RunOptions, StepSchedule};
use hinfopt::plant::{self, ScanBox};
use hinfopt::subgrad::{self, min_norm_element};
use hinfopt::{builtin_example, ExampleName, Gain, Plant};
use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use proptest::prelude::*;

const PSD_TOL: f64 = 1e-9;

fn example2() -> Plant {
    builtin_example(ExampleName::Example2, None).unwrap().0
}

fn cmat(q: usize, r: usize, re: &[f64], im: &[f64]) -> CMat {
    CMat::from_fn(q, r, |i, j| Complex64::new(re[i * r + j], im[i * r + j]))
}

fn hermitian_min_eig(h: &CMat) -> f64 {
    let h = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
    SymmetricEigen::new(h).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn complex_matrix() -> impl Strategy<Value = CMat> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(q, r)| {
        (
            prop::collection::vec(-3.0..3.0f64, q * r),
            prop::collection::vec(-3.0..3.0f64, q * r),
        )
            .prop_map(move |(re, im)| cmat(q, r, &re, &im))
    })
}

fn pd_matrix(n: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| {
        let a = Mat::from_row_slice(n, n, &v);
        &a * a.transpose() + Mat::identity(n, n) * 0.1
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn psi_lifting_preserves_sigma_level(x in complex_matrix(), scale_idx in 0usize..3) {
        let smax = linalg::complex_singular_values(&x)[0];
        let lam = linalg::lambda_max_sym(&certify::psi_map(&x));
        prop_assert!((smax - lam).abs() <= 1e-10 * (1.0 + smax));

        let sigma = [0.5, 1.0, 2.0][scale_idx] * smax;
        let r = x.ncols();
        let lhs = CMat::identity(r, r) * Complex64::new(sigma * sigma, 0.0) - x.adjoint() * &x;
        let complex_ok = hermitian_min_eig(&lhs) >= -PSD_TOL;
        let psi = certify::psi_map(&x);
        let n = psi.nrows();
        let real_ok = linalg::lambda_min_sym(&(Mat::identity(n, n) * sigma - psi)) >= -PSD_TOL;
        prop_assert_eq!(complex_ok, real_ok);
    }

    #[test]
    fn psi_is_symmetric(x in complex_matrix()) {
        let p = certify::psi_map(&x);
        prop_assert_eq!(p.clone(), p.transpose());
    }

    #[test]
    fn pi_round_trip(p in pd_matrix(2), k in prop::collection::vec(-5.0..5.0f64, 2), gamma in 1e-3..10.0f64) {
        let lifted = LiftedTriple { k: Mat::from_row_slice(1, 2, &k), gamma, p };
        let back = certify::pi_inverse(&certify::pi_map(&lifted).unwrap()).unwrap();
        prop_assert!((back.gamma - gamma).abs() <= 1e-10 * gamma);
        prop_assert!((&back.k - &lifted.k).norm() <= 1e-10 * (1.0 + lifted.k.norm()));
        prop_assert!((&back.p - &lifted.p).norm() <= 1e-10 * lifted.p.norm());
    }

    #[test]
    fn lmi_is_affine(
        g1 in 0.1..10.0f64, g2 in 0.1..10.0f64,
        y1 in prop::collection::vec(-3.0..3.0f64, 2), y2 in prop::collection::vec(-3.0..3.0f64, 2),
        x1 in pd_matrix(2), x2 in pd_matrix(2),
    ) {
        let plant = example2();
        let (y1, y2) = (Mat::from_row_slice(1, 2, &y1), Mat::from_row_slice(1, 2, &y2));
        let l1 = certify::lmi_matrix(&plant, g1, &y1, &x1).unwrap();
        let l2 = certify::lmi_matrix(&plant, g2, &y2, &x2).unwrap();
        let mid = certify::lmi_matrix(&plant, 0.5 * (g1 + g2), &((&y1 + &y2) * 0.5), &((&x1 + &x2) * 0.5)).unwrap();
        let avg = (l1 + l2) * 0.5;
        for (m, a) in mid.iter().zip(avg.iter()) {
            prop_assert!((m - a).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn min_norm_weights_are_convex(
        pts in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 4), 1..8)
    ) {
        let grads: Vec<Mat> = pts.iter().map(|v| Mat::from_row_slice(2, 2, v)).collect();
        let mn = min_norm_element(&grads).unwrap();
        let total: f64 = mn.weights.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(mn.weights.iter().all(|&w| w >= -1e-12));
        let recon = grads.iter().zip(&mn.weights).fold(Mat::zeros(2, 2), |acc, (g, &w)| acc + g * w);
        prop_assert!((recon - &mn.point).norm() <= 1e-9 * (1.0 + mn.norm));
        // Optimality: no generator improves on the min-norm point.
        for g in &grads {
            prop_assert!(mn.point.dot(g) >= mn.norm * mn.norm - 1e-8 * (1.0 + g.norm() * mn.norm));
        }
    }

    #[test]
    fn sqrt_psd_squares_back(m in pd_matrix(3)) {
        let s = plant::sqrt_psd(&m).unwrap();
        prop_assert_eq!(s.clone(), s.transpose());
        prop_assert!((&s * &s - &m).norm() <= 1e-10 * m.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn closed_loop_output_gram(k in prop::collection::vec(-4.0..4.0f64, 2)) {
        let plant = example2();
        let gain = Gain::row(&k);
        let cl = plant.closed_loop(&gain).unwrap();
        let km = gain.clone().into_inner();
        let expect = plant.q() + plant.c().transpose() * km.transpose() * plant.r() * &km * plant.c();
        prop_assert!((cl.c_k.transpose() * &cl.c_k - &expect).norm() <= 1e-12 * expect.norm());
        prop_assert_eq!(cl.a_k, plant.a() + plant.b() * &km * plant.c());
    }

    #[test]
    fn hinf_grid_refinement_is_monotone(k in prop::collection::vec(-3.0..1.0f64, 2)) {
        let plant = example2();
        let gain = Gain::row(&k);
        prop_assume!(plant::is_stabilizing(&plant, &gain).unwrap());
        let coarse = hinf::hinf_norm(&plant, &gain, &HinfOptions { grid_size: 512, ..Default::default() }).unwrap();
        let fine = hinf::hinf_norm(&plant, &gain, &HinfOptions { grid_size: 1024, ..Default::default() }).unwrap();
        prop_assert!(fine.value >= coarse.value - 1e-12 * (1.0 + coarse.value), "K = {:?}: {} < {}", k, fine.value, coarse.value);
    }

    #[test]
    fn active_frequencies_are_near_peak(k in prop::collection::vec(-3.0..1.0f64, 2)) {
        let plant = example2();
        let gain = Gain::row(&k);
        prop_assume!(plant::is_stabilizing(&plant, &gain).unwrap());
        let opts = HinfOptions::default();
        let res = hinf::hinf_norm(&plant, &gain, &opts).unwrap();
        prop_assert!(!res.active.is_empty());
        for a in &res.active {
            let t = plant::transfer(&plant, &gain, a.omega).unwrap();
            let s = linalg::complex_singular_values(&t)[0];
            prop_assert!(s >= res.value * (1.0 - 2.0 * opts.delta_active));
            prop_assert!((a.triple.u.norm() - 1.0).abs() <= 1e-12);
            prop_assert!((a.triple.v.norm() - 1.0).abs() <= 1e-12);
            let phase = (a.triple.v.adjoint() * &t * &a.triple.u)[(0, 0)].re;
            prop_assert!((phase - a.triple.sigma).abs() <= 1e-10 * (1.0 + a.triple.sigma));
        }
        let windows = res.active.windows(2).all(|w| w[0].omega <= w[1].omega);
        prop_assert!(windows);
    }

    #[test]
    fn subgradient_is_deterministic(k in prop::collection::vec(-3.0..1.0f64, 2)) {
        let plant = example2();
        let gain = Gain::row(&k);
        prop_assume!(plant::is_stabilizing(&plant, &gain).unwrap());
        let a = subgrad::clarke_subgradient(&plant, &gain).unwrap();
        let b = subgrad::clarke_subgradient(&plant, &gain).unwrap();
        prop_assert_eq!(a.g, b.g);
        prop_assert_eq!(a.omega.to_bits(), b.omega.to_bits());
    }
}

fn is_smooth_point(plant: &Plant, k: &Gain) -> bool {
    let res = hinf::hinf_norm(plant, k, &HinfOptions::default()).unwrap();
    // Peaks come in conjugate pairs (w, 2 pi - w); count each pair once.
    let mut folded: Vec<f64> = res.active.iter().map(|a| a.omega.min(2.0 * std::f64::consts::PI - a.omega)).collect();
    folded.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    folded.sort_by(f64::total_cmp);
    folded.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    if folded.len() != 1 || res.flat {
        return false;
    }
    let t = plant::transfer(plant, k, res.active[0].omega).unwrap();
    let s = linalg::complex_singular_values(&t);
    s.len() < 2 || s[0] - s[1] > 1e-6 * s[0]
}

#[test]
fn subgradient_matches_finite_differences_at_smooth_points() {
    let plant = example2();
    let spec = SampleSpec::new(20.0, ScanBox::new(vec![-4.0, -4.0], vec![1.0, 0.0]), 11);
    let pts: Vec<Gain> = landscape::sample_gains(&plant, &spec, 40)
        .unwrap()
        .into_iter()
        .filter(|k| is_smooth_point(&plant, k))
        .take(20)
        .collect();
    assert_eq!(pts.len(), 20);
    let mut rng = 12345u64;
    let mut next = || {
        rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for k in &pts {
        let g = subgrad::clarke_subgradient(&plant, k).unwrap().g;
        for _ in 0..20 {
            let d = Mat::from_row_slice(1, 2, &[next(), next()]);
            let analytic = g.dot(&d);
            let fd = subgrad::fd_directional(&plant, k, &d, 1e-6).unwrap();
            let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            assert!(err <= 1e-4, "K = {:?}, D = {d}, analytic {analytic}, fd {fd}", k.to_rows());
        }
    }
}

#[test]
fn lipschitz_estimate_bounds_cost_differences() {
    let plant = example2();
    let bx = ScanBox::new(vec![-4.0, -4.0], vec![1.0, 0.0]);
    let nu = 12.0;
    let l_hat = landscape::estimate_lipschitz(&plant, &SampleSpec::new(nu, bx.clone(), 3), 400).unwrap();
    let centers = landscape::sample_gains(&plant, &SampleSpec::new(nu, bx, 4), 100).unwrap();
    let mut tested = 0;
    for (i, c) in centers.iter().enumerate() {
        let k1 = c.clone().into_inner();
        let theta = i as f64 * 2.399963;
        let k2 = &k1 + Mat::from_row_slice(1, 2, &[0.05 * theta.cos(), 0.05 * theta.sin()]);
        let inside = (0..=10).all(|s| {
            let kk = Gain::new(&k1 + (&k2 - &k1) * (s as f64 / 10.0));
            plant::is_stabilizing(&plant, &kk).unwrap()
                && hinf::hinf_value(&plant, &kk, &HinfOptions::default()).unwrap() <= nu
        });
        if !inside {
            continue;
        }
        let j1 = hinf::hinf_value(&plant, c, &HinfOptions::default()).unwrap();
        let j2 = hinf::hinf_value(&plant, &Gain::new(k2.clone()), &HinfOptions::default()).unwrap();
        assert!((j1 - j2).abs() <= 1.05 * l_hat * (&k1 - &k2).norm(), "pair {i}: {j1} vs {j2}, L = {l_hat}");
        tested += 1;
    }
    assert!(tested >= 50, "only {tested} pairs stayed in the sublevel set");
}

#[test]
fn moreau_estimates_are_consistent() {
    let plant = example2();
    let opts = MoreauOptions::default();
    for k in [[0.0, -1.9], [0.2, -2.0], [-0.23, -2.01], [-0.7, -2.1]] {
        let gain = Gain::row(&k);
        for rho in [2.0, 10.0] {
            let est = optimizer::moreau_gradient(&plant, &gain, rho, &opts).unwrap();
            let diff = gain.clone().into_inner() - &est.k_hat;
            assert!(est.grad_norm >= (1.0 - 1e-6) * rho * diff.norm());
            assert!((est.grad.norm() - est.grad_norm).abs() <= 1e-12 * (1.0 + est.grad_norm));
            let j_k = hinf::hinf_value(&plant, &gain, &HinfOptions::default()).unwrap();
            let j_hat = hinf::hinf_value(&plant, &Gain::new(est.k_hat.clone()), &HinfOptions::default()).unwrap();
            assert!(j_hat + 0.5 * rho * diff.norm_squared() <= j_k + 1e-9);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let plant = example2();
    let sched = StepSchedule::constant(1e-3).unwrap();
    let opts = RunOptions { log_moreau_every: 50, rho: Some(2.0), ..Default::default() };
    let a = optimizer::subgradient_method(&plant, &Gain::row(&[0.0, -1.9]), &sched, 200, &opts).unwrap();
    let b = optimizer::subgradient_method(&plant, &Gain::row(&[0.0, -1.9]), &sched, 200, &opts).unwrap();
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a, b);
}

#[test]
fn cost_is_coercive_near_the_boundary() {
    let plant = builtin_example(ExampleName::Example1, None).unwrap().0;
    for k in [-1e-4, -2.0 + 1e-4] {
        let j = hinf::hinf_value(&plant, &Gain::scalar(k), &HinfOptions::default()).unwrap();
        assert!(j > 100.0, "J({k}) = {j}");
    }
}
