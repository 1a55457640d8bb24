//! Structural invariants checked on randomized inputs: Laplacian algebra,
//! Kron reduction, proportionality fitting, step-kernel orderings and
//! transfer-function embedding consistency.

mod common;

use gridfreq::h2norm::h2_closed_form;
use gridfreq::lti::{generator_tf, modal_step_tf, ControllerSpec, Poly, PolyRatio, RationalTF};
use gridfreq::netmodel::{
    build_laplacian, fit_proportionality, kron_reduce, proportional_case, LaplacianMatrix,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn laplacian_of(rng: &mut ChaCha8Rng, n: usize) -> LaplacianMatrix {
    let rep = common::random_rep(rng);
    let ratings = common::random_ratings(rng, n);
    let lines = common::random_lines(rng, n);
    let case = proportional_case(&rep, &ratings, &lines).unwrap();
    build_laplacian(&case).unwrap()
}

#[test]
fn laplacian_row_sums_and_psd_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let n = rng.gen_range(2..=12);
        let lap = laplacian_of(&mut rng, n);
        let inf_norm = lap
            .matrix
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        for i in 0..n {
            let row_sum: f64 = lap.matrix.row(i).iter().sum();
            assert!(row_sum.abs() < 1e-12 * inf_norm, "row {i}: {row_sum}");
        }
        let eig = lap.matrix.clone().symmetric_eigen();
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let norm = eig.eigenvalues.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(min_ev >= -1e-10 * norm, "min eigenvalue {min_ev}");
    }
}

#[test]
fn kron_reduction_preserves_laplacian_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..100 {
        let n = rng.gen_range(3..=12);
        let lap = laplacian_of(&mut rng, n);
        let keep = rng.gen_range(1..n);
        let mut ids: Vec<u64> = (1..=n as u64).collect();
        ids.shuffle(&mut rng);
        ids.truncate(keep);
        let red = kron_reduce(&lap, &ids).unwrap();

        // roundoff is bounded by the scale of the input matrix
        let input_norm = lap
            .matrix
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        for i in 0..red.n() {
            let row_sum: f64 = red.matrix.row(i).iter().sum();
            assert!(row_sum.abs() < 1e-10 * input_norm);
        }
        let eig = red.matrix.clone().symmetric_eigen();
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min_ev >= -1e-10 * input_norm, "min eigenvalue {min_ev}");
    }
}

#[test]
fn kron_reduction_is_consistent_under_staging() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for _ in 0..100 {
        let n = rng.gen_range(4..=12);
        let lap = laplacian_of(&mut rng, n);
        let mut ids: Vec<u64> = (1..=n as u64).collect();
        ids.shuffle(&mut rng);
        // eliminate {a} then {b}, versus {a, b} at once
        let survivors_two = ids[2..].to_vec();
        let mut survivors_one = ids[1..].to_vec();
        survivors_one.sort_unstable();
        let staged = kron_reduce(&kron_reduce(&lap, &survivors_one).unwrap(), &survivors_two)
            .unwrap();
        let direct = kron_reduce(&lap, &survivors_two).unwrap();
        assert_eq!(staged.bus_ids, direct.bus_ids);
        let scale = direct.matrix.norm().max(1e-30);
        assert!(
            (staged.matrix - &direct.matrix).norm() < 1e-10 * scale,
            "staging mismatch"
        );
    }
}

#[test]
fn proportional_fit_recovers_generated_ratings() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for _ in 0..50 {
        let (case, _) = common::random_proportional_case(&mut rng, 12);
        let fit = fit_proportionality(&case);
        assert!(
            fit.max_residual() < 1e-12,
            "residual {} on generated case",
            fit.max_residual()
        );
        for (i, b) in case.buses.iter().enumerate() {
            assert!((fit.f[i] - b.rating).abs() < 1e-12 * b.rating);
        }
    }
}

/// Step-kernel ordering at matched inverse droop: the uncontrolled system
/// has the largest squared norm, droop improves it, virtual inertia
/// improves it further, and nothing beats `1/(2 lambda (d_eff + rt_inv))`.
#[test]
fn step_kernel_norm_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for draw in 0..100 {
        let rep = common::random_rep(&mut rng);
        let g = generator_tf(&rep, true);
        let lambda = 10f64.powf(rng.gen_range(-1.0..1.0));
        let r_r_inv = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let m_v = 10f64.powf(rng.gen_range(-3.0..-0.5));

        let norm = |c: &ControllerSpec| {
            h2_closed_form(&modal_step_tf(&g, c, lambda).unwrap()).expect_finite("kernel")
        };
        let sw = norm(&ControllerSpec::None);
        let dc = norm(&ControllerSpec::Droop { r_r_inv });
        let vi = norm(&ControllerSpec::VirtualInertia { m_v, r_r_inv });
        let floor = 1.0 / (2.0 * lambda * (rep.d + r_r_inv + rep.r_t_inv()));
        assert!(
            floor < vi && vi < dc && dc < sw,
            "draw {draw}: floor {floor}, vi {vi}, dc {dc}, sw {sw}"
        );
    }
}

/// The virtual-inertia kernel norm decreases in both gains.
#[test]
fn vi_kernel_norm_monotone_in_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    for _ in 0..50 {
        let rep = common::random_rep(&mut rng);
        let g = generator_tf(&rep, true);
        let lambda = 10f64.powf(rng.gen_range(-1.0..1.0));
        let r_r_inv = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let m_v = 10f64.powf(rng.gen_range(-3.0..-0.5));
        let norm = |r: f64, m: f64| {
            h2_closed_form(
                &modal_step_tf(&g, &ControllerSpec::VirtualInertia { m_v: m, r_r_inv: r }, lambda)
                    .unwrap(),
            )
            .expect_finite("kernel")
        };
        let base = norm(r_r_inv, m_v);
        assert!(norm(r_r_inv * 1.01, m_v) < base);
        assert!(norm(r_r_inv, m_v * 1.01) < base);
    }
}

proptest! {
    /// The quartic embedding evaluates identically to the raw polynomial
    /// ratio it came from, across the frequency axis.
    #[test]
    fn embedding_preserves_frequency_response(
        den in proptest::collection::vec(0.05f64..20.0, 1..=4),
        num in proptest::collection::vec(-20.0f64..20.0, 1..=4),
        w in 0.01f64..100.0,
    ) {
        let mut den_coeffs = den.clone();
        den_coeffs.push(1.0); // monic lead
        let num_coeffs: Vec<f64> = num.iter().take(den_coeffs.len()).cloned().collect();
        let ratio = PolyRatio::new(Poly::new(&num_coeffs), Poly::new(&den_coeffs));
        let tf = RationalTF::from_ratio(&ratio).unwrap();
        let s = nalgebra::Complex::new(0.0, w);
        let direct = ratio.eval(s);
        let embedded = tf.eval(s);
        prop_assert!(
            (direct - embedded).norm() <= 1e-9 * direct.norm().max(1e-9),
            "direct {direct}, embedded {embedded}"
        );
    }

    /// Squared-norm scaling: ||c h||^2 = c^2 ||h||^2.
    #[test]
    fn h2_scales_quadratically(seed in 0u64..500, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tf = common::random_stable_tf(&mut rng);
        let mut scaled = tf;
        for b in &mut scaled.b {
            *b *= c;
        }
        let base = h2_closed_form(&tf).expect_finite("base");
        let big = h2_closed_form(&scaled).expect_finite("scaled");
        prop_assert!((big - c * c * base).abs() <= 1e-9 * big.max(1e-12));
    }
}

/// Eigen decomposition reconstructs the scaled Laplacian and keeps the
/// aggregate weights positive.
#[test]
fn modal_decomposition_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    for _ in 0..50 {
        let n = rng.gen_range(2..=10);
        let lap = laplacian_of(&mut rng, n);
        let f = nalgebra::DVector::from_iterator(n, common::random_ratings(&mut rng, n));
        let dec = gridfreq::lti::eigendecompose_scaled(&lap, &f);
        assert_eq!(dec.lambdas[0], 0.0);
        assert!(dec.lambdas[1] > 0.0, "connected case has a spectral gap");

        let mut lf = lap.matrix.clone();
        for i in 0..n {
            for j in 0..n {
                lf[(i, j)] /= (f[i] * f[j]).sqrt();
            }
        }
        let lambda = DMatrix::from_diagonal(&dec.lambdas);
        let recon = &dec.v * lambda * dec.v.transpose();
        assert!((recon - &lf).norm() <= 1e-10 * lf.norm());
        let vtv = dec.v.transpose() * &dec.v;
        assert!((vtv - DMatrix::identity(n, n)).norm() < 1e-10);
        for k in 0..n {
            assert!(dec.gamma[(k, k)] > 0.0);
        }
    }
}
