//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured margin (run with `--nocapture` to see them).

mod common;

use std::time::Instant;

use gridfreq::h2norm::{
    frequency_variance, h2_closed_form, h2_lyapunov_oracle, H2Result, InfiniteReason,
    NoiseWeights,
};
use gridfreq::lti::{
    assemble_full_state_space, eigendecompose_scaled, generator_tf, modal_closed_loop,
    ControllerSpec,
};
use gridfreq::metrics::{
    nadir_empirical, nadir_exists_second_order, steady_state_effort_share, sync_cost_bounds,
    sync_cost_exact, synchronous_frequency, SecondOrderForm, StepDisturbance,
};
use gridfreq::netmodel::{build_laplacian, proportional_case, NetworkCase};
use gridfreq::simulate::{
    empirical_metrics, simulate_step, simulate_stochastic, simulate_stochastic_ensemble,
    Method, SimConfig,
};
use gridfreq::tuning::{idroop_nu_star, idroop_zero_sync_cost};
use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn two_bus() -> NetworkCase {
    NetworkCase::from_json(include_str!("../cases/two_bus.json")).unwrap()
}

fn three_bus() -> NetworkCase {
    NetworkCase::from_json(include_str!("../cases/three_bus.json")).unwrap()
}

fn ten_bus() -> NetworkCase {
    NetworkCase::from_json(include_str!("../cases/ten_bus.json")).unwrap()
}

/// Criterion 1: the closed-form H2 value agrees with the Lyapunov-equation
/// oracle on 1000 random stable transfer functions of orders 1..=4, within
/// 1e-8 * max(1, value), in under 10 seconds.
#[test]
fn criterion_01_h2_closed_form_vs_lyapunov_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let tf = common::random_stable_tf(&mut rng);
        let closed = h2_closed_form(&tf).expect_finite("closed form");
        let oracle = h2_lyapunov_oracle(&tf.realize())
            .unwrap()
            .expect_finite("oracle");
        let err = (closed - oracle).abs() / closed.abs().max(1.0);
        worst = worst.max(err);
        assert!(
            err <= 1e-8,
            "draw {k} (order {}): closed {closed} vs oracle {oracle}",
            tf.order()
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!(
        "PASS criterion 1: 1000 TFs, worst relative gap {worst:.3e}, {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Criterion 2: droop variance on the homogeneous two-bus fixture equals
/// the closed-form value 1.0, and the Monte-Carlo estimate over 10 seeds
/// lands within 5%, in under 60 seconds.
#[test]
fn criterion_02_droop_variance_closed_form_and_monte_carlo() {
    let start = Instant::now();
    let case = two_bus();
    let lap = build_laplacian(&case).unwrap();
    let decomp = eigendecompose_scaled(&lap, &case.ratings());
    let g = generator_tf(&case.representative, false);
    let law = ControllerSpec::Droop { r_r_inv: 0.5 };
    let w = NoiseWeights {
        kappa_p: 1.0,
        kappa_w: 0.0,
    };
    let closed = frequency_variance(&decomp, &g, &law, &w)
        .unwrap()
        .total
        .expect_finite("closed form");
    assert!(
        (closed - 1.0).abs() <= 1e-12,
        "closed form {closed} differs from 1.0"
    );

    let controllers = common::uniform_controllers(&case, &law);
    let cfg = SimConfig {
        dt: 0.01,
        horizon: 2000.0,
        seed: 7,
        method: Method::EulerMaruyama,
        record_stride: 5,
        allow_vi_measurement_noise: false,
    };
    let traces = simulate_stochastic_ensemble(&case, &controllers, &w, &cfg, 10).unwrap();
    let mean: f64 = traces
        .iter()
        .map(|t| {
            empirical_metrics(t, None)
                .unwrap()
                .h2_total
                .unwrap()
                .expect_finite("empirical")
        })
        .sum::<f64>()
        / traces.len() as f64;
    let rel = (mean - closed).abs() / closed;
    assert!(rel < 0.05, "Monte-Carlo mean {mean} vs closed form {closed}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!(
        "PASS criterion 2: closed form {closed:.15}, MC mean {mean:.4} ({:.2}% off), {:.1}s",
        rel * 100.0,
        elapsed.as_secs_f64()
    );
}

/// Criterion 3: virtual inertia under measurement noise reports an infinite
/// variance with the feedthrough reason, and the simulated variance keeps
/// growing as the step size is halved three times.
#[test]
fn criterion_03_vi_unbounded_variance() {
    let case = two_bus();
    let lap = build_laplacian(&case).unwrap();
    let decomp = eigendecompose_scaled(&lap, &case.ratings());
    let g = generator_tf(&case.representative, false);
    let law = ControllerSpec::VirtualInertia {
        m_v: 0.3,
        r_r_inv: 0.5,
    };
    let w = NoiseWeights {
        kappa_p: 1e-4,
        kappa_w: 1e-3,
    };
    let total = frequency_variance(&decomp, &g, &law, &w).unwrap().total;
    assert_eq!(total, H2Result::Infinite(InfiniteReason::NonzeroFeedthrough));

    let controllers = common::uniform_controllers(&case, &law);
    let mut variances = Vec::new();
    for halving in 0..4 {
        let cfg = SimConfig {
            dt: 0.02 / 2f64.powi(halving),
            horizon: 50.0,
            seed: 11,
            method: Method::EulerMaruyama,
            record_stride: 1,
            allow_vi_measurement_noise: true,
        };
        let trace = simulate_stochastic(&case, &controllers, &w, &cfg).unwrap();
        variances.push(
            empirical_metrics(&trace, None)
                .unwrap()
                .h2_total
                .unwrap()
                .expect_finite("empirical"),
        );
    }
    for k in 1..variances.len() {
        assert!(
            variances[k] > variances[k - 1],
            "variance did not grow under halving: {variances:?}"
        );
    }
    println!("PASS criterion 3: analytic inf (feedthrough); dt-halving variances {variances:?}");
}

/// Criterion 4: the second-order Nadir predicate agrees with a dense
/// step-response maximization on a 20x20x20 grid (xi, z/wn, wn), excluding
/// 1e-3 bands around the equality manifolds, in under 5 minutes.
#[test]
fn criterion_04_nadir_predicate_vs_brute_force() {
    let start = Instant::now();
    let grid: Vec<f64> = (0..20).map(|k| 0.1 + 2.9 * k as f64 / 19.0).collect();
    let wns: Vec<f64> = (0..20)
        .map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / 19.0))
        .collect();

    let mut points = Vec::new();
    for &xi in &grid {
        for &ratio in &grid {
            // skip the equality manifolds of the monotonicity condition
            if (xi - 1.0).abs() < 1e-3
                || (xi - ratio).abs() < 1e-3
                || (xi - 0.5 * (ratio + 1.0 / ratio)).abs() < 1e-3
            {
                continue;
            }
            for &wn in &wns {
                points.push((xi, ratio, wn));
            }
        }
    }
    let disagreements: Vec<_> = points
        .par_iter()
        .filter(|&&(xi, ratio, wn)| {
            let predicted = nadir_exists_second_order(&SecondOrderForm {
                k: 1.0,
                z: ratio * wn,
                xi,
                wn,
            });
            predicted != brute_force_has_nadir(xi, ratio, wn)
        })
        .collect();
    assert!(
        disagreements.is_empty(),
        "{} disagreements, first: {:?}",
        disagreements.len(),
        disagreements.first()
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!(
        "PASS criterion 4: {} grid points, zero disagreements, {:.1}s",
        points.len(),
        elapsed.as_secs_f64()
    );
}

/// Dense maximization of the unit-step response of
/// `K(s+z)/(s^2 + 2 xi wn s + wn^2)` using the analytic response formulas
/// with multiplicative recurrences (dt = 1e-4/wn, horizon 50/(xi wn + 0.01)).
fn brute_force_has_nadir(xi: f64, ratio: f64, wn: f64) -> bool {
    let z = ratio * wn;
    let p_ss = z / (wn * wn);
    let dt = 1e-4 / wn;
    let n = (50.0 / (xi * wn + 0.01) / dt) as usize;
    let mut peak = 0.0f64;
    if xi < 1.0 {
        let a = xi * wn;
        let wd = wn * (1.0 - xi * xi).sqrt();
        let beta = (a - wn * wn / z) / wd;
        let decay = (-a * dt).exp();
        let (cd, sd) = ((wd * dt).cos(), (wd * dt).sin());
        let mut e = 1.0f64;
        let (mut c, mut s) = (1.0f64, 0.0f64);
        for _ in 0..=n {
            let p = p_ss * (1.0 - e * (c + beta * s));
            peak = peak.max(p.abs());
            e *= decay;
            let c_next = c * cd - s * sd;
            s = s * cd + c * sd;
            c = c_next;
        }
    } else {
        let root = (xi * xi - 1.0).sqrt();
        let sig1 = wn * (xi + root);
        let sig2 = wn * (xi - root);
        let eta1 = 0.5 - (xi - wn / z) / (2.0 * root);
        let eta2 = 0.5 + (xi - wn / z) / (2.0 * root);
        let d1 = (-sig1 * dt).exp();
        let d2 = (-sig2 * dt).exp();
        let (mut e1, mut e2) = (1.0f64, 1.0f64);
        for _ in 0..=n {
            let p = p_ss * (1.0 - eta1 * e1 - eta2 * e2);
            peak = peak.max(p.abs());
            e1 *= d1;
            e2 *= d2;
        }
    }
    peak > p_ss * (1.0 + 1e-7)
}

/// Criterion 5: on the proportional 10-bus case with the representative
/// desk-scale parameters, the lead/lag Nadir tuning produces a monotone
/// system frequency (overshoot < 1e-4 |omega_syn|) while droop overshoots
/// by more than 5%.
#[test]
fn criterion_05_nadir_tuning_on_ten_bus_case() {
    let case = ten_bus();
    let rep = case.representative;
    let r_r_inv = rep.r_r_inv();
    let step = StepDisturbance::at_bus(case.n(), 1, -0.3, 1.0);
    let cfg = SimConfig::step_default();

    let idroop = ControllerSpec::IDroop {
        nu: r_r_inv + rep.r_t_inv(),
        delta: 0.2179,
        r_r_inv,
    };
    let droop = ControllerSpec::Droop { r_r_inv };

    let mut overshoots = Vec::new();
    for law in [&idroop, &droop] {
        let controllers = common::uniform_controllers(&case, law);
        let omega_syn = synchronous_frequency(&case, &controllers, &step).unwrap();
        let trace = simulate_step(&case, &controllers, &step, &cfg).unwrap();
        let report = nadir_empirical(&trace.times, &trace.omega_bar, omega_syn).unwrap();
        overshoots.push(report.overshoot / omega_syn.abs());
    }
    assert!(
        overshoots[0] < 1e-4,
        "lead/lag overshoot {:.3e} not eliminated",
        overshoots[0]
    );
    assert!(
        overshoots[1] > 0.05,
        "droop overshoot {:.3e} unexpectedly small",
        overshoots[1]
    );
    println!(
        "PASS criterion 5: overshoot idroop {:.2e}, droop {:.3} (of |omega_syn|)",
        overshoots[0], overshoots[1]
    );
}

/// Criterion 6: the steady-state effort share is identical across the three
/// laws at matched inverse droop (machine precision, 50 random cases), and
/// evaluates to 0.3280 on the desk-scale proportional case.
#[test]
fn criterion_06_effort_share_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4096);
    for draw in 0..50 {
        let (case, _) = common::random_proportional_case(&mut rng, 10);
        let r_r_inv = 10f64.powf(rng.gen_range(-4.0..0.0));
        let droop: Vec<ControllerSpec> = case
            .buses
            .iter()
            .map(|b| ControllerSpec::Droop {
                r_r_inv: b.rating * r_r_inv,
            })
            .collect();
        let vi: Vec<ControllerSpec> = case
            .buses
            .iter()
            .map(|b| ControllerSpec::VirtualInertia {
                m_v: b.rating * rng.gen_range(1e-3..1e-1),
                r_r_inv: b.rating * r_r_inv,
            })
            .collect();
        let idroop: Vec<ControllerSpec> = case
            .buses
            .iter()
            .map(|b| ControllerSpec::IDroop {
                nu: b.rating * rng.gen_range(1e-3..1e2),
                delta: rng.gen_range(1e-3..1e1),
                r_r_inv: b.rating * r_r_inv,
            })
            .collect();
        let es_droop = steady_state_effort_share(&case, &droop).unwrap();
        let es_vi = steady_state_effort_share(&case, &vi).unwrap();
        let es_idroop = steady_state_effort_share(&case, &idroop).unwrap();
        assert_eq!(es_droop, es_vi, "draw {draw}");
        assert_eq!(es_droop, es_idroop, "draw {draw}");
    }

    let case = ten_bus();
    let r_r_inv = case.representative.r_r_inv();
    let controllers =
        common::uniform_controllers(&case, &ControllerSpec::Droop { r_r_inv });
    let es = steady_state_effort_share(&case, &controllers).unwrap();
    assert!((es - 0.3280).abs() <= 1e-4, "ES {es}");
    println!("PASS criterion 6: exact ES equality on 50 cases; desk-scale ES {es:.6}");
}

/// Criterion 7: nu* evaluates to 9.9986 for d = 0.0014 and a 10:1 noise
/// ratio, and dynamic droop at (delta = 0.01, nu = nu*) beats droop for 20
/// random inverse-droop draws.
#[test]
fn criterion_07_nu_star_and_variance_window() {
    let rep = common::table_rep();
    let w = NoiseWeights {
        kappa_p: 1e-4,
        kappa_w: 1e-5,
    };
    let nu_star = idroop_nu_star(&rep, &w);
    assert!((nu_star - 9.9986).abs() <= 1e-4, "nu* = {nu_star}");

    let case = three_bus();
    let lap = build_laplacian(&case).unwrap();
    let decomp = eigendecompose_scaled(&lap, &case.ratings());
    let g = generator_tf(&rep, false);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let r_r_inv = 10f64.powf(rng.gen_range(-4.0..0.0));
        let droop = frequency_variance(&decomp, &g, &ControllerSpec::Droop { r_r_inv }, &w)
            .unwrap()
            .total
            .expect_finite("droop");
        let idroop = frequency_variance(
            &decomp,
            &g,
            &ControllerSpec::IDroop {
                nu: nu_star,
                delta: 0.01,
                r_r_inv,
            },
            &w,
        )
        .unwrap()
        .total
        .expect_finite("idroop");
        assert!(
            idroop < droop,
            "r_r_inv {r_r_inv}: idroop {idroop} !< droop {droop}"
        );
    }
    println!("PASS criterion 7: nu* = {nu_star:.6}; window beats droop on 20 draws");
}

/// Criterion 8: the exact synchronization cost sits inside its rating
/// bracket on 50 random proportional cases, and homogeneous cases order as
/// VI < droop < uncontrolled.
#[test]
fn criterion_08_sync_cost_bounds_and_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(512);
    let mut bracket_checked = 0;
    for draw in 0..50 {
        let (case, rep) = common::random_proportional_case(&mut rng, 8);
        if case.n() < 2 {
            continue;
        }
        let g = generator_tf(&rep, true);
        let lap = build_laplacian(&case).unwrap();
        let decomp = eigendecompose_scaled(&lap, &case.ratings());
        let r_r_inv = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let law = match draw % 3 {
            0 => ControllerSpec::Droop { r_r_inv },
            1 => ControllerSpec::VirtualInertia {
                m_v: 10f64.powf(rng.gen_range(-3.0..-1.0)),
                r_r_inv,
            },
            _ => ControllerSpec::IDroop {
                nu: 10f64.powf(rng.gen_range(-3.0..0.0)),
                delta: 10f64.powf(rng.gen_range(-2.0..0.5)),
                r_r_inv,
            },
        };
        let u0 = DVector::from_fn(case.n(), |_, _| rng.gen_range(-1.0..1.0f64));
        let step = StepDisturbance { u0, time: 0.0 };
        let bounds = sync_cost_bounds(&decomp, &g, &law, &step).unwrap();
        let exact = sync_cost_exact(&decomp, &g, &law, &step).unwrap();
        assert!(
            bounds.lower <= exact * (1.0 + 1e-9) + 1e-300,
            "draw {draw}: lower {} > exact {exact}",
            bounds.lower
        );
        assert!(
            exact <= bounds.upper * (1.0 + 1e-9) + 1e-300,
            "draw {draw}: exact {exact} > upper {}",
            bounds.upper
        );
        bracket_checked += 1;
    }
    assert!(bracket_checked >= 45);

    // homogeneous ordering
    let mut ordered = 0;
    for _ in 0..15 {
        let n = rng.gen_range(3..=8);
        let rep = common::random_rep(&mut rng);
        let lines = common::random_lines(&mut rng, n);
        let case = proportional_case(&rep, &vec![1.0; n], &lines).unwrap();
        let g = generator_tf(&rep, true);
        let lap = build_laplacian(&case).unwrap();
        let decomp = eigendecompose_scaled(&lap, &case.ratings());
        let r_r_inv = 10f64.powf(rng.gen_range(-3.0..-1.0));
        let m_v = 10f64.powf(rng.gen_range(-3.0..-1.0));
        let u0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
        let step = StepDisturbance { u0, time: 0.0 };
        let sw = sync_cost_exact(&decomp, &g, &ControllerSpec::None, &step).unwrap();
        let dc =
            sync_cost_exact(&decomp, &g, &ControllerSpec::Droop { r_r_inv }, &step).unwrap();
        let vi = sync_cost_exact(
            &decomp,
            &g,
            &ControllerSpec::VirtualInertia { m_v, r_r_inv },
            &step,
        )
        .unwrap();
        assert!(vi < dc && dc < sw, "ordering failed: vi {vi}, dc {dc}, sw {sw}");
        ordered += 1;
    }
    println!(
        "PASS criterion 8: {bracket_checked} bracket containments, {ordered} homogeneous orderings"
    );
}

/// Criterion 9: at delta = 1e-4, nu = 1e4 the lead/lag synchronization cost
/// drops below 1e-4 of the droop baseline on the homogeneous 3-bus fixture.
#[test]
fn criterion_09_zero_sync_cost_asymptotics() {
    let case = three_bus();
    let rep = case.representative;
    let g = generator_tf(&rep, true);
    let lap = build_laplacian(&case).unwrap();
    let decomp = eigendecompose_scaled(&lap, &case.ratings());
    let r_r_inv = rep.r_r_inv();
    let step = StepDisturbance::at_bus(3, 0, -0.3, 0.0);

    let droop_cost =
        sync_cost_exact(&decomp, &g, &ControllerSpec::Droop { r_r_inv }, &step).unwrap();
    let rec = idroop_zero_sync_cost(&rep, 1e-4, 1e4);
    let idroop_cost = sync_cost_exact(&decomp, &g, &rec.controller, &step).unwrap();
    let ratio = idroop_cost / droop_cost;
    assert!(
        ratio < 1e-4,
        "idroop {idroop_cost} vs droop {droop_cost} (ratio {ratio:.3e})"
    );
    assert!(idroop_cost > 0.0, "finite caps cannot reach exactly zero");
    println!("PASS criterion 9: cost ratio {ratio:.3e} (idroop {idroop_cost:.3e})");
}

/// Criterion 10: the assembled full state space and the modal
/// reconstruction agree on all three closed-loop transfer-matrix blocks to
/// 1e-8 relative, over 20 random proportional cases (n <= 8).
#[test]
fn criterion_10_full_vs_modal_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let w = NoiseWeights {
        kappa_p: 1e-4,
        kappa_w: 1e-5,
    };
    for draw in 0..20 {
        let (case, rep) = common::random_proportional_case(&mut rng, 8);
        let n = case.n();
        let r_r_inv = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let law = match draw % 4 {
            0 => ControllerSpec::None,
            1 => ControllerSpec::Droop { r_r_inv },
            2 => ControllerSpec::VirtualInertia {
                m_v: 10f64.powf(rng.gen_range(-3.0..-1.0)),
                r_r_inv,
            },
            _ => ControllerSpec::IDroop {
                nu: 10f64.powf(rng.gen_range(-3.0..0.5)),
                delta: 10f64.powf(rng.gen_range(-2.0..0.5)),
                r_r_inv,
            },
        };
        let controllers = common::uniform_controllers(&case, &law);
        let ss = assemble_full_state_space(&case, &controllers, &w).unwrap();
        let lap = build_laplacian(&case).unwrap();
        let decomp = eigendecompose_scaled(&lap, &case.ratings());
        // turbines are part of the assembled loop, so the modal
        // reconstruction uses the turbine-on representative
        let g = generator_tf(&rep, true);

        let f_isqrt =
            DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 1.0 / case.ratings()[i].sqrt()));
        for _ in 0..5 {
            let omega = 10f64.powf(rng.gen_range(-1.3..1.3));
            let s = Complex::new(0.0, omega);
            let full = ss.freq_response(s);

            let mut h_p = DMatrix::<Complex<f64>>::zeros(n, n);
            let mut h_w = DMatrix::<Complex<f64>>::zeros(n, n);
            for k in 0..n {
                let (hp, hw) = modal_closed_loop(&g, &law, decomp.lambdas[k]).unwrap();
                h_p[(k, k)] = hp.eval(s);
                h_w[(k, k)] = hw.eval(s);
            }
            let v = decomp.v.map(|x| Complex::new(x, 0.0));
            let f_isqrt_c = f_isqrt.map(|x| Complex::new(x, 0.0));
            // weighting scenario: W_p = kappa_p F^{1/2}, W_w = kappa_w F^{-1/2},
            // so the rating scalings cancel against the outer projections
            let t_wp = &f_isqrt_c * &v * &h_p * v.transpose() * &f_isqrt_c;
            let t_wd = &f_isqrt_c * &v * &h_p * v.transpose() * Complex::new(w.kappa_p, 0.0);
            let t_wn = &f_isqrt_c * &v * &h_w * v.transpose() * Complex::new(w.kappa_w, 0.0);

            for (name, modal, cols) in [
                ("T_wp", &t_wp, 0),
                ("T_wd", &t_wd, n),
                ("T_wn", &t_wn, 2 * n),
            ] {
                let block = full.view((0, cols), (n, n));
                let diff = (block - modal).norm();
                let scale = modal.norm().max(1e-12);
                assert!(
                    diff <= 1e-8 * scale,
                    "draw {draw} {law:?} {name} at w={omega}: {:.3e} relative",
                    diff / scale
                );
            }
        }
    }
    println!("PASS criterion 10: 20 proportional cases, 3 blocks each at 5 frequencies");
}
