//! Shared fixtures and generators for the integration suites.
#![allow(dead_code)]

use gridfreq::lti::{ControllerSpec, PolyRatio, RationalTF};
use gridfreq::netmodel::{proportional_case, Line, NetworkCase, RepresentativeParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Representative machine used throughout the desk-scale studies.
pub fn table_rep() -> RepresentativeParams {
    RepresentativeParams {
        m: 0.0111,
        d: 0.0014,
        tau: 4.59,
        r_t: Some(748.97),
        r_r: Some(748.97),
    }
}

pub fn ring_lines(n: usize, b: f64) -> Vec<Line> {
    let mut lines: Vec<Line> = (1..n as u64)
        .map(|i| Line {
            from: i,
            to: i + 1,
            susceptance: b,
        })
        .collect();
    if n > 2 {
        lines.push(Line {
            from: n as u64,
            to: 1,
            susceptance: b,
        });
    }
    lines
}

/// Random connected topology: a random spanning tree plus a few extra
/// chords, unit-ish susceptances.
pub fn random_lines(rng: &mut ChaCha8Rng, n: usize) -> Vec<Line> {
    let mut lines = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for i in 2..=n as u64 {
        let j = rng.gen_range(1..i);
        lines.push(Line {
            from: j,
            to: i,
            susceptance: rng.gen_range(0.5..2.5),
        });
        seen.insert((j, i));
    }
    let extras = rng.gen_range(0..=n / 2);
    for _ in 0..extras {
        let a = rng.gen_range(1..=n as u64);
        let b = rng.gen_range(1..=n as u64);
        let key = (a.min(b), a.max(b));
        if a != b && !seen.contains(&key) {
            seen.insert(key);
            lines.push(Line {
                from: key.0,
                to: key.1,
                susceptance: rng.gen_range(0.5..2.5),
            });
        }
    }
    lines
}

pub fn random_ratings(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.5..1.8)).collect()
}

/// Random representative parameters in a physically plausible band around
/// the desk-scale values.
pub fn random_rep(rng: &mut ChaCha8Rng) -> RepresentativeParams {
    RepresentativeParams {
        m: 10f64.powf(rng.gen_range(-2.5..0.0)),
        d: 10f64.powf(rng.gen_range(-3.0..-0.5)),
        tau: rng.gen_range(1.0..8.0),
        r_t: Some(10f64.powf(rng.gen_range(1.0..3.0))),
        r_r: Some(10f64.powf(rng.gen_range(1.0..3.0))),
    }
}

pub fn random_proportional_case(
    rng: &mut ChaCha8Rng,
    n_max: usize,
) -> (NetworkCase, RepresentativeParams) {
    let n = rng.gen_range(2..=n_max);
    let rep = random_rep(rng);
    // mean-1 ratings keep the declared representative consistent with the
    // default inertia-over-mean proportionality rule
    let mut ratings = random_ratings(rng, n);
    let mean: f64 = ratings.iter().sum::<f64>() / n as f64;
    for f in &mut ratings {
        *f /= mean;
    }
    let lines = random_lines(rng, n);
    let case = proportional_case(&rep, &ratings, &lines).expect("generated case is valid");
    (case, rep)
}

pub fn uniform_controllers(case: &NetworkCase, law: &ControllerSpec) -> Vec<ControllerSpec> {
    case.buses.iter().map(|b| law.scaled(b.rating)).collect()
}

/// Log-uniform-coefficient stable transfer function of random order 1..=4,
/// rejection-sampled on the Routh–Hurwitz test.
pub fn random_stable_tf(rng: &mut ChaCha8Rng) -> RationalTF {
    loop {
        let order = rng.gen_range(1..=4usize);
        let coeff = |rng: &mut ChaCha8Rng| 10f64.powf(rng.gen_range(-3.0..3.0));
        let mut den = vec![0.0; order + 1];
        den[order] = 1.0;
        for k in 0..order {
            den[k] = coeff(rng);
        }
        let mut num = vec![0.0; order];
        for k in 0..order {
            num[k] = coeff(rng) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        let ratio = PolyRatio::new(
            gridfreq::lti::Poly::new(&num),
            gridfreq::lti::Poly::new(&den),
        );
        let tf = RationalTF::from_ratio(&ratio).unwrap();
        if tf.is_stable() && tf.order() == order {
            return tf;
        }
    }
}
