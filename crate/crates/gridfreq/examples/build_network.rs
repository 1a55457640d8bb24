//! Load a case file, build its Laplacian, Kron-reduce it and check how
//! close the case is to exact proportionality.
//!
//! ```bash
//! cargo run --example build_network
//! ```

use gridfreq::netmodel::{build_laplacian, fit_proportionality, kron_reduce, NetworkCase};

fn main() {
    let case =
        NetworkCase::from_json(include_str!("../cases/ten_bus.json")).expect("bundled case");
    println!(
        "loaded {} buses, {} lines; representative m = {} s^2/rad",
        case.n(),
        case.lines.len(),
        case.representative.m
    );

    let lap = build_laplacian(&case).expect("valid case");
    let row0: f64 = lap.matrix.row(0).iter().sum();
    println!(
        "Laplacian {}x{}; first diagonal {:.4}, first row sum {:.2e}",
        lap.n(),
        lap.n(),
        lap.matrix[(0, 0)],
        row0
    );

    // eliminate the odd buses and keep the even ones
    let retained: Vec<u64> = case.buses.iter().map(|b| b.id).filter(|id| id % 2 == 0).collect();
    let reduced = kron_reduce(&lap, &retained).expect("proper subset of a connected case");
    println!(
        "Kron reduction onto buses {retained:?}: {}x{} equivalent network",
        reduced.n(),
        reduced.n()
    );

    let fit = fit_proportionality(&case);
    println!(
        "proportionality fit: ratings {:?}",
        fit.f.iter().map(|f| (f * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    println!("worst relative residual: {:.2e}", fit.max_residual());
}
