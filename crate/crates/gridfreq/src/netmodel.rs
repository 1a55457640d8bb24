//! Network cases: loading, validation, Laplacian construction, Kron
//! reduction and proportionality fitting.
//!
//! A case is a UTF-8 JSON document:
//!
//! ```json
//! {
//!   "representative": { "m": 0.0111, "d": 0.0014, "tau": 4.59,
//!                       "r_t": 748.97, "r_r": 748.97 },
//!   "buses": [
//!     { "id": 1, "voltage_mag": 1.0, "angle0": 0.0,
//!       "m": 0.0111, "d": 0.0014, "tau": 4.59,
//!       "r_t_inv": 0.001335, "deadband": 0.0, "rating": 1.0 }
//!   ],
//!   "lines": [ { "from": 1, "to": 2, "susceptance": 1.0 } ]
//! }
//! ```
//!
//! Units are per-unit power quantities with inertia in s²/rad, damping in
//! s/rad, time constants in s and frequency deviations in rad/s. `rating`
//! is the dimensionless proportionality parameter; when omitted it defaults
//! to the bus inertia over the mean inertia.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("singular block: eliminated submatrix has reciprocal condition {rcond:.3e}")]
    SingularBlock { rcond: f64 },
}

/// Per-bus generator parameters (swing + first-order turbine).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Inertia (s²/rad).
    pub m: f64,
    /// Damping (s/rad).
    pub d: f64,
    /// Turbine time constant (s).
    pub tau: f64,
    /// Inverse turbine droop 1/r_t; zero disables the turbine loop.
    pub r_t_inv: f64,
    /// Governor deadband threshold (rad/s).
    pub deadband: f64,
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: u64,
    pub voltage_mag: f64,
    /// Equilibrium angle (rad).
    pub angle0: f64,
    pub gen: GeneratorParams,
    /// Proportionality parameter f_i (> 0).
    pub rating: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Line {
    pub from: u64,
    pub to: u64,
    /// Line susceptance (p.u.), > 0.
    pub susceptance: f64,
}

/// Parameters of the representative machine that per-bus dynamics scale
/// from. `r_t`/`r_r` are droop coefficients; `None` means the corresponding
/// loop is absent (inverse droop zero).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RepresentativeParams {
    pub m: f64,
    pub d: f64,
    pub tau: f64,
    pub r_t: Option<f64>,
    pub r_r: Option<f64>,
}

impl RepresentativeParams {
    pub fn r_t_inv(&self) -> f64 {
        self.r_t.map_or(0.0, |r| 1.0 / r)
    }

    pub fn r_r_inv(&self) -> f64 {
        self.r_r.map_or(0.0, |r| 1.0 / r)
    }
}

/// A validated network case. Construction goes through [`load_case`] or
/// [`NetworkCase::from_json`]; both enforce the invariants (positive
/// parameters, known line endpoints, one line per pair, connectivity).
#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub representative: RepresentativeParams,
}

// ---------------------------------------------------------------------------
// Schema (serde view of the JSON document)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusSchema {
    id: u64,
    voltage_mag: f64,
    angle0: f64,
    m: f64,
    d: f64,
    tau: f64,
    r_t_inv: f64,
    #[serde(default)]
    deadband: f64,
    #[serde(default)]
    rating: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseSchema {
    representative: RepresentativeParams,
    buses: Vec<BusSchema>,
    lines: Vec<Line>,
}

impl NetworkCase {
    /// Parse and validate a case from its JSON text.
    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let schema: CaseSchema =
            serde_json::from_str(text).map_err(|e| NetError::Parse(e.to_string()))?;
        Self::from_schema(schema)
    }

    fn from_schema(schema: CaseSchema) -> Result<Self, NetError> {
        if schema.buses.is_empty() {
            return Err(NetError::Validation("case has no buses".into()));
        }
        let rep = schema.representative;
        for (name, v) in [("m", rep.m), ("d", rep.d), ("tau", rep.tau)] {
            if !(v > 0.0) {
                return Err(NetError::Validation(format!(
                    "representative {name} must be > 0, got {v}"
                )));
            }
        }
        for (name, v) in [("r_t", rep.r_t), ("r_r", rep.r_r)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(NetError::Validation(format!(
                        "representative {name} must be > 0, got {v}"
                    )));
                }
            }
        }

        let mean_m =
            schema.buses.iter().map(|b| b.m).sum::<f64>() / schema.buses.len() as f64;
        let mut buses = Vec::with_capacity(schema.buses.len());
        for b in &schema.buses {
            let checks = [
                ("voltage_mag", b.voltage_mag, true),
                ("m", b.m, true),
                ("d", b.d, true),
                ("tau", b.tau, true),
                ("r_t_inv", b.r_t_inv, false),
                ("deadband", b.deadband, false),
            ];
            for (name, v, strict) in checks {
                let ok = if strict { v > 0.0 } else { v >= 0.0 };
                if !ok || !v.is_finite() {
                    return Err(NetError::Validation(format!(
                        "bus {}: {name} out of range ({v})",
                        b.id
                    )));
                }
            }
            let rating = b.rating.unwrap_or(b.m / mean_m);
            if !(rating > 0.0) {
                return Err(NetError::Validation(format!(
                    "bus {}: rating must be > 0, got {rating}",
                    b.id
                )));
            }
            buses.push(Bus {
                id: b.id,
                voltage_mag: b.voltage_mag,
                angle0: b.angle0,
                gen: GeneratorParams {
                    m: b.m,
                    d: b.d,
                    tau: b.tau,
                    r_t_inv: b.r_t_inv,
                    deadband: b.deadband,
                },
                rating,
            });
        }

        let mut index: HashMap<u64, usize> = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(NetError::Validation(format!("duplicate bus id {}", b.id)));
            }
        }

        let mut seen_pairs = std::collections::HashSet::new();
        for line in &schema.lines {
            if line.from == line.to {
                return Err(NetError::Validation(format!(
                    "line {}-{} connects a bus to itself",
                    line.from, line.to
                )));
            }
            for end in [line.from, line.to] {
                if !index.contains_key(&end) {
                    return Err(NetError::Validation(format!("line endpoint {end} unknown")));
                }
            }
            if !(line.susceptance > 0.0) {
                return Err(NetError::Validation(format!(
                    "line {}-{}: susceptance must be > 0, got {}",
                    line.from, line.to, line.susceptance
                )));
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen_pairs.insert(key) {
                return Err(NetError::Validation(format!(
                    "duplicate line between {} and {}",
                    key.0, key.1
                )));
            }
        }

        let case = NetworkCase {
            buses,
            lines: schema.lines,
            representative: rep,
        };
        if !case.is_connected() {
            return Err(NetError::Validation("graph not connected".into()));
        }
        Ok(case)
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: u64) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Ratings as a vector, ordered like `buses`.
    pub fn ratings(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.buses.iter().map(|b| b.rating))
    }

    fn is_connected(&self) -> bool {
        let n = self.n();
        if n <= 1 {
            return true;
        }
        let index: HashMap<u64, usize> =
            self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut adj = vec![Vec::new(); n];
        for line in &self.lines {
            let (a, b) = (index[&line.from], index[&line.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn to_json(&self) -> String {
        let schema = CaseSchema {
            representative: self.representative,
            buses: self
                .buses
                .iter()
                .map(|b| BusSchema {
                    id: b.id,
                    voltage_mag: b.voltage_mag,
                    angle0: b.angle0,
                    m: b.gen.m,
                    d: b.gen.d,
                    tau: b.gen.tau,
                    r_t_inv: b.gen.r_t_inv,
                    deadband: b.gen.deadband,
                    rating: Some(b.rating),
                })
                .collect(),
            lines: self.lines.clone(),
        };
        serde_json::to_string_pretty(&schema).expect("case serialization cannot fail")
    }
}

/// Build an exactly proportional synthetic case: bus `i` (ids `1..=n`)
/// carries `m_i = f_i m`, `d_i = f_i d`, `tau_i = tau`,
/// `r_t_inv_i = f_i / r_t`, unit voltage and zero equilibrium angle.
/// Handy for studies where the diagonalized analysis is exact.
pub fn proportional_case(
    rep: &RepresentativeParams,
    ratings: &[f64],
    lines: &[Line],
) -> Result<NetworkCase, NetError> {
    let schema = CaseSchema {
        representative: *rep,
        buses: ratings
            .iter()
            .enumerate()
            .map(|(i, &f)| BusSchema {
                id: i as u64 + 1,
                voltage_mag: 1.0,
                angle0: 0.0,
                m: f * rep.m,
                d: f * rep.d,
                tau: rep.tau,
                r_t_inv: f * rep.r_t_inv(),
                deadband: 0.0,
                rating: Some(f),
            })
            .collect(),
        lines: lines.to_vec(),
    };
    NetworkCase::from_schema(schema)
}

/// Load and validate a case file.
pub fn load_case<P: AsRef<Path>>(path: P) -> Result<NetworkCase, NetError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| NetError::Parse(format!("{}: {e}", path.as_ref().display())))?;
    NetworkCase::from_json(&text)
}

// ---------------------------------------------------------------------------
// Laplacian
// ---------------------------------------------------------------------------

/// Symmetric PSD network Laplacian with zero row sums, indexed like the
/// case's bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    pub matrix: DMatrix<f64>,
    pub bus_ids: Vec<u64>,
}

impl LaplacianMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Build the linearized power-flow Laplacian: for each line {i,j} the
/// coupling weight is `|V_i||V_j| b_ij cos(theta_i - theta_j)` at the
/// equilibrium angles, diagonals set so rows sum to zero.
///
/// Rejects equilibrium angle differences at or beyond pi/2 across a line
/// (the linearization's standing assumption), with 1e-9 slack.
pub fn build_laplacian(case: &NetworkCase) -> Result<LaplacianMatrix, NetError> {
    let n = case.n();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for line in &case.lines {
        let i = case.bus_index(line.from).expect("validated endpoint");
        let j = case.bus_index(line.to).expect("validated endpoint");
        let diff = case.buses[i].angle0 - case.buses[j].angle0;
        if diff.abs() >= std::f64::consts::FRAC_PI_2 - 1e-9 {
            return Err(NetError::Validation(format!(
                "line {}-{}: equilibrium angle difference {:.6} rad is not below pi/2",
                line.from, line.to, diff
            )));
        }
        let w = case.buses[i].voltage_mag * case.buses[j].voltage_mag
            * line.susceptance
            * diff.cos();
        l[(i, j)] -= w;
        l[(j, i)] -= w;
        l[(i, i)] += w;
        l[(j, j)] += w;
    }
    Ok(LaplacianMatrix {
        matrix: l,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
    })
}

/// Kron reduction: eliminate all buses not in `retained` by taking the Schur
/// complement of the eliminated principal block.
///
/// The result is again a Laplacian (symmetric PSD, zero row sums) over the
/// retained buses, in their original relative order. Retaining every bus
/// returns the input unchanged.
pub fn kron_reduce(lap: &LaplacianMatrix, retained: &[u64]) -> Result<LaplacianMatrix, NetError> {
    if retained.is_empty() {
        return Err(NetError::Validation("retained set is empty".into()));
    }
    let mut keep = Vec::new();
    for id in retained {
        match lap.bus_ids.iter().position(|b| b == id) {
            Some(i) => {
                if !keep.contains(&i) {
                    keep.push(i);
                }
            }
            None => {
                return Err(NetError::Validation(format!(
                    "retained bus {id} not in Laplacian"
                )))
            }
        }
    }
    keep.sort_unstable();
    let elim: Vec<usize> = (0..lap.n()).filter(|i| !keep.contains(i)).collect();
    if elim.is_empty() {
        return Ok(lap.clone());
    }

    let l = &lap.matrix;
    let l_rr = select(l, &keep, &keep);
    let l_re = select(l, &keep, &elim);
    let l_er = select(l, &elim, &keep);
    let l_ee = select(l, &elim, &elim);

    // Reciprocal condition estimate on the eliminated block; it is
    // symmetric PD for any proper subset of a connected network, so the
    // eigenvalue ratio is the exact 2-norm condition number.
    let eig = l_ee.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    let rcond = if max_ev > 0.0 { min_ev / max_ev } else { 0.0 };
    if !(rcond > 1e-12) {
        return Err(NetError::SingularBlock { rcond });
    }

    let solved = l_ee
        .lu()
        .solve(&l_er)
        .ok_or(NetError::SingularBlock { rcond })?;
    let mut reduced = l_rr - l_re * solved;
    // Symmetrize away the last bits of roundoff.
    reduced = (reduced.clone() + reduced.transpose()) * 0.5;
    Ok(LaplacianMatrix {
        matrix: reduced,
        bus_ids: keep.iter().map(|&i| lap.bus_ids[i]).collect(),
    })
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

// ---------------------------------------------------------------------------
// Proportionality fitting
// ---------------------------------------------------------------------------

/// How the proportionality parameters f_i are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProportionalityRule {
    /// f_i = m_i / mean(m). The default.
    InertiaOverMean,
    /// f_i = m_i.
    Inertia,
    /// f_i = the rating stored on each bus.
    StoredRating,
}

/// Per-bus relative deviations from an exactly proportional case.
#[derive(Debug, Clone, Copy)]
pub struct BusResidual {
    pub bus_id: u64,
    /// |d_i - f_i d| / (f_i d)
    pub damping: f64,
    /// |tau_i - tau| / tau
    pub turbine_time: f64,
    /// |r_t_inv_i - f_i r_t_inv| / (f_i r_t_inv); 1.0 when for exactly one
    /// side the turbine loop is absent.
    pub turbine_droop: f64,
}

#[derive(Debug, Clone)]
pub struct ProportionalityFit {
    /// Diagonal of F, ordered like the case's buses.
    pub f: DVector<f64>,
    pub residuals: Vec<BusResidual>,
}

impl ProportionalityFit {
    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .flat_map(|r| [r.damping, r.turbine_time, r.turbine_droop])
            .fold(0.0, f64::max)
    }
}

/// Fit proportionality parameters with the default rule (inertia over mean
/// inertia) and report how far the case is from exact proportionality.
/// Residuals are reported, never rejected.
pub fn fit_proportionality(case: &NetworkCase) -> ProportionalityFit {
    fit_proportionality_with(case, ProportionalityRule::InertiaOverMean)
}

pub fn fit_proportionality_with(
    case: &NetworkCase,
    rule: ProportionalityRule,
) -> ProportionalityFit {
    let n = case.n();
    let mean_m = case.buses.iter().map(|b| b.gen.m).sum::<f64>() / n as f64;
    let f = DVector::from_iterator(
        n,
        case.buses.iter().map(|b| match rule {
            ProportionalityRule::InertiaOverMean => b.gen.m / mean_m,
            ProportionalityRule::Inertia => b.gen.m,
            ProportionalityRule::StoredRating => b.rating,
        }),
    );
    let rep = &case.representative;
    let rt_inv = rep.r_t_inv();
    let residuals = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let fi = f[i];
            let turbine_droop = if rt_inv > 0.0 {
                (b.gen.r_t_inv - fi * rt_inv).abs() / (fi * rt_inv)
            } else if b.gen.r_t_inv == 0.0 {
                0.0
            } else {
                1.0
            };
            BusResidual {
                bus_id: b.id,
                damping: (b.gen.d - fi * rep.d).abs() / (fi * rep.d),
                turbine_time: (b.gen.tau - rep.tau).abs() / rep.tau,
                turbine_droop,
            }
        })
        .collect();
    ProportionalityFit { f, residuals }
}
