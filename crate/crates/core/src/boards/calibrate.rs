use std::collections::BTreeMap;

use thiserror::Error;

use super::{BoardSpec, CoreFamily, CostCoeffs};

/// One observed latency of a workload on a board.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub board: BoardSpec,
    pub macs: u64,
    pub elements: u64,
    pub latency_s: f64,
}

/// Which coefficients are free during the fit. Unfitted ones keep the
/// board's current value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTarget {
    CyclesPerMac,
    MacAndElement,
}

impl FitTarget {
    fn dims(self) -> usize {
        match self {
            FitTarget::CyclesPerMac => 1,
            FitTarget::MacAndElement => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub coeffs: CostCoeffs,
    /// Σ (log predicted − log measured)².
    pub sum_sq_log_residual: f64,
    /// max |predicted / measured − 1|.
    pub max_rel_residual: f64,
    pub measurements: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("{family}: {measurements} measurement(s) cannot determine {coefficients} coefficient(s)")]
    Underdetermined { family: CoreFamily, measurements: usize, coefficients: usize },
    #[error("measurement on {board} has non-positive latency or empty workload")]
    BadMeasurement { board: String },
}

/// Least-squares fit of log-latency residuals, grouped by core family.
pub fn calibrate(
    measurements: &[Measurement],
    target: FitTarget,
) -> Result<BTreeMap<CoreFamily, Fit>, CalibrationError> {
    let mut groups: BTreeMap<CoreFamily, Vec<&Measurement>> = BTreeMap::new();
    for m in measurements {
        let empty = m.macs == 0 && (m.elements == 0 || target == FitTarget::CyclesPerMac);
        if !(m.latency_s.is_finite() && m.latency_s > 0.0) || empty {
            return Err(CalibrationError::BadMeasurement { board: m.board.name.clone() });
        }
        groups.entry(m.board.core_family).or_default().push(m);
    }
    groups.into_iter().map(|(family, ms)| fit_family(family, &ms, target).map(|f| (family, f))).collect()
}

struct Obs {
    macs: f64,
    elements: f64,
    /// log of penalty / freq
    log_scale: f64,
    log_latency: f64,
}

fn fit_family(family: CoreFamily, ms: &[&Measurement], target: FitTarget) -> Result<Fit, CalibrationError> {
    let dims = target.dims();
    let under = || CalibrationError::Underdetermined { family, measurements: ms.len(), coefficients: dims };
    if ms.len() < dims {
        return Err(under());
    }
    let base = ms[0].board.coeffs();
    let obs: Vec<Obs> = ms
        .iter()
        .map(|m| Obs {
            macs: m.macs as f64,
            elements: m.elements as f64,
            log_scale: (m.board.flash_penalty() / m.board.freq_hz as f64).ln(),
            log_latency: m.latency_s.ln(),
        })
        .collect();

    // Work in log-coefficients so both stay positive, starting from the
    // linear least-squares solution when it is positive.
    let start = linear_start(&obs, [base.cycles_per_mac, base.cycles_per_element], dims);
    let mut theta = [start[0].ln(), start[1].ln()];
    let residuals = |t: &[f64; 2]| -> Vec<(f64, [f64; 2])> {
        let (a, b) = (t[0].exp(), t[1].exp());
        obs.iter()
            .map(|o| {
                let s = a * o.macs + b * o.elements;
                let r = s.ln() + o.log_scale - o.log_latency;
                (r, [a * o.macs / s, b * o.elements / s])
            })
            .collect()
    };
    let cost = |rs: &[(f64, [f64; 2])]| rs.iter().map(|(r, _)| r * r).sum::<f64>();

    if dims == 2 {
        // rank check: all rows proportional means the two are not separable
        let rs = residuals(&theta);
        let (mut jtj00, mut jtj01, mut jtj11) = (0.0, 0.0, 0.0);
        for (_, j) in &rs {
            jtj00 += j[0] * j[0];
            jtj01 += j[0] * j[1];
            jtj11 += j[1] * j[1];
        }
        let det = jtj00 * jtj11 - jtj01 * jtj01;
        if det <= 1e-12 * (jtj00 * jtj11).max(f64::MIN_POSITIVE) {
            return Err(under());
        }
    }

    let mut lambda = 1e-3;
    let mut current = residuals(&theta);
    let mut current_cost = cost(&current);
    for _ in 0..500 {
        let mut g = [0.0; 2];
        let mut h = [[0.0; 2]; 2];
        for (r, j) in &current {
            for p in 0..dims {
                g[p] += j[p] * r;
                for q in 0..dims {
                    h[p][q] += j[p] * j[q];
                }
            }
        }
        let step = {
            let mut a = h;
            for (p, row) in a.iter_mut().enumerate().take(dims) {
                row[p] += lambda * row[p].max(1e-12);
            }
            if dims == 1 {
                [-g[0] / a[0][0], 0.0]
            } else {
                let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
                [-(a[1][1] * g[0] - a[0][1] * g[1]) / det, -(a[0][0] * g[1] - a[1][0] * g[0]) / det]
            }
        };
        let step = step.map(|x| x.clamp(-MAX_LOG_STEP, MAX_LOG_STEP));
        let trial = [theta[0] + step[0], theta[1] + step[1]];
        let trial_res = residuals(&trial);
        let trial_cost = cost(&trial_res);
        if trial_cost <= current_cost {
            theta = trial;
            current = trial_res;
            let improvement = current_cost - trial_cost;
            current_cost = trial_cost;
            lambda = (lambda * 0.1).max(1e-12);
            if step[0].abs().max(step[1].abs()) < 1e-14 || improvement <= 1e-30 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    let coeffs = CostCoeffs {
        cycles_per_mac: theta[0].exp(),
        cycles_per_element: theta[1].exp(),
        external_flash_penalty: base.external_flash_penalty,
    };
    let max_rel_residual = current.iter().map(|(r, _)| (r.exp() - 1.0).abs()).fold(0.0, f64::max);
    Ok(Fit { coeffs, sum_sq_log_residual: current_cost, max_rel_residual, measurements: ms.len() })
}

/// Largest change of a log-coefficient per iteration.
const MAX_LOG_STEP: f64 = 2.0;

/// Minimizes Σ (predicted / measured − 1)² over the free coefficients, a
/// linear problem whose solution is exact for noise-free data. Falls back to
/// `base` when the solution is not strictly positive.
fn linear_start(obs: &[Obs], base: [f64; 2], dims: usize) -> [f64; 2] {
    // rows u·a + v·b ≈ 1 with u = macs / y, v = elements / y
    let rows: Vec<(f64, f64)> = obs
        .iter()
        .map(|o| {
            let inv_y = (o.log_scale - o.log_latency).exp();
            (o.macs * inv_y, o.elements * inv_y)
        })
        .collect();
    let guess = if dims == 1 {
        let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), &(u, v)| (n + u * (1.0 - v * base[1]), d + u * u));
        [num / den, base[1]]
    } else {
        let (mut uu, mut uv, mut vv, mut u1, mut v1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(u, v) in &rows {
            uu += u * u;
            uv += u * v;
            vv += v * v;
            u1 += u;
            v1 += v;
        }
        let det = uu * vv - uv * uv;
        [(vv * u1 - uv * v1) / det, (uu * v1 - uv * u1) / det]
    };
    if guess.iter().all(|x| x.is_finite() && *x > 0.0) {
        guess
    } else {
        base
    }
}
