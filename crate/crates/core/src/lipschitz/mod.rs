//! Certified ℓ2 Lipschitz bounds for [`ObjectiveFunction`]s.
//!
//! The main route solves the semidefinite feasibility problem of
//! [`lmi`] with the interior-point method in [`barrier`]. A grid search over
//! scaled identities `T = λI` with bisection on `ρ` backs it up, and the
//! spectral-norm product bound caps both: whatever comes out is never worse
//! than [`lipschitz_naive`].

mod barrier;
mod interval;
mod lmi;

pub use interval::{preactivation_intervals, sector_localize, PreactivationBounds};
pub use lmi::{build_lmi, check_lmi_feasible, LmiCheck, LmiSystem, PSD_TOLERANCE};

use lmi::eliminate_degenerate;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::nn::{Layer, ObjectiveFunction};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;
const BISECTION_REL_WIDTH: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LipschitzMethod {
    Sdp,
    NaiveProduct,
}

/// A certified Lipschitz constant together with the data that certifies it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub bound: f64,
    pub method: LipschitzMethod,
    pub rho: f64,
    /// Diagonal of `T` (SDP certificates only).
    pub t_diag: Option<Vec<f64>>,
    /// `λ_max(M(ρ, T))` at the reported point (SDP certificates only).
    pub feasibility_margin: Option<f64>,
    /// Set when the SDP path failed and a fallback produced this certificate.
    pub warning: Option<String>,
}

impl LipschitzCertificate {
    /// A bare constant, for callers that already know `L`.
    pub fn from_constant(bound: f64) -> Self {
        assert!(bound >= 0.0 && bound.is_finite(), "Lipschitz constant must be finite and >= 0");
        LipschitzCertificate {
            bound,
            method: LipschitzMethod::NaiveProduct,
            rho: bound * bound,
            t_diag: None,
            feasibility_margin: None,
            warning: None,
        }
    }
}

/// Which route [`certify`] should take.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertifyMethod {
    #[default]
    Sdp,
    Naive,
}

/// Dispatch on `method`; `bounds` localizes the SDP sectors.
pub fn certify(
    obj: &ObjectiveFunction,
    bounds: Option<&PreactivationBounds>,
    method: CertifyMethod,
) -> LipschitzCertificate {
    match method {
        CertifyMethod::Sdp => lipschitz_sdp(obj, bounds),
        CertifyMethod::Naive => lipschitz_naive(obj),
    }
}

/// Largest singular value by power iteration on `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows == 1 || cols == 1 {
        return m.norm();
    }
    let gram = if rows < cols { m * m.transpose() } else { m.transpose() * m };
    let n = gram.nrows();
    // Deterministic start with no special alignment to any axis.
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.7548776662).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// `‖c^T A R‖ + ‖c^T B W^L‖ · β^{L̄} · Π_k ‖W^k‖ · ‖R‖`.
pub fn lipschitz_naive(obj: &ObjectiveFunction) -> LipschitzCertificate {
    let net = obj.network();
    let linear = obj.linear_row().iter().map(|v| v * v).sum::<f64>().sqrt();
    let out = obj.output_row();
    let w_out = &net.output_layer().weights;
    let mut head = vec![0.0; w_out.ncols()];
    for (i, ci) in out.iter().enumerate() {
        for (j, h) in head.iter_mut().enumerate() {
            *h += ci * w_out[(i, j)];
        }
    }
    let head_norm = head.iter().map(|v| v * v).sum::<f64>().sqrt();
    let hidden = net.hidden_layers();
    let beta = net.activation().beta;
    let product: f64 = hidden.iter().map(|l: &Layer| spectral_norm(&l.weights)).product();
    let rot = if hidden.is_empty() && !obj.is_closed_loop() {
        1.0
    } else {
        spectral_norm(obj.rotation())
    };
    let bound = linear + head_norm * beta.powi(hidden.len() as i32) * product * rot;
    LipschitzCertificate::from_constant(bound)
}

/// Certified bound from the Lipschitz LMI, localized to `bounds` when given.
pub fn lipschitz_sdp(obj: &ObjectiveFunction, bounds: Option<&PreactivationBounds>) -> LipschitzCertificate {
    let naive = lipschitz_naive(obj);
    let net = obj.network();
    if net.hidden_layers().is_empty() {
        return LipschitzCertificate {
            warning: Some("network has no hidden layer; using the norm product".into()),
            ..naive
        };
    }
    let activation = net.activation();
    let sectors = match bounds {
        Some(b) if b.len() == net.num_neurons() => sector_localize(b, activation),
        _ => vec![(activation.alpha, activation.beta); net.num_neurons()],
    };
    let lmi = match build_lmi(obj, &sectors) {
        Ok(lmi) => lmi,
        Err(e) => {
            return LipschitzCertificate {
                warning: Some(format!("could not build LMI: {e}")),
                ..naive
            }
        }
    };
    let layer_sizes: Vec<usize> = net.hidden_layers().iter().map(Layer::output_dim).collect();
    let rho_cap = naive.rho * (1.0 + 1e-6) + PSD_TOLERANCE;

    let mut warning = None;
    let shift = 2.0 * PSD_TOLERANCE;
    let reduced = eliminate_degenerate(&lmi);
    let mut best = if reduced.free.len() == lmi.num_neurons() {
        barrier::solve(&lmi, &layer_sizes, shift).and_then(|sol| match check_lmi_feasible(&lmi, sol.rho, &sol.t_diag) {
            Ok(c) if c.feasible => Some((sol.rho, sol.t_diag, c)),
            // Round-off at the boundary: keep T and push ρ up.
            _ => bisect_rho(&lmi, &sol.t_diag, sol.rho, rho_cap.max(sol.rho * 2.0)).map(|(rho, c)| (rho, sol.t_diag, c)),
        })
    } else {
        let free_sizes: Vec<usize> = {
            let mut start = 0;
            layer_sizes
                .iter()
                .map(|&size| {
                    let kept = reduced.free.iter().filter(|&&i| i >= start && i < start + size).count();
                    start += size;
                    kept
                })
                .collect()
        };
        let solved = if reduced.free.is_empty() {
            Some((reduced.system.c_f.iter().map(|v| v * v).sum::<f64>(), Vec::new()))
        } else {
            barrier::solve(&reduced.system, &free_sizes, shift).map(|sol| (sol.rho, sol.t_diag))
        };
        solved.and_then(|(rho, t_free)| lift(&lmi, &reduced.free, rho, &t_free, rho_cap))
    };
    if best.is_none() {
        warning = Some("interior-point solve failed; used T grid search".to_string());
        best = grid_search(&lmi, rho_cap);
    }

    match best {
        Some((rho, t, check)) if rho.sqrt() < naive.bound => LipschitzCertificate {
            bound: rho.sqrt(),
            method: LipschitzMethod::Sdp,
            rho,
            t_diag: Some(t),
            feasibility_margin: Some(check.margin),
            warning,
        },
        Some(_) => naive,
        None => LipschitzCertificate {
            warning: Some("no feasible LMI point found; using the norm product".into()),
            ..naive
        },
    }
}

/// Smallest feasible `ρ` in `[lo, hi]` for fixed `T`, to relative width
/// `1e-4`. `None` if `hi` itself is infeasible.
fn bisect_rho(lmi: &LmiSystem, t_diag: &[f64], lo: f64, hi: f64) -> Option<(f64, LmiCheck)> {
    let mut hi_check = check_lmi_feasible(lmi, hi, t_diag).ok()?;
    if !hi_check.feasible {
        return None;
    }
    let (mut lo, mut hi) = (lo.max(0.0), hi);
    while hi - lo > BISECTION_REL_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        match check_lmi_feasible(lmi, mid, t_diag) {
            Ok(c) if c.feasible => {
                hi = mid;
                hi_check = c;
            }
            _ => lo = mid,
        }
    }
    Some((hi, hi_check))
}

/// Carry a solution of the reduced LMI back to the full one. The eliminated
/// neurons get a common `T = λ`, scanned upward by decades from the scale of
/// the free entries; each candidate is certified by bisection on `ρ` starting
/// at the reduced optimum, which bounds the full optimum from below.
fn lift(lmi: &LmiSystem, free: &[usize], rho_lo: f64, t_free: &[f64], rho_cap: f64) -> Option<(f64, Vec<f64>, LmiCheck)> {
    let base = t_free.iter().copied().fold(1.0, f64::max);
    let mut t = vec![0.0; lmi.num_neurons()];
    let mut best: Option<(f64, Vec<f64>, LmiCheck)> = None;
    for k in -2..=10 {
        let lambda = base * 10f64.powi(k);
        t.iter_mut().for_each(|v| *v = lambda);
        for (&i, &ti) in free.iter().zip(t_free) {
            t[i] = ti;
        }
        let cap = best.as_ref().map_or(rho_cap, |b| b.0);
        match tight_rho(lmi, &t, rho_lo, cap) {
            Some((rho, c)) if best.as_ref().is_none_or(|b| rho < b.0) => best = Some((rho, t.clone(), c)),
            // Past the best λ the loss is numerical, not structural.
            _ if best.is_some() => break,
            _ => {}
        }
    }
    best
}

/// Smallest certified `ρ` in `(lo, cap]` for fixed `T`, to relative width
/// `1e-10`, probing upward from `lo` with a geometrically growing step.
fn tight_rho(lmi: &LmiSystem, t_diag: &[f64], lo: f64, cap: f64) -> Option<(f64, LmiCheck)> {
    let mut lo = lo.max(0.0);
    let mut step = 1e-10 * lo + PSD_TOLERANCE;
    let (mut hi, mut hi_check) = loop {
        let hi = (lo + step).min(cap);
        match check_lmi_feasible(lmi, hi, t_diag) {
            Ok(c) if c.feasible => break (hi, c),
            _ if hi >= cap => return None,
            _ => {
                lo = hi;
                step *= 8.0;
            }
        }
    };
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        match check_lmi_feasible(lmi, mid, t_diag) {
            Ok(c) if c.feasible => {
                hi = mid;
                hi_check = c;
            }
            _ => lo = mid,
        }
    }
    Some((hi, hi_check))
}

/// `T = λI` over a 16-point log grid on `[1e-3, 1e3]`, then one pass of
/// per-neuron coordinate descent on the best `T`.
fn grid_search(lmi: &LmiSystem, rho_cap: f64) -> Option<(f64, Vec<f64>, LmiCheck)> {
    let nn = lmi.num_neurons();
    let mut best: Option<(f64, Vec<f64>, LmiCheck)> = None;
    for k in 0..16 {
        let lambda = 10f64.powf(-3.0 + 6.0 * k as f64 / 15.0);
        let t = vec![lambda; nn];
        if let Some((rho, c)) = bisect_rho(lmi, &t, 0.0, rho_cap) {
            if best.as_ref().is_none_or(|b| rho < b.0) {
                best = Some((rho, t, c));
            }
        }
    }
    let (mut rho, mut t, mut check) = best?;
    for i in 0..nn {
        for factor in [2.0, 0.5] {
            let mut trial = t.clone();
            trial[i] *= factor;
            if let Some((r, c)) = bisect_rho(lmi, &trial, 0.0, rho) {
                if r < rho {
                    rho = r;
                    t = trial;
                    check = c;
                }
            }
        }
    }
    Some((rho, t, check))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ActivationSector, NeuralNetwork};
    use nalgebra::{dmatrix, dvector, DVector};
    use std::sync::Arc;

    fn network(layers: Vec<DMatrix<f64>>, act: ActivationSector) -> Arc<NeuralNetwork> {
        let layers = layers
            .into_iter()
            .map(|w| {
                let n = w.nrows();
                Layer::new(w, DVector::zeros(n))
            })
            .collect();
        Arc::new(NeuralNetwork::new(layers, act).unwrap())
    }

    #[test]
    fn power_iteration_matches_known_norms() {
        assert!((spectral_norm(&dmatrix![3.0, 0.0; 0.0, -5.0]) - 5.0).abs() < 1e-9);
        assert!((spectral_norm(&dmatrix![1.0, 1.0; 1.0, 1.0]) - 2.0).abs() < 1e-9);
        assert!((spectral_norm(&dmatrix![1.0, -1.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn naive_identity_is_one() {
        let net = network(vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)], ActivationSector::identity());
        let obj = ObjectiveFunction::open_loop(net, dvector![1.0, 0.0]).unwrap();
        assert!((lipschitz_naive(&obj).bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn naive_norm_product() {
        let net = network(
            vec![2.0 * DMatrix::identity(2, 2), 3.0 * DMatrix::identity(2, 2)],
            ActivationSector::relu(),
        );
        let obj = ObjectiveFunction::open_loop(net, dvector![1.0, 0.0]).unwrap();
        assert!((lipschitz_naive(&obj).bound - 6.0).abs() < 1e-9);
    }

    #[test]
    fn naive_is_rotation_invariant() {
        let net = network(
            vec![dmatrix![1.0, 2.0; 0.5, -1.0; 0.0, 3.0], dmatrix![1.0, 1.0, -1.0]],
            ActivationSector::relu(),
        );
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let build = |r: DMatrix<f64>| {
            ObjectiveFunction::closed_loop(
                net.clone(),
                dvector![0.6, 0.8],
                dmatrix![1.0, 1.0; 0.0, 1.0],
                dmatrix![0.5; 1.0],
                r,
            )
            .unwrap()
        };
        let plain = lipschitz_naive(&build(DMatrix::identity(2, 2))).bound;
        let rotated = lipschitz_naive(&build(dmatrix![c, -s; s, c])).bound;
        // ‖c^T A R‖ = ‖c^T A‖ for orthonormal R; the product term uses ‖R‖ = 1.
        assert!((plain - rotated).abs() < 1e-9 * plain);
    }

    #[test]
    fn sdp_relu_projection_is_tight() {
        // J(x) = relu(x_1)
        let net = network(vec![DMatrix::identity(2, 2), dmatrix![1.0, 0.0]], ActivationSector::relu());
        let obj = ObjectiveFunction::open_loop(net, dvector![1.0]).unwrap();
        let cert = lipschitz_sdp(&obj, None);
        assert!(cert.bound >= 1.0 && cert.bound <= 1.0 + 1e-6, "{cert:?}");
    }

    #[test]
    fn sdp_identity_chain_is_exact() {
        let w0 = dmatrix![1.0, 2.0; -0.5, 1.0; 0.3, 0.3];
        let w1 = dmatrix![1.0, -1.0, 0.5; 0.2, 0.4, -0.7];
        let w2 = dmatrix![0.7, -1.3];
        let exact = (&w2 * &w1 * &w0).norm();
        let net = network(vec![w0, w1, w2], ActivationSector::identity());
        let obj = ObjectiveFunction::open_loop(net, dvector![1.0]).unwrap();
        let cert = lipschitz_sdp(&obj, None);
        assert_eq!(cert.method, LipschitzMethod::Sdp, "{cert:?}");
        assert!(cert.bound >= exact * (1.0 - 1e-12));
        assert!((cert.bound - exact) / exact <= 1e-6, "{} vs {exact}", cert.bound);
    }

    #[test]
    fn sdp_zero_head_keeps_only_linear_term() {
        let net = network(vec![dmatrix![1.0, 2.0; 3.0, -1.0], DMatrix::zeros(1, 2)], ActivationSector::relu());
        let obj = ObjectiveFunction::closed_loop(
            net,
            dvector![1.0, 0.0],
            dmatrix![1.0, 1.0; 0.0, 1.0],
            dmatrix![0.5; 1.0],
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cert = lipschitz_sdp(&obj, None);
        assert!(cert.bound <= 2f64.sqrt() + 1e-9, "{cert:?}");
    }

    #[test]
    fn sdp_certificate_is_feasible_and_capped() {
        let net = network(
            vec![
                dmatrix![1.0, -2.0; 0.5, 1.5; -1.0, 0.3; 0.8, 0.8],
                dmatrix![1.0, 0.5, -0.3, 0.2; -0.4, 1.0, 0.6, -1.1],
                dmatrix![1.0, -1.0],
            ],
            ActivationSector::relu(),
        );
        let obj = ObjectiveFunction::open_loop(net, dvector![1.0]).unwrap();
        let cert = lipschitz_sdp(&obj, None);
        let naive = lipschitz_naive(&obj);
        assert!(cert.bound <= naive.bound * (1.0 + 1e-6));
        if cert.method == LipschitzMethod::Sdp {
            assert!(cert.feasibility_margin.unwrap() <= -PSD_TOLERANCE);
            assert!(cert.t_diag.as_ref().unwrap().iter().all(|t| *t >= 0.0));
            assert!((cert.bound - cert.rho.sqrt()).abs() == 0.0);
        }
    }

    #[test]
    fn doubling_direction_doubles_bounds() {
        let net = network(
            vec![dmatrix![1.0, -2.0; 0.5, 1.5; -1.0, 0.3], dmatrix![1.0, 0.5, -0.3]],
            ActivationSector::relu(),
        );
        let one = ObjectiveFunction::open_loop(net.clone(), dvector![1.0]).unwrap();
        let two = ObjectiveFunction::open_loop(net, dvector![2.0]).unwrap();
        assert_eq!(lipschitz_naive(&two).bound, 2.0 * lipschitz_naive(&one).bound);
        let (a, b) = (lipschitz_sdp(&one, None).bound, lipschitz_sdp(&two, None).bound);
        assert!((b - 2.0 * a).abs() <= 1e-6 * b, "{a} {b}");
    }

    #[test]
    fn grid_fallback_finds_a_certificate() {
        let net = network(vec![dmatrix![1.0, 0.5; -0.5, 1.0], dmatrix![1.0, 1.0]], ActivationSector::relu());
        let obj = ObjectiveFunction::open_loop(net, dvector![1.0]).unwrap();
        let lmi = build_lmi(&obj, &[(0.0, 1.0); 2]).unwrap();
        let naive = lipschitz_naive(&obj);
        let (rho, t, check) = grid_search(&lmi, naive.rho * 1.5).expect("grid finds a point");
        assert!(check.feasible);
        assert!(check_lmi_feasible(&lmi, rho, &t).unwrap().feasible);
        assert!(rho.sqrt() <= naive.bound * 1.5f64.sqrt());
    }

    #[test]
    fn feasibility_is_monotone_in_rho() {
        let net = network(vec![dmatrix![1.0, 0.5; -0.5, 1.0], dmatrix![1.0, 1.0]], ActivationSector::relu());
        let obj = ObjectiveFunction::open_loop(net, dvector![1.0]).unwrap();
        let lmi = build_lmi(&obj, &[(0.0, 1.0); 2]).unwrap();
        let t = [5.0, 5.0];
        let mut seen_feasible = false;
        for k in 0..400 {
            let rho = 0.25 * k as f64;
            let c = check_lmi_feasible(&lmi, rho, &t).unwrap();
            if seen_feasible {
                assert!(c.feasible, "lost feasibility at rho = {rho}");
            }
            seen_feasible |= c.feasible;
        }
        assert!(seen_feasible);
    }
}
