//! Primal log-barrier interior-point method for
//!
//! ```text
//! minimize ρ  subject to  -M(ρ, T) ⪰ shift·I,  0 < T_i < T_max_i,
//! ```
//!
//! Writing `G(x) = -M(ρ, T) - shift·I`, every variable enters `G` through a
//! low-rank term: `ρ` through `D_F^T D_F` (rank `n_0`) and each `T_i`
//! through `U_i D_i U_i^T` with `U_i = [a_i, e_{n_0+i}]` (rank 2). Gradient
//! and Hessian of `log det G` then reduce to blocks of `U^T G^{-1} U`.
//!
//! The upper limits `T_max` keep the barrier bounded below: for neurons with
//! a degenerate sector (`α = β`) the `T_i` term is positive semidefinite and
//! `log det G` would otherwise grow without bound along `T_i`.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::lmi::LmiSystem;
use super::spectral_norm;

/// Room given to each `T_i` above its starting value.
const T_HEADROOM: f64 = 1e6;
/// Stop once the barrier duality gap falls below this fraction of `ρ`.
const REL_GAP: f64 = 1e-10;
const T_GROWTH: f64 = 10.0;
const MAX_NEWTON: usize = 200;
/// Centering stops once half the Newton decrement is below this.
const NEWTON_TOL: f64 = 1e-7;
const ROUNDOFF_DECREMENT: f64 = 1e-4;
const MAX_OUTER: usize = 40;

#[derive(Clone, Debug)]
pub(crate) struct BarrierSolution {
    pub rho: f64,
    pub t_diag: Vec<f64>,
}

/// Per-neuron rank-2 data.
struct NeuronTerm {
    /// Column index of `a_i` in the stacked factor matrix; `e_{n0+i}` sits
    /// right after it.
    col: usize,
    d: [[f64; 2]; 2],
}

struct Problem<'a> {
    lmi: &'a LmiSystem,
    shift: f64,
    n0: usize,
    /// `[e_1 .. e_{n0} | a_1 b_1 | a_2 b_2 | ...]`
    factors: DMatrix<f64>,
    terms: Vec<NeuronTerm>,
    t_max: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(lmi: &'a LmiSystem, shift: f64) -> Self {
        let n = lmi.dim();
        let n0 = lmi.input_dim();
        let nn = lmi.num_neurons();
        let mut factors = DMatrix::zeros(n, n0 + 2 * nn);
        for k in 0..n0 {
            factors[(k, k)] = 1.0;
        }
        let mut terms = Vec::with_capacity(nn);
        for (i, &(alpha, beta)) in lmi.sectors.iter().enumerate() {
            let col = n0 + 2 * i;
            for p in 0..n {
                factors[(p, col)] = lmi.a_f[(i, p)];
            }
            factors[(n0 + i, col + 1)] = 1.0;
            terms.push(NeuronTerm {
                col,
                d: [[2.0 * alpha * beta, -(alpha + beta)], [-(alpha + beta), 2.0]],
            });
        }
        Problem {
            lmi,
            shift,
            n0,
            factors,
            terms,
            t_max: Vec::new(),
        }
    }

    fn g(&self, x: &[f64]) -> DMatrix<f64> {
        let mut g = -self.lmi.assemble(x[0], &x[1..]);
        for i in 0..g.nrows() {
            g[(i, i)] -= self.shift;
        }
        g
    }

    fn in_box(&self, x: &[f64]) -> bool {
        x[0] > 0.0
            && x[1..]
                .iter()
                .zip(&self.t_max)
                .all(|(&t, &tm)| t > 0.0 && t < tm)
    }

    /// Barrier value; `None` when `x` is outside the domain.
    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        if !self.in_box(x) {
            return None;
        }
        let chol = Cholesky::new(self.g(x))?;
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut v = t * x[0] - logdet - x[0].ln();
        for (&ti, &tm) in x[1..].iter().zip(&self.t_max) {
            v -= ti.ln() + (tm - ti).ln();
        }
        v.is_finite().then_some(v)
    }

    /// Gradient and Hessian of the barrier at a strictly feasible `x`.
    fn derivatives(&self, x: &[f64], t: f64, chol: &Cholesky<f64, Dyn>) -> (Vec<f64>, DMatrix<f64>) {
        let nv = x.len();
        let n0 = self.n0;
        let v = chol.solve(&self.factors);
        let w = self.factors.transpose() * v;

        let mut grad = vec![0.0; nv];
        let mut hess = DMatrix::zeros(nv, nv);

        // ρ
        let mut tr_e = 0.0;
        let mut ee = 0.0;
        for k in 0..n0 {
            tr_e += w[(k, k)];
            for l in 0..n0 {
                ee += w[(k, l)] * w[(k, l)];
            }
        }
        grad[0] = t - tr_e - 1.0 / x[0];
        hess[(0, 0)] = ee + 1.0 / (x[0] * x[0]);

        for (i, term) in self.terms.iter().enumerate() {
            let vi = 1 + i;
            let c = term.col;
            let d = &term.d;
            // tr(G^{-1} F_i) = tr(D_i W_ii)
            let tr_f = d[0][0] * w[(c, c)] + d[0][1] * w[(c + 1, c)] + d[1][0] * w[(c, c + 1)] + d[1][1] * w[(c + 1, c + 1)];
            let (ti, tm) = (x[vi], self.t_max[i]);
            grad[vi] = -tr_f - 1.0 / ti + 1.0 / (tm - ti);

            // tr(G^{-1} E G^{-1} F_i) = Σ_k w_k^T D_i w_k
            let mut ef = 0.0;
            for k in 0..n0 {
                let (p, q) = (w[(k, c)], w[(k, c + 1)]);
                ef += d[0][0] * p * p + 2.0 * d[0][1] * p * q + d[1][1] * q * q;
            }
            hess[(0, vi)] = ef;
            hess[(vi, 0)] = ef;

            for (j, other) in self.terms.iter().enumerate().skip(i) {
                let vj = 1 + j;
                let cj = other.col;
                let dj = &other.d;
                let wij = [[w[(c, cj)], w[(c, cj + 1)]], [w[(c + 1, cj)], w[(c + 1, cj + 1)]]];
                // tr(D_i W_ij D_j W_ji) = Σ_ps (D_i W_ij D_j)_ps (W_ij)_ps
                let mut s = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        let mut prod = 0.0;
                        for r in 0..2 {
                            for u in 0..2 {
                                prod += d[p][r] * wij[r][u] * dj[u][q];
                            }
                        }
                        s += prod * wij[p][q];
                    }
                }
                hess[(vi, vj)] = s;
                hess[(vj, vi)] = s;
            }
            hess[(vi, vi)] += 1.0 / (ti * ti) + 1.0 / ((tm - ti) * (tm - ti));
        }
        (grad, hess)
    }

    /// Largest step along `dx` that keeps the box constraints strict.
    fn max_box_step(&self, x: &[f64], dx: &[f64]) -> f64 {
        let mut s: f64 = f64::INFINITY;
        if dx[0] < 0.0 {
            s = s.min(-x[0] / dx[0]);
        }
        for (i, &tm) in self.t_max.iter().enumerate() {
            let (ti, di) = (x[1 + i], dx[1 + i]);
            if di < 0.0 {
                s = s.min(-ti / di);
            } else if di > 0.0 {
                s = s.min((tm - ti) / di);
            }
        }
        s
    }
}

/// A strictly feasible `(ρ, T)` built layer by layer.
///
/// Each neuron term satisfies `2(v-αz)(v-βz) >= z² - (α+β)² v²`, and a
/// layer's pre-activations depend only on the input and earlier layers.
/// With `s_k = max(α+β) ‖A_k‖` for the rows `A_k` of layer `k`, choosing
/// `τ_k = min_{j<k} τ_j / max(2 K s_k², 1)` over `K` layers lets every layer
/// keep half its own weight, so the homogeneous part of `G` is at least
/// `min τ/2` times the identity; scaling the whole point then dominates the
/// constant `-C_F^T C_F - shift·I`.
fn initial_point(p: &Problem<'_>, layer_sizes: &[usize]) -> Option<Vec<f64>> {
    let lmi = p.lmi;
    let layers: Vec<usize> = layer_sizes.iter().copied().filter(|&s| s > 0).collect();
    let count = layers.len() as f64;
    let mut taus: Vec<f64> = Vec::with_capacity(layers.len());
    let mut row = 0;
    let mut rho_base = 0.0;
    for &size in &layers {
        let block = lmi.a_f.rows(row, size).clone_owned();
        let sigma = lmi.sectors[row..row + size].iter().map(|&(a, b)| a + b).fold(0.0, f64::max);
        let s = sigma * spectral_norm(&block);
        let tau = match taus.iter().copied().reduce(f64::min) {
            None => 1.0,
            Some(prev) => prev / (2.0 * count * s * s).max(1.0),
        };
        rho_base += tau * s * s;
        taus.push(tau);
        row += size;
    }
    let mu = taus.iter().fold(f64::INFINITY, |m, &t| m.min(0.5 * t));
    rho_base += mu;

    let c_norm2: f64 = lmi.c_f.iter().map(|v| v * v).sum();
    let mut scale = 2.0 * (c_norm2 + p.shift) / mu;
    let mut x = vec![0.0; 1 + lmi.num_neurons()];
    for _ in 0..60 {
        x[0] = scale * rho_base;
        let mut i = 0;
        for (k, &size) in layers.iter().enumerate() {
            for _ in 0..size {
                x[1 + i] = scale * taus[k];
                i += 1;
            }
        }
        if x.iter().all(|v| v.is_finite() && *v > 0.0) && Cholesky::new(p.g(&x)).is_some() {
            return Some(x);
        }
        scale *= 2.0;
    }
    None
}

/// Minimize `ρ` over the LMI. `layer_sizes` lists hidden-layer widths so the
/// starting point can be built per layer.
pub(crate) fn solve(lmi: &LmiSystem, layer_sizes: &[usize], shift: f64) -> Option<BarrierSolution> {
    debug_assert_eq!(layer_sizes.iter().sum::<usize>(), lmi.num_neurons());
    if lmi.num_neurons() == 0 {
        return None;
    }
    let mut p = Problem::new(lmi, shift);
    let mut x = initial_point(&p, layer_sizes)?;
    p.t_max = x[1..].iter().map(|t| t * T_HEADROOM).collect();

    let barrier_degree = (lmi.dim() + 1 + 2 * lmi.num_neurons()) as f64;
    let mut t = barrier_degree / x[0];

    for _ in 0..MAX_OUTER {
        let mut stalled = false;
        for _ in 0..MAX_NEWTON {
            let Some(chol) = Cholesky::new(p.g(&x)) else {
                stalled = true;
                break;
            };
            let (grad, hess) = p.derivatives(&x, t, &chol);
            let Some(dx) = newton_direction(hess, &grad) else {
                stalled = true;
                break;
            };
            let slope: f64 = grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
            let decrement = -slope;
            if decrement.is_nan() || decrement < 0.0 {
                stalled = true;
                break;
            }
            if decrement * 0.5 <= NEWTON_TOL {
                break;
            }
            let f0 = match p.value(&x, t) {
                Some(v) => v,
                None => {
                    stalled = true;
                    break;
                }
            };
            let mut s = (0.99 * p.max_box_step(&x, &dx)).min(1.0);
            let mut accepted = None;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + s * di).collect();
                if let Some(f) = p.value(&trial, t) {
                    if f <= f0 + 0.25 * s * slope {
                        accepted = Some(trial);
                        break;
                    }
                }
                s *= 0.5;
            }
            match accepted {
                Some(next) => x = next,
                // Below this decrement the barrier change is lost in
                // round-off; the point is as centered as it will get.
                None if decrement < ROUNDOFF_DECREMENT => break,
                None => {
                    stalled = true;
                    break;
                }
            }
        }
        if stalled || barrier_degree / t <= REL_GAP * x[0] {
            break;
        }
        t *= T_GROWTH;
    }

    Some(BarrierSolution {
        rho: x[0],
        t_diag: x[1..].to_vec(),
    })
}

fn newton_direction(hess: DMatrix<f64>, grad: &[f64]) -> Option<Vec<f64>> {
    let n = grad.len();
    let rhs = DMatrix::from_iterator(n, 1, grad.iter().map(|g| -g));
    // Diagonal scaling keeps the factorization stable when ρ and the T_i
    // live on very different scales.
    let scale: Vec<f64> = (0..n).map(|i| 1.0 / hess[(i, i)].abs().max(1e-300).sqrt()).collect();
    let mut h = hess;
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] *= scale[i] * scale[j];
        }
    }
    let mut r = rhs;
    for i in 0..n {
        r[(i, 0)] *= scale[i];
    }
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut hr = h.clone();
        for i in 0..n {
            hr[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(hr) {
            let sol = ch.solve(&r);
            let dx: Vec<f64> = (0..n).map(|i| sol[(i, 0)] * scale[i]).collect();
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        reg = if reg == 0.0 { 1e-12 } else { reg * 100.0 };
    }
    None
}
