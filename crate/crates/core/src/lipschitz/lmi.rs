//! Block matrices of the closed-loop Lipschitz LMI.
//!
//! With `ξ = [ξ^0; ξ^1; ...; ξ^L]` stacking the input and every hidden
//! activation, the network satisfies `B_F ξ = φ(A_F ξ)` and the objective is
//! `J = C_F ξ`. For a diagonal `T >= 0` and `ρ > 0`,
//!
//! ```text
//! M(ρ, T) = [A_F; B_F]^T [[-2αβT, (α+β)T], [(α+β)T, -2T]] [A_F; B_F]
//!           + C_F^T C_F - ρ D_F^T D_F
//! ```
//!
//! and `M ⪯ 0` certifies `√ρ` as an ℓ2 Lipschitz constant of `J`. Sector
//! slopes enter per neuron, so `αβ` and `α+β` are diagonal scalings.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ObjectiveFunction;

/// Absolute margin required on the largest eigenvalue of `M`.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LmiSystem {
    pub a_f: DMatrix<f64>,
    pub b_f: DMatrix<f64>,
    pub c_f: DMatrix<f64>,
    pub d_f: DMatrix<f64>,
    /// Per-neuron `(α_i, β_i)`.
    pub sectors: Vec<(f64, f64)>,
}

impl LmiSystem {
    /// Input dimension `n_0`.
    pub fn input_dim(&self) -> usize {
        self.d_f.nrows()
    }

    /// Number of hidden neurons `N`.
    pub fn num_neurons(&self) -> usize {
        self.a_f.nrows()
    }

    /// Side length `n_0 + N` of `M`.
    pub fn dim(&self) -> usize {
        self.a_f.ncols()
    }

    /// The symmetric matrix `M(ρ, T)`.
    pub fn assemble(&self, rho: f64, t_diag: &[f64]) -> DMatrix<f64> {
        let n0 = self.input_dim();
        let n = self.dim();
        let mut m = self.c_f.transpose() * &self.c_f;
        for i in 0..n0 {
            m[(i, i)] -= rho;
        }
        for (i, (&t, &(alpha, beta))) in t_diag.iter().zip(&self.sectors).enumerate() {
            if t == 0.0 {
                continue;
            }
            let a = self.a_f.row(i);
            let b = n0 + i;
            let aa = -2.0 * alpha * beta * t;
            let ab = (alpha + beta) * t;
            for p in 0..n {
                let ap = a[p];
                if ap == 0.0 {
                    continue;
                }
                if aa != 0.0 {
                    for q in 0..n {
                        m[(p, q)] += aa * ap * a[q];
                    }
                }
                m[(p, b)] += ab * ap;
                m[(b, p)] += ab * ap;
            }
            m[(b, b)] -= 2.0 * t;
        }
        m
    }
}

/// Outcome of [`check_lmi_feasible`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiCheck {
    pub feasible: bool,
    /// Largest eigenvalue of `M(ρ, T)`; `+inf` if the eigensolver failed.
    pub margin: f64,
}

/// Build `A_F, B_F, C_F, D_F` for `obj` with the given per-neuron sectors.
pub fn build_lmi(obj: &ObjectiveFunction, sectors: &[(f64, f64)]) -> Result<LmiSystem> {
    let net = obj.network();
    let hidden = net.hidden_layers();
    let n0 = net.input_dim();
    let n_neurons = net.num_neurons();
    if sectors.len() != n_neurons {
        return Err(Error::invalid(
            "sector list",
            format!("expected {n_neurons} sectors, got {}", sectors.len()),
        ));
    }
    if sectors
        .iter()
        .any(|&(a, b)| !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b))
    {
        return Err(Error::invalid("sector list", "need 0 <= alpha <= beta < inf"));
    }
    let n = n0 + n_neurons;

    let mut a_f = DMatrix::zeros(n_neurons, n);
    let mut row = 0;
    let mut col = 0;
    for (k, layer) in hidden.iter().enumerate() {
        let w = if k == 0 {
            &layer.weights * obj.rotation()
        } else {
            layer.weights.clone()
        };
        a_f.view_mut((row, col), w.shape()).copy_from(&w);
        row += w.nrows();
        col += w.ncols();
    }

    let mut b_f = DMatrix::zeros(n_neurons, n);
    let mut d_f = DMatrix::zeros(n0, n);
    for i in 0..n_neurons {
        b_f[(i, n0 + i)] = 1.0;
    }
    for i in 0..n0 {
        d_f[(i, i)] = 1.0;
    }

    let mut c_f = DMatrix::zeros(1, n);
    for (j, v) in obj.linear_row().iter().enumerate() {
        c_f[(0, j)] = *v;
    }
    if let Some(last_hidden) = hidden.last() {
        let n_last = last_hidden.output_dim();
        let out = obj.output_row();
        let w_out = &net.output_layer().weights;
        for j in 0..n_last {
            let mut s = 0.0;
            for (i, ci) in out.iter().enumerate() {
                s += ci * w_out[(i, j)];
            }
            c_f[(0, n - n_last + j)] = s;
        }
    }

    Ok(LmiSystem {
        a_f,
        b_f,
        c_f,
        d_f,
        sectors: sectors.to_vec(),
    })
}

/// The LMI with every degenerate-sector neuron (`α = β`) substituted out.
///
/// Such a neuron is linear on its domain, `z_i = α_i v_i`, and its quadratic
/// constraint holds with equality. Writing the full stacked vector as
/// `ξ = E ξ_red` with `ξ_red = [ξ^0; free activations]`, the reduced system
/// is the same LMI for `A_F E`, `C_F E` on the free neurons only. Its
/// optimum is the limit of the full one as the eliminated `T_i` grow.
pub(crate) struct ReducedLmi {
    pub system: LmiSystem,
    /// Full indices of the neurons kept, in order.
    pub free: Vec<usize>,
}

pub(crate) fn eliminate_degenerate(lmi: &LmiSystem) -> ReducedLmi {
    let n0 = lmi.input_dim();
    let n = lmi.dim();
    let free: Vec<usize> = (0..lmi.num_neurons()).filter(|&i| lmi.sectors[i].0 != lmi.sectors[i].1).collect();
    let nr = n0 + free.len();
    let mut e = DMatrix::zeros(n, nr);
    for j in 0..n0 {
        e[(j, j)] = 1.0;
    }
    let mut k = 0;
    for i in 0..lmi.num_neurons() {
        if free.get(k) == Some(&i) {
            e[(n0 + i, n0 + k)] = 1.0;
            k += 1;
        } else {
            // Rows of a_f only reference the input and earlier layers.
            let row = lmi.sectors[i].0 * (lmi.a_f.row(i) * &e);
            e.row_mut(n0 + i).copy_from(&row);
        }
    }
    let nf = free.len();
    let mut a_f = DMatrix::zeros(nf, nr);
    let mut b_f = DMatrix::zeros(nf, nr);
    for (r, &i) in free.iter().enumerate() {
        a_f.row_mut(r).copy_from(&(lmi.a_f.row(i) * &e));
        b_f[(r, n0 + r)] = 1.0;
    }
    let mut d_f = DMatrix::zeros(n0, nr);
    for j in 0..n0 {
        d_f[(j, j)] = 1.0;
    }
    ReducedLmi {
        system: LmiSystem {
            a_f,
            b_f,
            c_f: &lmi.c_f * &e,
            d_f,
            sectors: free.iter().map(|&i| lmi.sectors[i]).collect(),
        },
        free,
    }
}

/// Evaluate `λ_max(M(ρ, T))` and compare it against [`PSD_TOLERANCE`].
pub fn check_lmi_feasible(lmi: &LmiSystem, rho: f64, t_diag: &[f64]) -> Result<LmiCheck> {
    if !(rho >= 0.0) || rho.is_infinite() {
        return Err(Error::invalid("rho", format!("must be finite and >= 0, got {rho}")));
    }
    if t_diag.len() != lmi.num_neurons() {
        return Err(Error::invalid(
            "T diagonal",
            format!("expected {} entries, got {}", lmi.num_neurons(), t_diag.len()),
        ));
    }
    if t_diag.iter().any(|t| !(*t >= 0.0) || t.is_infinite()) {
        return Err(Error::invalid("T diagonal", "entries must be finite and >= 0"));
    }
    let m = lmi.assemble(rho, t_diag);
    Ok(max_eigenvalue(m)
        .map(|margin| LmiCheck {
            feasible: margin <= -PSD_TOLERANCE,
            margin,
        })
        .unwrap_or(LmiCheck {
            feasible: false,
            margin: f64::INFINITY,
        }))
}

pub(crate) fn max_eigenvalue(m: DMatrix<f64>) -> Option<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 1000 * n.max(1))?;
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max.is_finite().then_some(max)
}
