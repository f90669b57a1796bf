use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Principal directions of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaBasis {
    /// Orthonormal, columns in descending variance order.
    pub rotation: DMatrix<f64>,
    pub variances: Vec<f64>,
    /// Set when the cloud was too small or degenerate for a full basis.
    pub warning: Option<String>,
}

/// Sample-covariance eigenvectors (divisor `p - 1`), sorted by descending
/// eigenvalue. Directions with zero variance are completed from the
/// identity columns by Gram-Schmidt; a QR pass then cleans up
/// orthonormality and each column is signed so that its largest-magnitude
/// entry (first one on ties) is positive.
pub fn pca_directions(points: &[Vec<f64>], dim: usize) -> PcaBasis {
    if points.len() < 2 {
        return PcaBasis {
            rotation: DMatrix::identity(dim, dim),
            variances: vec![0.0; dim],
            warning: Some(format!("{} point(s) is too few for PCA; using the identity", points.len())),
        };
    }
    let p = points.len() as f64;
    let mut mean = DVector::zeros(dim);
    for x in points {
        mean += DVector::from_column_slice(x);
    }
    mean /= p;
    let mut cov = DMatrix::zeros(dim, dim);
    for x in points {
        let d = DVector::from_column_slice(x) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= p - 1.0;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let mut variances = Vec::with_capacity(dim);
    for &k in &order {
        let lambda = eig.eigenvalues[k];
        if top > 0.0 && lambda > RANK_TOL * top {
            basis.push(eig.eigenvectors.column(k).normalize());
            variances.push(lambda);
        }
    }
    let rank = basis.len();
    for e in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[e] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
            variances.push(0.0);
        }
    }
    let rotation = clean_up(DMatrix::from_columns(&basis));
    PcaBasis {
        rotation,
        variances,
        warning: (rank < dim).then(|| format!("sample covariance has rank {rank} < {dim}; completed the basis")),
    }
}

/// Re-orthonormalize by QR while keeping each column's direction, then apply
/// the sign convention.
fn clean_up(m: DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
        let mut best = 0;
        for i in 1..q.nrows() {
            if q[(i, j)].abs() > q[(best, j)].abs() {
                best = i;
            }
        }
        if q[(best, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
