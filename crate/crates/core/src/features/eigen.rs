use crate::Point3;
use nalgebra::{Matrix3, SymmetricEigen};

/// Eigen-decomposition of a neighborhood covariance, sorted descending.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenTriple {
    /// `λ1 >= λ2 >= λ3 >= 0`.
    pub values: [f64; 3],
    /// `vectors[i]` is the unit eigenvector of `values[i]`.
    pub vectors: [[f64; 3]; 3],
}

/// Neighborhood too small or collapsed to a single location.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Degenerate;

/// Centered 3x3 covariance (population normalisation).
pub fn covariance(points: &[Point3]) -> [[f64; 3]; 3] {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for d in 0..3 {
            mean[d] += p[d];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut c = [[0.0; 3]; 3];
    for p in points {
        let v = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in i..3 {
                c[i][j] += v[i] * v[j];
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            c[i][j] /= n;
            c[j][i] = c[i][j];
        }
    }
    c
}

/// PCA of a neighborhood. Needs at least three points.
pub fn covariance_eigen(points: &[Point3]) -> Result<EigenTriple, Degenerate> {
    if points.len() < 3 {
        return Err(Degenerate);
    }
    let c = covariance(points);
    let m = Matrix3::from_fn(|i, j| c[i][j]);
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut values = [0.0; 3];
    let mut vectors = [[0.0; 3]; 3];
    for (slot, &k) in order.iter().enumerate() {
        values[slot] = eig.eigenvalues[k].max(0.0);
        let col = eig.eigenvectors.column(k);
        let norm = col.norm();
        vectors[slot] = [col[0] / norm, col[1] / norm, col[2] / norm];
    }
    Ok(EigenTriple { values, vectors })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigenfeatures {
    pub linearity: f64,
    pub planarity: f64,
    pub omnivariance: f64,
}

/// Linearity, planarity and omnivariance; `None` when `λ1 = 0`.
pub fn eigenfeatures(e: &EigenTriple) -> Option<Eigenfeatures> {
    let [l1, l2, l3] = e.values;
    if !(l1 > 0.0) {
        return None;
    }
    Some(Eigenfeatures {
        linearity: ((l1 - l2) / l1).clamp(0.0, 1.0),
        planarity: ((l2 - l3) / l1).clamp(0.0, 1.0),
        omnivariance: (l1 * l2 * l3).cbrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normal {
    pub vector: [f64; 3],
    /// `λ2 = λ3`: the in-plane direction is arbitrary.
    pub ambiguous: bool,
}

const SNAP: f64 = 1e-12;

/// Eigenvector of the smallest eigenvalue, oriented upward.
pub fn normal(e: &EigenTriple) -> Normal {
    let mut v = e.vectors[2];
    for c in &mut v {
        if c.abs() < SNAP {
            *c = 0.0;
        }
    }
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm == 0.0 {
        v = [0.0, 0.0, 1.0];
    } else {
        for c in &mut v {
            *c /= norm;
        }
    }
    let flip = if v[2] != 0.0 {
        v[2] < 0.0
    } else {
        v.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
    };
    if flip {
        for c in &mut v {
            *c = -*c;
        }
    }
    let [l1, l2, l3] = e.values;
    let ambiguous = (l2 - l3) <= 1e-12 * l1.max(f64::MIN_POSITIVE);
    Normal { vector: v, ambiguous }
}
