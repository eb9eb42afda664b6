//! Chebyshev collocation on an interval: meshes, barycentric Lagrange
//! evaluation, differentiation matrices and block discretizations of
//! derivative operators with one boundary (splicing) row.

use crate::error::{Error, Result};
use crate::linalg::RMat;

/// `2N+1` Chebyshev extremal points on `[lower, upper]`, ascending, with
/// barycentric weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMesh {
    pub n: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Symmetric mesh on `[-tau_max, tau_max]`; the middle node is exactly 0.
pub fn build_mesh(n: usize, tau_max: f64) -> Result<SpectralMesh> {
    if !(tau_max > 0.0 && tau_max.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau_max must be positive, got {tau_max}")));
    }
    build_interval_mesh(n, -tau_max, tau_max)
}

/// Mesh of `2N+1` Chebyshev extremal points on `[lower, upper]`.
pub fn build_interval_mesh(n: usize, lower: f64, upper: f64) -> Result<SpectralMesh> {
    if n < 1 {
        return Err(Error::InvalidArgument("mesh parameter N must be at least 1".into()));
    }
    if !(upper > lower && lower.is_finite() && upper.is_finite()) {
        return Err(Error::InvalidArgument(format!("empty interval [{lower}, {upper}]")));
    }
    let count = 2 * n + 1;
    let deg = (2 * n) as f64;
    // reference nodes on [-1, 1], symmetric by construction
    let mut x = vec![0.0; count];
    for k in 0..n {
        let v = -(std::f64::consts::PI * k as f64 / deg).cos();
        x[k] = v;
        x[count - 1 - k] = -v;
    }
    x[0] = -1.0;
    x[count - 1] = 1.0;
    x[n] = 0.0;
    let mid = 0.5 * (lower + upper);
    let half = 0.5 * (upper - lower);
    let points = x
        .iter()
        .map(|&t| if t == 0.0 { mid } else { mid + half * t })
        .collect();
    let weights = (0..count)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            if k == 0 || k == count - 1 {
                0.5 * sign
            } else {
                sign
            }
        })
        .collect();
    Ok(SpectralMesh { n, points, weights, lower, upper })
}

impl SpectralMesh {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the node `theta_{N,0}` (the middle node).
    pub fn center(&self) -> usize {
        self.n
    }

    /// Values `l_k(t)` of all Lagrange basis polynomials at `t`.
    pub fn lagrange_row(&self, t: f64) -> Vec<f64> {
        let scale = (self.upper - self.lower).abs();
        let mut out = vec![0.0; self.len()];
        for (k, &xk) in self.points.iter().enumerate() {
            if (t - xk).abs() <= 1e-15 * scale {
                out[k] = 1.0;
                return out;
            }
        }
        let mut denom = 0.0;
        for (k, (&xk, &wk)) in self.points.iter().zip(&self.weights).enumerate() {
            let q = wk / (t - xk);
            out[k] = q;
            denom += q;
        }
        out.iter_mut().for_each(|v| *v /= denom);
        out
    }

    /// Evaluates the interpolant of `samples` at `t`.
    pub fn interpolate(&self, samples: &[f64], t: f64) -> f64 {
        self.lagrange_row(t).iter().zip(samples).map(|(l, s)| l * s).sum()
    }
}

/// `d[i][k] = l_k'(theta_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiationMatrix {
    pub d: RMat,
}

pub fn differentiation_matrix(mesh: &SpectralMesh) -> DifferentiationMatrix {
    let count = mesh.len();
    let x = &mesh.points;
    let w = &mesh.weights;
    let mut d = RMat::zeros(count, count);
    for i in 0..count {
        let mut diag = 0.0;
        for k in 0..count {
            if i != k {
                let v = (w[k] / w[i]) / (x[i] - x[k]);
                d[(i, k)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    DifferentiationMatrix { d }
}

/// Assembles the `(2N+1) block_dim` square matrix whose block rows are
/// `d[i][k] I` except block row `boundary_index`, which is `boundary_row`
/// (`block_dim x (2N+1) block_dim`).
pub fn discretize_block_operator(
    diff: &DifferentiationMatrix,
    block_dim: usize,
    boundary_index: usize,
    boundary_row: &RMat,
) -> Result<RMat> {
    let count = diff.d.nrows();
    let size = count * block_dim;
    if boundary_row.shape() != (block_dim, size) {
        return Err(Error::Dimension(format!(
            "boundary row is {}x{}, expected {block_dim}x{size}",
            boundary_row.nrows(),
            boundary_row.ncols()
        )));
    }
    if boundary_index >= count {
        return Err(Error::InvalidArgument(format!("boundary index {boundary_index} out of range")));
    }
    let mut l = RMat::zeros(size, size);
    for i in 0..count {
        if i == boundary_index {
            continue;
        }
        for k in 0..count {
            let v = diff.d[(i, k)];
            for r in 0..block_dim {
                l[(i * block_dim + r, k * block_dim + r)] = v;
            }
        }
    }
    l.view_mut((boundary_index * block_dim, 0), (block_dim, size))
        .copy_from(boundary_row);
    Ok(l)
}
