//! Dense symmetric linear algebra shared by every solver.
//!
//! Matrices are plain `nalgebra::DMatrix<f64>`; symmetric inputs are read from
//! the lower triangle. The packed layout used by the least-squares blocks is
//! column-major lower triangle, so `(0,0), (1,0), .., (q-1,0), (1,1), ..`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Length of the packed lower triangle of an order-`q` matrix.
pub fn packed_len(q: usize) -> usize {
    q * (q + 1) / 2
}

/// Inverse of [`packed_len`]; `None` when `len` is not triangular.
pub fn packed_order(len: usize) -> Option<usize> {
    let q = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (packed_len(q) == len).then_some(q)
}

/// Position of entry `(i, j)`, `i >= j`, inside a packed order-`q` vector.
#[inline]
pub fn packed_index(q: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < q);
    j * q - j * (j + 1) / 2 + i
}

pub fn check_finite(m: &Mat) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn check_square(m: &Mat) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Copy of `m` with the upper triangle overwritten by the lower one.
pub fn symmetrize_lower(m: &Mat) -> Mat {
    let n = m.nrows();
    let mut out = m.clone();
    for j in 0..n {
        for i in (j + 1)..n {
            out[(j, i)] = m[(i, j)];
        }
    }
    out
}

/// `(m + mᵀ)/2`.
pub fn sym_part(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Frobenius inner product.
pub fn frob_dot(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `Aᵀ Diag(w) A`.
pub fn weighted_gram(a: &Mat, w: &Vector) -> Mat {
    let mut scaled = a.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let g = a.transpose() * scaled;
    sym_part(&g)
}

/// Ordered eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues, non-increasing.
    pub values: Vector,
    /// Orthonormal eigenvectors stored column-wise, in the order of `values`.
    pub basis: Mat,
}

impl SymEigen {
    pub fn order(&self) -> usize {
        self.values.len()
    }

    /// `Q Diag(d) Qᵀ`.
    pub fn compose(&self, d: &Vector) -> Mat {
        compose_spectral(&self.basis, d)
    }

    /// `Q Diag(f(values)) Qᵀ`.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Mat {
        let d = self.values.map(f);
        self.compose(&d)
    }

    pub fn reconstruct(&self) -> Mat {
        self.compose(&self.values)
    }
}

/// `Q Diag(d) Qᵀ`, symmetrized to kill rounding asymmetry.
pub fn compose_spectral(q: &Mat, d: &Vector) -> Mat {
    let mut scaled = q.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[j];
    }
    sym_part(&(scaled * q.transpose()))
}

/// Eigendecomposition with eigenvalues sorted in non-increasing order.
pub fn sym_eigen(m: &Mat) -> Result<SymEigen> {
    check_square(m)?;
    check_finite(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: Vector::zeros(0),
            basis: Mat::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize_lower(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = Vector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut basis = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        basis.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, basis })
}

/// Packed lower triangle with off-diagonal entries multiplied by `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedVec {
    pub delta: f64,
    pub data: Vector,
}

impl PackedVec {
    pub fn order(&self) -> usize {
        packed_order(self.data.len()).expect("packed length is triangular by construction")
    }

    /// Rebuild the symmetric matrix this vector was packed from.
    pub fn unpack(&self) -> Mat {
        unpack_delta(&self.data, self.delta)
    }
}

pub fn vec_delta(m: &Mat, delta: f64) -> Result<PackedVec> {
    check_square(m)?;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    Ok(PackedVec {
        delta,
        data: pack_delta(m, delta),
    })
}

/// Raw packing without validation; used on hot paths.
pub fn pack_delta(m: &Mat, delta: f64) -> Vector {
    let q = m.nrows();
    let mut out = Vector::zeros(packed_len(q));
    let mut k = 0;
    for j in 0..q {
        out[k] = m[(j, j)];
        k += 1;
        for i in (j + 1)..q {
            out[k] = delta * m[(i, j)];
            k += 1;
        }
    }
    out
}

pub fn unpack_delta(v: &Vector, delta: f64) -> Mat {
    let q = packed_order(v.len()).expect("length must be triangular");
    let mut m = Mat::zeros(q, q);
    let mut k = 0;
    for j in 0..q {
        m[(j, j)] = v[k];
        k += 1;
        for i in (j + 1)..q {
            let x = v[k] / delta;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Eigenvalue map of the log-det prox: the positive root of `ρλ − 1/λ = θ`.
#[inline]
pub fn logdet_prox_eigenvalue(theta: f64, rho: f64) -> f64 {
    let r = (theta * theta + 4.0 * rho).sqrt();
    if theta >= 0.0 {
        (theta + r) / (2.0 * rho)
    } else {
        2.0 / (r - theta)
    }
}

/// `argmin_Z −ldet Z + (ρ/2)‖Z − Y‖²_F`, returned together with the
/// eigendecomposition of `ρY` it was built from.
pub fn prox_neg_logdet_eig(y: &Mat, rho: f64) -> Result<(Mat, SymEigen)> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let eig = sym_eigen(&(y * rho))?;
    let z = eig.map(|t| logdet_prox_eigenvalue(t, rho));
    Ok((z, eig))
}

pub fn prox_neg_logdet(y: &Mat, rho: f64) -> Result<Mat> {
    prox_neg_logdet_eig(y, rho).map(|(z, _)| z)
}

/// Frobenius projection onto the positive-semidefinite cone.
pub fn project_psd(m: &Mat) -> Result<Mat> {
    let eig = sym_eigen(m)?;
    Ok(eig.map(|t| t.max(0.0)))
}

/// Euclidean projection onto `{x ∈ [0,1]ⁿ : eᵀx = s}`.
///
/// The shift τ in `x = clamp(v − τ, 0, 1)` is located by bisection and then
/// recomputed exactly on the resulting active pattern.
pub fn project_capped_simplex(v: &Vector, s: usize) -> Result<Vector> {
    let n = v.len();
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!(
            "capped simplex needs 0 < s <= n, got s = {s}, n = {n}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite vector".into()));
    }
    if s == n {
        return Ok(Vector::from_element(n, 1.0));
    }
    let target = s as f64;
    let clamped_sum = |tau: f64| v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).sum::<f64>();
    let mut lo = v.min() - 1.0;
    let mut hi = v.max();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if clamped_sum(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut tau = 0.5 * (lo + hi);

    // Exact shift on the pattern found by bisection.
    let mut ones = 0usize;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for &x in v.iter() {
        let y = x - tau;
        if y >= 1.0 {
            ones += 1;
        } else if y > 0.0 {
            free += 1;
            free_sum += x;
        }
    }
    if free > 0 {
        let exact = (free_sum - (target - ones as f64)) / free as f64;
        if (exact - tau).abs() <= 1e-9 * (1.0 + tau.abs()) {
            tau = exact;
        }
    }
    let mut x = v.map(|xi| (xi - tau).clamp(0.0, 1.0));
    // Distribute residual rounding over free coordinates.
    let resid = target - x.sum();
    if resid != 0.0 {
        let free_idx: Vec<usize> = (0..n).filter(|&i| x[i] > 0.0 && x[i] < 1.0).collect();
        if !free_idx.is_empty() {
            let share = resid / free_idx.len() as f64;
            for i in free_idx {
                x[i] = (x[i] + share).clamp(0.0, 1.0);
            }
        }
    }
    Ok(x)
}

/// Indices of the `s` largest entries; ties resolved toward the lower index.
pub fn top_s_indices(g: &Vector, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    idx.truncate(s);
    idx
}

/// `max { gᵀy : eᵀy = s, 0 ≤ y ≤ 1 }`, the sum of the `s` largest entries.
pub fn top_s_sum(g: &Vector, s: usize) -> f64 {
    top_s_indices(g, s).iter().map(|&i| g[i]).sum()
}

/// Dense lower Cholesky factor `M = L Lᵀ`, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct CholFactor {
    l: Mat,
}

impl CholFactor {
    pub fn new(m: &Mat) -> Result<Self> {
        check_square(m)?;
        check_finite(m)?;
        let n = m.nrows();
        let mut l = symmetrize_lower(m);
        for j in 0..n {
            let d = l[(j, j)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                l[(i, j)] /= djj;
            }
            for k in (j + 1)..n {
                let lkj = l[(k, j)];
                if lkj == 0.0 {
                    continue;
                }
                // column k, rows k.. −= L[k,j] * column j, rows k..
                let (left, mut right) = l.columns_range_pair_mut(j, k);
                let src = left.rows_range(k..n);
                let mut dst = right.rows_range_mut(k..n);
                dst.axpy(-lkj, &src, 1.0);
            }
        }
        for j in 0..n {
            for i in 0..j {
                l[(i, j)] = 0.0;
            }
        }
        Ok(CholFactor { l })
    }

    pub fn order(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Mat {
        &self.l
    }

    pub fn solve(&self, rhs: &Vector) -> Vector {
        let n = self.order();
        assert_eq!(rhs.len(), n, "rhs length must match factor order");
        let mut y = rhs.clone();
        // forward: L y = b
        for j in 0..n {
            let yj = y[j] / self.l[(j, j)];
            y[j] = yj;
            for i in (j + 1)..n {
                y[i] -= self.l[(i, j)] * yj;
            }
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let col = self.l.column(i);
            let mut acc = y[i];
            for k in (i + 1)..n {
                acc -= col[k] * y[k];
            }
            y[i] = acc / self.l[(i, i)];
        }
        y
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Mat {
        let n = self.order();
        let mut inv = Mat::zeros(n, n);
        let mut e = Vector::zeros(n);
        for j in 0..n {
            e.fill(0.0);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        sym_part(&inv)
    }
}

pub fn chol_solve_factorization(m: &Mat) -> Result<CholFactor> {
    CholFactor::new(m)
}

/// `ldet M` through the Cholesky factor; `NotPositiveDefinite` otherwise.
pub fn logdet_spd(m: &Mat) -> Result<f64> {
    Ok(CholFactor::new(m)?.logdet())
}
