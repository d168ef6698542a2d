//! The BQP bound for MESP, solved by a 3-block ADMM on the lifted variable
//! `W = [1, xᵀ; x, X]`:
//! `max ldet(C̃∘W + I) − s log γ` subject to the `2n+2` linear constraints and `W ⪰ 0`,
//! with `C̃ = [0, 0ᵀ; 0, γC − I]`.
//!
//! Every feasible `W` satisfies `W(−s; e) = 0`, so feasibility recovery and
//! certification work on `W = V W̃ Vᵀ` with `V` an orthonormal basis of
//! `(−s; e)^⊥`. On that face only `Diag(X) = x` and `W₁₁ = 1` remain independent.

use std::time::Instant;

use crate::admm::{Tracker, SQRT2};
use crate::error::{Error, Result};
use crate::instances::{complement_instance, MespInstance};
use crate::matcore::{self, CholFactor, Mat, Vector};
use crate::report::{bump, default_rho_bqp, BoundReport, Counters, Relaxation, SolveOptions, Termination};

pub const DEFAULT_CERT_START: usize = 300;
pub const DEFAULT_CERT_PERIOD: usize = 100;
pub const MAX_SWEEPS: usize = 10_000;
pub const REFERENCE_MAX_N: usize = 40;

#[derive(Debug, Clone)]
pub struct BqpConstraint {
    pub g_mat: Mat,
    pub g: f64,
    /// 1-based position in the constraint list.
    pub index: usize,
}

/// The constraints `Diag(X) = x`, `Xe = sx`, `eᵀx = s`, `W₁₁ = 1`, in that order.
pub fn build_bqp_constraints(n: usize, s: usize) -> Result<Vec<BqpConstraint>> {
    if s == 0 || s >= n {
        return Err(Error::InvalidArgument(format!("BQP needs 0 < s < n, got s = {s}, n = {n}")));
    }
    let q = n + 1;
    let sf = s as f64;
    let mut out = Vec::with_capacity(2 * n + 2);
    for l in 0..n {
        let mut g = Mat::zeros(q, q);
        g[(0, l + 1)] = -0.5;
        g[(l + 1, 0)] = -0.5;
        g[(l + 1, l + 1)] = 1.0;
        out.push(BqpConstraint { g_mat: g, g: 0.0, index: l + 1 });
    }
    for l in 0..n {
        // ½[0, −s e_ℓᵀ; −s e_ℓ, J_ℓ + J_ℓᵀ] with J_ℓ = e_ℓ eᵀ
        let mut g = Mat::zeros(q, q);
        g[(0, l + 1)] = -0.5 * sf;
        g[(l + 1, 0)] = -0.5 * sf;
        for j in 1..q {
            g[(l + 1, j)] += 0.5;
            g[(j, l + 1)] += 0.5;
        }
        out.push(BqpConstraint { g_mat: g, g: 0.0, index: n + l + 1 });
    }
    let mut g = Mat::zeros(q, q);
    for j in 1..q {
        g[(0, j)] = 0.5;
        g[(j, 0)] = 0.5;
    }
    out.push(BqpConstraint { g_mat: g, g: sf, index: 2 * n + 1 });
    let mut g = Mat::zeros(q, q);
    g[(0, 0)] = 1.0;
    out.push(BqpConstraint { g_mat: g, g: 1.0, index: 2 * n + 2 });
    Ok(out)
}

/// `g_ℓ − ⟨G_ℓ, W⟩` for every constraint.
pub fn constraint_residuals(constraints: &[BqpConstraint], w: &Mat) -> Vector {
    Vector::from_iterator(
        constraints.len(),
        constraints.iter().map(|c| c.g - matcore::frob_dot(&c.g_mat, w)),
    )
}

/// `[0, 0ᵀ; 0, γC − I]`.
pub fn c_tilde(c: &Mat, gamma: f64) -> Mat {
    let n = c.nrows();
    let mut ct = Mat::zeros(n + 1, n + 1);
    for j in 0..n {
        for i in 0..n {
            ct[(i + 1, j + 1)] = gamma * c[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    ct
}

/// Second moment of a uniformly random `s`-subset: `x = (s/n)e`,
/// `X_ii = s/n`, `X_ij = s(s−1)/(n(n−1))`.
pub fn initial_w(n: usize, s: usize) -> Mat {
    let (nf, sf) = (n as f64, s as f64);
    let p1 = sf / nf;
    let p2 = if n > 1 { sf * (sf - 1.0) / (nf * (nf - 1.0)) } else { 0.0 };
    Mat::from_fn(n + 1, n + 1, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => p1,
        _ if i == j => p1,
        _ => p2,
    })
}

/// Least-squares data of the W-update. `HᵀH = Diag(c² + j²) + UUᵀ`, with `U`
/// holding the rows `vec₂(G_ℓ)` as columns, so the normal equations are solved
/// through the Woodbury identity and one Cholesky factor of the capacitance
/// matrix `I + UᵀD⁻¹U`.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    /// `vec_√2(C̃)`.
    pub c: Vector,
    /// `vec_√2(J)`.
    pub j: Vector,
    pub u: Mat,
    dinv: Vector,
    cap: CholFactor,
}

impl NormalSystem {
    pub fn new(ct: &Mat, constraints: &[BqpConstraint]) -> Result<Self> {
        let q = ct.nrows();
        let c = matcore::pack_delta(ct, SQRT2);
        let j = matcore::pack_delta(&Mat::from_element(q, q, 1.0), SQRT2);
        let p = c.len();
        let mut u = Mat::zeros(p, constraints.len());
        for (k, con) in constraints.iter().enumerate() {
            u.set_column(k, &matcore::pack_delta(&con.g_mat, 2.0));
        }
        let dinv = Vector::from_fn(p, |i, _| 1.0 / (c[i] * c[i] + j[i] * j[i]));
        let mut du = u.clone();
        for (i, mut row) in du.row_iter_mut().enumerate() {
            row *= dinv[i];
        }
        let mut capm = u.transpose() * du;
        for k in 0..capm.nrows() {
            capm[(k, k)] += 1.0;
        }
        let cap = CholFactor::new(&capm)?;
        Ok(NormalSystem { c, j, u, dinv, cap })
    }

    pub fn cols(&self) -> usize {
        self.c.len()
    }

    pub fn rows(&self) -> usize {
        2 * self.c.len() + self.u.ncols()
    }

    pub fn apply_h(&self, x: &Vector) -> Vector {
        let p = self.cols();
        let mut out = Vector::zeros(self.rows());
        for i in 0..p {
            out[i] = self.c[i] * x[i];
            out[p + i] = self.j[i] * x[i];
        }
        out.rows_mut(2 * p, self.u.ncols()).copy_from(&(self.u.tr_mul(x)));
        out
    }

    pub fn apply_ht(&self, r: &Vector) -> Vector {
        let p = self.cols();
        let tail = r.rows(2 * p, self.u.ncols()).clone_owned();
        let mut out = &self.u * tail;
        for i in 0..p {
            out[i] += self.c[i] * r[i] + self.j[i] * r[p + i];
        }
        out
    }

    /// `(HᵀH)⁻¹ rhs`.
    pub fn solve_normal(&self, rhs: &Vector) -> Vector {
        let t = rhs.component_mul(&self.dinv);
        let corr = self.cap.solve(&self.u.tr_mul(&t));
        let back = (&self.u * corr).component_mul(&self.dinv);
        t - back
    }

    /// Dense `H`; only sensible for small orders.
    pub fn dense_h(&self) -> Mat {
        let p = self.cols();
        let mut h = Mat::zeros(self.rows(), p);
        for i in 0..p {
            h[(i, i)] = self.c[i];
            h[(p + i, i)] = self.j[i];
        }
        h.rows_mut(2 * p, self.u.ncols()).copy_from(&self.u.transpose());
        h
    }
}

pub fn build_h_and_factor(n: usize, s: usize, gamma: f64, c: &Mat) -> Result<NormalSystem> {
    if c.nrows() != n {
        return Err(Error::Dimension(format!("C has order {}, expected {n}", c.nrows())));
    }
    let constraints = build_bqp_constraints(n, s)?;
    NormalSystem::new(&c_tilde(c, gamma), &constraints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    /// Plain alternating projections.
    Alternating,
    /// Dykstra's algorithm; converges to the nearest feasible point.
    Dykstra,
}

/// The feasible set `{W ⪰ 0 : ⟨G_ℓ, W⟩ = g_ℓ}` seen on its face.
#[derive(Debug, Clone)]
pub struct FeasibleSet {
    pub n: usize,
    pub s: usize,
    /// `(n+1) × n`, orthonormal columns spanning `(−s; e)^⊥`.
    pub v: Mat,
    /// `VᵀG_ℓV` for `Diag(X) = x` (first `n`) and `W₁₁ = 1` (last).
    pub a: Vec<Mat>,
    pub b: Vector,
    a_packed: Mat,
    gram: CholFactor,
    pub w0: Mat,
    mu0: f64,
}

impl FeasibleSet {
    pub fn new(n: usize, s: usize) -> Result<Self> {
        let constraints = build_bqp_constraints(n, s)?;
        let q = n + 1;
        let norm = ((s * s + n) as f64).sqrt();
        // Householder reflector sending (−s; e)/‖·‖ to a multiple of e₁
        let mut h = Vector::from_element(q, 1.0 / norm);
        h[0] = -(s as f64) / norm - 1.0;
        let hh = h.dot(&h);
        let refl = Mat::identity(q, q) - (&h * h.transpose()) * (2.0 / hh);
        let v = refl.columns(1, n).clone_owned();

        let mut a = Vec::with_capacity(n + 1);
        for con in constraints.iter().take(n) {
            a.push(matcore::sym_part(&(v.transpose() * &con.g_mat * &v)));
        }
        a.push(matcore::sym_part(&(v.transpose() * &constraints[2 * n + 1].g_mat * &v)));
        let mut b = Vector::zeros(n + 1);
        b[n] = 1.0;
        let plen = matcore::packed_len(n);
        let mut a_packed = Mat::zeros(n + 1, plen);
        for (k, ak) in a.iter().enumerate() {
            a_packed.set_row(k, &matcore::pack_delta(ak, SQRT2).transpose());
        }
        let gram = CholFactor::new(&(&a_packed * a_packed.transpose()))?;
        let w0 = matcore::sym_part(&(v.transpose() * initial_w(n, s) * &v));
        let mu0 = matcore::sym_eigen(&w0)?.values[n - 1];
        Ok(FeasibleSet {
            n,
            s,
            v,
            a,
            b,
            a_packed,
            gram,
            w0,
            mu0,
        })
    }

    pub fn restrict(&self, w: &Mat) -> Mat {
        matcore::sym_part(&(self.v.transpose() * w * &self.v))
    }

    pub fn expand(&self, wt: &Mat) -> Mat {
        matcore::sym_part(&(&self.v * wt * self.v.transpose()))
    }

    fn affine_residual(&self, wt: &Mat) -> Vector {
        &self.b - &self.a_packed * matcore::pack_delta(wt, SQRT2)
    }

    fn project_affine(&self, wt: &Mat) -> Mat {
        let r = self.affine_residual(wt);
        let lam = self.gram.solve(&r);
        let step = self.a_packed.tr_mul(&lam);
        wt + matcore::unpack_delta(&step, SQRT2)
    }

    /// Convex combination with `W̃⁰` that removes a negative eigenvalue of size `neg`.
    fn pull_interior(&self, wt: &Mat, neg: f64) -> Mat {
        if neg <= 0.0 {
            return wt.clone();
        }
        let lam = neg / (neg + self.mu0);
        wt * (1.0 - lam) + &self.w0 * lam
    }

    /// Feasible point on the face near `wt`; affine constraints hold to rounding
    /// and the smallest eigenvalue is nonnegative up to rounding.
    pub fn project(&self, wt: &Mat, tol: f64, method: ProjectionMethod) -> Result<Mat> {
        let mut x = wt.clone();
        // Dykstra correction for the cone step; the affine step needs none
        let mut q = Mat::zeros(self.n, self.n);
        let mut y_prev: Option<Mat> = None;
        let mut affine = f64::INFINITY;
        let mut psd = f64::INFINITY;
        for _ in 0..MAX_SWEEPS {
            let y = self.project_affine(&x);
            let eig = matcore::sym_eigen(&y)?;
            let neg = (-eig.values[self.n - 1]).max(0.0);
            let settled = match (&y_prev, method) {
                (_, ProjectionMethod::Alternating) => true,
                (Some(prev), ProjectionMethod::Dykstra) => (&y - prev).amax() <= tol,
                (None, ProjectionMethod::Dykstra) => neg == 0.0,
            };
            if neg <= tol && settled {
                return Ok(self.pull_interior(&y, neg));
            }
            let z = match method {
                ProjectionMethod::Alternating => eig.map(|t| t.max(0.0)),
                ProjectionMethod::Dykstra => {
                    let t = &y + &q;
                    let z = matcore::project_psd(&t)?;
                    q = t - &z;
                    z
                }
            };
            affine = self.affine_residual(&z).amax();
            psd = neg;
            y_prev = Some(y);
            x = z;
        }
        Err(Error::NoConvergence {
            iterations: MAX_SWEEPS,
            affine,
            psd,
        })
    }

    /// `bᵀy + (1+s) λ_max(S̃ − Σ y_k A_k)`: an upper bound on `⟨S̃, W̃⟩` over the feasible set.
    pub fn dual_value(&self, st: &Mat, y: &Vector) -> Result<f64> {
        let m = self.dual_slack(st, y);
        let lmax = matcore::sym_eigen(&m)?.values[0];
        Ok(self.b.dot(y) + (1 + self.s) as f64 * lmax)
    }

    fn dual_slack(&self, st: &Mat, y: &Vector) -> Mat {
        let mut m = st.clone();
        for (k, ak) in self.a.iter().enumerate() {
            m -= ak * y[k];
        }
        m
    }

    /// Least-squares fit of the complementarity `(S̃ − Σ y_k A_k) W̃ = 0`.
    pub fn complementary_guess(&self, st: &Mat, wt: &Mat) -> Option<Vector> {
        let k = self.a.len();
        let r: Vec<Mat> = self.a.iter().map(|ak| ak * wt).collect();
        let t = st * wt;
        let mut gram = Mat::zeros(k, k);
        let mut rhs = Vector::zeros(k);
        for i in 0..k {
            rhs[i] = matcore::frob_dot(&r[i], &t);
            for j in 0..=i {
                let v = matcore::frob_dot(&r[i], &r[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let ridge = 1e-12 * (1.0 + gram.diagonal().amax());
        for i in 0..k {
            gram[(i, i)] += ridge;
        }
        CholFactor::new(&gram).ok().map(|f| f.solve(&rhs))
    }

    /// Minimizes the dual value from `y0` by gradient steps on a log-sum-exp
    /// smoothing of `λ_max` with decreasing temperature. Returns the best `y`
    /// under the exact (unsmoothed) dual value.
    pub fn refine_dual(&self, st: &Mat, y0: &Vector, max_evals: usize) -> Result<(Vector, f64)> {
        let w = (1 + self.s) as f64;
        let eval_smooth = |y: &Vector, mu: f64| -> Result<(f64, f64, Vector)> {
            let eig = matcore::sym_eigen(&self.dual_slack(st, y))?;
            let lmax = eig.values[0];
            let e = eig.values.map(|l| ((l - lmax) / mu).exp());
            let z = e.sum();
            let p = eig.compose(&(e / z));
            let grad = Vector::from_fn(self.a.len(), |k, _| self.b[k] - w * matcore::frob_dot(&self.a[k], &p));
            let exact = self.b.dot(y) + w * lmax;
            Ok((exact + w * mu * z.ln(), exact, grad))
        };
        let mut y = y0.clone();
        let mut best_y = y.clone();
        let mut best = f64::INFINITY;
        let scale = 1.0 + st.amax();
        let mut mu = 1e-2 * scale;
        let mut evals = 0;
        let mut step = 1.0 / scale;
        while evals < max_evals && mu > 1e-9 * scale {
            let (mut val, exact, mut grad) = eval_smooth(&y, mu)?;
            evals += 1;
            if exact < best {
                best = exact;
                best_y = y.clone();
            }
            let mut improved_stage = 0;
            while evals < max_evals && improved_stage < 25 {
                let gn = grad.norm_squared();
                if gn == 0.0 {
                    break;
                }
                let mut accepted = false;
                while evals < max_evals {
                    let cand = &y - &grad * step;
                    let (cv, cex, cg) = eval_smooth(&cand, mu)?;
                    evals += 1;
                    if cex < best {
                        best = cex;
                        best_y = cand.clone();
                    }
                    if cv <= val - 0.5 * step * gn {
                        y = cand;
                        val = cv;
                        grad = cg;
                        step *= 2.0;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-16 {
                        break;
                    }
                }
                if !accepted {
                    break;
                }
                improved_stage += 1;
            }
            mu *= 0.1;
        }
        Ok((best_y, best))
    }
}

/// Nearest-ish point of the BQP feasible region to `w_raw`. Satisfies the
/// affine constraints to rounding and is positive semidefinite to rounding;
/// the iteration stops once the PSD violation drops below `tol`.
pub fn project_feasible_bqp(w_raw: &Mat, s: usize, tol: f64, method: ProjectionMethod) -> Result<Mat> {
    matcore::check_square(w_raw)?;
    let n = w_raw.nrows().saturating_sub(1);
    let set = FeasibleSet::new(n, s)?;
    let wt = set.project(&set.restrict(&matcore::sym_part(w_raw)), tol, method)?;
    Ok(set.expand(&wt))
}

/// Objective `ldet(C̃∘W + I) − s log γ + offset` and its gradient `C̃∘M⁻¹`.
pub fn objective_bqp(ct: &Mat, s: usize, gamma: f64, offset: f64, w: &Mat) -> Result<(f64, Mat)> {
    let mut m = ct.component_mul(w);
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    let chol = CholFactor::new(&m)?;
    let grad = ct.component_mul(&chol.inverse());
    Ok((chol.logdet() - s as f64 * gamma.ln() + offset, grad))
}

#[derive(Debug, Clone)]
pub struct BqpCertificate {
    pub bound: f64,
    pub primal: f64,
    pub w_feas: Mat,
    /// Dual multipliers for the face constraints (`Diag(X) = x`, then `W₁₁ = 1`).
    pub y: Vector,
}

/// Solver data that stays fixed across iterations.
pub struct BqpProblem<'a> {
    pub inst: &'a MespInstance,
    pub gamma: f64,
    pub ct: Mat,
    pub constraints: Vec<BqpConstraint>,
    pub normal: NormalSystem,
    pub set: FeasibleSet,
    pub normal_factorizations: usize,
}

impl<'a> BqpProblem<'a> {
    pub fn new(inst: &'a MespInstance, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        let n = inst.n();
        let constraints = build_bqp_constraints(n, inst.s)?;
        let ct = c_tilde(&inst.c, gamma);
        let normal = NormalSystem::new(&ct, &constraints)?;
        let set = FeasibleSet::new(n, inst.s)?;
        Ok(BqpProblem {
            inst,
            gamma,
            ct,
            constraints,
            normal,
            set,
            normal_factorizations: 1,
        })
    }

    pub fn n(&self) -> usize {
        self.inst.n()
    }

    pub fn s(&self) -> usize {
        self.inst.s
    }

    pub fn g_values(&self) -> Vector {
        Vector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.g))
    }

    pub fn objective(&self, w: &Mat) -> Result<(f64, Mat)> {
        objective_bqp(&self.ct, self.s(), self.gamma, self.inst.offset, w)
    }

    /// `C̃∘W + I`.
    pub fn lift(&self, w: &Mat) -> Mat {
        let mut m = self.ct.component_mul(w);
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0;
        }
        m
    }

    /// Right-hand side `d` of the W-subproblem.
    pub fn d_vector(&self, state: &BqpState) -> Vector {
        let q = self.n() + 1;
        let mut t1 = &state.z + &state.psi;
        for i in 0..q {
            t1[(i, i)] -= 1.0;
        }
        let t2 = &state.e - &state.phi;
        let p = self.normal.cols();
        let k = self.constraints.len();
        let mut d = Vector::zeros(2 * p + k);
        d.rows_mut(0, p).copy_from(&matcore::pack_delta(&t1, SQRT2));
        d.rows_mut(p, p).copy_from(&matcore::pack_delta(&t2, SQRT2));
        for (l, con) in self.constraints.iter().enumerate() {
            d[2 * p + l] = state.omega[l] + con.g;
        }
        d
    }

    pub fn initial_state(&self, rho: f64) -> BqpState {
        let (n, s) = (self.n(), self.s());
        let w = initial_w(n, s);
        let z = self.lift(&w);
        let q = n + 1;
        BqpState {
            e: w.clone(),
            w,
            z,
            psi: Mat::zeros(q, q),
            phi: Mat::zeros(q, q),
            omega: Vector::zeros(2 * n + 2),
            rho,
            gamma: self.gamma,
            iter: 0,
        }
    }

    /// Certificate at the feasible point recovered from `w_raw`. `y_warm` seeds
    /// the dual search; extra candidates come from `omega_scaled` (the ADMM
    /// multipliers times ρ) and from a complementarity fit.
    pub fn certify(
        &self,
        w_raw: &Mat,
        tol: f64,
        y_warm: Option<&Vector>,
        omega_scaled: Option<&Vector>,
        max_evals: usize,
    ) -> Result<BqpCertificate> {
        let wt = self.set.project(&self.set.restrict(w_raw), tol, ProjectionMethod::Alternating)?;
        let w_feas = self.set.expand(&wt);
        let (value, grad) = self.objective(&w_feas).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::NoCertificate,
            other => other,
        })?;
        let st = self.set.restrict(&grad);
        let n = self.n();

        let mut candidates: Vec<Vector> = Vec::new();
        if let Some(y) = y_warm {
            candidates.push(y.clone());
        }
        if let Some(om) = omega_scaled {
            // reduce the 2n+2 multipliers to the face constraints
            let red = Vector::from_fn(n + 1, |k, _| {
                if k < n {
                    om[k]
                } else {
                    om[2 * n + 1] + self.s() as f64 * om[2 * n]
                }
            });
            candidates.push(-&red);
            candidates.push(red);
        }
        if let Some(y) = self.set.complementary_guess(&st, &wt) {
            candidates.push(y);
        }
        candidates.push(Vector::zeros(n + 1));

        let mut best_y = candidates[0].clone();
        let mut best = f64::INFINITY;
        for y in candidates {
            let v = self.set.dual_value(&st, &y)?;
            if v < best {
                best = v;
                best_y = y;
            }
        }
        let (y, refined) = self.set.refine_dual(&st, &best_y, max_evals)?;
        let (y, dual) = if refined < best { (y, refined) } else { (best_y, best) };
        let lin = matcore::frob_dot(&st, &wt);
        let bound = value - lin + dual;
        if !bound.is_finite() {
            return Err(Error::NoCertificate);
        }
        Ok(BqpCertificate {
            bound,
            primal: value,
            w_feas,
            y,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BqpState {
    pub w: Mat,
    pub e: Mat,
    pub z: Mat,
    pub psi: Mat,
    pub phi: Mat,
    pub omega: Vector,
    pub rho: f64,
    pub gamma: f64,
    pub iter: usize,
}

pub fn wupdate_bqp(prob: &BqpProblem, state: &BqpState) -> Mat {
    let d = prob.d_vector(state);
    let u = prob.normal.solve_normal(&prob.normal.apply_ht(&d));
    matcore::unpack_delta(&u, 1.0)
}

/// `Π_psd(W + Φ)`.
pub fn eupdate_bqp(state: &BqpState) -> Result<Mat> {
    matcore::project_psd(&(&state.w + &state.phi))
}

/// `prox_{−ldet/ρ}(C̃∘W + I − Ψ)`.
pub fn zupdate_bqp(prob: &BqpProblem, state: &BqpState) -> Result<Mat> {
    let y = prob.lift(&state.w) - &state.psi;
    matcore::prox_neg_logdet(&y, state.rho)
}

pub fn multiplier_update_bqp(prob: &BqpProblem, state: &mut BqpState) {
    state.psi = &state.psi + &state.z - prob.lift(&state.w);
    state.phi = &state.phi + &state.w - &state.e;
    state.omega += constraint_residuals(&prob.constraints, &state.w);
    state.iter += 1;
}

/// One full iteration; E and Z are computed concurrently.
pub fn step_bqp(prob: &BqpProblem, state: &mut BqpState) -> Result<(f64, f64)> {
    state.w = wupdate_bqp(prob, state);
    let (e, z) = rayon::join(|| eupdate_bqp(state), || zupdate_bqp(prob, state));
    let (e, z) = (e?, z?);
    let res_dual = state.rho * ((&e - &state.e).norm() + (&z - &state.z).norm());
    state.e = e;
    state.z = z;
    multiplier_update_bqp(prob, state);
    let res_primal = (&state.z - prob.lift(&state.w)).norm()
        + (&state.w - &state.e).norm()
        + constraint_residuals(&prob.constraints, &state.w).norm();
    Ok((res_primal, res_dual))
}

/// Certified upper bound from any symmetric `w_raw`, with the feasible point used.
pub fn dual_bound_bqp(inst: &MespInstance, gamma: f64, w_raw: &Mat) -> Result<(f64, Mat)> {
    if w_raw.nrows() != inst.n() + 1 || w_raw.ncols() != inst.n() + 1 {
        return Err(Error::Dimension(format!(
            "W is {}×{}, expected order {}",
            w_raw.nrows(),
            w_raw.ncols(),
            inst.n() + 1
        )));
    }
    let prob = BqpProblem::new(inst, gamma)?;
    let cert = prob.certify(&matcore::sym_part(w_raw), 1e-5, None, None, 400)?;
    Ok((cert.bound, cert.w_feas))
}

pub fn solve_bqp(inst: &MespInstance, opts: &SolveOptions) -> Result<BoundReport> {
    inst.validate()?;
    let gamma = opts.gamma.unwrap_or(inst.gamma);
    let rho = opts.rho.unwrap_or_else(|| default_rho_bqp(inst));
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let start = Instant::now();
    let prob = BqpProblem::new(inst, gamma)?;
    let cert_start = opts.cert_start.unwrap_or(DEFAULT_CERT_START);
    let period = opts.cert_period.unwrap_or(DEFAULT_CERT_PERIOD).max(1);
    let mut counters = Counters::new();
    counters.insert("normal_factorizations".into(), prob.normal_factorizations as u64);
    let mut state = prob.initial_state(rho);
    let mut tracker = Tracker::new(start, opts.record_trace);
    let mut y_warm: Option<Vector> = None;
    let mut residuals = (f64::NAN, f64::NAN);
    let mut last_cert = usize::MAX;

    let certify = |state: &BqpState,
                       residuals: (f64, f64),
                       tracker: &mut Tracker,
                       y_warm: &mut Option<Vector>,
                       counters: &mut Counters|
     -> Result<()> {
        let om = &state.omega * state.rho;
        match prob.certify(&state.w, opts.feas_tol, y_warm.as_ref(), Some(&om), 300) {
            Ok(cert) => {
                *y_warm = Some(cert.y.clone());
                let x = cert.w_feas.column(0).rows(1, prob.n()).clone_owned();
                tracker.update(
                    state.iter,
                    cert.bound,
                    cert.primal,
                    || x.iter().copied().collect(),
                    residuals.0,
                    residuals.1,
                );
                Ok(())
            }
            Err(Error::NoCertificate) => {
                bump(counters, "certificate_failures");
                Ok(())
            }
            Err(Error::NoConvergence { .. }) => {
                bump(counters, "projection_failures");
                Ok(())
            }
            Err(e) => Err(e),
        }
    };

    let mut termination = Termination::IterLimit;
    while state.iter < opts.max_iter {
        residuals = step_bqp(&prob, &mut state)?;
        if state.iter >= cert_start && (state.iter - cert_start) % period == 0 {
            certify(&state, residuals, &mut tracker, &mut y_warm, &mut counters)?;
            last_cert = state.iter;
            if tracker.gap() <= opts.gap_tol {
                termination = Termination::GapTol;
                break;
            }
        }
        if start.elapsed().as_secs_f64() >= opts.time_limit_s {
            termination = Termination::TimeLimit;
            break;
        }
    }
    if termination != Termination::GapTol && last_cert != state.iter {
        certify(&state, residuals, &mut tracker, &mut y_warm, &mut counters)?;
        if tracker.gap() <= opts.gap_tol {
            termination = Termination::GapTol;
        }
    }

    Ok(BoundReport {
        relaxation: Relaxation::Bqp,
        bound: tracker.best_bound,
        primal_value: tracker.best_primal,
        dual_gap: tracker.gap(),
        iterations: state.iter,
        wall_time_s: start.elapsed().as_secs_f64(),
        termination,
        rho,
        gamma,
        seed: opts.seed,
        event_counters: counters,
        solution: tracker.best_x,
        trace: tracker.trace,
    })
}

/// Solves the instance and its complement and keeps the smaller bound.
pub fn solve_bqp_auto_complement(inst: &MespInstance, opts: &SolveOptions) -> Result<(BoundReport, bool)> {
    let original = solve_bqp(inst, opts)?;
    let comp = match complement_instance(inst) {
        Ok(c) => c,
        Err(Error::ComplementRequiresFullRank { .. }) => return Ok((original, false)),
        Err(e) => return Err(e),
    };
    let complemented = solve_bqp(&comp, opts)?;
    if complemented.bound < original.bound {
        Ok((complemented, true))
    } else {
        Ok((original, false))
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceResult {
    pub value: f64,
    /// Certified gap at exit.
    pub gap: f64,
    pub history: Vec<f64>,
    pub w: Mat,
}

/// Projected-gradient ascent of the BQP objective with exact (Dykstra)
/// projections. Stops once the certified gap is at most `tol`.
pub fn reference_solver_bqp_detailed(inst: &MespInstance, gamma: f64, tol: f64) -> Result<ReferenceResult> {
    let n = inst.n();
    if n > REFERENCE_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "reference solver is limited to n ≤ {REFERENCE_MAX_N}, got {n}"
        )));
    }
    let prob = BqpProblem::new(inst, gamma)?;
    let set = &prob.set;
    let mut wt = set.w0.clone();
    let (mut f, mut grad) = prob.objective(&set.expand(&wt))?;
    let mut st = set.restrict(&grad);
    let mut history = vec![f];
    let mut step = 1.0;
    let mut y = Vector::zeros(n + 1);
    let mut gap = f64::INFINITY;
    for it in 0..20_000 {
        if it % 20 == 0 {
            let guess = set.complementary_guess(&st, &wt).unwrap_or_else(|| y.clone());
            let start_y = if set.dual_value(&st, &guess)? < set.dual_value(&st, &y)? { guess } else { y.clone() };
            let (yy, dual) = set.refine_dual(&st, &start_y, 300)?;
            y = yy;
            gap = dual - matcore::frob_dot(&st, &wt);
            if gap <= tol {
                break;
            }
        }
        let mut accepted = false;
        while step > 1e-14 {
            let cand = set.project(&(&wt + &st * step), 1e-10, ProjectionMethod::Dykstra)?;
            let lin = matcore::frob_dot(&st, &(&cand - &wt));
            match prob.objective(&set.expand(&cand)) {
                Ok((fc, gc)) if fc >= f + 1e-4 * lin && fc >= f => {
                    wt = cand;
                    f = fc;
                    grad = gc;
                    st = set.restrict(&grad);
                    history.push(f);
                    step *= 2.0;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(ReferenceResult {
        value: f,
        gap,
        history,
        w: set.expand(&wt),
    })
}

pub fn reference_solver_bqp(inst: &MespInstance, gamma: f64, tol: f64) -> Result<f64> {
    reference_solver_bqp_detailed(inst, gamma, tol).map(|r| r.value)
}
