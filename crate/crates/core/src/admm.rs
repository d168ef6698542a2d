//! The 2-block ADMM shared by the natural, linx and factorization bounds.
//!
//! Each relaxation has the form `max f(x)` over `{0 ≤ x ≤ 1, eᵀx = s}` with
//! `f(x) = h(K + Σ x_ℓ M_ℓ)`. The splitting introduces `Z = K + Σ x_ℓ M_ℓ`;
//! `G` holds the columns `vec_√2(M_ℓ)`.

use std::time::Instant;

use crate::bvls;
use crate::error::{Error, Result};
use crate::matcore::{self, Mat, Vector};
use crate::report::{bump, BoundReport, Counters, Relaxation, SolveOptions, Termination, TraceRow};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

pub struct ProxOutcome {
    pub z: Mat,
    /// Smallest eigenvalue of the next scaled multiplier, when known in closed form.
    pub nu_min: Option<f64>,
}

pub trait TwoBlockProblem {
    fn n(&self) -> usize;
    fn s(&self) -> usize;
    /// Order of the matrix variable.
    fn order(&self) -> usize;
    fn g(&self) -> &Mat;
    /// Whether `K = I` (linx) rather than `K = 0`.
    fn identity_shift(&self) -> bool {
        false
    }
    fn prox(&self, y: &Mat, rho: f64, opts: &SolveOptions, counters: &mut Counters) -> Result<ProxOutcome>;
    /// Relaxation objective (offset included) and its gradient in `x`.
    fn value_and_grad(&self, x: &Vector) -> Result<(f64, Vector)>;
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x: Vector,
    pub z: Mat,
    pub psi: Mat,
    pub delta: f64,
    pub rho: f64,
    pub iter: usize,
}

/// `K + Σ x_ℓ M_ℓ`, recovered from `Gx`.
pub fn lift<P: TwoBlockProblem + ?Sized>(prob: &P, x: &Vector) -> Mat {
    let mut m = matcore::unpack_delta(&(prob.g() * x), SQRT2);
    if prob.identity_shift() {
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0;
        }
    }
    m
}

pub fn init_state<P: TwoBlockProblem + ?Sized>(prob: &P, rho: f64) -> AdmmState {
    let (n, q) = (prob.n(), prob.order());
    let x = Vector::from_element(n, prob.s() as f64 / n as f64);
    let z = lift(prob, &x);
    AdmmState {
        x,
        z,
        psi: Mat::zeros(q, q),
        delta: 0.0,
        rho,
        iter: 0,
    }
}

/// Right-hand side `(vec_√2(Z + Ψ − K); s + δ)` of the x-subproblem.
pub fn x_rhs<P: TwoBlockProblem + ?Sized>(prob: &P, state: &AdmmState) -> (Vector, f64) {
    let mut t = &state.z + &state.psi;
    if prob.identity_shift() {
        for i in 0..t.nrows() {
            t[(i, i)] -= 1.0;
        }
    }
    (matcore::pack_delta(&t, SQRT2), prob.s() as f64 + state.delta)
}

pub fn x_update<P: TwoBlockProblem + ?Sized>(prob: &P, state: &AdmmState, exact: bool) -> Vector {
    let (d_top, d_last) = x_rhs(prob, state);
    if exact {
        bvls::solve_exact(prob.g(), &d_top, d_last, &state.x, 1e-12, 100_000)
    } else {
        bvls::gradient_step(prob.g(), &state.x, &d_top, d_last)
    }
}

/// Z-update from `Y = lift(x) − Ψ`.
pub fn z_update<P: TwoBlockProblem + ?Sized>(
    prob: &P,
    state: &AdmmState,
    lifted: &Mat,
    opts: &SolveOptions,
    counters: &mut Counters,
) -> Result<ProxOutcome> {
    let y = lifted - &state.psi;
    prob.prox(&y, state.rho, opts, counters)
}

/// `Ψ ← Ψ − lift(x) + Z`, `δ ← δ − eᵀx + s`.
pub fn multiplier_update(state: &mut AdmmState, lifted: &Mat, s: usize) {
    state.psi = &state.psi - lifted + &state.z;
    state.delta += s as f64 - state.x.sum();
    state.iter += 1;
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub bound: f64,
    pub primal: f64,
    pub x_feas: Vector,
}

/// Concavity certificate at the projection `x̂` of `x_raw` onto the feasible
/// set: `f(x̂) − ∇f(x̂)ᵀx̂ + top_s_sum(∇f(x̂))`.
pub fn certify_point<P: TwoBlockProblem + ?Sized>(prob: &P, x_raw: &Vector) -> Result<Certificate> {
    let x_feas = matcore::project_capped_simplex(x_raw, prob.s())?;
    let (value, grad) = prob.value_and_grad(&x_feas).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } | Error::NotInDomain => Error::NoCertificate,
        other => other,
    })?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NoCertificate);
    }
    let bound = value - grad.dot(&x_feas) + matcore::top_s_sum(&grad, prob.s());
    Ok(Certificate {
        bound,
        primal: value,
        x_feas,
    })
}

pub struct RunSetup {
    pub relaxation: Relaxation,
    pub rho: f64,
    pub gamma: f64,
}

/// Best certified bound and best feasible value seen so far.
pub struct Tracker {
    pub best_bound: f64,
    pub best_primal: f64,
    pub best_x: Vec<f64>,
    pub trace: Vec<TraceRow>,
    record_trace: bool,
    start: Instant,
}

impl Tracker {
    pub fn new(start: Instant, record_trace: bool) -> Self {
        Tracker {
            best_bound: f64::INFINITY,
            best_primal: f64::NEG_INFINITY,
            best_x: Vec::new(),
            trace: Vec::new(),
            record_trace,
            start,
        }
    }

    pub fn gap(&self) -> f64 {
        self.best_bound - self.best_primal
    }

    /// Fold in one certification; `solution` is only materialized on improvement.
    pub fn update(
        &mut self,
        iter: usize,
        bound: f64,
        primal: f64,
        solution: impl FnOnce() -> Vec<f64>,
        res_primal: f64,
        res_dual: f64,
    ) {
        if bound < self.best_bound {
            self.best_bound = bound;
        }
        if primal > self.best_primal {
            self.best_primal = primal;
            self.best_x = solution();
        }
        if self.record_trace {
            self.trace.push(TraceRow {
                iter,
                time_s: self.start.elapsed().as_secs_f64(),
                primal: self.best_primal,
                bound: self.best_bound,
                gap: self.gap(),
                res_primal,
                res_dual,
            });
        }
    }
}

fn certify_into<P: TwoBlockProblem + ?Sized>(
    prob: &P,
    state: &AdmmState,
    residuals: (f64, f64),
    tracker: &mut Tracker,
    counters: &mut Counters,
) -> Result<()> {
    match certify_point(prob, &state.x) {
        Ok(cert) => {
            tracker.update(
                state.iter,
                cert.bound,
                cert.primal,
                || cert.x_feas.iter().copied().collect(),
                residuals.0,
                residuals.1,
            );
            Ok(())
        }
        Err(Error::NoCertificate) => {
            bump(counters, "certificate_failures");
            Ok(())
        }
        Err(e) => Err(e),
    }
}

pub fn run<P: TwoBlockProblem + ?Sized>(prob: &P, setup: RunSetup, opts: &SolveOptions) -> Result<BoundReport> {
    if !(setup.rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {}", setup.rho)));
    }
    let start = Instant::now();
    let period = opts.cert_period.unwrap_or(50).max(1);
    let cert_start = opts.cert_start.unwrap_or(0);
    let mut counters = Counters::new();
    let mut state = init_state(prob, setup.rho);
    let mut tracker = Tracker::new(start, opts.record_trace);
    let mut residuals = (f64::NAN, f64::NAN);
    let mut last_cert_iter = usize::MAX;

    let mut termination = Termination::IterLimit;
    if cert_start == 0 {
        // x⁰ = (s/n)e is already optimal when s = n
        certify_into(prob, &state, residuals, &mut tracker, &mut counters)?;
        last_cert_iter = 0;
        if tracker.gap() <= opts.gap_tol {
            termination = Termination::GapTol;
        }
    }
    while termination != Termination::GapTol && state.iter < opts.max_iter {
        state.x = x_update(prob, &state, opts.exact_bvls);
        let lifted = lift(prob, &state.x);
        let out = z_update(prob, &state, &lifted, opts, &mut counters)?;
        if let Some(nu) = out.nu_min {
            debug_assert!(nu > 0.0, "scaled multiplier lost definiteness: {nu}");
        }
        let res_dual = state.rho * (&out.z - &state.z).norm();
        state.z = out.z;
        multiplier_update(&mut state, &lifted, prob.s());
        let res_primal = (&lifted - &state.z).norm() + (state.x.sum() - prob.s() as f64).abs();
        residuals = (res_primal, res_dual);

        if state.iter >= cert_start && state.iter % period == 0 {
            certify_into(prob, &state, residuals, &mut tracker, &mut counters)?;
            last_cert_iter = state.iter;
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
    if termination != Termination::GapTol && last_cert_iter != state.iter {
        certify_into(prob, &state, residuals, &mut tracker, &mut counters)?;
        if tracker.gap() <= opts.gap_tol {
            termination = Termination::GapTol;
        }
    }

    Ok(BoundReport {
        relaxation: setup.relaxation,
        bound: tracker.best_bound,
        primal_value: tracker.best_primal,
        dual_gap: tracker.gap(),
        iterations: state.iter,
        wall_time_s: start.elapsed().as_secs_f64(),
        termination,
        rho: setup.rho,
        gamma: setup.gamma,
        seed: opts.seed,
        event_counters: counters,
        solution: tracker.best_x,
        trace: tracker.trace,
    })
}

/// Columns `vec_√2(M_ℓ)` for `M_ℓ = u_ℓ u_ℓᵀ`, with `u_ℓ` the rows of `u`.
pub fn rank_one_columns(u: &Mat) -> Mat {
    let (n, q) = (u.nrows(), u.ncols());
    let mut g = Mat::zeros(matcore::packed_len(q), n);
    for l in 0..n {
        let mut col = g.column_mut(l);
        let mut k = 0;
        for j in 0..q {
            let uj = u[(l, j)];
            col[k] = uj * uj;
            k += 1;
            for i in (j + 1)..q {
                col[k] = SQRT2 * u[(l, i)] * uj;
                k += 1;
            }
        }
    }
    g
}

/// Running minimum of the certified bounds in a trace is non-increasing.
pub fn trace_is_monotone(trace: &[TraceRow]) -> bool {
    trace.windows(2).all(|w| w[1].bound <= w[0].bound)
}
