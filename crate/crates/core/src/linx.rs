//! The linx bound for MESP:
//! `max ½(ldet(γC Diag(x) C + Diag(e − x)) − s log γ)` over the capped simplex.

use crate::admm::{self, AdmmState, Certificate, ProxOutcome, RunSetup, TwoBlockProblem, SQRT2};
use crate::error::{Error, Result};
use crate::instances::MespInstance;
use crate::matcore::{self, CholFactor, Mat, Vector};
use crate::report::{default_rho_linx, BoundReport, Counters, Relaxation, SolveOptions};

pub struct LinxProblem<'a> {
    pub inst: &'a MespInstance,
    pub gamma: f64,
    g: Mat,
}

/// Columns `vec_√2(γ C_ℓ·ᵀ C_ℓ· − Diag(e_ℓ))`.
pub fn build_g_linx(c: &Mat, gamma: f64) -> Mat {
    let n = c.nrows();
    let mut g = admm::rank_one_columns(c) * gamma;
    for l in 0..n {
        g[(matcore::packed_index(n, l, l), l)] -= 1.0;
    }
    g
}

impl<'a> LinxProblem<'a> {
    pub fn new(inst: &'a MespInstance, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        Ok(LinxProblem {
            inst,
            gamma,
            g: build_g_linx(&inst.c, gamma),
        })
    }

    /// `γC Diag(x) C + Diag(e − x)`.
    pub fn m_matrix(&self, x: &Vector) -> Mat {
        let c = &self.inst.c;
        let mut cx = c.clone();
        for (j, mut col) in cx.column_iter_mut().enumerate() {
            col *= x[j];
        }
        let mut m = matcore::sym_part(&(cx * c)) * self.gamma;
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0 - x[i];
        }
        m
    }
}

impl TwoBlockProblem for LinxProblem<'_> {
    fn n(&self) -> usize {
        self.inst.n()
    }

    fn s(&self) -> usize {
        self.inst.s
    }

    fn order(&self) -> usize {
        self.inst.n()
    }

    fn g(&self) -> &Mat {
        &self.g
    }

    fn identity_shift(&self) -> bool {
        true
    }

    fn prox(&self, y: &Mat, rho: f64, _opts: &SolveOptions, _counters: &mut Counters) -> Result<ProxOutcome> {
        let (z, eig) = matcore::prox_neg_logdet_eig(y, rho)?;
        let lam_max = matcore::logdet_prox_eigenvalue(eig.values[0], rho);
        Ok(ProxOutcome {
            z,
            nu_min: Some(1.0 / (rho * lam_max)),
        })
    }

    fn value_and_grad(&self, x: &Vector) -> Result<(f64, Vector)> {
        let m = self.m_matrix(x);
        let chol = CholFactor::new(&m)?;
        let minv = chol.inverse();
        let c = &self.inst.c;
        let cmc = c * &minv * c;
        let grad = Vector::from_fn(self.n(), |l, _| 0.5 * (self.gamma * cmc[(l, l)] - minv[(l, l)]));
        let value = 0.5 * (chol.logdet() - self.s() as f64 * self.gamma.ln()) + self.inst.offset;
        Ok((value, grad))
    }
}

pub fn xupdate_linx(prob: &LinxProblem, state: &AdmmState) -> Vector {
    admm::x_update(prob, state, false)
}

pub fn zupdate_linx(prob: &LinxProblem, state: &AdmmState) -> Result<Mat> {
    let lifted = admm::lift(prob, &state.x);
    let mut counters = Counters::new();
    Ok(admm::z_update(prob, state, &lifted, &SolveOptions::default(), &mut counters)?.z)
}

pub fn multiplier_update_linx(prob: &LinxProblem, state: &mut AdmmState) {
    let lifted = admm::lift(prob, &state.x);
    admm::multiplier_update(state, &lifted, prob.s());
}

pub fn dual_bound_linx(inst: &MespInstance, gamma: f64, x_raw: &Vector) -> Result<Certificate> {
    if x_raw.len() != inst.n() {
        return Err(Error::Dimension(format!("x has length {}, expected {}", x_raw.len(), inst.n())));
    }
    admm::certify_point(&LinxProblem::new(inst, gamma)?, x_raw)
}

pub fn solve_linx(inst: &MespInstance, opts: &SolveOptions) -> Result<BoundReport> {
    inst.validate()?;
    let gamma = opts.gamma.unwrap_or(inst.gamma);
    let rho = opts.rho.unwrap_or_else(|| default_rho_linx(inst));
    let prob = LinxProblem::new(inst, gamma)?;
    admm::run(
        &prob,
        RunSetup {
            relaxation: Relaxation::Linx,
            rho,
            gamma,
        },
        opts,
    )
}

/// Packed-vector identity used by tests: `G x = vec_√2(γC Diag(x) C − Diag(x))`.
pub fn linx_lift_residual(prob: &LinxProblem, x: &Vector) -> f64 {
    let mut direct = prob.m_matrix(x);
    for i in 0..direct.nrows() {
        direct[(i, i)] -= 1.0;
    }
    (prob.g() * x - matcore::pack_delta(&direct, SQRT2)).amax()
}
