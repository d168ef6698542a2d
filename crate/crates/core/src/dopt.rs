//! Natural bound for 0/1 D-optimality: `max ldet(AᵀDiag(x)A)` over the
//! capped simplex.

use crate::admm::{self, AdmmState, Certificate, ProxOutcome, RunSetup, TwoBlockProblem};
use crate::error::{Error, Result};
use crate::instances::DoptInstance;
use crate::matcore::{self, CholFactor, Mat, Vector};
use crate::report::{default_rho_nat, BoundReport, Counters, Relaxation, SolveOptions};

pub struct NatProblem<'a> {
    pub inst: &'a DoptInstance,
    g: Mat,
}

impl<'a> NatProblem<'a> {
    pub fn new(inst: &'a DoptInstance) -> Self {
        NatProblem {
            inst,
            g: admm::rank_one_columns(&inst.a),
        }
    }
}

impl TwoBlockProblem for NatProblem<'_> {
    fn n(&self) -> usize {
        self.inst.n()
    }

    fn s(&self) -> usize {
        self.inst.s
    }

    fn order(&self) -> usize {
        self.inst.m()
    }

    fn g(&self) -> &Mat {
        &self.g
    }

    fn prox(&self, y: &Mat, rho: f64, _opts: &SolveOptions, _counters: &mut Counters) -> Result<ProxOutcome> {
        let (z, eig) = matcore::prox_neg_logdet_eig(y, rho)?;
        // Ψ⁺ = Z⁻¹/ρ, so its smallest eigenvalue is 1/(ρ λ_max(Z))
        let lam_max = matcore::logdet_prox_eigenvalue(eig.values[0], rho);
        Ok(ProxOutcome {
            z,
            nu_min: Some(1.0 / (rho * lam_max)),
        })
    }

    fn value_and_grad(&self, x: &Vector) -> Result<(f64, Vector)> {
        let w = self.inst.information(x);
        let chol = CholFactor::new(&w)?;
        let winv = chol.inverse();
        let aw = &self.inst.a * &winv;
        let grad = Vector::from_fn(self.n(), |l, _| aw.row(l).dot(&self.inst.a.row(l)));
        Ok((chol.logdet(), grad))
    }
}

pub fn xupdate_nat(prob: &NatProblem, state: &AdmmState) -> Vector {
    admm::x_update(prob, state, false)
}

pub fn zupdate_nat(prob: &NatProblem, state: &AdmmState) -> Result<Mat> {
    let lifted = admm::lift(prob, &state.x);
    let mut counters = Counters::new();
    Ok(admm::z_update(prob, state, &lifted, &SolveOptions::default(), &mut counters)?.z)
}

pub fn multiplier_update_nat(prob: &NatProblem, state: &mut AdmmState) {
    let lifted = admm::lift(prob, &state.x);
    admm::multiplier_update(state, &lifted, prob.s());
}

/// Certified upper bound on the natural relaxation from any `x_raw`.
pub fn dual_bound_nat(inst: &DoptInstance, x_raw: &Vector) -> Result<Certificate> {
    if x_raw.len() != inst.n() {
        return Err(Error::Dimension(format!("x has length {}, expected {}", x_raw.len(), inst.n())));
    }
    admm::certify_point(&NatProblem::new(inst), x_raw)
}

pub fn solve_nat(inst: &DoptInstance, opts: &SolveOptions) -> Result<BoundReport> {
    inst.validate()?;
    let rho = opts.rho.unwrap_or_else(|| default_rho_nat(inst));
    let prob = NatProblem::new(inst);
    admm::run(
        &prob,
        RunSetup {
            relaxation: Relaxation::Nat,
            rho,
            gamma: 1.0,
        },
        opts,
    )
}
