//! Factorization bound for MESP: `max Γ_s(FᵀDiag(x)F)` over the capped simplex,
//! where `C = FFᵀ`.

use crate::admm::{self, AdmmState, Certificate, ProxOutcome, RunSetup, TwoBlockProblem};
use crate::error::{Error, Result};
use crate::gamma::{self, GammaProx};
use crate::instances::{factorize, FactorChoice, FactorMethod, MespInstance};
use crate::matcore::{self, sym_eigen, Mat, Vector};
use crate::report::{bump, default_rho_ddfact, BoundReport, Counters, Relaxation, SolveOptions};

pub struct DdfactProblem<'a> {
    pub inst: &'a MespInstance,
    pub factor: FactorChoice,
    g: Mat,
}

impl<'a> DdfactProblem<'a> {
    pub fn new(inst: &'a MespInstance, factor: FactorChoice) -> Result<Self> {
        if factor.f.nrows() != inst.n() {
            return Err(Error::Dimension(format!(
                "factor has {} rows, instance has order {}",
                factor.f.nrows(),
                inst.n()
            )));
        }
        if factor.k() < inst.s {
            return Err(Error::RankDeficient {
                requested: inst.s,
                achieved: factor.k(),
            });
        }
        let g = admm::rank_one_columns(&factor.f);
        Ok(DdfactProblem { inst, factor, g })
    }

    pub fn f(&self) -> &Mat {
        &self.factor.f
    }
}

/// Result of one Γ-prox: the new `Z` and, when the closed form applied, its data.
pub struct DdfactProx {
    pub z: Mat,
    pub closed_form: Option<GammaProx>,
    pub lambda: Vector,
}

/// `argmin −Γ_s(Z) + (ρ/2)‖Z − Y‖²`, falling back to the clamped-tail solve
/// on the eigenvalues when no ĵ exists.
pub fn gamma_prox(y: &Mat, rho: f64, s: usize, project_lambda: bool, counters: &mut Counters) -> Result<DdfactProx> {
    let eig = sym_eigen(&(y * rho))?;
    let (mut lambda, closed_form) = match gamma::gamma_prox_values(&eig.values, rho, s) {
        Ok(p) => (p.lambda_out.clone(), Some(p)),
        Err(Error::NoValidJ) => {
            bump(counters, "no_valid_j");
            (gamma::gamma_prox_clamped(&eig.values, rho, s)?, None)
        }
        Err(e) => return Err(e),
    };
    if lambda.iter().any(|&l| l < 0.0) {
        bump(counters, "negative_lambda");
        if project_lambda {
            // the prox restricted to Z ⪰ 0, rather than a plain clamp
            lambda = gamma::gamma_prox_clamped(&eig.values, rho, s)?;
        }
    }
    Ok(DdfactProx {
        z: eig.compose(&lambda),
        closed_form,
        lambda,
    })
}

impl TwoBlockProblem for DdfactProblem<'_> {
    fn n(&self) -> usize {
        self.inst.n()
    }

    fn s(&self) -> usize {
        self.inst.s
    }

    fn order(&self) -> usize {
        self.factor.k()
    }

    fn g(&self) -> &Mat {
        &self.g
    }

    fn prox(&self, y: &Mat, rho: f64, opts: &SolveOptions, counters: &mut Counters) -> Result<ProxOutcome> {
        let out = gamma_prox(y, rho, self.s(), opts.project_lambda, counters)?;
        let nu_min = out.closed_form.as_ref().map(|p| {
            // stable forms of λ − θ/ρ: 1/(ρλ) on the head, 2(s−ĵ)/φ on the tail
            let tail = 2.0 * (p.s - p.jhat) as f64 / p.phi;
            p.lambda_out
                .iter()
                .take(p.jhat)
                .map(|&l| 1.0 / (rho * l))
                .fold(tail, f64::min)
        });
        Ok(ProxOutcome { z: out.z, nu_min })
    }

    fn value_and_grad(&self, x: &Vector) -> Result<(f64, Vector)> {
        let zhat = matcore::weighted_gram(self.f(), x);
        let eig = sym_eigen(&zhat)?;
        let eval = gamma::gamma_s_values(&eig.values, self.s())?;
        let beta = gamma::supgrad_weights(&eval);
        let fq = self.f() * &eig.basis;
        let grad = Vector::from_fn(self.n(), |l, _| {
            fq.row(l).iter().zip(beta.iter()).map(|(v, b)| b * v * v).sum()
        });
        Ok((eval.value + self.inst.offset, grad))
    }
}

pub fn xupdate_ddfact(prob: &DdfactProblem, state: &AdmmState) -> Vector {
    admm::x_update(prob, state, false)
}

pub fn zupdate_ddfact(prob: &DdfactProblem, state: &AdmmState, counters: &mut Counters) -> Result<DdfactProx> {
    let y = admm::lift(prob, &state.x) - &state.psi;
    gamma_prox(&y, state.rho, prob.s(), false, counters)
}

pub fn multiplier_update_ddfact(prob: &DdfactProblem, state: &mut AdmmState) {
    let lifted = admm::lift(prob, &state.x);
    admm::multiplier_update(state, &lifted, prob.s());
}

/// Largest deviation between the spectrum of `Ψ = Z − Y` and the closed form
/// `ν = λ − θ/ρ` (ascending).
pub fn psi_check_ddfact(psi: &Mat, prox: &GammaProx) -> Result<f64> {
    let got = sym_eigen(psi)?.values;
    let nu = prox.nu();
    let k = nu.len();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        worst = worst.max((got[k - 1 - i] - nu[i]).abs());
        if i > 0 && nu[i] < nu[i - 1] - 1e-12 * nu[i - 1].abs().max(1.0) {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

pub fn dual_bound_ddfact(inst: &MespInstance, factor: &FactorChoice, x_raw: &Vector) -> Result<Certificate> {
    if x_raw.len() != inst.n() {
        return Err(Error::Dimension(format!("x has length {}, expected {}", x_raw.len(), inst.n())));
    }
    admm::certify_point(&DdfactProblem::new(inst, factor.clone())?, x_raw)
}

pub fn solve_ddfact(inst: &MespInstance, factor: &FactorChoice, opts: &SolveOptions) -> Result<BoundReport> {
    inst.validate()?;
    let prob = DdfactProblem::new(inst, factor.clone())?;
    let rank = crate::instances::numerical_rank(&sym_eigen(&inst.c)?.values);
    let rho = opts.rho.unwrap_or_else(|| default_rho_ddfact(inst, rank));
    admm::run(
        &prob,
        RunSetup {
            relaxation: Relaxation::Ddfact,
            rho,
            gamma: 1.0,
        },
        opts,
    )
}

/// Solve with the default spectral factor.
pub fn solve_ddfact_default(inst: &MespInstance, opts: &SolveOptions) -> Result<BoundReport> {
    let factor = factorize(&inst.c, FactorMethod::Spectral)?;
    solve_ddfact(inst, &factor, opts)
}
