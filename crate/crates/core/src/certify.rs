//! Reference oracles and integer lower bounds used to check the ADMM bounds.

use crate::admm::TwoBlockProblem;
use crate::error::{Error, Result};
use crate::instances::{principal_submatrix, DoptInstance, MespInstance};
use crate::matcore::{self, Vector};
use crate::report::Relaxation;

pub use crate::report::BoundReport;

#[derive(Debug, Clone)]
pub struct FwResult {
    /// Best objective value seen; a lower bound on the relaxation optimum.
    pub value: f64,
    /// Smallest `f(x) + ⟨∇f(x), v − x⟩` seen; an upper bound on the optimum.
    pub upper: f64,
    /// Frank–Wolfe gap at the last iterate.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub x: Vector,
}

/// Conditional gradient with step `2/(t+2)` from `x = (s/n)e`. The linear
/// maximization over the capped simplex is the top-`s` indicator of the gradient.
pub fn frank_wolfe_reference<P: TwoBlockProblem + ?Sized>(prob: &P, tol: f64, max_iter: usize) -> Result<FwResult> {
    let (n, s) = (prob.n(), prob.s());
    let mut x = Vector::from_element(n, s as f64 / n as f64);
    let (mut f, mut grad) = prob.value_and_grad(&x)?;
    let mut best = f;
    let mut best_x = x.clone();
    let mut upper = f64::INFINITY;
    let mut gap = f64::INFINITY;
    let mut t = 0;
    while t < max_iter {
        let top = matcore::top_s_indices(&grad, s);
        let mut v = Vector::zeros(n);
        for &i in &top {
            v[i] = 1.0;
        }
        gap = grad.dot(&(&v - &x));
        upper = upper.min(f + gap);
        if gap <= tol {
            return Ok(FwResult {
                value: best,
                upper,
                gap,
                iterations: t,
                converged: true,
                x: best_x,
            });
        }
        // the first step 2/(0+2) = 1 would jump to a vertex; start at t = 1
        let mut step = 2.0 / (t as f64 + 3.0);
        loop {
            let cand = &x + (&v - &x) * step;
            match prob.value_and_grad(&cand) {
                Ok((fc, gc)) => {
                    x = cand;
                    f = fc;
                    grad = gc;
                    break;
                }
                Err(Error::NotPositiveDefinite { .. }) | Err(Error::NotInDomain) if step > 1e-12 => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        if f > best {
            best = f;
            best_x = x.clone();
        }
        t += 1;
    }
    Ok(FwResult {
        value: best,
        upper,
        gap,
        iterations: t,
        converged: false,
        x: best_x,
    })
}

/// Golden-section minimization of `bound_fn` over `log₁₀ γ ∈ [lo, hi]`.
/// Failed evaluations count as `+∞`; `γ = 1` is evaluated first when inside
/// the range, and the best point seen is returned.
pub fn gamma_search<F>(mut bound_fn: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut best = (f64::NAN, f64::INFINITY);
    let mut eval = |t: f64, best: &mut (f64, f64)| -> f64 {
        let g = 10f64.powf(t);
        let v = bound_fn(g).ok().filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
        if v < best.1 || best.0.is_nan() {
            *best = (g, v);
        }
        v
    };
    if lo <= 0.0 && 0.0 <= hi {
        eval(0.0, &mut best);
    }
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = eval(c, &mut best);
    let mut fd = eval(d, &mut best);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = eval(c, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = eval(d, &mut best);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegerSolution {
    pub support: Vec<usize>,
    pub value: f64,
}

/// `offset + ldet C[S,S]`, or `−∞` when singular.
pub fn mesp_value(inst: &MespInstance, support: &[usize]) -> f64 {
    matcore::logdet_spd(&principal_submatrix(&inst.c, support))
        .map(|v| v + inst.offset)
        .unwrap_or(f64::NEG_INFINITY)
}

/// `ldet(A_SᵀA_S)`, or `−∞` when singular.
pub fn dopt_value(inst: &DoptInstance, support: &[usize]) -> f64 {
    let mut x = Vector::zeros(inst.n());
    for &i in support {
        x[i] = 1.0;
    }
    matcore::logdet_spd(&inst.information(&x)).unwrap_or(f64::NEG_INFINITY)
}

/// Greedy construction on `score`, then first-improvement 1-swaps on `value`
/// until no swap helps. Ties go to the lowest index.
fn greedy_swap<S, V>(n: usize, s: usize, score: S, value: V) -> IntegerSolution
where
    S: Fn(&[usize]) -> f64,
    V: Fn(&[usize]) -> f64,
{
    let mut support: Vec<usize> = Vec::with_capacity(s);
    let mut used = vec![false; n];
    for _ in 0..s {
        let mut pick = None;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            if used[i] {
                continue;
            }
            support.push(i);
            let v = score(&support);
            support.pop();
            if pick.is_none() || v > best {
                best = v;
                pick = Some(i);
            }
        }
        let i = pick.expect("s < n leaves a candidate");
        used[i] = true;
        support.push(i);
    }
    let mut current = value(&support);
    loop {
        let mut improved = false;
        'outer: for pos in 0..s {
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let old = support[pos];
                support[pos] = j;
                let v = value(&support);
                if v > current + 1e-12 * current.abs().max(1.0) {
                    used[old] = false;
                    used[j] = true;
                    current = v;
                    improved = true;
                    break 'outer;
                }
                support[pos] = old;
            }
        }
        if !improved {
            break;
        }
    }
    support.sort_unstable();
    IntegerSolution {
        support,
        value: current,
    }
}

pub fn local_search_mesp(inst: &MespInstance) -> IntegerSolution {
    let v = |sup: &[usize]| mesp_value(inst, sup);
    greedy_swap(inst.n(), inst.s, v, v)
}

/// Greedy on `ldet(εI + A_SᵀA_S)` so that partial supports can be ranked.
pub fn local_search_dopt(inst: &DoptInstance) -> IntegerSolution {
    let m = inst.m();
    let eps = 1e-6 * (inst.a.norm_squared() / inst.n() as f64).max(1e-300);
    let score = |sup: &[usize]| {
        let mut w = matcore::Mat::identity(m, m) * eps;
        for &i in sup {
            let r = inst.a.row(i);
            w += r.transpose() * r;
        }
        matcore::logdet_spd(&w).unwrap_or(f64::NEG_INFINITY)
    };
    greedy_swap(inst.n(), inst.s, score, |sup| dopt_value(inst, sup))
}

/// Visits every `s`-subset of `0..n` in lexicographic order.
pub fn for_each_subset<F: FnMut(&[usize])>(n: usize, s: usize, mut f: F) {
    if s > n {
        return;
    }
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        f(&idx);
        let mut i = s;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < n - s + i {
                idx[i] += 1;
                for k in (i + 1)..s {
                    idx[k] = idx[k - 1] + 1;
                }
                break;
            }
        }
    }
}

pub const EXHAUSTIVE_MAX_N: usize = 24;

fn exhaustive<V: Fn(&[usize]) -> f64>(n: usize, s: usize, value: V) -> Result<IntegerSolution> {
    if n > EXHAUSTIVE_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "enumeration is limited to n ≤ {EXHAUSTIVE_MAX_N}, got {n}"
        )));
    }
    let mut best = IntegerSolution {
        support: Vec::new(),
        value: f64::NEG_INFINITY,
    };
    for_each_subset(n, s, |sup| {
        let v = value(sup);
        if best.support.is_empty() || v > best.value {
            best = IntegerSolution {
                support: sup.to_vec(),
                value: v,
            };
        }
    });
    Ok(best)
}

pub fn exhaustive_mesp(inst: &MespInstance) -> Result<IntegerSolution> {
    exhaustive(inst.n(), inst.s, |sup| mesp_value(inst, sup))
}

pub fn exhaustive_dopt(inst: &DoptInstance) -> Result<IntegerSolution> {
    exhaustive(inst.n(), inst.s, |sup| dopt_value(inst, sup))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GapReport {
    pub relaxation: Relaxation,
    pub bound: f64,
    pub lower_bound: f64,
    /// Absolute integrality gap `bound − lower_bound`.
    pub gap: f64,
}

pub fn gap_report(report: &BoundReport, lb: &IntegerSolution) -> GapReport {
    GapReport {
        relaxation: report.relaxation,
        bound: report.bound,
        lower_bound: lb.value,
        gap: report.bound - lb.value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddfact::{solve_ddfact_default, DdfactProblem};
    use crate::dopt::{solve_nat, NatProblem};
    use crate::instances::{
        complement_instance, factorize, gen_covariance, gen_random_dopt, rng_from_seed, scale_instance, FactorMethod,
    };
    use crate::linx::{solve_linx, LinxProblem};
    use crate::matcore::Mat;
    use crate::report::SolveOptions;
    use rand::Rng;

    #[test]
    fn fw_linx_identity_is_immediate() {
        let inst = MespInstance::new(Mat::identity(5, 5), 2).unwrap();
        let prob = LinxProblem::new(&inst, 1.0).unwrap();
        let res = frank_wolfe_reference(&prob, 1e-9, 100).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.value.abs() < 1e-14);
    }

    #[test]
    fn fw_sandwiched_by_admm_bounds() {
        let dinst = gen_random_dopt(3, 2, 0.01).unwrap();
        let fw = frank_wolfe_reference(&NatProblem::new(&dinst), 1e-3, 100_000).unwrap();
        assert!(fw.converged);
        let rep = solve_nat(&dinst, &SolveOptions::default().with_rho(0.1)).unwrap();
        assert!(rep.bound >= fw.value - 1e-9);
        assert!(fw.upper >= fw.value);

        let c = gen_covariance(12, 6, 3).unwrap();
        let minst = MespInstance::new(c, 4).unwrap();
        let fw = frank_wolfe_reference(&LinxProblem::new(&minst, 1.0).unwrap(), 1e-3, 100_000).unwrap();
        let rep = solve_linx(&minst, &SolveOptions::default().with_rho(0.1)).unwrap();
        assert!(rep.bound >= fw.value - 1e-9);
        let f = factorize(&minst.c, FactorMethod::Spectral).unwrap();
        let fw = frank_wolfe_reference(&DdfactProblem::new(&minst, f).unwrap(), 1e-3, 100_000).unwrap();
        let rep = solve_ddfact_default(&minst, &SolveOptions::default().with_rho(0.05)).unwrap();
        assert!(rep.bound >= fw.value - 1e-9);
    }

    #[test]
    fn fw_nat_matches_grid_on_tiny_instance() {
        // n = 3, s = 2: the feasible set is a hexagon parametrized by (x₀, x₁)
        let inst = gen_random_dopt(2, 5, 0.002).unwrap();
        let inst = DoptInstance::new(inst.a.rows(0, 3).clone_owned(), 2).unwrap();
        let prob = NatProblem::new(&inst);
        let fw = frank_wolfe_reference(&prob, 1e-6, 1_000_000).unwrap();
        let mut grid_best = f64::NEG_INFINITY;
        let k = 400;
        for i in 0..=k {
            for j in 0..=k {
                let (a, b) = (i as f64 / k as f64, j as f64 / k as f64);
                let c = 2.0 - a - b;
                if (0.0..=1.0).contains(&c) {
                    if let Ok((v, _)) = prob.value_and_grad(&Vector::from_row_slice(&[a, b, c])) {
                        grid_best = grid_best.max(v);
                    }
                }
            }
        }
        assert!(fw.value >= grid_best - 1e-6);
        assert!(fw.value <= grid_best + 1e-2);
    }

    #[test]
    fn gamma_search_constant_returns_unit_gamma() {
        let (g, v) = gamma_search(|_| Ok(3.5), -4.0, 4.0, 1e-3);
        assert_eq!(g, 1.0);
        assert_eq!(v, 3.5);
    }

    #[test]
    fn gamma_search_finds_quadratic_minimum() {
        let (g, v) = gamma_search(|g| Ok((g.log10() - 1.5).powi(2)), -4.0, 4.0, 1e-6);
        assert!((g.log10() - 1.5).abs() < 1e-3);
        assert!(v < 1e-6);
        // failures are skipped
        let (g, _) = gamma_search(|g| if g > 10.0 { Err(Error::NoCertificate) } else { Ok(-g) }, -4.0, 4.0, 1e-6);
        assert!(g <= 10.0 && g > 9.0);
    }

    #[test]
    fn gamma_search_improves_linx() {
        let c = gen_covariance(20, 20, 21).unwrap();
        let inst = MespInstance::new(c, 6).unwrap();
        let bound_at = |g: f64| {
            let opts = SolveOptions::default().with_rho(1.0).with_gamma(g).with_gap_tol(1e-2).with_max_iter(5000);
            solve_linx(&inst, &opts).map(|r| r.bound)
        };
        let at_one = bound_at(1.0).unwrap();
        let (_, best) = gamma_search(bound_at, -2.0, 2.0, 0.1);
        assert!(best <= at_one);
    }

    #[test]
    fn ddfact_bound_is_scaling_invariant_along_search() {
        let c = gen_covariance(12, 8, 22).unwrap();
        let inst = MespInstance::new(c, 4).unwrap();
        let mut seen = Vec::new();
        gamma_search(
            |g| {
                let scaled = scale_instance(&inst, g)?;
                let opts = SolveOptions::default()
                    .with_rho(1.0 / g)
                    .with_gap_tol(1e-4)
                    .with_max_iter(20_000);
                let rep = solve_ddfact_default(&scaled, &opts)?;
                if rep.dual_gap <= 1e-4 {
                    seen.push(rep.bound);
                }
                Ok(rep.bound)
            },
            -1.0,
            1.0,
            0.3,
        );
        assert!(seen.len() >= 4, "{seen:?}");
        let lo = seen.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 1e-3, "{seen:?}");
    }

    #[test]
    fn diagonal_covariance_local_search_is_exact() {
        let d = [3.0, 0.5, 7.0, 1.0, 2.0, 7.0];
        let inst = MespInstance::new(Mat::from_diagonal(&Vector::from_row_slice(&d)), 3).unwrap();
        let sol = local_search_mesp(&inst);
        assert_eq!(sol.support, vec![0, 2, 5]);
        assert!((sol.value - (3.0f64 * 7.0 * 7.0).ln()).abs() < 1e-12);
        assert_eq!(local_search_mesp(&inst), sol);
    }

    #[test]
    fn local_search_never_beats_enumeration() {
        let mut hits = 0;
        for seed in 0..30 {
            let c = gen_covariance(8, 8, 100 + seed).unwrap();
            let inst = MespInstance::new(c, 3).unwrap();
            let ls = local_search_mesp(&inst);
            let ex = exhaustive_mesp(&inst).unwrap();
            assert_eq!(ls.support.len(), 3);
            assert!(ls.value <= ex.value + 1e-12);
            if (ls.value - ex.value).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits > 0);

        let dinst = gen_random_dopt(2, 9, 0.005).unwrap();
        let dinst = DoptInstance::new(dinst.a.rows(0, 9).clone_owned(), 4).unwrap();
        let ls = local_search_dopt(&dinst);
        let ex = exhaustive_dopt(&dinst).unwrap();
        assert!(ls.value <= ex.value + 1e-12 && ls.value.is_finite());
    }

    #[test]
    fn subset_enumeration_counts() {
        let mut count = 0;
        for_each_subset(8, 3, |s| {
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            count += 1;
        });
        assert_eq!(count, 56);
    }

    #[test]
    fn complementation_and_scaling_identities_are_exact() {
        let mut rng = rng_from_seed(30);
        for seed in 0..10 {
            let c = gen_covariance(7, 7, 200 + seed).unwrap();
            let s = rng.random_range(1..7);
            let inst = MespInstance::new(c, s).unwrap();
            let z = exhaustive_mesp(&inst).unwrap().value;
            let zc = exhaustive_mesp(&complement_instance(&inst).unwrap()).unwrap().value;
            assert!((z - zc).abs() < 1e-9);
            let g = rng.random_range(0.1..10.0);
            let zs = exhaustive_mesp(&scale_instance(&inst, g).unwrap()).unwrap().value;
            assert!((z - zs).abs() < 1e-9);
        }
    }

    #[test]
    fn gap_report_is_absolute() {
        let d = [3.0, 0.5, 7.0, 1.0];
        let inst = MespInstance::new(Mat::from_diagonal(&Vector::from_row_slice(&d)), 2).unwrap();
        let rep = solve_linx(&inst, &SolveOptions::default().with_rho(0.1)).unwrap();
        let lb = local_search_mesp(&inst);
        let gr = gap_report(&rep, &lb);
        assert_eq!(gr.gap, rep.bound - 21f64.ln());
        assert!(gr.gap >= -1e-9);
        let same = IntegerSolution {
            support: vec![0, 2],
            value: rep.bound,
        };
        assert_eq!(gap_report(&rep, &same).gap, 0.0);
    }
}
