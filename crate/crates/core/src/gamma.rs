//! The Γ_s spectral function, its supergradient, and the closed-form prox of
//! `−Γ_s` used by the factorization-bound ADMM.

use crate::error::{Error, Result};
use crate::matcore::{Mat, SymEigen, Vector};

const TIE_TOL: f64 = 1e-12;

fn check_descending(v: &Vector) -> Result<()> {
    for i in 1..v.len() {
        let scale = v[i - 1].abs().max(v[i].abs()).max(1.0);
        if v[i] > v[i - 1] + TIE_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "vector must be sorted descending (entry {i} exceeds entry {})",
                i - 1
            )));
        }
    }
    Ok(())
}

/// Suffix sums: `tail[i] = Σ_{ℓ ≥ i} v[ℓ]` (0-based), `tail[len] = 0`.
fn suffix_sums(v: &Vector) -> Vec<f64> {
    let mut tail = vec![0.0; v.len() + 1];
    for i in (0..v.len()).rev() {
        tail[i] = tail[i + 1] + v[i];
    }
    tail
}

/// The index ı̂ in `[0, s)` with `λ_ı̂ > avg ≥ λ_{ı̂+1}`, where `avg` is the
/// mean of the tail `λ_{ı̂+1..k}` spread over `s − ı̂` slots (1-based, `λ₀ = ∞`).
///
/// The smallest `i` meeting the right inequality also meets the left one.
pub fn nikolov_index(lambda: &Vector, s: usize) -> Result<usize> {
    let k = lambda.len();
    if s == 0 || s > k {
        return Err(Error::InvalidArgument(format!("need 0 < s <= k, got s = {s}, k = {k}")));
    }
    check_descending(lambda)?;
    let tail = suffix_sums(lambda);
    let scale = lambda[0].abs().max(f64::MIN_POSITIVE);
    for i in 0..s {
        let avg = tail[i] / (s - i) as f64;
        if avg >= lambda[i] - TIE_TOL * scale {
            return Ok(i);
        }
    }
    Err(Error::InvalidArgument("no index satisfies the characterization".into()))
}

#[derive(Debug, Clone)]
pub struct GammaEval {
    pub ihat: usize,
    pub value: f64,
    /// Mean of the tail over the `s − ı̂` remaining slots.
    pub tail_avg: f64,
    pub lambda_in: Vector,
}

/// `Γ_s` evaluated on a descending eigenvalue vector.
pub fn gamma_s_values(lambda: &Vector, s: usize) -> Result<GammaEval> {
    let ihat = nikolov_index(lambda, s)?;
    let tail: f64 = lambda.iter().skip(ihat).sum();
    let tail_avg = tail / (s - ihat) as f64;
    let scale = lambda[0].abs().max(f64::MIN_POSITIVE);
    if !(tail_avg > 1e-14 * scale) || (ihat > 0 && !(lambda[ihat - 1] > 0.0)) {
        return Err(Error::NotInDomain);
    }
    let head: f64 = lambda.iter().take(ihat).map(|v| v.ln()).sum();
    Ok(GammaEval {
        ihat,
        value: head + (s - ihat) as f64 * tail_avg.ln(),
        tail_avg,
        lambda_in: lambda.clone(),
    })
}

pub fn gamma_s(x: &Mat, s: usize) -> Result<GammaEval> {
    let eig = crate::matcore::sym_eigen(x)?;
    gamma_s_values(&eig.values, s)
}

/// Supergradient weights: `1/λ_ℓ` on the head, `1/avg` on the tail.
pub fn supgrad_weights(eval: &GammaEval) -> Vector {
    let k = eval.lambda_in.len();
    Vector::from_fn(k, |l, _| {
        if l < eval.ihat {
            1.0 / eval.lambda_in[l]
        } else {
            1.0 / eval.tail_avg
        }
    })
}

/// Supergradient of `Γ_s` at `Z = Q Diag(λ) Qᵀ`.
pub fn supgrad_gamma(eig: &SymEigen, s: usize) -> Result<Mat> {
    let eval = gamma_s_values(&eig.values, s)?;
    Ok(eig.compose(&supgrad_weights(&eval)))
}

/// `u + √(u² + c)`, computed without cancellation for negative `u`.
#[inline]
fn plus_root(u: f64, c: f64) -> f64 {
    let r = (u * u + c).sqrt();
    if u >= 0.0 {
        u + r
    } else {
        c / (r - u)
    }
}

#[inline]
fn f_rho(u: f64, rho: f64) -> f64 {
    plus_root(u, 4.0 * rho)
}

/// The index ĵ of the Γ-prox: the smallest `j ∈ [0, s)` with
/// `(ζ_j + √(ζ_j² + 4ρ(k−j)(s−j)))/(s−j) ≥ f_ρ(θ_{j+1})`, `ζ_j = Σ_{ℓ>j} θ_ℓ`.
pub fn jhat_index(theta: &Vector, rho: f64, s: usize) -> Result<usize> {
    let k = theta.len();
    if s == 0 || s > k {
        return Err(Error::InvalidArgument(format!("need 0 < s <= k, got s = {s}, k = {k}")));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    check_descending(theta)?;
    let tail = suffix_sums(theta);
    for j in 0..s {
        let c = 4.0 * rho * ((k - j) * (s - j)) as f64;
        let mid = plus_root(tail[j], c) / (s - j) as f64;
        let rhs = f_rho(theta[j], rho);
        if mid >= rhs - TIE_TOL * mid.abs().max(rhs.abs()) {
            debug_assert!(
                j == 0 || f_rho(theta[j - 1], rho) >= mid * (1.0 - 1e-9),
                "left inequality fails at the minimal index"
            );
            return Ok(j);
        }
    }
    Err(Error::NoValidJ)
}

#[derive(Debug, Clone)]
pub struct GammaProx {
    pub jhat: usize,
    pub phi: f64,
    pub lambda_out: Vector,
    pub theta: Vector,
    pub rho: f64,
    pub s: usize,
}

impl GammaProx {
    /// `β` of the stationarity identity `ρλ − β − θ = 0`.
    pub fn beta(&self) -> Vector {
        let tail_beta = 2.0 * self.rho * (self.s - self.jhat) as f64 / self.phi;
        Vector::from_fn(self.lambda_out.len(), |l, _| {
            if l < self.jhat {
                1.0 / self.lambda_out[l]
            } else {
                tail_beta
            }
        })
    }

    /// Eigenvalues of the updated scaled multiplier, `λ − θ/ρ`.
    pub fn nu(&self) -> Vector {
        &self.lambda_out - &self.theta / self.rho
    }

    pub fn tail_sum(&self) -> f64 {
        self.lambda_out.iter().skip(self.jhat).sum()
    }
}

pub fn lambda_from_jhat(theta: &Vector, rho: f64, s: usize, jhat: usize) -> GammaProx {
    let k = theta.len();
    let zeta: f64 = theta.iter().skip(jhat).sum();
    let phi = plus_root(zeta, 4.0 * rho * ((k - jhat) * (s - jhat)) as f64);
    let shift = 2.0 * (s - jhat) as f64 / phi;
    let lambda_out = Vector::from_fn(k, |l, _| {
        if l < jhat {
            f_rho(theta[l], rho) / (2.0 * rho)
        } else {
            theta[l] / rho + shift
        }
    });
    GammaProx {
        jhat,
        phi,
        lambda_out,
        theta: theta.clone(),
        rho,
        s,
    }
}

/// Closed-form eigenvalues of `argmin −Γ_s(Z) + (ρ/2)‖Z − Y‖²` given the
/// descending eigenvalues `θ` of `ρY`.
pub fn gamma_prox_values(theta: &Vector, rho: f64, s: usize) -> Result<GammaProx> {
    let jhat = jhat_index(theta, rho, s)?;
    Ok(lambda_from_jhat(theta, rho, s, jhat))
}

pub const FALLBACK_ITERS: usize = 500;

/// Projected supergradient ascent on `Γ_s(d) − (ρ/2)‖d − θ/ρ‖²` over the
/// eigenvalues, for when no ĵ exists. Returns the best iterate, aligned with `θ`.
pub fn gamma_prox_fallback(theta: &Vector, rho: f64, s: usize) -> Vector {
    let k = theta.len();
    let target = theta / rho;
    let objective = |d: &Vector| -> f64 {
        let mut sorted: Vec<f64> = d.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        match gamma_s_values(&Vector::from_vec(sorted), s) {
            Ok(e) => e.value - 0.5 * rho * (d - &target).norm_squared(),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut d = theta.map(|t| f_rho(t, rho) / (2.0 * rho));
    let floor = 1e-12 * d.amax().max(1.0);
    let mut best = d.clone();
    let mut best_val = objective(&d);
    for t in 1..=FALLBACK_ITERS {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
        let sorted = Vector::from_iterator(k, order.iter().map(|&i| d[i]));
        let Ok(eval) = gamma_s_values(&sorted, s) else { break };
        let w = supgrad_weights(&eval);
        let mut beta = Vector::zeros(k);
        for (pos, &i) in order.iter().enumerate() {
            beta[i] = w[pos];
        }
        let grad = beta - (&d - &target) * rho;
        d += grad / (rho * t as f64);
        d.apply(|v| *v = v.max(floor));
        let val = objective(&d);
        if val > best_val {
            best_val = val;
            best = d.clone();
        }
    }
    best
}

/// Exact eigenvalues of `argmin −Γ_s(Z) + (ρ/2)‖Z − Y‖²` over `Z ⪰ 0`.
/// The tail takes the form `(θ_ℓ + β)₊/ρ` with `β Σ_tail (θ_ℓ + β)₊ = ρ(s − j)`,
/// which is the closed form whenever no tail entry is clamped; this search
/// succeeds even when no ĵ exists.
pub fn gamma_prox_clamped(theta: &Vector, rho: f64, s: usize) -> Result<Vector> {
    let k = theta.len();
    if s == 0 || s > k {
        return Err(Error::InvalidArgument(format!("need 0 < s <= k, got s = {s}, k = {k}")));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    check_descending(theta)?;
    for j in 0..s {
        let target = rho * (s - j) as f64;
        // β for `c` active tail entries: cβ² + Sβ = ρ(s − j)
        let mut beta = f64::NAN;
        let mut sum = 0.0;
        for c in 1..=(k - j) {
            sum += theta[j + c - 1];
            let b = 2.0 * target / plus_root(sum, 4.0 * c as f64 * target);
            let last_active = theta[j + c - 1] + b > 0.0;
            let next_inactive = c == k - j || theta[j + c] + b <= 0.0;
            if last_active && next_inactive {
                beta = b;
                break;
            }
        }
        if !beta.is_finite() {
            continue;
        }
        let tail_top = (theta[j] + beta).max(0.0) / rho;
        let tail_sum: f64 = theta.iter().skip(j).map(|t| (t + beta).max(0.0)).sum::<f64>() / rho;
        let avg = tail_sum / (s - j) as f64;
        if tail_top <= avg * (1.0 + 1e-12) {
            return Ok(Vector::from_fn(k, |l, _| {
                if l < j {
                    f_rho(theta[l], rho) / (2.0 * rho)
                } else {
                    (theta[l] + beta).max(0.0) / rho
                }
            }));
        }
    }
    Err(Error::NoValidJ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::rng_from_seed;
    use crate::matcore::sym_eigen;
    use rand::Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn sorted_desc(mut x: Vec<f64>) -> Vector {
        x.sort_by(|a, b| b.total_cmp(a));
        Vector::from_vec(x)
    }

    /// Every i in [0, s) satisfying both inequalities, evaluated literally.
    fn nikolov_brute(l: &Vector, s: usize) -> Vec<usize> {
        (0..s)
            .filter(|&i| {
                let avg: f64 = l.iter().skip(i).sum::<f64>() / (s - i) as f64;
                let left = i == 0 || l[i - 1] > avg;
                left && avg >= l[i]
            })
            .collect()
    }

    fn prox_objective(d: &Vector, theta: &Vector, rho: f64, s: usize) -> f64 {
        let sorted = sorted_desc(d.iter().copied().collect());
        match gamma_s_values(&sorted, s) {
            Ok(e) => -e.value + 0.5 * rho * (d - theta / rho).norm_squared(),
            Err(_) => f64::INFINITY,
        }
    }

    #[test]
    fn nikolov_examples() {
        assert_eq!(nikolov_index(&v(&[1.0, 1.0, 1.0]), 2).unwrap(), 0);
        assert_eq!(nikolov_index(&v(&[4.0, 2.0, 1.0]), 2).unwrap(), 1);
        assert_eq!(nikolov_brute(&v(&[4.0, 2.0, 1.0]), 2), vec![1]);
        assert!(nikolov_index(&v(&[1.0, 2.0, 3.0]), 2).is_err());
    }

    #[test]
    fn nikolov_matches_exhaustive_scan() {
        let mut rng = rng_from_seed(5);
        for _ in 0..1000 {
            let k = rng.random_range(1..12);
            let s = rng.random_range(1..=k);
            let l = sorted_desc((0..k).map(|_| rng.random_range(0.0..10.0f64).powi(2)).collect());
            let brute = nikolov_brute(&l, s);
            assert_eq!(brute.len(), 1, "{l:?} s={s}");
            assert_eq!(nikolov_index(&l, s).unwrap(), brute[0]);
        }
    }

    #[test]
    fn gamma_examples() {
        assert!(gamma_s(&Mat::identity(4, 4), 4).unwrap().value.abs() < 1e-14);
        let e = gamma_s(&Mat::identity(4, 4), 3).unwrap();
        assert!((e.value - 3.0 * (4f64 / 3.0).ln()).abs() < 1e-14);
        let e = gamma_s_values(&v(&[4.0, 2.0, 1.0]), 2).unwrap();
        assert_eq!(e.ihat, 1);
        assert!((e.value - 12f64.ln()).abs() < 1e-14);
        assert!(matches!(gamma_s_values(&v(&[1.0, 0.0, 0.0]), 2), Err(Error::NotInDomain)));
    }

    #[test]
    fn gamma_at_last_head_position_needs_strict_excess() {
        // ı̂ = s − 1 requires λ_{s−1} above the average of what follows
        let e = gamma_s_values(&v(&[9.0, 5.0, 1.0, 1.0]), 3).unwrap();
        assert_eq!(e.ihat, 2);
        assert!((e.value - (45f64.ln() + 2f64.ln())).abs() < 1e-13);
        let e = gamma_s_values(&v(&[9.0, 2.0, 1.0, 1.0]), 3).unwrap();
        assert_eq!(e.ihat, 1);
        assert_eq!(nikolov_brute(&v(&[9.0, 2.0, 1.0, 1.0]), 3), vec![1]);
    }

    #[test]
    fn supgrad_examples() {
        let eig = sym_eigen(&Mat::identity(3, 3)).unwrap();
        assert!((supgrad_gamma(&eig, 3).unwrap() - Mat::identity(3, 3)).norm() < 1e-14);

        let e = gamma_s_values(&v(&[4.0, 2.0, 1.0]), 2).unwrap();
        let beta = supgrad_weights(&e);
        assert!((beta - v(&[0.25, 1.0 / 3.0, 1.0 / 3.0])).amax() < 1e-15);
    }

    #[test]
    fn supgrad_trace_identity() {
        let mut rng = rng_from_seed(8);
        for _ in 0..100 {
            let k = rng.random_range(2..10);
            let r = rng.random_range(1..=k);
            let s = rng.random_range(1..=r);
            let b = Mat::from_fn(k, r, |_, _| rng.random_range(-1.0..1.0));
            let z = &b * b.transpose();
            let eig = sym_eigen(&z).unwrap();
            let g = supgrad_gamma(&eig, s).unwrap();
            assert!(((g * &z).trace() - s as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn jhat_worked_example() {
        let theta = v(&[4.0, 1.0, 0.0]);
        assert_eq!(jhat_index(&theta, 1.0, 2).unwrap(), 1);
        let p = lambda_from_jhat(&theta, 1.0, 2, 1);
        assert!((p.phi - 4.0).abs() < 1e-14);
        assert!((p.lambda_out.clone() - v(&[2.0 + 5f64.sqrt(), 1.5, 0.5])).amax() < 1e-14);
        assert!((p.tail_sum() - p.phi / 2.0).abs() < 1e-14);
        assert!((p.nu() - v(&[-2.0 + 5f64.sqrt(), 0.5, 0.5])).amax() < 1e-14);
        let r = p.lambda_out.clone() * p.rho - p.beta() - &theta;
        assert!(r.amax() < 1e-14);
    }

    #[test]
    fn jhat_full_cardinality_trailing_tie() {
        // s = k: ĵ is where the trailing run of equal values begins
        let theta = v(&[5.0, 3.0, 2.0, 2.0, 2.0]);
        assert_eq!(jhat_index(&theta, 0.7, 5).unwrap(), 2);
        let theta = v(&[5.0, 3.0, 2.0, 1.0]);
        assert_eq!(jhat_index(&theta, 0.7, 4).unwrap(), 3);
    }

    #[test]
    fn jhat_reduces_to_nikolov_for_small_rho() {
        let mut rng = rng_from_seed(21);
        for _ in 0..1000 {
            let k = rng.random_range(1..15);
            let s = rng.random_range(1..=k);
            let theta = sorted_desc((0..k).map(|_| rng.random_range(0.0..10.0)).collect());
            assert_eq!(jhat_index(&theta, 1e-9, s).unwrap(), nikolov_index(&theta, s).unwrap());
        }
    }

    #[test]
    fn lambda_nonnegative_at_full_cardinality_over_rho_sweep() {
        let base = v(&[3.0, 1.0, -0.5, -2.0]);
        for e in -3..=3 {
            let rho = 10f64.powi(e);
            let theta = &base * rho;
            let p = gamma_prox_values(&theta, rho, 4).unwrap();
            assert!(p.lambda_out.iter().all(|&l| l >= -1e-12), "rho {rho}: {:?}", p.lambda_out);
        }
    }

    #[test]
    fn prox_identities_on_random_inputs() {
        let mut rng = rng_from_seed(34);
        for _ in 0..500 {
            let k = rng.random_range(1..20);
            let s = rng.random_range(1..=k);
            let rho = 10f64.powf(rng.random_range(-3.0..2.0));
            let theta = sorted_desc((0..k).map(|_| rho * rng.random_range(0.0..10.0)).collect());
            let p = gamma_prox_values(&theta, rho, s).unwrap();
            assert!(p.lambda_out.iter().all(|&l| l > 0.0));
            let r = p.lambda_out.clone() * rho - p.beta() - &theta;
            assert!(r.amax() <= 1e-9, "stationarity {}", r.amax());
            assert!((p.tail_sum() - p.phi / (2.0 * rho)).abs() <= 1e-10);
            assert_eq!(nikolov_index(&p.lambda_out, s).unwrap(), p.jhat);
            let nu = p.nu();
            assert!(nu.iter().all(|&x| x > 0.0));
            for i in 1..k {
                assert!(nu[i] >= nu[i - 1] - 1e-12);
            }
        }
    }

    #[test]
    fn prox_beats_grid_and_random_perturbations() {
        let mut rng = rng_from_seed(55);
        for _ in 0..40 {
            let k = rng.random_range(1..=3);
            let s = rng.random_range(1..=k);
            let rho = 10f64.powf(rng.random_range(-1.0..1.0));
            let theta = sorted_desc((0..k).map(|_| rng.random_range(-2.0..4.0)).collect());
            let Ok(p) = gamma_prox_values(&theta, rho, s) else { continue };
            let best = prox_objective(&p.lambda_out, &theta, rho, s);
            let hi = p.lambda_out.amax() * 3.0 + 1.0;
            let steps = 60usize;
            let mut idx = vec![0usize; k];
            loop {
                let d = Vector::from_fn(k, |i, _| hi * (idx[i] as f64 + 0.5) / steps as f64);
                assert!(prox_objective(&d, &theta, rho, s) >= best - 1e-12);
                let mut c = 0;
                while c < k {
                    idx[c] += 1;
                    if idx[c] < steps {
                        break;
                    }
                    idx[c] = 0;
                    c += 1;
                }
                if c == k {
                    break;
                }
            }
            for _ in 0..500 {
                let scale = 10f64.powf(rng.random_range(-6.0..0.0));
                let d = Vector::from_fn(k, |i, _| {
                    (p.lambda_out[i] + scale * rng.random_range(-1.0..1.0)).max(1e-12)
                });
                assert!(prox_objective(&d, &theta, rho, s) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn fallback_approaches_closed_form() {
        let theta = v(&[4.0, 1.0, 0.0]);
        let d = gamma_prox_fallback(&theta, 1.0, 2);
        let exact = v(&[2.0 + 5f64.sqrt(), 1.5, 0.5]);
        let f_fb = prox_objective(&d, &theta, 1.0, 2);
        let f_ex = prox_objective(&exact, &theta, 1.0, 2);
        assert!(f_fb >= f_ex - 1e-12);
        assert!(f_fb - f_ex < 1e-2);
    }

    fn psd_prox_value(d: &Vector, theta: &Vector, rho: f64, s: usize) -> f64 {
        if d.iter().any(|&v| v < 0.0) {
            return f64::NEG_INFINITY;
        }
        -prox_objective(d, theta, rho, s)
    }

    #[test]
    fn clamped_prox_agrees_with_closed_form_when_nonnegative() {
        let mut rng = rng_from_seed(41);
        for _ in 0..300 {
            let k = rng.random_range(2..10);
            let s = rng.random_range(1..=k);
            let rho = 10f64.powf(rng.random_range(-2.0..1.0));
            let theta = sorted_desc((0..k).map(|_| rng.random_range(0.0..3.0)).collect());
            let closed = gamma_prox_values(&theta, rho, s).unwrap();
            let clamped = gamma_prox_clamped(&theta, rho, s).unwrap();
            if closed.lambda_out.iter().all(|&l| l >= 0.0) {
                assert!((&closed.lambda_out - &clamped).amax() <= 1e-9 * (1.0 + clamped.amax()));
            }
        }
    }

    #[test]
    fn clamped_prox_is_optimal_on_signed_input() {
        let mut rng = rng_from_seed(42);
        let mut no_j = 0;
        for _ in 0..300 {
            let k = rng.random_range(2..8);
            let s = rng.random_range(1..k);
            let rho = 10f64.powf(rng.random_range(-2.0..1.0));
            let theta = sorted_desc((0..k).map(|_| rng.random_range(-3.0..1.0)).collect());
            if jhat_index(&theta, rho, s).is_err() {
                no_j += 1;
            }
            let lam = gamma_prox_clamped(&theta, rho, s).unwrap();
            assert!(lam.iter().all(|&l| l >= 0.0));
            let best = psd_prox_value(&lam, &theta, rho, s);
            assert!(best.is_finite());
            assert!(best >= psd_prox_value(&gamma_prox_fallback(&theta, rho, s), &theta, rho, s) - 1e-9);
            for _ in 0..30 {
                let pert = Vector::from_fn(k, |_, _| rng.random_range(-1e-3..1e-3));
                let cand = (&lam + pert).map(|v| v.max(0.0));
                assert!(psd_prox_value(&cand, &theta, rho, s) <= best + 1e-12);
            }
        }
        assert!(no_j > 0);
    }
}
