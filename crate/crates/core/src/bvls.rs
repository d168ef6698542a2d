//! Box-constrained least squares `min ‖Hx − d‖²` over `[0,1]ⁿ`, where `H`
//! is `G` stacked over an all-ones row.

use crate::matcore::{sym_eigen, Mat, Vector};

/// `H x` split as `(G x, eᵀx)`.
fn apply(g: &Mat, x: &Vector) -> (Vector, f64) {
    (g * x, x.sum())
}

/// `Hᵀ (r_top; r_last)`.
fn apply_t(g: &Mat, r_top: &Vector, r_last: f64) -> Vector {
    let mut out = g.tr_mul(r_top);
    out.add_scalar_mut(r_last);
    out
}

fn clamp01(x: &mut Vector) {
    x.apply(|v| *v = v.clamp(0.0, 1.0));
}

/// One exact line-search step along the negative gradient of the
/// unconstrained objective, then a clamp onto the box.
pub fn gradient_step(g: &Mat, x: &Vector, d_top: &Vector, d_last: f64) -> Vector {
    let (hx, sx) = apply(g, x);
    let r_top = hx - d_top;
    let r_last = sx - d_last;
    let grad = apply_t(g, &r_top, r_last);
    let gg = grad.norm_squared();
    if gg == 0.0 {
        return x.clone();
    }
    let (hg, sg) = apply(g, &grad);
    let denom = hg.norm_squared() + sg * sg;
    if !(denom > 0.0) {
        return x.clone();
    }
    let mut out = x - grad * (gg / denom);
    clamp01(&mut out);
    out
}

pub fn objective(g: &Mat, x: &Vector, d_top: &Vector, d_last: f64) -> f64 {
    let (hx, sx) = apply(g, x);
    (hx - d_top).norm_squared() + (sx - d_last).powi(2)
}

/// Accelerated projected gradient (FISTA with adaptive restart) run until the
/// projected-gradient residual drops below `tol`.
pub fn solve_exact(
    g: &Mat,
    d_top: &Vector,
    d_last: f64,
    x0: &Vector,
    tol: f64,
    max_iter: usize,
) -> Vector {
    let n = g.ncols();
    let mut gram = g.tr_mul(g);
    gram.add_scalar_mut(1.0);
    let lip = match sym_eigen(&gram) {
        Ok(e) => e.values[0].max(f64::MIN_POSITIVE),
        Err(_) => return x0.clone(),
    };
    let step = 1.0 / lip;
    let grad_at = |x: &Vector| -> Vector {
        let (hx, sx) = apply(g, x);
        apply_t(g, &(hx - d_top), sx - d_last)
    };
    let mut x = x0.clone();
    clamp01(&mut x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(g, &x, d_top, d_last);
    for _ in 0..max_iter {
        let gy = grad_at(&y);
        let mut x_new = &y - gy * step;
        clamp01(&mut x_new);
        let f_new = objective(g, &x_new, d_top, d_last);
        if f_new > f_prev {
            // restart the momentum
            y = x.clone();
            t = 1.0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        x = x_new;
        t = t_new;
        f_prev = f_new;

        let gx = grad_at(&x);
        let mut probe = &x - &gx;
        clamp01(&mut probe);
        if (&x - probe).amax() <= tol {
            break;
        }
    }
    debug_assert_eq!(x.len(), n);
    x
}
