//! Student-t tail probability by adaptive quadrature.
//!
//! Substituting `x = tan(u)` maps the real line to `(-π/2, π/2)` and keeps
//! the heavy tails bounded. In that variable the unnormalized density is
//!
//! `g(u) = ν^{(ν+1)/2} · cos(u)^{ν-1} · (ν·cos²u + sin²u)^{-(ν+1)/2}`
//!
//! which is finite on the closed interval for ν ≥ 1. The tail mass is the
//! ratio of two adaptive-Simpson integrals, so no gamma function is needed.

fn density_sub(u: f64, df: f64) -> f64 {
    let (s, c) = u.sin_cos();
    df.powf((df + 1.0) / 2.0) * c.abs().powf(df - 1.0) * (df * c * c + s * s).powf(-(df + 1.0) / 2.0)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
}

fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&f, a, b, fa, fm, fb, whole, eps, 48)
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> f64 {
    assert!(df >= 1.0, "oracle supports df >= 1");
    let half = std::f64::consts::FRAC_PI_2;
    let g = |u: f64| density_sub(u, df);
    let norm = integrate(g, -half, half, 1e-12);
    let lo = t.atan();
    let tail = integrate(g, lo, half, 1e-12);
    (tail / norm).clamp(0.0, 1.0)
}
